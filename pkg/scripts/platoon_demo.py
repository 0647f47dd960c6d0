"""Roll the mixed platoon with a constant ego command and dump a speed / cost trace.

    python scripts/platoon_demo.py --u 0.0 --out runs/platoon_trace.csv
"""

import argparse
from pathlib import Path

import numpy as np

from latrisk.envs import EnvParams, PlatoonConfig, PlatoonEnv
from latrisk.envs.platoon import oscillation_ratio, run_uncontrolled, write_trace


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--u", type=float, default=0.0, help="constant normalised ego command in [-1, 1]")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/platoon_trace.csv")
    args = ap.parse_args()

    cfg = PlatoonConfig()
    speeds = run_uncontrolled(cfg)
    print(f"uncontrolled ego/HDV speed std ratio: {oscillation_ratio(speeds):.3f}")

    env = PlatoonEnv(EnvParams(), cfg, seed=args.seed)
    env.reset()
    times, vs, us, rs, cs = [], [], [], [], []
    done, t = False, 0
    while not done:
        tr, done = env.step(np.array([args.u]))
        t += 1
        times.append(t * cfg.dt)
        vs.append(env.state.vel.copy())
        us.append(args.u)
        rs.append(tr.r)
        cs.append(tr.c)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(out, times, vs, us, rs, cs)
    print(f"{t} steps, return {sum(rs):.2f}, episodic cost {sum(cs):.2f} -> {out}")


if __name__ == "__main__":
    main()
