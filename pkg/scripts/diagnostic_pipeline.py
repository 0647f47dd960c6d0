"""Train, calibrate and deploy on the diagnostic family, then compare against the eta=0 ablation.

    python scripts/diagnostic_pipeline.py --config configs/diagnostic.yaml --out runs/diagnostic

Takes roughly ten minutes on one core with the shipped config.
"""

import argparse
import time
from pathlib import Path

from latrisk.calibration import read_table
from latrisk.cli import main as cli
from latrisk.config import load_config
from latrisk.envs.scenario import build_family
from latrisk.pipeline import deploy_many, sample_specs
from latrisk.trainer import load_agent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/diagnostic.yaml")
    ap.add_argument("--out", default="runs/diagnostic")
    ap.add_argument("--envs", type=int, default=16)
    args = ap.parse_args()
    out = Path(args.out)
    ck, table = out / "checkpoint.bin", out / "calibration.txt"

    t0 = time.time()
    if cli(["train", "--config", args.config, "--out", str(out)]) != 0:
        raise SystemExit("training failed")
    print(f"trained in {time.time() - t0:.0f} s")
    t0 = time.time()
    if cli(["calibrate", "--config", args.config, "--out", str(out), "--checkpoint", str(ck)]) != 0:
        raise SystemExit("calibration failed")
    print(f"calibrated in {time.time() - t0:.0f} s")

    cfg = load_config(args.config)
    agent, _ = load_agent(ck)
    tab = read_table(table)
    family = build_family(cfg.env)
    dc = cfg.deployment
    specs = sample_specs(family, args.envs, dc.seed, 9)
    d = cfg.trainer.cost_threshold
    common = (family, specs, agent.encoder, agent.actor, agent.reward_critic, agent.cost_critic, tab.schedule, d,
              dc.refine, dc.episodes, cfg.trainer.gamma, dc.seed)
    adaptive = deploy_many(*common)
    ablation = deploy_many(*common, fixed_eta=0.0)
    print(f"threshold d = {d}")
    for name, s in (("adaptive", adaptive), ("eta=0", ablation)):
        print(f"{name:>9}: mean cost {s.mean_cost:.3f}  first-episode cost {s.early_cost:.3f}  "
              f"mean reward {s.mean_reward:.3f}")


if __name__ == "__main__":
    main()
