"""``latrisk`` command line: train, calibrate, deploy, verify, bench.

Exit codes: 0 ok, 1 property violation, 2 configuration or input error,
3 numeric blow-up, 4 incompatible checkpoint, 5 infeasible schedule under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calibration import CalibrationError, CalibrationTable, read_table, write_table
from .config import RunConfig, load_config, write_manifest, write_resolved
from .configtools import ConfigError
from .deployment import LOG_COLUMNS, PassCounter, RefineConfig, refine_action
from .envs.scenario import build_family
from .numerics import NonFiniteGradient
from .numerics.checkpoint import CheckpointError
from .pipeline import calibrate_policy, deploy_many, sample_specs
from .trainer import TrainingDivergence, load_agent, save_state, train, write_metrics
from .verify import SUITES, run_suite

log = logging.getLogger("latrisk")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BLOWUP, EXIT_CHECKPOINT, EXIT_INFEASIBLE = 0, 1, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(EXIT_CONFIG, f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_CONFIG, f"{what} not found: {p}")
    return p


def _load_agent(path: Path):
    try:
        agent, meta = load_agent(path)
    except CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc)) from exc
    except KeyError as exc:
        raise CliError(EXIT_CHECKPOINT, f"{path}: checkpoint lacks {exc}") from exc
    if meta.get("kind") != "train_state":
        raise CliError(EXIT_CHECKPOINT, f"{path}: not a training checkpoint")
    return agent, meta


def _family(cfg: RunConfig, meta: dict, deploy: bool = False):
    from .configtools import from_mapping
    from .envs.scenario import ScenarioConfig

    sc = from_mapping(ScenarioConfig, meta["scenario"], "scenario")
    if deploy and cfg.deployment.factors:
        sc = replace(sc, factors=dict(cfg.deployment.factors), label="deploy")
    fam = build_family(sc)
    return fam, sc


# -- commands -------------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    write_resolved(cfg, out)
    tcfg = cfg.trainer if args.steps is None else replace(cfg.trainer, episodes=args.steps)
    t0 = time.perf_counter()
    try:
        state = train(tcfg, cfg.agent, cfg.env, None)
    except (TrainingDivergence, NonFiniteGradient, FloatingPointError) as exc:
        raise CliError(EXIT_BLOWUP, f"numeric blow-up: {exc}") from exc
    save_state(state, out / "checkpoint.bin")
    write_metrics(state.metrics, out / "metrics.csv")
    write_manifest(out, cfg, "train", time.perf_counter() - t0,
                   {"checkpoint": out / "checkpoint.bin", "metrics": out / "metrics.csv"})
    print(f"trained {state.episode} episodes, {state.step} updates -> {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    ck = _require(args.checkpoint, "checkpoint")
    agent, meta = _load_agent(ck)
    out = _out_dir(cfg)
    write_resolved(cfg, out)
    fam, _ = _family(cfg, meta)
    d = cfg.trainer.cost_threshold
    t0 = time.perf_counter()
    try:
        table = calibrate_policy(fam, agent.encoder, agent.actor, agent.reward_critic, agent.cost_critic,
                                 d, cfg.calibration, cfg.deployment.refine, cfg.trainer.gamma)
    except CalibrationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    path = out / "calibration.txt"
    write_table(table, path)
    write_manifest(out, cfg, "calibrate", time.perf_counter() - t0, {"table": path, "checkpoint": ck})
    sched = table.schedule
    print(f"calibration table -> {path}")
    print(f"schedule eta(N) = {list(sched.etas)}  n_min = {sched.n_min}  infeasible = {sched.infeasible}")
    return EXIT_OK


def _write_deploy_csv(rows_by_env, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("env", *LOG_COLUMNS))
        for e, rows in enumerate(rows_by_env):
            for r in rows:
                w.writerow([e] + [repr(r[k]) if isinstance(r[k], float) else r[k] for k in LOG_COLUMNS])


def cmd_deploy(args, cfg: RunConfig) -> int:
    ck = _require(args.checkpoint, "checkpoint")
    tp = _require(args.table, "table")
    agent, meta = _load_agent(ck)
    try:
        table: CalibrationTable = read_table(tp)
    except (CalibrationError, ValueError, KeyError) as exc:
        raise CliError(EXIT_CONFIG, f"bad calibration table: {exc}") from exc
    sched = table.schedule
    strict = args.strict or cfg.deployment.strict
    if sched.infeasible and strict:
        raise CliError(EXIT_INFEASIBLE, f"schedule is infeasible at N = "
                       f"{[n for n, ok in zip(sched.n_grid, sched.feasible) if not ok]} (strict mode)")
    out = _out_dir(cfg)
    write_resolved(cfg, out)
    fam, _ = _family(cfg, meta, deploy=True)
    dcfg = cfg.deployment
    specs = sample_specs(fam, dcfg.n_envs, dcfg.seed, 9)
    before = agent.checksums()
    t0 = time.perf_counter()
    summ = deploy_many(fam, specs, agent.encoder, agent.actor, agent.reward_critic, agent.cost_critic, sched,
                       cfg.trainer.cost_threshold, dcfg.refine, dcfg.episodes, cfg.trainer.gamma, dcfg.seed,
                       max_steps=args.steps)
    if agent.checksums() != before:
        raise CliError(EXIT_FAIL, "parameters changed during deployment")
    path = out / "deploy.csv"
    _write_deploy_csv([r.rows for r in summ.results], path)
    lines = summ.lines() + [f"eta_trajectory = {sorted(set(summ.etas), reverse=True)}"]
    (out / "deploy_summary.txt").write_text("\n".join(lines) + "\n")
    write_manifest(out, cfg, "deploy", time.perf_counter() - t0,
                   {"log": path, "summary": out / "deploy_summary.txt", "checkpoint": ck, "table": tp})
    print("\n".join(lines))
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    names = SUITES if args.suite in (None, "all") else (args.suite,)
    gamma = 0.9 if args.gamma is None else args.gamma
    if not 0.0 <= gamma < 1.0:
        raise CliError(EXIT_CONFIG, f"gamma: must lie in [0, 1), got {gamma}")
    ok = True
    for name in names:
        if name not in SUITES:
            raise CliError(EXIT_CONFIG, f"suite: unknown suite {name!r}; choose from {', '.join(SUITES)}")
        rep = run_suite(name, cfg.seed, gamma)
        print(rep.text())
        if args.out:
            out = _out_dir(cfg)
            (out / f"verify_{name}.txt").write_text(rep.text())
        ok = ok and rep.ok
    return EXIT_OK if ok else EXIT_FAIL


BENCH_GRID = (
    (0, 0.01, 0.05, 1.0),
    (5, 0.01, 0.05, 1.0),
    (15, 0.01, 0.05, 1.0),
    (5, 0.001, 0.05, 1.0),
    (5, 0.1, 0.5, 1.0),
    (5, 0.01, 0.05, 0.0),
    (5, 0.01, 0.05, 10.0),
)


def bench_rows(agent, obs_dim: int, cfg: RefineConfig, states: int = 64, seed: int = 0, eta: float = 0.5,
               grid=BENCH_GRID) -> list[dict]:
    """Exact pass counts and wall time per refinement setting; early stop disabled."""
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(states, obs_dim))
    z = np.zeros((states, agent.d_z))
    rows = []
    for k, ar, ac, bn in grid:
        rc = replace(cfg, k_ref=k, alpha_r=ar, alpha_c=ac, beta_n=bn)
        ctr = PassCounter()
        t0 = time.perf_counter()
        refine_action(s, z, eta, agent.actor, agent.reward_critic, agent.cost_critic, -np.inf, rc, ctr)
        dt = time.perf_counter() - t0
        rows.append({"k_ref": k, "alpha_r": ar, "alpha_c": ac, "beta_n": bn, "states": states,
                     "forward": ctr.forward, "backward": ctr.backward,
                     "forward_per_state": ctr.forward / states, "backward_per_state": ctr.backward / states,
                     "wall_s": dt})
    return rows


def cmd_bench(args, cfg: RunConfig) -> int:
    ck = _require(args.checkpoint, "checkpoint")
    agent, meta = _load_agent(ck)
    out = _out_dir(cfg)
    rows = bench_rows(agent, meta["obs_dim"], cfg.deployment.refine, seed=cfg.seed)
    path = out / "bench.csv"
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
    for r in rows:
        print(f"K_ref={r['k_ref']:>2} a_r={r['alpha_r']:<6} a_c={r['alpha_c']:<5} b_n={r['beta_n']:<5} "
              f"F={r['forward']:>5} B={r['backward']:>5} t={r['wall_s'] * 1e3:.1f} ms")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "calibrate": cmd_calibrate, "deploy": cmd_deploy,
            "verify": cmd_verify, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latrisk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="global seed override")
        sp.add_argument("--out", help="output directory override")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("calibrate", "deploy", "bench"):
            sp.add_argument("--checkpoint", help="training checkpoint")
        if name == "deploy":
            sp.add_argument("--table", help="calibration table")
            sp.add_argument("--strict", action="store_true", help="refuse infeasible schedules (exit 5)")
        if name in ("deploy", "train"):
            sp.add_argument("--steps", type=int, help="deploy: step budget per env; train: episodes")
        if name == "verify":
            sp.add_argument("--suite", default="all", help=f"one of {', '.join(SUITES)} or all")
            sp.add_argument("--gamma", type=float, help="discount for the contraction suite")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
