"""Run configuration: one YAML file with a section per component, plus provenance files."""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from .actor import ActorConfig
from .calibration import CalibrationConfig
from .configtools import ConfigError, from_mapping, to_mapping
from .critic import CriticConfig
from .deployment import RefineConfig
from .encoder import EncoderConfig
from .envs.scenario import ScenarioConfig
from .trainer import AgentConfig, TrainConfig

ENV_PREFIX = "LATRISK__"


@dataclass
class DeploymentConfig:
    refine: RefineConfig = field(default_factory=RefineConfig)
    n_envs: int = 16
    episodes: int = 4
    factors: dict = field(default_factory=dict)
    seed: int = 1000
    strict: bool = False
    ablation: bool = True


@dataclass
class RunConfig:
    env: ScenarioConfig = field(default_factory=ScenarioConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    deployment: DeploymentConfig = field(default_factory=DeploymentConfig)
    seed: int = 0
    out: str = "runs/default"

    @property
    def agent(self) -> AgentConfig:
        return AgentConfig(self.encoder, self.critic, self.actor)


def _set_path(data: dict, keys: list[str], value) -> None:
    cur = data
    for k in keys[:-1]:
        nxt = cur.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(keys), "override descends into a non-mapping")
        cur = nxt
    cur[keys[-1]] = value


def env_overrides(environ: Mapping[str, str] | None = None) -> list[tuple[list[str], object]]:
    """``LATRISK__trainer__gamma=0.9`` style overrides; values parsed as YAML scalars."""
    environ = os.environ if environ is None else environ
    out = []
    for k in sorted(environ):
        if k.startswith(ENV_PREFIX):
            path = [p for p in k[len(ENV_PREFIX):].split("__") if p]
            if path:
                out.append((path, yaml.safe_load(environ[k])))
    return out


def resolve(data: Mapping | None, seed: int | None = None, out: str | None = None,
            environ: Mapping[str, str] | None = None) -> RunConfig:
    """Build a ``RunConfig``; env-var overrides apply after the file and before flags.

    The global seed is pushed into the trainer, calibration and refinement
    sections unless they set their own.
    """
    data = json.loads(json.dumps(dict(data or {})))
    for path, value in env_overrides(environ):
        _set_path(data, path, value)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    g = data.get("seed", 0)
    for sec in ("trainer", "calibration"):
        sub = data.setdefault(sec, {})
        if isinstance(sub, dict):
            sub.setdefault("seed", g)
    return from_mapping(RunConfig, data)


def load_config(path: str | Path | None, seed: int | None = None, out: str | None = None) -> RunConfig:
    if path is None:
        return resolve({}, seed, out)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(str(p), f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(str(p), f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(str(p), "top level must be a mapping")
    return resolve(data, seed, out)


def resolved_mapping(cfg: RunConfig) -> dict:
    return to_mapping(cfg)


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(resolved_mapping(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_resolved(cfg: RunConfig, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.write_text(json.dumps(resolved_mapping(cfg), indent=2, sort_keys=True) + "\n")
    return path


def code_version() -> str:
    from . import __version__

    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir: str | Path, cfg: RunConfig, command: str, wall_time: float, artifacts: dict) -> Path:
    """Atomic write of ``manifest.json`` (temp file then rename)."""
    out = Path(out_dir)
    rec = {
        "config_hash": config_digest(cfg),
        "code_version": code_version(),
        "command": command,
        "wall_time_s": round(float(wall_time), 3),
        "artifacts": {k: str(v) for k, v in artifacts.items()},
    }
    tmp = out / ".manifest.json.tmp"
    tmp.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    final = out / "manifest.json"
    os.replace(tmp, final)
    return final
