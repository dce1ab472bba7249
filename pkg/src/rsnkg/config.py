"""Run configuration: defaults, task presets and flat key=value files.

Resolution order is built-in defaults, then the task preset, then the
config file, then command-line flags.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Any

DEFAULTS: dict[str, Any] = {
    "task": "alignment",
    # walks
    "alpha": 0.9,
    "beta": 0.9,
    "n": 1,
    "length": 15,
    "mode": "cross",
    "start": "augmented",
    # model
    "dim": 256,
    "layers": 2,
    "variant": "rsn",
    "keep_prob": 0.5,
    "skip_dropout": False,
    # training
    "lr": 0.003,
    "batch_size": 512,
    "negatives": 16,
    "exclude_target": True,
    "epochs": 50,
    "resample": True,
    "eval_every": 5,
    "seed": 0,
    # evaluation
    "metric": "cosine",
    "direction": "both",
    "candidates": "all",
    "filtered": True,
    # dataset sampling
    "target": 1500,
    "groups": 10,
    "epsilon": 0.05,
    "max_rounds": 100,
    "sample_mode": "normal",
    "basis": "source",
    "damping": 0.85,
    "pagerank_iterations": 50,
    "densify_factor": 2.0,
    # execution
    "threads": 1,
    "deterministic": False,
}

PRESETS: dict[str, dict[str, Any]] = {
    "alignment": {"alpha": 0.9, "beta": 0.9, "length": 15, "batch_size": 512, "lr": 0.003, "mode": "cross"},
    "completion": {"alpha": 0.7, "length": 7, "batch_size": 2048, "lr": 0.0001, "mode": "single"},
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str) -> Any:
    default = DEFAULTS[key]
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def read_config(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve(task: str | None = None, file_values: dict | None = None, overrides: dict | None = None) -> dict[str, Any]:
    file_values = file_values or {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    task = overrides.get("task") or task or file_values.get("task") or DEFAULTS["task"]
    if task not in PRESETS:
        raise ConfigError(f"unknown task {task!r}")
    cfg = dict(DEFAULTS)
    cfg.update(PRESETS[task])
    cfg.update(file_values)
    cfg.update(overrides)
    cfg["task"] = task
    if cfg["deterministic"]:
        cfg["threads"] = 1
    return cfg


def dump(cfg: dict[str, Any]) -> str:
    lines = []
    for key in DEFAULTS:
        v = cfg[key]
        lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(dump(cfg).encode("utf-8")).hexdigest()[:10]
