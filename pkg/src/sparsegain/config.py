"""Run configuration for the command-line benchmark."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import evaluation
from .gain import GainConfig
from .gan import GanConfig
from .ingest import SynthConfig

METHODS = ("gain", "gan", "tf", "cpd", "bptf")

_IMPUTERS = {
    "gain": evaluation.GainImputer,
    "gan": evaluation.GanImputer,
    "tf": evaluation.TfImputer,
    "cpd": evaluation.CpdImputer,
    "bptf": evaluation.BptfImputer,
}


class ConfigError(ValueError):
    pass


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, params: dict, where: str):
    unknown = set(params) - _fields(cls)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def method_params(name: str, params: dict | None, max_iters: int | None = None, lr: float | None = None, seed: int | None = None) -> dict:
    """Resolve a method's hyperparameters, applying the common flag overrides."""
    if name not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    p = dict(params or {})
    if name in ("gain", "gan"):
        if max_iters is not None:
            p["max_iterations"] = max_iters
        if lr is not None:
            p["learning_rate"] = lr
        if seed is not None:
            p["seed"] = seed
        cfg = _build(GainConfig if name == "gain" else GanConfig, p, f"method {name}")
        return dataclasses.asdict(cfg)
    if name in ("tf", "cpd"):
        if max_iters is not None:
            p["iters"] = max_iters
        if lr is not None:
            p["lr"] = lr
    imp = _build(_IMPUTERS[name], p, f"method {name}")
    out = dataclasses.asdict(imp)
    out.pop("name")
    return out


def make_imputer(name: str, params: dict):
    if name == "gain":
        return evaluation.GainImputer(GainConfig(**params))
    if name == "gan":
        return evaluation.GanImputer(GanConfig(**params))
    return _IMPUTERS[name](**params)


@dataclass
class DatasetSpec:
    name: str
    path: str | None = None
    delimiter: str = ","
    synth: dict | None = None

    def __post_init__(self):
        if (self.path is None) == (self.synth is None):
            raise ConfigError(f"dataset {self.name!r} needs exactly one of 'path' or 'synth'")
        if self.synth is not None:
            _build(SynthConfig, self.synth, f"dataset {self.name} synth")


@dataclass
class RunConfig:
    datasets: list[DatasetSpec]
    methods: dict[str, dict] = field(default_factory=dict)
    cycles: int = 5
    folds: int = 5
    attempts: list[int] | None = None
    output_dir: str | None = None
    seed: int = 0
    jobs: int | None = None

    @property
    def plan(self) -> evaluation.CvPlan:
        return evaluation.CvPlan(self.cycles, self.folds, self.seed)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_attempts(spec: Any) -> list[int] | None:
    """Accept ``[1, 2, 3]``, ``"1-4"`` or ``"1,3,5"``."""
    if spec is None:
        return None
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        return [int(a) for a in spec]
    out = []
    for part in str(spec).split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def load_config(path: str | Path, overrides: dict | None = None, max_iters=None, lr=None) -> RunConfig:
    """Read a YAML run configuration and apply flag overrides."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    allowed = _fields(RunConfig) | {"cv"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cv = raw.pop("cv", None) or {}
    raw.setdefault("cycles", cv.get("cycles", 5))
    raw.setdefault("folds", cv.get("folds", 5))
    if not raw.get("datasets"):
        raise ConfigError("config lists no datasets")
    datasets = []
    for k, d in enumerate(raw.pop("datasets")):
        if not isinstance(d, dict):
            raise ConfigError(f"dataset entry {k} must be a mapping")
        d = dict(d)
        d.setdefault("name", f"dataset{k}")
        datasets.append(_build(DatasetSpec, d, f"dataset {k}"))
    methods_raw = raw.pop("methods", None) or {}
    if isinstance(methods_raw, list):
        methods_raw = {m: {} for m in methods_raw}
    if not methods_raw:
        raise ConfigError("config lists no methods")
    methods = {m: method_params(m, p, max_iters, lr) for m, p in methods_raw.items()}
    raw["attempts"] = parse_attempts(raw.get("attempts"))
    cfg = RunConfig(datasets=datasets, methods=methods, **raw)
    if cfg.cycles < 1 or cfg.folds < 2:
        raise ConfigError("need cycles >= 1 and folds >= 2")
    return cfg
