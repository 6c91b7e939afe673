"""Experiment configuration: YAML on disk, nested dataclasses in memory.

Unknown keys and ill-typed values are rejected with the dotted path of the
offending field, before any mesh is built or any array allocated.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .learn import LOSS_TARGETS, TrainConfig
from .variants import VARIANTS, VariantSpec
from .wavegen import SamplerConfig

MESH_SPEC = re.compile(r"^(grid:\d+,\d+|delaunay:\d+,\d+)$")
STAR_MODELS = ("smooth", "white", "uniform")


@dataclass
class DataSection:
    train: int = 2000
    val: int = 256
    test: int = 64


@dataclass
class TrainSection:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    loss_target: str = "both"
    width: int = 64
    damping: bool = False


@dataclass
class OodSection:
    test_kmax: int = 6
    test_c: float = 1.4
    test_mesh: str = "grid:64,64"
    test_pairs: int = 512
    variants: list[str] = field(default_factory=lambda: ["structured", "scrambled_topology"])


@dataclass
class AblateSection:
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    test_pairs: int = 16


@dataclass
class SweepSection:
    sizes: list[int] = field(default_factory=lambda: [125, 250, 500, 1000, 2000])
    workers: int = 1


@dataclass
class DiagnoseSection:
    trajectory: str = ""      # dump written by `rollout --dump-states`; empty means <out>/trajectory.json
    checkpoint: str = ""      # empty means <out>/checkpoint.json


@dataclass
class MaxwellSection:
    grid: int = 64
    steps: int = 500
    seed: int = 0
    stars: str = "smooth"
    cfl: float = 0.5


@dataclass
class CheckSection:
    """Thresholds applied in --check mode."""
    val_mse: float = 1e-6
    drift: float = 1e-2
    nee: float = 1e-1
    ood_drift: float = 1e-1
    charge: float = 1e-12
    maxwell_drift: float = 1e-3
    wave_speed: float = 5e-2
    canonical: float = 1e-3
    vf_cosine: float = 0.999
    phase_deg: float = 3.0


@dataclass
class ExperimentConfig:
    seed: int = 0
    mesh: str = "grid:32,32"
    L: float = 1.0
    dt: float = 0.002
    T: int = 200
    cfl_target: float = 0.5
    out: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainSection = field(default_factory=TrainSection)
    variant: VariantSpec = field(default_factory=VariantSpec)
    ood: OodSection = field(default_factory=OodSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    diagnose: DiagnoseSection = field(default_factory=DiagnoseSection)
    maxwell: MaxwellSection = field(default_factory=MaxwellSection)
    check: CheckSection = field(default_factory=CheckSection)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.weight_decay, self.seed, self.dt,
                           t.loss_target, self.cfl_target, t.width, t.damping)

    def to_dict(self):
        return asdict(self)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @property
    def hash(self):
        return config_hash(self)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()


def _convert(tp, value, path):
    origin = typing.get_origin(tp)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path)
        return [_convert(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path)
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    raise ConfigError(f"unsupported field type {tp!r}", path)


def _build(cls, data, path=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", path or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}" if path else str(key))
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc), path or "<root>") from None


def _require(cond, msg, path):
    if not cond:
        raise ConfigError(msg, path)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    for path, spec in (("mesh", cfg.mesh), ("ood.test_mesh", cfg.ood.test_mesh)):
        _require(MESH_SPEC.match(spec), f"bad mesh spec {spec!r}; expected grid:NX,NY or delaunay:N,SEED", path)
    _require(cfg.L > 0, "must be positive", "L")
    _require(cfg.dt > 0, "must be positive", "dt")
    _require(cfg.T >= 1, "must be at least 1", "T")
    _require(0 < cfg.cfl_target <= 1, "must lie in (0, 1]", "cfl_target")
    _require(cfg.seed >= 0, "must be nonnegative", "seed")
    for name in ("train", "val", "test"):
        _require(getattr(cfg.data, name) >= 1, "must be at least 1", f"data.{name}")
    s = cfg.sampler
    _require(s.kmax_x >= 1 and s.kmax_y >= 0, "need kmax_x >= 1 and kmax_y >= 0", "sampler")
    _require(s.c > 0, "must be positive", "sampler.c")
    _require(0 <= s.gamma_min <= s.gamma_max, "need 0 <= gamma_min <= gamma_max", "sampler.gamma_min")
    t = cfg.train
    for name in ("epochs", "batch_size", "width"):
        _require(getattr(t, name) >= 1, "must be at least 1", f"train.{name}")
    _require(t.learning_rate > 0, "must be positive", "train.learning_rate")
    _require(t.weight_decay >= 0, "must be nonnegative", "train.weight_decay")
    _require(t.loss_target in LOSS_TARGETS, f"must be one of {LOSS_TARGETS}", "train.loss_target")
    _require(cfg.ood.test_kmax >= 1, "must be at least 1", "ood.test_kmax")
    _require(cfg.ood.test_c > 0, "must be positive", "ood.test_c")
    _require(cfg.ood.test_pairs >= 1, "must be at least 1", "ood.test_pairs")
    for sec in ("ood", "ablate"):
        for i, tag in enumerate(getattr(cfg, sec).variants):
            _require(tag in VARIANTS, f"unknown variant {tag!r}", f"{sec}.variants[{i}]")
    _require(cfg.ablate.test_pairs >= 1, "must be at least 1", "ablate.test_pairs")
    for i, n in enumerate(cfg.sweep.sizes):
        _require(n >= 1, "must be at least 1", f"sweep.sizes[{i}]")
    _require(cfg.sweep.workers >= 1, "must be at least 1", "sweep.workers")
    m = cfg.maxwell
    _require(m.grid >= 2, "must be at least 2", "maxwell.grid")
    _require(m.steps >= 1, "must be at least 1", "maxwell.steps")
    _require(m.stars in STAR_MODELS, f"must be one of {STAR_MODELS}", "maxwell.stars")
    _require(0 < m.cfl <= 1, "must lie in (0, 1]", "maxwell.cfl")
    return cfg


def from_dict(data) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data))


def load_config(path=None) -> ExperimentConfig:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return validate(ExperimentConfig())
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", str(path)) from None
    return from_dict(data)


def override(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Top-level replacements (CLI flags); ``None`` values are ignored."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return validate(dataclasses.replace(cfg, **changes))
