"""Experiment configuration, read from a single YAML file.

Sections: ``grid``, ``profile``, ``rewire``, ``snn``, ``data``, ``seeds``,
``output``, plus the optional ``sweep`` and ``estimate`` blocks used by the
corresponding subcommands.  Every field has a default; see
``configs/reference.yaml`` for the documented reference values.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .profile import SparsityProfile
from .snn import LIFParams, OptimizerConfig
from .topology import GridConfig

TRAIN_MODES = ("profile", "global", "l1-baseline")


def parse_profile(value, d_max: int) -> SparsityProfile:
    """A profile given as ``{d: p_d}`` or as the list ``[p_0, p_1, ...]``."""
    if isinstance(value, SparsityProfile):
        return value.fit(d_max)
    if isinstance(value, dict):
        try:
            return SparsityProfile.from_mapping({int(k): float(v) for k, v in value.items()}, d_max)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad profile mapping {value!r}: {exc}") from None
    if isinstance(value, (list, tuple)):
        return SparsityProfile(tuple(float(v) for v in value)).fit(d_max)
    raise ConfigError(f"profile must be a mapping or a list, got {type(value).__name__}")


def _build(cls, section: str, raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from None


@dataclass
class RewireConfig:
    mode: str = "profile"
    prune_threshold: float = 1e-3
    lambda_l1: float = 1e-5
    regrow_magnitude: float | None = None
    # global / l1-baseline target; "match" calibrates it to the profile's memory count
    global_sparsity: float | str | None = "match"
    allow_self: bool = False
    map_every: int = 10
    # l1-baseline only: the final prune drops the weakest connections until the
    # routed memory is at most this many elements (instead of thresholding)
    memory_target: int | None = None

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"rewire.mode must be one of {TRAIN_MODES}")
        if self.prune_threshold < 0 or self.lambda_l1 < 0:
            raise ConfigError("prune_threshold and lambda_l1 must be >= 0")
        gs = self.global_sparsity
        if gs is not None and gs != "match":
            if isinstance(gs, str) or not 0.0 <= float(gs) <= 1.0:
                raise ConfigError("rewire.global_sparsity must be in [0, 1] or 'match'")
        mt = self.memory_target
        if mt is not None and (isinstance(mt, bool) or not isinstance(mt, int) or mt < 0):
            raise ConfigError("rewire.memory_target must be a non-negative integer or null")


@dataclass
class SNNConfig:
    lif: LIFParams = field(default_factory=LIFParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 100
    init_scale: float = 1.0
    in_scale: float = 1.0
    out_scale: float = 1.0

    def __post_init__(self):
        if isinstance(self.lif, dict):
            self.lif = _build(LIFParams, "snn.lif", self.lif)
        if isinstance(self.optimizer, dict):
            self.optimizer = _build(OptimizerConfig, "snn.optimizer", self.optimizer)
        if self.epochs < 0:
            raise ConfigError("snn.epochs must be >= 0")


@dataclass
class SyntheticConfig:
    seed: int = 0  # the task is fixed; training seeds vary independently
    n_classes: int = 8
    n_channels: int = 32
    n_train: int = 256
    n_test: int = 128
    jitter: float = 1.5
    dropout: float = 0.2
    events_per_channel: int = 2
    span: float = 1.0  # fraction of the window that holds template events


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    n_steps: int = 40
    duration: float = 1.0
    pool: int = 1
    # "local": a channel drives only the neurons of the NT it is injected at
    input_routing: str = "local"
    cache: bool = True
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if isinstance(self.synthetic, dict):
            self.synthetic = _build(SyntheticConfig, "data.synthetic", self.synthetic)
        if self.source not in ("synthetic", "shd"):
            raise ConfigError("data.source must be 'synthetic' or 'shd'")
        if self.source == "shd" and not self.path:
            raise ConfigError("data.path is required for the shd source")
        if self.input_routing not in ("local", "dense"):
            raise ConfigError("data.input_routing must be 'local' or 'dense'")
        if self.n_steps < 1 or not self.duration > 0 or self.pool < 1:
            raise ConfigError("data.n_steps, data.duration and data.pool must be positive")


@dataclass
class SweepConfig:
    p1: list = field(default_factory=list)
    p3: list = field(default_factory=list)
    base: dict = field(default_factory=dict)  # densities held fixed across cells
    profiles: list = field(default_factory=list)  # explicit profiles, used as extra cells
    seeds_per_cell: int | None = None


@dataclass
class EstimateConfig:
    n_samples: int = 20
    profiles: list = field(default_factory=list)


@dataclass
class ExperimentConfig:
    grid: GridConfig
    profile: SparsityProfile
    rewire: RewireConfig = field(default_factory=RewireConfig)
    snn: SNNConfig = field(default_factory=SNNConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seeds: list = field(default_factory=lambda: [0])
    output: str = "runs"
    sweep: SweepConfig = field(default_factory=SweepConfig)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)
    reproduction: bool = False
    source: str = ""

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if any(isinstance(s, bool) or not isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be integers")

    @property
    def seeds_per_cell(self) -> int:
        if self.sweep.seeds_per_cell is not None:
            return int(self.sweep.seeds_per_cell)
        return 30 if self.reproduction else 5

    def to_dict(self) -> dict:
        d = {
            "grid": self.grid.to_dict(),
            "profile": list(self.profile.p),
            "rewire": asdict(self.rewire),
            "snn": asdict(self.snn),
            "data": asdict(self.data),
            "seeds": list(self.seeds),
            "output": self.output,
            "sweep": asdict(self.sweep),
            "estimate": asdict(self.estimate),
            "reproduction": self.reproduction,
        }
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        return out


SECTIONS = ("grid", "profile", "rewire", "snn", "data", "seeds", "output", "sweep",
            "estimate", "reproduction")


def parse_seeds(value) -> list:
    """Seeds from an int, a list, or an inclusive range string ``"N..M"``."""
    if isinstance(value, bool):
        raise ConfigError("seeds must be integers")
    if isinstance(value, int):
        return [value]
    if isinstance(value, str):
        lo, sep, hi = value.partition("..")
        try:
            if not sep:
                return [int(value)]
            lo, hi = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad seed range {value!r}; expected N or N..M") from None
        if hi < lo:
            raise ConfigError(f"empty seed range {value!r}")
        return list(range(lo, hi + 1))
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"cannot read seeds from {value!r}")


def config_from_dict(raw: dict, source: str = "") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at top level")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    if "grid" not in raw:
        raise ConfigError("config needs a 'grid' section")
    if not isinstance(raw["grid"], dict):
        raise ConfigError("section 'grid' must be a mapping")
    grid = GridConfig.from_dict(raw["grid"])
    from .topology import d_max

    profile = parse_profile(raw.get("profile", {}), d_max(grid))
    seeds = parse_seeds(raw.get("seeds", [0]))
    return ExperimentConfig(
        grid=grid,
        profile=profile,
        rewire=_build(RewireConfig, "rewire", raw.get("rewire")),
        snn=_build(SNNConfig, "snn", raw.get("snn")),
        data=_build(DataConfig, "data", raw.get("data")),
        seeds=seeds,
        output=str(raw.get("output", "runs")),
        sweep=_build(SweepConfig, "sweep", raw.get("sweep")),
        estimate=_build(EstimateConfig, "estimate", raw.get("estimate")),
        reproduction=bool(raw.get("reproduction", False)),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    return config_from_dict(raw or {}, source=str(path))


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
