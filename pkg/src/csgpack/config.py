"""TOML run configurations.

A configuration names a plane group, a polygon (bundled shape name or JSON
path, relative paths resolved against the config file), the seeds to run and
any hyperparameter overrides::

    group = "p2"
    polygon = "octagon"
    seeds = [1, 2, 3]
    out = "runs/octagon-p2"

    [hyperparams]
    iterations = 8000

    [refine]
    runs = 15
    iterations = 2000
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .groups import GROUPS
from .optimizer import Hyperparams
from .polygon import ConvexPolygon, load_polygon

HYPER_FIELDS = {f.name for f in dataclasses.fields(Hyperparams)}


@dataclass
class RefineConfig:
    enabled: bool = True
    runs: int = 15
    iterations: int | None = None  # per refinement run; None keeps hyperparams.iterations


@dataclass
class RunConfig:
    group: str
    polygon: str
    seeds: list[int]
    out: str = "runs"
    workers: int | None = None
    length_bound: str = "2d"
    hyperparams: dict = field(default_factory=dict)
    refine: RefineConfig = field(default_factory=RefineConfig)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ConfigError(f"unknown plane group {self.group!r}; available: {', '.join(GROUPS)}")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if self.length_bound not in ("2d", "Nd"):
            raise ConfigError("length_bound must be '2d' or 'Nd'")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        unknown = set(self.hyperparams) - HYPER_FIELDS
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {', '.join(sorted(unknown))}")
        if self.refine.runs < 0:
            raise ConfigError("refine.runs must be >= 0")
        self.hyper()  # validates values

    def hyper(self, **overrides) -> Hyperparams:
        try:
            return Hyperparams(**{**self.hyperparams, **overrides})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid hyperparameters: {exc}") from exc

    def polygon_path(self) -> str:
        p = Path(self.polygon)
        if not p.is_absolute() and (self.base_dir / p).exists():
            return str(self.base_dir / p)
        return self.polygon

    def load_polygon(self) -> ConvexPolygon:
        try:
            return load_polygon(self.polygon_path())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load polygon {self.polygon!r}: {exc}") from exc

    def out_dir(self) -> Path:
        p = Path(self.out)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = {"group": self.group, "polygon": self.polygon, "seeds": list(self.seeds), "out": self.out,
             "length_bound": self.length_bound, "hyperparams": dict(self.hyperparams),
             "refine": {k: v for k, v in dataclasses.asdict(self.refine).items() if v is not None}}
        if self.workers is not None:
            d["workers"] = self.workers
        return d


def config_from_dict(d: dict, base_dir=".") -> RunConfig:
    d = dict(d)
    known = {"group", "polygon", "seeds", "out", "workers", "length_bound", "hyperparams", "refine"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("group", "polygon", "seeds"):
        if key not in d:
            raise ConfigError(f"missing required key {key!r}")
    refine = d.pop("refine", {})
    if not isinstance(refine, dict):
        raise ConfigError("[refine] must be a table")
    bad = set(refine) - {f.name for f in dataclasses.fields(RefineConfig)}
    if bad:
        raise ConfigError(f"unknown refine keys: {', '.join(sorted(bad))}")
    if "iterations" not in refine:
        refine["iterations"] = None
    return RunConfig(**d, refine=RefineConfig(**refine), base_dir=Path(base_dir))


def parse_config(text: str, base_dir=".") -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    try:
        return config_from_dict(data, base_dir)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)


def dump_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
