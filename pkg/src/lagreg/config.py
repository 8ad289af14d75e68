"""JSON run configurations for the command line.

A configuration names its inputs (files or a built-in generator), the model
and regularization settings, the multilevel schedule and the solver options.
Unknown keys anywhere are errors. Relative paths resolve against the
configuration file's directory.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fileio import load_field
from .grid import Grid
from .objective import MODELS, REGULARIZERS, TIME_RULES
from .pde_solve import KERNELS
from .problems import make_cshape, make_gaussian_mp
from .solver import Level, MultilevelSchedule, RegistrationConfig, SolverOptions

GENERATORS = {"cshape": make_cshape, "gaussian_mp": make_gaussian_mp}


class ConfigError(ValueError):
    pass


@dataclass
class GeneratorSpec:
    name: str
    m: int
    intensity: float = 1.0


@dataclass
class ScheduleSpec:
    """Either explicit ``levels`` or ``image_m``/``velocity_m``/``nlevels``."""

    image_m: list | None = None
    velocity_m: list | None = None
    nlevels: int = 1
    levels: list | None = None


@dataclass
class RunConfig:
    output: str
    template: str | None = None
    reference: str | None = None
    generator: GeneratorSpec | None = None
    model: str = "advect"
    regularizer: str = "diffusion"
    time_rule: str = "trapezoid"
    alpha: float = 1.0
    gamma: float = 1e-2
    nt: int = 0
    N: int = 4
    N_final: int = 20
    kernel: str = "hat"
    delta_factor: float = 1.0
    padding: list | None = None
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    solver: SolverOptions = field(default_factory=SolverOptions)
    base_dir: str = field(default=".", metadata={"internal": True})

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("base_dir")
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path


_NUMBER = (int, float)


def _check(name, value, kinds):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"{name}: expected {kinds}, got a boolean")
    if not isinstance(value, kinds):
        raise ConfigError(f"{name}: expected {'/'.join(k.__name__ for k in kinds)}, got {type(value).__name__}")
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, val in data.items():
        f = names[key]
        path = f"{where}.{key}"
        annot = str(f.type)
        if val is None:
            if "None" not in annot:
                raise ConfigError(f"{path}: may not be null")
        elif annot.startswith("GeneratorSpec"):
            val = _build(GeneratorSpec, val, path)
        elif annot.startswith("ScheduleSpec"):
            val = _build(ScheduleSpec, val, path)
        elif annot.startswith("SolverOptions"):
            val = _build(SolverOptions, val, path)
        elif annot.startswith("str"):
            _check(path, val, (str,))
        elif annot.startswith("int"):
            _check(path, val, (int,))
        elif annot.startswith("float"):
            val = float(_check(path, val, _NUMBER))
        elif annot.startswith("list"):
            _check(path, val, (list,))
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _positive_ints(name, seq):
    if not isinstance(seq, list) or not seq or not all(isinstance(k, int) and not isinstance(k, bool) and k > 0 for k in seq):
        raise ConfigError(f"{name}: expected a non-empty list of positive integers")
    return tuple(seq)


def _validate(cfg: RunConfig) -> None:
    files = cfg.template is not None or cfg.reference is not None
    if files == (cfg.generator is not None):
        raise ConfigError("give either template+reference or a generator, not both or neither")
    if files and (cfg.template is None or cfg.reference is None):
        raise ConfigError("template and reference must both be given")
    if cfg.generator is not None and cfg.generator.name not in GENERATORS:
        raise ConfigError(f"generator.name: unknown generator {cfg.generator.name!r}")
    for name, allowed in (("model", MODELS), ("regularizer", REGULARIZERS), ("time_rule", TIME_RULES), ("kernel", KERNELS)):
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name}: expected one of {allowed}, got {getattr(cfg, name)!r}")
    if cfg.alpha < 0 or cfg.gamma < 0:
        raise ConfigError("alpha and gamma must be non-negative")
    if cfg.nt < 0 or cfg.N < 1 or cfg.N_final < 1:
        raise ConfigError("need nt >= 0, N >= 1 and N_final >= 1")
    if cfg.delta_factor <= 0:
        raise ConfigError("delta_factor must be positive")
    if cfg.padding is not None and not all(isinstance(p, _NUMBER) and not isinstance(p, bool) and p >= 0 for p in cfg.padding):
        raise ConfigError("padding: expected non-negative numbers")
    sch = cfg.schedule
    if sch.levels is None and (sch.image_m is None or sch.velocity_m is None):
        raise ConfigError("schedule: give levels or image_m and velocity_m")


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    cfg = _build(RunConfig, data, "config")
    cfg.base_dir = str(base_dir)
    _validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data, path.parent)


def build_schedule(spec: ScheduleSpec) -> MultilevelSchedule:
    if spec.levels is not None:
        levels = []
        for i, lev in enumerate(spec.levels):
            if not isinstance(lev, dict) or set(lev) != {"image_m", "velocity_m"}:
                raise ConfigError(f"schedule.levels[{i}]: expected keys image_m and velocity_m")
            levels.append(Level(_positive_ints(f"schedule.levels[{i}].image_m", lev["image_m"]),
                                _positive_ints(f"schedule.levels[{i}].velocity_m", lev["velocity_m"])))
    else:
        if spec.nlevels < 1:
            raise ConfigError("schedule.nlevels must be >= 1")
        image_m = _positive_ints("schedule.image_m", spec.image_m)
        velocity_m = _positive_ints("schedule.velocity_m", spec.velocity_m)
        div = 1 << (spec.nlevels - 1)
        if any(k % div for k in image_m + velocity_m):
            raise ConfigError(f"schedule: sizes must be divisible by {div} for {spec.nlevels} levels")
        return MultilevelSchedule.uniform(image_m, velocity_m, spec.nlevels)
    try:
        return MultilevelSchedule(levels)
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def load_inputs(cfg: RunConfig):
    """Template and reference images named by the configuration."""
    if cfg.generator is not None:
        gen = GENERATORS[cfg.generator.name]
        return gen(cfg.generator.m, intensity=cfg.generator.intensity)
    try:
        T = load_field(cfg.resolve(cfg.template)).to_image()
        R = load_field(cfg.resolve(cfg.reference)).to_image()
    except OSError as exc:
        raise ConfigError(f"cannot read input image: {exc}") from exc
    return T, R


def to_registration_config(cfg: RunConfig, T, R) -> RegistrationConfig:
    if T.grid != R.grid:
        raise ConfigError("template and reference live on different grids")
    g = T.grid
    pad = [0.0] * g.d if cfg.padding is None else [float(p) for p in cfg.padding]
    if len(pad) == 1:
        pad = pad * g.d
    if len(pad) != g.d:
        raise ConfigError(f"padding: expected {g.d} entries, got {len(pad)}")
    omega_v = []
    for a in range(g.d):
        omega_v += [g.lo[a] - pad[a], g.hi[a] + pad[a]]
    schedule = build_schedule(cfg.schedule)
    if tuple(schedule.levels[-1].image_m) != tuple(g.m):
        raise ConfigError(f"finest schedule level {schedule.levels[-1].image_m} does not match image size {g.m}")
    Grid(tuple(omega_v), schedule.levels[-1].velocity_m)
    return RegistrationConfig(
        T, R, tuple(omega_v), schedule,
        model=cfg.model, regularizer=cfg.regularizer, time_rule=cfg.time_rule,
        alpha=cfg.alpha, gamma=cfg.gamma, nt=cfg.nt, N=cfg.N, N_final=cfg.N_final,
        delta_factor=cfg.delta_factor, kernel=cfg.kernel, options=cfg.solver,
    )
