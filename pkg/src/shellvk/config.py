"""Experiment configuration: TOML loading, ``--set`` overrides and validation."""

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCENARIOS = ("plate-linear", "plate-vk", "cylinder-vk", "sphere-vk")


@dataclass(frozen=True)
class ChartSpec:
    kind: str = "plate"
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))
    radius: float = 1.0
    orientation: int = 1

    def build(self):
        from .geometry import Chart
        return Chart(self.kind, self.bounds, self.radius, self.orientation)


@dataclass(frozen=True)
class MaterialSpec:
    mu: float = 1.0
    lam: float = 1.0


@dataclass(frozen=True)
class ScalingSpec:
    rule: str = "kappa_h4"
    kappa: float = 1.0
    beta: float = 5.0


@dataclass(frozen=True)
class GridSpec:
    """3D mesh (``n1 x n2 x ns`` cells, in-plane order ``order``) and 2D Hermite grid."""

    n1: int = 8
    n2: int = 8
    ns: int = 3
    order: int = 2
    order_s: int = 2
    n2d: int = 8
    refine2d: tuple = ()


@dataclass(frozen=True)
class TimeSpec:
    dt: float = 1e-3
    T: float = 0.2
    samples: int = 3
    scheme: str = "avf"


@dataclass(frozen=True)
class SweepSpec:
    """Overrides applied to the sweep runs (0 keeps the base value)."""

    n1: int = 0
    n2: int = 0
    n2d: int = 0
    dt: float = 0.0
    T: float = 0.0


@dataclass(frozen=True)
class FieldSpec:
    """Named analytic profile: ``"none"``, ``"manufactured"`` or a profile of :mod:`shellvk.fields`."""

    profile: str = "none"
    amplitude: float = 1.0
    direction: str = "normal"
    temporal: str = "constant"
    omega: float = 0.0
    zero_mean: bool = False


@dataclass(frozen=True)
class InitialSpec:
    displacement: str = "none"
    displacement_amplitude: float = 1.0
    velocity: str = "none"
    velocity_amplitude: float = 1.0
    mode: str = "interpolate"
    lift: str = "limit"


@dataclass(frozen=True)
class ToleranceSpec:
    tol_energy: float = 1e-8
    tol_B: float = 1e-9
    eps_iso: float = 1e-6
    newton_tol: float = 1e-10
    newton_maxit: int = 30


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "shellvk-out"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "custom"
    h: tuple = (0.1, 0.05, 0.025)
    h0: float = 0.1
    seed: int = 0
    chart: ChartSpec = field(default_factory=ChartSpec)
    material: MaterialSpec = field(default_factory=MaterialSpec)
    scaling: ScalingSpec = field(default_factory=ScalingSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    forcing: FieldSpec = field(default_factory=FieldSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self):
        return _plain(asdict(self))

    def for_sweep(self):
        """Config with the sweep overrides folded into the base sections."""
        s = self.sweep
        grid = replace(self.grid, n1=s.n1 or self.grid.n1, n2=s.n2 or self.grid.n2,
                       n2d=s.n2d or self.grid.n2d)
        time = replace(self.time, dt=s.dt or self.time.dt, T=s.T or self.time.T)
        return replace(self, grid=grid, time=time)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _coerce(cls, name, value):
    """Coerce a TOML value to the type of the default of ``cls.name``."""
    default = {f.name: f for f in fields(cls)}[name]
    ref = default.default
    try:
        if isinstance(ref, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(ref, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        if isinstance(ref, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(ref, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(ref, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return _tuplify(list(value))
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {cls.__name__}.{name}") from None
    return value


def from_dict(data, cls=ExperimentConfig):
    """Build a (nested) config dataclass from a plain dictionary."""
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if is_dataclass(f.default_factory):
            kwargs[name] = from_dict(value, f.default_factory)
        else:
            kwargs[name] = _coerce(cls, name, value)
    return cls(**kwargs)


def _merge(base, extra):
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(text):
    """``"a.b=value"`` -> ``{"a": {"b": value}}`` with ``value`` parsed as TOML when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key or any(not part for part in key.split(".")):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    out = value
    for part in reversed(key.split(".")):
        out = {part: out}
    return out


def scenario_text(name):
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return resources.files("shellvk.scenarios").joinpath(f"{name}.toml").read_text()


def load_config(path=None, scenario=None, overrides=()):
    """Config from a scenario and/or a TOML file, then ``key=value`` overrides."""
    data = {}
    try:
        if scenario is not None:
            data = tomllib.loads(scenario_text(scenario))
        if path is not None:
            with open(path, "rb") as fh:
                data = _merge(data, tomllib.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    for text in overrides:
        data = _merge(data, parse_override(text))
    cfg = from_dict(data)
    validate(cfg)
    return cfg


def validate(cfg):
    """Raise :class:`ConfigError` unless the invariants of a runnable config hold."""
    hs = cfg.h
    if len(hs) == 0:
        raise ConfigError("h list is empty")
    if any(not h > 0 for h in hs):
        raise ConfigError("thicknesses must be positive")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("h list must be strictly decreasing")
    if max(hs) > cfg.h0:
        raise ConfigError(f"h = {max(hs)} exceeds h0 = {cfg.h0}")
    for spec in (cfg.time, cfg.for_sweep().time):
        if not spec.T > 0 or not spec.dt > 0:
            raise ConfigError("T and dt must be positive")
        if spec.dt > spec.T:
            raise ConfigError("dt exceeds T")
    if cfg.time.samples < 2:
        raise ConfigError("need at least two sample times")
    if cfg.time.scheme not in ("avf", "midpoint"):
        raise ConfigError(f"unknown scheme {cfg.time.scheme!r}")
    tol = cfg.tolerances
    for name in ("tol_energy", "tol_B", "eps_iso", "newton_tol"):
        if not getattr(tol, name) > 0:
            raise ConfigError(f"tolerance {name} must be positive")
    if tol.newton_maxit < 1:
        raise ConfigError("newton_maxit must be at least 1")
    g = cfg.grid
    if min(g.n1, g.n2, g.ns, g.n2d) < 1 or g.order < 1 or g.order_s < 1:
        raise ConfigError("grid sizes and orders must be positive")
    if cfg.initial.mode not in ("interpolate", "project"):
        raise ConfigError(f"unknown initial mode {cfg.initial.mode!r}")
    if cfg.initial.lift not in ("limit", "kirchhoff", "plain"):
        raise ConfigError(f"unknown lift {cfg.initial.lift!r}")
    if cfg.forcing.direction not in ("normal", "e1", "e2", "e3"):
        raise ConfigError(f"unknown forcing direction {cfg.forcing.direction!r}")
    if cfg.forcing.temporal not in ("constant", "cos", "sin"):
        raise ConfigError(f"unknown temporal law {cfg.forcing.temporal!r}")
    try:
        chart = cfg.chart.build()
        from .solver3d import ScalingLaw
        ScalingLaw(hs[0], cfg.scaling.rule, cfg.scaling.kappa, cfg.scaling.beta)
        from .material import MaterialModel
        MaterialModel(cfg.material.mu, cfg.material.lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    from .fields import PROFILES
    names = PROFILES + ("none",)
    for label, name in (("displacement", cfg.initial.displacement), ("velocity", cfg.initial.velocity)):
        if name not in names:
            raise ConfigError(f"unknown {label} profile {name!r}")
    if cfg.forcing.profile not in names + ("manufactured",):
        raise ConfigError(f"unknown forcing profile {cfg.forcing.profile!r}")
    if cfg.forcing.profile == "manufactured" and chart.kind != "plate":
        raise ConfigError("the manufactured forcing is defined on the plate only")
    return cfg
