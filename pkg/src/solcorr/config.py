"""Run configuration: a TOML document validated into frozen dataclasses.

Every section and key is optional; omitted values take the defaults below,
and the fully resolved configuration is echoed into the run metadata.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .cgle import PAPER_PARAMS, CgleParams, StepScheme
from .correl import DENOMINATOR_MODES
from .errors import ConfigError
from .grid import make_grid
from .quantum import NOISE_CHANNELS

STATE_MODES = ("single", "pair", "train")
SWEEP_KEYS = ("epsilon", "beta", "mu", "separation")


@dataclass(frozen=True)
class GridConfig:
    n_points: int = 1024
    t_window: float = 40.0


@dataclass(frozen=True)
class SchemeConfig:
    dz: float = 1e-3
    substeps: int = 1


@dataclass(frozen=True)
class StateConfig:
    mode: str = "pair"
    n_solitons: int = 4            # train only
    spacing: float = 2.5           # initial spacing guess for pair/train
    phases: tuple | None = None    # default: all in phase
    offsets: tuple | None = None   # explicit offsets override spacing
    separation: float | None = None  # fixed separation, skips bound-state relaxation
    guess_amplitude: float = 2.0
    guess_width: float = 1.0
    exact_sech: bool = False       # use sech(t) as the single soliton (conservative limit)
    max_distance: float = 100.0
    tolerance: float = 1e-6
    transient: float = 5.0
    threshold: float = 0.3
    search_spacing: bool = True
    quasi_stationary: bool = False


@dataclass(frozen=True)
class MeasurementConfig:
    checkpoints: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    distance: float | None = None   # propagation length; default: last checkpoint
    n_slots: int = 64
    slot_span: tuple | None = None  # (t0, t1); default: whole window
    denominator: str = "full"
    channels: tuple = NOISE_CHANNELS
    eta_maps: bool = True


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    plot_scripts: bool = True
    save_trajectory: bool = False


@dataclass(frozen=True)
class SweepConfig:
    epsilon: tuple = ()
    beta: tuple = ()
    mu: tuple = ()
    separation: tuple = ()
    workers: int = 1

    def points(self, base: "RunConfig") -> list[dict]:
        axes = [(k, getattr(self, k)) for k in SWEEP_KEYS if getattr(self, k)]
        pts = [{}]
        for key, values in axes:
            pts = [dict(p, **{key: v}) for p in pts for v in values]
        return pts


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    params: CgleParams = PAPER_PARAMS
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    state: StateConfig = field(default_factory=StateConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def make_grid(self):
        return make_grid(self.grid.n_points, self.grid.t_window)

    def make_scheme(self) -> StepScheme:
        return StepScheme(self.scheme.dz, self.scheme.substeps)

    @property
    def distance(self) -> float:
        m = self.measurement
        return m.distance if m.distance is not None else max(m.checkpoints)

    def as_dict(self) -> dict:
        return asdict(self)

    def with_point(self, point: dict) -> "RunConfig":
        cfg = self
        for key, value in point.items():
            if key == "separation":
                cfg = replace(cfg, state=replace(cfg.state, separation=float(value)))
            else:
                cfg = replace(cfg, params=replace(cfg.params, **{key: float(value)}))
        return validate(cfg)


_SECTIONS = {"grid": GridConfig, "params": CgleParams, "scheme": SchemeConfig,
             "state": StateConfig, "measurement": MeasurementConfig, "output": OutputConfig,
             "sweep": SweepConfig}


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        default = known[key].default
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        elif isinstance(value, dict):
            raise ConfigError(f"[{name}].{key} must not be a table")
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"[{name}].{key} must be true or false")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"[{name}].{key} must be a number, got {value!r}")
            if isinstance(default, int) and not isinstance(default, bool) and cls is not CgleParams:
                if int(value) != value:
                    raise ConfigError(f"[{name}].{key} must be an integer, got {value!r}")
                value = int(value)
        values[key] = value
    try:
        if cls is CgleParams:
            # keys omitted from [params] keep the default parameter set, not zeros
            return replace(PAPER_PARAMS, **values)
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def _numbers(name: str, values, allow_empty: bool = True) -> tuple:
    if values is None:
        return values
    if not isinstance(values, tuple) or (not values and not allow_empty):
        raise ConfigError(f"{name} must be a list of numbers")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{name} must contain finite numbers, got {v!r}")
    return tuple(float(v) for v in values)


def validate(cfg: RunConfig) -> RunConfig:
    """Check every value before any computation starts."""
    make_grid(cfg.grid.n_points, cfg.grid.t_window)
    StepScheme(cfg.scheme.dz, cfg.scheme.substeps)
    st = cfg.state
    if st.mode not in STATE_MODES:
        raise ConfigError(f"state.mode must be one of {STATE_MODES}, got {st.mode!r}")
    if st.n_solitons < 2:
        raise ConfigError("state.n_solitons must be at least 2")
    for key in ("spacing", "guess_amplitude", "guess_width", "max_distance", "tolerance"):
        if not getattr(st, key) > 0:
            raise ConfigError(f"state.{key} must be positive")
    if st.transient < 0:
        raise ConfigError("state.transient must be non-negative")
    if not 0 < st.threshold < 1:
        raise ConfigError("state.threshold must lie in (0, 1)")
    if st.separation is not None and not st.separation > 0:
        raise ConfigError("state.separation must be positive")
    phases = _numbers("state.phases", st.phases)
    offsets = _numbers("state.offsets", st.offsets)
    n = {"single": 1, "pair": 2, "train": st.n_solitons}[st.mode]
    if offsets is not None and len(offsets) != n:
        raise ConfigError(f"state.offsets needs {n} entries for mode {st.mode!r}")
    if phases is not None and len(phases) != n:
        raise ConfigError(f"state.phases needs {n} entries for mode {st.mode!r}")
    st = replace(st, phases=phases, offsets=offsets)

    m = cfg.measurement
    checkpoints = _numbers("measurement.checkpoints", m.checkpoints, allow_empty=False)
    if any(z < 0 for z in checkpoints):
        raise ConfigError("measurement.checkpoints must be non-negative")
    checkpoints = tuple(sorted(set(checkpoints)))
    if m.distance is not None and (isinstance(m.distance, bool) or not m.distance > 0):
        raise ConfigError("measurement.distance must be positive")
    if m.denominator not in DENOMINATOR_MODES:
        raise ConfigError(f"measurement.denominator must be one of {DENOMINATOR_MODES}")
    bad = sorted(set(m.channels) - set(NOISE_CHANNELS))
    if bad:
        raise ConfigError(f"unknown noise channel(s) {bad}; known: {NOISE_CHANNELS}")
    if m.n_slots < 1:
        raise ConfigError("measurement.n_slots must be positive")
    span = _numbers("measurement.slot_span", m.slot_span)
    if span is not None and (len(span) != 2 or span[0] >= span[1]):
        raise ConfigError("measurement.slot_span must be [t0, t1] with t0 < t1")
    if span is not None and max(abs(span[0]), abs(span[1])) > 0.5 * cfg.grid.t_window:
        raise ConfigError("measurement.slot_span extends beyond the window")
    m = replace(m, checkpoints=checkpoints, slot_span=span, channels=tuple(m.channels))

    sw = cfg.sweep
    sw = replace(sw, **{k: _numbers(f"sweep.{k}", getattr(sw, k)) for k in SWEEP_KEYS})
    if sw.workers < 1:
        raise ConfigError("sweep.workers must be at least 1")
    if sw.beta and min(sw.beta) < 0:
        raise ConfigError("sweep.beta values must be non-negative")
    if sw.separation and min(sw.separation) <= 0:
        raise ConfigError("sweep.separation values must be positive")
    if not isinstance(cfg.output.directory, str) or not cfg.output.directory:
        raise ConfigError("output.directory must be a non-empty string")
    return replace(cfg, state=st, measurement=m, sweep=sw)


def config_from_dict(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    parts = {name: _section(name, cls, raw[name]) for name, cls in _SECTIONS.items()
             if name in raw}
    return validate(RunConfig(**parts))


def load_config(path=None) -> RunConfig:
    if path is None:
        return validate(RunConfig())
    try:
        raw = tomli.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)
