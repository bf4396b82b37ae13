"""TOML configuration: parsing into model, run, estimate and study settings."""

import copy
import os
from dataclasses import dataclass, field
from importlib import resources

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .discretization import Grid
from .model import ModelError, ModelSpec, coefficients_from_config
from .stepper import StepperConfig


class ConfigError(ValueError):
    pass


PRESETS = ("stationary", "smooth", "decoupled", "phifloor", "budget", "broken_A")

_MODEL_KEYS = {"name", "d", "delta", "D", "gamma", "A", "jhat", "phi_res", "phi0", "W0"}
_RUN_KEYS = {"dt", "t0", "t_max", "V", "phi_min", "n", "stride", "step_cap"}
_FEAS_KEYS = {"raster", "x_max", "y_max", "dt"}
_CONV_KEYS = {"halvings", "ratio_band", "residual_decay", "n_test"}


@dataclass
class Config:
    raw: dict
    spec: ModelSpec
    run: StepperConfig
    stride: int = 1
    eta: dict = field(default_factory=dict)
    tune: bool = False
    feasibility: dict = field(default_factory=dict)
    converge: dict = field(default_factory=dict)
    source: str = ""
    base_dir: str = None


def _number(sec, key, where, positive=False, default=None, integer=False):
    if key not in sec:
        if default is None:
            raise ConfigError("%s: missing field %r" % (where, key))
        return default
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError("%s.%s: expected a number, got %r" % (where, key, val))
    if integer and int(val) != val:
        raise ConfigError("%s.%s: expected an integer, got %r" % (where, key, val))
    if not np.isfinite(val):
        raise ConfigError("%s.%s: must be finite" % (where, key))
    if positive and not val > 0:
        raise ConfigError("%s.%s: must be positive, got %r" % (where, key, val))
    return int(val) if integer else float(val)


def _vector(sec, key, where, length, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError("%s: missing field %r" % (where, key))
        return np.full(length, float(default))
    val = sec[key]
    if isinstance(val, (int, float)) and not isinstance(val, bool):
        return np.full(length, float(val))
    if not isinstance(val, list) or len(val) != length:
        raise ConfigError("%s.%s: expected a list of length %d" % (where, key, length))
    try:
        arr = np.array(val, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("%s.%s: entries must be numbers" % (where, key))
    if not np.all(np.isfinite(arr)):
        raise ConfigError("%s.%s: entries must be finite" % (where, key))
    return arr


def _unknown(sec, allowed, where):
    extra = sorted(set(sec) - allowed)
    if extra:
        raise ConfigError("%s: unknown field(s) %s" % (where, ", ".join(extra)))


def from_dict(raw, base_dir=None, source=""):
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    if "model" not in raw:
        raise ConfigError("missing [model] section")
    m = raw["model"]
    _unknown(m, _MODEL_KEYS, "model")
    d = _number(m, "d", "model", integer=True)
    if d < 2:
        raise ConfigError("model.d: must be at least 2, got %d" % d)
    try:
        coeffs = coefficients_from_config(d, raw.get("coefficients", {}), base_dir)
    except (ModelError, KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError("coefficients: %s" % (exc,))
    try:
        spec = ModelSpec(
            d=d, coeffs=coeffs,
            delta=_vector(m, "delta", "model", d),
            bigD=_vector(m, "D", "model", d - 1),
            gamma=_vector(m, "gamma", "model", d - 1),
            robinA=_vector(m, "A", "model", d - 1, default=0.0),
            jhat=_vector(m, "jhat", "model", d, default=0.0),
            phi_res=_vector(m, "phi_res", "model", d),
            phi0=_vector(m, "phi0", "model", d),
            W0=_number(m, "W0", "model", default=0.0),
            name=str(m.get("name", "model")))
    except ModelError as exc:
        raise ConfigError("model: %s" % exc)
    for key, arr in (("delta", spec.delta), ("D", spec.bigD), ("gamma", spec.gamma)):
        if not np.all(arr > 0):
            raise ConfigError("model.%s: entries must be positive" % key)

    r = raw.get("run", {})
    _unknown(r, _RUN_KEYS, "run")
    n = _number(r, "n", "run", integer=True, default=101)
    if n < 5:
        raise ConfigError("run.n: need at least 5 nodes, got %d" % n)
    phi_min = _number(r, "phi_min", "run", positive=True, default=0.01)
    if not phi_min < 1.0 / d:
        raise ConfigError("run.phi_min: must lie in (0, 1/d)")
    t0 = _number(r, "t0", "run", default=0.0)
    t_max = _number(r, "t_max", "run", default=t0 + 1.0)
    if not t_max > t0:
        raise ConfigError("run.t_max: must exceed run.t0")
    cap = r.get("step_cap")
    run = StepperConfig(dt=_number(r, "dt", "run", positive=True),
                        V=_number(r, "V", "run", positive=True, default=1.0),
                        phi_min=phi_min, grid=Grid(n), t0=t0, t_max=t_max,
                        step_cap=None if cap is None else _number(r, "step_cap", "run", True))
    stride = _number(r, "stride", "run", positive=True, integer=True, default=1)

    est = raw.get("estimates", {})
    eta = dict(est.get("eta", {}))
    for k, v in eta.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError("estimates.eta.%s: must be a positive number" % k)
    tune = bool(est.get("tune", False))

    fz = raw.get("feasibility", {})
    _unknown(fz, _FEAS_KEYS, "feasibility")
    raster = fz.get("raster", [64, 64])
    if (not isinstance(raster, list) or len(raster) != 2
            or not all(isinstance(x, int) and x > 0 for x in raster)):
        raise ConfigError("feasibility.raster: expected [width, height] positive integers")
    feas = {"raster": tuple(raster),
            "x_max": _number(fz, "x_max", "feasibility", positive=True, default=1.0),
            "y_max": _number(fz, "y_max", "feasibility", default=1.0),
            "dt": _number(fz, "dt", "feasibility", positive=True, default=run.dt)}
    if feas["y_max"] < 0:
        raise ConfigError("feasibility.y_max: must be nonnegative")

    cv = raw.get("converge", {})
    _unknown(cv, _CONV_KEYS, "converge")
    band = cv.get("ratio_band", [1.5, 2.5])
    if not isinstance(band, list) or len(band) != 2 or not band[0] < band[1]:
        raise ConfigError("converge.ratio_band: expected [low, high] with low < high")
    conv = {"halvings": _number(cv, "halvings", "converge", integer=True, default=3),
            "ratio_band": (float(band[0]), float(band[1])),
            "residual_decay": _number(cv, "residual_decay", "converge", default=1.5),
            "n_test": _number(cv, "n_test", "converge", integer=True, default=8)}
    if conv["halvings"] < 1:
        raise ConfigError("converge.halvings: must be at least 1")
    return Config(raw, spec, run, stride, eta, tune, feas, conv, source, base_dir)


def parse_text(text, base_dir=None, source="<string>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("%s: %s" % (source, exc))
    return from_dict(raw, base_dir, source)


def load(path):
    """Load a config file, or a bundled preset when given a bare preset name."""
    if not os.path.exists(path) and path in PRESETS:
        return load_preset(path)
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc.strerror))
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ConfigError("%s: not valid UTF-8" % path)
    return parse_text(text, os.path.dirname(os.path.abspath(path)), path)


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError("unknown preset %r (have %s)" % (name, ", ".join(PRESETS)))
    return resources.files("rothe_mixture").joinpath("presets/%s.toml" % name).read_text()


def load_preset(name):
    return parse_text(preset_text(name), None, "preset:%s" % name)


def with_dt(cfg, dt, n=None):
    """Same config with a different time step (and optionally grid size)."""
    raw = copy.deepcopy(cfg.raw)
    raw.setdefault("run", {})["dt"] = float(dt)
    if n is not None:
        raw["run"]["n"] = int(n)
    return from_dict(raw, cfg.base_dir, cfg.source)
