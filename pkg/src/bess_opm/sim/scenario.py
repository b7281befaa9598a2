"""Scenario files: JSON schema, validation and default application.

Unknown keys are rejected with their dotted path. Per-cell initial values
(``initial.soc``, ``initial.temp``, ``initial.res_base``) accept a number,
an explicit list of ``n`` numbers, or ``{"uniform": [lo, hi]}``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from ..cell import CellParameters, CellState, PackParameters
from ..enki import EnkiConfig
from ..errors import ConfigError
from ..lowlevel import BUS_MODES
from ..policy import PolicyParameters
from ..problem import BarrierParams, OpmConfig

CELL_KEYS = tuple(f.name for f in fields(CellParameters))
OPM_KEYS = ("horizon", "soc_band", "temp_band", "theta_nominal", "theta_prior_weight", "q_loss", "q_pen",
            "barrier_g", "barrier_e", "p_floor")
ENKI_KEYS = ("particles", "max_iters", "lambda_mode", "ess_target", "geometric_ratio", "obs_noise",
             "project_simplex", "perturb")
POLICY_KEYS = ("xi_q", "xi_t", "literal_phi")


@dataclass(frozen=True)
class DemandProfile:
    nominal: float = 200.0
    switch_period: float | None = 1200.0
    start_sign: int = 1  # +1 discharging first, -1 charging first
    noise: float = 0.0
    corr_time: float = 60.0
    events: tuple = ()  # ((time, actual power), ...)

    def __post_init__(self):
        if not np.isfinite(self.nominal):
            raise ConfigError("must be finite", "demand.nominal")
        if self.switch_period is not None and self.switch_period <= 0:
            raise ConfigError("must be > 0 or null", "demand.switch_period")
        if self.start_sign not in (1, -1):
            raise ConfigError("must be 1 or -1", "demand.start_sign")
        if not self.noise >= 0:
            raise ConfigError("must be >= 0", "demand.noise")
        if not self.corr_time > 0:
            raise ConfigError("must be > 0", "demand.corr_time")
        for i, ev in enumerate(self.events):
            if len(ev) != 2 or not all(np.isfinite(ev)):
                raise ConfigError("expected [time, power]", f"demand.events[{i}]")


@dataclass(frozen=True)
class LowLevelConfig:
    kp: float = 5.0
    ki: float = 90.0
    v_ref: float = 30.0
    bus_mode: str = "ideal"
    gain: float = 0.01
    capacitance: float = 1.0
    integral_limit: float = float("inf")

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("gains must be >= 0", "lowlevel.kp")
        if self.bus_mode not in BUS_MODES:
            raise ConfigError(f"must be one of {BUS_MODES}", "lowlevel.bus_mode")
        if self.v_ref <= 0:
            raise ConfigError("must be > 0", "lowlevel.v_ref")
        if self.gain <= 0 or self.capacitance <= 0:
            raise ConfigError("must be > 0", "lowlevel.gain")


@dataclass(frozen=True)
class Scenario:
    n: int
    params: PackParameters
    initial: CellState
    opm: OpmConfig
    enki: EnkiConfig
    policy: PolicyParameters
    demand: DemandProfile
    lowlevel: LowLevelConfig
    duration: float
    opm_period: float
    seed: int = 0
    warm_start: bool = True
    full_series: bool | None = None
    name: str = "scenario"
    echo: dict = field(default_factory=dict, compare=False)

    @property
    def dt(self):
        return self.opm.dt

    @property
    def steps(self):
        return int(round(self.duration / self.dt))

    @property
    def opm_every(self):
        return int(round(self.opm_period / self.dt))

    def write_full_series(self):
        return self.n <= 50 if self.full_series is None else bool(self.full_series)


DEFAULTS = {
    "name": "scenario",
    "n": 20,
    "seed": 0,
    "dt": 1.0,
    "duration": 1800.0,
    "opm_period": 30.0,
    "warm_start": True,
    "full_series": None,
    "cell": {k: (list(v) if isinstance(v, tuple) else v)
             for k, v in asdict(CellParameters()).items()},
    "initial": {"soc": {"uniform": [0.70, 0.75]}, "temp": 298.0, "res_base": {"uniform": [0.0313, 0.0413]}},
    "opm": {
        "horizon": 10,
        "soc_band": 0.005,
        "temp_band": 1.0,
        "theta_nominal": [1 / 3, 1 / 3, 1 / 3],
        "theta_prior_weight": 25.0,
        "q_loss": "auto",
        "q_pen": 1.0,
        "barrier_g": {"alpha": 1.0, "beta": 50.0, "smooth": False},
        "barrier_e": {"alpha": 1.0, "beta": 2.0},
        "p_floor": 1.0,
    },
    "enki": {k: getattr(EnkiConfig(), k) for k in ENKI_KEYS},
    "policy": {"xi_q": 8.0, "xi_t": 12.0, "literal_phi": False},
    "demand": {"nominal": 200.0, "switch_period": 1200.0, "start_sign": 1, "noise": 0.0,
               "corr_time": 60.0, "events": []},
    "lowlevel": {"kp": 5.0, "ki": 90.0, "v_ref": 30.0, "bus_mode": "ideal", "gain": 0.01, "capacitance": 1.0,
                 "integral_limit": None},
}

def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError("expected an object", path or "<root>")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError("unknown key", where)
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, where)
        else:
            out[key] = val
    return out


def _merge_initial(given, path="initial"):
    if not isinstance(given, dict):
        raise ConfigError("expected an object", path)
    out = copy.deepcopy(DEFAULTS["initial"])
    for key, val in given.items():
        if key not in out:
            raise ConfigError("unknown key", f"{path}.{key}")
        out[key] = val
    return out


def draw_per_cell(spec, n, rng, path):
    """Resolve a per-cell value spec into a length-n array."""
    if isinstance(spec, dict):
        if set(spec) != {"uniform"}:
            raise ConfigError("expected {'uniform': [lo, hi]}", path)
        lo, hi = _pair(spec["uniform"], f"{path}.uniform")
        if lo > hi:
            raise ConfigError("lo must be <= hi", f"{path}.uniform")
        return rng.uniform(lo, hi, n)
    if isinstance(spec, list):
        if len(spec) != n:
            raise ConfigError(f"expected {n} values, got {len(spec)}", path)
        return np.asarray(spec, dtype=float)
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return np.full(n, float(spec))
    raise ConfigError("expected number, list or {'uniform': [lo, hi]}", path)


def _pair(val, path):
    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError("expected [lo, hi]", path)
    try:
        return float(val[0]), float(val[1])
    except (TypeError, ValueError) as exc:
        raise ConfigError("expected numbers", path) from exc


def _is_multiple(x, dt):
    k = round(x / dt)
    return k >= 1 and abs(k * dt - x) <= 1e-9 * max(1.0, abs(x))


def _build(raw):
    n = raw["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError("must be a positive integer", "n")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**63:
        raise ConfigError("must be a non-negative integer", "seed")
    dt = float(raw["dt"])
    if dt <= 0:
        raise ConfigError("must be > 0", "dt")
    duration = float(raw["duration"])
    if not _is_multiple(duration, dt):
        raise ConfigError("must be a positive multiple of dt", "duration")
    opm_period = float(raw["opm_period"])
    if opm_period < dt or not _is_multiple(opm_period, dt):
        raise ConfigError("must be a multiple of dt and >= dt", "opm_period")

    rng = np.random.default_rng([seed, 1])
    init = raw["initial"]
    soc = draw_per_cell(init["soc"], n, rng, "initial.soc")
    temp = draw_per_cell(init["temp"], n, rng, "initial.temp")
    res_base = draw_per_cell(init["res_base"], n, rng, "initial.res_base")
    if np.any(soc < 0) or np.any(soc > 1):
        raise ConfigError("SoC must lie in [0, 1]", "initial.soc")
    if np.any(temp <= 0):
        raise ConfigError("temperatures must be > 0 K", "initial.temp")

    cell_kw = dict(raw["cell"])
    for key in ("soc_limits", "current_limits", "temp_limits"):
        cell_kw[key] = _pair(cell_kw[key], f"cell.{key}")
    cell_kw["ocv_coeffs"] = tuple(float(c) for c in cell_kw["ocv_coeffs"])
    cell_kw["res_base"] = res_base
    try:
        params = PackParameters(n=n, **cell_kw)
    except ConfigError as exc:
        raise ConfigError(str(exc), "cell") from None

    o = raw["opm"]
    try:
        opm = OpmConfig(
            horizon=o["horizon"],
            dt=dt,
            soc_band=float(o["soc_band"]),
            temp_band=float(o["temp_band"]),
            theta_nominal=tuple(float(x) for x in o["theta_nominal"]),
            theta_prior_weight=o["theta_prior_weight"],
            q_loss=o["q_loss"],
            q_pen=float(o["q_pen"]),
            barrier_g=BarrierParams(**o["barrier_g"]),
            barrier_e=BarrierParams(**o["barrier_e"]),
            p_floor=float(o["p_floor"]),
        )
        enki_cfg = EnkiConfig(seed=seed, **raw["enki"])
        pol = raw["policy"]
        policy = PolicyParameters(theta=tuple(opm.theta_nominal), **pol)
    except ConfigError as exc:
        head = (exc.path or "").split(".")[0]
        section = "opm" if head in OPM_KEYS else ("enki" if head in ENKI_KEYS else "policy")
        raise ConfigError(str(exc).split(": ", 1)[-1], f"{section}.{exc.path}") from None
    except TypeError as exc:
        raise ConfigError(str(exc), "opm") from None

    d = raw["demand"]
    demand = DemandProfile(
        nominal=float(d["nominal"]),
        switch_period=None if d["switch_period"] is None else float(d["switch_period"]),
        start_sign=int(d["start_sign"]),
        noise=float(d["noise"]),
        corr_time=float(d["corr_time"]),
        events=tuple((float(t), float(p)) for t, p in d["events"]),
    )
    low_kw = dict(raw["lowlevel"])
    if low_kw["integral_limit"] is None:
        low_kw["integral_limit"] = float("inf")
    low = LowLevelConfig(**low_kw)
    return Scenario(
        n=n,
        params=params,
        initial=CellState(soc, temp),
        opm=opm,
        enki=enki_cfg,
        policy=policy,
        demand=demand,
        lowlevel=low,
        duration=duration,
        opm_period=opm_period,
        seed=seed,
        warm_start=bool(raw["warm_start"]),
        full_series=raw["full_series"],
        name=str(raw["name"]),
        echo=raw,
    )


def scenario_from_dict(data, seed=None):
    """Validate a scenario mapping, apply defaults and build a :class:`Scenario`."""
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    data = dict(data)
    initial = data.pop("initial", {})
    raw = _merge(DEFAULTS, data)
    raw["initial"] = _merge_initial(initial)
    if seed is not None:
        raw["seed"] = seed
    return _build(raw)


def load_scenario(path, seed=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})", str(path)) from exc
    return scenario_from_dict(data, seed=seed)


def bundled(name):
    """Path of a scenario shipped with the package (``table1``, ``desk20``, ``demand_step``)."""
    ref = resources.files("bess_opm") / "data" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"no bundled scenario {name!r}")
    return Path(str(ref))


def load_bundled(name, seed=None, **overrides):
    data = json.loads(bundled(name).read_text(encoding="utf-8"))
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **val}
        else:
            data[key] = val
    return scenario_from_dict(data, seed=seed)


__all__ = [
    "DemandProfile",
    "LowLevelConfig",
    "Scenario",
    "DEFAULTS",
    "draw_per_cell",
    "scenario_from_dict",
    "load_scenario",
    "bundled",
    "load_bundled",
]
