"""Orientation- and environment-dependent measurement model.

A profile maps a gimbal orientation to a failure probability, a bias and a
Gaussian spread, plus a mixture of enlargement/reduction outliers. Angular
dependence comes from a cosine-lobe shielding factor: the phone body blocks
the antenna when it faces away from the remote device (theta near 180) and
most strongly with the arm at phi = 90.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np
from scipy.special import expit

from .ranging import Failure, RangingOutcome

DEVICES = ("iphone12pro", "galaxyS21u", "pixel6pro", "dw3000")
ENVIRONMENTS = ("outside", "lab", "garage")
PROFILE_SCHEMA = 1


@dataclass(frozen=True, order=True)
class Position:
    """Gimbal orientation: base rotation theta, arm rotation phi, in degrees."""

    theta_deg: float
    phi_deg: float

    def __post_init__(self) -> None:
        theta = round(float(self.theta_deg), 2) + 0.0
        phi = round(float(self.phi_deg), 2) + 0.0
        if not 0.0 <= theta < 360.0:
            raise ValueError(f"theta must lie in [0, 360), got {self.theta_deg}")
        if not 0.0 <= phi <= 180.0:
            raise ValueError(f"phi must lie in [0, 180], got {self.phi_deg}")
        object.__setattr__(self, "theta_deg", theta)
        object.__setattr__(self, "phi_deg", phi)


@dataclass(frozen=True)
class Shielding:
    g_min: float = 0.05
    phi_floor: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.g_min <= 1.0 or not 0.0 <= self.phi_floor <= 1.0:
            raise ValueError("shielding parameters must lie in [0, 1]")

    def shadow(self, theta_deg, phi_deg):
        """Normalised blockage in [0, 1]: 0 facing the remote, 1 at (180, 90)."""
        theta = np.radians(theta_deg)
        phi = np.radians(phi_deg)
        back = (1.0 - np.cos(theta)) / 2.0
        arm = self.phi_floor + (1.0 - self.phi_floor) * np.abs(np.sin(phi))
        return back * arm

    def gain(self, theta_deg, phi_deg):
        return 1.0 - (1.0 - self.g_min) * self.shadow(theta_deg, phi_deg)


DEFAULT_SHIELDING = Shielding()


def shielding_gain(pos: Position, shielding: Shielding = DEFAULT_SHIELDING) -> float:
    return float(shielding.gain(pos.theta_deg, pos.phi_deg))


class ProfileError(ValueError):
    """Invalid profile document; ``pointer`` locates the offending value."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer}: {message}")
        self.pointer = pointer


@dataclass(frozen=True)
class AngularFunction:
    """A named parametric form evaluated over (theta, phi).

    constant          [value]
    shielded_linear   [base, slope]             base + slope * shadow
    shielded_logistic [p_max, gain_mid, width]  p_max * expit((gain_mid - gain) / width)
    """

    form: str
    params: tuple[float, ...]

    ARITY = {"constant": 1, "shielded_linear": 2, "shielded_logistic": 3}

    def __post_init__(self) -> None:
        if self.form not in self.ARITY:
            raise ValueError(f"unknown form {self.form!r}")
        if len(self.params) != self.ARITY[self.form]:
            raise ValueError(f"form {self.form!r} takes {self.ARITY[self.form]} parameters")
        if self.form == "shielded_logistic" and self.params[2] <= 0:
            raise ValueError("logistic width must be positive")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def constant(cls, value: float) -> AngularFunction:
        return cls("constant", (value,))

    def __call__(self, theta_deg, phi_deg, shielding: Shielding = DEFAULT_SHIELDING):
        p = self.params
        if self.form == "constant":
            return np.full(np.broadcast(theta_deg, phi_deg).shape, p[0])[()]
        if self.form == "shielded_linear":
            return p[0] + p[1] * shielding.shadow(theta_deg, phi_deg)
        gain = shielding.gain(theta_deg, phi_deg)
        return p[0] * expit((p[1] - gain) / p[2])

    def bounds(self) -> tuple[float, float]:
        """Exact range of the function over the whole orientation domain."""
        p = self.params
        if self.form == "constant":
            return p[0], p[0]
        if self.form == "shielded_linear":
            return min(p[0], p[0] + p[1]), max(p[0], p[0] + p[1])
        return (min(0.0, p[0]), max(0.0, p[0]))

    def to_json(self) -> Any:
        if self.form == "constant":
            return self.params[0]
        return {"form": self.form, "params": list(self.params)}


@dataclass(frozen=True)
class OutlierModel:
    p_enlarge: float = 0.0
    enlarge_tail_m: float = 0.5
    enlarge_shape: float = 5.0
    p_reduce: float = 0.0
    reduce_floor_m: float = -3.0
    reduce_max_m: float | None = None

    def __post_init__(self) -> None:
        if not (0 <= self.p_enlarge <= 1 and 0 <= self.p_reduce <= 1):
            raise ValueError("outlier probabilities must lie in [0, 1]")
        if self.p_enlarge + self.p_reduce > 1:
            raise ValueError("outlier probabilities sum above 1")
        if self.enlarge_tail_m <= 0 or self.enlarge_shape <= 0:
            raise ValueError("enlargement tail parameters must be positive")
        if self.reduce_max_m is not None and self.reduce_max_m <= 0:
            raise ValueError("reduce_max_m must be positive")


@dataclass(frozen=True)
class DistanceCap:
    cap_m: float
    kind: str = "hard"
    ramp_m: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in ("hard", "soft"):
            raise ValueError("cap kind must be 'hard' or 'soft'")
        if self.cap_m <= 0 or self.ramp_m <= 0:
            raise ValueError("cap distances must be positive")

    def extra_fail(self, distance_m: float) -> float:
        if distance_m > self.cap_m:
            return 1.0
        if self.kind == "hard":
            return 0.0
        return min(max((distance_m - (self.cap_m - self.ramp_m)) / self.ramp_m, 0.0), 1.0)


@dataclass(frozen=True)
class TowerObstruction:
    enabled: bool = False
    bias_add_m: float = 0.01
    sigma_add_m: float = 0.004


@dataclass(frozen=True)
class EnvironmentProfile:
    name: str
    true_distance_m: float
    bias: AngularFunction = AngularFunction.constant(0.0)
    sigma: AngularFunction = AngularFunction.constant(0.0)
    p_fail: AngularFunction = AngularFunction.constant(0.0)
    outlier: OutlierModel = OutlierModel()
    cap: DistanceCap | None = None
    shielding: Shielding = DEFAULT_SHIELDING
    tower: TowerObstruction = TowerObstruction()
    device: str = ""

    def __post_init__(self) -> None:
        if self.true_distance_m < 0:
            raise ValueError("true distance must be non-negative")
        if self.sigma.bounds()[0] < 0:
            raise ValueError("sigma must be non-negative everywhere")
        lo, hi = self.p_fail.bounds()
        if lo < 0 or hi > 1:
            raise ValueError("p_fail must lie in [0, 1] everywhere")

    def with_distance(self, distance_m: float) -> EnvironmentProfile:
        return replace(self, true_distance_m=distance_m)

    def beyond_cap(self) -> bool:
        return self.cap is not None and self.true_distance_m > self.cap.cap_m

    def fail_probability(self, theta_deg, phi_deg):
        p = self.p_fail(theta_deg, phi_deg, self.shielding)
        if self.cap is not None:
            extra = self.cap.extra_fail(self.true_distance_m)
            p = 1.0 - (1.0 - p) * (1.0 - extra)
        return p

    def bias_at(self, theta_deg, phi_deg):
        b = self.bias(theta_deg, phi_deg, self.shielding)
        return b + self.tower.bias_add_m if self.tower.enabled else b

    def sigma_at(self, theta_deg, phi_deg):
        s = self.sigma(theta_deg, phi_deg, self.shielding)
        return s + self.tower.sigma_add_m if self.tower.enabled else s


def sample_batch(
    profile: EnvironmentProfile, pos: Position, rng: np.random.Generator, n: int
) -> np.ndarray:
    """``n`` independent measurement attempts at one orientation.

    Failed attempts are NaN. Draw order is fixed (failure, core, mixture,
    tail, reduction) so a seed reproduces the stream exactly.
    """
    theta, phi = pos.theta_deg, pos.phi_deg
    u_fail = rng.random(n)
    z = rng.standard_normal(n)
    u_mix = rng.random(n)
    u_tail = rng.random(n)
    u_red = rng.random(n)

    out = profile.true_distance_m + profile.bias_at(theta, phi) + profile.sigma_at(theta, phi) * z
    o = profile.outlier
    enlarge = u_mix < o.p_enlarge
    reduce = (u_mix >= o.p_enlarge) & (u_mix < o.p_enlarge + o.p_reduce)
    if enlarge.any():
        # Lomax tail: reflected paths only ever lengthen the measured distance
        tail = o.enlarge_tail_m * ((1.0 - u_tail[enlarge]) ** (-1.0 / o.enlarge_shape) - 1.0)
        out[enlarge] += np.maximum(tail, np.finfo(float).tiny)
    if reduce.any():
        span = o.reduce_max_m
        if span is None:
            span = max(profile.true_distance_m - o.reduce_floor_m, 0.0)
        cut = span * (1.0 - u_red[reduce])
        out[reduce] = np.maximum(profile.true_distance_m - cut, o.reduce_floor_m)

    if profile.beyond_cap() and profile.cap.kind == "hard":
        out[:] = np.nan
    else:
        out[u_fail < profile.fail_probability(theta, phi)] = np.nan
    return out


def sample_measurement(
    profile: EnvironmentProfile, pos: Position, rng: np.random.Generator
) -> RangingOutcome:
    value = sample_batch(profile, pos, rng, 1)[0]
    if math.isnan(value):
        return RangingOutcome.failed(Failure.NO_SIGNAL)
    return RangingOutcome.distance(float(value))


@dataclass
class DeviceProfileSet:
    device: str
    profiles: dict[tuple[str, float], EnvironmentProfile] = field(default_factory=dict)

    def get(self, environment: str, distance_m: float) -> EnvironmentProfile:
        for (env, dist), profile in self.profiles.items():
            if env == environment and math.isclose(dist, distance_m, abs_tol=1e-9):
                return profile
        raise KeyError(f"no profile for {self.device}/{environment}/{distance_m:g} m")

    def cap(self) -> DistanceCap | None:
        caps = {p.cap for p in self.profiles.values()}
        return next(iter(caps)) if len(caps) == 1 else None

    def cells(self) -> list[tuple[str, float]]:
        return list(self.profiles)


class ProfileLibrary(Mapping[str, DeviceProfileSet]):
    def __init__(self, devices: dict[str, DeviceProfileSet]):
        self._devices = devices

    def __getitem__(self, device: str) -> DeviceProfileSet:
        return self._devices[device]

    def __iter__(self) -> Iterator[str]:
        return iter(self._devices)

    def __len__(self) -> int:
        return len(self._devices)

    def get_profile(self, device: str, environment: str, distance_m: float) -> EnvironmentProfile:
        if device not in self._devices:
            raise KeyError(f"unknown device {device!r}")
        return self._devices[device].get(environment, distance_m)

    def iter_profiles(self) -> Iterator[EnvironmentProfile]:
        for devset in self._devices.values():
            yield from devset.profiles.values()


def default_profiles_path() -> Path:
    return Path(str(resources.files("uwb_rangekit") / "profiles" / "default.json"))


# -- JSON (de)serialisation --------------------------------------------------


def _number(node: Any, ptr: str, lo: float | None = None, hi: float | None = None) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ProfileError(ptr, "expected a number")
    value = float(node)
    if not math.isfinite(value):
        raise ProfileError(ptr, "must be finite")
    if lo is not None and value < lo:
        raise ProfileError(ptr, f"must be >= {lo:g}, got {value:g}")
    if hi is not None and value > hi:
        raise ProfileError(ptr, f"must be <= {hi:g}, got {value:g}")
    return value


def _function(node: Any, ptr: str, lo: float | None = None, hi: float | None = None) -> AngularFunction:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        fn = AngularFunction.constant(_number(node, ptr))
    elif isinstance(node, dict):
        form = node.get("form")
        if form not in AngularFunction.ARITY:
            raise ProfileError(f"{ptr}/form", f"unknown form {form!r}")
        params = node.get("params")
        if not isinstance(params, list) or len(params) != AngularFunction.ARITY[form]:
            raise ProfileError(f"{ptr}/params", f"form {form!r} takes {AngularFunction.ARITY[form]} numbers")
        values = tuple(_number(v, f"{ptr}/params/{i}") for i, v in enumerate(params))
        try:
            fn = AngularFunction(form, values)
        except ValueError as exc:
            raise ProfileError(f"{ptr}/params", str(exc)) from None
    else:
        raise ProfileError(ptr, "expected a number or {form, params}")
    fmin, fmax = fn.bounds()
    if lo is not None and fmin < lo:
        raise ProfileError(ptr, f"must be >= {lo:g} everywhere, reaches {fmin:g}")
    if hi is not None and fmax > hi:
        raise ProfileError(ptr, f"must be <= {hi:g} everywhere, reaches {fmax:g}")
    return fn


def _object(node: Any, ptr: str) -> dict:
    if not isinstance(node, dict):
        raise ProfileError(ptr, "expected an object")
    return node


def profile_from_dict(node: Any, ptr: str = "", device: str = "") -> EnvironmentProfile:
    node = _object(node, ptr)
    for key in ("name", "true_distance_m"):
        if key not in node:
            raise ProfileError(f"{ptr}/{key}", "missing")
    if not isinstance(node["name"], str):
        raise ProfileError(f"{ptr}/name", "expected a string")

    o = _object(node.get("outlier", {}), f"{ptr}/outlier")
    op = f"{ptr}/outlier"
    outlier = OutlierModel(
        p_enlarge=_number(o.get("p_enlarge", 0.0), f"{op}/p_enlarge", 0, 1),
        enlarge_tail_m=_number(o.get("enlarge_tail_m", 0.5), f"{op}/enlarge_tail_m", 1e-12),
        enlarge_shape=_number(o.get("enlarge_shape", 5.0), f"{op}/enlarge_shape", 1e-12),
        p_reduce=_number(o.get("p_reduce", 0.0), f"{op}/p_reduce", 0, 1),
        reduce_floor_m=_number(o.get("reduce_floor_m", -3.0), f"{op}/reduce_floor_m"),
        reduce_max_m=None
        if o.get("reduce_max_m") is None
        else _number(o["reduce_max_m"], f"{op}/reduce_max_m", 1e-12),
    )
    if outlier.p_enlarge + outlier.p_reduce > 1:
        raise ProfileError(op, "p_enlarge + p_reduce exceeds 1")

    cap = None
    if node.get("max_distance_cap_m") is not None:
        kind = node.get("cap_kind", "hard")
        if kind not in ("hard", "soft"):
            raise ProfileError(f"{ptr}/cap_kind", "expected 'hard' or 'soft'")
        cap = DistanceCap(
            _number(node["max_distance_cap_m"], f"{ptr}/max_distance_cap_m", 1e-12),
            kind,
            _number(node.get("cap_ramp_m", 2.0), f"{ptr}/cap_ramp_m", 1e-12),
        )

    sh = _object(node.get("shielding", {}), f"{ptr}/shielding")
    shielding = Shielding(
        _number(sh.get("g_min", DEFAULT_SHIELDING.g_min), f"{ptr}/shielding/g_min", 0, 1),
        _number(sh.get("phi_floor", DEFAULT_SHIELDING.phi_floor), f"{ptr}/shielding/phi_floor", 0, 1),
    )
    tw = _object(node.get("tower_obstruction", {}), f"{ptr}/tower_obstruction")
    tower = TowerObstruction(
        bool(tw.get("enabled", False)),
        _number(tw.get("bias_add_m", 0.01), f"{ptr}/tower_obstruction/bias_add_m"),
        _number(tw.get("sigma_add_m", 0.004), f"{ptr}/tower_obstruction/sigma_add_m", 0),
    )
    return EnvironmentProfile(
        name=node["name"],
        true_distance_m=_number(node["true_distance_m"], f"{ptr}/true_distance_m", 0),
        bias=_function(node.get("bias", 0.0), f"{ptr}/bias"),
        sigma=_function(node.get("sigma", 0.0), f"{ptr}/sigma", lo=0.0),
        p_fail=_function(node.get("p_fail", 0.0), f"{ptr}/p_fail", lo=0.0, hi=1.0),
        outlier=outlier,
        cap=cap,
        shielding=shielding,
        tower=tower,
        device=device,
    )


def profile_to_dict(profile: EnvironmentProfile) -> dict[str, Any]:
    o = profile.outlier
    out: dict[str, Any] = {
        "name": profile.name,
        "true_distance_m": profile.true_distance_m,
        "bias": profile.bias.to_json(),
        "sigma": profile.sigma.to_json(),
        "p_fail": profile.p_fail.to_json(),
        "outlier": {
            "p_enlarge": o.p_enlarge,
            "enlarge_tail_m": o.enlarge_tail_m,
            "enlarge_shape": o.enlarge_shape,
            "p_reduce": o.p_reduce,
            "reduce_floor_m": o.reduce_floor_m,
            "reduce_max_m": o.reduce_max_m,
        },
        "shielding": {"g_min": profile.shielding.g_min, "phi_floor": profile.shielding.phi_floor},
        "tower_obstruction": {
            "enabled": profile.tower.enabled,
            "bias_add_m": profile.tower.bias_add_m,
            "sigma_add_m": profile.tower.sigma_add_m,
        },
    }
    if profile.cap is not None:
        out["max_distance_cap_m"] = profile.cap.cap_m
        out["cap_kind"] = profile.cap.kind
        out["cap_ramp_m"] = profile.cap.ramp_m
    return out


def distance_key(distance_m: float) -> str:
    return f"{distance_m:g}"


def library_from_dict(doc: Any) -> ProfileLibrary:
    doc = _object(doc, "")
    if doc.get("schema") != PROFILE_SCHEMA:
        raise ProfileError("/schema", f"expected {PROFILE_SCHEMA}, got {doc.get('schema')!r}")
    devices = {}
    for device, envs in _object(doc.get("profiles"), "/profiles").items():
        devset = DeviceProfileSet(device)
        for env, by_distance in _object(envs, f"/profiles/{device}").items():
            for dkey, node in _object(by_distance, f"/profiles/{device}/{env}").items():
                ptr = f"/profiles/{device}/{env}/{dkey}"
                try:
                    dist = float(dkey)
                except ValueError:
                    raise ProfileError(ptr, "distance key must be a number") from None
                profile = profile_from_dict(node, ptr, device)
                if not math.isclose(profile.true_distance_m, dist):
                    raise ProfileError(f"{ptr}/true_distance_m", f"does not match key {dkey}")
                devset.profiles[(env, dist)] = profile
        devices[device] = devset
    return ProfileLibrary(devices)


def library_to_dict(library: Mapping[str, DeviceProfileSet]) -> dict[str, Any]:
    profiles: dict[str, Any] = {}
    for device, devset in library.items():
        envs: dict[str, Any] = profiles.setdefault(device, {})
        for (env, dist), profile in devset.profiles.items():
            envs.setdefault(env, {})[distance_key(dist)] = profile_to_dict(profile)
    return {"schema": PROFILE_SCHEMA, "profiles": profiles}


def load_profiles(path: str | Path | None = None) -> ProfileLibrary:
    path = Path(path) if path is not None else default_profiles_path()
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError("", f"not valid JSON: {exc}") from None
    return library_from_dict(doc)
