"""Structural scenarios ``Y = U1*h(X) + U2``, ``X = g(Z, V)`` and simulation.

A :class:`Scenario` fixes the outcome curve ``h``, the noise laws, the
instrument map ``g`` and a finite list of instrument levels. From it we draw
grouped samples (:func:`draw_sample_set`), evaluate the true average
derivative ``theta(x) = E(U1) h'(x)`` (:func:`true_theta`) and a brute-force
Monte-Carlo version of it that never touches the integral equation
(:func:`oracle_theta_mc`).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit, ndtr

from .rng import substream

__all__ = [
    "ModelError",
    "Distribution",
    "SmoothFunctionSpec",
    "GFamily",
    "Scenario",
    "SampleSet",
    "PotentialOutcomeDraw",
    "Condition5Result",
    "draw_noise",
    "draw_sample_set",
    "true_theta",
    "oracle_theta_mc",
    "check_condition5",
    "scenario_s1",
    "scenario_quadratic",
    "null_scenario",
]


class ModelError(ValueError):
    """A scenario or sample set violates one of its invariants."""


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

_DIST_PARAMS = {
    "normal": ("mean", "sd"),
    "point-mass": ("value",),
    "uniform": ("low", "high"),
}


@dataclass(frozen=True)
class Distribution:
    """A univariate law, sampled by quantile transform of a standard normal.

    Going through a standard normal lets two variables share a Gaussian
    copula (see ``Scenario.u1_v_coupling``) without changing their marginals.
    """

    name: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.name not in _DIST_PARAMS:
            raise ModelError(f"unknown distribution {self.name!r}")
        want = len(_DIST_PARAMS[self.name])
        if len(self.params) != want:
            raise ModelError(f"{self.name} takes {want} parameter(s), got {len(self.params)}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.name == "normal" and self.params[1] < 0:
            raise ModelError("normal sd must be >= 0")
        if self.name == "uniform" and not self.params[0] < self.params[1]:
            raise ModelError("uniform requires low < high")

    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0) -> "Distribution":
        return cls("normal", (mean, sd))

    @classmethod
    def point_mass(cls, value: float) -> "Distribution":
        return cls("point-mass", (value,))

    @classmethod
    def uniform(cls, low: float, high: float) -> "Distribution":
        return cls("uniform", (low, high))

    @property
    def mean(self) -> float:
        if self.name == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return self.params[0]

    @property
    def is_atomic(self) -> bool:
        return self.name == "point-mass" or (self.name == "normal" and self.params[1] == 0)

    def from_standard_normal(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        if self.name == "normal":
            return self.params[0] + self.params[1] * e
        if self.name == "point-mass":
            return np.full_like(e, self.params[0])
        low, high = self.params
        return low + (high - low) * ndtr(e)

    def to_dict(self) -> dict:
        return {"name": self.name, **dict(zip(_DIST_PARAMS[self.name], self.params))}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Distribution":
        name = d["name"]
        if name not in _DIST_PARAMS:
            raise ModelError(f"unknown distribution {name!r}")
        try:
            return cls(name, tuple(d[k] for k in _DIST_PARAMS[name]))
        except KeyError as exc:
            raise ModelError(f"{name} distribution is missing parameter {exc}") from None


# ---------------------------------------------------------------------------
# the outcome curve h
# ---------------------------------------------------------------------------

_H_KINDS = ("tanh", "logistic", "gaussian-bump", "tabulated-spline")


@dataclass(frozen=True)
class SmoothFunctionSpec:
    """Bounded smooth curve ``h`` with analytic first and second derivatives.

    ``scale`` stretches the curve horizontally and ``amplitude`` bounds it:
    ``sup |h| <= amplitude``. For ``tabulated-spline`` the curve is a clamped
    cubic spline through ``(knots*scale, values*amplitude)``, held constant
    outside the knot range; ``values`` must lie in ``[-1, 1]``.
    """

    kind: str = "tanh"
    scale: float = 1.0
    amplitude: float = 1.0
    knots: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in _H_KINDS:
            raise ModelError(f"unknown h kind {self.kind!r}; choose from {_H_KINDS}")
        if not self.scale > 0:
            raise ModelError("h scale must be positive")
        if self.amplitude < 0:
            raise ModelError("h amplitude must be non-negative")
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind == "tabulated-spline":
            k = np.asarray(self.knots)
            v = np.asarray(self.values)
            if len(k) < 3 or len(k) != len(v):
                raise ModelError("tabulated-spline needs >= 3 knots and matching values")
            if np.any(np.diff(k) <= 0):
                raise ModelError("tabulated-spline knots must be strictly increasing")
            spline = CubicSpline(k, v, bc_type="clamped")
            probe = np.linspace(k[0], k[-1], 4001)
            if np.max(np.abs(spline(probe))) > 1.0 + 1e-12:
                raise ModelError("tabulated-spline overshoots |h| <= amplitude; smooth the table")
            object.__setattr__(self, "_spline", spline)

    def _eval(self, x, nu: int) -> np.ndarray:
        u = np.asarray(x, dtype=float) / self.scale
        a, s = self.amplitude, self.scale
        if self.kind == "tanh":
            t = np.tanh(u)
            sech2 = 1.0 - t * t
            out = (t, sech2 / s, -2.0 * t * sech2 / s**2)[nu]
        elif self.kind == "logistic":
            p = expit(u)
            q = p * (1.0 - p)
            out = (p, q / s, q * (1.0 - 2.0 * p) / s**2)[nu]
        elif self.kind == "gaussian-bump":
            g = np.exp(-0.5 * u * u)
            out = (g, -u * g / s, (u * u - 1.0) * g / s**2)[nu]
        else:
            k0, k1 = self.knots[0], self.knots[-1]
            inside = (u >= k0) & (u <= k1)
            uc = np.clip(u, k0, k1)
            out = self._spline(uc, nu) / s**nu
            if nu > 0:
                out = np.where(inside, out, 0.0)
        return a * out

    def __call__(self, x):
        return self._eval(x, 0)

    def d1(self, x):
        return self._eval(x, 1)

    def d2(self, x):
        return self._eval(x, 2)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "scale": self.scale, "amplitude": self.amplitude}
        if self.kind == "tabulated-spline":
            d["knots"] = list(self.knots)
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SmoothFunctionSpec":
        return cls(
            kind=d.get("kind", "tanh"),
            scale=d.get("scale", 1.0),
            amplitude=d.get("amplitude", 1.0),
            knots=tuple(d.get("knots", ())),
            values=tuple(d.get("values", ())),
        )


# ---------------------------------------------------------------------------
# the instrument map g
# ---------------------------------------------------------------------------

_G_KINDS = {"shifted-invertible": 1, "quadratic-random-coef": 2, "z-free": 1}


@dataclass(frozen=True)
class GFamily:
    """Instrument map ``x = g(z, v)``.

    ``shifted-invertible``: ``s(z + v)`` with ``s(t) = t + c*sin(t)``.
    ``quadratic-random-coef``: ``1 + v1*z + v2*z**2``.
    ``z-free``: ``s(v)``; ignores the instrument (a failing control for the
    completeness diagnostic).
    """

    kind: str = "shifted-invertible"
    c: float = 0.5

    def __post_init__(self):
        if self.kind not in _G_KINDS:
            raise ModelError(f"unknown g family {self.kind!r}; choose from {tuple(_G_KINDS)}")
        if self.kind != "quadratic-random-coef" and not abs(self.c) < 1:
            raise ModelError(
                f"g family {self.kind} requires |c| < 1 so that s'(t) = 1 + c*cos(t) > 0; got c={self.c}"
            )

    @property
    def n_v(self) -> int:
        return _G_KINDS[self.kind]

    def s(self, t):
        return t + self.c * np.sin(t)

    def __call__(self, z: float, v: np.ndarray) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if v.shape[1] != self.n_v:
            v = v.T
        if self.kind == "shifted-invertible":
            return self.s(z + v[:, 0])
        if self.kind == "z-free":
            return self.s(v[:, 0])
        return 1.0 + v[:, 0] * z + v[:, 1] * z * z

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GFamily":
        return cls(kind=d.get("kind", "shifted-invertible"), c=d.get("c", 0.5))


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialOutcomeDraw:
    """One subject's noise ``u = (u1, u2)`` with its outcome curve and slope."""

    u: tuple[float, float]
    y_of: Callable[[np.ndarray], np.ndarray]
    y1_of: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Scenario:
    """Fully specified structural model with ground-truth accessors.

    Outcome ``Y = U1*h(X) + U2``, treatment ``X = g(Z, V)``, with ``Z``
    ranging over ``z_levels``. ``u1_v_coupling`` is the correlation of a
    Gaussian copula between ``U1`` and the first component of ``V``; zero
    means independence.
    """

    h: SmoothFunctionSpec = field(default_factory=SmoothFunctionSpec)
    u1_dist: Distribution = field(default_factory=lambda: Distribution.normal(1.0, 0.5))
    u2_dist: Distribution = field(default_factory=lambda: Distribution.normal(0.0, 1.0))
    g_family: GFamily = field(default_factory=GFamily)
    v_dists: tuple[Distribution, ...] = (Distribution.normal(0.0, 1.0),)
    z_levels: tuple[float, ...] = tuple(np.round(np.linspace(-2, 2, 9), 12))
    baseline_z: float = 0.0
    u1_v_coupling: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "z_levels", tuple(float(z) for z in self.z_levels))
        object.__setattr__(self, "v_dists", tuple(self.v_dists))
        object.__setattr__(self, "baseline_z", float(self.baseline_z))
        self.validate()

    def validate(self) -> None:
        hits = sum(1 for z in self.z_levels if z == self.baseline_z)
        if hits != 1:
            raise ModelError(
                f"z_levels must contain baseline_z={self.baseline_z} exactly once (found {hits})"
            )
        if len(set(self.z_levels)) != len(self.z_levels):
            raise ModelError("z_levels must be distinct")
        if len(self.v_dists) != self.g_family.n_v:
            raise ModelError(
                f"g family {self.g_family.kind} needs {self.g_family.n_v} V component(s), "
                f"got {len(self.v_dists)}"
            )
        if not -1.0 <= self.u1_v_coupling <= 1.0:
            raise ModelError("u1_v_coupling must lie in [-1, 1]")

    # structural maps ------------------------------------------------------

    def f(self, x, u1, u2):
        return u1 * self.h(x) + u2

    def f_x(self, x, u1):
        return u1 * self.h.d1(x)

    def g(self, z: float, v: np.ndarray) -> np.ndarray:
        return self.g_family(z, v)

    def potential_outcome(self, u1: float, u2: float) -> PotentialOutcomeDraw:
        return PotentialOutcomeDraw(
            u=(float(u1), float(u2)),
            y_of=lambda x: self.f(x, u1, u2),
            y1_of=lambda x: self.f_x(x, u1),
        )

    @property
    def non_baseline_levels(self) -> tuple[float, ...]:
        return tuple(z for z in self.z_levels if z != self.baseline_z)

    # serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "h": self.h.to_dict(),
            "u1_dist": self.u1_dist.to_dict(),
            "u2_dist": self.u2_dist.to_dict(),
            "g_family": self.g_family.to_dict(),
            "v_dists": [d.to_dict() for d in self.v_dists],
            "z_levels": list(self.z_levels),
            "baseline_z": self.baseline_z,
            "u1_v_coupling": self.u1_v_coupling,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        try:
            return cls(
                h=SmoothFunctionSpec.from_dict(d.get("h", {})),
                u1_dist=Distribution.from_dict(d["u1_dist"]),
                u2_dist=Distribution.from_dict(d["u2_dist"]),
                g_family=GFamily.from_dict(d.get("g_family", {})),
                v_dists=tuple(Distribution.from_dict(v) for v in d["v_dists"]),
                z_levels=tuple(d["z_levels"]),
                baseline_z=d.get("baseline_z", 0.0),
                u1_v_coupling=d.get("u1_v_coupling", 0.0),
                name=d.get("name", ""),
            )
        except KeyError as exc:
            raise ModelError(f"scenario is missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    @property
    def scenario_id(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:12]
        return f"{self.name}-{digest}" if self.name else digest


def scenario_s1(**overrides) -> Scenario:
    """Reference scenario: tanh curve, ``s(z+v)`` with ``c=0.5``, nine levels."""
    kw = dict(name="S1")
    kw.update(overrides)
    return Scenario(**kw)


def scenario_quadratic(**overrides) -> Scenario:
    """Random-coefficient instrument ``1 + v1*z + v2*z**2`` (baseline is atomic at 1)."""
    kw = dict(
        name="S-quadratic",
        g_family=GFamily("quadratic-random-coef"),
        v_dists=(Distribution.normal(1.0, 0.5), Distribution.normal(0.0, 0.5)),
    )
    kw.update(overrides)
    return Scenario(**kw)


def null_scenario(**overrides) -> Scenario:
    """S1 geometry with ``U1 = 0``: no causal effect anywhere."""
    kw = dict(name="S-null", u1_dist=Distribution.point_mass(0.0))
    kw.update(overrides)
    return Scenario(**kw)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def draw_noise(scenario: Scenario, n: int, rng: np.random.Generator):
    """Draw ``n`` joint ``(U1, U2, V)`` with the scenario's copula coupling.

    Returns ``u1, u2`` of shape ``(n,)`` and ``v`` of shape ``(n, n_v)``.
    """
    r = scenario.g_family.n_v
    e = rng.standard_normal((n, 2 + r))
    rho = scenario.u1_v_coupling
    u1 = scenario.u1_dist.from_standard_normal(e[:, 0])
    u2 = scenario.u2_dist.from_standard_normal(e[:, 1])
    v = np.empty((n, r))
    ev0 = e[:, 2] if rho == 0 else rho * e[:, 0] + math.sqrt(1.0 - rho * rho) * e[:, 2]
    v[:, 0] = scenario.v_dists[0].from_standard_normal(ev0)
    for k in range(1, r):
        v[:, k] = scenario.v_dists[k].from_standard_normal(e[:, 2 + k])
    return u1, u2, v


@dataclass(frozen=True)
class SampleSet:
    """Observed ``(x, y)`` records grouped by instrument level.

    ``groups`` maps each z-level to a pair of read-only arrays ``(x, y)``.
    ``n_per_level`` is ``None`` for unbalanced user data.
    """

    scenario_id: str
    seed: int | None
    groups: Mapping[float, tuple[np.ndarray, np.ndarray]]
    n_per_level: int | None
    baseline_z: float = 0.0

    def __post_init__(self):
        clean = {}
        for z, (x, y) in sorted(self.groups.items()):
            x = np.array(x, dtype=float)
            y = np.array(y, dtype=float)
            if x.shape != y.shape or x.ndim != 1:
                raise ModelError(f"level z={z}: x and y must be 1-d arrays of equal length")
            if len(x) == 0:
                raise ModelError(f"level z={z} is empty")
            if self.n_per_level is not None and len(x) != self.n_per_level:
                raise ModelError(
                    f"level z={z} has {len(x)} records, expected n_per_level={self.n_per_level}"
                )
            x.flags.writeable = False
            y.flags.writeable = False
            clean[float(z)] = (x, y)
        object.__setattr__(self, "groups", clean)

    @property
    def levels(self) -> tuple[float, ...]:
        return tuple(self.groups)

    def x(self, z: float) -> np.ndarray:
        return self.groups[z][0]

    def y(self, z: float) -> np.ndarray:
        return self.groups[z][1]

    def pooled_x(self) -> np.ndarray:
        return np.concatenate([x for x, _ in self.groups.values()])

    def check_levels(self, scenario: Scenario) -> None:
        extra = set(self.levels) - set(scenario.z_levels)
        if extra:
            raise ModelError(f"sample levels {sorted(extra)} are not in the scenario's z_levels")


def draw_sample_set(scenario: Scenario, n_per_level: int, seed: int) -> SampleSet:
    """Simulate ``n_per_level`` records at every instrument level.

    Level ``k`` (position in ``z_levels``) uses its own substream
    ``(seed, "samples", k)``, so levels are independent and can be generated
    in any order. The instrument never enters the noise draw, which makes
    ``Z`` independent of ``(U, V)`` by construction.
    """
    if n_per_level < 1:
        raise ModelError("n_per_level must be >= 1")
    scenario.validate()
    groups = {}
    for k, z in enumerate(scenario.z_levels):
        u1, u2, v = draw_noise(scenario, n_per_level, substream(seed, "samples", k))
        x = scenario.g(z, v)
        groups[z] = (x, scenario.f(x, u1, u2))
    return SampleSet(
        scenario_id=scenario.scenario_id,
        seed=int(seed),
        groups=groups,
        n_per_level=int(n_per_level),
        baseline_z=scenario.baseline_z,
    )


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def true_theta(scenario: Scenario, x):
    """Analytic average derivative ``E(U1) * h'(x)``."""
    return scenario.u1_dist.mean * scenario.h.d1(x)


def oracle_theta_mc(
    scenario: Scenario, x: float, n: int, seed: int, fd_step: float = 1e-4
) -> tuple[float, float]:
    """Brute-force ``E dY(x)/dx`` by central differences over ``n`` noise draws.

    Returns ``(estimate, stderr)``.
    """
    if n < 1:
        raise ModelError("oracle_theta_mc needs n >= 1")
    if not fd_step > 0:
        raise ModelError("fd_step must be positive")
    u1, u2, _ = draw_noise(scenario, n, substream(seed, "oracle-theta"))
    slopes = (scenario.f(x + fd_step, u1, u2) - scenario.f(x - fd_step, u1, u2)) / (2 * fd_step)
    if n == 1:
        return float(slopes[0]), 0.0
    return float(slopes.mean()), float(slopes.std(ddof=1) / math.sqrt(n))


@dataclass(frozen=True)
class Condition5Result:
    correlation: float
    stderr: float
    degenerate: str | None = None

    @property
    def passes(self) -> bool:
        return abs(self.correlation) <= 3.0 * self.stderr or self.degenerate is not None


def check_condition5(
    scenario: Scenario, x: float, z: float, n: int, seed: int
) -> Condition5Result:
    """Correlation between ``I(g(z, V) <= x)`` and ``dY/dx(x)`` over ``n`` draws.

    A constant indicator or constant slope has no defined correlation; it is
    reported as zero with ``degenerate`` set to ``"degenerate-indicator"`` or
    ``"degenerate-constant"``.
    """
    if z not in scenario.z_levels:
        raise ModelError(f"z={z} is not one of the scenario's levels {scenario.z_levels}")
    if n < 3:
        raise ModelError("check_condition5 needs n >= 3")
    u1, _, v = draw_noise(scenario, n, substream(seed, "condition5"))
    ind = (scenario.g(z, v) <= x).astype(float)
    slope = np.broadcast_to(scenario.f_x(x, u1), ind.shape)
    if np.all(slope == slope[0]):
        return Condition5Result(0.0, 0.0, "degenerate-constant")
    if np.all(ind == ind[0]):
        return Condition5Result(0.0, 0.0, "degenerate-indicator")
    r = float(np.corrcoef(ind, slope)[0, 1])
    return Condition5Result(r, math.sqrt(max(1.0 - r * r, 0.0) / (n - 2)))


def mc_mean_outcome(scenario: Scenario, z: float, n: int, seed: int) -> tuple[float, float]:
    """Direct Monte-Carlo ``E f(g(z, V), U)`` with standard error."""
    u1, u2, v = draw_noise(scenario, n, substream(seed, "mc-mean", repr(float(z))))
    y = scenario.f(scenario.g(z, v), u1, u2)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(n))


def mc_cdf(scenario: Scenario, z: float, x_grid: Sequence[float], n: int, seed: int) -> np.ndarray:
    """Direct Monte-Carlo ``P(g(z, V) <= x)`` on ``x_grid``."""
    _, _, v = draw_noise(scenario, n, substream(seed, "mc-cdf", repr(float(z))))
    xs = np.sort(scenario.g(z, v))
    return np.searchsorted(xs, np.asarray(x_grid, dtype=float), side="right") / n
