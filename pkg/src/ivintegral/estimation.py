"""Empirical ingredients of the identifying integral equation.

From a :class:`~ivintegral.model.SampleSet` this module builds

* the kernel ``K(z, x) = F(x | baseline) - F(x | z)`` from empirical CDFs,
* the conditional means ``mu(z) = E(Y | Z = z)`` and the right-hand side
  ``mu(z) - mu(baseline)`` with propagated standard errors,

and, for rate checks on simulated scenarios, the Gaussian-smoothed mean
``mu_sigma(z) = E int phi_sigma(x - X(z)) Y(x) dx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import SampleSet, Scenario, draw_noise
from .rng import substream

__all__ = [
    "EstimationError",
    "EmpiricalCdf",
    "MuEstimate",
    "KernelMatrix",
    "RhsVector",
    "empirical_cdf",
    "estimate_mu",
    "build_kernel",
    "build_rhs",
    "smoothed_mu",
    "smoothing_pair",
    "GH_NODES",
]

GH_NODES = 41


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalCdf:
    """Right-continuous step function ``F(x) = #{X_i <= x} / n``."""

    sorted_values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.sorted_values)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.searchsorted(self.sorted_values, x, side="right") / self.n


def empirical_cdf(samples: Sequence[float]) -> EmpiricalCdf:
    values = np.sort(np.asarray(samples, dtype=float).ravel())
    if values.size == 0:
        raise EstimationError("empirical_cdf needs at least one sample")
    if not np.all(np.isfinite(values)):
        raise EstimationError("empirical_cdf got non-finite samples")
    values.flags.writeable = False
    return EmpiricalCdf(values)


@dataclass(frozen=True)
class MuEstimate:
    z: float
    mean: float
    stderr: float
    n: int


def _group(sample_set: SampleSet, z: float):
    try:
        return sample_set.groups[float(z)]
    except KeyError:
        raise EstimationError(
            f"level z={z} not in sample set; available levels: {list(sample_set.levels)}"
        ) from None


def estimate_mu(sample_set: SampleSet, z: float) -> MuEstimate:
    """Group mean of ``y`` at level ``z`` and its standard error."""
    _, y = _group(sample_set, z)
    n = len(y)
    se = float(y.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MuEstimate(float(z), float(y.mean()), se, n)


@dataclass(frozen=True)
class KernelMatrix:
    """``entries[i, j] = F(x_j | baseline) - F(x_j | z_levels[i])``.

    The baseline row is identically zero and is left out. ``stderr`` holds
    the plug-in standard error of each entry, assuming independent groups.
    """

    x_grid: np.ndarray
    z_levels: tuple[float, ...]
    baseline_z: float
    entries: np.ndarray
    stderr: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class RhsVector:
    """``values[i] = mu(z_i) - mu(baseline)``; ``noise_scale`` is its standard error."""

    z_levels: tuple[float, ...]
    values: np.ndarray
    noise_scale: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def build_kernel(sample_set: SampleSet, x_grid: Sequence[float]) -> KernelMatrix:
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim != 1 or x_grid.size < 2 or np.any(np.diff(x_grid) <= 0):
        raise EstimationError("x_grid must be a strictly increasing 1-d grid")
    base = sample_set.baseline_z
    if base not in sample_set.groups:
        raise EstimationError(f"baseline level z={base} missing from sample set")
    f0 = empirical_cdf(sample_set.x(base))
    p0 = f0(x_grid)
    levels = tuple(z for z in sample_set.levels if z != base)
    rows, errs = [], []
    for z in levels:
        fz = empirical_cdf(sample_set.x(z))
        pz = fz(x_grid)
        rows.append(p0 - pz)
        errs.append(np.sqrt(p0 * (1 - p0) / f0.n + pz * (1 - pz) / fz.n))
    shape = (len(levels), len(x_grid))
    return KernelMatrix(
        x_grid=_readonly(x_grid),
        z_levels=levels,
        baseline_z=base,
        entries=_readonly(np.array(rows).reshape(shape)),
        stderr=_readonly(np.array(errs).reshape(shape)),
    )


def build_rhs(sample_set: SampleSet) -> RhsVector:
    base = sample_set.baseline_z
    if base not in sample_set.groups:
        raise EstimationError(f"baseline level z={base} missing from sample set")
    m0 = estimate_mu(sample_set, base)
    levels = tuple(z for z in sample_set.levels if z != base)
    mus = [estimate_mu(sample_set, z) for z in levels]
    return RhsVector(
        z_levels=levels,
        values=_readonly([m.mean - m0.mean for m in mus]),
        noise_scale=_readonly([math.hypot(m.stderr, m0.stderr) for m in mus]),
    )


# ---------------------------------------------------------------------------
# Gaussian-smoothed conditional mean
# ---------------------------------------------------------------------------

_CHUNK = 1 << 16


def _gh_rule():
    nodes, weights = np.polynomial.hermite_e.hermegauss(GH_NODES)
    return nodes, weights / weights.sum()


def smoothing_pair(
    scenario: Scenario, z: float, sigma: float, n: int, seed: int
) -> tuple[float, float, float]:
    """Smoothed and unsmoothed outcome means from the same ``n`` draws.

    Returns ``(mu_sigma, mu, stderr_of_difference)``. Sharing the draws makes
    ``mu_sigma - mu`` an estimate of the smoothing bias alone.
    """
    if not sigma > 0:
        raise EstimationError(f"sigma must be positive, got {sigma}")
    if n < 2:
        raise EstimationError("smoothing needs n >= 2")
    nodes, weights = _gh_rule()
    u1, u2, v = draw_noise(scenario, n, substream(seed, "smoothing", repr(float(z))))
    xz = scenario.g(z, v)
    smooth = np.empty(n)
    for lo in range(0, n, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        pts = xz[sl, None] + sigma * nodes[None, :]
        smooth[sl] = scenario.f(pts, u1[sl, None], u2[sl, None]) @ weights
    plain = scenario.f(xz, u1, u2)
    diff = smooth - plain
    return float(smooth.mean()), float(plain.mean()), float(diff.std(ddof=1) / math.sqrt(n))


def smoothed_mu(scenario: Scenario, z: float, sigma: float, n: int, seed: int) -> float:
    """Monte-Carlo ``E int phi_sigma(x - X(z)) f(x, U) dx``.

    The inner integral is done per draw with a 41-node Gauss-Hermite rule in
    ``(x - X(z)) / sigma``.
    """
    return smoothing_pair(scenario, z, sigma, n, seed)[0]
