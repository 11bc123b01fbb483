"""Quadrature discretization and regularized inversion of the kernel equation.

``int K(z, x) theta(x) dx = r(z)`` becomes ``A @ theta = b`` with
``A[i, j] = K(z_i, x_j) * w_j`` (trapezoid weights). Because only a handful of
instrument levels are observed and ``K`` is smooth in ``x``, the system is
badly underdetermined and ill-conditioned; :func:`solve_tikhonov` stabilises
it with an identity or second-difference penalty, and :func:`select_lambda`
picks the penalty weight.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .estimation import KernelMatrix, RhsVector
from .model import SampleSet

__all__ = [
    "SolverError",
    "DegenerateInstrumentError",
    "RegularizationWarning",
    "QuadratureGrid",
    "RegularizedSolution",
    "TikhonovProblem",
    "PENALTIES",
    "LADDER_SIZE",
    "trapezoid_weights",
    "make_grid",
    "assemble_system",
    "penalty_matrix",
    "solve_tikhonov",
    "lambda_ladder",
    "select_lambda",
    "forward_apply",
    "antiderivative",
    "evaluate_on_grid",
    "propagated_noise",
]

PENALTIES = ("identity", "second-difference")
LADDER_SIZE = 64
_TSVD_RTOL = 1e-12


class SolverError(ValueError):
    pass


class DegenerateInstrumentError(SolverError):
    """The design matrix carries no information about theta."""


class RegularizationWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


def trapezoid_weights(x: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


@dataclass(frozen=True)
class QuadratureGrid:
    x_grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.array(self.x_grid, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise SolverError("x_grid must be strictly increasing with at least 2 points")
        w = np.array(self.weights, dtype=float)
        if w.shape != x.shape or np.any(w <= 0):
            raise SolverError("weights must be positive and aligned with x_grid")
        x.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "x_grid", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_points(cls, x: Sequence[float]) -> "QuadratureGrid":
        x = np.asarray(x, dtype=float)
        return cls(x, trapezoid_weights(x))

    def __len__(self) -> int:
        return len(self.x_grid)

    @property
    def span(self) -> float:
        return float(self.x_grid[-1] - self.x_grid[0])


def make_grid(sample_set: SampleSet, j_points: int = 201, pad_fraction: float = 0.1) -> QuadratureGrid:
    """Uniform grid over the pooled 0.1%..99.9% quantile range, padded on both sides.

    Quantiles use the inverted-CDF rule, so with fewer than 1000 pooled
    samples the range is exactly ``[min, max]``.
    """
    if j_points < 11:
        raise SolverError("j_points must be >= 11")
    if pad_fraction < 0:
        raise SolverError("pad_fraction must be non-negative")
    pooled = sample_set.pooled_x()
    if np.unique(pooled).size < 2:
        raise SolverError("need at least 2 distinct x values to build a grid")
    lo, hi = np.quantile(pooled, [0.001, 0.999], method="inverted_cdf")
    if not hi > lo:
        lo, hi = pooled.min(), pooled.max()
    pad = pad_fraction * (hi - lo)
    return QuadratureGrid.from_points(np.linspace(lo - pad, hi + pad, j_points))


def assemble_system(kernel: KernelMatrix, grid: QuadratureGrid) -> np.ndarray:
    if kernel.x_grid.shape != grid.x_grid.shape or not np.array_equal(kernel.x_grid, grid.x_grid):
        raise SolverError("kernel x_grid does not match the quadrature grid")
    return kernel.entries * grid.weights[None, :]


def forward_apply(A: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Predicted right-hand side ``A @ theta`` (no inversion involved)."""
    A = np.asarray(A, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or A.shape[1] != theta.shape[0]:
        raise SolverError(f"theta has length {theta.shape}, design matrix has {A.shape[1]} columns")
    return A @ theta


# ---------------------------------------------------------------------------
# Tikhonov
# ---------------------------------------------------------------------------


def penalty_matrix(kind: str, j: int) -> np.ndarray:
    if kind == "identity":
        return np.eye(j)
    if kind == "second-difference":
        if j < 3:
            raise SolverError("second-difference penalty needs at least 3 grid points")
        L = np.zeros((j - 2, j))
        idx = np.arange(j - 2)
        L[idx, idx] = 1.0
        L[idx, idx + 1] = -2.0
        L[idx, idx + 2] = 1.0
        return L
    raise SolverError(f"unknown penalty {kind!r}; choose from {PENALTIES}")


@dataclass(frozen=True)
class RegularizedSolution:
    theta: np.ndarray
    lam: float
    penalty_kind: str
    residual_norm: float
    solution_seminorm: float
    singular_values: np.ndarray
    truncation_rank: int | None = None


class TikhonovProblem:
    """Standard-form SVD of ``min |A t - b|^2 + lam^2 |L t|^2``, reusable across ``lam`` and ``b``.

    For a rank-deficient ``L`` (second differences, null space = affine
    functions) the problem is brought to standard form with the
    ``A``-weighted pseudoinverse of ``L``: ``t = L_A^+ y + t0``, where ``t0``
    is the least-squares fit within the null space of ``L`` and ``y`` solves
    an ordinary ridge problem with ``A L_A^+``.
    """

    def __init__(self, A: np.ndarray, penalty: str = "second-difference"):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise SolverError("design matrix must be 2-d")
        self.A = A
        self.penalty = penalty
        m, j = A.shape
        self.L = penalty_matrix(penalty, j)
        if penalty == "identity":
            self._null_fit = np.zeros((j, m))
            self._LA = None
            Abar = A
        else:
            grid = np.linspace(-1.0, 1.0, j)
            W, _ = np.linalg.qr(np.column_stack([np.ones(j), grid]))
            AW_pinv = np.linalg.pinv(A @ W)
            L_pinv = np.linalg.pinv(self.L)
            self._null_fit = W @ AW_pinv
            self._LA = L_pinv - self._null_fit @ (A @ L_pinv)
            Abar = A @ self._LA
        self.U, self.s, Vt = np.linalg.svd(Abar, full_matrices=False)
        self.V = Vt.T

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    @cached_property
    def sigma_max(self) -> float:
        return float(self.s[0]) if self.s.size else 0.0

    def _coefficients(self, beta: np.ndarray, lam: float):
        s = self.s
        if lam == 0:
            keep = s > _TSVD_RTOL * self.sigma_max if self.sigma_max > 0 else np.zeros_like(s, bool)
            coef = np.zeros_like(beta)
            coef[keep] = beta[keep] / s[keep]
            return coef, int(keep.sum())
        return s * beta / (s * s + lam * lam), None

    def theta(self, b: np.ndarray, lam: float) -> tuple[np.ndarray, int | None]:
        t0 = self._null_fit @ b
        beta = self.U.T @ (b - self.A @ t0)
        coef, rank = self._coefficients(beta, lam)
        y = self.V @ coef
        return (y if self._LA is None else self._LA @ y) + t0, rank

    def solve(self, b: np.ndarray, lam: float) -> RegularizedSolution:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.A.shape[0],):
            raise SolverError(f"rhs has shape {b.shape}, expected ({self.A.shape[0]},)")
        if lam < 0 or not np.isfinite(lam):
            raise SolverError("lambda must be a finite non-negative number")
        if not np.any(self.A) and np.any(b):
            raise DegenerateInstrumentError(
                "degenerate instrument: the kernel is identically zero but the rhs is not, "
                "so the data carry no information about theta"
            )
        theta, rank = self.theta(b, lam)
        theta.flags.writeable = False
        return RegularizedSolution(
            theta=theta,
            lam=float(lam),
            penalty_kind=self.penalty,
            residual_norm=float(np.linalg.norm(self.A @ theta - b)),
            solution_seminorm=float(np.linalg.norm(self.L @ theta)),
            singular_values=self.s.copy(),
            truncation_rank=rank,
        )

    def solution_operator(self, lam: float) -> np.ndarray:
        """Matrix ``R`` with ``theta = R @ b`` at this ``lam``."""
        m = self.A.shape[0]
        return np.column_stack([self.theta(e, lam)[0] for e in np.eye(m)])


def solve_tikhonov(
    A: np.ndarray, b, lam: float, penalty: str = "second-difference"
) -> RegularizedSolution:
    """Minimize ``|A theta - b|^2 + lam^2 |L theta|^2``.

    ``lam = 0`` gives the minimum-seminorm least-squares solution by truncated
    SVD (relative tolerance 1e-12). Raises :class:`DegenerateInstrumentError`
    when ``A`` is all zero but ``b`` is not.
    """
    if isinstance(b, RhsVector):
        b = b.values
    return TikhonovProblem(A, penalty).solve(np.asarray(b, dtype=float), lam)


def lambda_ladder(sigma_max: float, size: int = LADDER_SIZE) -> np.ndarray:
    """Ascending log-spaced ladder from ``1e-8 * sigma_max`` to ``sigma_max``."""
    return sigma_max * np.logspace(-8.0, 0.0, size)


def _lcurve_pick(lams, residuals, seminorms) -> float:
    tiny = np.finfo(float).tiny
    rho = np.log(np.maximum(residuals, tiny))
    eta = np.log(np.maximum(seminorms, tiny))
    t = np.log(lams)
    d_rho, d_eta = np.gradient(rho, t), np.gradient(eta, t)
    dd_rho, dd_eta = np.gradient(d_rho, t), np.gradient(d_eta, t)
    denom = (d_rho**2 + d_eta**2) ** 1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(denom > 0, (d_rho * dd_eta - d_eta * dd_rho) / denom, -np.inf)
    kappa = np.nan_to_num(kappa, nan=-np.inf)
    return float(lams[int(np.argmax(kappa))])


def select_lambda(
    A: np.ndarray,
    b: RhsVector,
    method: str = "discrepancy",
    penalty: str = "second-difference",
    problem: TikhonovProblem | None = None,
) -> float:
    """Choose the regularization weight on a 64-step log ladder.

    ``discrepancy``: smallest ``lam`` whose residual reaches
    ``|noise_scale|_2``. If no ladder value reaches it the largest is
    returned. With an all-zero ``noise_scale`` a consistent system takes the
    ladder minimum; an inconsistent one falls back to ``l-curve`` with a
    :class:`RegularizationWarning`.

    ``l-curve``: ``lam`` of maximum curvature of ``(log residual, log
    seminorm)``; ties go to the smaller ``lam``.
    """
    if method not in ("discrepancy", "l-curve"):
        raise SolverError(f"unknown lambda selection method {method!r}")
    problem = problem or TikhonovProblem(A, penalty)
    values = np.asarray(b.values, dtype=float)
    if problem.sigma_max == 0:
        return 0.0
    lams = lambda_ladder(problem.sigma_max)
    sols = [problem.solve(values, lam) for lam in lams]
    residuals = np.array([s.residual_norm for s in sols])
    if method == "discrepancy":
        target = float(np.linalg.norm(b.noise_scale))
        scale = max(float(np.linalg.norm(values)), np.finfo(float).tiny)
        if target == 0:
            if residuals[0] <= 1e-10 * scale:
                return float(lams[0])
            warnings.warn(
                "noise_scale is all zero; falling back to the l-curve rule",
                RegularizationWarning,
                stacklevel=2,
            )
        else:
            hit = np.nonzero(residuals >= target)[0]
            if hit.size == 0:
                warnings.warn(
                    "no ladder value reaches the noise level; using the largest lambda",
                    RegularizationWarning,
                    stacklevel=2,
                )
                return float(lams[-1])
            return float(lams[hit[0]])
    seminorms = np.array([s.solution_seminorm for s in sols])
    return _lcurve_pick(lams, residuals, seminorms)


def propagated_noise(problem: TikhonovProblem, lam: float, noise_scale) -> np.ndarray:
    """Pointwise standard deviation of ``theta`` induced by independent rhs noise."""
    R = problem.solution_operator(lam)
    return np.sqrt((R**2) @ (np.asarray(noise_scale, dtype=float) ** 2))


# ---------------------------------------------------------------------------
# antiderivative
# ---------------------------------------------------------------------------


def antiderivative(theta: np.ndarray, grid: QuadratureGrid, a: float = 0.0) -> np.ndarray:
    """``a - int_{x_j}^{x_max} theta`` on the grid by the trapezoid rule.

    The tail beyond ``x_max`` is taken as zero, which is accurate when theta
    has decayed there.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != grid.x_grid.shape:
        raise SolverError("theta must be aligned with the grid")
    pieces = 0.5 * (theta[1:] + theta[:-1]) * np.diff(grid.x_grid)
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    return a - tail


def evaluate_on_grid(values: np.ndarray, grid: QuadratureGrid, x) -> np.ndarray:
    """Piecewise-linear interpolation, held constant beyond the grid ends."""
    return np.interp(np.asarray(x, dtype=float), grid.x_grid, values)
