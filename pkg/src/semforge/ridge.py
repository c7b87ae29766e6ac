"""Stage 1: ridge estimates of the reduced-form conditional expectations.

Every endogenous column is regressed on all (centered) exogenous columns.
One thin SVD of ``X`` serves every response and every penalty value, so a
GCV evaluation costs O(r) once ``U^T y`` is known.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._parallel import STAGE1_TAG, pmap, substream_seed
from .core import DegenerateGCVError, EquationFitError, OLSUndefinedError, StageOneResult

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class StageOneStrategy(str, enum.Enum):
    RIDGE_GCV = "ridge"
    ADAPTIVE_LASSO = "alasso"


@dataclass(frozen=True)
class DesignFactorization:
    """Thin SVD ``X = U diag(d) V^T`` truncated to the numerical rank."""

    d: np.ndarray
    U: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.d.shape[0]

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def q(self) -> int:
        return self.V.shape[0]

    def shrinkage(self, tau: float) -> np.ndarray:
        d2 = self.d * self.d
        return d2 / (d2 + tau)

    def trace(self, tau: float) -> float:
        return float(self.shrinkage(tau).sum())

    def projection(self, tau: float) -> np.ndarray:
        """Dense ``P_tau``; for tests and small problems only."""
        return (self.U * self.shrinkage(tau)) @ self.U.T


@dataclass(frozen=True)
class GcvSearchConfig:
    """Search settings for the GCV penalty.

    ``tau_min``/``tau_max`` left as None are derived from the spectrum as
    ``[1e-4 * d_r**2, 1e4 * d_1**2]``.
    """

    tau_min: float | None = None
    tau_max: float | None = None
    grid_points: int = 49
    refine_tolerance: float = 1e-3

    def __post_init__(self):
        if self.grid_points < 8:
            raise ValueError("grid_points must be >= 8")
        if self.tau_min is not None and self.tau_min <= 0:
            raise ValueError("tau_min must be positive")
        if self.tau_min is not None and self.tau_max is not None and self.tau_min >= self.tau_max:
            raise ValueError("tau_min must be < tau_max")
        if not self.refine_tolerance > 0:
            raise ValueError("refine_tolerance must be positive")

    def bounds(self, fact: DesignFactorization) -> tuple[float, float]:
        lo = self.tau_min if self.tau_min is not None else 1e-4 * float(fact.d[-1]) ** 2
        hi = self.tau_max if self.tau_max is not None else 1e4 * float(fact.d[0]) ** 2
        if lo >= hi:
            raise ValueError(f"empty tau search domain [{lo}, {hi}]")
        return lo, hi


def decompose_design(Xc) -> DesignFactorization:
    Xc = np.asarray(Xc, dtype=float)
    if not np.all(np.isfinite(Xc)):
        raise ValueError("design contains non-finite entries")
    U, d, Vt = np.linalg.svd(Xc, full_matrices=False)
    if d.size == 0 or d[0] == 0.0:
        raise ValueError("design matrix is zero")
    r = int(np.count_nonzero(d > 1e-12 * d[0]))
    return DesignFactorization(d[:r].copy(), np.ascontiguousarray(U[:, :r]), np.ascontiguousarray(Vt[:r].T))


class _GcvCurve:
    """GCV as a function of tau for one fixed response."""

    def __init__(self, fact: DesignFactorization, y):
        y = np.asarray(y, dtype=float)
        self.fact = fact
        self.d2 = fact.d * fact.d
        self.b = fact.U.T @ y
        resid = y - fact.U @ self.b
        self.perp2 = float(resid @ resid)
        self.n = y.shape[0]

    def __call__(self, tau: float) -> float:
        w = tau / (self.d2 + tau)
        num = self.perp2 + float(np.sum((w * self.b) ** 2))
        den = self.n - float(np.sum(self.d2 / (self.d2 + tau)))
        if den <= 1e-10:
            raise DegenerateGCVError(f"n - tr(P_tau) = {den:.3g} at tau = {tau:.3g}")
        return num / (den * den)


def gcv_value(fact: DesignFactorization, y, tau: float) -> float:
    """``||(I - P_tau) y||^2 / (n - tr P_tau)^2``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return _GcvCurve(fact, y)(tau)


def select_tau(fact: DesignFactorization, y, cfg: GcvSearchConfig | None = None) -> float:
    """GCV minimizer: log grid, then golden-section refinement around the best point.

    A flat curve returns the lower end of the search domain.
    """
    cfg = cfg or GcvSearchConfig()
    lo, hi = cfg.bounds(fact)
    curve = _GcvCurve(fact, y)
    grid = np.geomspace(lo, hi, cfg.grid_points)
    vals = np.array([curve(t) for t in grid])
    vmin = float(vals.min())
    if float(vals.max()) - vmin <= 1e-12 * vmin:
        return float(lo)
    i = int(np.argmin(vals))
    best_t, best_v = float(grid[i]), vmin

    a = math.log(grid[max(i - 1, 0)])
    b = math.log(grid[min(i + 1, grid.size - 1)])
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = curve(math.exp(c)), curve(math.exp(e))
    while math.expm1(b - a) > cfg.refine_tolerance:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = curve(math.exp(c))
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = curve(math.exp(e))
    for t, v in ((math.exp(c), fc), (math.exp(e), fe)):
        if v < best_v:
            best_t, best_v = t, v
    return best_t


def ridge_fit(fact: DesignFactorization, y, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Ridge coefficients and fitted values, ``(zhat, pihat)``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0 and fact.rank < fact.q:
        raise OLSUndefinedError(f"OLS undefined: design rank {fact.rank} < {fact.q} columns")
    y = np.asarray(y, dtype=float)
    b = fact.U.T @ y
    d2 = fact.d * fact.d
    pihat = fact.V @ (fact.d / (d2 + tau) * b)
    zhat = fact.U @ (d2 / (d2 + tau) * b)
    return zhat, pihat


def stage_one(
    Yc,
    Xc,
    cfg: GcvSearchConfig | None = None,
    strategy: StageOneStrategy | str = StageOneStrategy.RIDGE_GCV,
    *,
    fixed_tau: float | None = None,
    delta: float = 1.0,
    folds: int = 5,
    path_length: int = 50,
    seed: int = 0,
    cv_rule: str = "paired",
    threads: int | None = 1,
    fact: DesignFactorization | None = None,
) -> StageOneResult:
    """Fit every reduced-form equation of centered ``Yc`` on centered ``Xc``.

    ``fixed_tau`` bypasses GCV. The adaptive-lasso strategy is the two-stage
    adaptive lasso comparison variant.
    """
    strategy = StageOneStrategy(strategy)
    cfg = cfg or GcvSearchConfig()
    Yc = np.asarray(Yc, dtype=float)
    Xc = np.asarray(Xc, dtype=float)
    n, p = Yc.shape
    fact = fact if fact is not None else decompose_design(Xc)

    if strategy is StageOneStrategy.RIDGE_GCV:

        def one(j):
            try:
                tau = fixed_tau if fixed_tau is not None else select_tau(fact, Yc[:, j], cfg)
                zhat, pihat = ridge_fit(fact, Yc[:, j], tau)
            except Exception as exc:
                raise EquationFitError(j, exc) from exc
            return tau, zhat, pihat

    else:
        from .alasso import cv_select_lambda, fit_at_lambda, weights

        pilot_tau = 0.0 if (fact.rank == fact.q and fact.q < n) else 1.0
        G = Xc.T @ Xc

        def one(j):
            y = Yc[:, j]
            try:
                _, pilot = ridge_fit(fact, y, pilot_tau)
                omega = weights(pilot, delta)
                cv = cv_select_lambda(
                    y, Xc, omega, folds, path_length, substream_seed(seed, STAGE1_TAG, j), rule=cv_rule, delta=delta
                )
                pihat = fit_at_lambda(G, Xc.T @ y, omega, cv.lambda_star, cv.lambdas).coef
            except Exception as exc:
                raise EquationFitError(j, exc) from exc
            return cv.lambda_star, Xc @ pihat, pihat

    out = pmap(one, range(p), threads)
    taus = np.array([o[0] for o in out], dtype=float)
    Zhat = np.column_stack([o[1] for o in out]) if p else np.zeros((n, 0))
    Pi = np.column_stack([o[2] for o in out]) if p else np.zeros((Xc.shape[1], 0))
    warns = []
    if strategy is StageOneStrategy.RIDGE_GCV:
        for j in np.flatnonzero(taus > math.sqrt(n)):
            warns.append(f"tau_{j} = {taus[j]:.3g} exceeds sqrt(n) = {math.sqrt(n):.3g}")
    return StageOneResult(Zhat, taus, Pi, tuple(warns))
