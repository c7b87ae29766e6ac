"""Stage 2: adaptive-lasso selection of regulatory effects, one equation at a time.

For equation ``k`` the instruments ``X_{S_k}`` are projected out, leaving a
weighted L1 problem in the regulatory effects alone::

    min_g  0.5 * ||H y - H Z g||^2 + lam * sum_j omega_j |g_j|

which is solved by coordinate descent on its Gram form
``(G, c) = (Z'HZ, Z'Hy)``. The exogenous effects are then recovered by least
squares on the unprojected residual.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import CollinearInstrumentsError, EquationFitError


@dataclass(frozen=True)
class ProjectionHandle:
    """Applies ``H = I - Q Q^T`` where ``Q`` spans the retained instrument columns."""

    Q: np.ndarray
    R: np.ndarray
    kept: tuple[int, ...]
    dropped: tuple[int, ...] = ()

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        return v - self.Q @ (self.Q.T @ v)

    def coef(self, v):
        """Least-squares coefficients of ``v`` on the retained columns."""
        return np.linalg.solve(self.R, self.Q.T @ np.asarray(v, dtype=float))


def annihilator(Xs) -> ProjectionHandle:
    """Projection onto the orthogonal complement of ``span(Xs)``.

    Raises :class:`CollinearInstrumentsError` listing the columns that are
    linearly dependent on earlier ones.
    """
    Xs = np.asarray(Xs, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs[:, None]
    Q, R = np.linalg.qr(Xs)
    scale = float(np.max(np.linalg.norm(Xs, axis=0), initial=0.0))
    rdiag = np.abs(np.diag(R))
    dep = np.flatnonzero(rdiag <= 1e-10 * max(scale, 1e-300))
    if dep.size:
        raise CollinearInstrumentsError(
            f"collinear instruments: column(s) {dep.tolist()} depend on earlier ones",
            dep.tolist(),
        )
    return ProjectionHandle(Q, R, tuple(range(Xs.shape[1])))


def annihilator_dropping(Xs) -> ProjectionHandle:
    """Like :func:`annihilator` but drops dependent columns (with a warning) instead of failing."""
    Xs = np.asarray(Xs, dtype=float)
    if Xs.ndim == 1:
        Xs = Xs[:, None]
    keep = list(range(Xs.shape[1]))
    dropped: list[int] = []
    while keep:
        try:
            h = annihilator(Xs[:, keep])
        except CollinearInstrumentsError as exc:
            bad = [keep[i] for i in exc.dependent]
            # drop only the first dependent column: later flags may be artefacts of it
            dropped.append(bad[0])
            keep.remove(bad[0])
            continue
        if dropped:
            warnings.warn(f"dropped collinear instrument columns {sorted(dropped)}", stacklevel=3)
        return ProjectionHandle(h.Q, h.R, tuple(keep), tuple(sorted(dropped)))
    raise CollinearInstrumentsError("no linearly independent instrument columns", sorted(dropped))


def initial_estimate(yk_proj, Z_proj, ridge_tau: float = 1.0) -> np.ndarray:
    """Pilot estimate for the adaptive weights.

    Least squares when ``n > m`` and the Gram matrix has condition number at
    most 1e8, otherwise ridge with a fixed unit penalty.
    """
    y = np.asarray(yk_proj, dtype=float)
    Z = np.asarray(Z_proj, dtype=float)
    n, m = Z.shape
    if m == 0:
        return np.zeros(0)
    G = Z.T @ Z
    c = Z.T @ y
    if n > m:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(G)
        if np.isfinite(cond) and cond <= 1e8:
            return np.linalg.solve(G, c)
    return np.linalg.solve(G + ridge_tau * np.eye(m), c)


def weights(gamma_tilde, delta: float = 1.0) -> np.ndarray:
    """``(|g| + eps)^-delta`` with ``eps = 1e-10 * max(1, max|g|)``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    g = np.abs(np.asarray(gamma_tilde, dtype=float))
    if g.size == 0:
        return g
    eps = 1e-10 * max(1.0, float(g.max()))
    return (g + eps) ** (-delta)


@dataclass(frozen=True)
class CDResult:
    coef: np.ndarray
    sweeps: int
    converged: bool
    polished: bool = False


@dataclass(frozen=True)
class KKTReport:
    ok: bool
    active_rel_error: float
    inactive_excess: float


def objective(G, c, pen, beta, yy: float = 0.0) -> float:
    """``0.5 ||y - D b||^2 + sum(pen |b|)`` from Gram quantities (``yy = y'y``)."""
    beta = np.asarray(beta, dtype=float)
    return 0.5 * yy - float(c @ beta) + 0.5 * float(beta @ G @ beta) + float(pen @ np.abs(beta))


def kkt_check(G, c, pen, beta, *, rel_tol: float = 1e-6, abs_tol: float = 1e-8) -> KKTReport:
    """Stationarity of a weighted lasso solution.

    Active ``j``: ``|d_j'r| = pen_j`` within ``rel_tol * pen_j`` (sign
    matching ``beta_j``); inactive ``j``: ``|d_j'r| <= pen_j``. Both allow an
    additive slack of ``abs_tol * max|c|``.
    """
    beta = np.asarray(beta, dtype=float)
    g = c - G @ beta
    slack = abs_tol * max(float(np.max(np.abs(c), initial=0.0)), 1e-300)
    act = beta != 0
    if act.any():
        err = np.abs(g[act] - pen[act] * np.sign(beta[act]))
        allowed = rel_tol * pen[act] + slack
        active_rel = float(np.max(err / np.where(pen[act] > 0, pen[act], 1.0)))
        ok_a = bool(np.all(err <= allowed))
    else:
        active_rel, ok_a = 0.0, True
    if (~act).any():
        excess = np.abs(g[~act]) - pen[~act]
        inactive_excess = float(np.max(excess))
        ok_i = bool(np.all(excess <= slack))
    else:
        inactive_excess, ok_i = 0.0, True
    return KKTReport(ok_a and ok_i, active_rel, inactive_excess)


def _polish(G, c, pen, beta):
    """Exact solution on the current support and signs, if it certifies."""
    A = np.flatnonzero(beta)
    if A.size == 0:
        return None
    s = np.sign(beta[A])
    GA = G[np.ix_(A, A)]
    with np.errstate(all="ignore"):
        if not np.linalg.cond(GA) <= 1e12:
            return None
    x = np.linalg.solve(GA, c[A] - pen[A] * s)
    if np.any(np.sign(x) != s):
        return None
    cand = np.zeros_like(beta)
    cand[A] = x
    if not kkt_check(G, c, pen, cand, rel_tol=1e-9, abs_tol=1e-12).ok:
        return None
    if objective(G, c, pen, cand) > objective(G, c, pen, beta) + 1e-14 * (1 + abs(objective(G, c, pen, beta))):
        return None
    return cand


def solve_gram(
    G,
    c,
    pen,
    warm_start=None,
    *,
    tol: float = 1e-7,
    max_sweeps: int = 100_000,
    polish: bool = True,
    kernel=None,
) -> CDResult:
    """Weighted lasso on Gram form; see :func:`weighted_lasso_cd`."""
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    pen = np.ascontiguousarray(pen, dtype=float)
    m = c.shape[0]
    beta = np.zeros(m) if warm_start is None else np.array(warm_start, dtype=float, copy=True)
    if m == 0:
        return CDResult(beta, 0, True)
    kern = kernel or _kernels.cd_gram
    sweeps, converged = kern(G, c, pen, beta, tol, max_sweeps)
    polished = False
    if converged and polish:
        cand = _polish(G, c, pen, beta)
        if cand is not None:
            beta, polished = cand, True
    return CDResult(beta, int(sweeps), bool(converged), polished)


def weighted_lasso_cd(
    y, D, omega, lam: float, warm_start=None, *, tol: float = 1e-7, max_sweeps: int = 100_000, polish: bool = True
) -> CDResult:
    """Minimize ``0.5 ||y - D g||^2 + lam * sum(omega |g|)`` by cyclic coordinate descent.

    Each coordinate update is the exact soft-threshold
    ``g_j <- S(d_j'r_j, lam * omega_j) / ||d_j||^2``. Sweeps stop when the
    largest coordinate change is ``<= tol * (1 + max|g|)``; an unconverged
    run returns its last iterate with ``converged=False``. A converged
    solution is finished with an exact solve on its support when that solve
    keeps the signs and passes the stationarity check.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return solve_gram(D.T @ D, D.T @ y, lam * omega, warm_start, tol=tol, max_sweeps=max_sweeps, polish=polish)


def lambda_max(c, omega) -> float:
    c = np.asarray(c, dtype=float)
    if c.size == 0:
        return 0.0
    return float(np.max(np.abs(c) / np.asarray(omega, dtype=float)))


def lambda_path(lmax: float, length: int = 50, min_ratio: float = 1e-4) -> np.ndarray:
    if lmax <= 0:
        return np.zeros(1)
    return np.geomspace(lmax, lmax * min_ratio, length)


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label per row; a function of ``(n, folds, seed)`` only."""
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.intp)
    out[perm] = np.arange(n) % folds
    return out


def fit_at_lambda(G, c, omega, lam: float, path=None, **kw) -> CDResult:
    """Solve at ``lam``, warm-starting down the part of ``path`` above it."""
    omega = np.asarray(omega, dtype=float)
    beta = None
    sweeps = 0
    if path is not None:
        for lp in path:
            if lp <= lam:
                break
            r = solve_gram(G, c, lp * omega, beta, polish=False, **kw)
            beta, sweeps = r.coef, sweeps + r.sweeps
    r = solve_gram(G, c, lam * omega, beta, **kw)
    return CDResult(r.coef, sweeps + r.sweeps, r.converged, r.polished)


@dataclass(frozen=True)
class CVResult:
    lambda_star: float
    lambdas: np.ndarray
    errors: np.ndarray
    std_errors: np.ndarray | None = None
    unconverged: int = 0
    rule: str = "paired"

    @property
    def cv_curve(self) -> list[tuple[float, float]]:
        return list(zip(self.lambdas.tolist(), self.errors.tolist()))

    @property
    def index(self) -> int:
        return int(np.flatnonzero(self.lambdas == self.lambda_star)[0])

    @property
    def cv_error(self) -> float:
        return float(self.errors[self.index])


CV_RULES = ("paired", "1se", "min")


def cv_select_lambda(
    y,
    D,
    omega,
    folds: int = 5,
    path_length: int = 50,
    seed: int = 0,
    *,
    lambda_min_ratio: float = 1e-4,
    rule: str = "paired",
    delta: float | None = None,
) -> CVResult:
    """K-fold cross-validation over a log-spaced penalty path.

    The path runs from the smallest penalty giving an all-zero solution
    down to ``lambda_min_ratio`` times it. Training folds are fitted with the
    penalty scaled by ``n_train / n`` so that a path value means the same
    per-observation shrinkage on a fold as on the full data.

    When ``delta`` is given, every training fold recomputes its own pilot
    estimate and adaptive weights, so held-out rows never influence the
    weights they are scored under. Otherwise ``omega`` is reused on each fold.

    Rules
    -----
    ``"min"``
        Minimizer of the mean held-out error (ties go to the larger penalty).
    ``"1se"``
        Largest penalty within one fold-level standard error of the minimum.
    ``"paired"``
        Largest penalty whose excess error over the minimizer is within one
        standard error of that excess, computed from per-observation paired
        differences. Errors at neighbouring penalties are strongly correlated,
        so this band is much tighter than the fold-level one.
    """
    if rule not in CV_RULES:
        raise ValueError(f"unknown CV rule {rule!r}; expected one of {CV_RULES}")
    y = np.asarray(y, dtype=float)
    D = np.asarray(D, dtype=float)
    omega = np.asarray(omega, dtype=float)
    n, m = D.shape
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < 2 * folds:
        raise ValueError(f"n = {n} too small for {folds}-fold cross-validation")
    lambdas = lambda_path(lambda_max(D.T @ y, omega), path_length, lambda_min_ratio)
    if m == 0 or lambdas[0] == 0:
        err = np.full(lambdas.shape, float(y @ y) / n)
        return CVResult(float(lambdas[0]), lambdas, err, np.zeros_like(err), 0, rule)

    fid = fold_assignment(n, folds, seed)
    fold_err = np.zeros((folds, lambdas.shape[0]))
    obs_err = np.zeros((n, lambdas.shape[0]))
    bad = 0
    for f in range(folds):
        tr = fid != f
        Dtr, ytr = D[tr], y[tr]
        G, c = Dtr.T @ Dtr, Dtr.T @ ytr
        om = omega if delta is None else weights(initial_estimate(ytr, Dtr), delta)
        scale = tr.sum() / n
        beta = None
        coefs = np.empty((m, lambdas.shape[0]))
        for i, lam in enumerate(lambdas):
            r = solve_gram(G, c, lam * scale * om, beta, polish=False)
            beta = r.coef
            coefs[:, i] = beta
            bad += not r.converged
        resid = y[~tr, None] - D[~tr] @ coefs
        obs_err[~tr] = resid * resid
        fold_err[f] = obs_err[~tr].mean(axis=0)
    err = fold_err.mean(axis=0)
    se = fold_err.std(axis=0, ddof=1) / np.sqrt(folds)
    i = int(np.argmin(err))
    if rule == "1se":
        i = int(np.flatnonzero(err <= err[i] + se[i])[0])
    elif rule == "paired":
        diff = obs_err - obs_err[:, [i]]
        dse = diff.std(axis=0, ddof=1) / np.sqrt(n)
        i = int(np.flatnonzero(diff.mean(axis=0) <= dse)[0])
    return CVResult(float(lambdas[i]), lambdas, err, se, bad, rule)


@dataclass(frozen=True)
class EquationProblem:
    """Inputs for structural equation ``k`` (all columns centered)."""

    k: int
    y: np.ndarray
    Zmk: np.ndarray
    Xs: np.ndarray
    column_map: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.column_map)) != len(self.column_map):
            raise ValueError("column_map must be injective")
        if self.k in self.column_map:
            raise ValueError("Zmk must exclude the target column")
        if np.asarray(self.Zmk).shape[1] != len(self.column_map):
            raise ValueError("column_map length must match Zmk width")
        if np.asarray(self.Xs).ndim != 2 or np.asarray(self.Xs).shape[1] < 1:
            raise ValueError("equation needs at least one instrument column")


@dataclass(frozen=True)
class EquationFit:
    """Stage-2 result for one equation.

    ``gamma`` satisfies the weighted-lasso stationarity conditions checked by
    :func:`kkt_check`: on the support, ``|z_j'r - lam*omega_j*sign(gamma_j)|``
    is at most ``1e-6 * lam*omega_j``; off the support ``|z_j'r|`` exceeds
    ``lam*omega_j`` by at most ``1e-8 * max_j |z_j'y|`` (``z`` and ``y``
    projected, ``r`` the projected residual).
    """

    k: int
    gamma: np.ndarray
    psi: np.ndarray
    lam: float
    omega: np.ndarray
    delta: float
    gamma_tilde: np.ndarray
    cv_curve: list = field(default_factory=list)
    cv_error: float = float("nan")
    iterations: int = 0
    converged: bool = True
    dropped_instruments: tuple[int, ...] = ()

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.gamma)


def fit_equation(
    prob: EquationProblem,
    delta: float = 1.0,
    folds: int = 5,
    path_length: int = 50,
    seed: int = 0,
    *,
    lam: float | None = None,
    lambda_min_ratio: float = 1e-4,
    cv_rule: str = "paired",
) -> EquationFit:
    """Full stage-2 fit of one equation.

    ``lam`` fixes the penalty and skips cross-validation.
    """
    try:
        h = annihilator_dropping(prob.Xs)
        y = np.asarray(prob.y, dtype=float)
        Z = np.asarray(prob.Zmk, dtype=float)
        yp = h.apply(y)
        Zp = h.apply(Z)
        gt = initial_estimate(yp, Zp)
        omega = weights(gt, delta)
        G, c = Zp.T @ Zp, Zp.T @ yp
        curve, cv_err, path = [], float("nan"), None
        if Z.shape[1] == 0:
            lam_used = 0.0 if lam is None else float(lam)
        elif lam is None:
            cv = cv_select_lambda(
                yp,
                Zp,
                omega,
                folds,
                path_length,
                seed,
                lambda_min_ratio=lambda_min_ratio,
                rule=cv_rule,
                delta=delta,
            )
            lam_used, curve, cv_err, path = cv.lambda_star, cv.cv_curve, cv.cv_error, cv.lambdas
        else:
            lam_used = float(lam)
        res = fit_at_lambda(G, c, omega, lam_used, path)
        gamma = res.coef
        psi = np.zeros(np.asarray(prob.Xs).shape[1])
        psi[list(h.kept)] = h.coef(y - Z @ gamma)
    except Exception as exc:
        raise EquationFitError(prob.k, exc) from exc
    return EquationFit(
        k=prob.k,
        gamma=gamma,
        psi=psi,
        lam=lam_used,
        omega=omega,
        delta=delta,
        gamma_tilde=gt,
        cv_curve=curve,
        cv_error=cv_err,
        iterations=res.sweeps,
        converged=res.converged,
        dropped_instruments=h.dropped,
    )
