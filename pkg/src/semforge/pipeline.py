"""Whole-system fits and bootstrap edge confidence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import BOOT_TAG, STAGE2_TAG, pmap, substream_rng, substream_seed
from .alasso import CV_RULES, EquationProblem, fit_equation
from .core import (
    DataSet,
    EdgeFrequencyTable,
    EdgeRecord,
    EquationDiagnostics,
    ExoAssignment,
    SemError,
    SystemEstimate,
    ValidationError,
    center_columns,
    validate,
)
from .ridge import GcvSearchConfig, StageOneStrategy, stage_one

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    stage_one: StageOneStrategy = StageOneStrategy.RIDGE_GCV
    gcv: GcvSearchConfig = field(default_factory=GcvSearchConfig)
    delta: float = 1.0
    folds: int = 5
    path_length: int = 50
    lambda_min_ratio: float = 1e-4
    cv_rule: str = "paired"
    master_seed: int = 0
    threads: int | None = 1
    # fixed penalties bypass GCV / cross-validation (used for oracle checks)
    fixed_tau: float | None = None
    fixed_lambda: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "stage_one", StageOneStrategy(self.stage_one))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.cv_rule not in CV_RULES:
            raise ValueError(f"cv_rule must be one of {CV_RULES}")
        if self.path_length < 1:
            raise ValueError("path_length must be >= 1")

    def as_dict(self) -> dict:
        return {
            "stage_one": self.stage_one.value,
            "gcv": {
                "tau_min": self.gcv.tau_min,
                "tau_max": self.gcv.tau_max,
                "grid_points": self.gcv.grid_points,
                "refine_tolerance": self.gcv.refine_tolerance,
            },
            "delta": self.delta,
            "folds": self.folds,
            "path_length": self.path_length,
            "lambda_min_ratio": self.lambda_min_ratio,
            "cv_rule": self.cv_rule,
            "master_seed": self.master_seed,
            "fixed_tau": self.fixed_tau,
            "fixed_lambda": self.fixed_lambda,
        }


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 100
    master_seed: int = 0
    frequency_threshold: float = 0.0

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if not 0.0 <= self.frequency_threshold <= 1.0:
            raise ValueError("frequency_threshold must lie in [0, 1]")


def _fit(ds: DataSet, ea: ExoAssignment, cfg: FitConfig, replicate: int, threads) -> SystemEstimate:
    Yc, _ = center_columns(ds.Y)
    Xc, _ = center_columns(ds.X)
    n, p = Yc.shape
    q = Xc.shape[1]
    s1 = stage_one(
        Yc,
        Xc,
        cfg.gcv,
        cfg.stage_one,
        fixed_tau=cfg.fixed_tau,
        cv_rule=cfg.cv_rule,
        delta=cfg.delta,
        folds=cfg.folds,
        path_length=cfg.path_length,
        seed=substream_seed(cfg.master_seed, replicate),
        threads=threads,
    )
    for w in s1.warnings:
        log.warning(w)

    def one(k):
        cols = tuple(j for j in range(p) if j != k)
        S = list(ea[k])
        try:
            prob = EquationProblem(k, Yc[:, k], s1.Zhat[:, list(cols)], Xc[:, S], cols)
            return fit_equation(
                prob,
                cfg.delta,
                cfg.folds,
                cfg.path_length,
                substream_seed(cfg.master_seed, replicate, STAGE2_TAG, k),
                lam=cfg.fixed_lambda,
                lambda_min_ratio=cfg.lambda_min_ratio,
                cv_rule=cfg.cv_rule,
            )
        except SemError as exc:
            return exc

    fits = pmap(one, range(p), threads)
    Gamma = np.zeros((p, p))
    Psi = np.zeros((q, p))
    lambdas = np.full(p, np.nan)
    diags = []
    for k, f in enumerate(fits):
        if isinstance(f, Exception):
            log.warning("equation %d failed: %s", k, f)
            diags.append(EquationDiagnostics(k, failed=True, converged=False, message=str(f)))
            continue
        cols = [j for j in range(p) if j != k]
        Gamma[cols, k] = f.gamma
        Psi[list(ea[k]), k] = f.psi
        lambdas[k] = f.lam
        diags.append(
            EquationDiagnostics(
                k,
                active=int(np.count_nonzero(f.gamma)),
                cv_error=f.cv_error,
                iterations=f.iterations,
                converged=f.converged,
                dropped_instruments=tuple(ea[k][i] for i in f.dropped_instruments),
            )
        )
    return SystemEstimate(Gamma, Psi, lambdas, s1.taus, tuple(diags))


def fit_system(ds: DataSet, ea: ExoAssignment, cfg: FitConfig | None = None, *, threads=None) -> SystemEstimate:
    """Fit every structural equation and assemble the system estimate.

    A failed equation leaves a zero column and a diagnostic record instead of
    aborting the run. Output does not depend on the thread count.
    """
    cfg = cfg or FitConfig()
    rep = validate(ds, ea)
    if not rep.ok:
        raise ValidationError(rep.message)
    for w in rep.warnings:
        log.warning(w)
    return _fit(ds, ea, cfg, 0, cfg.threads if threads is None else threads)


def resample_indices(n: int, master_seed: int, b: int) -> np.ndarray:
    return substream_rng(master_seed, BOOT_TAG, b).integers(0, n, size=n)


def bootstrap_edges(
    ds: DataSet,
    ea: ExoAssignment,
    fit_cfg: FitConfig | None = None,
    boot_cfg: BootstrapConfig | None = None,
    *,
    threads=None,
) -> EdgeFrequencyTable:
    """Refit the system on row resamples and tabulate edge selection frequencies.

    Replicates that are degenerate (validation failure or a failed equation)
    are skipped and excluded from the frequency denominator. The mean effect
    of an edge averages only the replicates that selected it.
    """
    fit_cfg = fit_cfg or FitConfig()
    boot_cfg = boot_cfg or BootstrapConfig()
    rep = validate(ds, ea)
    if not rep.ok:
        raise ValidationError(rep.message)
    threads = fit_cfg.threads if threads is None else threads

    def one(b):
        sub = ds.take_rows(resample_indices(ds.n, boot_cfg.master_seed, b))
        if not validate(sub, ea).ok:
            return None
        cfg = FitConfig(**{**fit_cfg.__dict__, "master_seed": substream_seed(boot_cfg.master_seed, b)})
        est = _fit(sub, ea, cfg, 0, 1)
        if est.failed_equations:
            return None
        return est.Gamma_hat

    results = pmap(one, range(boot_cfg.B), threads)
    p = ds.p
    counts = np.zeros((p, p), dtype=np.int64)
    sums = np.zeros((p, p))
    used = 0
    for G in results:
        if G is None:
            continue
        used += 1
        sel = G != 0
        counts += sel
        sums += np.where(sel, G, 0.0)
    skipped = boot_cfg.B - used
    rows = []
    if used:
        for j, k in zip(*np.nonzero(counts)):
            rows.append(EdgeRecord(int(j), int(k), float(sums[j, k] / counts[j, k]), float(counts[j, k] / used), used))
    rows.sort(key=lambda r: (-r.frequency, r.source, r.target))
    table = EdgeFrequencyTable(tuple(rows), used, skipped, boot_cfg.B)
    if boot_cfg.frequency_threshold > 0:
        table = table.filter(boot_cfg.frequency_threshold)
    return table
