"""Data model, validation and centering shared by both estimation stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class SemError(Exception):
    """Base class for estimation failures."""


class ValidationError(SemError):
    pass


class DegenerateGCVError(SemError):
    pass


class OLSUndefinedError(SemError):
    pass


class CollinearInstrumentsError(SemError):
    def __init__(self, message: str, dependent: Sequence[int] = ()):
        super().__init__(message)
        self.dependent = tuple(dependent)


class EquationFitError(SemError):
    """A failure inside one structural equation, tagged with its index."""

    def __init__(self, k: int, cause: BaseException):
        super().__init__(f"equation {k}: {cause}")
        self.k = k
        self.cause = cause


class NetworkGenerationError(SemError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DataSet:
    """Paired observations of endogenous ``Y`` (n x p) and exogenous ``X`` (n x q)."""

    Y: np.ndarray
    X: np.ndarray
    endo_names: tuple[str, ...] = ()
    exo_names: tuple[str, ...] = ()

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "X", _frozen(X))
        endo = tuple(self.endo_names) or tuple(f"y{j}" for j in range(Y.shape[1]))
        exo = tuple(self.exo_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        object.__setattr__(self, "endo_names", endo)
        object.__setattr__(self, "exo_names", exo)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def take_rows(self, idx) -> "DataSet":
        return DataSet(self.Y[idx], self.X[idx], self.endo_names, self.exo_names)


@dataclass(frozen=True)
class ExoAssignment:
    """Instrument sets: ``sets[k]`` lists the exogenous columns that only affect Y_k."""

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(tuple(int(i) for i in s) for s in self.sets))

    def __len__(self) -> int:
        return len(self.sets)

    def __getitem__(self, k: int) -> tuple[int, ...]:
        return self.sets[k]

    @classmethod
    def blocks(cls, p: int, size: int) -> "ExoAssignment":
        """Consecutive disjoint blocks of ``size`` exogenous columns per node."""
        return cls(tuple(tuple(range(k * size, (k + 1) * size)) for k in range(p)))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    rule: str | None = None
    message: str | None = None
    warnings: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def validate(ds: DataSet, ea: ExoAssignment) -> ValidationReport:
    """Check a data set against an instrument assignment.

    Returns the first violated rule; never raises and never mutates inputs.
    Constant exogenous columns pass with a warning.
    """
    Y, X = ds.Y, ds.X
    if Y.ndim != 2 or X.ndim != 2:
        return ValidationReport(False, "dimension", "Y and X must be 2-d matrices")
    n, p = Y.shape
    q = X.shape[1]
    if X.shape[0] != n:
        return ValidationReport(
            False, "dimension", f"row mismatch: Y has {n} rows, X has {X.shape[0]}"
        )
    if n < 2 or p < 1 or q < 1:
        return ValidationReport(False, "dimension", f"need n >= 2, p >= 1, q >= 1 (got {n}, {p}, {q})")
    if len(ds.endo_names) != p or len(ds.exo_names) != q:
        return ValidationReport(False, "dimension", "name count does not match matrix width")
    if len(ea) != p:
        return ValidationReport(
            False, "dimension", f"assignment has {len(ea)} sets for {p} endogenous variables"
        )
    if not np.all(np.isfinite(Y)):
        r, c = np.argwhere(~np.isfinite(Y))[0]
        return ValidationReport(False, "non-finite", f"non-finite entry in Y at row {r}, column {c}")
    if not np.all(np.isfinite(X)):
        r, c = np.argwhere(~np.isfinite(X))[0]
        return ValidationReport(False, "non-finite", f"non-finite entry in X at row {r}, column {c}")

    owner: dict[int, int] = {}
    for k, s in enumerate(ea.sets):
        if len(s) == 0:
            return ValidationReport(False, "empty", f"S_{k} empty ({ds.endo_names[k]} has no instruments)")
        for i in s:
            if not 0 <= i < q:
                return ValidationReport(False, "range", f"S_{k} index {i} out of range 0..{q - 1}")
            if i in owner:
                return ValidationReport(
                    False,
                    "overlap",
                    f"overlap at exogenous index {i} ({ds.exo_names[i]}) "
                    f"shared by S_{owner[i]} and S_{k}",
                )
            owner[i] = k

    warns = []
    const = np.flatnonzero(np.ptp(X, axis=0) == 0)
    for i in const:
        warns.append(f"exogenous column {i} ({ds.exo_names[i]}) is constant")
    return ValidationReport(True, warnings=tuple(warns))


def center_columns(M) -> tuple[np.ndarray, np.ndarray]:
    """Subtract column means; returns ``(centered, means)``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if M.shape[0] < 1:
        raise ValueError("center_columns needs at least one row")
    means = M.mean(axis=0)
    Mc = M - means
    # second pass removes the rounding residue of the first
    Mc -= Mc.mean(axis=0)
    return Mc, means


@dataclass(frozen=True)
class StageOneResult:
    Zhat: np.ndarray
    taus: np.ndarray
    Pi_hat: np.ndarray | None = None
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class EquationDiagnostics:
    k: int
    active: int = 0
    cv_error: float = float("nan")
    iterations: int = 0
    converged: bool = True
    failed: bool = False
    message: str = ""
    dropped_instruments: tuple[int, ...] = ()


@dataclass(frozen=True)
class SystemEstimate:
    """Estimated regulatory (``Gamma_hat``) and exogenous (``Psi_hat``) effects.

    ``Gamma_hat[j, k]`` is the effect of endogenous ``j`` on endogenous ``k``.
    """

    Gamma_hat: np.ndarray
    Psi_hat: np.ndarray
    lambdas: np.ndarray
    taus: np.ndarray
    diagnostics: tuple[EquationDiagnostics, ...] = ()

    def edges(self) -> list[tuple[int, int, float]]:
        src, tgt = np.nonzero(self.Gamma_hat)
        return [(int(j), int(k), float(self.Gamma_hat[j, k])) for j, k in zip(src, tgt)]

    @property
    def failed_equations(self) -> list[int]:
        return [d.k for d in self.diagnostics if d.failed]


@dataclass(frozen=True)
class EdgeRecord:
    source: int
    target: int
    effect: float
    frequency: float
    B: int


@dataclass(frozen=True)
class EdgeFrequencyTable:
    rows: tuple[EdgeRecord, ...]
    B: int
    skipped: int = 0
    requested: int = 0
    threshold: float = 0.0

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def filter(self, threshold: float) -> "EdgeFrequencyTable":
        rows = tuple(r for r in self.rows if r.frequency >= threshold)
        return EdgeFrequencyTable(rows, self.B, self.skipped, self.requested, threshold)

    def as_dict(self) -> dict[tuple[int, int], EdgeRecord]:
        return {(r.source, r.target): r for r in self.rows}


__all__ = [
    "CollinearInstrumentsError",
    "DataSet",
    "DegenerateGCVError",
    "EdgeFrequencyTable",
    "EdgeRecord",
    "EquationDiagnostics",
    "EquationFitError",
    "ExoAssignment",
    "NetworkGenerationError",
    "OLSUndefinedError",
    "SemError",
    "StageOneResult",
    "SystemEstimate",
    "ValidationError",
    "ValidationReport",
    "center_columns",
    "validate",
]
