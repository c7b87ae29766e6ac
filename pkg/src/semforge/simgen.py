"""Synthetic networks, F2-genotype data sets, and power/FDR scoring."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ._parallel import SIM_DATA_TAG, SIM_NET_TAG, pmap, substream_seed
from .core import DataSet, ExoAssignment, NetworkGenerationError, center_columns
from .pipeline import FitConfig, fit_system
from .ridge import StageOneStrategy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorSpec:
    """Structural error law: ``normal`` with ``sd``, or Student-t scaled to the same sd."""

    kind: str = "normal"
    sd: float = 0.1
    df: float = 3.0

    def __post_init__(self):
        if self.kind not in ("normal", "t"):
            raise ValueError(f"unknown error kind {self.kind!r}")
        if not self.sd >= 0:
            raise ValueError("sd must be nonnegative")
        if self.kind == "t" and not self.df > 2:
            raise ValueError("t errors need df > 2 for a finite variance")

    def scaled(self, variance_factor: float) -> "ErrorSpec":
        return replace(self, sd=self.sd * math.sqrt(variance_factor))

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(0.0, self.sd, size=shape)
        scale = self.sd / math.sqrt(self.df / (self.df - 2.0))
        return scale * rng.standard_t(self.df, size=shape)


@dataclass(frozen=True)
class NetworkSpec:
    p: int = 30
    topology: str = "acyclic"
    mean_out_degree: float = 1.0
    ee_count: int = 1
    hubs: int = 0
    hub_degree: float = 5.0
    effect_range: tuple[float, float] = (0.5, 1.0)
    error: ErrorSpec = field(default_factory=ErrorSpec)
    # correlated instrument blocks (genotypes correlated at this level, unequal effects)
    ee_correlation: float | None = None
    ee_effects: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.topology not in ("acyclic", "cyclic"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0 < self.mean_out_degree < self.p:
            raise ValueError("mean_out_degree must lie in (0, p)")
        if self.ee_count < 1:
            raise ValueError("ee_count must be >= 1")
        if self.hubs < 0 or self.hubs > self.p:
            raise ValueError("hub count out of range")
        if self.ee_effects is not None and len(self.ee_effects) != self.ee_count:
            raise ValueError("ee_effects needs one value per exogenous effect")
        if self.ee_correlation is not None and not 0 <= self.ee_correlation <= 1:
            raise ValueError("ee_correlation must lie in [0, 1]")
        lo, hi = self.effect_range
        if not 0 <= lo < hi:
            raise ValueError("effect_range must satisfy 0 <= lo < hi")

    @property
    def density(self) -> str:
        if self.mean_out_degree == 1:
            return "sparse"
        if self.mean_out_degree == 3:
            return "dense"
        return f"{self.mean_out_degree:g}"

    @property
    def q(self) -> int:
        return self.p * self.ee_count

    def as_dict(self) -> dict:
        d = asdict(self)
        d["effect_range"] = list(self.effect_range)
        d["ee_effects"] = None if self.ee_effects is None else list(self.ee_effects)
        return d


@dataclass(frozen=True)
class GroundTruth:
    Gamma: np.ndarray
    Psi: np.ndarray
    ea: ExoAssignment
    spec: NetworkSpec
    order: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.Gamma.shape[0]

    @property
    def q(self) -> int:
        return self.Psi.shape[0]

    @property
    def Pi(self) -> np.ndarray:
        """Reduced-form coefficients ``Psi (I - Gamma)^-1``."""
        return np.linalg.solve((np.eye(self.p) - self.Gamma).T, self.Psi.T).T

    def edges(self) -> set[tuple[int, int]]:
        return {(int(j), int(k)) for j, k in zip(*np.nonzero(self.Gamma))}


def _effects(rng, size, lo, hi):
    return rng.choice((-1.0, 1.0), size=size) * rng.uniform(lo, hi, size=size)


def _edge_probs(spec: NetworkSpec, rng) -> tuple[np.ndarray, np.ndarray | None]:
    """Per ordered pair edge probabilities; ``probs[j, k]`` for ``j -> k``."""
    p = spec.p
    if spec.topology == "acyclic":
        order = rng.permutation(p)
        rank = np.empty(p, dtype=int)
        rank[order] = np.arange(p)
        admissible = rank[:, None] < rank[None, :]
        # p*(p-1)/2 admissible pairs carry p*mean_out_degree expected edges
        base = 2.0 * spec.mean_out_degree / (p - 1)
    else:
        order = None
        admissible = ~np.eye(p, dtype=bool)
        base = spec.mean_out_degree / (p - 1)
    probs = np.where(admissible, min(base, 1.0), 0.0)
    if spec.hubs:
        if order is not None:
            # hubs sit early in the order so they have room for out-edges
            pool = order[: max(spec.hubs, p // 2)]
        else:
            pool = np.arange(p)
        hubs = rng.choice(pool, size=spec.hubs, replace=False)
        for h in hubs:
            n_adm = int(admissible[h].sum())
            if n_adm:
                probs[h] = np.where(admissible[h], min(1.0, spec.hub_degree / n_adm), 0.0)
    return probs, order


def gen_network(spec: NetworkSpec) -> GroundTruth:
    """Random regulatory network with unique instrument blocks per node."""
    rng = np.random.default_rng(spec.seed)
    p = spec.p
    lo, hi = spec.effect_range
    for _ in range(1000):
        probs, order = _edge_probs(spec, rng)
        support = rng.random((p, p)) < probs
        Gamma = np.where(support, _effects(rng, (p, p), lo, hi), 0.0)
        if spec.topology == "acyclic":
            break
        if not support.any():
            break
        rho = float(np.max(np.abs(np.linalg.eigvals(Gamma))))
        cond = float(np.linalg.cond(np.eye(p) - Gamma))
        if rho <= 0.95 and cond <= 1e8:
            break
    else:
        raise NetworkGenerationError("could not generate stable cyclic network")

    ea = ExoAssignment.blocks(p, spec.ee_count)
    Psi = np.zeros((spec.q, p))
    effects = spec.ee_effects if spec.ee_effects is not None else (1.0,) * spec.ee_count
    for k, S in enumerate(ea.sets):
        Psi[list(S), k] = effects
    return GroundTruth(Gamma, Psi, ea, spec, order)


def f2_genotypes(rng, n: int, q: int, block: int = 1, correlation: float | None = None) -> np.ndarray:
    """F2 genotypes in {0, 1, 2} with probabilities (1/4, 1/2, 1/4).

    With ``correlation`` set, columns in consecutive blocks of ``block`` are
    pairwise correlated at that level: each allele copies a shared founder
    allele with probability ``sqrt(correlation)``.
    """
    if correlation is None or block == 1:
        return rng.binomial(2, 0.5, size=(n, q)).astype(float)
    copy = math.sqrt(correlation)
    nb = q // block
    founders = rng.integers(0, 2, size=(n, nb, 1, 2))
    fresh = rng.integers(0, 2, size=(n, nb, block, 2))
    use = rng.random((n, nb, block, 2)) < copy
    alleles = np.where(use, founders, fresh)
    return alleles.sum(axis=3).reshape(n, nb * block).astype(float)


def gen_dataset(gt: GroundTruth, n: int, error: ErrorSpec | None = None, seed: int = 0) -> DataSet:
    """Draw ``X`` and structural errors, then solve ``Y (I - Gamma) = X Psi + eps``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    error = error or gt.spec.error
    rng = np.random.default_rng(seed)
    X = f2_genotypes(rng, n, gt.q, gt.spec.ee_count, gt.spec.ee_correlation)
    eps = error.draw(rng, (n, gt.p))
    rhs = X @ gt.Psi + eps
    Y = np.linalg.solve((np.eye(gt.p) - gt.Gamma).T, rhs.T).T
    return DataSet(Y, X, tuple(f"g{k}" for k in range(gt.p)), tuple(f"m{i}" for i in range(gt.q)))


def strongest_instruments(ds: DataSet, ea: ExoAssignment) -> ExoAssignment:
    """Keep, per node, the instrument with the largest marginal |t| against its target."""
    Yc, _ = center_columns(ds.Y)
    Xc, _ = center_columns(ds.X)
    n = ds.n
    keep = []
    for k, S in enumerate(ea.sets):
        best, best_t = S[0], -1.0
        y = Yc[:, k]
        for i in S:
            x = Xc[:, i]
            sxx = float(x @ x)
            if sxx == 0:
                continue
            b = float(x @ y) / sxx
            r = y - b * x
            se = math.sqrt(max(float(r @ r), 1e-300) / max(n - 2, 1) / sxx)
            t = abs(b) / se
            if t > best_t:
                best, best_t = i, t
        keep.append((best,))
    return ExoAssignment(tuple(keep))


def fitting_assignment(ds: DataSet, gt: GroundTruth) -> ExoAssignment:
    if gt.spec.ee_correlation is not None and gt.spec.ee_count > 1:
        return strongest_instruments(ds, gt.ea)
    return gt.ea


@dataclass(frozen=True)
class Score:
    power: float
    fdr: float
    tp: int
    fp: int
    fn: int
    sign_accuracy: float


def score(Gamma_hat, gt) -> Score:
    """Power and FDR of the directed support of ``Gamma_hat`` (or a ``SystemEstimate``)."""
    G_hat = getattr(Gamma_hat, "Gamma_hat", Gamma_hat)
    G_true = getattr(gt, "Gamma", gt)
    G_hat = np.asarray(G_hat, dtype=float)
    G_true = np.asarray(G_true, dtype=float)
    if G_hat.shape != G_true.shape:
        raise ValueError("dimension mismatch")
    off = ~np.eye(G_true.shape[0], dtype=bool)
    est = (G_hat != 0) & off
    true = (G_true != 0) & off
    tp = int(np.sum(est & true))
    fp = int(np.sum(est & ~true))
    fn = int(np.sum(~est & true))
    n_true = int(true.sum())
    power = tp / n_true if n_true else 1.0
    fdr = fp / max(int(est.sum()), 1)
    both = est & true
    sign_acc = float(np.mean(np.sign(G_hat[both]) == np.sign(G_true[both]))) if tp else float("nan")
    return Score(power, fdr, tp, fp, fn, sign_acc)


METRIC_COLUMNS = ("topology", "density", "ee_count", "n", "strategy", "replicate", "power", "fdr", "fit_seconds")


@dataclass(frozen=True)
class MetricsRow:
    cell: int
    topology: str
    density: str
    ee_count: int
    n: int
    strategy: str
    replicate: int
    power: float
    fdr: float
    fit_seconds: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    error: str = ""


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]

    def __len__(self):
        return len(self.rows)

    def select(self, **kw) -> list[MetricsRow]:
        return [r for r in self.rows if all(getattr(r, a) == v for a, v in kw.items())]

    def summary(self) -> list[dict]:
        """Mean and SD of power and FDR per (cell, strategy); failed rows excluded."""
        groups: dict[tuple, list[MetricsRow]] = {}
        for r in self.rows:
            groups.setdefault((r.cell, r.strategy), []).append(r)
        out = []
        for (cell, strat), rs in groups.items():
            ok = [r for r in rs if not r.error]
            pw = np.array([r.power for r in ok])
            fd = np.array([r.fdr for r in ok])
            ts = np.array([r.fit_seconds for r in ok])
            first = rs[0]
            out.append(
                {
                    "topology": first.topology,
                    "density": first.density,
                    "ee_count": first.ee_count,
                    "n": first.n,
                    "strategy": strat,
                    "replicates": len(ok),
                    "failed": len(rs) - len(ok),
                    "power_mean": float(pw.mean()) if ok else float("nan"),
                    "power_sd": float(pw.std(ddof=1)) if len(ok) > 1 else 0.0,
                    "fdr_mean": float(fd.mean()) if ok else float("nan"),
                    "fdr_sd": float(fd.std(ddof=1)) if len(ok) > 1 else 0.0,
                    "fit_seconds_mean": float(ts.mean()) if ok else float("nan"),
                }
            )
        return out

    def mean(self, column: str, **kw) -> float:
        rs = [r for r in self.select(**kw) if not r.error]
        return float(np.mean([getattr(r, column) for r in rs])) if rs else float("nan")


def run_experiment(
    grid: Sequence[tuple[NetworkSpec, int]],
    replicates: int,
    fit_cfg: FitConfig | None = None,
    strategies: Sequence[StageOneStrategy | str] = (StageOneStrategy.RIDGE_GCV,),
    *,
    seed: int = 0,
    threads: int | None = 1,
) -> MetricsTable:
    """Simulate, fit and score each grid cell ``replicates`` times per strategy.

    Replicate ``r`` of cell ``c`` draws a fresh network and data set from
    seeds keyed by ``(seed, c, r)``; every strategy sees the same draw.
    """
    fit_cfg = fit_cfg or FitConfig()
    strategies = [StageOneStrategy(s) for s in strategies]
    tasks = [(c, r) for c in range(len(grid)) for r in range(replicates)]

    def one(task):
        c, r = task
        spec, n = grid[c]
        rows = []
        try:
            gt = gen_network(replace(spec, seed=substream_seed(seed, SIM_NET_TAG, c, r, spec.seed)))
            ds = gen_dataset(gt, n, seed=substream_seed(seed, SIM_DATA_TAG, c, r, spec.seed))
            ea = fitting_assignment(ds, gt)
        except Exception as exc:
            log.warning("cell %d replicate %d: generation failed: %s", c, r, exc)
            return [
                MetricsRow(c, spec.topology, spec.density, spec.ee_count, n, s.value, r,
                           float("nan"), float("nan"), float("nan"), error=str(exc))
                for s in strategies
            ]
        for s in strategies:
            cfg = replace(fit_cfg, stage_one=s, master_seed=substream_seed(seed, c, r), threads=1)
            t0 = time.perf_counter()
            try:
                est = fit_system(ds, ea, cfg)
                sc = score(est, gt)
                err = ""
            except Exception as exc:
                sc, err = None, str(exc)
            dt = time.perf_counter() - t0
            if sc is None:
                rows.append(MetricsRow(c, spec.topology, spec.density, spec.ee_count, n, s.value, r,
                                       float("nan"), float("nan"), dt, error=err))
            else:
                rows.append(MetricsRow(c, spec.topology, spec.density, spec.ee_count, n, s.value, r,
                                       sc.power, sc.fdr, dt, sc.tp, sc.fp, sc.fn))
        return rows

    out = pmap(one, tasks, threads)
    return MetricsTable(tuple(row for rows in out for row in rows))
