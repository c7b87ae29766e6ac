"""Pure-Python coordinate descent kernel; the reference for ``_cd_fast``."""

from __future__ import annotations

import numpy as np


def cd_gram(G, c, pen, beta, tol=1e-7, max_sweeps=100_000):
    """Weighted lasso by cyclic coordinate descent on the Gram form.

    Minimizes ``0.5 b'Gb - c'b + sum(pen * |b|)`` in place on ``beta``.
    After every full sweep that is not converged, cycles over the current
    nonzero set until it settles, then sweeps all coordinates again.
    Convergence: max coordinate change in a full sweep
    ``<= tol * (1 + max|beta|)``.

    Returns ``(sweeps, converged)``.
    """
    m = beta.shape[0]
    diag = np.diag(G).tolist()
    cl = c.tolist()
    pl = pen.tolist()
    b = beta.tolist()
    sweeps = 0
    converged = False
    full = list(range(m))
    while sweeps < max_sweeps:
        Gb = G @ np.asarray(b, dtype=float)
        maxd = _sweep(G, diag, cl, pl, b, Gb, full)
        sweeps += 1
        if maxd <= tol * (1.0 + max((abs(v) for v in b), default=0.0)):
            converged = True
            break
        active = [j for j in full if b[j] != 0.0]
        while sweeps < max_sweeps:
            maxd = _sweep(G, diag, cl, pl, b, Gb, active)
            sweeps += 1
            if maxd <= tol * (1.0 + max((abs(v) for v in b), default=0.0)):
                break
    beta[:] = b
    return sweeps, converged


def _sweep(G, diag, c, pen, b, Gb, idx):
    maxd = 0.0
    for j in idx:
        gjj = diag[j]
        bj = b[j]
        if gjj <= 0.0:
            if bj != 0.0:
                Gb -= bj * G[j]
                b[j] = 0.0
                maxd = max(maxd, abs(bj))
            continue
        a = c[j] - float(Gb[j]) + gjj * bj
        t = pen[j]
        if a > t:
            new = (a - t) / gjj
        elif a < -t:
            new = (a + t) / gjj
        else:
            new = 0.0
        d = new - bj
        if d != 0.0:
            Gb += d * G[j]
            b[j] = new
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd

