"""Cost-counter scaling of the pipeline against a dense classical check.

Counters come from the multi-point Hessian encoding built for a sparse
quartic form (s <= 2) on points drawn from the unit sphere. The classical
reference counts the FLOPs of forming every Hessian densely from the
coefficient tensor, N (p + p^2) n^{2p}; the sparse-access estimate
N (p n^p + p^2 n^p) is reported alongside.

In N two counters are fitted. ``state_loads`` counts uses of the
point-loading unitary and is the N-linear component; ``primitive_ops``
carries an extra log(nN) from address arithmetic, so it is fitted against
N log2(nN) rather than N.
"""

from __future__ import annotations

import math

import numpy as np

from . import hessian_pipeline as hp
from .poly_core import HomogeneousSpec, sample_points


def sparse_form(n: int, p: int) -> HomogeneousSpec:
    """sum_i x_i^{2p} / 2 plus a cyclic coupling, sparsity <= 2 after loading."""
    entries = []
    for i in range(n):
        entries.append(([i] * p, [i] * p, 1.0))
    if n > 1:
        for i in range(n):
            j = (i + 1) % n
            idx = [i] * (p - 1) + [j]
            entries.append((idx, idx, 0.25))
    return HomogeneousSpec.from_entries(n, p, entries)


def classical_flops(n: int, p: int, N: int) -> int:
    return N * (p + p * p) * n ** (2 * p)


def classical_sparse_flops(n: int, p: int, N: int) -> int:
    return N * (p * n**p + p * p * n**p)


def pipeline_counters(n: int, p: int, N: int, seed: int = 0, eps: float = 1e-6) -> dict:
    spec = sparse_form(n, p)
    pts = sample_points(n, N, seed=seed, mode="on_sphere")
    mp = hp.multi_point_hessian(spec, pts, eps=eps)
    out = mp.enc.cost.as_dict()
    out.update(n=n, p=p, N=N, s=spec.s, dim=mp.enc.dim)
    return out


def fit_power(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def linear_r2(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    coef = np.polyfit(xs, ys, 1)
    pred = np.polyval(coef, xs)
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def bench(ns=(2, 4, 8, 16), p: int = 2, N: int = 4, Ns=(2, 4, 8), seed: int = 0) -> dict:
    rows = []
    for n in ns:
        row = pipeline_counters(n, p, N, seed)
        row["classical_flops"] = classical_flops(n, p, N)
        row["classical_sparse_flops"] = classical_sparse_flops(n, p, N)
        rows.append(row)
    n_rows = []
    for M in Ns:
        n_rows.append(pipeline_counters(ns[0], p, M, seed))
    key = "primitive_ops"
    return {
        "by_n": rows,
        "by_N": n_rows,
        "fit": {
            "counter_exponent_in_n": fit_power(ns, [r[key] for r in rows]),
            "oracle_exponent_in_n": fit_power(ns, [max(r["oracle_queries"], 1) for r in rows]),
            "classical_exponent_in_n": fit_power(ns, [r["classical_flops"] for r in rows]),
            "counter_vs_log_n_slope": float(
                np.polyfit([math.log2(n) for n in ns], [r[key] for r in rows], 1)[0]
            ),
            "loads_linear_r2_in_N": linear_r2(Ns, [r["state_loads"] for r in n_rows]),
            "counter_linear_r2_in_N": linear_r2(Ns, [r[key] for r in n_rows]),
            "counter_r2_in_N_log_nN": linear_r2(
                [M * math.log2(ns[0] * M) for M in Ns], [r[key] for r in n_rows]
            ),
        },
    }
