"""Hot loops: sparse COO tensor contractions and the CSR power iteration.

Each kernel has a numba ``@njit`` version and a pure-numpy twin. The numpy
path is selected when numba is missing or when ``CONVEXQ_PURE_NUMPY`` is set
to a truthy value before import. Both paths must agree to rounding; the test
suite checks this directly.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("CONVEXQ_PURE_NUMPY", "").strip().lower()
_FORCE_NUMPY = _FLAG not in ("", "0", "false", "no")

try:
    if _FORCE_NUMPY:
        raise ImportError("numpy path forced by CONVEXQ_PURE_NUMPY")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations (always importable, used by tests as a twin)
# ---------------------------------------------------------------------------


def coo_eval_np(rows, cols, vals, x):
    """sum_e vals[e] * prod_t x[rows[e, t]] * prod_t x[cols[e, t]]."""
    if vals.size == 0:
        return 0.0
    w = vals * np.prod(x[rows], axis=1) * np.prod(x[cols], axis=1)
    return float(np.sum(w))


def coo_sandwich_np(rows, cols, vals, x, n):
    """Contract every slot but the last against x on both sides.

    Returns the n x n matrix ((x^T)^{(p-1)} (x) I) Op (x^{(p-1)} (x) I).
    """
    out = np.zeros((n, n))
    if vals.size == 0:
        return out
    w = vals * np.prod(x[rows[:, :-1]], axis=1) * np.prod(x[cols[:, :-1]], axis=1)
    np.add.at(out, (rows[:, -1], cols[:, -1]), w)
    return out


def csr_power_np(indptr, indices, data, v0, max_iter, res_tol):
    """Power iteration on a symmetric CSR matrix.

    Returns (rayleigh quotient, final vector, iterations used, residual).
    """
    dim = v0.shape[0]
    v = v0 / np.linalg.norm(v0)
    rq = 0.0
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        w = _csr_matvec_np(indptr, indices, data, v, dim)
        rq = float(v @ w)
        res = float(np.linalg.norm(w - rq * v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, v, it, 0.0
        v = w / nw
        if res <= res_tol:
            break
    return rq, v, it, res


def _csr_matvec_np(indptr, indices, data, v, dim):
    row_of = np.repeat(np.arange(dim), np.diff(indptr))
    return np.bincount(row_of, weights=data * v[indices], minlength=dim)


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _coo_eval_nb(rows, cols, vals, x):
        total = 0.0
        nnz, p = rows.shape
        for e in range(nnz):
            w = vals[e]
            for t in range(p):
                w *= x[rows[e, t]] * x[cols[e, t]]
            total += w
        return total

    @njit(cache=True)
    def _coo_sandwich_nb(rows, cols, vals, x, n):
        out = np.zeros((n, n))
        nnz, p = rows.shape
        for e in range(nnz):
            w = vals[e]
            for t in range(p - 1):
                w *= x[rows[e, t]] * x[cols[e, t]]
            out[rows[e, p - 1], cols[e, p - 1]] += w
        return out

    @njit(cache=True)
    def _csr_power_nb(indptr, indices, data, v0, max_iter, res_tol):
        dim = v0.shape[0]
        v = v0 / np.sqrt(np.sum(v0 * v0))
        w = np.empty(dim)
        rq = 0.0
        res = np.inf
        it = 0
        for it in range(1, max_iter + 1):
            for i in range(dim):
                acc = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    acc += data[k] * v[indices[k]]
                w[i] = acc
            rq = 0.0
            for i in range(dim):
                rq += v[i] * w[i]
            res = 0.0
            nw = 0.0
            for i in range(dim):
                d = w[i] - rq * v[i]
                res += d * d
                nw += w[i] * w[i]
            res = np.sqrt(res)
            nw = np.sqrt(nw)
            if nw == 0.0:
                return 0.0, v, it, 0.0
            for i in range(dim):
                v[i] = w[i] / nw
            if res <= res_tol:
                break
        return rq, v, it, res

    def coo_eval(rows, cols, vals, x):
        if vals.size == 0:
            return 0.0
        return float(_coo_eval_nb(rows, cols, vals, x))

    def coo_sandwich(rows, cols, vals, x, n):
        return _coo_sandwich_nb(rows, cols, vals, x, n)

    def csr_power(indptr, indices, data, v0, max_iter, res_tol):
        rq, v, it, res = _csr_power_nb(
            indptr.astype(np.int64), indices.astype(np.int64), data, v0, max_iter, res_tol
        )
        return float(rq), v, int(it), float(res)

else:
    coo_eval = coo_eval_np
    coo_sandwich = coo_sandwich_np
    csr_power = csr_power_np
