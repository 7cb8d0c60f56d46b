"""Polynomial specifications, evaluation and classical derivative oracles.

Two polynomial families are supported:

* homogeneous, f(x) = 1/2 (x^T)^{(x)p} A x^{(x)p} with A a sparse symmetric
  n^p x n^p matrix stored as COO with p-tuple multi-indices;
* inhomogeneous, f(x) = sum_q coeff_q (c_q . x) prod_k (x^T B_kq x), where a
  term may omit the linear factor c (then it is a plain product of quadratics).

All values returned by ``eval_*``, ``gradient_analytic`` and
``hessian_analytic`` refer to the polynomial as written by the user, even
though the stored operators are normalized (the scale is kept alongside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import InputError

NORM_TOL = 1e-8
POINT_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# multi-index helpers
# ---------------------------------------------------------------------------


def flatten_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Linear index of p-tuples, slot 1 most significant."""
    idx = np.atleast_2d(idx)
    p = idx.shape[1]
    weights = n ** np.arange(p - 1, -1, -1, dtype=np.int64)
    return idx.astype(np.int64) @ weights


def unflatten_index(lin: np.ndarray, n: int, p: int) -> np.ndarray:
    lin = np.asarray(lin, dtype=np.int64)
    out = np.empty(lin.shape + (p,), dtype=np.int64)
    rest = lin.copy()
    for t in range(p - 1, -1, -1):
        out[..., t] = rest % n
        rest //= n
    return out


def _slot_transpose_average(mat, n: int, p: int) -> sp.csr_array:
    """Average A over every subset of per-slot row/column index swaps.

    Swapping the row and column index of one tensor slot leaves the monomial
    x_rho x_gamma unchanged, so the polynomial is preserved. The result is
    symmetric (the full swap is A^T) and, in addition, invariant under each
    single-slot transpose, which is what the permuted-operator Hessian
    identity relies on. For p = 1 this is just (A + A^T) / 2.
    """
    dim = n**p
    coo = sp.coo_array(mat)
    coo.sum_duplicates()
    if coo.nnz == 0:
        return sp.csr_array((dim, dim))
    r = unflatten_index(coo.row, n, p).reshape(-1, p)
    c = unflatten_index(coo.col, n, p).reshape(-1, p)
    rows, cols = [], []
    for mask in range(2**p):
        swap = np.array([(mask >> t) & 1 for t in range(p)], dtype=bool)
        rows.append(np.where(swap, c, r))
        cols.append(np.where(swap, r, c))
    vals = np.tile(coo.data, 2**p) / 2**p
    out = sp.coo_array(
        (vals, (flatten_index(np.concatenate(rows), n), flatten_index(np.concatenate(cols), n))),
        shape=(dim, dim),
    ).tocsr()
    out.sum_duplicates()
    out.data[np.abs(out.data) < 1e-300] = 0.0
    out.eliminate_zeros()
    return out


def _spectral_norm_sym(mat: sp.csr_array) -> float:
    """Operator norm of a sparse symmetric matrix by power iteration on A^2."""
    dim = mat.shape[0]
    if mat.nnz == 0:
        return 0.0
    if dim <= 64:
        return float(np.linalg.norm(mat.toarray(), 2))
    sq = (mat @ mat).tocsr()
    rng = np.random.default_rng(12345)
    v0 = rng.standard_normal(dim)
    scale = float(abs(sq).sum(axis=1).max()) or 1.0
    rq, _, _, res = _kernels.csr_power(
        sq.indptr, sq.indices, sq.data.astype(float), v0, 200_000, NORM_TOL * scale * 1e-2
    )
    if res > NORM_TOL * scale:
        # slow convergence (tiny spectral gap): defer to Lanczos
        from scipy.sparse.linalg import eigsh

        rq = float(eigsh(sq, k=1, which="LA", return_eigenvectors=False, tol=1e-12)[0])
    return math.sqrt(max(rq, 0.0))


# ---------------------------------------------------------------------------
# homogeneous spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HomogeneousSpec:
    """Sparse symmetric tensor operator defining a degree-2p form.

    ``vals`` hold the normalized operator (norm <= 1); the polynomial the user
    wrote is ``scale`` times the normalized one.
    """

    n: int
    p: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    s: int
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return self.n**self.p

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def degree(self) -> int:
        return 2 * self.p

    def matrix(self) -> sp.csr_array:
        """Normalized operator as a sparse matrix."""
        r = flatten_index(self.rows, self.n) if self.nnz else np.zeros(0, np.int64)
        c = flatten_index(self.cols, self.n) if self.nnz else np.zeros(0, np.int64)
        return sp.csr_array((self.vals, (r, c)), shape=(self.dim, self.dim))

    def hessian_bound(self) -> float:
        """Upper bound on ||H(x)|| over the unit ball, in user units.

        ||M_D|| <= p and ||M_H|| <= 2p(p-1), hence ||H|| <= p(2p-1) ||A||.
        """
        return self.scale * self.p * (2 * self.p - 1)

    @classmethod
    def from_entries(
        cls,
        n: int,
        p: int,
        entries: Iterable[tuple[Sequence[int], Sequence[int], float]],
    ) -> "HomogeneousSpec":
        if n < 1 or p < 1:
            raise InputError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
        rows, cols, vals = [], [], []
        for row, col, val in entries:
            row, col = tuple(int(v) for v in row), tuple(int(v) for v in col)
            if len(row) != p or len(col) != p:
                raise InputError(f"multi-index length must equal p={p}: {row}, {col}")
            if any(not 0 <= v < n for v in row + col):
                raise InputError(f"multi-index out of range 0..{n - 1}: {row}, {col}")
            rows.append(row)
            cols.append(col)
            vals.append(float(val))
        dim = n**p
        if rows:
            r = flatten_index(np.array(rows), n)
            c = flatten_index(np.array(cols), n)
            mat = sp.coo_array((np.array(vals), (r, c)), shape=(dim, dim)).tocsr()
        else:
            mat = sp.csr_array((dim, dim))
        return cls.from_matrix(mat, n, p)

    @classmethod
    def from_matrix(cls, mat, n: int, p: int) -> "HomogeneousSpec":
        """Symmetrize, normalize to norm <= 1 and store as COO."""
        dim = n**p
        mat = sp.csr_array(mat, dtype=float)
        if mat.shape != (dim, dim):
            raise InputError(f"operator shape {mat.shape} != ({dim}, {dim})")
        mat = _slot_transpose_average(mat, n, p)
        norm = _spectral_norm_sym(mat)
        scale = 1.0
        if norm > 1.0:
            scale = norm
            mat = (mat / norm).tocsr()
        coo = mat.tocoo()
        order = np.lexsort((coo.col, coo.row))
        r, c, v = coo.row[order], coo.col[order], coo.data[order]
        s = int(np.diff(mat.indptr).max()) if mat.nnz else 0
        return cls(
            n=n,
            p=p,
            rows=unflatten_index(r, n, p).reshape(-1, p),
            cols=unflatten_index(c, n, p).reshape(-1, p),
            vals=np.ascontiguousarray(v, dtype=float),
            s=max(s, 1),
            scale=scale,
        )


# ---------------------------------------------------------------------------
# inhomogeneous spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Term:
    """coeff * (c . x) * prod_k x^T B_k x, with c optional."""

    coeff: float
    c: np.ndarray | None
    Bs: tuple[np.ndarray, ...] = ()

    @property
    def half_degree(self) -> int:
        return len(self.Bs)

    @property
    def degree(self) -> int:
        return 2 * len(self.Bs) + (1 if self.c is not None else 0)


@dataclass(frozen=True, eq=False)
class InhomogeneousSpec:
    n: int
    terms: tuple[Term, ...] = field(default_factory=tuple)

    @property
    def max_half_degree(self) -> int:
        return max((t.half_degree for t in self.terms), default=0)

    def hessian_bound(self) -> float:
        """Upper bound on ||H(x)|| over the unit ball (|c| = 1, ||B|| <= 1)."""
        total = 0.0
        for t in self.terms:
            m = t.degree
            total += abs(t.coeff) * m * (m - 1)
        return total

    @classmethod
    def from_terms(
        cls,
        n: int,
        terms: Iterable[tuple[float, Sequence[float] | None, Sequence]],
    ) -> "InhomogeneousSpec":
        if n < 1:
            raise InputError(f"need n >= 1, got {n}")
        out = []
        for coeff, c, Bs in terms:
            coeff = float(coeff)
            mats = []
            for B in Bs:
                B = np.asarray(B, dtype=float)
                if B.shape != (n, n):
                    raise InputError(f"B must be {n}x{n}, got {B.shape}")
                B = 0.5 * (B + B.T)
                nb = float(np.linalg.norm(B, 2))
                if nb > 1.0:
                    B = B / nb
                    coeff *= nb
                mats.append(B)
            if c is None:
                if not mats:
                    raise InputError(
                        "constant terms are not representable (convexity is "
                        "unchanged by adding a constant; drop the term)"
                    )
                cvec = None
            else:
                cvec = np.asarray(c, dtype=float).reshape(-1)
                if cvec.shape != (n,):
                    raise InputError(f"c must have length {n}, got {cvec.shape}")
                nc = float(np.linalg.norm(cvec))
                if nc == 0.0:
                    raise InputError("c must be nonzero")
                cvec = cvec / nc
                coeff *= nc
            out.append(Term(coeff=coeff, c=cvec, Bs=tuple(mats)))
        return cls(n=n, terms=tuple(out))


Spec = HomogeneousSpec | InhomogeneousSpec


# ---------------------------------------------------------------------------
# evaluation and derivatives
# ---------------------------------------------------------------------------


def _check_x(spec: Spec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (spec.n,):
        raise InputError(f"point has length {x.size}, spec expects n={spec.n}")
    return x


def eval_homogeneous(spec: HomogeneousSpec, x) -> float:
    x = _check_x(spec, x)
    return 0.5 * spec.scale * _kernels.coo_eval(spec.rows, spec.cols, spec.vals, x)


def _term_parts(term: Term, x: np.ndarray):
    """Value, gradient and Hessian of the quadratic product h = prod x^T B x."""
    n = x.size
    qs = [float(x @ B @ x) for B in term.Bs]
    gs = [2.0 * (B @ x) for B in term.Bs]
    k = len(qs)

    def prod_except(*skip):
        out = 1.0
        for j in range(k):
            if j not in skip:
                out *= qs[j]
        return out

    h = prod_except()
    gh = np.zeros(n)
    Hh = np.zeros((n, n))
    for a in range(k):
        gh += prod_except(a) * gs[a]
        Hh += prod_except(a) * 2.0 * term.Bs[a]
        for b in range(k):
            if b != a:
                Hh += prod_except(a, b) * np.outer(gs[a], gs[b])
    return h, gh, Hh


def eval_inhomogeneous(spec: InhomogeneousSpec, x) -> float:
    x = _check_x(spec, x)
    total = 0.0
    for t in spec.terms:
        lin = 1.0 if t.c is None else float(t.c @ x)
        prod = 1.0
        for B in t.Bs:
            prod *= float(x @ B @ x)
        total += t.coeff * lin * prod
    return total


def evaluate(spec: Spec, x) -> float:
    if isinstance(spec, HomogeneousSpec):
        return eval_homogeneous(spec, x)
    return eval_inhomogeneous(spec, x)


def term_gradient(term: Term, x: np.ndarray) -> np.ndarray:
    """Gradient of one term without its coefficient."""
    h, gh, _ = _term_parts(term, x)
    if term.c is None:
        return gh
    return float(term.c @ x) * gh + h * term.c


def term_hessian(term: Term, x: np.ndarray) -> np.ndarray:
    """Hessian of one term without its coefficient: (c.x) H(h) + grad h c^T + c grad h^T."""
    _, gh, Hh = _term_parts(term, x)
    if term.c is None:
        return Hh
    return float(term.c @ x) * Hh + np.outer(gh, term.c) + np.outer(term.c, gh)


def gradient_analytic(spec: Spec, x) -> np.ndarray:
    x = _check_x(spec, x)
    if isinstance(spec, HomogeneousSpec):
        from .operator_assembly import build_MD, sandwich

        return spec.scale * (sandwich(build_MD(spec), x) @ x)
    g = np.zeros(spec.n)
    for t in spec.terms:
        g += t.coeff * term_gradient(t, x)
    return g


def hessian_analytic(spec: Spec, x) -> np.ndarray:
    """Exact Hessian, symmetrized.

    For homogeneous specs every stored entry is a monomial of degree 2p and is
    differentiated factor by factor; no index-permuted operators are involved,
    which keeps this path independent of ``operator_assembly``.
    """
    x = _check_x(spec, x)
    if isinstance(spec, HomogeneousSpec):
        _, H = monomial_derivatives(spec, x)
        H = spec.scale * H
    else:
        H = np.zeros((spec.n, spec.n))
        for t in spec.terms:
            H += t.coeff * term_hessian(t, x)
    return 0.5 * (H + H.T)


def monomial_derivatives(spec: HomogeneousSpec, x: np.ndarray):
    """Gradient and Hessian of the normalized form by the product rule."""
    n = spec.n
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    if spec.nnz == 0:
        return grad, hess
    idx = np.concatenate([spec.rows, spec.cols], axis=1)  # (nnz, 2p)
    xv = x[idx]
    m = idx.shape[1]
    w = 0.5 * spec.vals
    for u in range(m):
        others = np.prod(np.delete(xv, u, axis=1), axis=1)
        np.add.at(grad, idx[:, u], w * others)
        for v in range(m):
            if v == u:
                continue
            rest = np.prod(np.delete(xv, [u, v], axis=1), axis=1) if m > 2 else np.ones(len(w))
            np.add.at(hess, (idx[:, u], idx[:, v]), w * rest)
    return grad, hess


def finite_difference_oracle(spec: Spec, x, h: float = 1e-4):
    """Central-difference gradient and Hessian built from evaluations only."""
    if h <= 0:
        raise InputError("step h must be positive")
    x = _check_x(spec, x)
    n = spec.n
    f = lambda y: evaluate(spec, y)  # noqa: E731
    eye = np.eye(n) * h
    grad = np.array([(f(x + eye[i]) - f(x - eye[i])) / (2 * h) for i in range(n)])
    hess = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            val = (
                f(x + eye[i] + eye[j])
                - f(x + eye[i] - eye[j])
                - f(x - eye[i] + eye[j])
                + f(x - eye[i] - eye[j])
            ) / (4 * h * h)
            hess[i, j] = hess[j, i] = val
    return grad, hess


# ---------------------------------------------------------------------------
# point sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    C: float
    x_min: float

    @property
    def N(self) -> int:
        return int(self.points.shape[0])

    @property
    def n(self) -> int:
        return int(self.points.shape[1])

    @property
    def C2(self) -> float:
        return self.C**2

    @classmethod
    def from_array(cls, points, floor: float = POINT_FLOOR) -> "PointSet":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0 or pts.shape[0] == 0:
            raise InputError("point set is empty")
        sq = np.einsum("ij,ij->i", pts, pts)
        if np.any(sq > 1.0 + 1e-12):
            raise InputError("all points must satisfy |x| <= 1")
        if np.any(sq < floor):
            raise InputError(f"points with |x|^2 < {floor} are rejected")
        c2 = float(np.sum(sq))
        return cls(points=pts, C=math.sqrt(c2), x_min=float(sq.min()))


def sample_points(
    n: int,
    N: int,
    seed: int | None = 0,
    mode: str = "uniform_ball",
    explicit=None,
    floor: float = POINT_FLOOR,
) -> PointSet:
    """Deterministic point sampler inside the unit ball."""
    if mode == "explicit":
        return PointSet.from_array(explicit, floor)
    if N < 1:
        raise InputError("need at least one point")
    if n < 1:
        raise InputError("need n >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((N, n))
    filled = 0
    while filled < N:
        d = rng.standard_normal(n)
        nd = np.linalg.norm(d)
        if nd == 0.0:
            continue
        d /= nd
        if mode == "on_sphere":
            r = 1.0
        elif mode == "uniform_ball":
            r = rng.random() ** (1.0 / n)
        else:
            raise InputError(f"unknown sampling mode {mode!r}")
        if r * r < floor:
            continue
        out[filled] = r * d
        filled += 1
    return PointSet.from_array(out, floor)


# ---------------------------------------------------------------------------
# JSON formats
# ---------------------------------------------------------------------------


def spec_from_dict(data: dict) -> Spec:
    """Parse the JSON spec format. Raises InputError on malformed content."""
    if not isinstance(data, dict):
        raise InputError("spec must be a JSON object")
    kind = data.get("kind")
    try:
        if kind == "homogeneous":
            n, p = int(data["n"]), int(data["p"])
            entries = [(e["row"], e["col"], e["val"]) for e in data["entries"]]
            return HomogeneousSpec.from_entries(n, p, entries)
        if kind == "inhomogeneous":
            n = int(data["n"])
            terms = [(t.get("coeff", 1.0), t.get("c"), t.get("B", [])) for t in data["terms"]]
            return InhomogeneousSpec.from_terms(n, terms)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed spec: {exc}") from exc
    raise InputError(f"unknown spec kind {kind!r}")


def spec_to_dict(spec: Spec) -> dict:
    if isinstance(spec, HomogeneousSpec):
        return {
            "kind": "homogeneous",
            "n": spec.n,
            "p": spec.p,
            "entries": [
                {"row": r.tolist(), "col": c.tolist(), "val": float(v) * spec.scale}
                for r, c, v in zip(spec.rows, spec.cols, spec.vals)
            ],
        }
    terms = []
    for t in spec.terms:
        item = {"coeff": t.coeff, "B": [B.tolist() for B in t.Bs]}
        if t.c is not None:
            item["c"] = t.c.tolist()
        terms.append(item)
    return {"kind": "inhomogeneous", "n": spec.n, "terms": terms}


def points_from_dict(data: dict, floor: float = POINT_FLOOR) -> PointSet:
    if not isinstance(data, dict) or "points" not in data:
        raise InputError('point file must be an object with a "points" list')
    try:
        pts = np.asarray(data["points"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"malformed points: {exc}") from exc
    if pts.ndim != 2:
        raise InputError("points must be a list of equal-length vectors")
    return PointSet.from_array(pts, floor)
