"""Gradient and Hessian operators assembled from A by index permutation.

For a homogeneous form f(x) = 1/2 (x^T)^{(x)p} A x^{(x)p} we build

* M_m: A with tensor slot m and slot p swapped on both row and column indices,
* M_D = sum_m M_m, whose sandwich against x^{(x)p-1} gives D(x) with D(x) x = grad f,
* Theta_jk: a mixed row/column reshuffle of A (see ``build_Theta``),
* M_H = 2 sum_{j != k} Theta_jk, so that sandwich(M_H + M_D, x) = H(x).

Every operator is kept as COO over p-tuple multi-indices so contractions run
in O(nnz * p) without forming x^{(x)p}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import DimensionCapError, InputError
from .poly_core import HomogeneousSpec, flatten_index, unflatten_index

DENSE_CAP = 4096


@dataclass(frozen=True, eq=False)
class BigOperator:
    n: int
    p: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    tag: str

    @property
    def dim(self) -> int:
        return self.n**self.p

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    def matrix(self) -> sp.csr_array:
        r = flatten_index(self.rows, self.n) if self.nnz else np.zeros(0, np.int64)
        c = flatten_index(self.cols, self.n) if self.nnz else np.zeros(0, np.int64)
        return sp.csr_array((self.vals, (r, c)), shape=(self.dim, self.dim))

    def dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.dim > cap:
            raise DimensionCapError(f"dense materialization of dim {self.dim} exceeds cap {cap}")
        return self.matrix().toarray()

    def row_sparsity(self) -> int:
        m = self.matrix()
        return int(np.diff(m.indptr).max()) if m.nnz else 0

    def __add__(self, other: "BigOperator") -> "BigOperator":
        if (self.n, self.p) != (other.n, other.p):
            raise InputError("operator shapes differ")
        return _from_coo(
            self.n,
            self.p,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.vals, other.vals]),
            f"{self.tag}+{other.tag}",
        )

    def scaled(self, factor: float, tag: str | None = None) -> "BigOperator":
        return BigOperator(self.n, self.p, self.rows, self.cols, self.vals * factor, tag or self.tag)

    def to_json(self) -> str:
        """Debug dump as COO triplets over flattened indices."""
        m = self.matrix().tocoo()
        return json.dumps(
            {
                "tag": self.tag,
                "n": self.n,
                "p": self.p,
                "dim": self.dim,
                "triplets": [[int(r), int(c), float(v)] for r, c, v in zip(m.row, m.col, m.data)],
            }
        )


def _from_coo(n, p, rows, cols, vals, tag) -> BigOperator:
    """Merge duplicate entries and drop exact zeros."""
    dim = n**p
    if vals.size == 0:
        empty = np.zeros((0, p), dtype=np.int64)
        return BigOperator(n, p, empty, empty.copy(), np.zeros(0), tag)
    mat = sp.coo_array(
        (vals, (flatten_index(rows, n), flatten_index(cols, n))), shape=(dim, dim)
    ).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    coo = mat.tocoo()
    return BigOperator(
        n,
        p,
        unflatten_index(coo.row, n, p).reshape(-1, p),
        unflatten_index(coo.col, n, p).reshape(-1, p),
        np.ascontiguousarray(coo.data, dtype=float),
        tag,
    )


def as_operator(spec: HomogeneousSpec) -> BigOperator:
    return BigOperator(spec.n, spec.p, spec.rows, spec.cols, spec.vals, "A")


def build_Mm(spec: HomogeneousSpec, m: int) -> BigOperator:
    """Swap slot m with slot p on rows and columns alike (slots are 1-based)."""
    p = spec.p
    if not 1 <= m <= p:
        raise InputError(f"slot m={m} outside 1..{p}")
    perm = np.arange(p)
    perm[m - 1], perm[p - 1] = perm[p - 1], perm[m - 1]
    return BigOperator(
        spec.n, p, spec.rows[:, perm], spec.cols[:, perm], spec.vals.copy(), f"M_{m}"
    )


def build_MD(spec: HomogeneousSpec) -> BigOperator:
    parts = [build_Mm(spec, m) for m in range(1, spec.p + 1)]
    return _from_coo(
        spec.n,
        spec.p,
        np.concatenate([q.rows for q in parts]),
        np.concatenate([q.cols for q in parts]),
        np.concatenate([q.vals for q in parts]),
        "M_D",
    )


def build_Theta(spec: HomogeneousSpec, j: int, k: int) -> BigOperator:
    """Mixed row/column reshuffle of A.

    Theta_jk[(r_1..r_{p-1}, a), (c_1..c_{p-1}, b)] = A[rho, gamma]. The slots
    outside {j, k} take r_1, c_1, ... in ascending order; then rho_j takes the
    last r and gamma_k the last c, while rho_k = a and gamma_j = b. Row and
    column permutations differ, so Theta_jk is a product of two permutations
    with A and keeps its norm and sparsity. For a product operator
    A_1 (x) ... (x) A_p its sandwich is prod_{i != j,k} (x^T A_i x) (A_k x)(x^T A_j).
    """
    p = spec.p
    if p < 2:
        raise InputError("Theta_jk needs p >= 2")
    if not (1 <= j <= p and 1 <= k <= p) or j == k:
        raise InputError(f"need distinct slots in 1..{p}, got j={j}, k={k}")
    others = [i for i in range(p) if i not in (j - 1, k - 1)]
    row_slots = others + [j - 1, k - 1]
    col_slots = others + [k - 1, j - 1]
    return BigOperator(
        spec.n,
        p,
        np.ascontiguousarray(spec.rows[:, row_slots]),
        np.ascontiguousarray(spec.cols[:, col_slots]),
        spec.vals.copy(),
        f"Theta_{j}{k}",
    )


def theta_pairs(p: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(1, p + 1) for k in range(1, p + 1) if j != k]


def build_MH(spec: HomogeneousSpec) -> BigOperator:
    p = spec.p
    if p < 2:
        empty = np.zeros((0, p), dtype=np.int64)
        return BigOperator(spec.n, p, empty, empty.copy(), np.zeros(0), "M_H")
    parts = [build_Theta(spec, j, k) for j, k in theta_pairs(p)]
    return _from_coo(
        spec.n,
        p,
        np.concatenate([q.rows for q in parts]),
        np.concatenate([q.cols for q in parts]),
        2.0 * np.concatenate([q.vals for q in parts]),
        "M_H",
    )


def _check_point(op: BigOperator, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (op.n,):
        raise InputError(f"point length {x.size} does not match n={op.n}")
    return x


def sandwich(op: BigOperator, x) -> np.ndarray:
    """((x^T)^{(x)p-1} (x) I) op (x^{(x)p-1} (x) I) by sparse contraction."""
    x = _check_point(op, x)
    if op.p == 1:
        out = np.zeros((op.n, op.n))
        np.add.at(out, (op.rows[:, 0], op.cols[:, 0]), op.vals)
        return out
    return _kernels.coo_sandwich(op.rows, op.cols, op.vals, x, op.n)


def partial_trace_contract(op: BigOperator, x, cap: int = DENSE_CAP) -> np.ndarray:
    """Tr_{1..p-1}( op . ((x x^T)^{(x)p-1} (x) I_n) ).

    Computed by materializing the projector factor and tracing out the leading
    registers, which is a different code path from ``sandwich``; the two agree
    identically, which the tests use as a cross-check.
    """
    x = _check_point(op, x)
    n, p = op.n, op.p
    if p == 1:
        return op.dense(cap)
    lead = n ** (p - 1)
    proj = np.outer(x, x)
    factor = proj
    for _ in range(p - 2):
        factor = np.kron(factor, proj)
    right = sp.kron(sp.csr_array(factor), sp.identity(n, format="csr"), format="csr")
    if op.dim > cap:
        raise DimensionCapError(f"dim {op.dim} exceeds dense cap {cap}")
    prod = (op.matrix() @ right).toarray().reshape(lead, n, lead, n)
    return np.einsum("iaib->ab", prod)


def hessian_operator(spec: HomogeneousSpec) -> BigOperator:
    """M_H + M_D for the normalized spec."""
    return build_MH(spec) + build_MD(spec)
