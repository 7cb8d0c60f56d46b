"""Block-encoding calculus simulated at the level of the top-left block.

An :class:`EncodedOperator` stands for a unitary whose top-left block is
``block``; the operator it encodes is ``alpha * block`` up to ``eps`` (measured
in the units of that operator). The unitary completion is never formed, so
every composition below costs a sparse matrix operation on the block.

Error propagation is first order and worst case. Cost counters follow a
symbolic model: sparse access charges log(dim) + log^2.5(1/eps) primitive
gates, repeated use of an encoding (amplification, polynomial transforms)
multiplies the counters of the encoding being reused.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleEncodingError, InputError

NORM_TOL = 1e-9
_DENSE_NORM_DIM = 600


# ---------------------------------------------------------------------------
# cost record
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cost:
    oracle_queries: int = 0
    primitive_ops: int = 0
    qsvt_degree_total: int = 0
    ancillas_peak: int = 0
    state_loads: int = 0  # uses of the point-loading unitary

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(
            self.oracle_queries + other.oracle_queries,
            self.primitive_ops + other.primitive_ops,
            self.qsvt_degree_total + other.qsvt_degree_total,
            max(self.ancillas_peak, other.ancillas_peak),
            self.state_loads + other.state_loads,
        )

    def repeated(self, times: int) -> "Cost":
        """Counters for ``times`` sequential uses of the same circuit."""
        times = max(int(times), 1)
        return Cost(
            self.oracle_queries * times,
            self.primitive_ops * times,
            self.qsvt_degree_total,
            self.ancillas_peak,
            self.state_loads * times,
        )

    def plus_ops(self, ops: int = 1, degree: int = 0, ancillas: int = 0) -> "Cost":
        return Cost(
            self.oracle_queries,
            self.primitive_ops + int(ops),
            self.qsvt_degree_total + int(degree),
            max(self.ancillas_peak, int(ancillas)),
            self.state_loads,
        )

    def as_dict(self) -> dict:
        return {
            "oracle_queries": self.oracle_queries,
            "primitive_ops": self.primitive_ops,
            "qsvt_degree_total": self.qsvt_degree_total,
            "ancillas_peak": self.ancillas_peak,
            "state_loads": self.state_loads,
        }


def _ceil(value: float) -> int:
    # C^2 = 2.0000000000000004 should cost two rounds, not three
    return int(math.ceil(value * (1 - 1e-12)))


def log2ceil(value: float) -> int:
    return max(int(math.ceil(math.log2(max(value, 1.0)))), 0)


def precision_ops(eps: float) -> int:
    """The log^2.5(1/eps) term of sparse-access preparation."""
    if eps <= 0:
        return 0
    return int(math.ceil(max(math.log2(1.0 / eps), 0.0) ** 2.5))


# ---------------------------------------------------------------------------
# encoded operator
# ---------------------------------------------------------------------------


def _as_csr(mat) -> sp.csr_array:
    if sp.issparse(mat):
        return sp.csr_array(mat, dtype=float)
    arr = np.atleast_2d(np.asarray(mat, dtype=float))
    return sp.csr_array(arr)


def operator_norm(mat) -> float:
    """Spectral norm of a (possibly sparse) matrix."""
    mat = _as_csr(mat)
    if mat.nnz == 0:
        return 0.0
    if max(mat.shape) <= _DENSE_NORM_DIM:
        return float(np.linalg.norm(mat.toarray(), 2))
    from scipy.sparse.linalg import ArpackError, svds

    try:
        return float(svds(mat, k=1, return_singular_vectors=False, tol=1e-12)[0])
    except ArpackError:  # pragma: no cover - fall back to dense
        return float(np.linalg.norm(mat.toarray(), 2))


def _norm_upper_bound(mat: sp.csr_array) -> float:
    """sqrt(||B||_1 ||B||_inf), a cheap upper bound on the spectral norm."""
    if mat.nnz == 0:
        return 0.0
    a = abs(mat)
    return math.sqrt(float(a.sum(axis=0).max()) * float(a.sum(axis=1).max()))


def _check_feasible(block: sp.csr_array, what: str) -> None:
    if _norm_upper_bound(block) <= 1.0 + NORM_TOL:
        return
    nrm = operator_norm(block)
    if nrm > 1.0 + NORM_TOL:
        raise InfeasibleEncodingError(f"{what}: block norm {nrm:.12g} exceeds 1")


@dataclass(frozen=True, eq=False)
class EncodedOperator:
    """Top-left block, subnormalization, error bound, ancilla count and cost."""

    block: sp.csr_array
    alpha: float
    eps: float
    ancillas: int
    cost: Cost = field(default_factory=Cost)

    @property
    def dim(self) -> int:
        return int(self.block.shape[0])

    def dense(self) -> np.ndarray:
        return self.block.toarray()

    def target(self) -> np.ndarray:
        """The operator this encoding stands for, alpha * block."""
        return self.alpha * self.dense()

    def norm(self) -> float:
        return operator_norm(self.block)

    def summary(self) -> dict:
        return {"alpha": self.alpha, "eps": self.eps, "ancillas": self.ancillas, **self.cost.as_dict()}

    def to_json(self) -> str:
        return json.dumps(self.summary())


def _make(block, alpha, eps, ancillas, cost, what: str) -> EncodedOperator:
    block = _as_csr(block)
    if block.shape[0] != block.shape[1]:
        raise InputError(f"{what}: block must be square, got {block.shape}")
    _check_feasible(block, what)
    return EncodedOperator(block, float(alpha), float(eps), int(ancillas), cost)


# ---------------------------------------------------------------------------
# primitive encodings
# ---------------------------------------------------------------------------


def encode_sparse(op, eps: float, sparsity: int | None = None) -> EncodedOperator:
    """Sparse-access encoding: block = op / s, alpha = s.

    ``op`` is a BigOperator or any square matrix whose entries are bounded by 1
    in magnitude; ``sparsity`` defaults to the measured maximum row count.
    """
    mat = op.matrix() if hasattr(op, "matrix") else _as_csr(op)
    mat = _as_csr(mat)
    if mat.nnz:
        row_nnz = int(np.diff(mat.indptr).max())
        col_nnz = int(np.diff(mat.tocsc().indptr).max())
    else:
        row_nnz = col_nnz = 0
    s = int(sparsity) if sparsity is not None else max(row_nnz, col_nnz, 1)
    if s < 1:
        raise InputError("sparsity must be positive")
    dim = mat.shape[0]
    cost = Cost(
        oracle_queries=1,
        primitive_ops=log2ceil(dim) + precision_ops(eps),
        ancillas_peak=log2ceil(s) + 2,
    )
    try:
        return _make(mat / s, s, eps, log2ceil(s) + 2, cost, "encode_sparse")
    except InfeasibleEncodingError as exc:
        raise InfeasibleEncodingError(f"op/s is not a valid block (s={s}): {exc}") from exc


def encode_density(state, trace_out: int) -> EncodedOperator:
    """Exact encoding of Tr_A |phi><phi| for a unit state on A (x) B."""
    phi = np.asarray(state, dtype=float).reshape(-1)
    if abs(np.linalg.norm(phi) - 1.0) > 1e-9:
        raise InputError(f"state must have unit norm, got {np.linalg.norm(phi):.12g}")
    if trace_out < 1 or phi.size % trace_out:
        raise InputError(f"cannot trace out a {trace_out}-dim register from dim {phi.size}")
    mat = phi.reshape(trace_out, -1)
    rho = mat.T @ mat
    d = phi.size
    anc = log2ceil(trace_out) + 1
    cost = Cost(primitive_ops=2 * log2ceil(d) + 1, ancillas_peak=anc, state_loads=1)
    return _make(rho, 1.0, 0.0, anc, cost, "encode_density")


def encode_identity(dim: int) -> EncodedOperator:
    if dim < 1:
        raise InputError("dimension must be positive")
    return EncodedOperator(sp.identity(dim, format="csr"), 1.0, 0.0, 0, Cost())


def encode_signs(signs: Sequence[float], inner_dim: int = 1) -> EncodedOperator:
    """diag(signs) (x) I: a reflection known classically, hence a unitary itself."""
    signs = np.sign(np.asarray(signs, dtype=float))
    if np.any(signs == 0):
        raise InputError("sign vector must not contain zeros")
    diag = np.repeat(signs, inner_dim)
    cost = Cost(primitive_ops=len(signs))
    return EncodedOperator(sp.diags_array(diag, format="csr"), 1.0, 0.0, 0, cost)


def encode_zero(dim: int, alpha: float = 1.0) -> EncodedOperator:
    """The zero block, used to pad linear combinations."""
    return EncodedOperator(sp.csr_array((dim, dim)), float(alpha), 0.0, 0, Cost())


# ---------------------------------------------------------------------------
# composition rules
# ---------------------------------------------------------------------------


def _check_dims(a: EncodedOperator, b: EncodedOperator, what: str) -> None:
    if a.dim != b.dim:
        raise InputError(f"{what}: dimension mismatch {a.dim} vs {b.dim}")


def product(a: EncodedOperator, b: EncodedOperator) -> EncodedOperator:
    _check_dims(a, b, "product")
    block = (a.block @ b.block).tocsr()
    eps = a.alpha * b.eps + b.alpha * a.eps
    anc = a.ancillas + b.ancillas
    cost = (a.cost + b.cost).plus_ops(1, ancillas=anc)
    return _make(block, a.alpha * b.alpha, eps, anc, cost, "product")


def tensor(a: EncodedOperator, b: EncodedOperator) -> EncodedOperator:
    block = sp.kron(a.block, b.block, format="csr")
    eps = a.alpha * b.eps + b.alpha * a.eps
    anc = a.ancillas + b.ancillas
    cost = (a.cost + b.cost).plus_ops(1, ancillas=anc)
    return _make(block, a.alpha * b.alpha, eps, anc, cost, "tensor")


def lcu_sum(ops: Sequence[EncodedOperator], signs: Sequence[float] | None = None) -> EncodedOperator:
    """(1/m) sum_i sign_i block_i, with alpha multiplied by m.

    All inputs must share alpha; scale them first if they do not. The error
    bound is the sum of the input bounds (every input may be off at once).
    """
    ops = list(ops)
    if not ops:
        raise InputError("lcu_sum needs at least one operator")
    signs = [1.0] * len(ops) if signs is None else [float(s) for s in signs]
    if len(signs) != len(ops) or any(abs(s) != 1.0 for s in signs):
        raise InputError("signs must be a +-1 list matching the operators")
    alpha = ops[0].alpha
    for op in ops[1:]:
        _check_dims(ops[0], op, "lcu_sum")
        if not math.isclose(op.alpha, alpha, rel_tol=1e-12, abs_tol=0.0):
            raise InputError(f"lcu_sum needs equal alphas, got {alpha} and {op.alpha}")
    m = len(ops)
    block = ops[0].block * (signs[0] / m)
    for s, op in zip(signs[1:], ops[1:]):
        block = block + op.block * (s / m)
    cost = Cost()
    for op in ops:
        cost = cost + op.cost
    anc = max(op.ancillas for op in ops) + log2ceil(m)
    cost = cost.plus_ops(2 * log2ceil(m) + m, ancillas=anc)
    eps = float(sum(op.eps for op in ops))
    return _make(block.tocsr(), m * alpha, eps, anc, cost, "lcu_sum")


def scale(a: EncodedOperator, factor: float) -> EncodedOperator:
    """Shrink the encoded operator by ``factor`` <= 1 (alpha is left alone)."""
    if not 0 < factor <= 1:
        raise InputError(f"scale factor must lie in (0, 1], got {factor}")
    if factor == 1:
        return a
    cost = a.cost.plus_ops(1, ancillas=a.ancillas + 1)
    return EncodedOperator((a.block * factor).tocsr(), a.alpha, a.eps * factor, a.ancillas + 1, cost)


def transpose(a: EncodedOperator) -> EncodedOperator:
    return replace(a, block=a.block.T.tocsr(), cost=a.cost.plus_ops(1))


def amplify(a: EncodedOperator, gain: float) -> EncodedOperator:
    """Multiply the block by a known ``gain`` >= 1.

    Uses the encoding ceil(gain) times; the error bound grows by the same
    factor. Fails when the amplified block would no longer be a contraction.
    """
    if gain < 1:
        raise InputError(f"amplification gain must be >= 1, got {gain}")
    if gain == 1:
        return a
    block = (a.block * gain).tocsr()
    try:
        _check_feasible(block, "amplify")
    except InfeasibleEncodingError as exc:
        raise InfeasibleEncodingError(f"cannot amplify by {gain:.6g}: {exc}") from exc
    reps = _ceil(gain)
    cost = a.cost.repeated(reps).plus_ops(_ceil(gain * max(log2ceil(a.dim), 1)))
    return EncodedOperator(block, a.alpha, a.eps * gain, a.ancillas + 1, cost)


def reinterpret(a: EncodedOperator, alpha: float) -> EncodedOperator:
    """Change what the block is said to encode without touching the circuit.

    The block stays fixed and only the bookkeeping scale changes; the error
    bound is carried over in the new units.
    """
    if alpha <= 0:
        raise InputError("alpha must be positive")
    return replace(a, alpha=float(alpha), eps=a.eps * alpha / a.alpha if a.alpha else a.eps)


def permute_registers(
    a: EncodedOperator, reg_dims: Sequence[int], perm: Sequence[int], copies: int = 1
) -> EncodedOperator:
    """Reorder tensor registers inside each of ``copies`` direct-sum blocks.

    ``perm[t]`` names the old register placed at new position t. This is a
    conjugation by SWAP gates, so it is exact and charged per swapped qubit.
    """
    reg_dims = [int(d) for d in reg_dims]
    perm = [int(t) for t in perm]
    if sorted(perm) != list(range(len(reg_dims))):
        raise InputError(f"{perm} is not a permutation of {len(reg_dims)} registers")
    inner = int(np.prod(reg_dims))
    if inner * copies != a.dim:
        raise InputError(f"registers {reg_dims} x {copies} do not match dim {a.dim}")
    if perm == list(range(len(reg_dims))):
        return a
    idx = np.arange(inner).reshape(reg_dims)
    new_of_old = np.empty(inner, dtype=np.int64)
    new_of_old[np.transpose(idx, perm).reshape(-1)] = np.arange(inner)
    full = (np.arange(copies)[:, None] * inner + new_of_old[None, :]).reshape(-1)
    P = sp.csr_array((np.ones(a.dim), (full, np.arange(a.dim))), shape=(a.dim, a.dim))
    block = (P @ a.block @ P.T).tocsr()
    moved = sum(1 for t, q in enumerate(perm) if t != q)
    swaps = moved * max(log2ceil(max(reg_dims)), 1)
    return replace(a, block=block, cost=a.cost.plus_ops(swaps))


def trace_leading(a: EncodedOperator, lead_dim: int, copies: int = 1) -> EncodedOperator:
    """Trace out a leading register of each direct-sum block.

    Valid as a block-encoding step when that register carries a unit-trace
    rank-one factor, which is the only way the pipeline uses it; the trace
    then preserves the block norm. Charged as one use of the encoding per
    traced basis state.
    """
    if a.dim % (copies * lead_dim):
        raise InputError("leading register does not divide the block")
    rest = a.dim // (copies * lead_dim)
    dense = a.dense().reshape(copies, lead_dim, rest, copies, lead_dim, rest)
    out = np.einsum("iaxjay->ixjy", dense).reshape(copies * rest, copies * rest)
    cost = a.cost.repeated(lead_dim).plus_ops(log2ceil(lead_dim))
    return _make(out, a.alpha, a.eps, a.ancillas + log2ceil(lead_dim), cost, "trace_leading")


def linear_combination(
    ops: Sequence[EncodedOperator], weights: Sequence[float]
) -> tuple[EncodedOperator, float]:
    """Encode sum_i w_i block_i up to a returned factor.

    Each block is shrunk by |w_i| / max|w| and the signed LCU is taken, so the
    result has block = factor * sum_i w_i block_i with factor = 1/(m max|w|).
    Zero weights are dropped.
    """
    pairs = [(op, float(w)) for op, w in zip(ops, weights) if w != 0.0]
    if not pairs:
        raise InputError("linear_combination needs a nonzero weight")
    W = max(abs(w) for _, w in pairs)
    parts = [reinterpret(scale(op, abs(w) / W), 1.0) for op, w in pairs]
    signs = [1.0 if w > 0 else -1.0 for _, w in pairs]
    return lcu_sum(parts, signs), 1.0 / (len(pairs) * W)
