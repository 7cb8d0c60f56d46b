"""Encodings of per-point Hessians stacked as a direct sum over sample points.

For a homogeneous form with normalized coefficient tensor A the pipeline is

    Q  = (1/C^2) (+)_i x_i x_i^T            load_points
    Q' = omega (+)_i x_i x_i^T              normalize_branch
    S  = (+)_i (sqrt(omega)/2) |x_i| xh_i xh_i^T      sqrt_points (xh = x/|x|)
    T  = (+)_i S_i^{(x)p-1} (x) I_n         tensorize_projectors
    X  = (M_H + M_D) / (2 s p^2)            one LCU over Theta_jk and M_m
    T (I (x) X) T = scale_factor * (+)_i (xh_i xh_i^T)^{(x)p-1} (x) H(x_i)

with scale_factor = (omega/4)^{p-1} / (2 s p^2 * a), where a is the norm
the coefficients were divided by on load. omega is 1 when C >= 1 (the C^2
subnormalization is amplified away) and 1/C^2 otherwise.

General polynomials are sums of terms coeff * (c.x) * prod_k x^T B_k x. A term
without c is a homogeneous form. A term with c needs the gradient of the
homogeneous part and the diagonal of beta_i = x_i . c, which is later divided
out with a negative-power transform and a classically known sign reflection.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import block_encoding as be
from . import operator_assembly as oa
from . import qsvt_transforms as qt
from .errors import DegenerateBetaError, DimensionCapError, InfeasibleEncodingError, InputError
from .poly_core import HomogeneousSpec, InhomogeneousSpec, PointSet, Term

DEFAULT_EPS = 1e-12
BETA_FLOOR = 1e-4
DIM_CAP = 65536
PROJ_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class MultiPointEncoding:
    enc: be.EncodedOperator
    points: PointSet
    branch: str  # "C_ge_1" or "C_lt_1"
    scale_factor: float
    kind: str
    p: int
    omega: float
    provenance: tuple = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.points.n

    def unscaled_blocks(self) -> list[np.ndarray]:
        """Per-point n x n Hessians recovered by contracting the known projectors."""
        return extract_point_blocks(self.enc.dense(), self.points, self.p, self.scale_factor)


@dataclass(frozen=True)
class NormalizedPoints:
    enc: be.EncodedOperator
    omega: float
    branch: str


# ---------------------------------------------------------------------------
# cached approximants
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=64)
def _pos_poly(c: float, delta: float, eps: float) -> qt.ApproxPoly:
    return qt.approx_positive_power(c, delta, eps)


@functools.lru_cache(maxsize=64)
def _neg_poly(c: float, delta: float, eps: float) -> qt.ApproxPoly:
    return qt.approx_negative_power(c, delta, eps)


def _floor(delta: float) -> float:
    # round down so cache keys repeat and the floor stays a valid lower bound
    return min(float(np.format_float_positional(delta * (1 - 1e-12), 12, trim="-")), 0.5)


# ---------------------------------------------------------------------------
# point loading
# ---------------------------------------------------------------------------


def _check_cap(dim: int, cap: int) -> None:
    if dim > cap:
        raise DimensionCapError(f"encoding dimension {dim} exceeds cap {cap}")


def load_points(points: PointSet) -> be.EncodedOperator:
    """Encode (1/C^2) (+)_j x_j x_j^T from |phi> = (1/C) sum_j |j>|j> x_j."""
    N, n = points.N, points.n
    if N < 1:
        raise InputError("empty point set")
    state = np.zeros((N, N, n))
    for j, x in enumerate(points.points):
        state[j, j] = x
    state /= math.sqrt(points.C2)
    return be.encode_density(state.reshape(-1), trace_out=N)


def normalize_branch(
    enc: be.EncodedOperator, points: PointSet, force_branch: str | None = None
) -> NormalizedPoints:
    """Remove the 1/C^2 factor by amplification when C >= 1; keep it otherwise."""
    C2 = points.C2
    branch = force_branch or ("C_ge_1" if C2 >= 1.0 else "C_lt_1")
    if branch == "C_ge_1":
        if C2 < 1.0:
            raise InputError("C >= 1 branch requested for a point set with C < 1")
        return NormalizedPoints(be.amplify(enc, C2), 1.0, branch)
    if branch != "C_lt_1":
        raise InputError(f"unknown branch {branch!r}")
    return NormalizedPoints(enc, 1.0 / C2, branch)


def sqrt_points(npts: NormalizedPoints, points: PointSet, eps: float = DEFAULT_EPS) -> be.EncodedOperator:
    """omega x x^T -> (sqrt(omega)/2) |x| xh xh^T via the x^(1/2) approximant."""
    delta = npts.omega * points.x_min
    if delta <= 0:
        raise InputError("point norm floor must be positive")
    poly = _pos_poly(0.5, _floor(delta), eps)
    return qt.apply_polynomial(npts.enc, poly)


def exact_projectors(npts: NormalizedPoints, points: PointSet, eps: float = DEFAULT_EPS) -> tuple[be.EncodedOperator, float]:
    """(+)_i xh_i xh_i^T up to a recorded factor (1 - 1e-9).

    Q * P(Q) with P the x^-1 approximant equals (delta/2) (+) xh xh^T, which is
    then amplified by (2/delta)(1 - 1e-9). Returns the encoding and that factor.
    """
    delta = _floor(npts.omega * points.x_min)
    inv = qt.apply_polynomial(npts.enc, _neg_poly(1.0, delta, eps))
    prod = be.product(npts.enc, inv)
    factor = 1.0 - PROJ_SLACK
    return be.amplify(prod, factor * 2.0 / delta), factor


def tensorize_projectors(enc_sqrt: be.EncodedOperator, p: int, n: int) -> be.EncodedOperator:
    """(+)_i S_i^{(x)p-1} (x) I_n from the encoding of (+)_i S_i."""
    if p < 1:
        raise InputError("p must be >= 1")
    N = enc_sqrt.dim // n
    if p == 1:
        return be.encode_identity(N * n)
    rest = be.encode_identity(n ** (p - 1))
    regs = [N] + [n] * p
    out = None
    for k in range(p - 1):
        # S sits on register 1 after the tensor; move it to slot k + 1
        placed = be.tensor(enc_sqrt, rest)
        order = [0] + list(range(2, k + 2)) + [1] + list(range(k + 2, p + 1))
        placed = be.permute_registers(placed, regs, order)
        out = placed if out is None else be.product(out, placed)
    return out


def _lift_left(enc: be.EncodedOperator, N: int, inner: int, n: int) -> be.EncodedOperator:
    """(+)_i Y_i on (N, n) -> (+)_i I_inner (x) Y_i on (N, inner, n)."""
    if inner == 1:
        return enc
    t = be.tensor(enc, be.encode_identity(inner))
    return be.permute_registers(t, [N, n, inner], [0, 2, 1])


def _lift_diag(enc: be.EncodedOperator, inner: int) -> be.EncodedOperator:
    """diag on the point register -> diag (x) I_inner."""
    return be.tensor(enc, be.encode_identity(inner))


# ---------------------------------------------------------------------------
# coefficient-side encodings
# ---------------------------------------------------------------------------


def hessian_lcu(spec: HomogeneousSpec, eps: float) -> be.EncodedOperator:
    """(M_H + M_D) / (2 s p^2) as one LCU of 2p^2 sparse encodings.

    Each Theta_jk enters twice and each M_m once; p zero slots pad the count
    to 2p^2. Every piece is a row/column permutation of A, so one sparsity s
    serves them all.
    """
    p, s = spec.p, spec.s
    parts = []
    for j, k in oa.theta_pairs(p):
        th = be.encode_sparse(oa.build_Theta(spec, j, k), eps, sparsity=s)
        parts += [th, th]
    for m in range(1, p + 1):
        parts.append(be.encode_sparse(oa.build_Mm(spec, m), eps, sparsity=s))
    parts += [be.encode_zero(spec.dim, float(s))] * p
    return be.lcu_sum(parts)


def gradient_lcu(spec: HomogeneousSpec, eps: float) -> be.EncodedOperator:
    """M_D / (s p^2): LCU of the p slot-swapped copies, then a 1/p scale."""
    parts = [be.encode_sparse(oa.build_Mm(spec, m), eps, sparsity=spec.s) for m in range(1, spec.p + 1)]
    return be.scale(be.lcu_sum(parts), 1.0 / spec.p)


def _direct_sum(enc: be.EncodedOperator, N: int) -> be.EncodedOperator:
    return be.tensor(be.encode_identity(N), enc) if N > 1 else enc


# ---------------------------------------------------------------------------
# homogeneous pipeline
# ---------------------------------------------------------------------------


@dataclass
class _Prepared:
    points: PointSet
    npts: NormalizedPoints
    eps: float
    cache: dict = field(default_factory=dict)

    @property
    def sqrt(self) -> be.EncodedOperator:
        # only p >= 2 needs the square-root transform
        if "sqrt" not in self.cache:
            self.cache["sqrt"] = sqrt_points(self.npts, self.points, self.eps)
        return self.cache["sqrt"]

    def T(self, p: int) -> be.EncodedOperator:
        key = ("T", p)
        if key not in self.cache:
            if p == 1:
                self.cache[key] = be.encode_identity(self.points.N * self.points.n)
            else:
                self.cache[key] = tensorize_projectors(self.sqrt, p, self.points.n)
        return self.cache[key]


def _prepare(points: PointSet, eps: float, force_branch: str | None) -> _Prepared:
    npts = normalize_branch(load_points(points), points, force_branch)
    return _Prepared(points, npts, eps)


def _homogeneous_block(spec: HomogeneousSpec, prep: _Prepared) -> tuple[be.EncodedOperator, float]:
    """T (I (x) X) T and its scale factor relative to (+) P (x) H(x_i)."""
    p, N = spec.p, prep.points.N
    X = _direct_sum(hessian_lcu(spec, prep.eps), N)
    T = prep.T(p)
    enc = be.product(be.product(T, X), T)
    sf = (prep.npts.omega / 4.0) ** (p - 1) / (2.0 * spec.s * p * p * spec.scale)
    return enc, sf


def multi_point_hessian(
    spec: HomogeneousSpec,
    points: PointSet,
    eps: float = DEFAULT_EPS,
    force_branch: str | None = None,
    cap: int = DIM_CAP,
) -> MultiPointEncoding:
    if not isinstance(spec, HomogeneousSpec):
        raise InputError("multi_point_hessian expects a homogeneous spec")
    if points.n != spec.n:
        raise InputError(f"points have n={points.n}, spec has n={spec.n}")
    _check_cap(points.N * spec.dim, cap)
    return homogeneous_from_prepared(spec, _prepare(points, eps, force_branch))


def homogeneous_from_prepared(spec: HomogeneousSpec, prep: "_Prepared") -> MultiPointEncoding:
    """The homogeneous pipeline on already loaded points."""
    points = prep.points
    enc, sf = _homogeneous_block(spec, prep)
    prov = (
        ("omega/4 per projector", prep.npts.omega / 4.0),
        ("projector count p-1", spec.p - 1),
        ("1/(2 s p^2)", 1.0 / (2.0 * spec.s * spec.p**2)),
        ("1/coefficient norm", 1.0 / spec.scale),
    )
    return MultiPointEncoding(enc, points, prep.npts.branch, sf, "hessian_homogeneous", spec.p, prep.npts.omega, prov)


def single_point_hessian(spec, x, eps: float = DEFAULT_EPS, **kw) -> MultiPointEncoding:
    """The one-point case: only the top-left corner matters."""
    pts = PointSet.from_array(np.asarray(x, dtype=float).reshape(1, -1))
    if isinstance(spec, HomogeneousSpec):
        return multi_point_hessian(spec, pts, eps, **kw)
    return multi_point_hessian_inhomo(spec, pts, eps=eps, **kw)


# ---------------------------------------------------------------------------
# beta machinery
# ---------------------------------------------------------------------------


def _unit(c) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    nc = np.linalg.norm(c)
    if abs(nc - 1.0) > 1e-9:
        raise InputError(f"c must be a unit vector, got norm {nc:.12g}")
    return c


def _beta_from(npts: NormalizedPoints, c: np.ndarray, N: int, n: int) -> be.EncodedOperator:
    cc = be.encode_density(c, 1)
    C = _direct_sum(cc, N)
    sand = be.product(be.product(C, npts.enc), C)  # (+) omega beta^2 c c^T
    # move the n register in front and trace it out (c c^T has unit trace)
    front = be.permute_registers(sand, [N, n], [1, 0])
    diag = be.trace_leading(front, n)
    return be.reinterpret(diag, diag.alpha / npts.omega)


def beta_diagonal(points: PointSet, c, force_branch: str | None = None) -> be.EncodedOperator:
    """Encoding whose target (alpha * block) is diag(beta_i^2), beta_i = x_i . c."""
    c = _unit(c)
    npts = normalize_branch(load_points(points), points, force_branch)
    return _beta_from(npts, c, points.N, points.n)


def _beta_floor_estimate(beta_enc: be.EncodedOperator, tol: float) -> float:
    from .spectral_test import min_eigenvalue_magnitude

    est = min_eigenvalue_magnitude(beta_enc, tol)
    return max(est - tol, 0.0)


# ---------------------------------------------------------------------------
# general polynomials
# ---------------------------------------------------------------------------


def _term_spec(term: Term, n: int) -> HomogeneousSpec:
    A = functools.reduce(np.kron, term.Bs)
    return HomogeneousSpec.from_matrix(A, n, len(term.Bs))


def _homogeneous_term(term: Term, n: int, prep: _Prepared) -> tuple[be.EncodedOperator, float]:
    """coeff * prod x^T B x = 2 coeff f: block = w * (+) P (x) H_term / coeff."""
    hs = _term_spec(term, n)
    enc, sf = _homogeneous_block(hs, prep)
    return enc, sf / 2.0


def _product_term(
    term: Term, n: int, prep: _Prepared, beta_fix: be.EncodedOperator, beta_min: float, beta_sq: be.EncodedOperator
) -> tuple[be.EncodedOperator, float]:
    """(c.x) h(x) with h = prod x^T B x: block = w * (+) P (x) H_g."""
    hs = _term_spec(term, n)
    k, N = hs.p, prep.points.N
    omega = prep.npts.omega
    inner = n ** (k - 1)
    T = prep.T(k)
    hess, sf = _homogeneous_block(hs, prep)  # sf * P (x) H_f, H_h = 2 H_f
    grad = be.product(be.product(T, _direct_sum(gradient_lcu(hs, prep.eps), N)), T)  # 2 sf P (x) D
    Qlift = _lift_left(prep.npts.enc, N, inner, n)  # omega (+) I (x) x x^T
    Clift = _lift_left(_direct_sum(be.encode_density(term.c, 1), N), N, inner, n)
    grad_c = be.scale(be.product(be.product(grad, Qlift), Clift), 0.5)  # (sf omega / 2) beta P (x) grad_h c^T
    Blift = _lift_diag(be.reinterpret(beta_sq, 1.0), n**k)  # omega beta^2 on the block
    hess_b = be.product(hess, Blift)  # (sf omega / 2) beta^2 P (x) H_h
    parts = [be.reinterpret(e, 1.0) for e in (hess_b, grad_c, be.transpose(grad_c))]
    P = be.lcu_sum(parts)  # (sf omega / 6) beta P (x) H_g
    fixed = be.product(_lift_diag(beta_fix, n**k), P)  # (sf omega beta_min / 12) P (x) H_g
    gain = 1.0 / beta_min
    try:
        fixed = be.amplify(fixed, gain)
    except InfeasibleEncodingError:
        # the block is already too large to amplify by the full 1/beta_min
        gain = 1.0
    return fixed, sf * omega * beta_min * gain / 12.0


def _beta_inverse(
    prep: _Prepared, beta_sq: be.EncodedOperator, beta: np.ndarray, beta_min: float
) -> tuple[be.EncodedOperator, float]:
    """diag(b / (2 beta_i)): x^-1/2 transform of omega beta^2, then signs.

    b = sqrt(delta / omega) for the floor delta actually used, which is at
    most beta_min (the floor is rounded down and capped at 1/2).
    """
    omega = prep.npts.omega
    delta = _floor(omega * beta_min**2)
    mag = qt.apply_polynomial(be.reinterpret(beta_sq, 1.0), _neg_poly(0.5, delta, prep.eps))
    return be.product(be.encode_signs(beta), mag), math.sqrt(delta / omega)


def multi_point_hessian_inhomo(
    spec: InhomogeneousSpec,
    points: PointSet,
    c_access=None,
    eps: float = DEFAULT_EPS,
    force_branch: str | None = None,
    beta_floor: float = BETA_FLOOR,
    beta_min: float | None = None,
    cap: int = DIM_CAP,
) -> MultiPointEncoding:
    """Direct sum of projector (x) Hessian blocks for a sum of terms.

    ``c_access`` overrides the direction of every term carrying one (it must
    then agree with the stored directions); it exists for callers that hold
    the unit vector separately.
    """
    if isinstance(spec, HomogeneousSpec):
        return multi_point_hessian(spec, points, eps, force_branch, cap)
    if points.n != spec.n:
        raise InputError(f"points have n={points.n}, spec has n={spec.n}")
    active = [t for t in spec.terms if t.Bs]
    K = max([len(t.Bs) for t in active], default=1)
    _check_cap(points.N * spec.n**K, cap)
    prep = _prepare(points, eps, force_branch)
    return inhomogeneous_from_prepared(spec, prep, c_access, beta_floor, beta_min)


def inhomogeneous_from_prepared(
    spec: InhomogeneousSpec,
    prep: "_Prepared",
    c_access=None,
    beta_floor: float = BETA_FLOOR,
    beta_min: float | None = None,
) -> MultiPointEncoding:
    """The general-polynomial pipeline on already loaded points."""
    points, eps = prep.points, prep.eps
    n, N = spec.n, points.N
    active = [t for t in spec.terms if t.Bs]
    K = max([len(t.Bs) for t in active], default=1)
    omega = prep.npts.omega

    pieces: list[tuple[be.EncodedOperator, float, float, int]] = []  # enc, w, coeff, k
    beta_cache: dict = {}
    for t in active:
        k = len(t.Bs)
        if t.c is None:
            enc, w = _homogeneous_term(t, n, prep)
        else:
            c = _unit(t.c if c_access is None else c_access)
            beta = points.points @ c
            if np.min(np.abs(beta)) < beta_floor:
                bad = int(np.argmin(np.abs(beta)))
                raise DegenerateBetaError(
                    f"|x_{bad} . c| = {abs(beta[bad]):.3g} is below the floor {beta_floor:g}"
                )
            key = tuple(np.round(c, 15))
            if key not in beta_cache:
                bsq = _beta_from(prep.npts, c, N, n)
                classical = float(np.min(np.abs(beta)))
                bmin = beta_min
                if bmin is None:
                    # lower bound on min beta^2 from the encoding; the classical
                    # value (points and c are known) guards the estimate
                    tol = 1e-3
                    lower = _beta_floor_estimate(bsq, tol)
                    bmin = math.sqrt(lower) if lower > 0 else classical
                bmin = min(bmin, classical)
                if bmin < beta_floor * (1 - 1e-9):
                    raise DegenerateBetaError(f"estimated beta_min {bmin:.3g} below floor {beta_floor:g}")
                binv, beff = _beta_inverse(prep, bsq, beta, bmin)
                beta_cache[key] = (bsq, binv, beff)
            bsq, binv, bmin = beta_cache[key]
            enc, w = _product_term(t, n, prep, binv, bmin, bsq)
        pieces.append((enc, w, t.coeff, k))

    if not pieces:
        zero = be.encode_zero(N * n**K)
        return MultiPointEncoding(zero, points, prep.npts.branch, 1.0, "hessian_inhomogeneous", K, omega, (("no curvature terms", 1.0),))

    # lift every term to K slots with exact projectors in front
    proj, pfac = None, 1.0
    lifted = []
    for enc, w, coeff, k in pieces:
        if k < K:
            if proj is None:
                proj, pfac = exact_projectors(prep.npts, points, eps)
            L = proj
            for _ in range(K - k - 1):
                L = _tensor_points(L, proj, N, n)
            L_full = _lift_right(L, N, n ** (K - k), n**k)
            enc = be.product(L_full, _lift_left(enc, N, n ** (K - k), n**k))
            w *= pfac ** (K - k)
        lifted.append((enc, w, coeff))

    wmin = min(w / abs(coeff) for _, w, coeff in lifted)
    parts, signs = [], []
    for enc, w, coeff in lifted:
        f = abs(coeff) * wmin / w
        parts.append(be.reinterpret(be.scale(enc, min(f, 1.0)), 1.0))
        signs.append(1.0 if coeff > 0 else -1.0)
    total = be.lcu_sum(parts, signs)
    sf = wmin / len(parts)
    prov = (
        ("omega", omega),
        ("terms in LCU", len(parts)),
        ("common weight", wmin),
    )
    return MultiPointEncoding(total, points, prep.npts.branch, sf, "hessian_inhomogeneous", K, omega, prov)


def _tensor_points(a: be.EncodedOperator, b: be.EncodedOperator, N: int, n: int) -> be.EncodedOperator:
    """(+)_i A_i and (+)_i B_i -> (+)_i A_i (x) B_i (shared point register)."""
    da = a.dim // N
    db = b.dim // N
    ta = be.tensor(a, be.encode_identity(db))  # (N, da, db)
    tb = be.permute_registers(be.tensor(b, be.encode_identity(da)), [N, db, da], [0, 2, 1])
    return be.product(ta, tb)


def _lift_right(enc: be.EncodedOperator, N: int, inner: int, n_rest: int) -> be.EncodedOperator:
    """(+)_i Y_i on (N, inner) -> (+)_i Y_i (x) I on (N, inner, n_rest)."""
    return be.tensor(enc, be.encode_identity(n_rest))


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


def extract_point_blocks(block: np.ndarray, points: PointSet, p: int, scale_factor: float) -> list[np.ndarray]:
    """Contract each direct-sum block with xh^{(x)p-1} on both sides and unscale."""
    n, N = points.n, points.N
    D = n**p
    out = []
    for i, x in enumerate(points.points):
        Bi = block[i * D:(i + 1) * D, i * D:(i + 1) * D]
        xh = x / np.linalg.norm(x)
        v = np.ones(1)
        for _ in range(p - 1):
            v = np.kron(v, xh)
        V = np.kron(v.reshape(-1, 1), np.eye(n))  # D x n
        out.append(V.T @ Bi @ V / scale_factor)
    return out


def reference_blocks(spec, points: PointSet, p: int) -> np.ndarray:
    """Dense oracle: (+)_i (xh xh^T)^{(x)p-1} (x) H(x_i) from analytic Hessians."""
    from .poly_core import hessian_analytic

    n, N = points.n, points.N
    D = n**p
    out = np.zeros((N * D, N * D))
    for i, x in enumerate(points.points):
        xh = x / np.linalg.norm(x)
        P = np.ones((1, 1))
        for _ in range(p - 1):
            P = np.kron(P, np.outer(xh, xh))
        out[i * D:(i + 1) * D, i * D:(i + 1) * D] = np.kron(P, hessian_analytic(spec, x))
    return out
