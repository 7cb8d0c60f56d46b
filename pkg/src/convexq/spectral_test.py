"""Shift, power method and the convexity verdict.

The encoded operator B = scale_factor * (+)_i P_i (x) H(x_i) has spectrum
scale_factor * (union of the spectra of P_i (x) H(x_i)), and each P_i is a
projector, so the eigenvalues of B are 0 together with scale_factor times the
Hessian eigenvalues. The shifted operator S = (I - B)/2 is PSD with spectrum
in [0, 1], and its top eigenvalue exceeds 1/2 exactly when some sampled
Hessian has a negative eigenvalue.

Unscaling with Lambda (a bound on ||H||) maps the top eigenvalue of S to
m = (1 - lambda_min / Lambda) / 2, the quantity the verdict thresholds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from . import block_encoding as be
from . import hessian_pipeline as hp
from .errors import ConvergenceError, InputError, PreconditionError
from .poly_core import HomogeneousSpec, PointSet, hessian_analytic

DENSE_CHECK_DIM = 4096
RESTARTS = 2
MAX_POWER_ITERS = 200_000


@dataclass(frozen=True)
class PowerResult:
    value: float
    iterations: int
    residual: float
    converged: bool
    budget: int


@dataclass
class ConvexityVerdict:
    verdict: str  # "Convex", "NotConvex" or "Inconclusive"
    lambda_min_est: float
    raw_max_est: float
    tolerance: float
    m_unscaled: float
    per_point: list = field(default_factory=list)
    cost: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "lambda_min_est": self.lambda_min_est,
            "raw_max_est": self.raw_max_est,
            "tolerance": self.tolerance,
            "m_unscaled": self.m_unscaled,
            "per_point": self.per_point,
            "cost": self.cost,
            "detail": self.detail,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# power method
# ---------------------------------------------------------------------------


def iteration_budget(delta: float, dim: int) -> int:
    """(1/delta)(ln(1/delta) + ln(dim)/2), the shape of the power-method bound."""
    return int(math.ceil((1.0 / delta) * (math.log(1.0 / delta) + 0.5 * math.log(max(dim, 2))))) + 1


def _block_of(a) -> sp.csr_array:
    if isinstance(a, be.EncodedOperator):
        return a.block
    if sp.issparse(a):
        return sp.csr_array(a, dtype=float)
    return sp.csr_array(np.atleast_2d(np.asarray(a, dtype=float)))


def power_method_max(a, delta: float, seed: int = 0, max_iter: int | None = None) -> PowerResult:
    """Top eigenvalue of a PSD block to additive accuracy delta.

    Runs from RESTARTS seeded random starts and keeps the largest Rayleigh
    quotient. Every run uses the full iteration budget, which is what the
    accuracy guarantee rests on. A small residual is not a stopping signal:
    it certifies closeness to some eigenvalue, not to the largest, and a
    start lying mostly in a neighbouring eigenvector can show a tiny residual
    while sitting a whole gap below the top. Capping max_iter below the
    budget can leave the estimate unconverged, which is reported, not raised.
    """
    if delta <= 0:
        raise InputError("delta must be positive")
    mat = _block_of(a)
    dim = mat.shape[0]
    budget = iteration_budget(delta, dim)
    cap = min(budget, MAX_POWER_ITERS) if max_iter is None else min(int(max_iter), budget)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(RESTARTS):
        v0 = rng.standard_normal(dim)
        rq, _, it, res = _kernels.csr_power(
            mat.indptr, mat.indices, np.ascontiguousarray(mat.data, dtype=float), v0, cap, -1.0
        )
        # an exactly null block returns after one step with the right answer
        ok = it >= budget or (res == 0.0 and rq == 0.0)
        cand = PowerResult(float(rq), int(it), float(res), bool(ok), budget)
        if best is None or cand.value > best.value:
            best = cand
    return best


def dense_max_eig(a) -> float:
    mat = _block_of(a)
    if mat.shape[0] > DENSE_CHECK_DIM:
        raise InputError("dense eigensolver limited to small operators")
    return float(np.linalg.eigvalsh(mat.toarray()).max())


def min_eigenvalue_magnitude(a, delta: float, seed: int = 0) -> float:
    """Smallest |lambda| of the encoded operator (target units) within delta.

    The power method runs on I - B^2, whose top eigenvalue is 1 - min lambda^2
    for the block B; the square root turns an accuracy of (delta/alpha)^2 on
    that eigenvalue into delta/alpha on |lambda|. The surrogate's top gap is
    of order lambda^2, so for near-singular blocks the iteration budget can
    exceed MAX_POWER_ITERS. The estimate is then replaced by the dense
    eigensolver's value when the block is small enough to diagonalize, and
    the call fails otherwise.
    """
    alpha = a.alpha if isinstance(a, be.EncodedOperator) else 1.0
    mat = _block_of(a)
    if mat.nnz and abs(mat - mat.T).max() > 1e-12:
        raise InputError("min_eigenvalue_magnitude needs a symmetric block")
    dim = mat.shape[0]
    surrogate = (sp.identity(dim, format="csr") - (mat @ mat)).tocsr()
    d_block = min(delta / alpha, 1.0)
    res = power_method_max(surrogate, max(d_block**2, 1e-12), seed)
    est = alpha * math.sqrt(max(1.0 - res.value, 0.0))
    if not res.converged:
        if dim > DENSE_CHECK_DIM:
            raise ConvergenceError("power method did not converge for the smallest eigenvalue")
        est = alpha * float(np.abs(np.linalg.eigvalsh(mat.toarray())).min())
    return est


# ---------------------------------------------------------------------------
# shift and verdict
# ---------------------------------------------------------------------------


def shift_operator(mp: hp.MultiPointEncoding) -> be.EncodedOperator:
    """(I - B)/2 as an LCU of the identity and the negated Hessian encoding."""
    ident = be.encode_identity(mp.enc.dim)
    return be.lcu_sum([ident, be.reinterpret(mp.enc, 1.0)], [1.0, -1.0])


def hessian_norm_bound(spec) -> float:
    return float(spec.hessian_bound())


def _check_norm_bound(spec, points: PointSet, bound: float) -> None:
    """The shift relies on ||H(x)|| <= bound; validate it on the sample."""
    for x in points.points:
        h = np.linalg.eigvalsh(hessian_analytic(spec, x))
        if np.abs(h).max() > bound * (1 + 1e-9) + 1e-12:
            raise PreconditionError(
                f"Hessian norm {np.abs(h).max():.6g} exceeds the bound {bound:.6g}"
            )


def _classify(m: float, tau: float, converged: bool) -> str:
    if not converged:
        return "Inconclusive"
    if m <= 0.5 + tau:
        return "Convex"
    if m > 0.5 + 2 * tau:
        return "NotConvex"
    return "Inconclusive"


def _build(spec, points: PointSet, eps: float, cap: int, force_branch=None) -> hp.MultiPointEncoding:
    if isinstance(spec, HomogeneousSpec):
        return hp.multi_point_hessian(spec, points, eps=eps, force_branch=force_branch, cap=cap)
    return hp.multi_point_hessian_inhomo(spec, points, eps=eps, force_branch=force_branch, cap=cap)


def _estimate(mp: hp.MultiPointEncoding, bound: float, delta: float, seed: int, max_iter=None):
    shift = shift_operator(mp)
    gain = mp.scale_factor * bound
    # delta on the unscaled m corresponds to delta * gain on the raw eigenvalue
    res = power_method_max(shift, max(delta * gain, 1e-12), seed, max_iter)
    m = 0.5 + (res.value - 0.5) / gain
    return shift, res, m


def convexity_verdict(
    spec,
    points: PointSet,
    delta: float = 0.01,
    mode: str = "multi",
    seed: int = 0,
    eps: float | None = None,
    cap: int = hp.DIM_CAP,
    max_iter: int | None = None,
    force_branch: str | None = None,
) -> ConvexityVerdict:
    """Decide PSD-ness of the Hessian at every sampled point.

    The verdict concerns the sample only. ``tolerance`` is reported in units
    of lambda_min / Lambda, so Convex means lambda_min_est >= -tolerance.
    """
    if delta <= 0:
        raise InputError("delta must be positive")
    if points.n != spec.n:
        raise InputError(f"points have n={points.n}, spec has n={spec.n}")
    if mode not in ("multi", "per_point"):
        raise InputError(f"unknown mode {mode!r}")
    bound = hessian_norm_bound(spec)
    if bound <= 0:
        return ConvexityVerdict("Convex", 0.0, 0.5, 4 * delta, 0.5, detail={"note": "no curvature terms"})
    dense_ok = points.N * max(getattr(spec, "dim", spec.n), spec.n) <= DENSE_CHECK_DIM
    if dense_ok:
        _check_norm_bound(spec, points, bound)
    tau = 2.0 * delta
    poly_eps = eps if eps is not None else 1e-9

    if mode == "multi":
        mp = _build(spec, points, poly_eps, cap, force_branch)
        shift, res, m = _estimate(mp, bound, delta, seed, max_iter)
        per = []
        cost = shift.cost.as_dict()
        converged = res.converged
        raw = res.value
        detail = {
            "branch": mp.branch,
            "scale_factor": mp.scale_factor,
            "hessian_bound": bound,
            "power_iterations": res.iterations,
            "power_budget": res.budget,
            "encoding_eps": mp.enc.eps,
            "dimension": mp.enc.dim,
            "verified": dense_ok,
        }
    else:
        per, ms, raws, converged = [], [], [], True
        cost_total = be.Cost()
        for i, x in enumerate(points.points):
            single = PointSet.from_array(x.reshape(1, -1))
            mp = _build(spec, single, poly_eps, cap, force_branch)
            shift, res, m_i = _estimate(mp, bound, delta, seed + i, max_iter)
            converged &= res.converged
            ms.append(m_i)
            raws.append(res.value)
            cost_total = cost_total + shift.cost
            per.append({"index": i, "lambda_min_est": (1.0 - 2.0 * m_i) * bound,
                        "verdict": _classify(m_i, tau, res.converged)})
        j = int(np.argmax(ms))
        m, raw = ms[j], raws[j]
        cost = cost_total.as_dict()
        detail = {"hessian_bound": bound, "verified": dense_ok}

    verdict = _classify(m, tau, converged)
    return ConvexityVerdict(
        verdict=verdict,
        lambda_min_est=1.0 - 2.0 * m,
        raw_max_est=float(min(max(raw, 0.0), 1.0)),
        tolerance=2.0 * tau,
        m_unscaled=m,
        per_point=per,
        cost=cost,
        detail=detail,
    )
