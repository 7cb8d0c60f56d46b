"""Newton's method on outer-product iterates.

The iterate x_t is carried as an encoding of x_t x_t^T together with the
known factor r_t relating its block to x_t x_t^T. One step builds

* the gradient outer product grad g(x_t) x_t^T,
* the pseudo-inverse of H(x_t) with kappa from the smallest |eigenvalue|,
* u x^T with u = H^+ grad g, and u u^T = (u x^T)(u x^T)^T / |x|^2,

and combines x x^T - eta (u x^T + x u^T) + eta^2 u u^T as one LCU. The
encoding is then amplified back to a healthy norm. A classical Newton run
from the same start is kept alongside as the truth oracle.

The sign of x_{t+1} is not visible in its outer product. It is fixed by the
sign of x_t . x_{t+1} = |x_t|^2 - eta tr(u x_t^T), read off the trace of the
cross-term encoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import block_encoding as be
from . import hessian_pipeline as hp
from . import qsvt_transforms as qt
from .errors import DegenerateBetaError, InputError, SingularOperatorError
from .poly_core import (
    HomogeneousSpec,
    InhomogeneousSpec,
    PointSet,
    evaluate,
    gradient_analytic,
    hessian_analytic,
)
from .spectral_test import min_eigenvalue_magnitude, power_method_max

TARGET_NORM = 0.5
# iterates with |x|^2 below this are reported as the origin; far below the
# point-set floor so that convergence to a minimizer at 0 is tracked closely
ITERATE_FLOOR = 1e-14


@dataclass(frozen=True)
class NewtonConfig:
    eta: float = 1.0
    max_steps: int = 10
    grad_tol: float = 1e-10
    kappa_cap: float = 1e8
    delta_eig: float = 1e-4
    seed: int = 0
    eps: float = hp.DEFAULT_EPS

    def __post_init__(self):
        if self.eta < 0:
            raise InputError("eta must be non-negative")
        if self.max_steps < 0:
            raise InputError("max_steps must be non-negative")


@dataclass(frozen=True, eq=False)
class Iterate:
    """Encoding of x x^T with block = r * x x^T, plus the sign reference."""

    enc: be.EncodedOperator
    r: float
    x: np.ndarray  # sign-fixed vector read from the encoding

    def outer(self) -> np.ndarray:
        return self.enc.dense() / self.r


@dataclass
class NewtonTrace:
    iterates: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    reason: str = ""
    classical_iterates: list = field(default_factory=list)
    cost: dict = field(default_factory=dict)

    def to_jsonl(self) -> str:
        lines = []
        for rec in self.iterates:
            lines.append(json.dumps(rec))
        lines.append(json.dumps({"converged": self.converged, "diverged": self.diverged,
                                 "reason": self.reason, "cost": self.cost}))
        return "\n".join(lines) + "\n"


def default_eta(spec, x0) -> float:
    """min(1, lambda_min|H(x0)| / (2p)): the step-size bound for one start."""
    h = np.linalg.eigvalsh(hessian_analytic(spec, x0))
    p = spec.p if isinstance(spec, HomogeneousSpec) else max(spec.max_half_degree, 1)
    return float(min(1.0, np.abs(h).min() / (2 * p))) if np.abs(h).min() > 0 else 1.0


# ---------------------------------------------------------------------------
# iterate loading
# ---------------------------------------------------------------------------


def encode_iterate(x) -> Iterate:
    x = np.asarray(x, dtype=float).reshape(-1)
    nx = float(x @ x)
    if nx > 1.0 + 1e-12:
        raise InputError("iterates must stay in the unit ball")
    if nx < ITERATE_FLOOR:
        raise InputError("iterate too close to the origin to load")
    enc = hp.load_points(PointSet.from_array(x.reshape(1, -1), floor=ITERATE_FLOOR))  # x x^T / |x|^2
    return Iterate(enc, 1.0 / nx, x)


def _point(it: Iterate) -> PointSet:
    return PointSet.from_array(it.x.reshape(1, -1), floor=ITERATE_FLOOR)


def _prep(it: Iterate, eps: float) -> hp._Prepared:
    """Use the iterate encoding directly as omega x x^T with omega = r."""
    npts = hp.NormalizedPoints(be.reinterpret(it.enc, 1.0), it.r, "C_lt_1")
    return hp._Prepared(_point(it), npts, eps)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def _reduce(enc: be.EncodedOperator, n: int, p: int) -> be.EncodedOperator:
    """Trace the leading (xh xh^T)^{(x)p-1} factor away, leaving an n x n block."""
    return be.trace_leading(enc, n ** (p - 1)) if p > 1 else enc


def _grad_h_outer(hs: HomogeneousSpec, prep: hp._Prepared) -> tuple[be.EncodedOperator, float]:
    """block = factor * grad f(x) x^T for a homogeneous form f."""
    n, k = hs.n, hs.p
    omega = prep.npts.omega
    T = prep.T(k)
    G = be.product(be.product(T, hp.gradient_lcu(hs, prep.eps)), T)
    Q = hp._lift_left(prep.npts.enc, 1, n ** (k - 1), n)
    enc = _reduce(be.product(G, Q), n, k)
    factor = (omega / 4.0) ** (k - 1) * omega / (hs.s * k * k * hs.scale)
    return enc, factor


def gradient_outer_encoding(spec, it: Iterate, eps: float = hp.DEFAULT_EPS, beta_floor: float = hp.BETA_FLOOR) -> tuple[be.EncodedOperator, float]:
    """Encoding with block = factor * grad g(x) x^T.

    For terms carrying c the product rule gives beta grad h + h c with
    beta = x . c; h c x^T is assembled as (c x^T)(grad h x^T) / (2k) by
    Euler's identity for the degree-2k form h, and c x^T = (c c^T)(x x^T)/beta.
    beta is a known scalar per iterate and only enters the weights.
    """
    n = spec.n
    prep = _prep(it, eps)
    omega = prep.npts.omega
    x = it.x
    if isinstance(spec, HomogeneousSpec):
        return _grad_h_outer(spec, prep)

    ops, weights = [], []
    for t in spec.terms:
        k = len(t.Bs)
        if t.c is None:
            enc, fac = _grad_h_outer(hp._term_spec(t, n), prep)
            ops.append(enc)
            weights.append(2.0 * t.coeff / fac)
            continue
        beta = float(x @ t.c)
        if abs(beta) < beta_floor:
            raise DegenerateBetaError(f"|x . c| = {abs(beta):.3g} is below the floor {beta_floor:g}")
        CQ = be.product(be.encode_density(t.c, 1), prep.npts.enc)  # omega beta c x^T
        if k == 0:
            ops.append(CQ)
            weights.append(t.coeff / (omega * beta))
            continue
        gh, fac = _grad_h_outer(hp._term_spec(t, n), prep)  # fac/2 * grad h x^T
        ops.append(gh)
        weights.append(t.coeff * beta * 2.0 / fac)
        ops.append(be.product(CQ, gh))  # (fac/2) omega beta 2k h c x^T
        weights.append(t.coeff * 2.0 / (fac * omega * beta * 2 * k))
    if not ops:
        raise InputError("polynomial has no terms")
    enc, f = be.linear_combination(ops, weights)
    return enc, f


def hessian_encoding(spec, it: Iterate, eps: float = hp.DEFAULT_EPS) -> tuple[be.EncodedOperator, float]:
    """n x n encoding with block = factor * H(x)."""
    prep = _prep(it, eps)
    if isinstance(spec, HomogeneousSpec):
        mp = hp.homogeneous_from_prepared(spec, prep)
    else:
        mp = hp.inhomogeneous_from_prepared(spec, prep)
    return _reduce(mp.enc, spec.n, mp.p), mp.scale_factor


def hessian_inverse_encoding(spec, it: Iterate, cfg: NewtonConfig) -> tuple[be.EncodedOperator, float, float]:
    """block = factor * H(x)^+ on the well-conditioned subspace; returns kappa too."""
    H, hf = hessian_encoding(spec, it, cfg.eps)
    Hs = be.reinterpret(H, 1.0)
    lam = min_eigenvalue_magnitude(Hs, cfg.delta_eig, cfg.seed)
    floor = lam - cfg.delta_eig
    if floor <= 0 or 1.0 / floor > cfg.kappa_cap:
        raise SingularOperatorError(
            f"Hessian is singular at the inversion cutoff: smallest |eigenvalue| "
            f"{lam / hf:.3g} with kappa cap {cfg.kappa_cap:g}"
        )
    kappa = max(1.0 / floor, 1.0)
    inv = qt.pseudo_inverse(Hs, kappa, min(cfg.eps * 100, 1e-3))
    gamma = kappa / (1.0 - qt.CUTOFF_SLACK)
    # block = (hf H)^+ / gamma = H^+ / (hf gamma)
    return inv, 1.0 / (hf * gamma), kappa


def _norm_sq(it: Iterate, seed: int) -> float:
    """|x|^2 from the top eigenvalue of the iterate encoding (rank one)."""
    res = power_method_max(it.enc, 1e-12, seed)
    return res.value / it.r


def newton_step(spec, it: Iterate, cfg: NewtonConfig, eta: float | None = None) -> tuple[Iterate | None, dict]:
    """One update; returns (next iterate or None for the origin, diagnostics)."""
    eta = cfg.eta if eta is None else eta
    G, gf = gradient_outer_encoding(spec, it, cfg.eps)
    Hinv, hf, kappa = hessian_inverse_encoding(spec, it, cfg)
    U = be.product(Hinv, G)  # a * u x^T
    a = gf * hf
    nx2 = _norm_sq(it, cfg.seed)
    UU = be.product(U, be.transpose(U))  # a^2 |x|^2 u u^T
    X = it.enc  # r * x x^T
    if eta == 0:
        ops, weights = [X], [1.0 / it.r]
    else:
        ops = [X, U, be.transpose(U), UU]
        weights = [1.0 / it.r, -eta / a, -eta / a, eta * eta / (a * a * nx2)]
    nxt, f = be.linear_combination(ops, weights)
    cross = float(np.trace(U.dense())) / a  # x . u
    dot = nx2 - eta * cross  # x_t . x_{t+1}
    info = {"kappa": kappa, "Gamma": kappa / (1.0 - qt.CUTOFF_SLACK), "x_norm_sq": nx2}
    norm = power_method_max(be.reinterpret(nxt, 1.0), 1e-12, cfg.seed).value
    if norm / f < ITERATE_FLOOR:
        return None, info
    gain = TARGET_NORM / norm
    nxt = be.amplify(nxt, gain) if gain > 1 else be.scale(nxt, gain)
    r = f * gain
    outer = nxt.dense() / r
    lam, vec = np.linalg.eigh(0.5 * (outer + outer.T))
    v = vec[:, -1] * math.sqrt(max(lam[-1], 0.0))
    if v @ it.x * dot < 0:
        v = -v
    info["gamma_growth"] = 1.0 / (r * it.r) if it.r else float("nan")
    return Iterate(nxt, r, v), info


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def classical_newton_oracle(spec, x0, cfg: NewtonConfig) -> list[np.ndarray]:
    """Dense Newton with analytic derivatives."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    out = [x.copy()]
    for _ in range(cfg.max_steps):
        g = gradient_analytic(spec, x)
        if np.linalg.norm(g) <= cfg.grad_tol:
            break
        H = hessian_analytic(spec, x)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise SingularOperatorError("classical Newton hit a singular Hessian") from exc
        x = x - cfg.eta * step
        out.append(x.copy())
    return out


def _record(t, x, spec, info=None) -> dict:
    g = gradient_analytic(spec, x)
    rec = {
        "t": t,
        "x": [float(v) for v in x],
        "outer": np.outer(x, x).tolist(),
        "grad_norm": float(np.linalg.norm(g)),
        "f": float(evaluate(spec, x)),
    }
    if info:
        rec.update({k: float(v) for k, v in info.items()})
    return rec


def newton_run(spec, x0, cfg: NewtonConfig | None = None) -> NewtonTrace:
    cfg = cfg or NewtonConfig()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (spec.n,):
        raise InputError(f"start point must have length {spec.n}")
    trace = NewtonTrace()
    try:
        trace.classical_iterates = [x.tolist() for x in classical_newton_oracle(spec, x0, cfg)]
    except SingularOperatorError:
        trace.classical_iterates = []
    it = encode_iterate(x0)
    trace.iterates.append(_record(0, it.x, spec))
    total = be.Cost()
    for t in range(1, cfg.max_steps + 1):
        if trace.iterates[-1]["grad_norm"] <= cfg.grad_tol:
            trace.converged = True
            break
        nxt, info = newton_step(spec, it, cfg)
        total = total + it.enc.cost
        if nxt is None:
            zero = np.zeros(spec.n)
            rec = _record(t, zero, spec, info)
            trace.iterates.append(rec)
            trace.converged = rec["grad_norm"] <= cfg.grad_tol
            trace.reason = "reached the origin" + ("" if trace.converged else " with nonzero gradient")
            break
        trace.iterates.append(_record(t, nxt.x, spec, info))
        if nxt.x @ nxt.x > 1.0 + 1e-12:
            trace.diverged = True
            trace.reason = "iterate left the unit ball"
            break
        if not np.all(np.isfinite(nxt.x)):
            trace.diverged = True
            trace.reason = "non-finite iterate"
            break
        it = nxt
    else:
        trace.converged = trace.iterates[-1]["grad_norm"] <= cfg.grad_tol
    if trace.iterates[-1]["grad_norm"] <= cfg.grad_tol:
        trace.converged = True
    if trace.diverged:
        trace.converged = False
    trace.cost = total.as_dict()
    return trace
