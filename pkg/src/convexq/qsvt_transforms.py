"""Even polynomial approximants of x^c and x^-c and their action on encodings.

The target t(x) = a |x|^{+-c} is only prescribed on [delta, 1]. Below delta we
damp it with G(x) = 1 - exp(-(x/tau)^{2m}), which is ~(x/tau)^{2m} near zero
and within eps/4 of 1 from delta on. The damped function is even, vanishes at
0 and is smooth enough that Chebyshev interpolation converges fast; the
interpolant is then truncated to the smallest even degree whose error,
measured on a dense grid of {0} U [delta, 1], meets the request.

Applying a polynomial to a Hermitian block is done through its
eigendecomposition, which is what a QSVT circuit of the same degree produces
on the top-left block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.fft import dct

from . import block_encoding as be
from .errors import ApproximationError, InputError, SingularOperatorError

DEGREE_CAP = 20000
DAMP_ORDER = 4  # m in exp(-(x/tau)^{2m})
GRID_POINTS = 4001
FINE_POINTS = 40001
TRUNC_MARGIN = 0.9  # truncate against 0.9 eps so the fine grid keeps slack
BOUND_TOL = 1e-9
CUTOFF_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class ApproxPoly:
    coeffs: np.ndarray
    degree: int
    domain_floor: float
    target: str  # "pos_power" or "neg_power"
    c: float
    sup_error: float
    requested_eps: float
    max_abs: float

    def __call__(self, x):
        return cheb.chebval(np.asarray(x, dtype=float), self.coeffs)

    def reference(self, x):
        """The ideal function on [delta, 1] (and 0 at the origin)."""
        return _ideal(self.target, self.c, self.domain_floor, np.asarray(x, dtype=float))

    @property
    def bound(self) -> float:
        return 1.0


def identity_poly() -> ApproxPoly:
    """P(x) = x, useful as a no-op transform."""
    return ApproxPoly(np.array([0.0, 1.0]), 1, 1.0, "identity", 1.0, 0.0, 0.0, 1.0)


def _ideal(target: str, c: float, delta: float, x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    nz = ax > 0
    if target == "pos_power":
        out[nz] = 0.5 * ax[nz] ** c
    elif target == "neg_power":
        out[nz] = 0.5 * delta**c * ax[nz] ** (-c)
    elif target == "identity":
        return np.asarray(x, dtype=float)
    else:
        raise InputError(f"unknown target {target!r}")
    return out


def _damped(target: str, c: float, delta: float, eps: float):
    tau = delta / math.log(4.0 / eps) ** (1.0 / (2 * DAMP_ORDER))

    def g(x):
        x = np.asarray(x, dtype=float)
        damp = -np.expm1(-((x / tau) ** (2 * DAMP_ORDER)))
        return _ideal(target, c, delta, x) * damp

    return g


def cheb_coeffs(g, n: int) -> np.ndarray:
    """Chebyshev coefficients of the degree-n interpolant at the n+1 extrema."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    coeffs = dct(g(x), type=1) / n
    coeffs[0] *= 0.5
    coeffs[-1] *= 0.5
    return coeffs


def _check_window(delta: float, eps: float) -> None:
    if not (0 < delta <= 0.5):
        raise InputError(f"delta must lie in (0, 1/2], got {delta}")
    if not (0 < eps <= 0.5):
        raise InputError(f"eps must lie in (0, 1/2], got {eps}")


def _grid(delta: float) -> np.ndarray:
    return np.concatenate([[0.0], np.linspace(delta, 1.0, GRID_POINTS)])


def _build(target: str, c: float, delta: float, eps: float) -> ApproxPoly:
    _check_window(delta, eps)
    if c <= 0:
        raise InputError(f"exponent c must be positive, got {c}")
    g = _damped(target, c, delta, eps)
    check_x = _grid(delta)
    ideal = _ideal(target, c, delta, check_x)
    full = np.cos(np.linspace(0.0, math.pi, 2 * GRID_POINTS + 1))

    def err(coeffs, xs=check_x, ref=ideal):
        return float(np.max(np.abs(cheb.chebval(xs, coeffs) - ref)))

    # interpolate at growing size until the tail is negligible
    n_interp = 64
    while True:
        coeffs = cheb_coeffs(g, n_interp)
        coeffs[1::2] = 0.0
        tail = np.abs(coeffs[-8:]).max()
        if tail < max(eps * 1e-3, 1e-16) or n_interp >= DEGREE_CAP:
            break
        n_interp *= 2
    goal = TRUNC_MARGIN * eps
    if err(coeffs) > goal:
        raise ApproximationError(
            f"{target}(c={c}) cannot reach eps={eps} on [{delta}, 1] below degree {DEGREE_CAP}"
        )

    # smallest even truncation that meets the goal (bisection on the measured error)
    lo, hi = 0, len(coeffs) - 1
    hi -= hi % 2
    while hi - lo > 2:
        mid = (lo + hi) // 2
        mid -= mid % 2
        if mid <= lo:
            break
        if err(coeffs[: mid + 1]) <= goal:
            hi = mid
        else:
            lo = mid
    # bisection can overshoot a non-monotone error curve; walk back if needed
    while hi + 1 < len(coeffs) and err(coeffs[: hi + 1]) > goal:
        hi += 2
    # final check on a much finer grid
    fine_x = np.concatenate([[0.0], np.linspace(delta, 1.0, FINE_POINTS)])
    fine_ref = _ideal(target, c, delta, fine_x)
    while hi + 1 < len(coeffs) and err(coeffs[: hi + 1], fine_x, fine_ref) > eps:
        hi += 2
    final = coeffs[: hi + 1].copy()
    sup = err(final, fine_x, fine_ref)
    if sup > eps:
        raise ApproximationError(f"{target}(c={c}) misses eps={eps} on the fine grid ({sup:.3g})")
    max_abs = float(np.max(np.abs(cheb.chebval(full, final))))
    if max_abs > 1.0 + BOUND_TOL:
        raise ApproximationError(f"{target} approximant exceeds 1 on [-1, 1] (max {max_abs:.6g})")
    return ApproxPoly(final, hi, float(delta), target, float(c), sup, float(eps), max_abs)


def approx_positive_power(c: float, delta: float, eps: float) -> ApproxPoly:
    """Even P with |P - x^c / 2| <= eps on [delta, 1] and |P| <= 1 on [-1, 1]."""
    if not 0 < c <= 1:
        raise InputError(f"positive power needs c in (0, 1], got {c}")
    return _build("pos_power", c, delta, eps)


def approx_negative_power(c: float, delta: float, eps: float) -> ApproxPoly:
    """Even P with |P - (delta^c / 2) x^-c| <= eps on [delta, 1] and |P| <= 1."""
    return _build("neg_power", c, delta, eps)


# ---------------------------------------------------------------------------
# action on encodings
# ---------------------------------------------------------------------------


def _sym_eig(a: be.EncodedOperator) -> tuple[np.ndarray, np.ndarray]:
    mat = a.dense()
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0):
        raise InputError("eigenvalue transforms need a symmetric block")
    return np.linalg.eigh(0.5 * (mat + mat.T))


def apply_polynomial(a: be.EncodedOperator, poly: ApproxPoly) -> be.EncodedOperator:
    """Encode P(A / alpha) with alpha = 1, using the encoding of A deg(P) times."""
    lam, vec = _sym_eig(a)
    vals = poly(lam)
    block = (vec * vals) @ vec.T
    block[np.abs(block) < 1e-15] = 0.0
    d = max(poly.degree, 1)
    eps = poly.sup_error
    if a.eps > 0:
        eps += 4 * d * math.sqrt(a.eps / a.alpha)
    cost = a.cost.repeated(d).plus_ops(2 * d, degree=d, ancillas=a.ancillas + 2)
    return be._make(block, 1.0, eps, a.ancillas + 2, cost, "apply_polynomial")


def pseudo_inverse(a: be.EncodedOperator, kappa: float, eps: float) -> be.EncodedOperator:
    """Invert the block on eigenvalues with |lambda| >= cutoff = (1 - 1e-6) / kappa.

    Returns block' = block^+ / Gamma with Gamma = kappa / (1 - 1e-6), so the
    encoded operator is the pseudo-inverse of alpha * block. Eigenvalues
    below the cutoff are mapped to zero.
    """
    if kappa < 1:
        raise InputError(f"kappa must be >= 1, got {kappa}")
    if not 0 < eps < 1:
        raise InputError(f"eps must lie in (0, 1), got {eps}")
    lam, vec = _sym_eig(a)
    cutoff = (1.0 - CUTOFF_SLACK) / kappa
    keep = np.abs(lam) >= cutoff
    if not keep.any():
        raise SingularOperatorError(
            f"every eigenvalue lies below the inversion cutoff {cutoff:.6g}"
        )
    gamma = kappa / (1.0 - CUTOFF_SLACK)
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / (gamma * lam[keep])
    block = (vec * inv) @ vec.T
    alpha = gamma / a.alpha
    d = int(math.ceil(kappa * math.log(1.0 / eps))) + 1
    cost = a.cost.repeated(d).plus_ops(2 * d, degree=d, ancillas=a.ancillas + 2)
    err = eps * alpha + (gamma / a.alpha) ** 2 * a.eps
    return be._make(block, alpha, err, a.ancillas + 2, cost, "pseudo_inverse")


def approx_table(target: str, c: float, deltas, epss) -> list[dict]:
    """Rows of (target, c, delta, eps, degree, measured_error) for a grid."""
    build = approx_positive_power if target == "pos_power" else approx_negative_power
    rows = []
    for delta in deltas:
        for eps in epss:
            try:
                P = build(c, delta, eps)
                rows.append(
                    dict(target=target, c=c, delta=delta, eps=eps, degree=P.degree,
                         measured_error=P.sup_error, ok=True)
                )
            except ApproximationError:
                rows.append(
                    dict(target=target, c=c, delta=delta, eps=eps, degree=-1,
                         measured_error=float("nan"), ok=False)
                )
    return rows


def fit_degree_constant(rows: list[dict]) -> float:
    """Smallest c0 with degree <= c0 * (1/delta) * log(1/eps) over the rows."""
    ratios = [
        r["degree"] / ((1.0 / r["delta"]) * math.log(1.0 / r["eps"]))
        for r in rows
        if r["ok"]
    ]
    return float(max(ratios)) if ratios else float("nan")


def with_sup_error(poly: ApproxPoly, sup_error: float) -> ApproxPoly:
    return replace(poly, sup_error=float(sup_error))
