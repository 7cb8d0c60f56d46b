import numpy as np
import pytest
from hypothesis import given, strategies as st

from convexq import hessian_pipeline as hp
from convexq.errors import DegenerateBetaError, DimensionCapError, InputError
from convexq.poly_core import HomogeneousSpec, InhomogeneousSpec, PointSet, hessian_analytic
from oracles import block_diag, random_homogeneous, random_symmetric

R4 = HomogeneousSpec.from_matrix(np.eye(4), 2, 2)
X2 = HomogeneousSpec.from_entries(1, 1, [((0,), (0,), 2.0)])


def points(rows):
    return PointSet.from_array(np.asarray(rows, float))


def random_points(rng, n, N, r_lo=0.35, r_hi=1.0):
    d = rng.standard_normal((N, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return PointSet.from_array(d * rng.uniform(r_lo, r_hi, (N, 1)))


def extraction_error(mp, spec):
    got = mp.unscaled_blocks()
    return max(
        np.max(np.abs(g - hessian_analytic(spec, x))) for g, x in zip(got, mp.points.points)
    )


# --- point loading ------------------------------------------------------------


def test_load_single_point():
    x = np.array([0.6, 0.8])
    enc = hp.load_points(points([x]))
    assert np.allclose(enc.dense(), np.outer(x, x))


def test_load_two_points():
    enc = hp.load_points(points([[1.0, 0.0], [0.0, 0.5]]))
    want = block_diag([np.diag([1.0, 0.0]), np.diag([0.0, 0.25])]) / 1.25
    assert np.allclose(enc.dense(), want)


def test_load_identical_points():
    x = np.array([0.6, 0.8])
    N = 4
    enc = hp.load_points(points([x] * N))
    assert np.allclose(enc.dense(), block_diag([np.outer(x, x)] * N) / N)


def test_branch_rules():
    one = points([[0.6, 0.8]])
    nb = hp.normalize_branch(hp.load_points(one), one)
    assert nb.branch == "C_ge_1" and np.allclose(nb.enc.dense(), hp.load_points(one).dense())
    two = points([[1.0, 0.0], [0.0, 0.5]])
    nb = hp.normalize_branch(hp.load_points(two), two)
    assert nb.branch == "C_ge_1"
    assert np.allclose(nb.enc.dense(), block_diag([np.diag([1.0, 0.0]), np.diag([0.0, 0.25])]))
    small = points([[0.5, 0.0], [0.0, 0.5]])  # C^2 = 0.5
    nb = hp.normalize_branch(hp.load_points(small), small)
    assert nb.branch == "C_lt_1" and nb.omega == pytest.approx(2.0)
    assert np.allclose(nb.enc.dense(), hp.load_points(small).dense())
    with pytest.raises(InputError):
        hp.normalize_branch(hp.load_points(small), small, force_branch="C_ge_1")


def test_sqrt_examples():
    x = np.array([0.6, 0.8])
    one = points([x])
    s = hp.sqrt_points(hp.normalize_branch(hp.load_points(one), one), one)
    assert np.allclose(s.dense(), 0.5 * np.outer(x, x), atol=1e-10)
    y = np.array([0.3, 0.4])  # |y|^2 = 0.25
    single = points([y])
    s = hp.sqrt_points(hp.NormalizedPoints(hp.load_points(single), 1.0, "C_ge_1"), single)
    # a lone point loads as the unit projector, whatever its length
    assert np.allclose(s.dense(), 0.5 * np.outer(y, y) / 0.25, atol=1e-10)
    two = points([x, y])
    s = hp.sqrt_points(hp.normalize_branch(hp.load_points(two), two), two)
    vals = [np.linalg.eigvalsh(s.dense()[i * 2:(i + 1) * 2, i * 2:(i + 1) * 2]).max() for i in range(2)]
    assert np.allclose(vals, [0.5, 0.25], atol=1e-10)


def test_tensorize_examples():
    x = np.array([0.6, 0.8])
    one = points([x])
    s = hp.sqrt_points(hp.normalize_branch(hp.load_points(one), one), one)
    assert np.allclose(hp.tensorize_projectors(s, 1, 2).dense(), np.eye(2))
    assert np.allclose(hp.tensorize_projectors(s, 2, 2).dense(), 0.5 * np.kron(np.outer(x, x), np.eye(2)), atol=1e-10)
    P = np.outer(x, x)
    want = 0.25 * np.kron(np.kron(P, P), np.eye(2))
    assert np.allclose(hp.tensorize_projectors(s, 3, 2).dense(), want, atol=1e-10)


# --- homogeneous pipeline -------------------------------------------------------


def test_x_squared_one_point():
    mp = hp.multi_point_hessian(X2, points([[0.7]]))
    assert mp.unscaled_blocks()[0] == pytest.approx(np.array([[2.0]]), abs=1e-9)


def test_r4_point():
    mp = hp.multi_point_hessian(R4, points([[1.0, 0.0]]))
    assert np.allclose(mp.unscaled_blocks()[0], [[6.0, 0.0], [0.0, 2.0]], atol=1e-9)


def test_r4_two_points_spectrum():
    mp = hp.multi_point_hessian(R4, points([[1.0, 0.0], [0.0, 1.0]]))
    for H in mp.unscaled_blocks():
        assert np.allclose(sorted(np.linalg.eigvalsh(H)), [2.0, 6.0], atol=1e-9)


def test_single_point_examples():
    assert hp.single_point_hessian(X2, [1.0]).unscaled_blocks()[0] == pytest.approx(np.array([[2.0]]), abs=1e-9)
    H = hp.single_point_hessian(R4, [1.0, 0.0]).unscaled_blocks()[0]
    assert np.allclose(H, [[6.0, 0.0], [0.0, 2.0]], atol=1e-9)
    concave = InhomogeneousSpec.from_terms(1, [(-1.0, None, [[[1.0]]]), (3.0, [1.0], [])])
    assert hp.single_point_hessian(concave, [0.5]).unscaled_blocks()[0] == pytest.approx(np.array([[-2.0]]), abs=1e-9)


def test_full_block_matches_reference(rng):
    _, spec = random_homogeneous(rng, 2, 2, nnz=5)
    pts = random_points(rng, 2, 3)
    mp = hp.multi_point_hessian(spec, pts)
    want = mp.scale_factor * hp.reference_blocks(spec, pts, spec.p)
    assert np.max(np.abs(mp.enc.dense() - want)) <= 1e-10


def test_scale_factor_provenance(rng):
    _, spec = random_homogeneous(rng, 2, 2, nnz=4)
    mp = hp.multi_point_hessian(spec, random_points(rng, 2, 2))
    assert mp.provenance and mp.scale_factor > 0


def test_dimension_cap():
    spec = HomogeneousSpec.from_matrix(np.eye(16), 4, 2)
    with pytest.raises(DimensionCapError):
        hp.multi_point_hessian(spec, PointSet.from_array(np.full((4, 4), 0.4)), cap=32)


@pytest.mark.parametrize("n,p,N", [(1, 1, 3), (2, 2, 4), (3, 2, 8), (2, 3, 5), (4, 2, 2), (3, 3, 2)])
def test_extraction_both_branches(n, p, N):
    rng = np.random.default_rng(n * 100 + p * 10 + N)
    _, spec = random_homogeneous(rng, n, p)
    pts = random_points(rng, n, N)
    branches = ["C_lt_1"] + (["C_ge_1"] if pts.C2 >= 1 else [])
    results = {}
    for br in branches:
        mp = hp.multi_point_hessian(spec, pts, force_branch=br)
        assert extraction_error(mp, spec) <= 1e-8
        results[br] = mp.unscaled_blocks()
    if len(results) == 2:
        for a, b in zip(results["C_lt_1"], results["C_ge_1"]):
            assert np.max(np.abs(a - b)) <= 1e-8


def test_branch_consistency_after_rescaling(rng):
    _, spec = random_homogeneous(rng, 2, 2, nnz=5)
    pts = random_points(rng, 2, 4, 0.6, 1.0)
    lam = 0.4  # pushes C below 1
    small = PointSet.from_array(lam * pts.points)
    assert pts.C2 >= 1 > small.C2
    big = hp.multi_point_hessian(spec, pts).unscaled_blocks()
    low = hp.multi_point_hessian(spec, small).unscaled_blocks()
    for a, b in zip(big, low):
        assert np.max(np.abs(lam ** (2 * (spec.p - 1)) * a - b)) <= 1e-8


# --- beta machinery -----------------------------------------------------------------


def test_beta_examples():
    b = hp.beta_diagonal(points([[0.6, 0.8]]), [1.0, 0.0])
    assert b.target()[0, 0] == pytest.approx(0.36, abs=1e-12)
    b = hp.beta_diagonal(points([[0.0, 0.9]]), [1.0, 0.0])
    assert b.target()[0, 0] == pytest.approx(0.0, abs=1e-12)
    x = np.array([0.6, 0.8])
    b = hp.beta_diagonal(points([x]), x)
    assert b.target()[0, 0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_beta_diagonal_fixtures(seed):
    rng = np.random.default_rng(900 + seed)
    n, N = int(rng.integers(1, 5)), int(rng.integers(1, 9))
    pts = random_points(rng, n, N, 0.1, 1.0)
    c = rng.standard_normal(n)
    c /= np.linalg.norm(c)
    for br in ["C_lt_1"] + (["C_ge_1"] if pts.C2 >= 1 else []):
        got = hp.beta_diagonal(pts, c, force_branch=br).target()
        assert np.max(np.abs(got - np.diag((pts.points @ c) ** 2))) <= 1e-12


# --- inhomogeneous pipeline ------------------------------------------------------


def test_cubic_at_point_eight():
    cube = InhomogeneousSpec.from_terms(1, [(1.0, [1.0], [[[1.0]]])])
    H = hp.multi_point_hessian_inhomo(cube, points([[0.8]])).unscaled_blocks()[0]
    assert H == pytest.approx(np.array([[4.8]]), abs=1e-9)


def test_orthogonal_c_is_degenerate():
    spec = InhomogeneousSpec.from_terms(2, [(1.0, [1.0, 0.0], [np.eye(2).tolist()])])
    with pytest.raises(DegenerateBetaError):
        hp.multi_point_hessian_inhomo(spec, points([[0.0, 0.5], [0.0, 0.9]]))


def test_pure_linear_term_has_zero_hessian():
    lin = InhomogeneousSpec.from_terms(2, [(1.0, [1.0, 0.0], [])])
    H = hp.multi_point_hessian_inhomo(lin, points([[0.3, 0.4]])).unscaled_blocks()[0]
    assert np.allclose(H, 0.0)


def test_sign_of_c_is_irrelevant():
    """The same polynomial written with c or -c yields the same Hessians."""
    B = np.array([[0.8, 0.1], [0.1, -0.4]])
    c = np.array([0.6, 0.8])
    pts = points([[0.5, 0.3], [-0.4, -0.6], [0.2, 0.9]])  # beta changes sign
    a = InhomogeneousSpec.from_terms(2, [(1.0, c, [B])])
    b = InhomogeneousSpec.from_terms(2, [(-1.0, -c, [B])])
    Ha = hp.multi_point_hessian_inhomo(a, pts).unscaled_blocks()
    Hb = hp.multi_point_hessian_inhomo(b, pts).unscaled_blocks()
    for x, u, v in zip(pts.points, Ha, Hb):
        assert np.allclose(u, v, atol=1e-9)
        assert np.allclose(u, hessian_analytic(a, x), atol=1e-9)


def inhomo_fixture(rng, n, kmax):
    terms = []
    for _ in range(int(rng.integers(1, 4))):
        k = int(rng.integers(0, kmax + 1))
        c = None
        if k == 0 or rng.random() < 0.6:
            c = rng.standard_normal(n)
        Bs = [random_symmetric(rng, n, rng.uniform(0.3, 1.0)) for _ in range(k)]
        terms.append((float(rng.uniform(-1.5, 1.5)), c, Bs))
    return InhomogeneousSpec.from_terms(n, terms)


def well_posed_points(rng, spec, N):
    """Sample until every beta = x . c has |beta| >= 0.15 (keeps degrees modest)."""
    cs = [t.c for t in spec.terms if t.c is not None and t.Bs]
    while True:
        pts = random_points(rng, spec.n, N, 0.4, 1.0)
        if all(np.min(np.abs(pts.points @ c)) >= 0.15 for c in cs):
            return pts


@pytest.mark.parametrize("seed", range(8))
def test_inhomogeneous_extraction(seed):
    rng = np.random.default_rng(4000 + seed)
    n = int(rng.integers(1, 4))
    spec = inhomo_fixture(rng, n, 2)
    pts = well_posed_points(rng, spec, int(rng.integers(1, 5)))
    mp = hp.multi_point_hessian_inhomo(spec, pts)
    assert extraction_error(mp, spec) <= 1e-8


# --- properties -------------------------------------------------------------------------


@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 3), N=st.integers(1, 4))
def test_projector_factors_have_unit_spectrum(seed, n, N):
    rng = np.random.default_rng(seed)
    pts = random_points(rng, n, N)
    nb = hp.normalize_branch(hp.load_points(pts), pts)
    proj, factor = hp.exact_projectors(nb, pts)
    lam = np.linalg.eigvalsh(proj.dense() / factor)
    assert np.all(np.minimum(np.abs(lam), np.abs(lam - 1.0)) <= 1e-7)
    assert np.sum(lam > 0.5) == N


@given(seed=st.integers(0, 2**31 - 1), p=st.integers(1, 2), N=st.integers(1, 4))
def test_oracle_equivalence_property(seed, p, N):
    rng = np.random.default_rng(seed)
    _, spec = random_homogeneous(rng, 2, p)
    mp = hp.multi_point_hessian(spec, random_points(rng, 2, N))
    assert extraction_error(mp, spec) <= mp.enc.eps / mp.scale_factor + 1e-8
