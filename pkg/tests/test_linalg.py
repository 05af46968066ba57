"""Norms, projective metrics, and exterior-power quantities, each checked
against an independent oracle that never calls the code path under test."""

import itertools

import numpy as np
import pytest

from asiplab import linalg
from asiplab.errors import InvalidInputError, SingularityError
from asiplab.linalg import (
    INVERTIBLE,
    POSITIVE,
    GroupElement,
    LogScaledVector,
    ProjectivePoint,
    alignment,
    apply_log_scaled,
    distortion,
    min_expansion,
    operator_norm,
    projective_distance,
    spectral_radius,
    wedge_norm,
)

RNG = np.random.default_rng(20240811)


# ---------------------------------------------------------------------------
# oracles


def brute_force_operator_norm(a, samples=100_000, polish_iters=60):
    """Max of ||a x|| over random unit x, polished by power iteration on the
    best candidate (matvec-only: independent of the SVD route)."""
    d = a.shape[0]
    xs = RNG.standard_normal((samples, d))
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    vals = np.linalg.norm(xs @ a.T, axis=1)
    best = xs[np.argmax(vals)]
    for _ in range(polish_iters):
        best = a.T @ (a @ best)
        best /= np.linalg.norm(best)
    return float(np.linalg.norm(a @ best))


def simplex_min_expansion(a, samples=100_000):
    """Min of ||a x||_1 over random simplex points plus a derivative-free
    descent to a vertex (the objective is linear on the simplex)."""
    d = a.shape[0]
    xs = RNG.dirichlet(np.ones(d), size=samples)
    vals = np.abs(xs @ a.T).sum(axis=1)
    sampled_min = float(vals.min())
    # move all mass onto the cheapest vertex, found by function evaluations only
    vertex_vals = [float(np.abs(a @ e).sum()) for e in np.eye(d)]
    return min(sampled_min, min(vertex_vals)), sampled_min


def explicit_wedge_vector_norm(x, y):
    d = len(x)
    comps = [x[i] * y[j] - x[j] * y[i] for i, j in itertools.combinations(range(d), 2)]
    return float(np.linalg.norm(comps))


def explicit_compound_matrix(a):
    """The C(d,2) x C(d,2) matrix of 2x2 minors representing the action on
    2-vectors."""
    d = a.shape[0]
    pairs = list(itertools.combinations(range(d), 2))
    out = np.empty((len(pairs), len(pairs)))
    for r, (i, j) in enumerate(pairs):
        for c, (k, l) in enumerate(pairs):
            out[r, c] = a[i, k] * a[j, l] - a[i, l] * a[j, k]
    return out


def power_iteration_perron(a, iters=2000):
    v = np.ones(a.shape[0])
    lam = 1.0
    for _ in range(iters):
        w = a @ v
        lam = np.linalg.norm(w)
        v = w / lam
    return float(lam)


# ---------------------------------------------------------------------------
# operator norm


def test_operator_norm_identity():
    g = GroupElement(np.eye(3))
    assert operator_norm(g) == pytest.approx(1.0, abs=1e-14)


def test_operator_norm_diag():
    g = GroupElement(np.diag([2.0, 0.5]))
    assert operator_norm(g) == pytest.approx(2.0, abs=1e-14)


def test_operator_norm_matches_brute_force():
    a = RNG.standard_normal((4, 4))
    assert operator_norm(GroupElement(a)) == pytest.approx(
        brute_force_operator_norm(a), abs=1e-6
    )


def test_operator_norm_positive_is_max_column_sum():
    a = np.abs(RNG.standard_normal((3, 3))) + 0.1
    g = GroupElement(a, kind=POSITIVE)
    # oracle: ||a||_1->1 equals max over simplex, approached by vertex evaluation
    assert operator_norm(g) == pytest.approx(max(np.abs(a @ e).sum() for e in np.eye(3)))


def test_non_finite_entries_rejected():
    with pytest.raises(InvalidInputError):
        GroupElement(np.array([[1.0, np.inf], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# distortion (max of norm and inverse norm)


def test_distortion_identity_and_diag():
    assert distortion(GroupElement(np.eye(4))) == pytest.approx(1.0)
    assert distortion(GroupElement(np.diag([2.0, 0.5]))) == pytest.approx(2.0)


def test_distortion_matches_explicit_inverse():
    a = RNG.standard_normal((4, 4)) + 3.0 * np.eye(4)
    got = distortion(GroupElement(a))
    inv_norm = np.linalg.svd(np.linalg.inv(a), compute_uv=False)[0]
    expected = max(np.linalg.svd(a, compute_uv=False)[0], inv_norm)
    assert got == pytest.approx(expected, abs=1e-8)


def test_distortion_always_at_least_one():
    for _ in range(50):
        a = RNG.standard_normal((3, 3))
        if abs(np.linalg.det(a)) < 1e-6:
            continue
        assert distortion(GroupElement(a)) >= 1.0 - 1e-12


def test_distortion_singular_matrix_raises():
    a = np.eye(3)
    a[2, 2] = 0.0
    with pytest.raises(SingularityError):
        distortion(GroupElement(a))


# ---------------------------------------------------------------------------
# min expansion (positive regime)


def test_min_expansion_identity_and_ones():
    assert min_expansion(GroupElement(np.eye(3), kind=POSITIVE)) == pytest.approx(1.0)
    assert min_expansion(GroupElement(np.ones((2, 2)), kind=POSITIVE)) == pytest.approx(2.0)


def test_min_expansion_matches_simplex_oracle():
    a = np.abs(RNG.standard_normal((3, 3))) + 0.05
    got = min_expansion(GroupElement(a, kind=POSITIVE))
    oracle, sampled_min = simplex_min_expansion(a)
    assert got == pytest.approx(oracle, abs=1e-9)
    # the implementation is a true lower bound for every sampled point
    assert got <= sampled_min + 1e-12


def test_min_expansion_negative_entries_rejected():
    with pytest.raises(InvalidInputError):
        GroupElement(np.array([[1.0, -0.1], [0.2, 1.0]]), kind=POSITIVE)


# ---------------------------------------------------------------------------
# projective distance / alignment


def test_distance_same_point_zero_orthogonal_one():
    x = ProjectivePoint([1.0, 0.0, 0.0])
    y = ProjectivePoint([0.0, 1.0, 0.0])
    assert projective_distance(x, x) == 0.0
    assert projective_distance(x, y) == pytest.approx(1.0, abs=1e-15)
    assert alignment(x, x) == pytest.approx(1.0, abs=1e-15)
    assert alignment(x, y) == pytest.approx(0.0, abs=1e-15)


def test_distance_matches_explicit_minor_oracle():
    for _ in range(200):
        x = RNG.standard_normal(5)
        y = RNG.standard_normal(5)
        px, py = ProjectivePoint(x), ProjectivePoint(y)
        expected = explicit_wedge_vector_norm(
            x / np.linalg.norm(x), y / np.linalg.norm(y)
        )
        assert projective_distance(px, py) == pytest.approx(expected, abs=1e-12)


def test_distance_matches_gram_identity_for_separated_pairs():
    # cross-route check: sqrt(1 - <a,b>^2) agrees away from the parallel set,
    # where the Gram form is numerically fine
    for _ in range(200):
        a = RNG.standard_normal(4)
        b = RNG.standard_normal(4)
        pa, pb = ProjectivePoint(a), ProjectivePoint(b)
        c = abs(np.dot(pa.rep, pb.rep))
        if c > 0.99:
            continue
        gram = np.sqrt(max(0.0, 1.0 - c * c))
        assert projective_distance(pa, pb) == pytest.approx(gram, abs=1e-12)


def test_alignment_matches_arccos_oracle():
    for _ in range(200):
        x = RNG.standard_normal(4)
        y = RNG.standard_normal(4)
        theta = np.arccos(
            np.clip(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)), -1, 1)
        )
        assert alignment(ProjectivePoint(x), ProjectivePoint(y)) == pytest.approx(
            abs(np.cos(theta)), abs=1e-12
        )


def test_alignment_distance_pythagoras():
    for _ in range(500):
        x = ProjectivePoint(RNG.standard_normal(3))
        y = ProjectivePoint(RNG.standard_normal(3))
        a = alignment(x, y)
        d = projective_distance(x, y)
        assert a * a + d * d == pytest.approx(1.0, abs=1e-12)


def test_distance_is_a_metric():
    # symmetry exact, identity of indiscernibles, triangle inequality on
    # random triples
    for d in (3, 5):
        pts = [ProjectivePoint(RNG.standard_normal(d)) for _ in range(60)]
        for x in pts[:20]:
            assert projective_distance(x, x) == 0.0
        for _ in range(2000):
            x, y, z = (pts[i] for i in RNG.integers(0, len(pts), 3))
            dxy = projective_distance(x, y)
            assert dxy == projective_distance(y, x)
            assert dxy <= projective_distance(x, z) + projective_distance(z, y) + 1e-12


def test_point_equality_up_to_sign():
    v = RNG.standard_normal(4)
    assert ProjectivePoint(v) == ProjectivePoint(-v)
    assert hash(ProjectivePoint(v)) == hash(ProjectivePoint(-v))
    assert ProjectivePoint(v) != ProjectivePoint(RNG.standard_normal(4))


def test_point_unit_norm_invariant():
    p = ProjectivePoint(RNG.standard_normal(6) * 37.0)
    assert abs(np.linalg.norm(p.rep) - 1.0) < 1e-12
    q = ProjectivePoint(np.abs(RNG.standard_normal(4)) + 0.1, kind=POSITIVE)
    assert abs(q.rep.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# wedge norm


def test_wedge_norm_identity_and_diag():
    assert wedge_norm(GroupElement(np.eye(3))) == pytest.approx(1.0)
    assert wedge_norm(GroupElement(np.diag([3.0, 2.0, 1.0]))) == pytest.approx(6.0)


def test_wedge_norm_matches_compound_oracle():
    for d in (3, 4, 5):
        a = RNG.standard_normal((d, d))
        got = wedge_norm(GroupElement(a))
        compound = explicit_compound_matrix(a)
        expected = np.linalg.svd(compound, compute_uv=False)[0]
        assert got == pytest.approx(expected, abs=1e-8 * max(1, expected))


def test_wedge_norm_bounded_by_norm_squared():
    for _ in range(200):
        g = GroupElement(RNG.standard_normal((4, 4)))
        assert wedge_norm(g) <= operator_norm(g) ** 2 * (1 + 1e-12)


# ---------------------------------------------------------------------------
# spectral radius


def test_spectral_radius_diag_and_rotation():
    assert spectral_radius(GroupElement(np.diag([2.0, 0.5]))) == pytest.approx(2.0)
    th = np.pi / 4
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert spectral_radius(GroupElement(rot)) == pytest.approx(1.0, abs=1e-12)


def test_spectral_radius_matches_power_iteration_perron():
    a = np.abs(RNG.standard_normal((3, 3))) + 0.2
    got = spectral_radius(GroupElement(a, kind=POSITIVE))
    assert got == pytest.approx(power_iteration_perron(a), abs=1e-8)


def test_spectral_radius_bounds():
    for _ in range(100):
        a = np.abs(RNG.standard_normal((3, 3))) + 0.1
        g = GroupElement(a, kind=POSITIVE)
        rho = spectral_radius(g)
        assert rho <= operator_norm(g) * (1 + 1e-12)
        assert min_expansion(g) <= rho * (1 + 1e-12)
    for _ in range(100):
        g = GroupElement(RNG.standard_normal((4, 4)))
        assert spectral_radius(g) <= operator_norm(g) * (1 + 1e-12)


# ---------------------------------------------------------------------------
# log-scaled application


def test_apply_identity_and_diag_step():
    v = LogScaledVector(ProjectivePoint([1.0, 0.0]))
    w = apply_log_scaled(v, GroupElement(np.eye(2)))
    assert w.log_norm == pytest.approx(0.0, abs=1e-15)
    assert w.direction == v.direction
    w2 = apply_log_scaled(v, GroupElement(np.diag([2.0, 0.5])))
    assert w2.log_norm == pytest.approx(np.log(2.0))
    assert w2.direction == ProjectivePoint([1.0, 0.0])


def test_apply_matches_extended_precision_oracle():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    d, steps = 3, 30
    mats = [RNG.standard_normal((d, d)) for _ in range(steps)]
    x0 = RNG.standard_normal(d)
    x0 /= np.linalg.norm(x0)

    v = LogScaledVector(ProjectivePoint(x0))
    start_rep = v.direction.rep.copy()
    for a in mats:
        v = apply_log_scaled(v, GroupElement(a))

    vec = [mpmath.mpf(float(c)) for c in start_rep]
    for a in mats:
        vec = [sum(mpmath.mpf(float(a[i, j])) * vec[j] for j in range(d)) for i in range(d)]
    log_norm = mpmath.log(mpmath.sqrt(sum(c * c for c in vec)))
    assert v.log_norm == pytest.approx(float(log_norm), abs=1e-9)


def test_apply_dimension_mismatch():
    v = LogScaledVector(ProjectivePoint([1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        apply_log_scaled(v, GroupElement(np.eye(3)))
