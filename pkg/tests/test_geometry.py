import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gmtlab.geometry import (GeometryContext, Plane, plane_distance, project, random_plane,
                             rotation_between, trace_m_min, trace_over_plane, unit_ball_volume)


@pytest.mark.parametrize("m, expected", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3)])
def test_unit_ball_volume(m, expected):
    assert unit_ball_volume(m) == pytest.approx(expected, rel=1e-12)


def test_unit_ball_volume_gamma_formula():
    for m in range(1, 12):
        assert unit_ball_volume(m) == pytest.approx(math.pi ** (m / 2) / math.gamma(m / 2 + 1), rel=1e-12)


def test_context_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        GeometryContext(3, 3)
    with pytest.raises(ValueError):
        GeometryContext(1, 1)
    assert GeometryContext(3, 2).omega_m == pytest.approx(math.pi)


def test_plane_rejects_non_orthonormal():
    with pytest.raises(ValueError, match="orthonormal"):
        Plane([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])


def test_projector_is_idempotent_and_symmetric(rng):
    S = random_plane(5, 2, rng)
    P = S.projector
    assert np.allclose(P @ P, P, atol=1e-10)
    assert np.allclose(P, P.T, atol=1e-10)
    assert np.allclose(S.basis @ S.basis.T, np.eye(2), atol=1e-10)


def test_project_examples():
    S = Plane.coordinate(3, [0, 1])
    tan, nor = project(S, [1.0, 2.0, 3.0])
    assert np.allclose(tan, [1, 2, 0]) and np.allclose(nor, [0, 0, 3])
    tan, nor = project(S, np.zeros(3))
    assert not tan.any() and not nor.any()
    L = Plane([[1 / math.sqrt(2), 1 / math.sqrt(2), 0.0]])
    tan, nor = project(L, [1.0, 0.0, 0.0])
    assert np.allclose(tan, [0.5, 0.5, 0]) and np.allclose(nor, [0.5, -0.5, 0])


def test_plane_distance_examples():
    S = Plane.coordinate(3, [0, 1])
    T = Plane.coordinate(3, [0, 2])
    assert plane_distance(S, S) == pytest.approx(0.0, abs=1e-15)
    assert plane_distance(S, T) == pytest.approx(1.0)
    a = Plane([[1.0, 0.0]])
    b = Plane([[math.cos(0.1), math.sin(0.1)]])
    assert plane_distance(a, b) == pytest.approx(math.sin(0.1), abs=1e-12)


def test_trace_examples():
    A = np.diag([2.0, -1.0, 3.0])
    assert trace_over_plane(np.eye(3), random_plane(3, 2, np.random.default_rng(0))) == pytest.approx(2)
    assert trace_over_plane(A, Plane.coordinate(3, [0, 1])) == pytest.approx(1)
    assert trace_over_plane(A, Plane.coordinate(3, [0, 2])) == pytest.approx(5)
    assert trace_m_min(A, 2) == pytest.approx(1)
    assert trace_m_min(np.eye(4), 3) == pytest.approx(3)


def _random_plane_minimum(A, m, rng, n=100_000):
    """Brute-force min of trace_over_plane: half the budget on Haar planes, half
    on random perturbations of the incumbent with shrinking spread."""
    d = A.shape[0]

    def traces(frames):
        q, _ = np.linalg.qr(frames)
        return q, np.einsum("nik,ij,njk->n", q, A, q)

    q, vals = traces(rng.standard_normal((n // 2, d, m)))
    best_q, best = q[np.argmin(vals)], vals.min()
    rounds = 50
    for k in range(rounds):
        scale = 0.3 * 0.85 ** k
        q, vals = traces(best_q[None] + scale * rng.standard_normal((n // 2 // rounds, d, m)))
        if vals.min() < best:
            best_q, best = q[np.argmin(vals)], vals.min()
    return best


def test_trace_m_min_matches_random_plane_minimum():
    rng = np.random.default_rng(7)
    for _ in range(20):
        B = rng.standard_normal((4, 4))
        A = (B + B.T) / 2
        brute = _random_plane_minimum(A, 2, rng)
        assert brute >= trace_m_min(A, 2) - 1e-10
        assert brute == pytest.approx(trace_m_min(A, 2), abs=1e-3)


def test_trace_m_min_attained_on_eigenplane(rng):
    B = rng.standard_normal((5, 5))
    A = B + B.T
    w, U = np.linalg.eigh(A)
    assert trace_over_plane(A, Plane(U[:, :3].T)) == pytest.approx(trace_m_min(A, 3), abs=1e-10)


def test_complement_orientation():
    S = Plane.coordinate(3, [0, 1])
    assert np.allclose(S.complement().basis, [[0, 0, 1]])


def test_rotation_between(rng):
    for _ in range(10):
        u, v = rng.standard_normal(4), rng.standard_normal(4)
        R = rotation_between(u, v)
        assert np.allclose(R @ R.T, np.eye(4), atol=1e-12)
        assert np.allclose(R @ (u / np.linalg.norm(u)), v / np.linalg.norm(v), atol=1e-12)
    e = np.eye(3)[2]
    R = rotation_between(e, -e)
    assert np.allclose(R @ e, -e) and np.linalg.det(R) == pytest.approx(1)


seeds = st.integers(0, 2 ** 32 - 1)
dims = st.tuples(st.integers(2, 6), st.integers(1, 5)).filter(lambda t: t[1] < t[0])


@given(seeds, dims)
def test_projection_pythagoras(seed, dm):
    d, m = dm
    rng = np.random.default_rng(seed)
    S = random_plane(d, m, rng)
    x = rng.standard_normal(d) * 10
    tan, nor = project(S, x)
    assert abs(tan @ nor) <= 1e-10 * (1 + x @ x)
    assert abs(x @ x - tan @ tan - nor @ nor) <= 1e-10 * (1 + x @ x)


@given(seeds, dims)
def test_plane_distance_triangle(seed, dm):
    d, m = dm
    rng = np.random.default_rng(seed)
    A, B, C = (random_plane(d, m, rng) for _ in range(3))
    assert plane_distance(A, C) <= plane_distance(A, B) + plane_distance(B, C) + 1e-9


@given(seeds, dims)
def test_trace_splits_over_complement(seed, dm):
    d, m = dm
    rng = np.random.default_rng(seed)
    S = random_plane(d, m, rng)
    B = rng.standard_normal((d, d))
    A = B + B.T
    total = trace_over_plane(A, S) + trace_over_plane(A, S.complement())
    assert total == pytest.approx(np.trace(A), abs=1e-10 * (1 + np.abs(A).max()))


@given(seeds, st.integers(2, 6))
def test_trace_m_min_superadditive(seed, d):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, d + 1))
    A, B = (x + x.T for x in rng.standard_normal((2, d, d)))
    assert trace_m_min(A + B, m) >= trace_m_min(A, m) + trace_m_min(B, m) - 1e-9
