import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from urnclt.blocks import BlockKind, JordanBlockSpec, nilpotent_generator, rotation_generator
from urnclt.errors import (DefectiveOrClustered, InputError, NotStochastic, UnstableA)
from urnclt.linalg import (StochasticMatrix, block_exponential, eigen_decompose, is_irreducible,
                           solve_lyapunov, stationary_distribution)

from conftest import random_stochastic


def lyapunov_quadrature(A, Q):
    """Numerical integral of exp(-A's) Q exp(-As) over [0, inf)."""
    def f(s):
        E = scipy.linalg.expm(-A * s)
        return E.T @ Q @ E
    val, _ = quad_vec(f, 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return val


# stationary distribution

def test_stationary_doubly_stochastic_is_uniform():
    R = [[.5, .5, 0], [0, .5, .5], [.5, 0, .5]]
    np.testing.assert_allclose(stationary_distribution(R), [1 / 3] * 3, atol=1e-14)


def test_stationary_symmetric_two_color():
    np.testing.assert_allclose(stationary_distribution([[0.6, 0.4], [0.4, 0.6]]), [0.5, 0.5], atol=1e-14)


def test_stationary_against_two_by_two_elimination():
    R = np.array([[0.5, 0.5], [0.25, 0.75]])
    # pi_0 r01 = pi_1 r10 and pi_0 + pi_1 = 1
    r01, r10 = R[0, 1], R[1, 0]
    oracle = np.array([r10, r01]) / (r01 + r10)
    np.testing.assert_allclose(oracle, [1 / 3, 2 / 3], atol=1e-15)
    np.testing.assert_allclose(stationary_distribution(R), oracle, atol=1e-14)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_stationary_is_fixed_probability_vector(K, seed):
    R = random_stochastic(np.random.default_rng(seed), K)
    pi = stationary_distribution(R)
    assert abs(pi.sum() - 1) <= 1e-12
    assert pi.min() > 0
    assert np.max(np.abs(pi @ R - pi)) <= 1e-10


# stochastic matrix validation

def test_irreducibility_detection():
    assert is_irreducible(np.array([[0.5, 0.5], [0.5, 0.5]]))
    assert not is_irreducible(np.array([[1.0, 0.0], [0.5, 0.5]]))
    assert is_irreducible(np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], float))


@pytest.mark.parametrize("R", [
    [[0.6, 0.5], [0.4, 0.6]],
    [[1.1, -0.1], [0.5, 0.5]],
    [[0.5, 0.5]],
])
def test_invalid_stochastic_matrices(R):
    with pytest.raises(InputError):
        StochasticMatrix.from_array(R)


def test_row_sum_violation_is_not_stochastic():
    with pytest.raises(NotStochastic):
        StochasticMatrix.from_array([[0.6, 0.41], [0.4, 0.6]])


# Lyapunov

def test_lyapunov_scalar():
    np.testing.assert_allclose(solve_lyapunov([[0.3]], [[1.0]]), [[1 / 0.6]], rtol=1e-14)


def test_lyapunov_diagonal_entrywise_and_quadrature():
    A = np.diag([0.3, 0.4])
    Q = np.ones((2, 2))
    expected = np.array([[1 / 0.6, 1 / 0.7], [1 / 0.7, 1 / 0.8]])
    S = solve_lyapunov(A, Q)
    np.testing.assert_allclose(S, expected, rtol=1e-13)
    np.testing.assert_allclose(lyapunov_quadrature(A, Q), expected, atol=1e-8)


def test_lyapunov_rotation_block_matches_quadrature():
    B = JordanBlockSpec("complex", 0.2, 0.3, 1, (1, 2)).matrix()
    A = 0.5 * np.eye(2) - B
    Q = np.eye(2)
    np.testing.assert_allclose(solve_lyapunov(A, Q), lyapunov_quadrature(A, Q), atol=1e-8)


def test_lyapunov_rejects_unstable():
    with pytest.raises(UnstableA):
        solve_lyapunov(np.diag([0.3, -0.1]), np.eye(2))


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_lyapunov_properties(p, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(p, p)) * 0.3 + np.eye(p)
    assume(np.linalg.eigvals(A).real.min() > 0.05)
    L = rng.normal(size=(p, p))
    Q = L @ L.T
    S = solve_lyapunov(A, Q)
    np.testing.assert_allclose(S, S.T, atol=0)
    assert np.linalg.eigvalsh(S).min() >= -1e-10 * max(1.0, np.abs(S).max())
    assert np.max(np.abs(A.T @ S + S @ A - Q)) <= 1e-10 * max(np.abs(Q).max(), 1e-300)
    # second oracle: scipy solves a X + X a^H = q
    np.testing.assert_allclose(S, scipy.linalg.solve_continuous_lyapunov(A.T, Q), atol=1e-9 * np.abs(S).max())


# block exponential

@pytest.mark.parametrize("d", [1, 2, 4])
def test_block_exponential_scalar_case(d):
    np.testing.assert_allclose(block_exponential(0.7, 0.0, 0.0, d), math.exp(0.7) * np.eye(2 * d), rtol=1e-15)
    np.testing.assert_allclose(block_exponential(0.7, 0.0, 0.0, d, kind="real"), math.exp(0.7) * np.eye(d), rtol=1e-15)


def test_block_exponential_quarter_turn_is_rotation_generator():
    np.testing.assert_allclose(block_exponential(0.0, math.pi / 2, 0.0, 1), rotation_generator(1), atol=1e-15)


def test_block_exponential_matches_power_series():
    d = 3
    G = 0.1 * np.eye(2 * d) + 0.2 * rotation_generator(d) + 0.5 * nilpotent_generator(BlockKind.COMPLEX, d)
    series = np.zeros_like(G)
    term = np.eye(2 * d)
    for m in range(41):
        series += term
        term = term @ G / (m + 1)
    np.testing.assert_allclose(block_exponential(0.1, 0.2, 0.5, d), series, atol=1e-12)


@given(st.floats(-1, 1), st.floats(-3, 3), st.floats(-2, 2), st.floats(-1, 1), st.floats(-3, 3),
       st.floats(-2, 2), st.integers(1, 4))
def test_block_exponential_group_law(a1, a2, a3, b1, b2, b3, d):
    E = block_exponential(a1, a2, a3, d) @ block_exponential(b1, b2, b3, d)
    F = block_exponential(a1 + b1, a2 + b2, a3 + b3, d)
    np.testing.assert_allclose(E, F, atol=1e-11 * max(1.0, np.abs(F).max()))
    inv = block_exponential(-a1, -a2, -a3, d)
    np.testing.assert_allclose(block_exponential(a1, a2, a3, d) @ inv, np.eye(2 * d), atol=1e-10)


@given(st.floats(-1, 1), st.floats(-3, 3), st.floats(-2, 2), st.integers(1, 4))
def test_block_exponential_matches_expm(k1, k2, k3, d):
    G = k1 * np.eye(2 * d) + k2 * rotation_generator(d) + k3 * nilpotent_generator(BlockKind.COMPLEX, d)
    np.testing.assert_allclose(block_exponential(k1, k2, k3, d), scipy.linalg.expm(G), atol=1e-11 * math.exp(abs(k1)) * (1 + abs(k3)) ** d)


def test_block_exponential_real_rejects_rotation():
    with pytest.raises(InputError):
        block_exponential(0.0, 0.1, 0.0, 2, kind="real")


# eigen decomposition

def test_eigen_two_color():
    spec = eigen_decompose([[0.6, 0.4], [0.4, 0.6]])
    (b,) = spec.blocks
    assert b.kind is BlockKind.REAL
    assert b.lambda_r == pytest.approx(0.2, abs=1e-14)
    np.testing.assert_allclose(spec.combination[:, 1], [1, -1], atol=1e-14)


def test_eigen_circulant_pair_modulus():
    a, b, c = 0.2, 0.5, 0.3
    R = np.array([[a, b, c], [c, a, b], [b, c, a]])
    spec = eigen_decompose(R)
    (blk,) = spec.blocks
    assert blk.kind is BlockKind.COMPLEX
    # det of a circulant = a^3 + b^3 + c^3 - 3abc = 1 * |lambda|^2
    det = a**3 + b**3 + c**3 - 3 * a * b * c
    assert abs(blk.eigenvalue) ** 2 == pytest.approx(det, abs=1e-13)
    assert abs(blk.eigenvalue) ** 2 == pytest.approx(0.07, abs=1e-13)
    np.testing.assert_allclose(spec.reconstruct(), R, atol=1e-12)


def test_eigen_rows_equal_pi():
    pi = np.array([0.2, 0.3, 0.5])
    spec = eigen_decompose(np.tile(pi, (3, 1)))
    assert all(abs(b.lambda_r) < 1e-12 and b.lambda_c == 0 for b in spec.blocks)
    assert sum(b.width for b in spec.blocks) == 2


def test_eigen_defective_raises():
    # d=2 Jordan block at 0.85 (see the jordan_supercritical model)
    R = np.array([[.95, .05, 0], [0, .95, .05], [.2, 0, .8]])
    with pytest.raises(DefectiveOrClustered):
        eigen_decompose(R)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_eigen_reconstructs_random_matrices(K, seed):
    R = random_stochastic(np.random.default_rng(seed), K)
    ev = np.linalg.eigvals(R)
    gaps = np.abs(ev[:, None] - ev[None, :]) + np.eye(K)
    assume(gaps.min() > 1e-3)
    spec = eigen_decompose(R)
    np.testing.assert_allclose(spec.reconstruct(), R, atol=1e-9)
    np.testing.assert_allclose(spec.combination[:, 0], 1.0)
    got = sorted([1.0] + [z for b in spec.blocks for z in ((b.eigenvalue, b.eigenvalue.conjugate())
                                                           if b.lambda_c else (b.eigenvalue,))],
                 key=lambda z: (round(z.real, 8), round(z.imag, 8)))
    want = sorted(ev, key=lambda z: (round(z.real, 8), round(z.imag, 8)))
    np.testing.assert_allclose(np.array(got, complex), np.array(want, complex), atol=1e-8)


def test_eigen_hundred_random_matrices():
    rng = np.random.default_rng(2024)
    done = 0
    while done < 100:
        K = int(rng.integers(2, 9))
        R = random_stochastic(rng, K)
        spec = eigen_decompose(R)
        assert np.max(np.abs(spec.reconstruct() - R)) <= 1e-9
        done += 1
