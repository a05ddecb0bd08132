import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hermitian, random_state
from qgraphon import qmatrix as qm
from qgraphon.errors import DimensionMismatch, IndexCollision, ZeroTrace

SX, SY, SZ, I2 = qm.SIGMA_X, qm.SIGMA_Y, qm.SIGMA_Z, qm.IDENTITY2


def ptrace_oracle(M, keep, d, N):
    """Index-by-index summation over the traced sites (sites 1-based)."""
    keep = sorted(keep)
    out = np.zeros((d ** len(keep),) * 2, dtype=complex)
    for a in itertools.product(range(d), repeat=N):
        for b in itertools.product(range(d), repeat=N):
            if any(a[s] != b[s] for s in range(N) if s + 1 not in keep):
                continue
            i = int("".join(str(a[s - 1]) for s in keep), d)
            j = int("".join(str(b[s - 1]) for s in keep), d)
            out[i, j] += M[int("".join(map(str, a)), d), int("".join(map(str, b)), d)]
    return out


def embed_pair_oracle(B, j, k, N, d=2):
    """Matrix element by explicit relabeling of the computational basis."""
    D = d**N
    out = np.zeros((D, D), dtype=complex)
    for a in itertools.product(range(d), repeat=N):
        for b in itertools.product(range(d), repeat=N):
            if any(a[s] != b[s] for s in range(N) if s + 1 not in (j, k)):
                continue
            r = a[j - 1] * d + a[k - 1]
            c = b[j - 1] * d + b[k - 1]
            out[int("".join(map(str, a)), d), int("".join(map(str, b)), d)] = B[r, c]
    return out


def test_hermitize_examples():
    assert np.array_equal(qm.hermitize(SZ), SZ)
    np.testing.assert_array_equal(qm.hermitize(np.array([[0, 1], [0, 0]])), [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(qm.hermitize(np.array([[0, 2], [-2, 0]])), np.zeros((2, 2)))


def test_hermitize_is_exact():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(5, 4, 4)) + 1j * rng.normal(size=(5, 4, 4))
    H = qm.hermitize(M)
    assert np.array_equal(H, np.conj(np.swapaxes(H, -1, -2)))
    assert np.all(np.diagonal(H, axis1=-2, axis2=-1).imag == 0)


def test_project_examples():
    half = np.diag([0.5, 0.5]).astype(complex)
    np.testing.assert_allclose(qm.project_to_density(half), half, atol=1e-15)
    np.testing.assert_allclose(qm.project_to_density(np.diag([1.2, -0.2])), np.diag([1.0, 0.0]), atol=1e-15)
    with pytest.raises(ZeroTrace):
        qm.project_to_density(np.zeros((2, 2)))


@given(st.integers(0, 10_000), st.integers(2, 5))
def test_project_gives_valid_state(seed, d):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) + 2 * np.eye(d)
    rho = qm.project_to_density(M)
    assert np.array_equal(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() >= -1e-15
    assert abs(np.trace(rho) - 1) <= 1e-12


def test_project_fixed_point_on_states():
    rng = np.random.default_rng(3)
    for _ in range(20):
        rho = random_state(rng, 3)
        np.testing.assert_allclose(qm.project_to_density(rho), rho, atol=1e-13)


def test_project_batch_matches_single():
    rng = np.random.default_rng(4)
    batch = np.stack([random_state(rng, 2) + 0.05 * random_hermitian(rng, 2) for _ in range(10)])
    out = qm.project_batch(batch)
    for b in range(10):
        np.testing.assert_allclose(out[b], qm.project_to_density(batch[b]), atol=1e-13)


def test_partial_trace_examples():
    rng = np.random.default_rng(5)
    rho, sigma = random_state(rng, 2), random_state(rng, 2)
    np.testing.assert_allclose(qm.partial_trace(np.kron(rho, sigma), [1], 2, 2), rho, atol=1e-14)
    phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
    np.testing.assert_allclose(qm.partial_trace(np.outer(phi, phi), [1], 2, 2), I2 / 2, atol=1e-15)
    M = random_state(rng, 8)
    np.testing.assert_allclose(qm.partial_trace(M, [1, 2, 3], 2, 3), M)


@pytest.mark.parametrize("keep", [[1], [2], [3], [1, 3], [2, 3]])
def test_partial_trace_against_summation_oracle(keep):
    rng = np.random.default_rng(6)
    M = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    np.testing.assert_allclose(qm.partial_trace(M, keep, 2, 3), ptrace_oracle(M, keep, 2, 3), atol=1e-12)


def test_partial_trace_dimension_check():
    with pytest.raises(DimensionMismatch):
        qm.partial_trace(np.eye(6), [1], 2, 3)


@given(st.integers(0, 10_000))
def test_partial_trace_linear_and_trace_preserving(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    B = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    a, b = rng.normal(size=2)
    lhs = qm.partial_trace(a * A + b * B, [2], 3, 2)
    rhs = a * qm.partial_trace(A, [2], 3, 2) + b * qm.partial_trace(B, [2], 3, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)
    assert abs(np.trace(qm.partial_trace(A, [1], 3, 2)) - np.trace(A)) < 1e-11


def test_embed_single():
    np.testing.assert_array_equal(qm.embed_single(SX, 1, 2), np.kron(SX, I2))
    np.testing.assert_array_equal(qm.embed_single(I2, 2, 3), np.eye(8))
    O = random_hermitian(np.random.default_rng(0), 2)
    assert abs(np.trace(qm.embed_single(O, 2, 3)) - np.trace(O) * 4) < 1e-12
    A, B = qm.embed_single(SX, 1, 3), qm.embed_single(SY, 3, 3)
    np.testing.assert_allclose(A @ B - B @ A, 0)


def test_embed_pair_examples():
    np.testing.assert_array_equal(qm.embed_pair(np.kron(SX, SZ), 1, 2, 2), np.kron(SX, SZ))
    np.testing.assert_array_equal(qm.embed_pair(np.kron(SX, SZ), 2, 1, 2), np.kron(SZ, SX))
    np.testing.assert_array_equal(qm.embed_pair(np.eye(4), 1, 3, 3), np.eye(8))
    with pytest.raises(IndexCollision):
        qm.embed_pair(np.eye(4), 2, 2, 3)


@pytest.mark.parametrize("j,k", [(1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)])
def test_embed_pair_against_relabeling_oracle(j, k):
    B = np.random.default_rng(j * 10 + k).normal(size=(4, 4)) + 0j
    np.testing.assert_allclose(qm.embed_pair(B, j, k, 3), embed_pair_oracle(B, j, k, 3))


def test_embed_pair_of_product():
    rng = np.random.default_rng(8)
    B1, B2 = random_hermitian(rng, 2), random_hermitian(rng, 2)
    for j, k in [(1, 3), (3, 2)]:
        np.testing.assert_allclose(
            qm.embed_pair(np.kron(B1, B2), j, k, 3), qm.embed_single(B1, j, 3) @ qm.embed_single(B2, k, 3), atol=1e-14
        )


@pytest.mark.parametrize("side", ["left", "right", "vector"])
def test_apply_local_matches_embedding(side):
    rng = np.random.default_rng(9)
    for op in (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)), np.diag([0.3, -1.2]) + 0j):
        for q in (1, 2, 3):
            E = qm.embed_single(op, q, 3)
            if side == "vector":
                v = rng.normal(size=(4, 8)) + 0j
                np.testing.assert_allclose(qm.apply_local(op, v, q, 2, 3, side), v @ E.T, atol=1e-13)
            else:
                M = rng.normal(size=(4, 8, 8)) + 0j
                ref = E @ M if side == "left" else M @ E
                np.testing.assert_allclose(qm.apply_local(op, M, q, 2, 3, side), ref, atol=1e-13)


def test_frobenius_examples():
    assert qm.frobenius_norm(I2) == pytest.approx(np.sqrt(2))
    assert qm.frobenius_norm(SX) == pytest.approx(np.sqrt(2))
    assert qm.frobenius_norm(np.array([[3, 4], [0, 0]])) == 5.0


@given(st.integers(0, 10_000))
def test_frobenius_is_a_norm(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    c = rng.normal() + 1j * rng.normal()
    assert qm.frobenius_norm(A + B) <= qm.frobenius_norm(A) + qm.frobenius_norm(B) + 1e-12
    assert qm.frobenius_norm(c * A) == pytest.approx(abs(c) * qm.frobenius_norm(A))
    assert qm.frobenius_norm(A) == pytest.approx(np.sqrt(np.trace(A @ A.conj().T).real))


def test_commutators():
    np.testing.assert_allclose(qm.commutator(SX, SY), 2j * SZ)
    np.testing.assert_allclose(qm.anticommutator(SX, SY), 0)
    A = random_hermitian(np.random.default_rng(0), 3)
    np.testing.assert_allclose(qm.commutator(A, A), 0)
    with pytest.raises(DimensionMismatch):
        qm.commutator(np.eye(2), np.eye(3))


def test_matrix_exponential():
    np.testing.assert_allclose(qm.matrix_exponential(np.zeros((3, 3)), 2.0), np.eye(3))
    np.testing.assert_allclose(
        qm.matrix_exponential(-1j * SZ, np.pi / 2), np.diag([np.exp(-1j * np.pi / 2), np.exp(1j * np.pi / 2)]), atol=1e-15
    )
    M = random_hermitian(np.random.default_rng(2), 4) * 1j
    np.testing.assert_allclose(qm.matrix_exponential(M, 0.7) @ qm.matrix_exponential(M, -0.7), np.eye(4), atol=1e-12)


def test_matrix_codec_roundtrip():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    np.testing.assert_array_equal(qm.decode_matrix(qm.encode_matrix(M)), M)
    np.testing.assert_array_equal(qm.decode_matrix([[1, 0], [0, -1]]), SZ)


def test_named_states_are_states():
    for rho in qm.NAMED_STATES.values():
        assert qm.is_density(rho)
    np.testing.assert_array_equal(qm.NAMED_STATES["plus"], [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_allclose(qm.bloch_vector(qm.bloch_density(0.1, -0.4, 0.3)), [0.1, -0.4, 0.3])
