from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralbag.clifford import (
    admissible_basis,
    build_rep,
    chiral_projector,
    clifford_mul,
    verify_relations,
)

DIMS = [2, 3, 4, 5, 6, 7, 8]


def unit_vectors(n: int):
    comps = st.lists(st.floats(-1, 1, allow_nan=False), min_size=n, max_size=n)
    return comps.filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))


@pytest.mark.parametrize("n", DIMS)
def test_relations_hold_in_every_dimension(n):
    report = verify_relations(build_rep(n))
    assert report["pass"], report["residuals"]
    assert report["max_residual"] < 1e-12


@pytest.mark.parametrize("n, d", [(2, 2), (3, 4), (4, 4), (5, 8), (6, 8)])
def test_spinor_dimension(n, d):
    assert build_rep(n).d == d


def test_two_dimensional_matrices_are_pauli_based():
    rep = build_rep(2)
    sx = np.array([[0, 1], [1, 0]])
    sy = np.array([[0, -1j], [1j, 0]])
    np.testing.assert_allclose(rep.gamma[0], 1j * sx)
    np.testing.assert_allclose(rep.gamma[1], 1j * sy)
    np.testing.assert_allclose(rep.chirality, np.diag([1, -1]))


def test_build_rep_rejects_bad_dimension():
    with pytest.raises(ValueError):
        build_rep(1)
    with pytest.raises(ValueError):
        build_rep(2.5)


def test_gamma_matrices_are_read_only():
    rep = build_rep(3)
    with pytest.raises(ValueError):
        rep.gamma[0][0, 0] = 1.0


def test_clifford_mul_squares_to_minus_norm():
    rep = build_rep(4)
    v = np.array([0.3, -1.2, 0.5, 2.0])
    s = np.arange(rep.d) + 1j
    twice = clifford_mul(rep, v, clifford_mul(rep, v, s))
    np.testing.assert_allclose(twice, -np.dot(v, v) * s, atol=1e-13)


def test_clifford_mul_shape_errors():
    rep = build_rep(2)
    with pytest.raises(ValueError):
        clifford_mul(rep, [1.0, 0.0, 0.0], np.ones(2))
    with pytest.raises(ValueError):
        clifford_mul(rep, [1.0, 0.0], np.ones(3))


def test_projector_rejects_non_unit_normal():
    with pytest.raises(ValueError, match="unit"):
        chiral_projector(build_rep(2), [1.0, 1.0], -1)


def test_sign_spelling():
    rep = build_rep(2)
    nu = [0.0, 1.0]
    np.testing.assert_array_equal(chiral_projector(rep, nu, "minus").matrix, chiral_projector(rep, nu, -1).matrix)
    with pytest.raises(ValueError):
        chiral_projector(rep, nu, 0)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_projectors_are_complementary_idempotents(n):
    rep = build_rep(n)
    nu = np.ones(n) / np.sqrt(n)
    P = chiral_projector(rep, nu, -1).matrix
    Q = chiral_projector(rep, nu, +1).matrix
    np.testing.assert_allclose(P @ P, P, atol=1e-13)
    np.testing.assert_allclose(P + Q, np.eye(rep.d), atol=1e-13)
    np.testing.assert_allclose(P @ Q, 0, atol=1e-13)
    assert np.linalg.matrix_rank(P) == rep.d // 2


@pytest.mark.parametrize("n", [2, 3, 4])
def test_admissible_bases_are_orthonormal_kernels(n):
    rep = build_rep(n)
    nu = np.zeros(n)
    nu[-1] = 1.0
    for sign in (-1, 1):
        B = admissible_basis(rep, nu, sign)
        assert B.shape == (rep.d, rep.d // 2)
        np.testing.assert_allclose(B.conj().T @ B, np.eye(rep.d // 2), atol=1e-13)
        np.testing.assert_allclose(chiral_projector(rep, nu, sign).matrix @ B, 0, atol=1e-13)


@given(data=st.data(), n=st.sampled_from([2, 3, 4]))
def test_nu_gamma_is_hermitian_involution(data, n):
    rep = build_rep(n)
    nu = data.draw(unit_vectors(n))
    ng = rep.nu_gamma(nu)
    np.testing.assert_allclose(ng @ ng, np.eye(rep.d), atol=1e-12)
    np.testing.assert_allclose(ng, ng.conj().T, atol=1e-12)


@given(data=st.data(), n=st.sampled_from([2, 3, 4]))
def test_plus_basis_is_chirality_image_of_minus_basis(data, n):
    rep = build_rep(n)
    nu = data.draw(unit_vectors(n))
    np.testing.assert_allclose(admissible_basis(rep, nu, +1), rep.chirality @ admissible_basis(rep, nu, -1), atol=1e-12)


@given(data=st.data(), n=st.sampled_from([2, 3, 4]))
def test_chirality_anticommutes_with_tangent_vectors(data, n):
    rep = build_rep(n)
    v = data.draw(unit_vectors(n))
    X = rep.clifford(v)
    np.testing.assert_allclose(rep.chirality @ X, -X @ rep.chirality, atol=1e-12)
