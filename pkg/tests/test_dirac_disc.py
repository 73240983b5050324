from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from chiralbag.clifford import build_rep
from chiralbag.dirac_disc import (
    CORNER,
    INTERIOR,
    PHYSICAL,
    TRUNCATION,
    apply_chiral_bc,
    assemble_conformal,
    assemble_conformal_laplacian,
    assemble_flat,
    assemble_model,
    ball_grid,
    boundary_bases,
    box_grid,
    covariance_residual,
    export_coo,
    halfball_grid,
    hemisphere_factor,
    hermiticity_residual,
    interior_mask,
    make_grid,
    sample_field,
    sbp_difference,
    scalar_curvature,
    spinor_sectors,
)
from chiralbag.fields import chirality_flip, conformal_factor, killing_field, parallel_field
from chiralbag.spectral import dirac_eigs, smallest_eigs


@pytest.fixture(scope="module")
def box2():
    return box_grid(2, 0.1, 1.0, 1.0)


def interior_order(errors: list[float], hs: list[float]) -> float:
    return float(np.log(errors[0] / errors[1]) / np.log(hs[0] / hs[1]))


# ----------------------------------------------------------------- grids


@pytest.mark.parametrize("maker", [
    lambda: box_grid(2, 0.25, 1.0, 1.0),
    lambda: box_grid(3, 0.5, 1.0, 1.0),
    lambda: halfball_grid(2, 0.2, 2.0),
    lambda: halfball_grid(3, 0.5, 2.0),
])
def test_grid_invariants(maker):
    g = maker()
    assert np.all(g.points[g.node_class == PHYSICAL, -1] == 0.0)
    assert np.all(g.points[:, -1] >= 0)
    assert len(np.unique(g.points.round(12), axis=0)) == g.num_nodes
    assert g.weights.min() > 0
    assert set(np.unique(g.cells)) == set(range(g.num_nodes))


def test_halfball_volume_and_classes():
    g = halfball_grid(2, 0.05, 1.0)
    assert g.weights.sum() == pytest.approx(g.cells.shape[0] * g.h**2, rel=1e-12)
    assert 0.9 * np.pi / 2 < g.weights.sum() < np.pi / 2
    counts = g.summary()
    assert counts["physical"] > 0 and counts["truncation"] > 0 and counts["corner"] == 2
    nu = g.normals[g.node_class == TRUNCATION]
    np.testing.assert_allclose(np.linalg.norm(nu, axis=1), 1.0)
    assert np.all(np.einsum("ij,ij->i", nu, g.points[g.node_class == TRUNCATION]) < 0)


def test_box_corner_normals_cleared():
    g = box_grid(2, 0.25, 1.0, 1.0)
    assert np.all(g.normals[g.node_class == CORNER] == 0)
    np.testing.assert_array_equal(g.normals[g.node_class == PHYSICAL], [[0.0, 1.0]] * int((g.node_class == PHYSICAL).sum()))


def test_ball_grid_has_no_physical_face():
    g = ball_grid(2, 0.1, 1.0)
    assert not np.any(g.node_class == PHYSICAL)


@pytest.mark.parametrize("args", [(2, 0.6, 1.0), (2, 0.0, 1.0), (1, 0.1, 1.0)])
def test_grid_rejects_bad_spacing(args):
    with pytest.raises(ValueError):
        halfball_grid(*args)


def test_make_grid_kinds():
    assert make_grid(2, 0.25, "box", R_max=1.0).kind == "box"
    assert make_grid(2, 0.25, "ball", R_max=1.0).kind == "ball"
    with pytest.raises(ValueError, match="unknown"):
        make_grid(2, 0.25, "torus")


def test_same_as():
    assert halfball_grid(2, 0.2, 1.0).same_as(halfball_grid(2, 0.2, 1.0))
    assert not halfball_grid(2, 0.2, 1.0).same_as(halfball_grid(2, 0.1, 1.0))


# ------------------------------------------------------------- operators


@pytest.mark.parametrize("n", [2, 3])
def test_sbp_property(n):
    g = box_grid(n, 0.25, 1.0, 1.0)
    for i, Q in enumerate(sbp_difference(g)):
        S = (Q + Q.T).tocsr()
        off = S - sp.diags(S.diagonal())
        assert abs(off).max() < 1e-14
        assert np.all(np.abs(S.diagonal())[g.node_class == INTERIOR] < 1e-14)


def test_constant_field_has_zero_interior_image(box2):
    rep = build_rep(2)
    D = (assemble_flat(rep, box2).op @ sample_field(box2, parallel_field(rep).evaluator)).reshape(-1, 2)
    assert np.abs(D[box2.node_class == INTERIOR]).max() < 1e-12


@settings(max_examples=20)
@given(k=st.tuples(st.floats(-6, 6), st.floats(-6, 6)), s=st.tuples(st.complex_numbers(max_magnitude=1), st.complex_numbers(max_magnitude=1)))
def test_plane_wave_matches_symbol(box2, k, s):
    rep = build_rep(2)
    k, s = np.array(k), np.array(s)
    wave = np.exp(1j * box2.points @ k)[:, None] * s[None, :]
    D = (assemble_flat(rep, box2).op @ wave.reshape(-1)).reshape(-1, 2)
    symbol = sum(1j * np.sin(k[i] * box2.h) / box2.h * rep.gamma[i] for i in range(2))
    expected = wave @ symbol.T
    mask = box2.node_class == INTERIOR
    assert np.abs(D - expected)[mask].max() < 1e-12


@pytest.mark.parametrize("n", [2, 3])
def test_killing_spinor_second_order(n):
    rep = build_rep(n)
    fld = killing_field(rep, +1)
    hs = [0.1, 0.05] if n == 2 else [0.125, 0.0625]
    errs = []
    for h in hs:
        g = box_grid(n, h, 1.0, 1.0)
        D = (assemble_flat(rep, g).op @ sample_field(g, fld.evaluator)).reshape(-1, rep.d)
        target = n / 2 * conformal_factor(g.points)[:, None] * fld.evaluator(g.points)
        # fixed window shared by both grids
        p = g.points
        window = np.all(np.abs(p[:, :-1]) <= 0.5 + 1e-9, axis=1) & (np.abs(p[:, -1] - 0.5) <= 0.25 + 1e-9)
        errs.append(np.abs(D - target)[window].max())
    assert interior_order(errs, hs) >= 1.8


def test_killing_dirac_closed_form_identity():
    rep = build_rep(3)
    fld = killing_field(rep, +1)
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    np.testing.assert_allclose(fld.dirac(pts), 1.5 * conformal_factor(pts)[:, None] * fld.evaluator(pts), atol=1e-13)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("sign", [-1, 1])
def test_boundary_bases_are_admissible(n, sign):
    rep = build_rep(n)
    nu = np.random.default_rng(n).normal(size=(6, n))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    B = boundary_bases(rep, nu, sign)
    for m in range(6):
        nG = sum(nu[m, i] * rep.gamma[i] for i in range(n)) @ rep.chirality
        # B^- kernel: nu.Gamma = +1; B^+ kernel: nu.Gamma = -1
        np.testing.assert_allclose(nG @ B[m], -sign * B[m], atol=1e-12)
        np.testing.assert_allclose(B[m].conj().T @ B[m], np.eye(rep.d // 2), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_killing_spinors_are_admissible_on_the_flat_face(n):
    rep = build_rep(n)
    g = box_grid(n, 0.25, 1.0, 1.0)
    base = assemble_flat(rep, g)
    phys = g.node_class == PHYSICAL
    for sign, fld in ((-1, killing_field(rep, +1)), (1, chirality_flip(killing_field(rep, +1)))):
        psi = sample_field(g, fld.evaluator)
        P = apply_chiral_bc(base, rep, sign).basis
        r = (P @ (P.conj().T @ psi) - psi).reshape(-1, rep.d)
        assert np.abs(r[phys]).max() < 1e-12
        assert np.abs(r[g.node_class == INTERIOR]).max() == 0


def test_random_boundary_data_projects_into_kernel():
    rep = build_rep(2)
    g = halfball_grid(2, 0.25, 1.0)
    P = apply_chiral_bc(assemble_flat(rep, g), rep, -1).basis
    rng = np.random.default_rng(1)
    v = rng.normal(size=P.shape[0]) + 1j * rng.normal(size=P.shape[0])
    w = (P @ (P.conj().T @ v)).reshape(-1, 2)
    for node in np.flatnonzero(g.node_class == PHYSICAL):
        nG = g.normals[node] @ np.stack(rep.gamma).transpose(1, 0, 2) @ rep.chirality
        np.testing.assert_allclose(nG @ w[node], w[node], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("sign", [-1, 1])
@pytest.mark.parametrize("model", ["flat", "hemisphere", "perturbed"])
def test_reduced_matrices_are_hermitian(n, sign, model):
    rep = build_rep(n)
    g = halfball_grid(n, 0.5 if n == 3 else 0.25, 2.0)
    m = apply_chiral_bc(assemble_model(rep, g, model), rep, sign)
    assert hermiticity_residual(m) < 1e-10
    K = m.reduced_energy()
    assert abs(K - K.conj().T).max() < 1e-10
    assert m.reduced_mass().min() > 0
    dims = sum(s.energy.shape[0] for s in m.sectors)
    cls = g.node_class
    expect = (cls == INTERIOR).sum() * rep.d + ((cls == PHYSICAL) | (cls == TRUNCATION)).sum() * rep.d // 2
    assert dims == expect


def test_flat_face_needs_no_symmetrization():
    rep = build_rep(2)
    m = apply_chiral_bc(assemble_flat(rep, box_grid(2, 0.25, 1.0, 1.0)), rep, -1)
    assert m.symmetrization_norm == 0.0


def test_odd_dimension_sectors_decouple():
    rep = build_rep(3)
    U = spinor_sectors(rep)
    assert [u.shape[1] for u in U] == [2, 2]
    for i in range(3):
        for j in range(3):
            prod = rep.gamma[i].conj().T @ rep.gamma[j]
            assert np.abs(U[0].conj().T @ prod @ U[1]).max() < 1e-12


def test_unit_factor_reproduces_flat():
    rep = build_rep(2)
    g = halfball_grid(2, 0.25, 1.5)
    a = apply_chiral_bc(assemble_flat(rep, g), rep, -1)
    b = apply_chiral_bc(assemble_conformal(rep, g, lambda p: np.ones(len(p))), rep, -1)
    assert abs(a.pairing - b.pairing).max() == 0
    assert abs(a.reduced_energy() - b.reduced_energy()).max() == 0
    np.testing.assert_array_equal(a.mass, b.mass)


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_constant_factor_scales_spectrum(c):
    rep = build_rep(2)
    g = halfball_grid(2, 0.25, 2.0)
    flat = dirac_eigs(apply_chiral_bc(assemble_flat(rep, g), rep, -1), k=4).eigenvalues
    scaled = dirac_eigs(apply_chiral_bc(assemble_conformal(rep, g, lambda p: np.full(len(p), c)), rep, -1), k=4).eigenvalues
    np.testing.assert_allclose(scaled, flat / c, rtol=1e-9)


def test_nonpositive_factor_rejected():
    rep = build_rep(2)
    with pytest.raises(ValueError, match="positive"):
        assemble_conformal(rep, halfball_grid(2, 0.25, 1.0), lambda p: 0.5 - p[:, 0])


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError, match="dimension"):
        assemble_flat(build_rep(3), halfball_grid(2, 0.25, 1.0))


def test_double_reduction_rejected():
    rep = build_rep(2)
    m = apply_chiral_bc(assemble_flat(rep, halfball_grid(2, 0.25, 1.0)), rep, -1)
    with pytest.raises(ValueError, match="already"):
        apply_chiral_bc(m, rep, -1)
    with pytest.raises(ValueError):
        apply_chiral_bc(assemble_flat(rep, halfball_grid(2, 0.25, 1.0)), build_rep(3), -1)
    with pytest.raises(ValueError):
        assemble_flat(rep, halfball_grid(2, 0.25, 1.0)).basis


# ---------------------------------------------------------- covariance


def test_covariance_trivial_factor():
    rep = build_rep(2)
    g = box_grid(2, 0.2, 1.0, 1.0)
    one = lambda p: np.ones(len(p))  # noqa: E731
    assert covariance_residual(rep, g, one, killing_field(rep, +1).evaluator) == 0.0


def test_covariance_killing_spinor_order():
    rep = build_rep(2)
    psi = killing_field(rep, +1).evaluator
    hs = [0.1, 0.05]
    errs = [covariance_residual(rep, box_grid(2, h, 1.0, 1.0), conformal_factor, psi) for h in hs]
    assert interior_order(errs, hs) >= 1.8


def test_covariance_random_polynomial_field_order():
    rep = build_rep(3)
    rng = np.random.default_rng(5)
    coef = rng.normal(size=(4, rep.d)) + 1j * rng.normal(size=(4, rep.d))
    psi = lambda p: coef[0] + p @ coef[1:] + (p[:, :1] ** 2) * coef[1]  # noqa: E731
    f = lambda p: 1.5 + 0.3 * np.sin(p[:, 0]) * np.cos(p[:, 2])  # noqa: E731
    hs = [0.125, 0.0625]
    errs = [covariance_residual(rep, box_grid(3, h, 1.0, 1.0), f, psi) for h in hs]
    assert interior_order(errs, hs) >= 1.8


# ------------------------------------------------------------------ export


def test_export_coo_roundtrip(tmp_path):
    rep = build_rep(2)
    A = assemble_flat(rep, halfball_grid(2, 0.5, 1.0)).pairing
    path = tmp_path / "a.coo"
    export_coo(A, path)
    header = path.read_text().splitlines()[0]
    assert header == f"# {A.shape[0]} {A.shape[1]} {sp.coo_matrix(A).nnz}"
    data = np.loadtxt(path)
    B = sp.coo_matrix((data[:, 2] + 1j * data[:, 3], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=A.shape)
    assert abs(B - A).max() == 0


# ---------------------------------------------------------- Laplacian


def test_hemisphere_scalar_curvature_constant():
    pts = np.random.default_rng(2).uniform(-2, 2, (10, 3))
    np.testing.assert_allclose(scalar_curvature(hemisphere_factor, pts), 6.0, rtol=1e-6)


def test_laplacian_flat_kernel():
    lap = assemble_conformal_laplacian(halfball_grid(3, 0.5, 2.0), 3, "flat")
    mu = smallest_eigs(lap.stiffness, lap.mass, k=1, method="dense").eigenvalues[0]
    assert abs(mu) < 1e-10


def test_laplacian_hemisphere_first_eigenvalue():
    g = halfball_grid(3, 0.5, 3.0)
    lap = assemble_conformal_laplacian(g, 3, "hemisphere")
    res = smallest_eigs(lap.stiffness, lap.mass, k=2, method="dense")
    assert res.eigenvalues[0] == pytest.approx(6.0, abs=1e-6)
    v = res.vectors[:, 0]
    assert np.ptp(v / v[0]) < 1e-6


def test_laplacian_rejects_two_dimensions():
    with pytest.raises(ValueError, match="n >= 3"):
        assemble_conformal_laplacian(halfball_grid(2, 0.25, 1.0))
