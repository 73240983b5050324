from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralbag.clifford import build_rep, chiral_projector
from chiralbag.fields import (
    HalfSpacePoint,
    boundary_compatible_parallel,
    chirality_flip,
    conformal_factor,
    conformal_factor_gradient,
    cutoff,
    cutoff_radial,
    cutoff_radial_derivative,
    dirac_flat_oracle,
    hemisphere_transfer,
    inner_normal,
    killing_field,
    killing_test_spinor,
    parallel_field,
    sample_points,
    test_spinor_family as bubble_family,
    verify_killing,
)

coord = st.floats(-3, 3, allow_nan=False)
height = st.floats(0, 3, allow_nan=False)


def half_space_points(n: int):
    return st.tuples(*([coord] * (n - 1)), height).map(np.array)


def test_half_space_point():
    p = HalfSpacePoint((3.0,), 4.0)
    assert p.r == 5.0
    np.testing.assert_array_equal(p.coords, [3.0, 4.0])
    assert HalfSpacePoint.from_coords([1.0, 2.0, 0.5]) == HalfSpacePoint((1.0, 2.0), 0.5)
    with pytest.raises(ValueError):
        HalfSpacePoint((0.0,), -1e-3)


@pytest.mark.parametrize("r, value", [(0.0, 2.0), (1.0, 1.0), (3.0, 0.2)])
def test_conformal_factor_values(r, value):
    assert conformal_factor([0.0, r]) == pytest.approx(value, abs=1e-15)


def test_conformal_factor_decreases_to_zero():
    r = np.linspace(0, 50, 200)
    f = conformal_factor(np.stack([np.zeros_like(r), r], axis=1))
    assert np.all(np.diff(f) < 0)
    assert f[-1] < 1e-3


def test_conformal_factor_gradient_matches_differences():
    p = np.array([0.4, -0.7, 1.1])
    h = 1e-6
    fd = [(conformal_factor(p + h * e) - conformal_factor(p - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(conformal_factor_gradient(p), fd, atol=1e-9)


def test_parallel_spinor_two_dimensional_value(rep2):
    np.testing.assert_allclose(boundary_compatible_parallel(rep2), np.array([1, -1]) / math.sqrt(2), atol=1e-15)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_parallel_spinor_is_admissible(n):
    rep = build_rep(n)
    phi = boundary_compatible_parallel(rep)
    assert np.linalg.norm(phi) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(rep.nu_gamma(inner_normal(n)) @ phi, phi, atol=1e-15)
    np.testing.assert_allclose(chiral_projector(rep, inner_normal(n), -1).matrix @ phi, 0, atol=1e-15)


def test_psi_plus_at_origin(rep2):
    val = killing_test_spinor(rep2, +1, [0.0, 0.0])
    np.testing.assert_allclose(val, math.sqrt(2) * boundary_compatible_parallel(rep2), atol=1e-15)
    assert np.vdot(val, val).real == pytest.approx(2.0)


@given(p=half_space_points(3), sign=st.sampled_from([1, -1]))
def test_norm_identity_pointwise(p, sign):
    rep = build_rep(3)
    val = killing_test_spinor(rep, sign, p)
    assert abs(np.vdot(val, val).real - conformal_factor(p) ** 2) < 1e-12


@given(x=st.tuples(coord, coord).map(np.array), sign=st.sampled_from([1, -1]))
def test_boundary_condition_on_whole_hyperplane(x, sign):
    rep = build_rep(3)
    p = np.array([*x, 0.0])
    proj = chiral_projector(rep, inner_normal(3), -1).matrix
    assert np.abs(proj @ killing_test_spinor(rep, sign, p)).max() < 1e-12


@given(p=half_space_points(2), eps=st.floats(1e-3, 10))
def test_norm_identity_under_rescaling(p, eps):
    rep = build_rep(2)
    val = killing_test_spinor(rep, 1, p / eps)
    assert abs(np.vdot(val, val).real - conformal_factor(p / eps)) < 1e-12


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("sign", [1, -1])
def test_exact_dirac_image_is_eigen_relation(n, sign):
    rep = build_rep(n)
    fld = killing_field(rep, sign)
    pts = sample_points(n, (5,) * n)
    expected = sign * n / 2 * conformal_factor(pts)[:, None] * fld(pts)
    np.testing.assert_allclose(fld.exact_dirac(pts), expected, atol=1e-12)


def test_oracle_annihilates_parallel_spinor(rep3):
    val = dirac_flat_oracle(rep3, parallel_field(rep3), [0.2, 0.1, 0.5], 1e-3)
    assert np.linalg.norm(val) < 1e-10


@pytest.mark.parametrize("sign", [1, -1])
def test_oracle_matches_eigen_relation(rep2, sign):
    fld = killing_field(rep2, sign)
    p = np.array([0.3, 0.8])
    errs = []
    for h in (1e-2, 5e-3):
        approx = dirac_flat_oracle(rep2, fld, p, h)
        errs.append(np.abs(approx - sign * conformal_factor(p) * fld(p)).max())
    assert errs[1] < errs[0] / 3.5


def test_oracle_one_sided_at_boundary(rep2):
    fld = killing_field(rep2, 1)
    p = np.array([0.3, 0.0])
    approx = dirac_flat_oracle(rep2, fld, p, 1e-4)
    np.testing.assert_allclose(approx, fld.exact_dirac(p), atol=1e-6)
    with pytest.raises(ValueError):
        dirac_flat_oracle(rep2, fld, p, 0.0)


def test_exact_dirac_missing():
    fld = hemisphere_transfer(killing_field(build_rep(2), 1))
    with pytest.raises(ValueError, match="no closed-form"):
        fld.exact_dirac([0.0, 1.0])


def test_hemisphere_transfer_has_unit_norm(rep3):
    fld = hemisphere_transfer(killing_field(rep3, -1))
    vals = fld(sample_points(3, (6, 6, 6)))
    np.testing.assert_allclose(np.linalg.norm(vals, axis=1), 1.0, atol=1e-13)


def test_chirality_flip_is_involution(rep2):
    fld = killing_field(rep2, 1)
    twice = chirality_flip(chirality_flip(fld))
    p = np.array([0.5, 0.25])
    np.testing.assert_allclose(twice(p), fld(p), atol=1e-15)


def test_sample_points_default_shapes():
    assert sample_points(2).shape == (41 * 21, 2)
    assert sample_points(3).shape == (21**3, 3)
    with pytest.raises(ValueError):
        sample_points(3, (4, 4))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_verify_killing_passes(n):
    rep = build_rep(n)
    for sign in (1, -1):
        report = verify_killing(rep, sign, sample_points(n, (9,) * n) if n == 4 else None)
        assert report["pass"], report["verdicts"]
        assert report["pde_order"] > 1.8


def test_verify_killing_detects_corrupted_exponent(rep2):
    report = verify_killing(rep2, 1, exponent_shift=0.1)
    assert report["residual_norm"] > 1e-2
    assert not report["pass"]


def test_verify_killing_unscaled_form_differs_in_three_dimensions(rep3):
    report = verify_killing(rep3, 1)
    assert report["residual_dnorm"] < 1e-10
    assert report["residual_dnorm_unscaled"] > 1.0


@pytest.mark.parametrize("r, value", [(0.25, 1.0), (1.5, 0.5), (3.0, 0.0)])
def test_cutoff_profile(r, value):
    assert cutoff([0.0, r], 1.0) == pytest.approx(value, abs=1e-15)


@given(r=st.floats(0, 5), delta=st.floats(0.05, 2))
def test_cutoff_bounds(r, delta):
    eta = float(cutoff_radial(r, delta))
    assert 0.0 <= eta <= 1.0
    assert abs(float(cutoff_radial_derivative(r, delta))) <= 2.0 / delta


def test_cutoff_derivative_matches_differences():
    r = np.linspace(1.05, 1.95, 7)
    h = 1e-6
    fd = (cutoff_radial(r + h, 1.0) - cutoff_radial(r - h, 1.0)) / (2 * h)
    np.testing.assert_allclose(cutoff_radial_derivative(r, 1.0), fd, atol=1e-8)
    assert np.all(np.diff(cutoff_radial(r, 1.0)) < 0)


def test_cutoff_requires_positive_delta():
    with pytest.raises(ValueError):
        cutoff([0.0, 1.0], 0.0)


def test_bubble_family(rep2):
    np.testing.assert_allclose(bubble_family(rep2, 0.1, 0.5, [0.0, 0.0]), killing_test_spinor(rep2, 1, [0.0, 0.0]))
    assert np.abs(bubble_family(rep2, 0.1, 0.5, [0.6, 0.9])).max() == 0.0
    proj = chiral_projector(rep2, inner_normal(2), -1).matrix
    xs = np.stack([np.linspace(-0.45, 0.45, 19), np.zeros(19)], axis=1)
    assert np.abs(bubble_family(rep2, 0.1, 0.5, xs) @ proj.T).max() < 1e-12


@pytest.mark.parametrize("eps, delta", [(0.0, 0.5), (0.6, 0.5), (0.1, 1.5)])
def test_bubble_family_parameter_checks(rep2, eps, delta):
    with pytest.raises(ValueError):
        bubble_family(rep2, eps, delta, [0.0, 0.0])
