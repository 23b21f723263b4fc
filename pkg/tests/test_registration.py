import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from jacobihmc.hmc import HmcConfig
from jacobihmc.registration import (AffinePre, ImageGrid, PGMError, RegistrationTarget, SplineBoundaryError,
                                    SplineField, basis_matrix, bilinear_sample, blob_pair, bspline_basis,
                                    deform, gauss_newton_register, gaussian_blobs, linear_ramp,
                                    membrane_precision, read_pgm, residual_and_jacobian,
                                    sample_registration_posterior, warp, write_pgm)
from jacobihmc.targets import GaussianTarget

from conftest import central_difference, rel_err


def test_basis_at_knot():
    np.testing.assert_allclose(bspline_basis(0.0), (1 / 6, 2 / 3, 1 / 6, 0.0), atol=1e-15)


def test_basis_at_half():
    np.testing.assert_allclose(bspline_basis(0.5), (1 / 48, 23 / 48, 23 / 48, 1 / 48), rtol=1e-14)


@given(st.floats(0.0, 1.0, exclude_max=True))
def test_basis_partition_of_unity(u):
    assert abs(sum(bspline_basis(u)) - 1.0) < 1e-12


@pytest.mark.parametrize("u", [-0.1, 1.0])
def test_basis_domain(u):
    with pytest.raises(ValueError):
        bspline_basis(u)


def field_64(weights=None):
    return SplineField((12, 7), (8, 16), weights)


def test_deform_zero_and_constant():
    assert deform(field_64(), 10.0, 20.0) == (0.0, 0.0)
    n = 84
    f = field_64(np.concatenate([np.full(n, 2.5), np.zeros(n)]))
    x, y = np.meshgrid(np.arange(0, 64, 3.0), np.arange(0, 64, 5.0))
    px, py = deform(f, x.ravel(), y.ravel())
    np.testing.assert_allclose(px, 2.5, rtol=1e-13)
    np.testing.assert_array_equal(py, 0.0)


def test_deform_single_control_point():
    a, b = 4, 3
    planes = np.zeros((2, 12, 7))
    planes[0, a, b] = 1.0
    f = field_64(planes.reshape(-1))
    # control point (a, b) sits at pixel ((a - 1) n_x, (b - 1) n_y)
    px, py = deform(f, (a - 1) * 8.0, (b - 1) * 16.0)
    assert px == pytest.approx(4 / 9, rel=1e-14)
    assert py == 0.0


def test_deform_outside_support():
    with pytest.raises(SplineBoundaryError):
        deform(field_64(), -1.0, 3.0)
    with pytest.raises(SplineBoundaryError):
        deform(field_64(), 72.0, 3.0)


def test_covering_grid_for_64px():
    f = SplineField.covering(64, 64)
    assert f.grid == (12, 7) and f.spacing == (8.0, 16.0)
    assert f.size == 168


def test_basis_matrix_rows():
    f = field_64()
    b = basis_matrix(f, np.array([0.0, 13.5, 63.0]), np.array([0.0, 40.2, 63.0]))
    np.testing.assert_allclose(np.asarray(b.sum(axis=1)).ravel(), 1.0)
    assert np.all(np.diff(b.indptr) == 16)


def test_warp_identity_is_exact():
    _, moving = blob_pair()
    warped, mask = warp(moving, AffinePre(), field_64())
    np.testing.assert_array_equal(warped.data, moving.data)
    assert mask.all()


def test_warp_translation_by_affine():
    _, moving = blob_pair()
    warped, mask = warp(moving, AffinePre.translation(1.0, 0.0), field_64())
    np.testing.assert_array_equal(warped.data[:, :-1], moving.data[:, 1:])
    assert not mask[:, -1].any()
    assert np.all(warped.data[:, -1] == 0)


def test_warp_half_pixel_ramp():
    ramp = linear_ramp(16, 8)
    warped, _ = warp(ramp, AffinePre.translation(0.5, 0.0), SplineField.covering(16, 8, (8, 5)))
    step = 1.0 / 15
    np.testing.assert_allclose(warped.data[:, :-1], ramp.data[:, :-1] + 0.5 * step, rtol=1e-13)


def test_affine_validation():
    bad = np.eye(3)
    bad[2, 0] = 0.1
    with pytest.raises(ValueError):
        AffinePre(bad)


def test_bilinear_gradient_matches_interpolant():
    img = gaussian_blobs(20, 20, [(8, 9)], 3.0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(1, 18, 200), rng.uniform(1, 18, 200)
    _, gx, gy, _ = bilinear_sample(img, x, y, with_gradient=True)
    h = 1e-7
    fx = (bilinear_sample(img, x + h, y)[0] - bilinear_sample(img, x - h, y)[0]) / (2 * h)
    fy = (bilinear_sample(img, x, y + h)[0] - bilinear_sample(img, x, y - h)[0]) / (2 * h)
    np.testing.assert_allclose(gx, fx, atol=1e-6)
    np.testing.assert_allclose(gy, fy, atol=1e-6)


def test_residual_zero_for_identical_images():
    fixed, _ = blob_pair()
    r, _ = residual_and_jacobian(fixed, fixed, AffinePre(), field_64())
    np.testing.assert_array_equal(r, 0.0)


def test_constant_image_has_zero_jacobian():
    const = ImageGrid(np.full((64, 64), 0.3))
    _, jac = residual_and_jacobian(const, const, AffinePre(), field_64())
    assert jac.count_nonzero() == 0


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_matches_finite_differences(seed):
    fixed, moving = blob_pair()
    rng = np.random.default_rng(seed)
    q = rng.normal(0, 0.5, 168)
    _, jac = residual_and_jacobian(fixed, moving, AffinePre(), field_64(q))
    assert np.all(np.diff(jac.indptr) <= 32)
    h = 1e-6
    for k in rng.choice(168, 25, replace=False):
        e = np.zeros(168)
        e[k] = h
        rp, _ = residual_and_jacobian(fixed, moving, AffinePre(), field_64(q + e))
        rm, _ = residual_and_jacobian(fixed, moving, AffinePre(), field_64(q - e))
        fd = (rp - rm) / (2 * h)
        assert rel_err(jac[:, k].toarray().ravel(), fd) < 1e-3


def test_potential_gradient_matches_finite_differences():
    fixed, moving = blob_pair()
    target = RegistrationTarget(fixed, moving, field_64(), phi=1.0, lam=0.1)
    q = np.random.default_rng(4).normal(0, 0.5, 168)
    assert rel_err(target.gradient(q), central_difference(target.potential, q)) < 1e-3


def test_gauss_newton_quadratic_form():
    fixed, moving = blob_pair()
    target = RegistrationTarget(fixed, moving, field_64(), phi=2.0, lam=0.1)
    rng = np.random.default_rng(5)
    q, u = rng.normal(0, 0.5, (2, 168))
    hess = target.gauss_newton_hessian(q)
    assert target.hessian_quadratic_form(q, u) == pytest.approx(u @ (hess @ u), rel=1e-10)
    us = rng.standard_normal((4, 168))
    np.testing.assert_allclose(target.hessian_quadratic_form(q, us), [u @ (hess @ u) for u in us], rtol=1e-10)


def test_mismatched_images_rejected():
    a = ImageGrid(np.zeros((10, 12)))
    b = ImageGrid(np.zeros((12, 10)))
    with pytest.raises(ValueError, match="sizes differ"):
        RegistrationTarget(a, b, SplineField.covering(12, 10, (5, 5)))


def test_membrane_small_grid():
    lam = membrane_precision((2, 1), planes=1).toarray()
    np.testing.assert_array_equal(lam, [[1.0, -1.0], [-1.0, 1.0]])


@given(st.integers(2, 12), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_membrane_nullspace_is_per_plane_constants(nx, ny, seed):
    lam = membrane_precision((nx, ny)).toarray()
    np.testing.assert_array_equal(lam, lam.T)
    eig = np.linalg.eigvalsh(lam)
    assert eig.min() >= -1e-12
    assert int(np.sum(eig < 1e-9)) == 2
    c = np.random.default_rng(seed).standard_normal(2)
    q = np.repeat(c, nx * ny)
    assert abs(q @ lam @ q) < 1e-9


def test_membrane_rejects_degenerate_grid():
    with pytest.raises(ValueError):
        membrane_precision((1, 1))


def test_gauss_newton_identical_images_stay_at_zero():
    fixed, _ = blob_pair()
    target = RegistrationTarget(fixed, fixed, field_64(), phi=1.0, lam=0.1)
    trace = gauss_newton_register(target, iters=3, rng=0)
    assert trace.ssd == [0.0] * 4
    np.testing.assert_array_equal(trace.weights[-1], 0.0)


class LinearResiduals(GaussianTarget):
    """Gaussian potential written as least squares with residuals L^T q."""

    ridge = 0.0

    def ssd(self, q):
        return float(q @ self.precision @ q)

    def gauss_newton_hessian(self, q):
        return sp.csr_matrix(self.precision)


def test_gauss_newton_one_step_on_quadratic():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((6, 6))
    target = LinearResiduals(a @ a.T + np.eye(6))
    trace = gauss_newton_register(target, q0=rng.standard_normal(6), iters=1, rng=0)
    np.testing.assert_allclose(trace.weights[1], 0.0, atol=1e-8)


def ssd_tail_monotone(ssd, start=5):
    tail = np.asarray(ssd[start:])
    return bool(np.all(np.diff(tail) <= 1e-9 * ssd[0]))


@pytest.mark.parametrize("shift,sigma", [(3.0, 6.0), (-2.0, 5.0), (1.5, 8.0)])
def test_ssd_monotone_after_transient(shift, sigma):
    fixed, moving = blob_pair(shift=shift, sigma=sigma)
    target = RegistrationTarget(fixed, moving, SplineField.covering(64, 64), phi=1.0, lam=0.1)
    trace = gauss_newton_register(target, iters=30, rng=0, frames=10)
    assert ssd_tail_monotone(trace.ssd)
    assert trace.ssd[-1] < 0.01 * trace.ssd[0]


def test_prior_recovered_when_likelihood_vanishes():
    fixed, moving = blob_pair(32, 32, shift=2.0, sigma=4.0)
    field_ = SplineField.covering(32, 32, (7, 6))
    target = RegistrationTarget(fixed, moving, field_, phi=1e-8, lam=1.0, ridge=0.5)
    chain = sample_registration_posterior(target, HmcConfig(1.5, 0.3, 6000, burn_in=500, seed=0))
    sample_cov = np.cov(chain.samples[500:].T)
    expected = np.linalg.eigvalsh(np.linalg.inv(target.prior_total.toarray()))[-6:]
    np.testing.assert_allclose(np.linalg.eigvalsh(sample_cov)[-6:], expected, rtol=0.15)


def test_identical_images_posterior_mean_near_zero():
    fixed, _ = blob_pair(32, 32, shift=2.0, sigma=4.0)
    field_ = SplineField.covering(32, 32, (7, 6))
    target = RegistrationTarget(fixed, fixed, field_, phi=1.0, lam=10.0, ridge=1.0)
    chain = sample_registration_posterior(target, HmcConfig(1.5, 0.1, 10_000, burn_in=200, seed=1))
    prior_sd = math.sqrt(np.trace(np.linalg.inv(target.prior_total.toarray())))
    assert np.linalg.norm(chain.extra["posterior_mean"]) < 0.05 * prior_sd


def test_pgm_roundtrip(tmp_path):
    img = gaussian_blobs(17, 11, [(5, 5)], 3.0)
    write_pgm(tmp_path / "a.pgm", img)
    back = read_pgm(tmp_path / "a.pgm")
    assert back.shape == (11, 17)
    np.testing.assert_allclose(back.data, img.data, atol=0.5 / 255)


def test_pgm_sixteen_bit_with_comment(tmp_path):
    raster = np.array([[0, 1000], [65535, 2]], dtype=">u2")
    (tmp_path / "b.pgm").write_bytes(b"P5\n# made by hand\n2 2\n65535\n" + raster.tobytes())
    img = read_pgm(tmp_path / "b.pgm")
    np.testing.assert_allclose(img.data, raster / 65535.0)


def test_pgm_rejects_ascii(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(PGMError):
        read_pgm(tmp_path / "c.pgm")
