import numpy as np
import pytest

from tofdefog.priors import (
    FlipOperator,
    PatchGrid,
    QuadraticBasis,
    SingularFitError,
    apply_flip,
    fit_patch_quadratic,
    gradient_penalty,
    laplacian_apply,
    laplacian_diag,
    symmetry_penalty,
)


def test_fit_recovers_exact_quadratic():
    basis = QuadraticBasis(8, 8)
    u, v = basis.coords
    values = 3.0 * u * u - u + 2.0
    coeffs = fit_patch_quadratic(values, basis)
    assert np.allclose(coeffs, [3, 0, 0, -1, 0, 2], atol=1e-8)
    residual = values - basis.surface(basis.from_raw(coeffs)).ravel()
    assert np.max(np.abs(residual)) < 1e-8


def test_fit_constant_patch():
    basis = QuadraticBasis(5, 7)
    coeffs = fit_patch_quadratic(np.full(35, 5.0), basis)
    assert np.allclose(coeffs, [0, 0, 0, 0, 0, 5], atol=1e-9)


def test_weighted_fit_ignores_spiked_pixel():
    basis = QuadraticBasis(6, 6)
    u, v = basis.coords
    clean = 0.5 * u * u + 2.0 * u * v - v + 4.0
    spiked = clean.copy()
    spiked[17] += 1e6
    weights = np.ones_like(clean)
    weights[17] = 0.0
    coeffs = fit_patch_quadratic(spiked, basis, weights)
    assert np.allclose(coeffs, [0.5, 2.0, 0.0, 0.0, -1.0, 4.0], atol=1e-6)


def test_fit_is_idempotent():
    basis = QuadraticBasis(7, 9)
    rng = np.random.default_rng(0)
    values = rng.normal(size=63)
    first = basis.fit(values)
    again = basis.fit(basis.surface(first).ravel())
    assert np.allclose(first, again, atol=1e-10)


def test_fit_rank_deficient_raises():
    basis = QuadraticBasis(4, 4)
    with pytest.raises(SingularFitError):
        basis.fit(np.ones(16), weights=np.zeros(16))


def test_raw_scaled_round_trip():
    basis = QuadraticBasis(10, 12)
    rng = np.random.default_rng(1)
    scaled = rng.normal(size=6)
    assert np.allclose(basis.from_raw(basis.to_raw(scaled)), scaled, atol=1e-9)


def test_flip_is_involution():
    op = FlipOperator(flip_row=8, excluded_bottom_rows=2)
    rng = np.random.default_rng(2)
    img = rng.normal(size=(16, 5))
    assert np.array_equal(apply_flip(apply_flip(img, op), op), img)


def test_flip_symmetric_image_unchanged():
    op = FlipOperator(flip_row=8)
    u = np.arange(16, dtype=float)[:, None] - 8
    img = np.repeat(u * u, 4, axis=1)
    assert np.allclose(apply_flip(img, op), img)


def test_flip_moves_delta():
    op = FlipOperator(flip_row=20)
    img = np.zeros((41, 3))
    img[10, 1] = 1.0  # flip_row - 10
    out = apply_flip(img, op)
    assert out[30, 1] == 1.0 and out[10, 1] == 0.0


def test_symmetry_penalty_zero_iff_symmetric():
    op = FlipOperator(flip_row=8, excluded_bottom_rows=2)
    u = np.arange(16, dtype=float)[:, None] - 8
    img = np.repeat(u * u, 4, axis=1)
    assert symmetry_penalty(img, op) == 0.0
    img[3, 2] += 1.0
    assert symmetry_penalty(img, op) > 0.0


def test_symmetry_penalty_ignores_excluded_rows():
    op = FlipOperator(flip_row=8, excluded_bottom_rows=4)
    u = np.arange(16, dtype=float)[:, None] - 8
    img = np.repeat(u * u, 4, axis=1)
    img[13:, :] += 100.0  # excluded band and rows whose mirrors are excluded
    assert symmetry_penalty(img, op) == 0.0


def test_gradient_penalty_constant_zero():
    assert gradient_penalty(np.full((9, 9), 3.5)) == 0.0


def test_gradient_penalty_ramp():
    n, s = 12, 0.75
    ramp = np.arange(n, dtype=float)[None, :] * s  # one row, horizontal ramp
    assert gradient_penalty(ramp) == pytest.approx(s * s * (n - 1))


def test_gradient_penalty_matches_brute_force():
    rng = np.random.default_rng(3)
    img = rng.normal(size=(7, 9))
    brute = 0.0
    for i in range(7):
        for j in range(9):
            if j + 1 < 9:
                brute += (img[i, j + 1] - img[i, j]) ** 2
            if i + 1 < 7:
                brute += (img[i + 1, j] - img[i, j]) ** 2
    assert gradient_penalty(img) == pytest.approx(brute, rel=1e-12)


def test_penalties_are_quadratic_forms():
    rng = np.random.default_rng(4)
    img = rng.normal(size=(16, 8))
    op = FlipOperator(flip_row=8, excluded_bottom_rows=1)
    lam = 3.7
    assert symmetry_penalty(lam * img, op) == pytest.approx(
        lam * lam * symmetry_penalty(img, op), rel=1e-12
    )
    assert gradient_penalty(lam * img) == pytest.approx(
        lam * lam * gradient_penalty(img), rel=1e-12
    )


def test_laplacian_matches_penalty_gradient():
    # <x, Lx> must equal the penalty for the quadratic form 0.5*x'(2L)x
    rng = np.random.default_rng(5)
    img = rng.normal(size=(6, 7))
    assert float(np.sum(img * laplacian_apply(img))) == pytest.approx(
        gradient_penalty(img), rel=1e-12
    )
    assert np.allclose(laplacian_diag((6, 7))[0, 0], 2.0)


def test_patch_grid_kinect_layout():
    grid = PatchGrid(424, 512, 4, 4)
    assert grid.n_patches == 16
    sizes = {(rs.stop - rs.start, cs.stop - cs.start) for rs, cs in grid.slices}
    assert sizes == {(106, 128)}


def test_patch_grid_tiles_exactly():
    grid = PatchGrid(17, 23, 3, 4)  # non-divisible: trailing patches absorb
    cover = np.zeros((17, 23), dtype=int)
    for rs, cs in grid.slices:
        cover[rs, cs] += 1
    assert np.all(cover == 1)


def test_patch_grid_rejects_tiny_patches():
    with pytest.raises(ValueError):
        PatchGrid(8, 8, 4, 4)  # 2x2 patches cannot hold a quadratic
