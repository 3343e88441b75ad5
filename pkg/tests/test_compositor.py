import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signsynth.boxes import BoundingBox
from signsynth.compositor import (
    GeomParams,
    PhotometricParams,
    WarpedTemplate,
    adjust_brightness_contrast,
    alpha_composite,
    apply_jitter,
    chessboard_distance,
    fade_borders,
    gaussian_blur,
    gaussian_kernel,
    match_local_brightness,
    poisson_blend,
    warp_template,
)
from signsynth.errors import DegenerateHomographyError, PlacementError
from signsynth.images import quantize

from conftest import make_sign
from signsynth.templates import to_rgba


def rgba(h, w, color=100.0, alpha=255.0):
    img = np.empty((h, w, 4))
    img[:, :, :3] = color
    img[:, :, 3] = alpha
    return img


def warped(img):
    return WarpedTemplate(img, BoundingBox(0, 0, img.shape[1], img.shape[0]))


def random_template(h, w, seed=0):
    img = rgba(h, w)
    img[:, :, :3] = np.random.default_rng(seed).integers(0, 256, (h, w, 3))
    return img


# -- brightness / contrast ------------------------------------------------------


def test_brightness_identity():
    img = random_template(5, 6)
    assert np.array_equal(adjust_brightness_contrast(img, PhotometricParams(1.0, 0.0)), img)


@pytest.mark.parametrize("v, a, b, expected", [(100, 1.5, 10, 160), (200, 1.4, 30, 255)])
def test_brightness_arithmetic_and_clamp(v, a, b, expected):
    img = rgba(1, 1, v, 77)
    out = adjust_brightness_contrast(img, PhotometricParams(a, b))
    assert np.allclose(out[0, 0, :3], expected)
    assert out[0, 0, 3] == 77


def test_brightness_input_untouched():
    img = rgba(2, 2, 10)
    adjust_brightness_contrast(img, PhotometricParams(2, 5))
    assert np.all(img[:, :, :3] == 10)


def test_contrast_rejects_nonpositive():
    with pytest.raises(ValueError):
        PhotometricParams(0.0, 0.0)


@given(st.floats(0.9, 1.1))
def test_contrast_inverse_round_trip(k):
    img = rgba(4, 4, 128.0)
    back = adjust_brightness_contrast(adjust_brightness_contrast(img, PhotometricParams(k, 0)), PhotometricParams(1 / k, 0))
    # float64 k * (1/k) is 1 only to within an ulp
    np.testing.assert_allclose(back, img, rtol=1e-12, atol=0)


# -- warp -----------------------------------------------------------------------


def test_warp_identity():
    img = random_template(30, 20, seed=1)
    w = warp_template(img, GeomParams(scale=30))
    assert w.tight_box == BoundingBox(0, 0, 20, 30)
    assert np.array_equal(w.image, img)


def test_warp_roll_90_swaps_dims():
    w = warp_template(random_template(30, 20), GeomParams(roll=90, scale=30))
    assert abs(w.tight_box.width - 30) <= 1 and abs(w.tight_box.height - 20) <= 1


def test_warp_half_scale():
    w = warp_template(random_template(40, 24), GeomParams(scale=20))
    assert abs(w.tight_box.width - 12) <= 1 and abs(w.tight_box.height - 20) <= 1


def test_warp_degenerate():
    with pytest.raises(DegenerateHomographyError):
        warp_template(random_template(20, 20), GeomParams(yaw=80, scale=20), focal_ratio=0.1)
    with pytest.raises(DegenerateHomographyError):
        warp_template(random_template(20, 20), GeomParams(pitch=90, scale=20))


SIGN = to_rgba(make_sign(0, 96)).astype(np.float64)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-35, 35), st.floats(-35, 35), st.floats(-8, 8), st.floats(8, 220), st.sampled_from(["sign", "rect"])
)
def test_warp_hits_requested_size(yaw, pitch, roll, scale, kind):
    src = SIGN if kind == "sign" else random_template(37, 61)
    w = warp_template(src, GeomParams(yaw, pitch, roll, scale))
    assert abs(max(w.tight_box.width, w.tight_box.height) - scale) <= 1
    alpha = w.alpha
    # buffer is cropped to the tight box: every edge row/column touches the sign
    assert alpha[0].any() and alpha[-1].any() and alpha[:, 0].any() and alpha[:, -1].any()
    assert alpha.min() >= 0 and alpha.max() <= 255
    assert w.image[:, :, :3].min() >= 0 and w.image[:, :, :3].max() <= 255


def test_warp_is_pure():
    src = SIGN.copy()
    g = GeomParams(20, -10, 5, 50)
    a, b = warp_template(src, g), warp_template(src, g)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(src, SIGN)


# -- local brightness, jitter ---------------------------------------------------


def test_local_brightness_zero_shift():
    w = warped(random_template(4, 4))
    assert np.array_equal(match_local_brightness(w, 90.0, 90.0).image, w.image)


@pytest.mark.parametrize("mean, const, v, expected", [(100, 40, 50, 110), (255, 0, 200, 255)])
def test_local_brightness_arithmetic(mean, const, v, expected):
    w = warped(rgba(1, 1, v))
    assert np.allclose(match_local_brightness(w, mean, const).image[0, 0, :3], expected)


def test_local_brightness_skips_transparent():
    img = rgba(1, 2, 50)
    img[0, 1, 3] = 0
    out = match_local_brightness(warped(img), 100, 40).image
    assert np.allclose(out[0, 0, :3], 110) and np.allclose(out[0, 1, :3], 50)


def test_jitter_zero_amplitude():
    w = warped(random_template(6, 6))
    assert np.array_equal(apply_jitter(w, 0, np.random.default_rng(1)).image, w.image)


def test_jitter_bounded_and_deterministic():
    w = warped(rgba(20, 20, 128))
    a = apply_jitter(w, 10, np.random.default_rng(5)).image
    b = apply_jitter(w, 10, np.random.default_rng(5)).image
    assert np.array_equal(a, b)
    assert np.all(np.abs(a[:, :, :3] - 128) <= 10)
    assert not np.array_equal(a, w.image)
    assert np.array_equal(a[:, :, 3], w.image[:, :, 3])


# -- fade -----------------------------------------------------------------------


def brute_chessboard(mask):
    """Distance to the nearest False pixel, counting everything off-buffer as False."""
    h, w = mask.shape
    zeros = [(y, x) for y in range(-1, h + 1) for x in range(-1, w + 1)
             if not (0 <= y < h and 0 <= x < w) or not mask[y, x]]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                out[y, x] = min(max(abs(y - zy), abs(x - zx)) for zy, zx in zeros)
    return out


def test_fade_identity():
    w = warped(random_template(5, 5))
    assert np.array_equal(fade_borders(w, 0).image, w.image)


def test_fade_opaque_square():
    out = fade_borders(warped(rgba(10, 10)), 2).image[:, :, 3]
    expected = 255 * np.minimum(1, brute_chessboard(np.ones((10, 10), bool)) / 2)
    assert np.allclose(out, expected)
    assert out[0, 5] == pytest.approx(127.5)
    assert quantize(out[0:1, 0:1, None].repeat(3, 2))[0, 0, 0] == 128
    assert np.all(out[2:8, 2:8] == 255)


@pytest.mark.parametrize("seed", range(5))
def test_chessboard_distance_matches_brute_force(seed):
    mask = np.random.default_rng(seed).random((9, 12)) > 0.3
    assert np.array_equal(chessboard_distance(mask), brute_chessboard(mask))


def test_fade_monotone_inward():
    img = rgba(15, 15)
    yy, xx = np.mgrid[:15, :15]
    img[:, :, 3] = np.where((yy - 7) ** 2 + (xx - 7) ** 2 <= 36, 255, 0)
    out = fade_borders(warped(img), 4).image[:, :, 3]
    dist = chessboard_distance(img[:, :, 3] > 0)
    order = np.argsort(dist.ravel(), kind="stable")
    assert np.all(np.diff(out.ravel()[order][dist.ravel()[order] > 0]) >= 0)


# -- alpha composite ------------------------------------------------------------


def test_composite_transparent():
    canvas = np.random.default_rng(0).random((20, 20, 3)) * 255
    out, box = alpha_composite(canvas, warped(rgba(5, 6, 10, 0)), (3, 4))
    assert np.array_equal(out, canvas)
    assert box == BoundingBox(3, 4, 6, 5)


def test_composite_opaque_replaces():
    canvas = np.zeros((20, 20, 3))
    tpl = random_template(5, 6, seed=3)
    out, _ = alpha_composite(canvas, warped(tpl), (3, 4))
    assert np.array_equal(out[4:9, 3:9], tpl[:, :, :3])


def test_composite_half_alpha_rounding():
    out, _ = alpha_composite(np.zeros((4, 4, 3)), warped(rgba(2, 2, 255, 128)), (1, 1))
    assert out[1, 1, 0] == pytest.approx(128.0)
    assert quantize(out)[1, 1, 0] == 128
    out, _ = alpha_composite(np.zeros((4, 4, 3)), warped(rgba(2, 2, 255, 127.5)), (1, 1))
    assert out[1, 1, 0] == 127.5 and quantize(out)[1, 1, 0] == 128


def test_composite_writes_only_inside_box():
    canvas = np.random.default_rng(1).random((30, 30, 3)) * 255
    out, box = alpha_composite(canvas, warped(random_template(7, 9)), (10, 12))
    outside = np.ones((30, 30), bool)
    outside[12:19, 10:19] = False
    assert np.array_equal(out[outside], canvas[outside])


def test_composite_out_of_bounds():
    with pytest.raises(PlacementError):
        alpha_composite(np.zeros((10, 10, 3)), warped(rgba(5, 5)), (6, 0))


# -- gaussian blur --------------------------------------------------------------


def direct_convolution(image, kernel):
    """Plain 2-D convolution of a single channel with the outer-product kernel, clamped edges."""
    k2 = np.outer(kernel, kernel)
    r = len(kernel) // 2
    h, w = image.shape
    out = np.zeros_like(image)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += k2[dy + r, dx + r] * image[yy, xx]
            out[y, x] = acc
    return out


def test_blur_zero_sigma_identity():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert np.array_equal(gaussian_blur(img, 0), img)
    assert np.array_equal(gaussian_blur(img, 0.005), img)


@pytest.mark.parametrize("sigma", [0.5, 1.3, 4.0])
def test_blur_constant_exact(sigma):
    img = np.full((25, 30, 3), 173.3)
    assert np.array_equal(gaussian_blur(img, sigma), img)


def test_blur_kernel_shape():
    k = gaussian_kernel(2.0)
    assert k.size == 2 * math.ceil(6.0) + 1
    assert k.sum() == pytest.approx(1.0)


def test_blur_impulse_matches_direct_convolution():
    img = np.zeros((21, 21, 3))
    img[10, 10] = 1.0
    out = gaussian_blur(img, 2.0)
    k = gaussian_kernel(2.0)
    expected = np.zeros((21, 21))
    expected[4:17, 4:17] = np.outer(k, k)
    assert np.abs(out[:, :, 0] - expected).max() <= 1e-6
    assert np.abs(out[:, :, 0] - direct_convolution(img[:, :, 0], k)).max() <= 1e-6


def test_blur_random_matches_direct_convolution():
    img = np.random.default_rng(4).random((12, 15, 3)) * 255
    k = gaussian_kernel(1.1)
    out = gaussian_blur(img, 1.1)
    for c in range(3):
        assert np.abs(out[:, :, c] - direct_convolution(img[:, :, c], k)).max() <= 1e-6


def test_blur_preserves_mean():
    img = np.full((200, 200, 3), 60.0)
    img[50:150, 50:150] = np.random.default_rng(2).random((100, 100, 3)) * 255
    assert abs(gaussian_blur(img, 3.0).mean() - img.mean()) <= 0.5


# -- poisson --------------------------------------------------------------------


def poisson_case(seed, size=5, ring_alpha=100.0):
    """Template with a size x size opaque core inside a ring of alpha < 128."""
    rng = np.random.default_rng(seed)
    tpl = np.zeros((size + 2, size + 2, 4))
    tpl[:, :, :3] = rng.integers(0, 256, (size + 2, size + 2, 3))
    tpl[:, :, 3] = ring_alpha
    tpl[1:-1, 1:-1, 3] = 255
    canvas = rng.integers(0, 256, (size + 8, size + 8, 3)).astype(np.float64)
    return canvas, warped(tpl), (3, 3)


def dense_poisson(canvas, tpl, pos):
    """Assemble and solve the 5-point Laplacian system directly."""
    alpha = tpl[:, :, 3]
    omega = {(y + pos[1], x + pos[0]) for y, x in zip(*np.nonzero(alpha >= 128))}
    cells = sorted(omega)
    idx = {p: i for i, p in enumerate(cells)}
    n = len(cells)
    a = np.zeros((n, n))
    b = np.zeros((n, 3))
    for (y, x), i in idx.items():
        a[i, i] = 4
        g = tpl[y - pos[1], x - pos[0], :3]
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            q = (y + dy, x + dx)
            ty, tx = q[0] - pos[1], q[1] - pos[0]
            if 0 <= ty < tpl.shape[0] and 0 <= tx < tpl.shape[1] and alpha[ty, tx] > 0:
                b[i] += g - tpl[ty, tx, :3]
            if q in idx:
                a[i, idx[q]] = -1
            else:
                b[i] += canvas[q]
    sol = np.linalg.solve(a, b)
    out = canvas.copy()
    for (y, x), i in idx.items():
        out[y, x] = sol[i]
    return out


def test_poisson_empty_region():
    canvas = np.random.default_rng(0).random((10, 10, 3)) * 255
    res = poisson_blend(canvas, warped(rgba(3, 3, 50, 100)), (3, 3))
    assert np.array_equal(res.image, canvas) and res.converged


def test_poisson_constant_converges_to_canvas():
    canvas = np.full((20, 20, 3), 80.0)
    res = poisson_blend(canvas, warped(rgba(6, 6, 200)), (7, 7), tolerance=1e-6, max_iters=20000)
    assert res.converged
    assert np.abs(res.image - 80).max() < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_poisson_matches_dense_solve(seed):
    canvas, w, pos = poisson_case(seed)
    res = poisson_blend(canvas, w, pos, tolerance=0.1, max_iters=100000)
    assert res.converged
    expected = dense_poisson(canvas, w.image, pos)
    assert np.abs(res.image - expected).max() <= 1.0


def test_poisson_zero_alpha_neighbours_give_no_guidance():
    canvas, w, pos = poisson_case(7, ring_alpha=0.0)
    res = poisson_blend(canvas, w, pos, tolerance=0.01, max_iters=100000)
    assert np.abs(res.image - dense_poisson(canvas, w.image, pos)).max() <= 0.1


def test_poisson_leaves_outside_untouched():
    canvas, w, pos = poisson_case(11)
    res = poisson_blend(canvas, w, pos)
    inside = np.zeros(canvas.shape[:2], bool)
    inside[4:9, 4:9] = True
    assert np.array_equal(res.image[~inside], canvas[~inside])


def test_poisson_flags_non_convergence():
    canvas, w, pos = poisson_case(2)
    res = poisson_blend(canvas, w, pos, tolerance=1e-9, max_iters=3)
    assert not res.converged and res.iterations == 3 and res.residual > 1e-9


def test_poisson_needs_border():
    with pytest.raises(PlacementError):
        poisson_blend(np.zeros((10, 10, 3)), warped(rgba(4, 4)), (0, 3))
