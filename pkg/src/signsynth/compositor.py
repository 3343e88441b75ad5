"""Template blending steps.

Each step is a pure function on float64 buffers: inputs are never modified
and the same inputs (and seed) always give the same output. Color values live
in [0, 255]; alpha is also kept on the 0..255 scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from signsynth.boxes import BoundingBox
from signsynth.errors import DegenerateHomographyError, PlacementError

# Below this sigma the blur kernel is a delta to double precision.
MIN_BLUR_SIGMA = 0.01
DEFAULT_FOCAL_RATIO = 2.0
DEFAULT_BRIGHTNESS_CONSTANT = 128.0
DEFAULT_POISSON_TOLERANCE = 0.1
POISSON_ALPHA_THRESHOLD = 128
# Rescaling rounds for hitting the requested sign size to within a pixel.
_MAX_SCALE_ROUNDS = 8


@dataclass(frozen=True)
class PhotometricParams:
    alpha: float = 1.0  # contrast multiplier
    beta: float = 0.0  # intensity offset

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("contrast multiplier must be positive")


@dataclass(frozen=True)
class GeomParams:
    yaw: float = 0.0  # degrees, about the vertical axis
    pitch: float = 0.0  # degrees, about the horizontal axis
    roll: float = 0.0  # degrees, in-plane
    scale: float = 1.0  # longest side of the warped sign in pixels


@dataclass(frozen=True, eq=False)
class WarpedTemplate:
    """RGBA float buffer plus the tight bounds of its nonzero alpha."""

    image: np.ndarray
    tight_box: BoundingBox

    @property
    def alpha(self) -> np.ndarray:
        return self.image[:, :, 3]

    def replace(self, image: np.ndarray) -> WarpedTemplate:
        return WarpedTemplate(image, self.tight_box)


def adjust_brightness_contrast(image: np.ndarray, p: PhotometricParams) -> np.ndarray:
    """Map every color value ``v`` to ``clip(alpha * v + beta, 0, 255)``; alpha channel untouched."""
    out = np.array(image, dtype=np.float64, copy=True)
    if p.alpha == 1.0 and p.beta == 0.0:
        return out
    color = out[:, :, :3]
    color *= p.alpha
    color += p.beta
    np.clip(color, 0.0, 255.0, out=color)
    return out


def tight_bounds(alpha: np.ndarray) -> tuple[int, int, int, int] | None:
    """(x, y, width, height) of the pixels with alpha > 0, or None if there are none."""
    cols = np.flatnonzero(np.any(alpha > 0, axis=0))
    rows = np.flatnonzero(np.any(alpha > 0, axis=1))
    if cols.size == 0:
        return None
    return int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    y, p, r = np.radians([yaw, pitch, roll])
    ry = np.array([[math.cos(y), 0, math.sin(y)], [0, 1, 0], [-math.sin(y), 0, math.cos(y)]])
    rx = np.array([[1, 0, 0], [0, math.cos(p), -math.sin(p)], [0, math.sin(p), math.cos(p)]])
    rz = np.array([[math.cos(r), -math.sin(r), 0], [math.sin(r), math.cos(r), 0], [0, 0, 1]])
    return rz @ rx @ ry


def plane_homography(width: int, height: int, g: GeomParams, focal: float) -> np.ndarray:
    """Homography from template coordinates to the image of the rotated plane.

    The template plane is centered on the optical axis at distance ``focal``
    from a pinhole camera of the same focal length, so zero rotation gives
    the identity up to a translation.
    """
    rot = rotation_matrix(g.yaw, g.pitch, g.roll)
    center = np.array([[1, 0, -width / 2], [0, 1, -height / 2], [0, 0, 1]], dtype=np.float64)
    extrinsic = np.column_stack([rot[:, 0], rot[:, 1], [0.0, 0.0, focal]])
    intrinsic = np.diag([focal, focal, 1.0])
    return intrinsic @ extrinsic @ center


def _project(h: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    homog = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return homog[:, :2] / homog[:, 2:3], homog[:, 2]


def _support_outline(alpha: np.ndarray) -> np.ndarray:
    """Corner points of the convex hull of the pixels with alpha > 0 (continuous coords)."""
    ys, xs = np.nonzero(alpha > 0)
    pts = np.column_stack([xs, ys]).astype(np.float32)
    if len(pts) > 3:
        pts = cv2.convexHull(pts).reshape(-1, 2)
    offsets = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.float64)
    return (pts[:, None, :].astype(np.float64) + offsets[None, :, :]).reshape(-1, 2)


def _index_homography(h: np.ndarray, lo: np.ndarray, s: float) -> np.ndarray:
    """``s * h`` shifted so the projected outline starts 1 px in, in cv2 index coords."""
    shift = np.array([[s, 0, 1 - s * lo[0]], [0, s, 1 - s * lo[1]], [0, 0, 1]])
    full = shift @ h
    # cv2 samples at integer pixel indices; convert from continuous (corner-origin) coords.
    to_idx = np.array([[1, 0, -0.5], [0, 1, -0.5], [0, 0, 1]])
    from_idx = np.array([[1, 0, 0.5], [0, 1, 0.5], [0, 0, 1]])
    return to_idx @ full @ from_idx


def warp_template(template_rgba: np.ndarray, g: GeomParams, focal_ratio: float = DEFAULT_FOCAL_RATIO) -> WarpedTemplate:
    """Rotate the template plane in 3D, project it, and scale it to ``g.scale``.

    The longest side of the returned tight box equals ``g.scale`` to within
    one pixel. Color is warped premultiplied by alpha so transparent pixels do
    not bleed into the silhouette edge.
    """
    src = np.asarray(template_rgba, dtype=np.float64)
    if src.ndim != 3 or src.shape[2] != 4:
        raise ValueError("warp_template expects an RGBA buffer")
    if not g.scale > 0:
        raise ValueError("scale must be positive")
    if abs(g.yaw) >= 90 or abs(g.pitch) >= 90:
        raise DegenerateHomographyError(f"yaw={g.yaw}, pitch={g.pitch} puts the plane edge-on or backwards")
    height, width = src.shape[:2]
    focal = focal_ratio * max(height, width)
    h = plane_homography(width, height, g, focal)

    corners = np.array([[0, 0], [width, 0], [0, height], [width, height]], dtype=np.float64)
    _, depth = _project(h, corners)
    if np.any(depth <= 1e-6 * focal):
        raise DegenerateHomographyError(f"rotation {g} maps a template corner behind the camera")

    alpha = src[:, :, 3]
    if not np.any(alpha > 0):
        raise ValueError("template has no opaque pixels")
    outline, _ = _project(h, _support_outline(alpha))
    lo = outline.min(axis=0)
    extent = float((outline.max(axis=0) - lo).max())
    if extent < 1e-9:
        raise DegenerateHomographyError(f"rotation {g} collapses the template")

    premult = src.copy()
    premult[:, :, :3] *= alpha[:, :, None] / 255.0
    span = outline.max(axis=0) - lo

    target = float(g.scale)
    s = target / extent
    best = None
    for _ in range(_MAX_SCALE_ROUNDS):
        m = _index_homography(h, lo, s)
        dsize = (int(math.ceil(span[0] * s)) + 3, int(math.ceil(span[1] * s)) + 3)
        warped = cv2.warpPerspective(
            premult, m, dsize, flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0
        )
        bounds = tight_bounds(warped[:, :, 3])
        if bounds is None:
            s *= 2.0
            continue
        longest = max(bounds[2], bounds[3])
        if best is None or abs(longest - target) < abs(best[0] - target):
            best = (longest, warped, bounds)
        if abs(longest - target) <= 1:
            break
        # Pixel count ~ extent * s + bleed; solve for the bleed observed at this s.
        bleed = longest - extent * s
        s = max((target - bleed) / extent, s * 0.25)
    _, warped, (bx, by, bw, bh) = best
    warped = warped[by : by + bh, bx : bx + bw].copy()
    a = warped[:, :, 3]
    np.clip(a, 0.0, 255.0, out=a)
    color = warped[:, :, :3]
    nz = a > 0
    color[nz] /= (a[nz] / 255.0)[:, None]
    color[~nz] = 0.0
    np.clip(color, 0.0, 255.0, out=color)
    return WarpedTemplate(warped, BoundingBox(0, 0, bw, bh))


def match_local_brightness(w: WarpedTemplate, region_mean: float, constant: float = DEFAULT_BRIGHTNESS_CONSTANT) -> WarpedTemplate:
    """Shift the sign's colors by ``region_mean - constant`` where alpha > 0."""
    out = w.image.copy()
    shift = region_mean - constant
    if shift == 0:
        return w.replace(out)
    mask = out[:, :, 3] > 0
    out[:, :, :3][mask] = np.clip(out[:, :, :3][mask] + shift, 0.0, 255.0)
    return w.replace(out)


def apply_jitter(w: WarpedTemplate, amplitude: float, rng: np.random.Generator) -> WarpedTemplate:
    """Add i.i.d. U(-amplitude, amplitude) noise to the colors of pixels with alpha > 0.

    Noise is drawn for the whole buffer so the number of draws depends only
    on the buffer shape.
    """
    if amplitude < 0:
        raise ValueError("jitter amplitude must be non-negative")
    out = w.image.copy()
    noise = rng.random(out.shape[:2] + (3,))
    if amplitude == 0:
        return w.replace(out)
    noise = (2.0 * noise - 1.0) * amplitude
    mask = out[:, :, 3] > 0
    out[:, :, :3][mask] = np.clip(out[:, :, :3][mask] + noise[mask], 0.0, 255.0)
    return w.replace(out)


def chessboard_distance(mask: np.ndarray) -> np.ndarray:
    """Chessboard distance from each True pixel to the nearest False or off-buffer pixel."""
    padded = np.pad(mask.astype(np.uint8), 1)
    dist = cv2.distanceTransform(padded, cv2.DIST_C, 3)
    return dist[1:-1, 1:-1].astype(np.float64)


def fade_borders(w: WarpedTemplate, fade_width: float) -> WarpedTemplate:
    """Ramp alpha linearly to zero over ``fade_width`` pixels from the silhouette edge."""
    if fade_width < 0:
        raise ValueError("fade width must be non-negative")
    out = w.image.copy()
    if fade_width == 0:
        return w.replace(out)
    dist = chessboard_distance(out[:, :, 3] > 0)
    out[:, :, 3] *= np.minimum(1.0, dist / fade_width)
    return w.replace(out)


def _placement_slices(canvas_shape: tuple[int, ...], w: WarpedTemplate, position: tuple[int, int]):
    tb = w.tight_box
    x, y = int(position[0]), int(position[1])
    bw, bh = int(tb.width), int(tb.height)
    if x < 0 or y < 0 or x + bw > canvas_shape[1] or y + bh > canvas_shape[0]:
        raise PlacementError(
            f"template of size {bw}x{bh} at ({x}, {y}) does not fit a {canvas_shape[1]}x{canvas_shape[0]} canvas"
        )
    tx, ty = int(tb.x), int(tb.y)
    return (
        (slice(y, y + bh), slice(x, x + bw)),
        (slice(ty, ty + bh), slice(tx, tx + bw)),
        BoundingBox(x, y, bw, bh),
    )


def alpha_composite(
    canvas: np.ndarray, w: WarpedTemplate, position: tuple[int, int], inplace: bool = False
) -> tuple[np.ndarray, BoundingBox]:
    """Paste ``w`` with its tight box's top-left at ``position``.

    Returns the composited canvas and the ground-truth box in canvas
    coordinates. Only pixels inside that box are written.
    """
    dst, src, box = _placement_slices(canvas.shape, w, position)
    out = canvas if inplace else np.array(canvas, dtype=np.float64, copy=True)
    patch = w.image[src]
    a = patch[:, :, 3:4] / 255.0
    region = out[dst][:, :, :3]
    out[dst + (slice(0, 3),)] = a * patch[:, :, :3] + (1.0 - a) * region
    return out, box


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with clamp-to-edge borders; radius ceil(3 sigma)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    src = np.asarray(image, dtype=np.float64)
    if sigma < MIN_BLUR_SIGMA:
        return src.copy()
    k = gaussian_kernel(sigma)
    blurred = cv2.sepFilter2D(src, cv2.CV_64F, k, k, borderType=cv2.BORDER_REPLICATE).reshape(src.shape)
    # A unit-sum kernel maps a flat window to its value, but float summation can
    # be off by an ulp; copy such pixels through so flat areas stay exact.
    window = np.ones((k.size, k.size), np.uint8)
    lo = cv2.erode(src, window, borderType=cv2.BORDER_REPLICATE).reshape(src.shape)
    hi = cv2.dilate(src, window, borderType=cv2.BORDER_REPLICATE).reshape(src.shape)
    flat = lo == hi
    blurred[flat] = src[flat]
    return blurred


@dataclass(frozen=True, eq=False)
class PoissonResult:
    image: np.ndarray
    converged: bool
    iterations: int
    residual: float


def poisson_system(canvas: np.ndarray, source: np.ndarray, support: np.ndarray, omega: np.ndarray):
    """Right-hand side pieces of the discrete Poisson problem on ``omega``.

    All arrays cover the same window. Returns (guidance, boundary) per color
    channel, where guidance is the 5-point Laplacian of ``source`` restricted
    to neighbours inside ``support`` and boundary sums canvas values of
    neighbours outside ``omega``.
    """
    h, w = omega.shape
    guidance = np.zeros((h, w, 3))
    boundary = np.zeros((h, w, 3))
    pad_src = np.pad(source, ((1, 1), (1, 1), (0, 0)), mode="edge")
    pad_sup = np.pad(support, 1)
    pad_om = np.pad(omega, 1)
    pad_can = np.pad(canvas, ((1, 1), (1, 1), (0, 0)), mode="edge")
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = (slice(1 + dy, 1 + dy + h), slice(1 + dx, 1 + dx + w))
        sup = pad_sup[nb][:, :, None]
        guidance += np.where(sup, source - pad_src[nb], 0.0)
        boundary += np.where(pad_om[nb][:, :, None], 0.0, pad_can[nb])
    return guidance, boundary


def poisson_blend(
    canvas: np.ndarray,
    w: WarpedTemplate,
    position: tuple[int, int],
    tolerance: float = DEFAULT_POISSON_TOLERANCE,
    max_iters: int | None = None,
) -> PoissonResult:
    """Gradient-domain paste solved with Jacobi iteration.

    The region is the set of template pixels with alpha >= 128. Inside it the
    result satisfies lap(f) = lap(template) with f equal to the canvas on the
    surrounding ring; template pixels with zero alpha have no defined color
    and contribute no guidance. Iteration stops once the max-abs residual is
    at most ``tolerance`` or after ``max_iters`` sweeps (default
    ``10 * sqrt(|region|)``); the latter is reported through ``converged``.
    """
    dst, src, _ = _placement_slices(canvas.shape, w, position)
    out = np.array(canvas, dtype=np.float64, copy=True)
    patch = w.image[src]
    omega_local = patch[:, :, 3] >= POISSON_ALPHA_THRESHOLD
    n = int(omega_local.sum())
    if n == 0:
        return PoissonResult(out, True, 0, 0.0)

    # Window = template placement grown by one pixel so the ring is included.
    y0, x0 = dst[0].start - 1, dst[1].start - 1
    y1, x1 = dst[0].stop + 1, dst[1].stop + 1
    ys, xs = np.nonzero(omega_local)
    if (
        ys.min() + dst[0].start < 1
        or xs.min() + dst[1].start < 1
        or ys.max() + dst[0].start > canvas.shape[0] - 2
        or xs.max() + dst[1].start > canvas.shape[1] - 2
    ):
        raise PlacementError("Poisson region must stay at least one pixel inside the canvas")
    y0c, x0c = max(y0, 0), max(x0, 0)
    y1c, x1c = min(y1, canvas.shape[0]), min(x1, canvas.shape[1])
    win = (slice(y0c, y1c), slice(x0c, x1c))
    wh, ww = y1c - y0c, x1c - x0c
    oy, ox = dst[0].start - y0c, dst[1].start - x0c

    omega = np.zeros((wh, ww), dtype=bool)
    support = np.zeros((wh, ww), dtype=bool)
    source = np.zeros((wh, ww, 3))
    ph, pw = omega_local.shape
    omega[oy : oy + ph, ox : ox + pw] = omega_local
    support[oy : oy + ph, ox : ox + pw] = patch[:, :, 3] > 0
    source[oy : oy + ph, ox : ox + pw] = patch[:, :, :3]
    base = out[win][:, :, :3]

    guidance, boundary = poisson_system(base, source, support, omega)
    rhs = guidance + boundary
    if max_iters is None:
        max_iters = int(math.ceil(10 * math.sqrt(n)))

    # Start from the template shifted onto the mean canvas level of the ring.
    ring = (~omega) & (cv2.dilate(omega.astype(np.uint8), np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], np.uint8)) > 0)
    offset = (base[ring] - source[ring]).mean(axis=0) if ring.any() else np.zeros(3)
    f = np.where(omega[:, :, None], source + offset, 0.0)
    om3 = omega[:, :, None]

    residual = np.inf
    iterations = 0
    while True:
        pad = np.pad(f, ((1, 1), (1, 1), (0, 0)))
        neighbours = pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:]
        r = np.where(om3, rhs + neighbours - 4.0 * f, 0.0)
        residual = float(np.abs(r).max())
        if residual <= tolerance or iterations >= max_iters:
            break
        f += r / 4.0
        iterations += 1

    blended = np.where(om3, f, base)
    out[win + (slice(0, 3),)] = blended
    return PoissonResult(out, residual <= tolerance, iterations, residual)
