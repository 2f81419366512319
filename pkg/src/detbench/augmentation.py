"""Seedable image augmentations with co-transformed bounding boxes.

Geometric warps use inverse mapping with bilinear sampling; pixel (i, j) is
centred on the continuous coordinate (j + 0.5, i + 0.5) so that pixel data and
box corners share one coordinate frame.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import ConfigError, DegenerateTransform, WrongArity
from .geometry import BoundingBox

BORDER_VALUE = 114


@dataclass(frozen=True)
class ImageSample:
    image_id: str
    pixels: np.ndarray  # (H, W, 3) uint8
    boxes: Tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be (H, W, 3) with H, W > 0, got {px.shape}")
        if px.dtype != np.uint8:
            px = np.clip(np.rint(px), 0, 255).astype(np.uint8)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "boxes", tuple(self.boxes))
        h, w = px.shape[:2]
        for b in self.boxes:
            if b.x_min < 0 or b.y_min < 0 or b.x_max > w or b.y_max > h:
                raise ValueError(f"box {b} outside the {w}x{h} image")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class AugmentationConfig:
    hsv_h: float = 0.015
    hsv_s: float = 0.7
    hsv_v: float = 0.4
    degrees: float = 180.0
    translate: float = 0.1
    scale: float = 0.5
    shear: float = 180.0
    perspective: float = 0.001
    flipud: float = 0.0
    fliplr: float = 0.5
    mosaic: float = 1.0
    min_box_area_fraction: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for name in ("flipud", "fliplr", "mosaic"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} probability {v} outside [0, 1]")
        for name in ("hsv_h", "hsv_s", "hsv_v", "translate", "scale", "perspective", "min_box_area_fraction"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.scale >= 1.0:
            raise ConfigError("scale gain must be < 1 so sampled scales stay positive")
        for name in ("degrees", "shear"):
            v = getattr(self, name)
            if not 0.0 <= v <= 180.0:
                raise ConfigError(f"{name} range must lie within [0, 180] degrees, got {v}")
        if self.shear > 45.0:
            warnings.warn(f"shear range +/-{self.shear} deg includes near-degenerate warps (|shear| > 45)",
                          stacklevel=3)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown augmentation keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentationConfig":
        return cls(hsv_h=0.0, hsv_s=0.0, hsv_v=0.0, degrees=0.0, translate=0.0, scale=0.0, shear=0.0,
                   perspective=0.0, flipud=0.0, fliplr=0.0, mosaic=0.0, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# colour


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Float RGB in [0, 1] to HSV with hue as a fraction of the colour wheel."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)
    safe_c = np.where(c > 0, c, 1)
    h = np.where(v == r, (g - b) / safe_c,
                 np.where(v == g, 2.0 + (b - r) / safe_c, 4.0 + (r - g) / safe_c))
    h = np.where(c > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(i, choices_r)
    g = np.choose(i, choices_g)
    b = np.choose(i, choices_b)
    return np.stack([r, g, b], axis=-1)


def adjust_hsv(s: ImageSample, gains: Tuple[float, float, float]) -> ImageSample:
    """Shift hue additively (wrapping) and scale saturation/value by ``1 + gain``."""
    r_h, r_s, r_v = (float(g) for g in gains)
    hsv = rgb_to_hsv(s.pixels.astype(float) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + r_h) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * (1.0 + r_s), 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * (1.0 + r_v), 0.0, 1.0)
    rgb = hsv_to_rgb(hsv) * 255.0
    return replace(s, pixels=np.clip(np.rint(rgb), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# geometry


def _translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def warp_matrix(width: int, height: int, degrees: float = 0.0, translate: Tuple[float, float] = (0.0, 0.0),
                scale: float = 1.0, shear: Tuple[float, float] = (0.0, 0.0),
                perspective: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Forward 3x3 matrix: centre, perspective, rotate+scale, shear, translate back.

    Positive ``degrees`` rotate counter-clockwise as displayed (y axis down).
    """
    C = _translation(-width / 2.0, -height / 2.0)
    P = np.eye(3)
    P[2, 0], P[2, 1] = perspective
    a = math.radians(degrees)
    ca, sa = math.cos(a), math.sin(a)
    R = np.array([[ca * scale, sa * scale, 0.0], [-sa * scale, ca * scale, 0.0], [0.0, 0.0, 1.0]])
    S = np.eye(3)
    S[0, 1] = math.tan(math.radians(shear[0]))
    S[1, 0] = math.tan(math.radians(shear[1]))
    T = _translation(width / 2.0 + translate[0] * width, height / 2.0 + translate[1] * height)
    return T @ S @ R @ P @ C


def _check_invertible(M: np.ndarray) -> None:
    if not np.all(np.isfinite(M)):
        raise DegenerateTransform("transform has non-finite entries")
    det = np.linalg.det(M)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise DegenerateTransform(f"transform is not invertible (det={det})")


def apply_homography(M: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ M.T
    return hom[:, :2] / hom[:, 2:3]


def warp_pixels(pixels: np.ndarray, M: np.ndarray, out_size: Tuple[int, int],
                border_value: int = BORDER_VALUE, replicate: bool = False) -> np.ndarray:
    """Bilinear inverse-mapped warp of an (H, W, C) image; ``out_size`` is (W, H)."""
    _check_invertible(M)
    Minv = np.linalg.inv(M)
    out_w, out_h = out_size
    src = pixels.astype(float)
    h, w = src.shape[:2]
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    gx = xs.ravel() + 0.5
    gy = ys.ravel() + 0.5
    den = Minv[2, 0] * gx + Minv[2, 1] * gy + Minv[2, 2]
    ok = den > 0
    den = np.where(ok, den, 1.0)
    u = (Minv[0, 0] * gx + Minv[0, 1] * gy + Minv[0, 2]) / den - 0.5
    v = (Minv[1, 0] * gx + Minv[1, 1] * gy + Minv[1, 2]) / den - 0.5
    u = np.where(ok, u, -10.0)
    v = np.where(ok, v, -10.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = (u - x0)[:, None]
    fy = (v - y0)[:, None]

    def tap(yy, xx):
        if replicate:
            return src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h) & ok
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[:, None], vals, float(border_value))

    out = (tap(y0, x0) * (1 - fx) * (1 - fy) + tap(y0, x0 + 1) * fx * (1 - fy)
           + tap(y0 + 1, x0) * (1 - fx) * fy + tap(y0 + 1, x0 + 1) * fx * fy)
    out = out.reshape(out_h, out_w, src.shape[2])
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _clip_polygon(pts: np.ndarray, width: float, height: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon to [0, width] x [0, height]."""
    poly = [tuple(p) for p in pts]
    for axis, bound, keep_below in ((0, 0.0, False), (0, width, True), (1, 0.0, False), (1, height, True)):
        if not poly:
            break
        inside = (lambda p: p[axis] <= bound) if keep_below else (lambda p: p[axis] >= bound)
        out = []
        for k, cur in enumerate(poly):
            prev = poly[k - 1]
            if inside(cur) != inside(prev):
                t = (bound - prev[axis]) / (cur[axis] - prev[axis])
                cut = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]
                cut[axis] = bound
                out.append(tuple(cut))
            if inside(cur):
                out.append(cur)
        poly = out
    return np.array(poly, dtype=float).reshape(-1, 2)


def warp_boxes(boxes: Sequence[BoundingBox], M: np.ndarray, width: int, height: int,
               min_area_fraction: float = 1e-4) -> Tuple[BoundingBox, ...]:
    """Map boxes through ``M`` as the axis-aligned hull of their warped corners.

    The warped quadrilateral is clipped to the image before taking the hull, so
    corners that leave the frame do not inflate the box.  Boxes left with less
    than ``min_area_fraction`` of the image area are dropped.
    """
    out = []
    min_area = min_area_fraction * width * height
    for b in boxes:
        # corners in polygon order
        corners = np.array([[b.x_min, b.y_min], [b.x_max, b.y_min], [b.x_max, b.y_max], [b.x_min, b.y_max]])
        hom = np.column_stack([corners, np.ones(4)]) @ M.T
        if np.any(hom[:, 2] <= 0):
            continue
        pts = _clip_polygon(hom[:, :2] / hom[:, 2:3], width, height)
        if len(pts) == 0:
            continue
        x0, y0 = np.clip(pts.min(axis=0), 0, [width, height])
        x1, y1 = np.clip(pts.max(axis=0), 0, [width, height])
        area = (x1 - x0) * (y1 - y0)
        if area < min_area or (area <= 0 < b.area):
            continue
        out.append(BoundingBox(float(x0), float(y0), float(x1), float(y1), b.class_id, b.confidence))
    return tuple(out)


def warp_sample(s: ImageSample, M: np.ndarray, min_area_fraction: float = 1e-4,
                border_value: int = BORDER_VALUE) -> ImageSample:
    pixels = warp_pixels(s.pixels, M, (s.width, s.height), border_value)
    return replace(s, pixels=pixels, boxes=warp_boxes(s.boxes, M, s.width, s.height, min_area_fraction))


def affine(s: ImageSample, degrees: float, translate: Tuple[float, float], scale: float,
           shear: Tuple[float, float], min_area_fraction: float = 1e-4) -> ImageSample:
    """Rotate about the centre, scale, shear and translate (fractions of the image size)."""
    if scale <= 0:
        raise DegenerateTransform(f"scale must be positive, got {scale}")
    M = warp_matrix(s.width, s.height, degrees, translate, scale, shear)
    return warp_sample(s, M, min_area_fraction)


def perspective(s: ImageSample, coeffs: Tuple[float, float], min_area_fraction: float = 1e-4) -> ImageSample:
    """Projective warp about the image centre with bottom row ``(p_x, p_y, 1)``."""
    M = warp_matrix(s.width, s.height, perspective=coeffs)
    return warp_sample(s, M, min_area_fraction)


def flip(s: ImageSample, axis: str) -> ImageSample:
    w, h = s.width, s.height
    if axis == "horizontal":
        pixels = s.pixels[:, ::-1]
        boxes = tuple(replace(b, x_min=w - b.x_max, x_max=w - b.x_min) for b in s.boxes)
    elif axis == "vertical":
        pixels = s.pixels[::-1]
        boxes = tuple(replace(b, y_min=h - b.y_max, y_max=h - b.y_min) for b in s.boxes)
    else:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    return replace(s, pixels=np.ascontiguousarray(pixels), boxes=boxes)


def resize(pixels: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize to ``size`` = (W, H) with edge replication."""
    h, w = pixels.shape[:2]
    new_w, new_h = size
    if (new_w, new_h) == (w, h):
        return pixels.copy()
    M = np.diag([new_w / w, new_h / h, 1.0])
    return warp_pixels(pixels, M, (new_w, new_h), replicate=True)


def mosaic(samples: Sequence[ImageSample], out_size: int, center: Tuple[int, int],
           min_area_fraction: float = 1e-4, border_value: int = BORDER_VALUE,
           image_id: Optional[str] = None) -> ImageSample:
    """Tile four samples around ``center`` on an ``out_size`` square canvas.

    Each input is scaled to fit its quadrant (aspect kept) and placed against
    the split point; the rest of the quadrant stays at ``border_value``.
    """
    if len(samples) != 4:
        raise WrongArity(f"mosaic needs exactly 4 samples, got {len(samples)}")
    if out_size <= 0:
        raise ValueError("out_size must be positive")
    cx, cy = (int(round(c)) for c in center)
    if not (0 <= cx <= out_size and 0 <= cy <= out_size):
        raise ValueError(f"mosaic center {center} outside the {out_size}px canvas")
    canvas = np.full((out_size, out_size, 3), border_value, dtype=np.uint8)
    cells = [(0, 0, cx, cy), (cx, 0, out_size, cy), (0, cy, cx, out_size), (cx, cy, out_size, out_size)]
    min_area = min_area_fraction * out_size * out_size
    boxes = []
    for k, (s, (x0, y0, x1, y1)) in enumerate(zip(samples, cells)):
        cw, ch = x1 - x0, y1 - y0
        if cw <= 0 or ch <= 0:
            continue
        f = min(cw / s.width, ch / s.height)
        nw = min(cw, max(1, int(round(s.width * f))))
        nh = min(ch, max(1, int(round(s.height * f))))
        ox = x1 - nw if k in (0, 2) else x0
        oy = y1 - nh if k in (0, 1) else y0
        canvas[oy:oy + nh, ox:ox + nw] = resize(s.pixels, (nw, nh))
        sx, sy = nw / s.width, nh / s.height
        for b in s.boxes:
            bx0 = min(max(b.x_min * sx + ox, x0), x1)
            by0 = min(max(b.y_min * sy + oy, y0), y1)
            bx1 = min(max(b.x_max * sx + ox, x0), x1)
            by1 = min(max(b.y_max * sy + oy, y0), y1)
            area = (bx1 - bx0) * (by1 - by0)
            if area < min_area or (area <= 0 < b.area):
                continue
            boxes.append(BoundingBox(bx0, by0, bx1, by1, b.class_id, b.confidence))
    return ImageSample(image_id if image_id is not None else samples[0].image_id, canvas, tuple(boxes))


# ---------------------------------------------------------------------------
# pipeline


def sample_rng(seed: int, image_id: str) -> np.random.Generator:
    """Generator keyed by (seed, image_id), independent of dataset order."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int.from_bytes(digest[:8], "little")])


@dataclass
class PipelineParams:
    image_id: str
    mosaic: bool = False
    companions: Tuple[int, ...] = ()
    mosaic_center: Tuple[int, int] = (0, 0)
    degrees: float = 0.0
    translate: Tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    shear: Tuple[float, float] = (0.0, 0.0)
    perspective: Tuple[float, float] = (0.0, 0.0)
    hsv_gains: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    flipud: bool = False
    fliplr: bool = False
    companion_ids: Tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def draw_params(s: ImageSample, cfg: AugmentationConfig, pool_size: int = 0) -> PipelineParams:
    """Draw every random parameter for one sample in a fixed order."""
    rng = sample_rng(cfg.seed, s.image_id)
    out = max(s.width, s.height)
    use_mosaic = bool(rng.random() < cfg.mosaic) and pool_size > 0
    companions = tuple(int(i) for i in rng.integers(0, max(pool_size, 1), size=3))
    center = tuple(int(v) for v in rng.uniform(out / 4.0, 3.0 * out / 4.0, size=2))
    degrees = float(rng.uniform(-cfg.degrees, cfg.degrees))
    translate = tuple(float(v) for v in rng.uniform(-cfg.translate, cfg.translate, size=2))
    scale = float(rng.uniform(1.0 - cfg.scale, 1.0 + cfg.scale))
    shear = tuple(float(v) for v in rng.uniform(-cfg.shear, cfg.shear, size=2))
    persp = tuple(float(v) for v in rng.uniform(-cfg.perspective, cfg.perspective, size=2))
    gains = tuple(float(v) for v in rng.uniform(-1.0, 1.0, size=3) * [cfg.hsv_h, cfg.hsv_s, cfg.hsv_v])
    flipud = bool(rng.random() < cfg.flipud)
    fliplr = bool(rng.random() < cfg.fliplr)
    return PipelineParams(
        image_id=s.image_id, mosaic=use_mosaic, companions=companions if use_mosaic else (),
        mosaic_center=center if use_mosaic else (0, 0), degrees=degrees, translate=translate, scale=scale,
        shear=shear, perspective=persp, hsv_gains=gains, flipud=flipud, fliplr=fliplr,
    )


def apply_params(s: ImageSample, params: PipelineParams, cfg: AugmentationConfig,
                 companion_pool: Sequence[ImageSample] = ()) -> ImageSample:
    out = s
    if params.mosaic:
        companions = [companion_pool[i] for i in params.companions]
        params.companion_ids = tuple(c.image_id for c in companions)
        size = max(s.width, s.height)
        out = mosaic([s] + companions, size, params.mosaic_center, cfg.min_box_area_fraction, image_id=s.image_id)
    M = warp_matrix(out.width, out.height, params.degrees, params.translate, params.scale,
                    params.shear, params.perspective)
    if not np.array_equal(M, np.eye(3)):
        out = warp_sample(out, M, cfg.min_box_area_fraction)
    if any(params.hsv_gains):
        out = adjust_hsv(out, params.hsv_gains)
    if params.flipud:
        out = flip(out, "vertical")
    if params.fliplr:
        out = flip(out, "horizontal")
    return out


def apply_pipeline(s: ImageSample, cfg: AugmentationConfig, companion_pool: Sequence[ImageSample] = (),
                   return_params: bool = False):
    """Mosaic, then affine+perspective, then HSV, then flips.

    All randomness comes from a generator keyed by ``(cfg.seed, s.image_id)``.
    """
    params = draw_params(s, cfg, len(companion_pool))
    out = apply_params(s, params, cfg, companion_pool)
    return (out, params) if return_params else out
