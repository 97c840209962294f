"""HSV red-region segmentation and classifier input preparation.

Pipeline: soft mask (HSV provider by default) -> threshold at 0.5 ->
morphological opening + closing -> mask application -> bilinear resize to
224x224 -> per-channel normalization into [-1, 1].

The soft-mask provider is pluggable: anything callable as frame -> SoftMask
(float confidences in [0, 1]) can replace the HSV provider.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

PREPARED_SIZE = 224

DEFAULT_RED_BANDS = ((0.0, 20.0), (340.0, 360.0))


@dataclass(frozen=True)
class HsvThresholds:
    hue_bands: tuple = DEFAULT_RED_BANDS  # [lo, hi) degree intervals on [0, 360)
    sat_min: float = 0.4
    val_min: float = 0.2

    def __post_init__(self):
        for lo, hi in self.hue_bands:
            if not (0.0 <= lo < hi <= 360.0):
                raise ArgumentError(f"bad hue band [{lo}, {hi})")
        if not 0.0 <= self.sat_min <= 1.0 or not 0.0 <= self.val_min <= 1.0:
            raise ArgumentError("sat_min and val_min must lie in [0, 1]")


def rgb_to_hsv(rgb):
    """Hexcone RGB -> (h, s, v); h in degrees [0, 360), s and v in [0, 1].

    Accepts a single (r, g, b) byte triple or an array with a trailing
    3-channel axis; h is defined as 0 where s == 0.
    """
    arr = np.asarray(rgb, dtype=np.float32)
    scalar = arr.ndim == 1
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    d = mx - mn
    v = mx / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mx > 0, d / mx, 0.0)
        dn = np.where(d > 0, d, 1.0)  # avoid div-by-zero where hue is undefined
        h = np.where(
            mx == r,
            (g - b) / dn,
            np.where(mx == g, 2.0 + (b - r) / dn, 4.0 + (r - g) / dn),
        )
    h = np.where(d > 0, (h * 60.0) % 360.0, 0.0)
    if scalar:
        return float(h), float(s), float(v)
    return h, s, v


def hsv_mask(frame: np.ndarray, thresholds: HsvThresholds = HsvThresholds()) -> np.ndarray:
    """Hard soft-mask: 1.0 where (hue in any band) & s >= sat_min & v >= val_min.

    Equivalent to thresholding rgb_to_hsv output, but hue (the expensive
    channel) is only computed for pixels that already pass the saturation
    and value gates; the float32 arithmetic is identical either way.
    """
    arr = np.asarray(frame)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    mx = np.maximum(np.maximum(arr[..., 0], arr[..., 1]), arr[..., 2])
    mn = np.minimum(np.minimum(arr[..., 0], arr[..., 1]), arr[..., 2])
    d = mx - mn
    # 8-bit value/saturation gates via lookup tables over the same float32
    # expressions rgb_to_hsv evaluates per pixel.
    levels = np.arange(256, dtype=np.float32)
    v_ok = levels / 255.0 >= thresholds.val_min
    with np.errstate(divide="ignore", invalid="ignore"):
        s_tab = np.where(levels[:, None] > 0, levels[None, :] / levels[:, None], 0.0)
    s_ok = s_tab >= thresholds.sat_min
    keep = v_ok[mx] & s_ok[mx, d]
    idx = np.nonzero(keep)
    if idx[0].size:
        sel = arr[idx].astype(np.float32)
        rs, gs, bs = sel[:, 0], sel[:, 1], sel[:, 2]
        mxs = mx[idx].astype(np.float32)
        ds = d[idx].astype(np.float32)
        dn = np.where(ds > 0, ds, 1.0)
        h = np.where(
            mxs == rs,
            (gs - bs) / dn,
            np.where(mxs == gs, 2.0 + (bs - rs) / dn, 4.0 + (rs - gs) / dn),
        )
        h = np.where(ds > 0, (h * 60.0) % 360.0, 0.0)
        in_band = np.zeros(h.shape, dtype=bool)
        for lo, hi in thresholds.hue_bands:
            in_band |= (h >= lo) & (h < hi)
        keep[idx] = in_band
    return keep.astype(np.float32)


def threshold(mask: np.ndarray, level: float = 0.5) -> np.ndarray:
    """Binarize a soft mask; a pixel is kept iff confidence >= level."""
    if not 0.0 <= level <= 1.0:
        raise ArgumentError(f"threshold level {level} outside [0, 1]")
    return np.asarray(mask) >= level


def _erode3(mask: np.ndarray) -> np.ndarray:
    """3x3 erosion; pixels beyond the border count as false."""
    p = np.pad(mask, 1, mode="constant", constant_values=False)
    out = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= p[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return out


def _dilate3(mask: np.ndarray) -> np.ndarray:
    """3x3 dilation over in-bounds neighbors only."""
    p = np.pad(mask, 1, mode="constant", constant_values=False)
    out = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= p[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return out


def morph_refine(mask: np.ndarray) -> np.ndarray:
    """Opening (erode, dilate) then closing (dilate, erode), 3x3 square element."""
    mask = np.asarray(mask, dtype=bool)
    opened = _dilate3(_erode3(mask))
    return _erode3(_dilate3(opened))


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment; edge-clamped.

    Integer inputs are gathered row-wise before the float32 conversion; the
    arithmetic is identical to converting the whole image up front.
    """
    img = np.asarray(image)
    in_h, in_w = img.shape[:2]

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
        i0 = np.floor(src).astype(np.int64)
        frac = (src - i0).astype(np.float32)
        i0c = np.clip(i0, 0, n_in - 1)
        i1c = np.clip(i0 + 1, 0, n_in - 1)
        return i0c, i1c, frac

    y0, y1, fy = axis_coords(in_h, out_h)
    x0, x1, fx = axis_coords(in_w, out_w)
    fy = fy[:, None, None] if img.ndim == 3 else fy[:, None]
    fx = fx[None, :, None] if img.ndim == 3 else fx[None, :]
    rows0 = img[y0].astype(np.float32, copy=False)
    rows1 = img[y1].astype(np.float32, copy=False)
    top = rows0[:, x0] * (1 - fx) + rows0[:, x1] * fx
    bot = rows1[:, x0] * (1 - fx) + rows1[:, x1] * fx
    return top * (1 - fy) + bot * fy


def apply_and_prepare(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mask a frame, resize to 224x224 and normalize to [-1, 1].

    Returns a (3, 224, 224) float32 tensor; masked-out pixels become -1 after
    normalization x' = (x/255 - 0.5) / 0.5.
    """
    frame = np.asarray(frame)
    mask = np.asarray(mask, dtype=bool)
    if frame.shape[:2] != mask.shape:
        raise ArgumentError(
            f"frame {frame.shape[:2]} and mask {mask.shape} dimensions differ"
        )
    if frame.dtype == np.uint8:
        masked = frame * mask[..., None].astype(np.uint8)
    else:
        masked = frame.astype(np.float32) * mask[..., None]
    resized = bilinear_resize(masked, PREPARED_SIZE, PREPARED_SIZE)
    normalized = (resized / 255.0 - 0.5) / 0.5
    # Convex bilinear weights keep values in range mathematically; clip the
    # float32 rounding slop so the [-1, 1] contract holds exactly.
    normalized = np.clip(normalized, -1.0, 1.0)
    return np.ascontiguousarray(normalized.transpose(2, 0, 1))


class HsvMaskProvider:
    """Default soft-mask provider backed by HSV thresholding."""

    def __init__(self, thresholds: HsvThresholds = HsvThresholds()):
        self.thresholds = thresholds

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        return hsv_mask(frame, self.thresholds)


def segment_frame(frame: np.ndarray, provider=None, level: float = 0.5) -> np.ndarray:
    """Full segmentation path: soft mask -> threshold -> morphology -> prepare."""
    if provider is None:
        provider = HsvMaskProvider()
    soft = provider(frame)
    refined = morph_refine(threshold(soft, level))
    return apply_and_prepare(frame, refined)
