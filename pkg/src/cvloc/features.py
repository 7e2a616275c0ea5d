"""Feature and attention pyramids with sub-pixel lookup.

Feature maps are stored row-major (height, width, channels); lookup
coordinates are (u, v) with u along width and v along height. Lookups use
bilinear interpolation and return the analytic spatial gradient of the
interpolant, which downstream Jacobians chain with the projection
geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ContractError, DomainError

#: Pixel vectors with an L2 norm below this stay zero under normalization.
ZERO_NORM_EPS = 1e-12

#: Unit-norm slack accepted by the ``normalized`` flag.
UNIT_NORM_TOL = 1e-6


def is_unit_normalized(data: np.ndarray, tol: float = UNIT_NORM_TOL) -> bool:
    """True if every pixel's channel vector has unit L2 norm (or is zero)."""
    norms = np.linalg.norm(data.astype(np.float64), axis=-1)
    return bool(np.all((np.abs(norms - 1.0) <= tol) | (norms <= ZERO_NORM_EPS)))


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-pixel feature map, shape (height, width, channels)."""

    data: np.ndarray
    normalized: bool = False
    zero_pixels: int = 0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ContractError(f"feature data must be HxWxC, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("feature data contains non-finite values")
        if self.normalized and not is_unit_normalized(arr):
            raise ContractError("map flagged normalized but pixel norms are not unit")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class AttentionMap:
    """Per-pixel confidence in [0, 1], shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ContractError(f"attention data must be HxW, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("attention data contains non-finite values")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DomainError("attention out of [0,1]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FeaturePyramid:
    """Ordered (FeatureMap, AttentionMap) pairs, finest level first."""

    levels: tuple
    level_order: str = "finest_first"

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) < 1:
            raise ContractError("pyramid needs at least one level")
        if self.level_order != "finest_first":
            raise ContractError(f"unsupported level order {self.level_order!r}")
        for i, (feat, att) in enumerate(levels):
            if (feat.height, feat.width) != (att.height, att.width):
                raise ContractError(
                    f"level {i}: attention {att.height}x{att.width} does not match "
                    f"features {feat.height}x{feat.width}")
        object.__setattr__(self, "levels", levels)

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def feature(self, level: int) -> FeatureMap:
        return self.levels[level][0]

    def attention(self, level: int) -> AttentionMap:
        return self.levels[level][1]


@dataclass(frozen=True)
class SparseAlignment:
    """Per-point residuals and weights of one cross-view evaluation.

    Rows with ``valid_mask`` False carry zero residual and zero weight, so
    masked points contribute exactly nothing to downstream sums.
    """

    residuals: np.ndarray
    weights: np.ndarray
    valid_mask: np.ndarray


def normalize_features(fmap: FeatureMap) -> FeatureMap:
    """L2-normalize every pixel's channel vector.

    Pixels with norm below ``ZERO_NORM_EPS`` are left zero rather than
    inflated, so empty regions cannot fake correspondence; their count is
    reported on the returned map.
    """
    data = fmap.data.astype(np.float64)
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    zero = norms[..., 0] <= ZERO_NORM_EPS
    out = np.where(zero[..., None], 0.0, data / np.where(zero[..., None], 1.0, norms))
    return FeatureMap(out.astype(fmap.data.dtype), normalized=True,
                      zero_pixels=int(zero.sum()))


def bilinear_weights(shape_hw: tuple[int, int], uv: np.ndarray):
    """Corner indices and interpolation weights for bilinear lookup.

    Returns (v0, u0, v1, u1, w00, w01, w10, w11) with w00 at (v0, u0) and
    w01 at (v0, u1). Coordinates are clamped so indices stay legal; use the
    in-bounds mask from :func:`bilinear_lookup_many` to reject outsiders.
    """
    h, w = shape_hw
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u), max(w - 2, 0)).astype(np.intp)
    v0 = np.minimum(np.floor(v), max(h - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = u - u0
    fv = v - v0
    w11 = fu * fv
    w10 = fv - w11
    w01 = fu - w11
    w00 = 1.0 - fu - fv + w11
    return v0, u0, v1, u1, w00, w01, w10, w11


def bilinear_lookup_many(data: np.ndarray, uv: np.ndarray):
    """Vectorized bilinear lookup with analytic spatial gradients.

    Args:
        data: (h, w, c) array.
        uv: (N, 2) sub-pixel coordinates.

    Returns:
        values: (N, c) interpolated values, zero where out of bounds.
        grads: (N, c, 2) d(value)/d(u, v), zero where out of bounds.
        in_bounds: (N,) True where uv lies in [0, w-1] x [0, h-1].
    """
    h, w, _ = data.shape
    uv = np.asarray(uv, dtype=np.float64)
    u, v = uv[:, 0], uv[:, 1]
    in_bounds = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    v0, u0, v1, u1, w00, w01, w10, w11 = bilinear_weights((h, w), uv)
    f00 = data[v0, u0].astype(np.float64)
    f01 = data[v0, u1].astype(np.float64)
    f10 = data[v1, u0].astype(np.float64)
    f11 = data[v1, u1].astype(np.float64)

    values = (w00[:, None] * f00 + w01[:, None] * f01
              + w10[:, None] * f10 + w11[:, None] * f11)

    fu = np.clip(u, 0.0, w - 1.0) - u0
    fv = np.clip(v, 0.0, h - 1.0) - v0
    grads = np.empty((uv.shape[0], data.shape[2], 2))
    grads[:, :, 0] = (1.0 - fv)[:, None] * (f01 - f00) + fv[:, None] * (f11 - f10)
    grads[:, :, 1] = (1.0 - fu)[:, None] * (f10 - f00) + fu[:, None] * (f11 - f01)

    outside = ~in_bounds
    values[outside] = 0.0
    grads[outside] = 0.0
    return values, grads, in_bounds


def bilinear_lookup(fmap: FeatureMap, uv) -> tuple[np.ndarray, np.ndarray, bool]:
    """Single-point bilinear lookup on a feature map.

    Returns (value (c,), grad (c, 2), in_bounds). Out-of-bounds lookups
    return zeros with in_bounds False.
    """
    uv_arr = np.asarray(uv, dtype=np.float64).reshape(1, 2)
    values, grads, inb = bilinear_lookup_many(fmap.data, uv_arr)
    return values[0], grads[0], bool(inb[0])


def attention_lookup_many(amap: AttentionMap, uv: np.ndarray):
    """Bilinear attention values at uv; returns (values (N,), in_bounds (N,))."""
    values, _, inb = bilinear_lookup_many(amap.data[:, :, None], uv)
    return values[:, 0], inb


def compute_residuals(f_sat: FeatureMap, f_grd: FeatureMap, uv_sat: np.ndarray,
                      uv_grd: np.ndarray, visible: np.ndarray):
    """Sparse cross-view feature residuals.

    residual_i = f_sat[uv_sat_i] - f_grd[uv_grd_i] for points that are
    ground-visible and land in bounds in both maps; other rows are zeroed
    and masked out.

    Returns:
        residuals: (N, c)
        valid_mask: (N,) bool
    """
    if f_sat.channels != f_grd.channels:
        raise ContractError(
            f"channel mismatch: satellite {f_sat.channels} vs ground {f_grd.channels}")
    vals_sat, _, inb_sat = bilinear_lookup_many(f_sat.data, uv_sat)
    vals_grd, _, inb_grd = bilinear_lookup_many(f_grd.data, uv_grd)
    valid = np.asarray(visible, dtype=bool) & inb_sat & inb_grd
    residuals = vals_sat - vals_grd
    residuals[~valid] = 0.0
    return residuals, valid


def compute_weights(a_sat: AttentionMap, a_grd: AttentionMap, uv_sat: np.ndarray,
                    uv_grd: np.ndarray, valid_mask: np.ndarray) -> np.ndarray:
    """Per-point weights: product of the two views' attention lookups.

    Masked points get exactly zero weight.
    """
    w_sat, inb_sat = attention_lookup_many(a_sat, uv_sat)
    w_grd, inb_grd = attention_lookup_many(a_grd, uv_grd)
    weights = w_sat * w_grd
    weights[~(np.asarray(valid_mask, dtype=bool) & inb_sat & inb_grd)] = 0.0
    return weights


def _to_grayscale(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.ndim != 2 or arr.size == 0:
        raise ContractError(f"image must be HxW or HxWx3 and non-empty, got {arr.shape}")
    return arr


def _downsample(image: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(image, 1.0, mode="nearest")[::2, ::2]


def handcrafted_pyramid(image: np.ndarray, levels: int, channels_per_level: int,
                        attention_mask: np.ndarray | None = None) -> FeaturePyramid:
    """Deterministic multi-scale feature pyramid from a raw image.

    Per level the image is downsampled by 2 and expanded into channels
    (Gaussian-smoothed intensity and its x/y gradients at doubling blur
    scales, truncated to ``channels_per_level``), then L2-normalized per
    pixel. Attention is 1 everywhere unless ``attention_mask`` is given,
    in which case the mask is downsampled alongside the image.
    """
    if levels < 1:
        raise ContractError(f"levels must be >= 1, got {levels}")
    if channels_per_level < 1:
        raise ContractError(f"channels must be >= 1, got {channels_per_level}")
    img = _to_grayscale(image)
    mask = None
    if attention_mask is not None:
        mask = np.clip(np.asarray(attention_mask, dtype=np.float64), 0.0, 1.0)
        if mask.shape != img.shape:
            raise ContractError("attention mask shape must match the image")

    n_scales = -(-channels_per_level // 3)
    sigmas = [2.0**k for k in range(n_scales)]

    out = []
    for _ in range(levels):
        chans = []
        for sigma in sigmas:
            smooth = ndimage.gaussian_filter(img, sigma, mode="nearest")
            gy, gx = np.gradient(smooth)
            chans.extend([smooth, gx, gy])
        stack = np.stack(chans[:channels_per_level], axis=-1)
        fmap = normalize_features(FeatureMap(stack.astype(np.float32)))
        if mask is None:
            att = AttentionMap(np.ones(img.shape, dtype=np.float32))
        else:
            att = AttentionMap(np.clip(mask, 0.0, 1.0).astype(np.float32))
        out.append((fmap, att))
        img = _downsample(img)
        if mask is not None:
            mask = np.clip(_downsample(mask), 0.0, 1.0)
    return FeaturePyramid(tuple(out))
