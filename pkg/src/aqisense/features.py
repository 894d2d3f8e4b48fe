"""Content-nonspecific haze feature maps and the stacked CNN input.

Six per-pixel statistics that track haze density rather than scene content:

  F1  refined dark channel     patch minimum over channels, edge-refined
  F2  max local contrast       patch maximum of local RMS intensity spread
  F3  max local saturation     patch maximum of 1 - min/max channel ratio
  F4  min local color attenuation   patch minimum of the brightness/saturation
                                    depth regression
  F5  hue disparity            circular hue distance to the semi-inverse image
  F6  chroma                   CIELab radial colorfulness

Patch statistics clip windows at the image border.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from .errors import InputError
from .imaging import (
    AtmosphericLight,
    GrayMap,
    HazeImage,
    WHITE_LIGHT,
    box_count,
    box_sum,
    estimate_atmospheric_light,
    guided_filter,
    luminance,
    resize_bilinear,
    to_cielab,
    to_hsv,
)

LAYER_NAMES = (
    "refined_dark_channel",
    "max_local_contrast",
    "max_local_saturation",
    "min_local_color_attenuation",
    "hue_disparity",
    "chroma",
)


@dataclass(frozen=True)
class PatchSpec:
    """Odd side lengths of the outer patch and the inner contrast region."""

    patch: int = 15
    inner: int = 5

    def __post_init__(self):
        if self.patch % 2 == 0 or self.inner % 2 == 0:
            raise InputError(f"patch sizes must be odd, got {self.patch}/{self.inner}")
        if not (self.patch >= self.inner >= 1):
            raise InputError(f"need patch >= inner >= 1, got {self.patch}/{self.inner}")


@dataclass(frozen=True)
class ColorAttenuationParams:
    """Brightness/saturation depth regression coefficients (color attenuation prior)."""

    theta0: float = 0.121779
    theta1: float = 0.959710
    theta2: float = -0.780245
    sigma: float = 0.041337

    def __post_init__(self):
        if self.sigma < 0.0:
            raise InputError(f"sigma {self.sigma} must be >= 0")


@dataclass(frozen=True)
class FeatureConfig:
    """Extraction settings; patch and filter sizes scale with the working size."""

    size: int = 128
    patch_spec: PatchSpec = field(default_factory=PatchSpec)
    attenuation: ColorAttenuationParams = field(default_factory=ColorAttenuationParams)
    gf_radius: int = 40
    gf_epsilon: float = 1e-3
    light_fraction: float = 0.001

    @classmethod
    def for_size(cls, size: int) -> "FeatureConfig":
        if size < 8:
            raise InputError(f"working size {size} too small")

        def odd(n):
            n = max(1, int(round(n)))
            return n if n % 2 == 1 else n - 1

        return cls(
            size=size,
            patch_spec=PatchSpec(odd(15 * size / 128), odd(5 * size / 128)),
            gf_radius=max(1, int(round(40 * size / 128))),
        )


@dataclass(frozen=True)
class FeatureStack:
    """The six feature layers, each min-max rescaled to [0, 1], shape (h, w, 6)."""

    layers: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.layers, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != len(LAYER_NAMES):
            raise InputError(f"expected (h, w, 6) layers, got {a.shape}")
        if not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0:
            raise InputError("stack layers must be finite and within [0, 1]")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "layers", a)

    @property
    def width(self) -> int:
        return self.layers.shape[1]

    @property
    def height(self) -> int:
        return self.layers.shape[0]

    def layer(self, index: int) -> GrayMap:
        return GrayMap(self.layers[..., index])


def dark_channel(img: HazeImage, light: AtmosphericLight, spec: PatchSpec) -> GrayMap:
    """Patch minimum over airlight-normalised channels."""
    ratio = (img.pixels / light.as_array()).min(axis=2)
    return GrayMap(minimum_filter(ratio, size=spec.patch, mode="nearest"))


def refined_dark_channel(
    img: HazeImage,
    light: AtmosphericLight,
    spec: PatchSpec,
    gf_radius: int = 40,
    gf_epsilon: float = 1e-3,
) -> GrayMap:
    """Dark channel with its transmission complement smoothed by the guided filter.

    The raw patch minimum blocks up at patch granularity; filtering the
    complement against the image luminance restores scene edges before the
    map is flipped back and clamped to [0, 1].
    """
    dark = dark_channel(img, light, spec)
    transmission = GrayMap(1.0 - dark.values)
    refined_t = guided_filter(luminance(img), transmission, gf_radius, gf_epsilon)
    return GrayMap(np.clip(1.0 - refined_t.values, 0.0, 1.0))


def max_local_contrast(img: HazeImage, spec: PatchSpec) -> GrayMap:
    """Patch maximum of the RMS intensity deviation in the inner region.

    The deviation at y is sqrt(sum over the inner region of ||I(z) - I(y)||^2
    divided by (#channels * region size)).
    """
    px = img.pixels
    h, w = px.shape[0], px.shape[1]
    r = spec.inner // 2
    cnt = box_count(h, w, r)
    # sum_z ||I(z) - I(y)||^2 = sum_c [ S2_c - 2 I_c S1_c + cnt * I_c^2 ];
    # channels are centered first so the cumulative sums cancel exactly on
    # constant images instead of leaving rounding residue under the sqrt
    acc = np.zeros((h, w), dtype=np.float64)
    for c in range(3):
        ch = px[..., c] - px[..., c].mean()
        s1 = box_sum(ch, r)
        s2 = box_sum(ch * ch, r)
        acc += s2 - 2.0 * ch * s1 + cnt * ch * ch
    local = np.sqrt(np.maximum(acc, 0.0) / (3.0 * cnt))
    return GrayMap(maximum_filter(local, size=spec.patch, mode="nearest"))


def max_local_saturation(img: HazeImage, spec: PatchSpec) -> GrayMap:
    """Patch maximum of per-pixel saturation 1 - min_c/max_c (0 for black pixels)."""
    px = img.pixels
    maxc = px.max(axis=2)
    minc = px.min(axis=2)
    sat = np.where(maxc > 0.0, 1.0 - minc / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    return GrayMap(maximum_filter(sat, size=spec.patch, mode="nearest"))


def min_local_color_attenuation(
    img: HazeImage, params: ColorAttenuationParams, spec: PatchSpec
) -> GrayMap:
    """Patch minimum of the linear brightness/saturation depth estimate."""
    _, sat, val = to_hsv(img)
    depth = params.theta0 + params.theta1 * val.values + params.theta2 * sat.values
    return GrayMap(minimum_filter(depth, size=spec.patch, mode="nearest"))


def semi_inverse(img: HazeImage) -> HazeImage:
    """Per channel max(v, 1-v); fixed point for channels >= 0.5."""
    return HazeImage(np.maximum(img.pixels, 1.0 - img.pixels))


def hue_disparity(img: HazeImage) -> GrayMap:
    """Circular hue distance between the image and its semi-inverse."""
    hue, _, _ = to_hsv(img)
    hue_si, _, _ = to_hsv(semi_inverse(img))
    diff = np.abs(hue_si.values - hue.values)
    return GrayMap(np.minimum(diff, 1.0 - diff))


def chroma(img: HazeImage) -> GrayMap:
    """CIELab radial colorfulness sqrt(a^2 + b^2)."""
    _, a, b = to_cielab(img)
    return GrayMap(np.sqrt(a.values**2 + b.values**2))


def rescale_unit(values: np.ndarray) -> np.ndarray:
    """Min-max rescale to [0, 1]; constant maps go to all zeros."""
    lo = values.min()
    hi = values.max()
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def extract_stack(img: HazeImage, config: FeatureConfig | None = None) -> FeatureStack:
    """Resize, compute F1..F6 and stack them, each layer rescaled to [0, 1]."""
    cfg = config or FeatureConfig()
    work = resize_bilinear(img, cfg.size, cfg.size)
    spec = cfg.patch_spec

    # Airlight selection uses the unnormalised dark channel of the resized image.
    rough_dark = GrayMap(
        minimum_filter(work.pixels.min(axis=2), size=spec.patch, mode="nearest")
    )
    light = estimate_atmospheric_light(work, rough_dark, cfg.light_fraction)

    maps = (
        refined_dark_channel(work, light, spec, cfg.gf_radius, cfg.gf_epsilon),
        max_local_contrast(work, spec),
        max_local_saturation(work, spec),
        min_local_color_attenuation(work, cfg.attenuation, spec),
        hue_disparity(work),
        chroma(work),
    )
    stacked = np.stack([rescale_unit(m.values) for m in maps], axis=2)
    return FeatureStack(stacked)
