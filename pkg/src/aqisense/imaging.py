"""Raster image primitives used by the haze feature pipeline.

Images are RGB rasters with intensities in [0, 1]; single-channel maps are
plain 2D float arrays.  All window statistics clip the window to the image
bounds instead of padding, so border pixels use exactly the pixels that exist.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, InputError


@dataclass(frozen=True)
class HazeImage:
    """RGB raster, shape (height, width, 3), intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InputError(f"expected (h, w, 3) pixel array, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError("image must be at least 1x1")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise InputError("intensities must be finite and within [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class GrayMap:
    """Single-channel scalar map, shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"expected (h, w) value array, got {v.shape}")
        if not np.isfinite(v).all():
            raise InputError("gray map values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class AtmosphericLight:
    """Global airlight estimate; components strictly positive so they can divide."""

    l_r: float
    l_g: float
    l_b: float

    def __post_init__(self):
        for c in (self.l_r, self.l_g, self.l_b):
            if not (0.0 < c <= 1.0):
                raise InputError(f"atmospheric light component {c} not in (0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.l_r, self.l_g, self.l_b], dtype=np.float64)


WHITE_LIGHT = AtmosphericLight(1.0, 1.0, 1.0)


def box_sum(values: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2*radius+1)^2 window clipped to the array bounds."""
    a = np.asarray(values, dtype=np.float64)
    h, w = a.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    y0 = np.clip(np.arange(h) - radius, 0, h)
    y1 = np.clip(np.arange(h) + radius + 1, 0, h)
    x0 = np.clip(np.arange(w) - radius, 0, w)
    x1 = np.clip(np.arange(w) + radius + 1, 0, w)
    return ii[np.ix_(y1, x1)] - ii[np.ix_(y0, x1)] - ii[np.ix_(y1, x0)] + ii[np.ix_(y0, x0)]


def box_count(height: int, width: int, radius: int) -> np.ndarray:
    """Number of in-bounds pixels in each clipped window."""
    ys = np.clip(np.arange(height) + radius + 1, 0, height) - np.clip(
        np.arange(height) - radius, 0, height
    )
    xs = np.clip(np.arange(width) + radius + 1, 0, width) - np.clip(
        np.arange(width) - radius, 0, width
    )
    return ys[:, None].astype(np.float64) * xs[None, :]


def luminance(img: HazeImage) -> GrayMap:
    """Rec. 601 luma; the default guide for edge-aware filtering."""
    r, g, b = img.pixels[..., 0], img.pixels[..., 1], img.pixels[..., 2]
    return GrayMap(0.299 * r + 0.587 * g + 0.114 * b)


def estimate_atmospheric_light(
    img: HazeImage, dark: GrayMap, fraction: float = 0.001
) -> AtmosphericLight:
    """Per-channel mean intensity over the brightest `fraction` of dark-channel pixels."""
    if not (0.0 < fraction <= 1.0):
        raise InputError(f"fraction {fraction} not in (0, 1]")
    if dark.values.shape != img.pixels.shape[:2]:
        raise InputError(
            f"dark map shape {dark.values.shape} does not match image {img.pixels.shape[:2]}"
        )
    n = dark.values.size
    take = max(1, int(round(n * fraction)))
    order = np.argsort(dark.values.ravel(), kind="stable")[::-1][:take]
    flat = img.pixels.reshape(n, 3)
    light = flat[order].mean(axis=0)
    light = np.maximum(light, 1e-6)
    return AtmosphericLight(float(light[0]), float(light[1]), float(light[2]))


def guided_filter(guide: GrayMap, src: GrayMap, radius: int, epsilon: float) -> GrayMap:
    """Edge-preserving smoothing of `src` steered by `guide`.

    Fits a local linear model a*guide+b per window (ridge-regularised by
    `epsilon`), then averages the coefficients over each pixel's windows.
    """
    if guide.values.shape != src.values.shape:
        raise InputError(
            f"guide shape {guide.values.shape} does not match input {src.values.shape}"
        )
    if radius < 1:
        raise InputError(f"radius {radius} must be >= 1")
    if epsilon <= 0.0:
        raise InputError(f"epsilon {epsilon} must be positive")
    g = guide.values
    s = src.values
    cnt = box_count(g.shape[0], g.shape[1], radius)
    mean_g = box_sum(g, radius) / cnt
    mean_s = box_sum(s, radius) / cnt
    var_g = box_sum(g * g, radius) / cnt - mean_g * mean_g
    cov_gs = box_sum(g * s, radius) / cnt - mean_g * mean_s
    a = cov_gs / (var_g + epsilon)
    b = mean_s - a * mean_g
    out = (box_sum(a, radius) / cnt) * g + box_sum(b, radius) / cnt
    return GrayMap(out)


def to_hsv(img: HazeImage) -> tuple[GrayMap, GrayMap, GrayMap]:
    """RGB -> HSV with hue in [0, 1); achromatic pixels get hue 0."""
    px = img.pixels
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    maxc = px.max(axis=2)
    minc = px.min(axis=2)
    delta = maxc - minc
    chromatic = delta > 0.0
    safe = np.where(chromatic, delta, 1.0)

    hue = np.zeros_like(maxc)
    is_r = chromatic & (maxc == r)
    is_g = chromatic & (maxc == g) & ~is_r
    is_b = chromatic & ~is_r & ~is_g
    hue = np.where(is_r, ((g - b) / safe) % 6.0, hue)
    hue = np.where(is_g, (b - r) / safe + 2.0, hue)
    hue = np.where(is_b, (r - g) / safe + 4.0, hue)
    hue = (hue / 6.0) % 1.0

    sat = np.where(maxc > 0.0, delta / np.where(maxc > 0.0, maxc, 1.0), 0.0)
    return GrayMap(hue), GrayMap(sat), GrayMap(maxc)


# sRGB (D65) linear RGB -> XYZ
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def to_cielab(img: HazeImage) -> tuple[GrayMap, GrayMap, GrayMap]:
    """sRGB (D65 white point) -> CIELab; L in [0, 100]."""
    srgb = img.pixels
    linear = np.where(
        srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4
    )
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lum = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return GrayMap(lum), GrayMap(a), GrayMap(b)


def resize_bilinear(img: HazeImage, width: int, height: int) -> HazeImage:
    """Bilinear resample with endpoint-aligned sample coordinates."""
    if width < 1 or height < 1:
        raise InputError(f"target size {width}x{height} must be >= 1x1")
    src = img.pixels
    sh, sw = src.shape[0], src.shape[1]

    def coords(n_dst, n_src):
        if n_dst == 1:
            return np.array([(n_src - 1) / 2.0])
        return np.linspace(0.0, n_src - 1.0, n_dst)

    ys = coords(height, sh)
    xs = coords(width, sw)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    out = (
        src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + src[np.ix_(y0, x1)] * (1 - fy) * fx
        + src[np.ix_(y1, x0)] * fy * (1 - fx)
        + src[np.ix_(y1, x1)] * fy * fx
    )
    return HazeImage(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# codecs: PNG (via Pillow), binary PPM in, PGM out
# ---------------------------------------------------------------------------


def read_image(path) -> HazeImage:
    """Read a PNG or binary PPM (P6) file into a HazeImage."""
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"P6":
        return _read_ppm(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise FormatError(f"{path}: not a readable PNG/PPM image ({exc})") from exc
    return HazeImage(arr)


def _read_token(fh) -> bytes:
    # PPM tokens are separated by whitespace; '#' starts a comment to EOL.
    tok = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise FormatError("truncated PPM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def _read_ppm(path) -> HazeImage:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise FormatError(f"{path}: bad PPM magic {magic!r}")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        maxval = int(_read_token(fh))
        if maxval <= 0 or maxval >= 65536:
            raise FormatError(f"{path}: unsupported PPM maxval {maxval}")
        per = 2 if maxval > 255 else 1
        expected = width * height * 3 * per
        payload = fh.read(expected)
        if len(payload) != expected:
            raise FormatError(
                f"{path}: truncated PPM payload, expected {expected} bytes, got {len(payload)}"
            )
    dtype = ">u2" if per == 2 else np.uint8
    arr = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return HazeImage(arr.astype(np.float64) / maxval)


def write_ppm(img: HazeImage, path) -> None:
    data = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_pgm(gray: GrayMap, path) -> None:
    """Write a gray map as binary PGM (P5), linearly mapped from [0, 1] to 0..255."""
    data = np.clip(np.rint(gray.values * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.width} {gray.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> GrayMap:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise FormatError(f"{path}: bad PGM magic {magic!r}")
        width = int(_read_token(fh))
        height = int(_read_token(fh))
        maxval = int(_read_token(fh))
        expected = width * height
        payload = fh.read(expected)
        if len(payload) != expected:
            raise FormatError(
                f"{path}: truncated PGM payload, expected {expected} bytes, got {len(payload)}"
            )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayMap(arr.astype(np.float64) / maxval)
