"""Spherically weighted quality metrics for equirectangular frames.

ERP oversamples high latitudes, so pixel errors are weighted by the cosine
latitude profile w(i) = cos((i - H/2 + 1/2) * pi / H) before aggregation.
Weighted PSNR uses MAX^2 / WMSE with MAX the bit-depth ceiling; weighted SSIM
aggregates per-window structural terms scaled by the window-center weight and
reports -10*log10(1 - score). Identical inputs return math.inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Optional cap applied by plotting/CSV pipelines that cannot carry inf.
DB_CAP_DEFAULT = 100.0


class FrameFormatError(ValueError):
    """Unreadable or truncated image data."""


@dataclass(frozen=True)
class Frame:
    """Image payload with its sample bit depth."""

    pixels: np.ndarray  # (H, W) or (H, W, C), C in {1, 3}
    bit_depth: int = 8

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        object.__setattr__(self, "pixels", px)
        if px.ndim == 3 and px.shape[2] == 1:
            object.__setattr__(self, "pixels", px[:, :, 0])
        elif px.ndim == 3 and px.shape[2] != 3:
            raise ValueError("frames must have 1 or 3 channels")
        elif px.ndim not in (2, 3):
            raise ValueError("frames must be HxW or HxWxC")
        if np.any(px < 0) or np.any(px > self.max_value):
            raise ValueError("pixel values outside the bit-depth range")

    @property
    def max_value(self) -> float:
        return float(2 ** self.bit_depth - 1)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def channels(self) -> list[np.ndarray]:
        if self.pixels.ndim == 2:
            return [self.pixels]
        return [self.pixels[:, :, c] for c in range(self.pixels.shape[2])]


def latitude_weights(h: int, w: int = 1) -> np.ndarray:
    """Column-constant (h, w) map of cos((i - h/2 + 1/2) * pi / h)."""
    if h < 1 or w < 1:
        raise ValueError("dimensions must be positive")
    rows = np.cos((np.arange(h) - h / 2.0 + 0.5) * np.pi / h)
    return np.tile(rows[:, None], (1, w))


def _check_pair(x: Frame, y: Frame) -> None:
    if x.pixels.shape != y.pixels.shape:
        raise ValueError(f"frame shapes differ: {x.pixels.shape} vs {y.pixels.shape}")
    if x.bit_depth != y.bit_depth:
        raise ValueError("frame bit depths differ")


def wmse(x: Frame, y: Frame, weights: np.ndarray | None = None) -> float:
    """Latitude-weighted mean squared error, averaged over channels."""
    _check_pair(x, y)
    if weights is None:
        weights = latitude_weights(x.height, x.width)
    if weights.shape != (x.height, x.width):
        raise ValueError("weight map shape does not match the frames")
    wsum = weights.sum()
    vals = [
        float((np.square(cy - cx) * weights).sum() / wsum)
        for cx, cy in zip(x.channels(), y.channels())
    ]
    return float(np.mean(vals))


def ws_psnr(x: Frame, y: Frame, weights: np.ndarray | None = None) -> float:
    """Weighted PSNR in dB: 10*log10(MAX^2 / WMSE); inf for identical frames."""
    err = wmse(x, y, weights)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(x.max_value ** 2 / err)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _window_moments(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    """Gaussian-weighted window means, variances and covariance (valid windows)."""
    size = kernel.shape[0]
    wa = sliding_window_view(a, (size, size))
    wb = sliding_window_view(b, (size, size))
    mu_a = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
    return mu_a, mu_b, e_aa - mu_a * mu_a, e_bb - mu_b * mu_b, e_ab - mu_a * mu_b


def ws_ssim(x: Frame, y: Frame, weights: np.ndarray | None = None,
            window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Weighted structural similarity in dB.

    Per valid window the luminance*structure product is scaled by the latitude
    weight of the window center; the aggregate score s = sum(terms)/sum(center
    weights) is reported as -10*log10(1 - s), inf when s reaches 1.
    """
    _check_pair(x, y)
    if x.height < window or x.width < window:
        raise ValueError(f"frames smaller than the {window}x{window} window")
    if weights is None:
        weights = latitude_weights(x.height, x.width)
    half = window // 2
    center_w = weights[half:x.height - half, half:x.width - half]
    kernel = _gaussian_kernel(window, sigma)
    max_val = x.max_value
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2

    ratios = []
    for cx, cy in zip(x.channels(), y.channels()):
        mu_a, mu_b, var_a, var_b, cov = _window_moments(cx, cy, kernel)
        luminance = (2.0 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
        structure = (2.0 * cov + c2) / (var_a + var_b + c2)
        terms = luminance * structure * center_w
        ratios.append(terms.sum() / center_w.sum())
    score = float(np.mean(ratios))
    if score >= 1.0:
        return math.inf
    return -10.0 * math.log10(1.0 - score)


def cap_db(value: float, cap: float = DB_CAP_DEFAULT) -> float:
    """Clamp an (possibly infinite) dB score for pipelines that need finite values."""
    return min(value, cap)


@dataclass(frozen=True)
class LatitudeBudget:
    """Latitude-adaptive weight map with its dimension/entropy budget losses.

    omega blends the pooled latitude profile with a flat profile through the
    per-point factor eta: omega = eta * w_pooled + 1 - eta.
    """

    eta: np.ndarray
    pooled_weights: np.ndarray
    q_max: float
    omega: np.ndarray = field(init=False)

    def __post_init__(self):
        omega = adaptive_weight_map(self.eta, self.pooled_weights)
        object.__setattr__(self, "omega", omega)
        if self.q_max <= 0:
            raise ValueError("q_max must be positive")

    def dimension_loss(self, dims: np.ndarray):
        return latitude_budget(dims, self.omega, self.q_max)

    def entropy_loss(self, entropy: np.ndarray) -> float:
        return latitude_budget_entropy(entropy, self.omega)


def adaptive_avg_pool(weights: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Mean over contiguous input spans per output cell (adaptive average pooling)."""
    weights = np.asarray(weights, dtype=float)
    h, w = weights.shape
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -(-((i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -(-((j + 1) * w) // out_w)
            out[i, j] = weights[r0:r1, c0:c1].mean()
    return out


def adaptive_weight_map(eta: np.ndarray, pooled_weights: np.ndarray) -> np.ndarray:
    """omega = eta * w_pooled + 1 - eta, elementwise over the feature grid."""
    eta = np.asarray(eta, dtype=float)
    pooled = np.asarray(pooled_weights, dtype=float)
    if eta.shape != pooled.shape:
        raise ValueError("eta and pooled-weight shapes differ")
    if np.any((eta < 0) | (eta > 1)) or np.any((pooled < 0) | (pooled > 1)):
        raise ValueError("eta and pooled weights must lie in [0, 1]")
    return eta * pooled + 1.0 - eta


def latitude_budget(dims: np.ndarray, omega: np.ndarray, q_max: float):
    """Dimension-budget hinge loss and per-point feasibility of dims <= omega*q_max.

    Returns (loss, feasible): loss = sum(max(0, omega*q_max - dims)).
    """
    dims = np.asarray(dims, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if dims.shape != omega.shape:
        raise ValueError("dimension map and omega shapes differ")
    if q_max <= 0:
        raise ValueError("q_max must be positive")
    limit = omega * q_max
    loss = float(np.maximum(0.0, limit - dims).sum())
    return loss, dims <= limit


def latitude_budget_entropy(entropy: np.ndarray, omega: np.ndarray) -> float:
    """Entropy-form budget loss: sum(max(0, omega*max(entropy) - entropy))."""
    entropy = np.asarray(entropy, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if entropy.shape != omega.shape:
        raise ValueError("entropy map and omega shapes differ")
    return float(np.maximum(0.0, omega * entropy.max() - entropy).sum())


def _read_exact(fh, count: int, what: str):
    data = fh.read(count)
    if len(data) != count:
        raise FrameFormatError(
            f"truncated {what}: needed {count} bytes at offset {fh.tell() - len(data)}, "
            f"got {len(data)}"
        )
    return data


def _read_pnm(path) -> Frame:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 2, "header")
        if magic not in (b"P5", b"P6"):
            raise FrameFormatError(f"unsupported magic {magic!r} (want binary PGM/PPM)")
        fields = []
        while len(fields) < 3:
            tok = b""
            ch = fh.read(1)
            while ch.isspace():
                ch = fh.read(1)
            if ch == b"#":  # comment line
                while ch not in (b"\n", b""):
                    ch = fh.read(1)
                continue
            while ch and not ch.isspace():
                tok += ch
                ch = fh.read(1)
            if not tok:
                raise FrameFormatError(f"truncated header at offset {fh.tell()}")
            fields.append(int(tok))
        w, h, maxval = fields
        if maxval <= 0 or maxval > 65535:
            raise FrameFormatError(f"unsupported max value {maxval}")
        channels = 3 if magic == b"P6" else 1
        bytes_per = 2 if maxval > 255 else 1
        raw = _read_exact(fh, h * w * channels * bytes_per, "pixel data")
        dtype = ">u2" if bytes_per == 2 else np.uint8
        px = np.frombuffer(raw, dtype=dtype).reshape(
            (h, w) if channels == 1 else (h, w, 3)
        ).astype(float)
        bit_depth = max(1, maxval.bit_length())
        return Frame(pixels=px, bit_depth=bit_depth)


def load_frame(path) -> Frame:
    """Read an 8/16-bit PNG, PGM, or PPM image into a Frame."""
    name = str(path).lower()
    if name.endswith((".pgm", ".ppm", ".pnm")):
        return _read_pnm(path)
    if name.endswith(".png"):
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as img:
                img.load()
                if img.mode not in ("L", "RGB", "I;16"):
                    img = img.convert("RGB")
                px = np.asarray(img, dtype=float)
                depth = 16 if img.mode == "I;16" else 8
        except (OSError, UnidentifiedImageError) as exc:
            raise FrameFormatError(f"unreadable PNG {path}: {exc}") from exc
        return Frame(pixels=px, bit_depth=depth)
    raise FrameFormatError(f"unsupported format for {path} (want .png/.pgm/.ppm)")


def save_frame(frame: Frame, path) -> None:
    """Write a Frame losslessly; format chosen by extension."""
    name = str(path).lower()
    if frame.bit_depth > 8:
        raise ValueError("only 8-bit output is supported")
    px = np.round(frame.pixels).astype(np.uint8)
    if name.endswith((".pgm", ".ppm")):
        channels = 1 if px.ndim == 2 else 3
        magic = b"P5" if channels == 1 else b"P6"
        if (channels == 1) != name.endswith(".pgm"):
            raise ValueError("channel count does not match the extension")
        h, w = px.shape[:2]
        with open(path, "wb") as fh:
            fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
            fh.write(px.tobytes())
    elif name.endswith(".png"):
        from PIL import Image

        Image.fromarray(px).save(path)
    else:
        raise ValueError(f"unsupported output format for {path}")
