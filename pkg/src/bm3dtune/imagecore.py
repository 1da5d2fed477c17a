"""Grayscale image handling: PGM file I/O, seeded Gaussian noise, quality metrics.

Images are 2D float64 numpy arrays of shape (height, width), row-major,
with intensities nominally in [0, 255] (single channel). All functions in
this package exchange images in that form; quantization to 8 bits happens
only when a file is written.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "PgmError",
    "NoiseSpec",
    "MetricTriple",
    "as_image",
    "load_image",
    "save_image",
    "add_awgn",
    "gaussian_field",
    "derive_seed",
    "mse",
    "psnr",
    "ssim",
    "metric_triple",
]

_WHITESPACE = b" \t\n\r\x0b\x0c"


class PgmError(ValueError):
    """Raised for malformed or unsupported PGM files."""


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise: standard deviation in intensity units
    plus the 64-bit seed that fixes the realization."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class MetricTriple:
    mse: float
    psnr: float
    ssim: float


def as_image(data, width=None, height=None) -> np.ndarray:
    """Coerce to the canonical image form and check invariants.

    Accepts a 2D array (or anything array-like reshapeable to height x width)
    and returns a float64 copy. Rejects empty or non-finite input.
    """
    img = np.asarray(data, dtype=np.float64)
    if width is not None and height is not None:
        img = img.reshape(height, width)
    if img.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image dimensions must be >= 1, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img.copy()


# ---------------------------------------------------------------------------
# PGM (P5) reader/writer
# ---------------------------------------------------------------------------

def _next_token(buf: bytes, pos: int):
    """Return the next header token, skipping whitespace and '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == 0x23:  # '#'
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != 0x23:
        pos += 1
    if start == pos:
        raise PgmError("malformed PGM header: unexpected end of file")
    return buf[start:pos], pos


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) file as a float image."""
    with open(path, "rb") as fh:
        buf = fh.read()

    magic, pos = _next_token(buf, 0)
    if magic == b"P2":
        raise PgmError("ASCII PGM (P2) is not supported, only binary P5")
    if magic != b"P5":
        raise PgmError(f"malformed PGM header: bad magic {magic!r}")

    fields = []
    for name in ("width", "height", "maxval"):
        token, pos = _next_token(buf, pos)
        try:
            value = int(token)
        except ValueError:
            raise PgmError(f"malformed PGM header: non-numeric {name} {token!r}") from None
        fields.append(value)
    width, height, maxval = fields

    if width < 1 or height < 1:
        raise PgmError(f"malformed PGM header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise PgmError(f"unsupported PGM maxval {maxval}, expected 255")
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise PgmError("malformed PGM header: missing separator before pixel data")
    pos += 1  # exactly one whitespace byte between header and payload

    payload = buf[pos:pos + width * height]
    if len(payload) < width * height:
        raise PgmError(
            f"truncated PGM payload: expected {width * height} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return pixels.reshape(height, width)


def save_image(img, path) -> None:
    """Write a float image as binary PGM (P5, maxval 255).

    Values are clamped to [0, 255] and rounded half-away-from-zero to 8 bits.
    """
    img = as_image(img)
    height, width = img.shape
    quantized = np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(quantized.tobytes())
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Seeded Gaussian noise
#
# The generator is SplitMix64 (Steele et al., the mixer used by Java's
# SplittableRandom): output i is mix64(seed + (i+1) * 0x9E3779B97F4A7C15)
# with all arithmetic mod 2^64. Uniform doubles take the top 53 bits.
# Pairs of uniforms are turned into normals by the Box-Muller transform and
# consumed in row-major pixel order, so a given (shape, seed) always yields
# the same noise field.
# ---------------------------------------------------------------------------

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(seed: int, count: int) -> np.ndarray:
    base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = base + idx * _SM64_GAMMA
    z = (z ^ (z >> np.uint64(30))) * _SM64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _SM64_MIX2
    return z ^ (z >> np.uint64(31))


def gaussian_field(shape, seed: int) -> np.ndarray:
    """Deterministic standard-normal field for the given shape and seed."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    bits = _splitmix64(seed, 2 * pairs)
    u = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
    u1 = 1.0 - u[0::2]  # in (0, 1], keeps log() finite
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count].reshape(shape)


def add_awgn(img, spec: NoiseSpec) -> np.ndarray:
    """Corrupt an image with AWGN and clamp the result to [0, 255]."""
    img = as_image(img)
    noise = gaussian_field(img.shape, spec.seed)
    return np.clip(img + spec.sigma * noise, 0.0, 255.0)


def derive_seed(base_seed: int, name: str, sigma: float) -> int:
    """Stable per-record seed: first 8 little-endian bytes of
    SHA-256 over "<base_seed>|<name>|<sigma:g>"."""
    text = f"{base_seed}|{name}|{sigma:g}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


# ---------------------------------------------------------------------------
# Quality metrics
# ---------------------------------------------------------------------------

def _check_same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    diff = a - b
    return float(np.mean(diff * diff))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for a 255 peak; inf when images match."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_SSIM_KERNEL = _ssim_window()


def ssim(a, b) -> float:
    """Mean structural similarity over an 11x11 Gaussian window (std 1.5).

    Follows the classic formulation: K1=0.01, K2=0.03, L=255, weighted local
    moments, and averaging over valid window positions only (no padding).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    win = _SSIM_KERNEL.shape[0]
    if a.shape[0] < win or a.shape[1] < win:
        raise ValueError(f"image smaller than the {win}x{win} SSIM window: {a.shape}")

    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    kernel = _SSIM_KERNEL

    def local_mean(img):
        windows = sliding_window_view(img, (win, win))
        return np.einsum("ijkl,kl->ij", windows, kernel)

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


def metric_triple(reference, candidate) -> MetricTriple:
    """All three quality metrics of `candidate` against `reference`."""
    return MetricTriple(
        mse=mse(reference, candidate),
        psnr=psnr(reference, candidate),
        ssim=ssim(reference, candidate),
    )
