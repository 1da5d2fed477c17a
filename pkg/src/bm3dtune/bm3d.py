"""Two-stage BM3D denoiser with a tunable hard-threshold multiplier.

Stage 1 groups similar 8x8 blocks, applies a separable 3D transform
(orthonormal 2D DCT-II per block, orthonormal Haar across the group), hard
thresholds the coefficients at `lambda_3d * sigma`, and aggregates the
overlapping block estimates with Kaiser-windowed confidence weights.
Stage 2 repeats the grouping on the stage-1 estimate and applies empirical
Wiener shrinkage to the noisy coefficients.

Everything is plain single-threaded numpy on float64; identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import as_image

__all__ = [
    "Bm3dProfile",
    "BlockGroup",
    "dct2",
    "idct2",
    "haar1",
    "ihaar1",
    "block_match",
    "hard_threshold",
    "stage1_hard",
    "stage2_wiener",
    "denoise",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Bm3dProfile:
    """Tuning constants for both BM3D stages.

    `search_radius` bounds the displacement between a reference block and a
    candidate block, so candidates for each reference come from a
    (2*search_radius+1)^2 window of block positions clipped to the image.
    Match thresholds are per-pixel normalized squared distances in
    intensity^2 units. `lambda_3d` scales sigma into the stage-1 hard
    threshold and is the one externally tuned field.
    """

    block_size: int = 8
    step: int = 3
    search_radius: int = 19
    max_group1: int = 16
    max_group2: int = 32
    match_threshold1: float = 3000.0
    match_threshold2: float = 400.0
    lambda_3d: float = 2.7
    kaiser_beta: float = 2.0
    enable_stage2: bool = True

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if self.search_radius < self.block_size:
            raise ValueError(
                f"search_radius {self.search_radius} must be >= block_size {self.block_size}"
            )
        for name in ("max_group1", "max_group2"):
            value = getattr(self, name)
            if not _is_power_of_two(value):
                raise ValueError(f"{name} must be a power of two, got {value}")
        if self.lambda_3d <= 0:
            raise ValueError(f"lambda_3d must be > 0, got {self.lambda_3d}")

    def with_lambda(self, lambda_3d: float) -> "Bm3dProfile":
        return replace(self, lambda_3d=lambda_3d)


@dataclass
class BlockGroup:
    """A matched group: block positions (reference first) and the stacked
    coefficient volume of shape (group_count, block_size, block_size)."""

    positions: np.ndarray  # (g, 2) int, rows of (y, x)
    stack: np.ndarray  # (g, block_size, block_size) float64


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(n, dtype=np.float64)[None, :]
    m = math.sqrt(2.0 / n) * np.cos(np.pi * (2.0 * i + 1.0) * k / (2.0 * n))
    m[0] /= math.sqrt(2.0)
    return m


_DCT_CACHE: dict[int, np.ndarray] = {}


def _dct_for(n: int) -> np.ndarray:
    if n not in _DCT_CACHE:
        _DCT_CACHE[n] = _dct_matrix(n)
    return _DCT_CACHE[n]


def dct2(block) -> np.ndarray:
    """Orthonormal 2D DCT-II of a square block."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != block.shape[1]:
        raise ValueError(f"expected a square 2D block, got shape {block.shape}")
    d = _dct_for(block.shape[0])
    return d @ block @ d.T


def idct2(coeffs) -> np.ndarray:
    """Inverse of :func:`dct2`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError(f"expected a square 2D block, got shape {coeffs.shape}")
    d = _dct_for(coeffs.shape[0])
    return d.T @ coeffs @ d


_SQRT_HALF = math.sqrt(0.5)


def _haar_axis0(stack: np.ndarray) -> np.ndarray:
    """Full orthonormal Haar decomposition along axis 0 (power-of-two length)."""
    out = np.array(stack, dtype=np.float64, copy=True)
    n = out.shape[0]
    while n > 1:
        half = n // 2
        a = out[0:n:2]
        b = out[1:n:2]
        s = (a + b) * _SQRT_HALF
        d = (a - b) * _SQRT_HALF
        out[:half] = s
        out[half:n] = d
        n = half
    return out


def _ihaar_axis0(coeffs: np.ndarray) -> np.ndarray:
    out = np.array(coeffs, dtype=np.float64, copy=True)
    total = out.shape[0]
    n = 2
    while n <= total:
        half = n // 2
        s = out[:half].copy()
        d = out[half:n].copy()
        out[0:n:2] = (s + d) * _SQRT_HALF
        out[1:n:2] = (s - d) * _SQRT_HALF
        n *= 2
    return out


def haar1(values) -> np.ndarray:
    """Orthonormal 1D Haar decomposition; length must be a power of two <= 32."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"expected a 1D vector, got shape {values.shape}")
    if values.shape[0] not in (1, 2, 4, 8, 16, 32):
        raise ValueError(f"length must be in {{1,2,4,8,16,32}}, got {values.shape[0]}")
    return _haar_axis0(values)


def ihaar1(coeffs) -> np.ndarray:
    """Inverse of :func:`haar1`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1:
        raise ValueError(f"expected a 1D vector, got shape {coeffs.shape}")
    if coeffs.shape[0] not in (1, 2, 4, 8, 16, 32):
        raise ValueError(f"length must be in {{1,2,4,8,16,32}}, got {coeffs.shape[0]}")
    return _ihaar_axis0(coeffs)


def _dct2_stack(stack: np.ndarray) -> np.ndarray:
    d = _dct_for(stack.shape[-1])
    return np.matmul(np.matmul(d, stack), d.T)


def _idct2_stack(stack: np.ndarray) -> np.ndarray:
    d = _dct_for(stack.shape[-1])
    return np.matmul(np.matmul(d.T, stack), d)


# ---------------------------------------------------------------------------
# Matching and thresholding
# ---------------------------------------------------------------------------

def _match_in_window(patches, ref_y, ref_x, radius, threshold, max_group):
    """Positions of the best-matching blocks around one reference.

    Returns (g, 2) int array, reference first, remaining candidates in
    ascending (distance, row, column) order, truncated so g is the largest
    power of two <= max_group. Distances are computed directly as summed
    squared differences, which is exact on integer-valued images and keeps
    tie-breaking faithful.
    """
    pos_h, pos_w = patches.shape[:2]
    bs = patches.shape[2]
    y0 = max(0, ref_y - radius)
    y1 = min(pos_h - 1, ref_y + radius)
    x0 = max(0, ref_x - radius)
    x1 = min(pos_w - 1, ref_x + radius)

    diff = patches[y0:y1 + 1, x0:x1 + 1] - patches[ref_y, ref_x]
    dist = np.einsum("yxab,yxab->yx", diff, diff) / (bs * bs)

    keep_y, keep_x = np.nonzero(dist <= threshold)
    d = dist[keep_y, keep_x]
    rows = keep_y + y0
    cols = keep_x + x0

    ref_mask = (rows == ref_y) & (cols == ref_x)
    rows, cols, d = rows[~ref_mask], cols[~ref_mask], d[~ref_mask]
    order = np.lexsort((cols, rows, d))

    count = 1 + order.size
    size = min(1 << (count.bit_length() - 1), max_group)

    out = np.empty((size, 2), dtype=np.intp)
    out[0] = ref_y, ref_x
    chosen = order[:size - 1]
    out[1:, 0] = rows[chosen]
    out[1:, 1] = cols[chosen]
    return out


def block_match(img, ref, profile: Bm3dProfile, stage: int = 1) -> np.ndarray:
    """Match blocks similar to the reference block at top-left `ref` (y, x).

    Candidates live on the pixel grid within `profile.search_radius` of the
    reference position and must be fully inside the image; a candidate
    qualifies when its per-pixel normalized squared distance to the reference
    is no greater than the stage's match threshold.
    """
    img = as_image(img)
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    bs = profile.block_size
    ref_y, ref_x = int(ref[0]), int(ref[1])
    if not (0 <= ref_y <= img.shape[0] - bs and 0 <= ref_x <= img.shape[1] - bs):
        raise ValueError(f"reference block {ref} not fully inside image {img.shape}")
    threshold = profile.match_threshold1 if stage == 1 else profile.match_threshold2
    max_group = profile.max_group1 if stage == 1 else profile.max_group2
    patches = sliding_window_view(img, (bs, bs))
    return _match_in_window(
        patches, ref_y, ref_x, profile.search_radius, threshold, max_group
    )


def hard_threshold(stack, threshold: float):
    """Zero coefficients with magnitude below `threshold`; the DC coefficient
    at index (0, 0, 0) is exempt and always counts as retained.

    Returns (thresholded stack, retained-coefficient count).
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    stack = np.asarray(stack, dtype=np.float64)
    out = np.where(np.abs(stack) < threshold, 0.0, stack)
    out.flat[0] = stack.flat[0]
    n_retained = 1 + int(np.count_nonzero(out)) - int(out.flat[0] != 0.0)
    return out, n_retained


def _kaiser2d(block_size: int, beta: float) -> np.ndarray:
    w = np.kaiser(block_size, beta)
    return np.outer(w, w)


def _ref_positions(extent: int, block_size: int, step: int) -> list[int]:
    last = extent - block_size
    coords = list(range(0, last + 1, step))
    if coords[-1] != last:
        coords.append(last)
    return coords


def _scatter_offsets(block_size: int, width: int) -> np.ndarray:
    return (np.arange(block_size)[:, None] * width + np.arange(block_size)).ravel()


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage1_hard(noisy, sigma: float, profile: Bm3dProfile) -> np.ndarray:
    """Hard-thresholding stage: the basic BM3D estimate."""
    noisy = as_image(noisy)
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    bs = profile.block_size
    height, width = noisy.shape
    if height < bs or width < bs:
        raise ValueError(f"image {noisy.shape} smaller than block size {bs}")

    patches = sliding_window_view(noisy, (bs, bs))
    dct_all = _dct2_stack(patches.reshape(-1, bs, bs)).reshape(patches.shape)

    kaiser = _kaiser2d(bs, profile.kaiser_beta)
    accumulator = np.zeros(height * width)
    weights = np.zeros(height * width)
    offsets = _scatter_offsets(bs, width)
    threshold = profile.lambda_3d * sigma
    inv_sigma2 = 1.0 / (sigma * sigma)

    for ref_y in _ref_positions(height, bs, profile.step):
        for ref_x in _ref_positions(width, bs, profile.step):
            positions = _match_in_window(
                patches, ref_y, ref_x,
                profile.search_radius, profile.match_threshold1, profile.max_group1,
            )
            stack = dct_all[positions[:, 0], positions[:, 1]]
            kept, n_retained = hard_threshold(_haar_axis0(stack), threshold)

            estimates = _idct2_stack(_ihaar_axis0(kept))
            group_weight = inv_sigma2 / max(1, n_retained)
            _scatter_add(accumulator, weights, positions, estimates,
                         group_weight, kaiser, offsets, width)

    return (accumulator / weights).reshape(height, width)


def stage2_wiener(noisy, basic, sigma: float, profile: Bm3dProfile) -> np.ndarray:
    """Wiener refinement stage driven by the stage-1 estimate."""
    noisy = as_image(noisy)
    basic = as_image(basic)
    if noisy.shape != basic.shape:
        raise ValueError(f"image dimensions differ: {noisy.shape} vs {basic.shape}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    bs = profile.block_size
    height, width = noisy.shape
    if height < bs or width < bs:
        raise ValueError(f"image {noisy.shape} smaller than block size {bs}")

    basic_patches = sliding_window_view(basic, (bs, bs))
    basic_dct = _dct2_stack(basic_patches.reshape(-1, bs, bs)).reshape(basic_patches.shape)
    noisy_patches = sliding_window_view(noisy, (bs, bs))
    noisy_dct = _dct2_stack(noisy_patches.reshape(-1, bs, bs)).reshape(noisy_patches.shape)

    kaiser = _kaiser2d(bs, profile.kaiser_beta)
    accumulator = np.zeros(height * width)
    weights = np.zeros(height * width)
    offsets = _scatter_offsets(bs, width)
    sigma2 = sigma * sigma

    for ref_y in _ref_positions(height, bs, profile.step):
        for ref_x in _ref_positions(width, bs, profile.step):
            positions = _match_in_window(
                basic_patches, ref_y, ref_x,
                profile.search_radius, profile.match_threshold2, profile.max_group2,
            )
            basic_coeffs = _haar_axis0(basic_dct[positions[:, 0], positions[:, 1]])
            noisy_coeffs = _haar_axis0(noisy_dct[positions[:, 0], positions[:, 1]])

            shrink = basic_coeffs * basic_coeffs
            shrink /= shrink + sigma2
            filtered = shrink * noisy_coeffs

            estimates = _idct2_stack(_ihaar_axis0(filtered))
            shrink_energy = float(np.sum(shrink * shrink))
            group_weight = 1.0 / (sigma2 * max(shrink_energy, np.finfo(np.float64).tiny))
            _scatter_add(accumulator, weights, positions, estimates,
                         group_weight, kaiser, offsets, width)

    return (accumulator / weights).reshape(height, width)


def _scatter_add(accumulator, weights, positions, estimates, group_weight,
                 kaiser, offsets, width):
    """Accumulate Kaiser-weighted block estimates at their image positions."""
    contribution = (group_weight * kaiser) * estimates
    flat = (positions[:, 0] * width + positions[:, 1])[:, None] + offsets[None, :]
    flat = flat.ravel()
    np.add.at(accumulator, flat, contribution.reshape(len(positions), -1).ravel())
    np.add.at(weights, flat,
              np.tile((group_weight * kaiser).ravel(), len(positions)))


def denoise(noisy, sigma: float, lambda_3d: float | None = None,
            profile: Bm3dProfile | None = None) -> np.ndarray:
    """Full BM3D pipeline: hard-thresholding stage with the given multiplier,
    optional Wiener stage, output clamped to [0, 255]."""
    if profile is None:
        profile = Bm3dProfile()
    if lambda_3d is not None:
        profile = profile.with_lambda(lambda_3d)
    basic = stage1_hard(noisy, sigma, profile)
    if profile.enable_stage2:
        final = stage2_wiener(noisy, basic, sigma, profile)
    else:
        final = basic
    return np.clip(final, 0.0, 255.0)
