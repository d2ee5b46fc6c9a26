"""Cross-region pair sampling, patchification, and cross-region coordinates.

A source image is randomly resized to (H + p, W + floor(p/2)) with p drawn
uniformly from [0, m], then two H x W crops are taken: region A at the origin
and region B offset by a uniform integer shift (s_h <= p, s_w <= floor(p/2)).
Region B token coordinates expressed in region A's grid frame are the plain
grid indices plus (s_h / T, s_w / T); shifts are deliberately not snapped to
patch multiples, so the offsets may be fractional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ImageRecord, resize_bilinear


@dataclass
class RegionPair:
    """Two same-scale crops of one resized image plus the sampling geometry."""

    region_a: np.ndarray  # (H, W, C)
    region_b: np.ndarray  # (H, W, C)
    pad_p: int
    shift: tuple[int, int]  # (s_h, s_w) of region B
    region_size: tuple[int, int]


@dataclass
class TokenSequence:
    """Row-major flattened patches with their grid coordinates."""

    tokens: np.ndarray  # (N, T*T*C)
    coords: np.ndarray  # (N, 2) float64 (row, col)
    grid: tuple[int, int]
    patch_size: int

    def __len__(self):
        return self.tokens.shape[0]


def sample_cross_region(image: ImageRecord, region_size: tuple[int, int],
                        max_shift: int, rng: np.random.Generator) -> RegionPair:
    """Draw a (region A, region B, shift) triple from one image."""
    if max_shift < 0:
        raise ValueError("max_shift must be >= 0")
    h, w = region_size
    p = int(rng.integers(0, max_shift + 1))
    canvas = resize_bilinear(image.pixels, (h + p, w + p // 2))
    s_h = int(rng.integers(0, p + 1))
    s_w = int(rng.integers(0, p // 2 + 1))
    region_a = np.ascontiguousarray(canvas[0:h, 0:w])
    region_b = np.ascontiguousarray(canvas[s_h:s_h + h, s_w:s_w + w])
    return RegionPair(region_a=region_a, region_b=region_b, pad_p=p,
                      shift=(s_h, s_w), region_size=(h, w))


def patchify(region: np.ndarray, patch_size: int) -> TokenSequence:
    """Split an (H, W, C) region into non-overlapping T x T patches.

    Token i is the (row, col, channel)-ordered flattening of patch i; patches
    are enumerated row-major over the grid.
    """
    h, w, c = region.shape
    t = patch_size
    if h % t != 0 or w % t != 0:
        raise ValueError(f"region {h}x{w} not divisible by patch size {t}")
    gh, gw = h // t, w // t
    tokens = (
        region.reshape(gh, t, gw, t, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * gw, t * t * c)
    )
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    coords = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    return TokenSequence(tokens=np.ascontiguousarray(tokens), coords=coords,
                         grid=(gh, gw), patch_size=t)


def unpatchify(seq: TokenSequence, channels: int = 3) -> np.ndarray:
    """Inverse of patchify: reassemble the (H, W, C) region."""
    gh, gw = seq.grid
    t = seq.patch_size
    return (
        seq.tokens.reshape(gh, gw, t, t, channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(gh * t, gw * t, channels)
    )


def relation_coords(shift: tuple[int, int], patch_size: int,
                    grid: tuple[int, int]) -> np.ndarray:
    """Region B token coordinates in region A's grid frame.

    Returns (N, 2) float64 rows of (x + s_h/T, y + s_w/T) in row-major grid
    order; fractional values are expected when shifts are not multiples of T.
    """
    gh, gw = grid
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    coords = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    coords[:, 0] += shift[0] / patch_size
    coords[:, 1] += shift[1] / patch_size
    return coords
