"""Block-wise and random mask layouts over the patch grid.

Both strategies honor an exact-count contract: the number of masked cells is
always round(ratio * N). Block-wise masking places random rectangles (area
uniform up to the remaining budget, aspect ratio log-uniform in [0.3, 1/0.3])
until the target is reached, then un-masks surplus cells from the last
rectangle so occlusions stay chunk-like.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .regions import TokenSequence

MIN_BLOCK_AREA = 4
LOG_ASPECT = (math.log(0.3), math.log(1.0 / 0.3))


@dataclass
class MaskLayout:
    grid: tuple[int, int]
    flags: np.ndarray  # (N,) bool, True = masked
    ratio: float
    placed_blocks: list[tuple[int, int, int, int]] = field(default_factory=list)

    @property
    def num_masked(self) -> int:
        return int(self.flags.sum())


def _target_count(ratio: float, n: int) -> int:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must be within [0, 1]")
    return int(round(ratio * n))


def block_wise_mask(grid: tuple[int, int], ratio: float,
                    rng: np.random.Generator) -> MaskLayout:
    """Chunk-style mask of exactly round(ratio * N) cells."""
    gh, gw = grid
    n = gh * gw
    if n < 1:
        raise ValueError("grid must contain at least one cell")
    target = _target_count(ratio, n)
    flags2d = np.zeros((gh, gw), dtype=bool)
    blocks: list[tuple[int, int, int, int]] = []
    count = 0
    stale = 0
    while count < target:
        remaining = target - count
        area = rng.uniform(MIN_BLOCK_AREA, max(MIN_BLOCK_AREA, remaining))
        aspect = math.exp(rng.uniform(*LOG_ASPECT))
        bh = min(gh, max(1, int(round(math.sqrt(area * aspect)))))
        bw = min(gw, max(1, int(round(math.sqrt(area / aspect)))))
        if stale > 50:
            # rng keeps hitting already-masked cells; force progress with a
            # 1x1 block on a random unmasked cell
            free = np.flatnonzero(~flags2d.ravel())
            cell = int(rng.choice(free))
            bh = bw = 1
            top, left = divmod(cell, gw)
        else:
            top = int(rng.integers(0, gh - bh + 1))
            left = int(rng.integers(0, gw - bw + 1))
        window = flags2d[top:top + bh, left:left + bw]
        gained = int((~window).sum())
        if gained == 0:
            stale += 1
            continue
        stale = 0
        window[:] = True
        blocks.append((top, left, bh, bw))
        count += gained
    if count > target:
        # trim the overshoot inside the last placed rectangle
        top, left, bh, bw = blocks[-1]
        in_last = np.zeros((gh, gw), dtype=bool)
        in_last[top:top + bh, left:left + bw] = True
        candidates = np.flatnonzero((flags2d & in_last).ravel())
        drop = rng.choice(candidates, size=count - target, replace=False)
        flags2d.ravel()[drop] = False
    return MaskLayout(grid=grid, flags=flags2d.ravel(), ratio=ratio,
                      placed_blocks=blocks)


def random_mask(grid: tuple[int, int], ratio: float,
                rng: np.random.Generator) -> MaskLayout:
    """Uniform without-replacement mask of exactly round(ratio * N) cells."""
    gh, gw = grid
    n = gh * gw
    if n < 1:
        raise ValueError("grid must contain at least one cell")
    target = _target_count(ratio, n)
    flags = np.zeros(n, dtype=bool)
    if target:
        flags[rng.choice(n, size=target, replace=False)] = True
    return MaskLayout(grid=grid, flags=flags, ratio=ratio)


def make_mask(strategy: str, grid: tuple[int, int], ratio: float,
              rng: np.random.Generator) -> MaskLayout:
    if strategy == "block":
        return block_wise_mask(grid, ratio, rng)
    if strategy == "random":
        return random_mask(grid, ratio, rng)
    raise ValueError(f"unknown mask strategy {strategy!r}")


def split_visible(tokens: TokenSequence, layout: MaskLayout) -> tuple[TokenSequence, list[int]]:
    """Partition a token sequence into (visible tokens, masked indices).

    Visible tokens keep their original relative order and grid coordinates;
    masked indices come back sorted ascending.
    """
    if tokens.grid != layout.grid:
        raise ValueError(f"token grid {tokens.grid} != layout grid {layout.grid}")
    keep = ~layout.flags
    visible = TokenSequence(tokens=tokens.tokens[keep], coords=tokens.coords[keep],
                            grid=tokens.grid, patch_size=tokens.patch_size)
    return visible, [int(i) for i in np.flatnonzero(layout.flags)]


def merge_tokens(visible: TokenSequence, masked_tokens: np.ndarray,
                 masked_indices: list[int]) -> TokenSequence:
    """Re-insert masked tokens at their indices; inverse of split_visible."""
    n = len(visible) + len(masked_indices)
    width = visible.tokens.shape[1] if len(visible) else masked_tokens.shape[1]
    tokens = np.empty((n, width), dtype=visible.tokens.dtype)
    coords = np.empty((n, 2), dtype=np.float64)
    masked = np.zeros(n, dtype=bool)
    masked[masked_indices] = True
    tokens[~masked] = visible.tokens
    coords[~masked] = visible.coords
    tokens[masked] = masked_tokens
    rows, cols = divmod(np.asarray(masked_indices, dtype=np.int64), visible.grid[1])
    coords[masked, 0] = rows
    coords[masked, 1] = cols
    return TokenSequence(tokens=tokens, coords=coords, grid=visible.grid,
                         patch_size=visible.patch_size)


def layout_to_text(layout: MaskLayout) -> str:
    """Render as a row-major grid of '.' (visible) and '#' (masked)."""
    gh, gw = layout.grid
    grid = layout.flags.reshape(gh, gw)
    return "\n".join("".join("#" if m else "." for m in row) for row in grid)
