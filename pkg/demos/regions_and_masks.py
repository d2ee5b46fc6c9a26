"""
Region pairs and block-wise masks, end to end on one image
==========================================================

Walks one synthetic pedestrian image through the geometry used during
pre-training: sample two overlapping regions, cut them into patch tokens,
mask most of region A, and print where region B's tokens sit relative to
region A's grid.

Run from the repository root:

    python3 demos/regions_and_masks.py
"""

import numpy as np

from pedmae import (
    generate_synthetic_person,
    layout_to_text,
    make_mask,
    patchify,
    relation_coords,
    sample_cross_region,
    split_visible,
)

rng = np.random.default_rng(4)

# a deterministic fake pedestrian: 256x128 RGB in [0, 1]
person = generate_synthetic_person(seed=4, identity_id=12)
print("image:", person.pixels.shape, "identity:", person.identity_id)

# two 256x128 crops of a slightly enlarged canvas; the pad budget of up to
# 64 px decides how far apart the two crops may start
pair = sample_cross_region(person, region_size=(256, 128), max_shift=64, rng=rng)
print(f"pad={pair.pad_p}  region B starts {pair.shift} px from region A")

# 16x16 patches -> a 16x8 token grid per region
seq_a = patchify(pair.region_a, patch_size=16)
seq_b = patchify(pair.region_b, patch_size=16)
print("tokens per region:", seq_a.tokens.shape[0], "grid:", seq_a.grid)

# mask 75% of region A in contiguous rectangles; '#' marks a masked cell
layout = make_mask("block", seq_a.grid, 0.75, rng)
print(f"\nmasked {layout.num_masked}/{layout.flags.size} cells "
      f"({len(layout.placed_blocks)} rectangles):")
print(layout_to_text(layout))

visible, masked_idx = split_visible(seq_a, layout)
print("visible tokens kept:", visible.tokens.shape[0])

# region B's token coordinates in region A's frame: grid positions plus the
# fractional shift (s_h/T, s_w/T); this is what the decoders are told
coords = relation_coords(pair.shift, 16, seq_b.grid)
print("\nfirst three region-B coordinates (row, col):")
for row in coords[:3]:
    print(f"  ({row[0]:.4f}, {row[1]:.4f})")
print("corner-to-corner span:", coords[0], "->", coords[-1])
