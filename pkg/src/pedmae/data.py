"""Image ingestion, synthetic pedestrian generation, and global augmentation.

Images travel through the pipeline as float32 arrays of shape (H, W, 3) with
values in [0, 1]. Identity and camera labels are encoded in filenames as
``<identity>_c<camera>_<anything>.<ext>`` (base-10 integers, identity may be
negative for unlabeled pre-training data).
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

FILENAME_RE = re.compile(r"^(-?\d+)_c(\d+)_.*\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)

SYNTH_HEIGHT = 256
SYNTH_WIDTH = 128


@dataclass
class ImageRecord:
    """A single image with its retrieval labels."""

    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    identity_id: int = -1
    camera_id: int = -1
    source_path: str | None = None

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("empty image")


@dataclass
class DatasetManifest:
    """Ordered collection of records for one split."""

    records: list[ImageRecord] = field(default_factory=list)
    split_tag: str = "pretrain"  # pretrain | query | gallery

    def __len__(self):
        return len(self.records)


def parse_reid_filename(name: str) -> tuple[int, int]:
    """Extract (identity_id, camera_id) from a ReID-convention filename."""
    m = FILENAME_RE.match(name)
    if m is None:
        raise ValueError(f"filename {name!r} does not match '<id>_c<cam>_*.<ext>'")
    return int(m.group(1)), int(m.group(2))


def format_reid_filename(identity_id: int, camera_id: int, tag: str, ext: str = "png") -> str:
    return f"{identity_id:04d}_c{camera_id}_{tag}.{ext}"


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image_folder(path: str | Path, split_tag: str = "pretrain") -> DatasetManifest:
    """Load every decodable image in a folder, in lexicographic filename order.

    Undecodable or unparseable files are skipped with a warning; an empty
    result is an error.
    """
    folder = Path(path)
    if not folder.is_dir():
        raise FileNotFoundError(f"image folder not found: {folder}")
    records = []
    for entry in sorted(folder.iterdir(), key=lambda p: p.name):
        if not entry.is_file():
            continue
        try:
            identity, camera = parse_reid_filename(entry.name)
            pixels = load_image(entry)
        except (ValueError, OSError) as exc:
            warnings.warn(f"skipping {entry.name}: {exc}")
            continue
        records.append(
            ImageRecord(pixels=pixels, identity_id=identity, camera_id=camera,
                        source_path=str(entry))
        )
    if not records:
        raise ValueError(f"no records loaded from {folder}")
    return DatasetManifest(records=records, split_tag=split_tag)


def resize_bilinear(pixels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, C) image to (new_h, new_w)."""
    if tuple(pixels.shape[:2]) == tuple(size):
        return pixels
    t = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out.squeeze(0).permute(1, 2, 0).contiguous().numpy()


def hflip(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pixels[:, ::-1, :])


def _fill_rect(canvas, top, bottom, left, right, color):
    canvas[max(top, 0):bottom, max(left, 0):right] = color


def generate_synthetic_person(seed: int, identity_id: int) -> ImageRecord:
    """Procedural 256x128 pedestrian stand-in.

    The identity keys a stable color/shape signature (head, torso, legs
    blocks); the seed keys pose jitter and noise, so different samples of one
    identity stay close in pixel space while identities stay apart.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    h, w = SYNTH_HEIGHT, SYNTH_WIDTH
    id_rng = np.random.default_rng(np.random.SeedSequence([97, identity_id & 0x7FFFFFFF]))
    head_color = id_rng.uniform(0.35, 0.9, size=3)
    torso_color = id_rng.uniform(0.05, 0.95, size=3)
    legs_color = id_rng.uniform(0.05, 0.95, size=3)
    bg_color = id_rng.uniform(0.55, 0.85, size=3)
    torso_width = id_rng.integers(52, 76)
    legs_split = id_rng.integers(6, 14)  # gap between the two leg blocks

    s_rng = np.random.default_rng(np.random.SeedSequence([seed, identity_id & 0x7FFFFFFF]))
    dx = int(s_rng.integers(-8, 9))
    dy = int(s_rng.integers(-10, 11))
    brightness = s_rng.uniform(-0.04, 0.04)
    noise = s_rng.normal(0.0, 0.015, size=(h, w, 3))

    canvas = np.empty((h, w, 3), dtype=np.float64)
    shade = np.linspace(0.92, 1.08, h)[:, None, None]
    canvas[:] = bg_color[None, None, :]
    canvas *= shade

    cx = w // 2 + dx
    head_r = 14
    head_top = 24 + dy
    _fill_rect(canvas, head_top, head_top + 2 * head_r, cx - head_r, cx + head_r, head_color)
    torso_top = head_top + 2 * head_r + 4
    torso_bot = torso_top + 86
    half_t = int(torso_width) // 2
    _fill_rect(canvas, torso_top, torso_bot, cx - half_t, cx + half_t, torso_color)
    legs_bot = min(torso_bot + 82, h - 8)
    half_gap = int(legs_split) // 2
    _fill_rect(canvas, torso_bot, legs_bot, cx - half_t, cx - half_gap, legs_color)
    _fill_rect(canvas, torso_bot, legs_bot, cx + half_gap, cx + half_t, legs_color)

    canvas = np.clip(canvas + brightness + noise, 0.0, 1.0)
    return ImageRecord(pixels=canvas.astype(np.float32), identity_id=identity_id)


def augment_global(image: ImageRecord, rng: np.random.Generator) -> ImageRecord:
    """Horizontal flip with prob 0.5, then a random area-scale crop in
    [0.8, 1.0] at the original aspect ratio, resized back to the input size."""
    pixels = image.pixels
    h, w = pixels.shape[:2]
    if rng.random() < 0.5:
        pixels = hflip(pixels)
    scale = rng.uniform(0.8, 1.0)
    side = float(np.sqrt(scale))
    crop_h = min(h, max(1, int(round(h * side))))
    crop_w = min(w, max(1, int(round(w * side))))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    if (crop_h, crop_w) != (h, w):
        pixels = resize_bilinear(pixels[top:top + crop_h, left:left + crop_w], (h, w))
    return ImageRecord(pixels=np.ascontiguousarray(pixels), identity_id=image.identity_id,
                       camera_id=image.camera_id, source_path=image.source_path)


def sample_rng(global_seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample stream; deterministic under the (seed, epoch, index) contract."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, epoch, sample_index]))
