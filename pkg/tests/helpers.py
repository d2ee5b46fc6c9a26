"""Shared builders for desk-scale test fixtures."""

import numpy as np

from pedmae import EncoderConfig, ImageRecord, PretrainModel, generate_synthetic_person

TINY_SIZE = (64, 32)  # 4x2 patch grid at T=16


def tiny_encoder_cfg(**kw) -> EncoderConfig:
    base = dict(embed_dim=16, depth=1, num_heads=2, patch_size=16)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_model(seed: int = 0, **kw) -> PretrainModel:
    model = PretrainModel(tiny_encoder_cfg(**kw))
    model.init_weights(seed)
    return model


def tiny_records(count: int, *, seed0: int = 0, identities: int = 4,
                 size=TINY_SIZE) -> list[ImageRecord]:
    """Synthetic pedestrians cropped to the tiny training resolution."""
    h, w = size
    records = []
    for s in range(count):
        full = generate_synthetic_person(seed0 + s, s % identities + 1)
        records.append(ImageRecord(pixels=np.ascontiguousarray(full.pixels[:h, :w]),
                                   identity_id=full.identity_id))
    return records
