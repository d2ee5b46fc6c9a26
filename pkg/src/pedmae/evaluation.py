"""Retrieval probe: global features from the encoder's class token, plus
mAP/CMC under the standard same-id/same-camera junk-filtering protocol.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import ViTEncoder
from .data import ImageRecord, resize_bilinear
from .regions import patchify

NORM_TOL = 1e-5


@dataclass
class FeatureMatrix:
    features: np.ndarray      # (Q, D), rows unit L2 norm
    identity_ids: np.ndarray  # (Q,)
    camera_ids: np.ndarray    # (Q,)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.identity_ids = np.asarray(self.identity_ids, dtype=np.int64)
        self.camera_ids = np.asarray(self.camera_ids, dtype=np.int64)
        q = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a Q x D matrix")
        if self.identity_ids.shape != (q,) or self.camera_ids.shape != (q,):
            raise ValueError("id/camera lists must match the feature row count")
        if q:
            norms = np.linalg.norm(self.features, axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > NORM_TOL:
                raise ValueError(f"feature rows must be unit-norm (off by {worst:g})")

    def __len__(self):
        return self.features.shape[0]


@dataclass
class RetrievalReport:
    map_score: float
    cmc: np.ndarray
    per_query_ap: np.ndarray
    skipped_queries: list = field(default_factory=list)

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])


def class_token_features(encoder: ViTEncoder, images: list[np.ndarray]) -> np.ndarray:
    """Class-token outputs for full (unmasked) images of one common size."""
    if not encoder.cfg.use_class_token:
        raise ValueError("retrieval features require an encoder class token")
    t = encoder.cfg.patch_size
    seqs = [patchify(np.asarray(img, dtype=np.float32), t) for img in images]
    tokens = np.stack([s.tokens for s in seqs])
    coords = np.stack([s.coords for s in seqs])
    with torch.no_grad():
        out = encoder.encode(
            torch.from_numpy(tokens).to(next(encoder.parameters()).dtype), coords)
    return out[:, 0].cpu().numpy()


def extract_features(encoder: ViTEncoder, records: list[ImageRecord],
                     image_size: tuple[int, int], batch_size: int = 32) -> FeatureMatrix:
    """Resize each record to the training resolution, run the full forward,
    and L2-normalize the class-token outputs."""
    if not records:
        raise ValueError("no records to extract features from")
    rows = []
    for start in range(0, len(records), batch_size):
        batch = records[start:start + batch_size]
        images = [r.pixels if r.pixels.shape[:2] == tuple(image_size)
                  else resize_bilinear(r.pixels, image_size) for r in batch]
        rows.append(class_token_features(encoder, images))
    features = np.concatenate(rows, axis=0).astype(np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm feature encountered")
    return FeatureMatrix(
        features=features / norms,
        identity_ids=np.array([r.identity_id for r in records], dtype=np.int64),
        camera_ids=np.array([r.camera_id for r in records], dtype=np.int64),
    )


def compute_cmc_map(query: FeatureMatrix, gallery: FeatureMatrix,
                    max_rank: int = 10) -> RetrievalReport:
    """Cosine-similarity ranking with same-id+same-camera entries excluded
    per query. AP averages precision at each relevant rank; CMC rank-k is the
    fraction of queries with a hit in the top k."""
    if len(gallery) == 0:
        raise ValueError("empty gallery")
    if len(query) == 0:
        raise ValueError("empty query set")
    if max_rank <= 0:
        raise ValueError("max_rank must be > 0")
    sims = query.features @ gallery.features.T
    aps = []
    curves = []
    skipped = []
    for qi in range(len(query)):
        order = np.argsort(-sims[qi], kind="stable")
        junk = (gallery.identity_ids == query.identity_ids[qi]) & \
               (gallery.camera_ids == query.camera_ids[qi])
        keep = order[~junk[order]]
        relevant = gallery.identity_ids[keep] == query.identity_ids[qi]
        hits = np.flatnonzero(relevant)
        if hits.size == 0:
            skipped.append(qi)
            warnings.warn(f"query {qi} has no relevant gallery entries after "
                          "junk filtering; skipped", stacklevel=2)
            continue
        precision_at_hits = (np.arange(hits.size) + 1) / (hits + 1)
        aps.append(float(precision_at_hits.mean()))
        curve = np.zeros(max_rank)
        if hits[0] < max_rank:
            curve[hits[0]:] = 1.0
        curves.append(curve)
    if not aps:
        raise ValueError("every query was skipped; no evaluable query remains")
    per_query_ap = np.array(aps)
    cmc = np.mean(curves, axis=0)
    return RetrievalReport(map_score=float(per_query_ap.mean()), cmc=cmc,
                           per_query_ap=per_query_ap, skipped_queries=skipped)


def save_feature_matrix(path: str | Path, matrix: FeatureMatrix) -> None:
    """Text format: header `Q D`, then `identity camera f_1 ... f_D` rows."""
    q, d = matrix.features.shape
    with open(path, "w") as fh:
        fh.write(f"{q} {d}\n")
        for i in range(q):
            values = " ".join(repr(float(v)) for v in matrix.features[i])
            fh.write(f"{matrix.identity_ids[i]} {matrix.camera_ids[i]} {values}\n")


def load_feature_matrix(path: str | Path) -> FeatureMatrix:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise ValueError(f"{path}: malformed header, expected 'Q D'")
        q, d = int(head[0]), int(head[1])
        features = np.empty((q, d))
        ids = np.empty(q, dtype=np.int64)
        cams = np.empty(q, dtype=np.int64)
        for i in range(q):
            parts = fh.readline().split()
            if len(parts) != 2 + d:
                raise ValueError(f"{path}: row {i} has {len(parts)} fields, "
                                 f"expected {2 + d}")
            ids[i] = int(parts[0])
            cams[i] = int(parts[1])
            features[i] = [float(v) for v in parts[2:]]
    return FeatureMatrix(features=features, identity_ids=ids, camera_ids=cams)


def format_report(report: RetrievalReport) -> str:
    """Human-readable rank table followed by a machine-readable block."""
    lines = ["rank  cmc", "----  ------"]
    for k, value in enumerate(report.cmc, start=1):
        lines.append(f"{k:>4d}  {value:.4f}")
    lines.append("")
    lines.append(f"mAP={report.map_score!r}")
    for k, value in enumerate(report.cmc, start=1):
        lines.append(f"rank{k}={float(value)!r}")
    lines.append(f"queries_evaluated={len(report.per_query_ap)}")
    lines.append(f"queries_skipped={len(report.skipped_queries)}")
    return "\n".join(lines) + "\n"
