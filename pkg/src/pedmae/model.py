"""Full pre-training model: online/momentum encoders, dual decoders, losses.

One forward pass samples a cross-region pair per image, block-masks region A,
encodes the visible tokens, and predicts all of region B twice: raw pixels
against per-patch-normalized targets, and semantic features against a
momentum-encoder target under stop-gradient. Both decoders share the same
cross-region position embedding for their prediction queries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import (
    Block,
    EncoderConfig,
    ViTEncoder,
    init_encoder_weights,
    position_embedding,
)
from .masking import make_mask, split_visible
from .regions import patchify, relation_coords, sample_cross_region

PATCH_NORM_EPS = 1e-6
FEATURE_NORM_EPS = 1e-6
GAMMA_START = 0.999
GAMMA_END = 0.9999


@dataclass
class DecoderConfig:
    embed_dim: int
    output_dim: int
    depth: int = 2
    num_heads: int = 8

    def __post_init__(self):
        if self.depth != 2:
            raise ValueError("decoder depth is fixed at 2 blocks")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("decoder embed_dim must be divisible by num_heads")
        if self.embed_dim % 4 != 0:
            raise ValueError("decoder embed_dim must be divisible by 4")


@dataclass
class LossBreakdown:
    pixel_loss: torch.Tensor
    feature_loss: torch.Tensor
    total: torch.Tensor
    loss_lambda: float


class PredictionDecoder(nn.Module):
    """Two transformer blocks over [projected encoder features | mask tokens].

    The head reads only the mask-token positions, one per region-B patch,
    in row-major region-B order.
    """

    def __init__(self, input_dim: int, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.input_proj = nn.Linear(input_dim, cfg.embed_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(cfg.embed_dim, cfg.output_dim)

    def forward(self, feats: torch.Tensor, feat_pos: torch.Tensor,
                query_pos: torch.Tensor) -> torch.Tensor:
        """feats (B, S, in_dim); feat_pos (B, S, D) with zeros at non-patch
        prefix slots; query_pos (B, N, D) from the cross-region coords."""
        if query_pos.shape[0] != feats.shape[0]:
            raise ValueError("batch mismatch between features and query positions")
        n_query = query_pos.shape[1]
        x = self.input_proj(feats) + feat_pos
        queries = self.mask_token.to(x.dtype).expand(x.shape[0], n_query, -1) + query_pos
        x = torch.cat([x, queries], dim=1)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return self.head(x[:, -n_query:])


class PretrainModel(nn.Module):
    def __init__(self, encoder_cfg: EncoderConfig, decoder_dim: int | None = None,
                 decoder_heads: int = 8):
        super().__init__()
        self.encoder_cfg = encoder_cfg
        if decoder_dim is None:
            decoder_dim = min(512, encoder_cfg.embed_dim)
        self.online = ViTEncoder(encoder_cfg)
        self.momentum = ViTEncoder(encoder_cfg)
        self.pixel_decoder = PredictionDecoder(
            encoder_cfg.embed_dim,
            DecoderConfig(decoder_dim, encoder_cfg.token_dim, num_heads=decoder_heads),
        )
        self.feature_decoder = PredictionDecoder(
            encoder_cfg.embed_dim,
            DecoderConfig(decoder_dim, encoder_cfg.embed_dim, num_heads=decoder_heads),
        )
        self.momentum.requires_grad_(False)

    def init_weights(self, seed: int) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB1D]))
        init_encoder_weights(self.online, rng)
        init_encoder_weights(self.pixel_decoder, rng)
        init_encoder_weights(self.feature_decoder, rng)
        copy_parameters(self.online, self.momentum)

    def decoder_dim(self) -> int:
        return self.pixel_decoder.cfg.embed_dim

    def compute_losses(self, vis_tokens: np.ndarray, vis_coords: np.ndarray,
                       b_tokens: np.ndarray, b_grid: tuple[int, int],
                       rel_coords: np.ndarray, beta: float,
                       loss_lambda: float) -> LossBreakdown:
        """Losses for one stacked batch.

        vis_tokens (B, V, E_in) with coords (B, V, 2); b_tokens (B, N, E_in)
        raw region-B patches laid out on b_grid; rel_coords (B, N, 2)
        region-B coords in region A's frame.
        """
        p = next(self.online.parameters())
        dtype, device = p.dtype, p.device
        vis_t = torch.from_numpy(np.ascontiguousarray(vis_tokens)).to(dtype=dtype, device=device)
        feats = self.online.encode(vis_t, vis_coords)  # (B, prefix + V, D)

        dec_dim = self.decoder_dim()
        n_prefix = self.online.num_prefix_tokens
        vis_pos = position_embedding(vis_coords, dec_dim, dtype=dtype, device=device)
        feat_pos = F.pad(vis_pos, (0, 0, n_prefix, 0))  # class slot carries no position
        query_pos = position_embedding(rel_coords, dec_dim, dtype=dtype, device=device)

        pred_pixels = self.pixel_decoder(feats, feat_pos, query_pos)
        pred_features = self.feature_decoder(feats, feat_pos, query_pos)

        targets, _, _ = normalize_patch_targets(b_tokens)
        pixel_targets = torch.from_numpy(targets).to(dtype=dtype, device=device)
        b_t = torch.from_numpy(np.ascontiguousarray(b_tokens)).to(dtype=dtype, device=device)
        feature_targets = ema_target(self, b_t, b_grid)

        lp = pixel_loss(pred_pixels, pixel_targets)
        lf = smooth_l1(pred_features, feature_targets, beta)
        return LossBreakdown(pixel_loss=lp, feature_loss=lf,
                             total=lp + loss_lambda * lf, loss_lambda=loss_lambda)


def normalize_patch_targets(tokens: np.ndarray, eps: float = PATCH_NORM_EPS):
    """Standardize each patch by its own mean and population std.

    Returns (targets, means, stds) in float64; constant patches map to zeros
    thanks to the epsilon guard.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    mean = tokens.mean(axis=-1, keepdims=True)
    std = tokens.std(axis=-1, keepdims=True)
    targets = (tokens - mean) / (std + eps)
    return targets, mean.squeeze(-1), std.squeeze(-1)


def pixel_loss_terms(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-token mean squared error over the patch elements."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean(dim=-1)


def pixel_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return pixel_loss_terms(pred, target).mean()


def smooth_l1_terms(pred: torch.Tensor, target: torch.Tensor,
                    beta: float) -> torch.Tensor:
    """Per-token smooth-L1, channel-mean, with stop-gradient on the target."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.smooth_l1_loss(pred, target.detach(), beta=beta,
                            reduction="none").mean(dim=-1)


def smooth_l1(pred: torch.Tensor, target: torch.Tensor, beta: float) -> torch.Tensor:
    return smooth_l1_terms(pred, target, beta).mean()


def ema_target(model: PretrainModel, b_tokens: torch.Tensor,
               grid: tuple[int, int]) -> torch.Tensor:
    """Momentum-encoder features of the full region-B sequence.

    Runs without gradient on all N tokens at their own integer grid
    positions, drops the class slot, and standardizes each token over its
    channels (parameter-free)."""
    gh, gw = grid
    if gh * gw != b_tokens.shape[1]:
        raise ValueError(f"grid {grid} does not cover {b_tokens.shape[1]} tokens")
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    base = np.stack([rows.ravel(), cols.ravel()], axis=1).astype(np.float64)
    coords = np.broadcast_to(base, (b_tokens.shape[0],) + base.shape)
    with torch.no_grad():
        out = model.momentum.encode(b_tokens, coords)
        out = out[:, model.momentum.num_prefix_tokens:]
        mean = out.mean(dim=-1, keepdim=True)
        std = out.std(dim=-1, keepdim=True, unbiased=False)
        return (out - mean) / (std + FEATURE_NORM_EPS)


@torch.no_grad()
def copy_parameters(src: nn.Module, dst: nn.Module) -> None:
    src_params = dict(src.named_parameters())
    dst_params = dict(dst.named_parameters())
    if src_params.keys() != dst_params.keys():
        raise RuntimeError("parameter structure mismatch")
    for name, p in src_params.items():
        dst_params[name].copy_(p)


@torch.no_grad()
def ema_update(online: nn.Module, momentum: nn.Module, gamma: float) -> None:
    """theta_m <- gamma * theta_m + (1 - gamma) * theta_o, elementwise."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    src = dict(online.named_parameters())
    dst = dict(momentum.named_parameters())
    if src.keys() != dst.keys():
        raise RuntimeError("parameter structure mismatch")
    for name, p in src.items():
        dst[name].mul_(gamma).add_(p, alpha=1.0 - gamma)


def gamma_schedule(epoch: float, warm_epochs: float = 20.0,
                   start: float = GAMMA_START, end: float = GAMMA_END) -> float:
    """Linear ramp from start to end over the first warm_epochs, then flat."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    frac = 1.0 if warm_epochs <= 0 else min(epoch / warm_epochs, 1.0)
    if frac <= 0.0:
        return start
    if frac >= 1.0:
        return end
    return start + (end - start) * frac


def forward_pretrain(images: list[np.ndarray], model: PretrainModel,
                     rngs: list[np.random.Generator], *, max_shift: int,
                     mask_ratio: float, loss_lambda: float = 1.0,
                     beta: float = 2.0,
                     mask_strategy: str = "block") -> LossBreakdown:
    """Sample region pairs and masks per image, then run the dual-head pass.

    Every image contributes all N region-B tokens to both losses; the
    exact-count mask contract keeps visible counts equal across the batch so
    the encoder input stacks.
    """
    if len(images) != len(rngs):
        raise ValueError("one rng per image is required")
    t = model.encoder_cfg.patch_size
    vis_tokens, vis_coords, b_tokens, rel = [], [], [], []
    b_grid = None
    for pixels, rng in zip(images, rngs):
        record = _as_record(pixels)
        h, w = record.pixels.shape[:2]
        pair = sample_cross_region(record, (h, w), max_shift, rng)
        seq_a = patchify(pair.region_a, t)
        seq_b = patchify(pair.region_b, t)
        layout = make_mask(mask_strategy, seq_a.grid, mask_ratio, rng)
        visible, _ = split_visible(seq_a, layout)
        vis_tokens.append(visible.tokens)
        vis_coords.append(visible.coords)
        b_tokens.append(seq_b.tokens)
        b_grid = seq_b.grid
        rel.append(relation_coords(pair.shift, t, seq_b.grid))
    return model.compute_losses(
        np.stack(vis_tokens), np.stack(vis_coords), np.stack(b_tokens),
        b_grid, np.stack(rel), beta=beta, loss_lambda=loss_lambda,
    )


def _as_record(pixels):
    from .data import ImageRecord

    if isinstance(pixels, ImageRecord):
        return pixels
    return ImageRecord(pixels=pixels)
