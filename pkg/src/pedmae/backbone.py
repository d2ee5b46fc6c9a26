"""ViT encoder shared by the online and momentum branches.

The encoder consumes pre-embedded token sequences (patch projection plus a
continuous 2D sin-cos position embedding), optionally prepends a class token
carrying no positional term, and applies standard pre-norm transformer blocks
followed by a final layer norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass
class EncoderConfig:
    embed_dim: int
    depth: int
    num_heads: int
    mlp_ratio: float = 4.0
    patch_size: int = 16
    use_class_token: bool = True
    in_channels: int = 3

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.embed_dim % 4 != 0:
            raise ValueError("embed_dim must be divisible by 4 for the 2D sin-cos split")

    @property
    def token_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels


def vit_small(**kw) -> EncoderConfig:
    return EncoderConfig(embed_dim=384, depth=12, num_heads=6, **kw)


def vit_base(**kw) -> EncoderConfig:
    return EncoderConfig(embed_dim=768, depth=12, num_heads=12, **kw)


def vit_tiny_test(**kw) -> EncoderConfig:
    """Desk-scale config used throughout the test suite."""
    return EncoderConfig(embed_dim=64, depth=2, num_heads=2, **kw)


def sincos_embed_2d(coords: np.ndarray, embed_dim: int) -> np.ndarray:
    """Fixed 2D sin-cos embedding of real-valued (row, col) coordinates.

    The first half of the channels encodes the row, the second half the
    column; within each half, channel pair k is (sin(c * w_k), cos(c * w_k))
    with w_k = 10000^(-4k / embed_dim). Defined for arbitrary real coords.
    """
    if embed_dim % 4 != 0:
        raise ValueError("embed_dim must be divisible by 4")
    coords = np.asarray(coords, dtype=np.float64)
    squeeze = coords.ndim == 1
    coords = np.atleast_2d(coords)
    quarter = embed_dim // 4
    omega = 10000.0 ** (-4.0 * np.arange(quarter, dtype=np.float64) / embed_dim)
    out = np.empty(coords.shape[:-1] + (embed_dim,), dtype=np.float64)
    for axis in (0, 1):
        angles = coords[..., axis:axis + 1] * omega  # (..., quarter)
        half = np.stack([np.sin(angles), np.cos(angles)], axis=-1).reshape(
            coords.shape[:-1] + (2 * quarter,))
        out[..., axis * 2 * quarter:(axis + 1) * 2 * quarter] = half
    return out[0] if squeeze else out


def position_embedding(coords, embed_dim: int, *, dtype=torch.float32,
                       device=None) -> torch.Tensor:
    """sincos_embed_2d as a torch tensor; accepts (n, 2) or (B, n, 2) coords."""
    emb = sincos_embed_2d(np.asarray(coords), embed_dim)
    return torch.from_numpy(emb).to(dtype=dtype, device=device)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)  # each (b, heads, n, hd)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_dim)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden_dim, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block: x + attn(ln(x)), x + mlp(ln(x))."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class ViTEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_proj = nn.Linear(cfg.token_dim, cfg.embed_dim)
        if cfg.use_class_token:
            self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.embed_dim))
        else:
            self.cls_token = None
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth)
        )
        self.norm = nn.LayerNorm(cfg.embed_dim)

    @property
    def num_prefix_tokens(self) -> int:
        return 1 if self.cls_token is not None else 0

    def embed_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Linear projection of raw patch vectors, order preserved."""
        return self.patch_proj(tokens)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Run the blocks on already position-embedded inputs (B, n, D).

        Output is (B, n + 1, D) with the class token first when enabled.
        """
        if self.cls_token is not None:
            cls = self.cls_token.to(x.dtype).expand(x.shape[0], -1, -1)
            x = torch.cat([cls, x], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def encode(self, tokens: torch.Tensor, coords: np.ndarray) -> torch.Tensor:
        """Embed raw tokens, add sin-cos positions for their coords, and run."""
        pe = position_embedding(coords, self.cfg.embed_dim,
                                dtype=tokens.dtype, device=tokens.device)
        return self.forward(self.embed_tokens(tokens) + pe)


def init_encoder_weights(module: nn.Module, rng: np.random.Generator) -> None:
    """Deterministic init driven by a numpy generator.

    Linear weights are Xavier-uniform, biases zero, norms identity, and
    class/mask tokens Gaussian with std 0.02.
    """
    for name, param in module.named_parameters():
        with torch.no_grad():
            if name.endswith("token"):
                values = rng.normal(0.0, 0.02, size=param.shape)
            elif param.ndim >= 2:
                fan_in, fan_out = param.shape[-1], param.shape[-2]
                bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
                values = rng.uniform(-bound, bound, size=param.shape)
            elif "norm" in name and name.endswith("weight"):
                values = np.ones(param.shape)
            else:
                values = np.zeros(param.shape)
            param.copy_(torch.from_numpy(np.ascontiguousarray(values)).to(param.dtype))
