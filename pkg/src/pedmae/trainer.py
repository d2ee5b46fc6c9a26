"""Optimization loop: warmup+cosine learning rate, EMA momentum schedule,
decoupled weight decay with the standard exclusion list, per-epoch
checkpoints, and a per-step metrics log.

Everything is deterministic given (config, data): batch order comes from a
seeded permutation per epoch, per-sample augmentation/region/mask randomness
comes from `sample_rng(seed, epoch, dataset_index)`, and no other entropy
source is consulted. Resuming from a checkpoint therefore continues the exact
run that produced it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import EncoderConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import ImageRecord, augment_global, resize_bilinear, sample_rng
from .model import (
    LossBreakdown,
    PretrainModel,
    ema_update,
    forward_pretrain,
    gamma_schedule,
)

METRICS_HEADER = "step,lr,gamma,loss_pixel,loss_feature,loss_total"
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 100
    warmup_epochs: int = 20
    base_lr: float = 1.2e-3
    weight_decay: float = 0.05
    batch_size: int = 64
    seed: int = 0
    mask_ratio: float = 0.75
    max_shift: int = 64
    loss_lambda: float = 1.0
    beta: float = 2.0
    mask_strategy: str = "block"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be > 0")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs]")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in [0, 1]")
        if self.max_shift < 0:
            raise ValueError("max_shift must be >= 0")
        if self.loss_lambda < 0:
            raise ValueError("loss_lambda must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.mask_strategy not in ("block", "random"):
            raise ValueError(f"unknown mask_strategy {self.mask_strategy!r}")


@dataclass
class TrainState:
    model: PretrainModel
    optimizer: torch.optim.AdamW
    config: TrainConfig
    epoch: int = 0  # completed epochs
    step: int = 0   # completed optimizer steps
    image_size: tuple[int, int] = (256, 128)


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, batch_indices, breakdown: LossBreakdown):
        self.step = step
        self.batch_indices = list(batch_indices)
        super().__init__(
            f"non-finite loss at step {step} on batch indices "
            f"{self.batch_indices}: pixel={breakdown.pixel_loss.item()} "
            f"feature={breakdown.feature_loss.item()} total={breakdown.total.item()}")


def lr_at(epoch_fraction: float, config: TrainConfig) -> float:
    """Linear warmup from zero, then single-cycle cosine decay to zero."""
    e = float(epoch_fraction)
    if not 0.0 <= e <= config.epochs:
        raise ValueError(f"epoch fraction {e} outside [0, {config.epochs}]")
    warm = float(config.warmup_epochs)
    if e < warm:
        return config.base_lr * e / warm
    if config.epochs == warm:
        return config.base_lr
    t = (e - warm) / (config.epochs - warm)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def split_decay_param_groups(model: torch.nn.Module, weight_decay: float):
    """Two param groups: decayed weights, and the standard exclusion list
    (normalization scales/offsets, biases, class/mask tokens)."""
    decay, no_decay = [], []
    decay_names, no_decay_names = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if p.ndim <= 1 or name.endswith("cls_token") or name.endswith("mask_token"):
            no_decay.append(p)
            no_decay_names.append(name)
        else:
            decay.append(p)
            decay_names.append(name)
    return [
        {"params": decay, "weight_decay": weight_decay, "names": decay_names},
        {"params": no_decay, "weight_decay": 0.0, "names": no_decay_names},
    ]


def make_optimizer(model: PretrainModel, config: TrainConfig) -> torch.optim.AdamW:
    groups = split_decay_param_groups(model, config.weight_decay)
    return torch.optim.AdamW(groups, lr=0.0, betas=ADAM_BETAS, eps=ADAM_EPS)


def init_state(encoder_cfg: EncoderConfig, config: TrainConfig,
               decoder_dim: int | None = None, decoder_heads: int = 8,
               image_size: tuple[int, int] = (256, 128)) -> TrainState:
    model = PretrainModel(encoder_cfg, decoder_dim=decoder_dim,
                          decoder_heads=decoder_heads)
    model.init_weights(config.seed)
    return TrainState(model=model, optimizer=make_optimizer(model, config),
                      config=config, image_size=tuple(image_size))


def train_step(state: TrainState, images, rngs, step_lr: float, gamma: float,
               batch_indices=()) -> LossBreakdown:
    cfg = state.config
    for group in state.optimizer.param_groups:
        group["lr"] = step_lr
    state.optimizer.zero_grad(set_to_none=True)
    breakdown = forward_pretrain(
        images, state.model, rngs, max_shift=cfg.max_shift,
        mask_ratio=cfg.mask_ratio, loss_lambda=cfg.loss_lambda,
        beta=cfg.beta, mask_strategy=cfg.mask_strategy)
    if not bool(torch.isfinite(breakdown.total)):
        raise NonFiniteLossError(state.step, batch_indices, breakdown)
    breakdown.total.backward()
    state.optimizer.step()
    ema_update(state.model.online, state.model.momentum, gamma)
    state.step += 1
    return breakdown


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(n)


def train_loop(records: list[ImageRecord], state: TrainState,
               out_dir: str | Path, *, log_every: int = 0) -> Path:
    """Run from state.epoch to config.epochs; returns the final checkpoint path.

    Appends one `step,lr,gamma,loss_pixel,loss_feature,loss_total` line per
    step to out_dir/metrics.csv and writes a checkpoint after every epoch.
    """
    if not records:
        raise ValueError("no training records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = state.config
    image_size = tuple(state.image_size)
    n = len(records)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    metrics_path = out / "metrics.csv"
    resume_append = state.epoch > 0 and metrics_path.exists()
    last_path = out / f"checkpoint_epoch{state.epoch:04d}.ckpt"
    with open(metrics_path, "a" if resume_append else "w") as log:
        if not resume_append:
            log.write(METRICS_HEADER + "\n")
        for epoch in range(state.epoch, cfg.epochs):
            order = epoch_permutation(cfg.seed, epoch, n)
            for start in range(0, n, cfg.batch_size):
                batch_idx = order[start:start + cfg.batch_size]
                images, rngs = [], []
                for di in batch_idx:
                    di = int(di)
                    record = records[di]
                    if record.pixels.shape[:2] != tuple(image_size):
                        record = ImageRecord(
                            pixels=resize_bilinear(record.pixels, image_size),
                            identity_id=record.identity_id,
                            camera_id=record.camera_id,
                            source_path=record.source_path)
                    rng = sample_rng(cfg.seed, epoch, di)
                    images.append(augment_global(record, rng))
                    rngs.append(rng)
                e_frac = state.step / steps_per_epoch
                step_lr = lr_at(min(e_frac, float(cfg.epochs)), cfg)
                gamma = gamma_schedule(e_frac)
                breakdown = train_step(state, images, rngs, step_lr, gamma,
                                       batch_indices=batch_idx)
                log.write(_metrics_line(state.step - 1, step_lr, gamma, breakdown) + "\n")
                log.flush()
                if log_every and state.step % log_every == 0:
                    print(f"step {state.step}: loss {breakdown.total.item():.6f}")
            state.epoch = epoch + 1
            last_path = out / f"checkpoint_epoch{state.epoch:04d}.ckpt"
            save_train_checkpoint(state, last_path)
    return last_path


def _metrics_line(step: int, lr: float, gamma: float, bd: LossBreakdown) -> str:
    vals = [float(lr), float(gamma), bd.pixel_loss.item(),
            bd.feature_loss.item(), bd.total.item()]
    return ",".join([str(step)] + [repr(v) for v in vals])


def save_train_checkpoint(state: TrainState, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in state.model.state_dict().items():
        arrays[f"model.{name}"] = tensor.detach().cpu().numpy()
    opt_state = state.optimizer.state_dict()
    for pid, slots in opt_state["state"].items():
        for key, value in slots.items():
            arrays[f"optim.state.{pid}.{key}"] = (
                value.detach().cpu().numpy() if torch.is_tensor(value)
                else np.asarray(value))
    metadata = {
        "encoder": asdict(state.model.encoder_cfg),
        "decoder": {"embed_dim": state.model.pixel_decoder.cfg.embed_dim,
                    "num_heads": state.model.pixel_decoder.cfg.num_heads},
        "train": asdict(state.config),
        "epoch": state.epoch,
        "step": state.step,
        "image_size": list(state.image_size),
        "optim_param_groups": opt_state["param_groups"],
        "rng": {"scheme": "seed-epoch-index", "seed": state.config.seed},
    }
    save_checkpoint(path, arrays, metadata)


def load_train_checkpoint(path: str | Path) -> TrainState:
    """Rebuild a full training state; the stored config wins over defaults."""
    arrays, meta = load_checkpoint(path)
    encoder_cfg = EncoderConfig(**meta["encoder"])
    config = TrainConfig(**meta["train"])
    model = PretrainModel(encoder_cfg,
                          decoder_dim=meta["decoder"]["embed_dim"],
                          decoder_heads=meta["decoder"]["num_heads"])
    state_dict = {name[len("model."):]: torch.from_numpy(arr)
                  for name, arr in arrays.items() if name.startswith("model.")}
    try:
        model.load_state_dict(state_dict, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: model state mismatch: {exc}") from exc
    optimizer = make_optimizer(model, config)
    opt_slots: dict[int, dict] = {}
    for name, arr in arrays.items():
        if not name.startswith("optim.state."):
            continue
        _, _, pid, key = name.split(".", 3)
        opt_slots.setdefault(int(pid), {})[key] = torch.from_numpy(arr)
    if opt_slots or meta["optim_param_groups"]:
        optimizer.load_state_dict({"state": opt_slots,
                                   "param_groups": meta["optim_param_groups"]})
    return TrainState(model=model, optimizer=optimizer, config=config,
                      epoch=int(meta["epoch"]), step=int(meta["step"]),
                      image_size=tuple(meta.get("image_size", (256, 128))))
