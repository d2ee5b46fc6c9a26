"""Command-line entry point.

Subcommands: `synth` (procedural dataset), `pretrain` (training loop),
`eval` (retrieval metrics), `inspect` (region/mask/reconstruction dumps).
Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .backbone import position_embedding
from .checkpoint import CheckpointError
from .config import ConfigError, load_config
from .data import (
    ImageRecord,
    format_reid_filename,
    generate_synthetic_person,
    load_image,
    load_image_folder,
    resize_bilinear,
    save_image,
)
from .evaluation import (
    compute_cmc_map,
    extract_features,
    format_report,
    save_feature_matrix,
)
from .masking import layout_to_text, make_mask, split_visible
from .model import PATCH_NORM_EPS, normalize_patch_targets
from .regions import (
    TokenSequence,
    patchify,
    relation_coords,
    sample_cross_region,
    unpatchify,
)
from .trainer import (
    NonFiniteLossError,
    init_state,
    load_train_checkpoint,
    train_loop,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

NUM_CAMERAS = 6
SEED_STRIDE = 1_000_003  # mixes the global seed with the per-sample index


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pedmae",
        description="Cross-region masked-image pre-training for pedestrian images.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pedestrian dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--per-identity", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="run the pre-training loop")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True, help="query image directory")
    p.add_argument("--gallery", required=True, help="gallery image directory")
    p.add_argument("--out", help="directory for report and feature files")

    p = sub.add_parser("inspect", help="dump region pair, mask, and coords")
    p.add_argument("--config", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="also dump a pixel-head reconstruction")
    return parser


def cmd_synth(args) -> int:
    if args.identities <= 0:
        print("error: --identities must be > 0", file=sys.stderr)
        return EXIT_USAGE
    if args.per_identity <= 0:
        print("error: --per-identity must be > 0", file=sys.stderr)
        return EXIT_USAGE
    if args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for identity in range(1, args.identities + 1):
        for j in range(args.per_identity):
            record = generate_synthetic_person(
                seed=args.seed * SEED_STRIDE + j, identity_id=identity)
            camera = (j % NUM_CAMERAS) + 1
            name = format_reid_filename(identity, camera, f"{j:03d}")
            save_image(out / name, record.pixels)
    print(f"wrote {args.identities * args.per_identity} images to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    run_cfg = load_config(args.config)
    if not run_cfg.data_dir:
        raise ConfigError("data_dir must be set for pretraining")
    manifest = load_image_folder(run_cfg.data_dir)
    if args.resume:
        state = load_train_checkpoint(args.resume)
        if asdict(state.model.encoder_cfg) != asdict(run_cfg.encoder_config()):
            print("error: --resume checkpoint architecture does not match "
                  "the config file", file=sys.stderr)
            return EXIT_USAGE
        # the stored run parameters win over whatever the config file says
    else:
        state = init_state(run_cfg.encoder_config(), run_cfg.train_config(),
                           decoder_dim=run_cfg.decoder_dim(),
                           decoder_heads=run_cfg.decoder_num_heads,
                           image_size=run_cfg.image_size)
    final = train_loop(manifest.records, state, run_cfg.out_dir)
    print(f"completed {state.epoch} epochs ({state.step} steps); "
          f"final checkpoint: {final}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_train_checkpoint(args.checkpoint)
    query = load_image_folder(args.query, split_tag="query")
    gallery = load_image_folder(args.gallery, split_tag="gallery")
    encoder = state.model.online
    query_features = extract_features(encoder, query.records, state.image_size)
    gallery_features = extract_features(encoder, gallery.records, state.image_size)
    report = compute_cmc_map(query_features, gallery_features,
                             max_rank=min(10, len(gallery.records)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(format_report(report))
        save_feature_matrix(out / "query_features.txt", query_features)
        save_feature_matrix(out / "gallery_features.txt", gallery_features)
    print(f"mAP={report.map_score:.6f} rank1={report.rank1:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    run_cfg = load_config(args.config)
    try:
        pixels = load_image(args.image)
    except OSError as exc:
        raise ConfigError(f"cannot decode image {args.image}: {exc}") from exc
    record = ImageRecord(pixels=resize_bilinear(pixels, run_cfg.image_size))
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xD5]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pair = sample_cross_region(record, run_cfg.image_size, run_cfg.max_shift, rng)
    t = run_cfg.patch_size
    seq_a = patchify(pair.region_a, t)
    seq_b = patchify(pair.region_b, t)
    layout = make_mask(run_cfg.mask_strategy, seq_a.grid, run_cfg.mask_ratio, rng)
    save_image(out / "region_a.png", pair.region_a)
    save_image(out / "region_b.png", pair.region_b)
    (out / "region.txt").write_text(
        f"{pair.pad_p} {pair.shift[0]} {pair.shift[1]}\n")
    (out / "mask.txt").write_text(layout_to_text(layout) + "\n")
    rel = relation_coords(pair.shift, t, seq_b.grid)
    coord_lines = [f"{float(r)!r} {float(c)!r}" for r, c in rel]
    (out / "coords.txt").write_text("\n".join(coord_lines) + "\n")

    if args.checkpoint:
        state = load_train_checkpoint(args.checkpoint)
        if state.model.encoder_cfg.patch_size != t:
            raise ConfigError("checkpoint patch size does not match the config")
        model = state.model
        visible, _ = split_visible(seq_a, layout)
        dtype = next(model.parameters()).dtype
        with torch.no_grad():
            vis_tokens = torch.from_numpy(visible.tokens[None]).to(dtype)
            feats = model.online.encode(vis_tokens, visible.coords[None])
            dec_dim = model.decoder_dim()
            vis_pos = position_embedding(visible.coords[None], dec_dim, dtype=dtype)
            feat_pos = torch.nn.functional.pad(
                vis_pos, (0, 0, model.online.num_prefix_tokens, 0))
            query_pos = position_embedding(rel[None], dec_dim, dtype=dtype)
            pred = model.pixel_decoder(feats, feat_pos, query_pos)[0].numpy()
        _, mean_b, std_b = normalize_patch_targets(seq_b.tokens)
        restored = pred * (std_b[:, None] + PATCH_NORM_EPS) + mean_b[:, None]
        recon_seq = TokenSequence(tokens=restored, coords=seq_b.coords,
                                  grid=seq_b.grid, patch_size=seq_b.patch_size)
        recon = unpatchify(recon_seq)
        save_image(out / "reconstruction.png", np.clip(recon, 0.0, 1.0))
    print(f"inspection artifacts written to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"synth": cmd_synth, "pretrain": cmd_pretrain,
                "eval": cmd_eval, "inspect": cmd_inspect}
    try:
        return handlers[args.command](args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
