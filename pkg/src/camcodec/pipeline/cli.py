"""Command-line front end: ``camcodec <verb> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..coder import DecodeError
from ..numerics import ConfigurationError, ContractError, NumericError
from ..transforms import TINY, CompressionModel, resolve_config
from . import checkpoint, report
from .analysis import cluster_masks, erf_map
from .bitstream import FormatError
from .checkpoint import CheckpointError
from .codec import decode_bytes, decode_image, encode_array, encode_image
from .evaluate import EvaluationError, bd_rate, evaluate_directory, read_rd_points, write_rd_csv
from .imageio import InputError, read_ppm
from .synthetic import synthetic_image, write_dataset
from .training import load_images, train, write_log

log = logging.getLogger("camcodec")

EXPECTED_ERRORS = (InputError, FormatError, DecodeError, CheckpointError, ConfigurationError,
                   EvaluationError, ContractError, NumericError, FileNotFoundError)


def _model(args) -> CompressionModel:
    if args.checkpoint:
        return checkpoint.load(args.checkpoint)
    log.warning("no --checkpoint given; using an untrained %s model (seed %d)", args.config or "desk", args.seed)
    return CompressionModel(resolve_config(args.config), seed=args.seed)


def cmd_train(args) -> int:
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    model = _model(args) if args.checkpoint else CompressionModel(resolve_config(args.config), seed=args.seed)
    images = load_images(args.images)

    def progress(step, loss):
        if step % max(1, args.steps // 20) == 0:
            log.info("step %d loss %.4f", step, loss)

    result = train(model, images, args.steps, args.rd_lambda, seed=args.seed, batch_size=args.batch,
                   checkpoint_path=out / "model.ckpt", log_path=out / "loss.csv", progress=progress)
    report.plot_loss(result.log, out / "loss.png")
    print(f"checkpoint: {out / 'model.ckpt'}")
    print(f"loss log:   {out / 'loss.csv'}")
    if result.aborted:
        print(f"training aborted: {result.message}; saved the last good checkpoint", file=sys.stderr)
        return 3
    return 0


def cmd_encode(args) -> int:
    model = _model(args)
    out = args.out or str(Path(args.image).with_suffix(".camc"))
    result = encode_image(args.image, model, out)
    s = result.stats
    print(f"{out}: {s.file_bytes} bytes, {s.bpp:.4f} bpp (estimate {s.estimate_bits / 8:.1f} bytes)")
    if s.y_saturated or s.z_saturated:
        log.warning("%d latent symbols were clamped to the coding range", s.y_saturated + s.z_saturated)
    return 0


def cmd_decode(args) -> int:
    model = _model(args)
    out = args.out or str(Path(args.coded).with_suffix(".ppm"))
    x_hat = decode_image(args.coded, model, out)
    print(f"{out}: {x_hat.shape[1]}x{x_hat.shape[0]}")
    return 0


def cmd_eval(args) -> int:
    model = _model(args)
    out = Path(args.out or "eval")
    out.mkdir(parents=True, exist_ok=True)
    summary = evaluate_directory(args.images, model)
    write_rd_csv(out / "rd.csv", summary)
    report.plot_rd(summary, out / "rd.png")
    print(f"{len(summary.images)} images: {summary.mean_bpp:.4f} bpp, {summary.mean_psnr:.2f} dB")
    print(f"wrote {out / 'rd.csv'} and {out / 'rd.png'}")
    return 0


def cmd_bdrate(args) -> int:
    a, b = read_rd_points(args.anchor), read_rd_points(args.test)
    value = bd_rate(a, b)
    print(f"BD-rate: {value:+.2f}%")
    if args.out:
        report.plot_curves({Path(args.anchor).stem: a, Path(args.test).stem: b}, args.out)
    return 0


def cmd_erf(args) -> int:
    model = _model(args)
    out = args.out or "erf.pgm"
    gray = erf_map(model, read_ppm(args.image), out)
    report.plot_map(gray, Path(out).with_suffix(".png"), "effective receptive field")
    print(f"wrote {out}")
    return 0


def cmd_masks(args) -> int:
    model = _model(args)
    out = Path(args.out or "masks")
    masks = cluster_masks(model, read_ppm(args.image), args.stage, out_dir=out)
    print(f"wrote {len(masks)} masks of {masks.shape[2]}x{masks.shape[1]} to {out}")
    return 0


def cmd_synth(args) -> int:
    paths = write_dataset(args.out or "synthetic", args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images to {paths[0].parent}")
    return 0


def cmd_selftest(args) -> int:
    """Round-trip a synthetic image through a fresh model and check bit-exactness."""
    config = resolve_config(args.config) if args.config else TINY
    model = CompressionModel(config, seed=args.seed)
    image = synthetic_image(np.random.default_rng(args.seed), 48)[:40, :45]
    enc = encode_array(image, model)
    ok = np.array_equal(decode_bytes(enc.data, model), enc.reconstruction)
    restored = checkpoint.from_bytes(checkpoint.to_bytes(model))
    ok_ckpt = checkpoint.to_bytes(restored) == checkpoint.to_bytes(model)
    print(f"codec round-trip:      {'ok' if ok else 'FAILED'} ({len(enc.data)} bytes)")
    print(f"checkpoint round-trip: {'ok' if ok_ckpt else 'FAILED'}")
    return 0 if ok and ok_ckpt else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="preset name (desk, paper, tiny) or key=value config file")
    common.add_argument("--checkpoint", help="checkpoint file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="camcodec", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", parents=[common], help="train on a directory of PPM images")
    p.add_argument("images")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lambda", dest="rd_lambda", type=float, default=0.01)
    p.add_argument("--batch", type=int, default=2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", parents=[common], help="compress a PPM image")
    p.add_argument("image")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="reconstruct a PPM image")
    p.add_argument("coded")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="RD evaluation of a directory")
    p.add_argument("images")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate between two RD CSV files")
    p.add_argument("anchor")
    p.add_argument("test")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("erf", parents=[common], help="effective receptive field map")
    p.add_argument("image")
    p.set_defaults(func=cmd_erf)

    p = sub.add_parser("masks", parents=[common], help="cluster masks of one stage")
    p.add_argument("image")
    p.add_argument("--stage", type=int, default=3)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("synth", parents=[common], help="write synthetic PPM images")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("selftest", parents=[common], help="quick codec and checkpoint round-trip")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
