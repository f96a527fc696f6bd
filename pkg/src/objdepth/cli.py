"""Command-line entry point: ``objdepth {synth,train,eval,infer,ablate}``."""

import argparse
import json
import logging
import os
import sys

from .config import ModelConfig, load_config, save_config
from .errors import EvaluationError, ObjDepthError


def _config(args):
    cfg = load_config(args.config) if args.config else ModelConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.device_precision:
        changes["precision"] = args.device_precision
    if getattr(args, "max_steps", None) is not None:
        changes["max_steps"] = args.max_steps
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.with_(**changes).validate()


def cmd_synth(args):
    from .synth import SceneSpec, write_split

    spec = SceneSpec(seed=args.seed or 0, height=args.height, width=args.width)
    manifest = write_split(spec, args.n, args.out_dir)
    print(f"wrote {manifest['count']} scenes to {args.out_dir}")


def cmd_train(args):
    from .train import train

    cfg = _config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    save_config(cfg, os.path.join(args.out_dir, "config.yaml"))
    result = train(cfg, args.data_dir, args.out_dir)
    last = result.history[-1]["total"] if result.history else float("nan")
    print(f"checkpoint={result.checkpoint_path} steps={result.steps} final_loss={last:.6f}")


def cmd_eval(args):
    from .metrics import format_report
    from .pipeline import evaluate

    metrics = evaluate(args.checkpoint, args.data_dir, args.tta_mirror, args.out_dir)
    sys.stdout.write(format_report(metrics, {"tta_mirror": args.tta_mirror}))


def cmd_infer(args):
    from .objects import parse_detections
    from .pfm import read_pfm
    from .pipeline import infer

    image = read_pfm(args.image)
    sets = parse_detections(args.detections)
    image_id = args.image_id or os.path.splitext(os.path.basename(args.image))[0]
    match = [s for s in sets if s.image_id == image_id]
    if not match:
        raise EvaluationError(f"no detection entry for image {image_id!r}")
    depth = infer(args.checkpoint, image, match[0], args.out, args.vis, args.tta_mirror)
    print(f"wrote {args.out} ({depth.shape[0]}x{depth.shape[1]})")


def cmd_ablate(args):
    from .pipeline import ablation_matrix

    cfg = _config(args)
    cells = ablation_matrix(cfg, args.data_dir, args.out_dir, args.eval_dir, tta_mirror=args.tta_mirror)
    with open(os.path.join(args.out_dir, "ablation.md")) as fh:
        sys.stdout.write(fh.read())
    failed = [c for c in cells if c.metrics is None]
    if failed:
        print(f"{len(failed)} of {len(cells)} cells failed", file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="objdepth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--device-precision", choices=("f32", "f64"))
        if data:
            p.add_argument("--data-dir", required=True)
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", help="generate a synthetic split")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a split")
    common(p)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--tta-mirror", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict depth for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="3-channel PFM")
    p.add_argument("--detections", required=True, help="detection JSON-lines file")
    p.add_argument("--image-id", help="defaults to the image file stem")
    p.add_argument("--out", required=True, help="output depth PFM")
    p.add_argument("--vis", help="optional 8-bit PNG visualisation")
    p.add_argument("--tta-mirror", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="run the positional x language x object-SA grid")
    common(p)
    p.add_argument("--eval-dir")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--tta-mirror", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def _error_line(kind, exc):
    return f"error kind={kind} message={json.dumps(str(exc))}"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ObjDepthError as exc:
        print(_error_line(exc.kind, exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(_error_line("io", exc), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
