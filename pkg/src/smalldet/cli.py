"""Command-line surface: gradient verification, dataset generation,
training, evaluation, and two inspection aids.

Every subcommand is reachable through ``main(argv)`` which returns the
process exit code: 0 on success, 1 on any reported failure, 2 for bad
flags (argparse). File problems are printed to stderr with the path.
"""

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from .harness.checkpoint import save_checkpoint
from .harness.data import (SceneSpec, generate_dataset, load_dataset,
                           load_pgm, save_dataset, save_pgm)
from .harness.evaluate import evaluate_checkpoint
from .harness.gradsuite import MODULE_GROUPS, PASS_THRESHOLD, run_suite
from .harness.model import named_parameters
from .harness.train import TrainConfig, train
from .losses import (BBox, FocalerParams, focaler_iou_loss, focaler_map,
                     focaler_siou_loss, iou, siou_loss)
from .neck import space_to_depth
from .tensor import Tensor, set_precision

_SPEC_TUPLE_FIELDS = ("image_size", "size_range", "background_range",
                      "foreground_span")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _dataclass_from_dict(cls, data, tuple_fields=()):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {unknown}")
    kwargs = {
        k: tuple(v) if k in tuple_fields and isinstance(v, list) else v
        for k, v in data.items()
    }
    return cls(**kwargs)


def _run_gradcheck(args):
    results = run_suite(module=args.module, seeds=args.seeds)
    width = max(len(name) for name, _ in results)
    failed = 0
    for name, err in results:
        ok = err < PASS_THRESHOLD
        failed += not ok
        print(f"{name:<{width}}  {err:12.3e}  {'PASS' if ok else 'FAIL'}")
    print(f"{len(results) - failed}/{len(results)} cases below {PASS_THRESHOLD:g}")
    return 0 if failed == 0 else 1


def _run_gen(args):
    spec = _dataclass_from_dict(SceneSpec, _load_json(args.spec),
                                _SPEC_TUPLE_FIELDS)
    dataset = generate_dataset(spec, args.count)
    save_dataset(dataset, args.out)
    print(f"wrote {args.count} images to {args.out}")
    return 0


def _run_train(args):
    config = _dataclass_from_dict(TrainConfig, _load_json(args.config))
    dataset = load_dataset(args.data)
    result = train(config, dataset)
    tensors = [(name, t.data) for name, t in named_parameters(result.model)]
    save_checkpoint(args.out, tensors, result.metadata)
    curve_path = args.out + ".curve.json"
    with open(curve_path, "w") as f:
        json.dump({"loss_curve": result.loss_curve}, f, indent=1)
        f.write("\n")
    print(f"final loss {result.loss_curve[-1]:.6f} after {config.epochs} epochs")
    print(f"wrote {args.out} and {curve_path}")
    return 0


def _run_eval(args):
    dataset = load_dataset(args.data)
    report = evaluate_checkpoint(args.ckpt, dataset,
                                 confidence_threshold=args.conf,
                                 nms_iou=args.nms)
    with open(args.report, "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"mAP50 {report.map50:.4f}  mAP50-95 {report.map50_95:.4f}")
    print(f"wrote {args.report}")
    return 0


def _run_demo_spd(args):
    import os

    image = load_pgm(args.input)
    x = Tensor(image[None, None])
    slices = space_to_depth(x).data[0]
    os.makedirs(args.out, exist_ok=True)
    for k in range(4):
        path = os.path.join(args.out, f"slice_{k + 1}.pgm")
        save_pgm(path, slices[k])
    print(f"wrote 4 slices to {args.out}")
    return 0


def _sweep_pair(q):
    """Two unit squares slid apart along x so their IoU is exactly q."""
    t = (1.0 - q) / (1.0 + q)
    return BBox(0.0, 0.0, 1.0, 1.0), BBox(t, 0.0, 1.0 + t, 1.0)


def _run_loss_sweep(args):
    params = FocalerParams(args.d, args.u)
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iou", "focaler", "focaler_iou_loss",
                         "siou_loss", "focaler_siou_loss"])
        for k in range(101):
            q = k / 100.0
            a, b = _sweep_pair(q)
            measured = iou(a, b)
            s_loss, _ = siou_loss(a, b)
            writer.writerow([repr(measured),
                             repr(focaler_map(measured, params)),
                             repr(focaler_iou_loss(a, b, params)),
                             repr(s_loss),
                             repr(focaler_siou_loss(a, b, params))])
    print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smalldet",
        description="Small-object detection blocks with verified gradients.",
    )
    parser.add_argument("--precision", choices=("single", "double"),
                        help="override the SMALLDET_PRECISION numeric mode")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--module", choices=MODULE_GROUPS, default="all")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=_run_gradcheck)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=32)
    p.set_defaults(func=_run_gen)

    p = sub.add_parser("train", help="train the toy detector")
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_run_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", required=True, help="report JSON output path")
    p.add_argument("--conf", type=float, default=0.05,
                   help="confidence threshold")
    p.add_argument("--nms", type=float, default=0.5, help="NMS IoU threshold")
    p.set_defaults(func=_run_eval)

    p = sub.add_parser("demo-spd", help="write the four space-to-depth slices")
    p.add_argument("--in", dest="input", required=True, help="input PGM image")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_run_demo_spd)

    p = sub.add_parser("loss-sweep", help="tabulate box losses over an IoU grid")
    p.add_argument("--d", type=float, default=0.0)
    p.add_argument("--u", type=float, default=0.95)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_run_loss_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.precision:
        set_precision(args.precision)
    try:
        return args.func(args)
    except OSError as e:
        path = e.filename if e.filename else ""
        print(f"error: {path}: {e.strerror or e}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
