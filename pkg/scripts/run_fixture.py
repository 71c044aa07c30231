#!/usr/bin/env python3
"""Run the whole fixture pipeline in one go: generate the 32-scene
dataset, train the toy detector, evaluate on the training set, and leave
the dataset, checkpoint, loss curve, and report JSON in the output
directory.

This is the same configuration the acceptance gate trains, so expect two
minutes or so of compute and a final train-set mAP50 near 1.0.
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from smalldet.harness.checkpoint import save_checkpoint
from smalldet.harness.data import generate_dataset, save_dataset
from smalldet.harness.evaluate import evaluate_model
from smalldet.harness.model import named_parameters
from smalldet.harness.presets import (FIXTURE_IMAGE_COUNT, fixture_scene_spec,
                                      fixture_train_config)
from smalldet.harness.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="fixture_run",
                        help="output directory (default: fixture_run)")
    parser.add_argument("--epochs", type=int, default=None,
                        help="override the preset epoch count")
    args = parser.parse_args()

    overrides = {} if args.epochs is None else {"epochs": args.epochs}
    spec = fixture_scene_spec()
    config = fixture_train_config(**overrides)

    os.makedirs(args.out, exist_ok=True)
    dataset = generate_dataset(spec, FIXTURE_IMAGE_COUNT)
    save_dataset(dataset, os.path.join(args.out, "data"))
    print(f"generated {len(dataset)} scenes "
          f"({spec.image_size[0]}x{spec.image_size[1]}, seed {spec.seed})")

    result = train(config, dataset)
    ckpt = os.path.join(args.out, "model.ptdt")
    save_checkpoint(ckpt,
                    [(n, p.data) for n, p in named_parameters(result.model)],
                    result.metadata)
    ratio = result.loss_curve[-1] / result.loss_curve[0]
    print(f"trained {config.epochs} epochs: loss "
          f"{result.loss_curve[0]:.4f} -> {result.loss_curve[-1]:.4f} "
          f"(ratio {ratio:.4f})")

    report = evaluate_model(result.model, dataset)
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"train-set mAP50 {report.map50:.4f}, "
          f"mAP50-95 {report.map50_95:.4f}")
    print(f"artifacts in {args.out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
