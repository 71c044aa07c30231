#!/usr/bin/env python3
"""Train the fixture twice, once per box-loss kind, and print the final
losses and train-set mAP50 side by side.

The reshaped loss concentrates gradient on boxes whose IoU sits inside
the (d, u) interval; on the small-object fixture this shows up as equal
or better localization at the same epoch budget.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from smalldet.harness.data import generate_dataset
from smalldet.harness.evaluate import evaluate_model
from smalldet.harness.presets import (FIXTURE_IMAGE_COUNT, fixture_scene_spec,
                                      fixture_train_config)
from smalldet.harness.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=7,
                        help="training seed for both runs (default: 7)")
    parser.add_argument("--epochs", type=int, default=None,
                        help="override the preset epoch count")
    args = parser.parse_args()

    dataset = generate_dataset(fixture_scene_spec(), FIXTURE_IMAGE_COUNT)
    overrides = {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs

    rows = []
    for kind, d, u in (("focaler_siou", 0.0, 0.95), ("siou", 0.0, 1.0)):
        config = fixture_train_config(loss_kind=kind, focaler_d=d,
                                      focaler_u=u, **overrides)
        print(f"training {kind} (seed {args.seed}) ...", flush=True)
        result = train(config, dataset)
        report = evaluate_model(result.model, dataset)
        rows.append((kind, result.loss_curve[-1], report.map50,
                     report.map50_95))

    print()
    print(f"{'loss kind':<14} {'final loss':>10} {'mAP50':>8} {'mAP50-95':>9}")
    for kind, loss, m50, m5095 in rows:
        print(f"{kind:<14} {loss:>10.4f} {m50:>8.4f} {m5095:>9.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
