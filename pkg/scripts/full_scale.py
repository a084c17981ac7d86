"""Full-scale training run: the long job CI never executes.

Trains N five-layer members on the complete 35,887-image corpus (300
epochs each, SGD momentum 0.9, lr 0.1 halved on 10-epoch validation
plateaus, batch 128, weight decay 1e-4, class weighting, full
augmentation), then evaluates each member and the TTA soft-vote ensemble
on the held-out test split.

On a single CPU core one member is multi-day work; plan accordingly or
run members in parallel on separate machines and share --out-dir.
Historical accuracy for this family on the real corpus: mid-60s for a
single member, mid-70s for a 7-member TTA ensemble.

Usage:
    python3 scripts/full_scale.py --dataset /path/to/fer2013.csv \
        --members 7 --out-dir runs/full
"""

import argparse
import json
import os
import pathlib
import sys
import time

import numpy as np

from ferkit.data import load_fer_csv
from ferkit.evaluate import (EnsembleSpec, confusion_matrix, ensemble_predict,
                             load_ensemble, metrics_dict)
from ferkit.model import build_model, load_weights, save_weights
from ferkit.train import TrainConfig, fit


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", default=os.environ.get("FER2013_CSV"),
                        help="corpus CSV (default: $FER2013_CSV)")
    parser.add_argument("--arch", default="five-layer",
                        choices=["five-layer", "baseline"])
    parser.add_argument("--members", type=int, default=7)
    parser.add_argument("--epochs", type=int, default=300)
    parser.add_argument("--out-dir", default="runs/full")
    parser.add_argument("--seed0", type=int, default=100,
                        help="member i trains with seed seed0+i")
    args = parser.parse_args(argv)
    if not args.dataset:
        parser.error("--dataset or FER2013_CSV is required")

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, val, test = load_fer_csv(args.dataset)
    print(f"loaded {len(train)}/{len(val)}/{len(test)} train/val/test")

    members = []
    for i in range(args.members):
        seed = args.seed0 + i
        weights_path = out_dir / f"{args.arch}_s{seed}.ferw"
        members.append({"weights_path": str(weights_path), "tta": True})
        if weights_path.exists():
            print(f"member {i}: {weights_path} exists, skipping train")
            continue
        config = TrainConfig(max_epochs=args.epochs, use_class_weights=True,
                             seed=seed)
        model = build_model(args.arch, seed=seed)
        start = time.perf_counter()
        model, state = fit(model, train, val, config,
                           checkpoint_path=str(weights_path),
                           history_path=str(out_dir / f"{args.arch}_s{seed}.history.jsonl"))
        hours = (time.perf_counter() - start) / 3600
        save_weights(model, weights_path)
        print(f"member {i}: best val {state.best_val_accuracy:.1%} "
              f"after {state.epoch} epochs in {hours:.1f}h")

    spec_path = out_dir / "ensemble.json"
    spec_path.write_text(json.dumps(members, indent=2))

    for entry in members:
        model = load_weights(entry["weights_path"])
        counts = confusion_matrix(model, test)
        acc = float(np.trace(counts) / counts.sum())
        print(f"{entry['weights_path']}: test accuracy {acc:.1%}")

    models = load_ensemble(EnsembleSpec.from_json_file(spec_path))
    probs = np.stack([ensemble_predict(models, s.pixels, seed=1234)
                      for s in test.samples])
    counts = confusion_matrix(probs, test)
    metrics = metrics_dict(counts)
    (out_dir / "ensemble_metrics.json").write_text(
        json.dumps(metrics, sort_keys=True, indent=2))
    print(f"ensemble ({len(models)} members, TTA): "
          f"test accuracy {metrics['accuracy']:.1%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
