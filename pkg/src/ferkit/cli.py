"""Command-line workflow driver.

Subcommands: train, eval, predict, ensemble-eval, explain, dataset-stats,
serve. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
abort during training.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import data as data_mod
from . import evaluate as eval_mod
from .errors import DataError, NumericError


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this tool reserves 2
    for data errors, so usage failures are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_split(path, split):
    train, val, test = data_mod.load_fer_csv(path)
    return {"train": train, "val": val, "test": test}[split]


def _load_image(path):
    return data_mod._decode_image(path)


def cmd_train(args):
    from .model import build_model, save_weights
    from .train import TrainConfig, fit, parse_config_file

    if args.config:
        config, arch = parse_config_file(args.config)
    else:
        config, arch = TrainConfig(), "five-layer"
    if args.arch:
        arch = args.arch
    train_ds, val_ds, _ = data_mod.load_fer_csv(args.dataset)
    model = build_model(arch, seed=config.seed)
    history = args.history or (args.out + ".history.jsonl")
    model, state = fit(model, train_ds, val_ds, config,
                       checkpoint_path=args.out, history_path=history)
    save_weights(model, args.out)
    print(json.dumps({
        "weights": args.out,
        "history": history,
        "epochs": state.epoch,
        "best_val_accuracy": state.best_val_accuracy,
    }, sort_keys=True))
    return 0


def cmd_eval(args):
    from .model import load_weights

    model = load_weights(args.weights)
    dataset = _load_split(args.dataset, args.split)
    counts = eval_mod.confusion_matrix(model, dataset)
    if args.table:
        print(eval_mod.format_confusion(counts))
    else:
        print(json.dumps(eval_mod.metrics_dict(counts), sort_keys=True))
    return 0


def cmd_predict(args):
    from .model import load_weights

    model = load_weights(args.weights)
    image = _load_image(args.image)
    if args.tta:
        probs = eval_mod.predict_tta(model, image, seed=args.seed)
    else:
        probs = model.forward_probs(image[None, None, :, :], mode="infer")[0]
    print(json.dumps({
        "probabilities": [float(p) for p in probs],
        "label": data_mod.emotion_name(int(np.argmax(probs))),
    }, sort_keys=True))
    return 0


def cmd_ensemble_eval(args):
    spec = eval_mod.EnsembleSpec.from_json_file(args.spec)
    models = eval_mod.load_ensemble(spec)
    dataset = _load_split(args.dataset, args.split)
    probs = np.stack([
        eval_mod.ensemble_predict(models, s.pixels, seed=args.seed)
        for s in dataset.samples])
    counts = eval_mod.confusion_matrix(probs, dataset)
    print(json.dumps(eval_mod.metrics_dict(counts), sort_keys=True))
    return 0


def cmd_explain(args):
    from .interpret import occlusion_map, render_heatmap, saliency_map
    from .model import load_weights

    model = load_weights(args.weights)
    image = _load_image(args.image)
    target = data_mod.emotion_index(args.target) if args.target else None
    if args.method == "occlusion":
        heatmap = occlusion_map(model, image, patch=args.patch,
                                stride=args.stride, target_class=target)
    else:
        if target is None:
            probs = model.forward_probs(image[None, None, :, :], mode="infer")[0]
            target = int(np.argmax(probs))
        heatmap = saliency_map(model, image, target)
    render_heatmap(heatmap, image, args.out)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(heatmap.to_json_dict(), fh)
    print(json.dumps({"out": args.out, "method": heatmap.method,
                      "target": data_mod.emotion_name(heatmap.target_class)},
                     sort_keys=True))
    return 0


def cmd_dataset_stats(args):
    if args.dir:
        dataset = data_mod.load_class_directories(args.dir)
        counts = dataset.class_counts
    else:
        train, val, test = data_mod.load_fer_csv(args.dataset)
        counts = train.class_counts + val.class_counts + test.class_counts
    stats = {
        "counts": {name: int(c) for name, c in zip(data_mod.EMOTION_NAMES, counts)},
        "total": int(counts.sum()),
    }
    if args.json:
        print(json.dumps(stats, sort_keys=True))
    else:
        for name in data_mod.EMOTION_NAMES:
            print(f"{name:<9} {stats['counts'][name]}")
        print(f"{'Total':<9} {stats['total']}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .server import create_app

    app = create_app(weights_path=args.weights, data_root=args.data_root,
                     allow_collect=not args.no_collect,
                     cors_origins=args.cors_origin)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = _Parser(prog="fer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="flat key=value training config")
    p.add_argument("--dataset", required=True, help="FER-format CSV path")
    p.add_argument("--arch", choices=["five-layer", "baseline"])
    p.add_argument("--out", default="model.ferw", help="weights output path")
    p.add_argument("--history", help="history sidecar path (JSON lines)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="metrics for weights on a dataset split")
    p.add_argument("--weights", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--table", action="store_true", help="aligned text table")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="classify one image file")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    p.add_argument("--tta", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ensemble-eval", help="soft-voting ensemble metrics")
    p.add_argument("--spec", required=True, help="JSON list of members")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_ensemble_eval)

    p = sub.add_parser("explain", help="write a heatmap overlay PNG")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    p.add_argument("--method", choices=["occlusion", "saliency"],
                   default="occlusion")
    p.add_argument("--out", required=True, help="overlay PNG path")
    p.add_argument("--json", help="also dump heatmap values as JSON")
    p.add_argument("--target", help="emotion name (default: predicted class)")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=4)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("dataset-stats", help="class counts of a dataset")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--dataset", help="FER-format CSV path")
    group.add_argument("--dir", help="7-directory class tree root")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_dataset_stats)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--weights", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-root", help="class-directory root for /samples")
    p.add_argument("--no-collect", action="store_true",
                   help="disable the /samples endpoint")
    p.add_argument("--cors-origin", action="append", default=[],
                   help="allowed CORS origin (repeatable)")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DataError as exc:
        print(f"fer: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"fer: numeric abort: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"fer: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
