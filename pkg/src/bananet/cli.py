"""Command-line entry point: dataset tooling, training, evaluation,
prediction, Grad-CAM and model inspection in one executable.

Exit codes: 0 success, 1 usage/config error, 2 data or format error,
3 numeric failure. Every run prints its resolved configuration first.
Heavy imports happen after BANANET_THREADS is applied, so the variable can
cap the BLAS thread pool.
"""

import argparse
import json
import os
import sys
from pathlib import Path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bananet",
                     description="Banana sub-family / quality CNN pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic class-directory corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("split", help="write a train/val/test split manifest (JSONL)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", type=float, nargs=3, default=(0.76, 0.19, 0.05),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model and save weights as NTW")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output NTW path")
    p.add_argument("--model", choices=("base-cnn", "mobilenet-transfer"),
                   default="mobilenet-transfer")
    p.add_argument("--weights", help="NTW with pretrained backbone weights")
    p.add_argument("--init-from", help="NTW of a previously trained model to reuse")
    p.add_argument("--freeze", type=int, default=None,
                   help="freeze the first N layers (default 20 for transfer, 0 otherwise)")
    p.add_argument("--epochs", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--patience", type=int, default=None,
                   help="early-stopping patience; omit or 0 to disable")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-size", type=int, default=224,
                   help="input resolution for the transfer model")
    p.add_argument("--fractions", type=float, nargs=3, default=(0.76, 0.19, 0.05),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--card", help="model card JSON (default: <out>.json)")

    p = sub.add_parser("eval", help="evaluate a saved model on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--model-file", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--text-out", help="report text path (default: <out>.txt)")
    p.add_argument("--fractions", type=float, nargs=3, default=(0.76, 0.19, 0.05),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=32)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model-file", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--top", type=int, default=3)

    p = sub.add_parser("gradcam", help="write a Grad-CAM heatmap PNG for one image")
    p.add_argument("--model-file", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--class-index", type=int, default=None,
                   help="class to explain (default: the predicted class)")

    p = sub.add_parser("inspect", help="print the layer table of a model")
    p.add_argument("--model", choices=("base-cnn", "mobilenet", "mobilenet-transfer"))
    p.add_argument("--model-file", help="inspect a saved model instead")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--freeze", type=int, default=0)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "command"}
    print(f"[bananet {args.command}] config: "
          f"{json.dumps(resolved, default=str, sort_keys=True)}")


def _load_split(args):
    from .data import scan_dataset, split_dataset

    ds = scan_dataset(args.data)
    return split_dataset(ds, tuple(args.fractions), seed=args.seed)


def _write_card(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_from_card(model_file):
    from .errors import DataError
    from .model import attach_transfer_head, build_base_cnn, build_mobilenet, \
        set_trainable_boundary
    from .ntw import load_weights

    card_path = Path(str(model_file) + ".json")
    if not card_path.exists():
        raise DataError(f"model card {card_path} not found next to {model_file}")
    card = json.loads(card_path.read_text(encoding="utf-8"))
    k = len(card["class_names"])
    if card["model"] == "base-cnn":
        model = build_base_cnn(k, seed=card.get("seed", 0))
    else:
        backbone = build_mobilenet(include_top=False,
                                   input_hw=card.get("input_size", 224),
                                   seed=card.get("seed", 0))
        model = attach_transfer_head(backbone, k, seed=card.get("seed", 0))
    set_trainable_boundary(model, card.get("freeze_first_n", 0))
    load_weights(model, model_file)
    return model, card


def _cmd_synth(args) -> int:
    from .data import generate_synthetic_corpus

    written = generate_synthetic_corpus(args.out, classes=args.classes,
                                        per_class=args.per_class,
                                        seed=args.seed, size=args.size)
    print(f"wrote {len(written)} images under {args.out}")
    return 0


def _cmd_split(args) -> int:
    from .data import export_split_manifest

    ds = _load_split(args)
    export_split_manifest(ds, args.out)
    counts = ds.split_counts()
    print(f"classes: {ds.class_names}")
    print(f"split sizes: {counts}")
    print(f"manifest: {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .data import AugmentSpec
    from .errors import ConfigError
    from .model import attach_transfer_head, build_base_cnn, build_mobilenet
    from .ntw import load_weights, save_weights
    from .train import TrainConfig, quality_model_from, train

    if args.weights and args.init_from:
        raise ConfigError("--weights and --init-from are mutually exclusive")
    ds = _load_split(args)
    k = len(ds.class_names)
    freeze = args.freeze
    if freeze is None:
        freeze = 20 if args.model == "mobilenet-transfer" else 0

    if args.model == "base-cnn":
        model = build_base_cnn(k, seed=args.seed)
        if args.weights:
            load_weights(model, args.weights)
        input_size = 256
    else:
        backbone = build_mobilenet(include_top=False, input_hw=args.input_size,
                                   seed=args.seed)
        if args.weights:
            load_weights(backbone, args.weights)
        if args.init_from:
            from .ntw import read_ntw

            store = read_ntw(args.init_from)
            if "head_out/weight" not in store:
                raise ConfigError(f"{args.init_from} is not a transfer-model NTW")
            k0 = store["head_out/weight"].shape[1]
            model = attach_transfer_head(backbone, int(k0), seed=args.seed)
            load_weights(model, args.init_from)
            model = quality_model_from(model, k, seed=args.seed)
        else:
            model = attach_transfer_head(backbone, k, seed=args.seed)
        input_size = args.input_size

    augment = None if args.no_augment else AugmentSpec(seed=args.seed)
    config = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                         batch_size=args.batch,
                         early_stop_patience=args.patience, seed=args.seed,
                         freeze_first_n=freeze, augment=augment)
    model, log = train(model, ds, config)

    save_weights(model, args.out)
    log_path = args.log or f"{args.out}.log.csv"
    log.to_csv(log_path)
    card_path = args.card or f"{args.out}.json"
    _write_card(card_path, {
        "model": args.model, "class_names": ds.class_names,
        "input_size": input_size, "freeze_first_n": freeze, "seed": args.seed,
    })
    last = log.rows[-1]
    print(f"trained {len(log.rows)} epoch(s); "
          f"final val_loss={last['val_loss']:.4f} val_acc={last['val_acc']:.4f}")
    print(f"weights: {args.out}\nlog: {log_path}\ncard: {card_path}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import export_report, render_text
    from .train import evaluate

    model, _card = _model_from_card(args.model_file)
    ds = _load_split(args)
    report = evaluate(model, ds, args.split, batch_size=args.batch)
    export_report(report, args.out, "json")
    text_out = args.text_out or f"{args.out}.txt"
    export_report(report, text_out, "text")
    print(render_text(report))
    print(f"report: {args.out}\ntext: {text_out}")
    return 0


def _cmd_predict(args) -> int:
    import numpy as np

    from .data import load_image

    model, card = _model_from_card(args.model_file)
    img = load_image(args.image, model.input_shape)
    probs = model.forward(img)
    order = np.argsort(probs)[::-1][: max(1, args.top)]
    names = card["class_names"]
    for rank, idx in enumerate(order, start=1):
        print(f"{rank}. {names[idx]}  {probs[idx]:.4f}")
    return 0


def _cmd_gradcam(args) -> int:
    import numpy as np

    from .gradcam import compute_gradcam, render_heatmap

    model, card = _model_from_card(args.model_file)
    img = load_image_for(model, args.image)
    class_index = args.class_index
    if class_index is None:
        class_index = int(np.argmax(model.forward(img)))
    cam = compute_gradcam(model, img, class_index)
    render_heatmap(cam, img, args.out)
    print(f"class: {card['class_names'][class_index]} (index {class_index})")
    print(f"heatmap: {args.out}")
    return 0


def load_image_for(model, path):
    from .data import load_image

    return load_image(path, model.input_shape)


def _cmd_inspect(args) -> int:
    from .errors import ConfigError
    from .model import attach_transfer_head, build_base_cnn, build_mobilenet, \
        set_trainable_boundary, summarize

    if args.model_file:
        model, _ = _model_from_card(args.model_file)
    elif args.model == "base-cnn":
        model = build_base_cnn(args.classes, seed=args.seed)
        set_trainable_boundary(model, args.freeze)
    elif args.model == "mobilenet":
        model = build_mobilenet(include_top=True, input_hw=args.input_size,
                                seed=args.seed)
        set_trainable_boundary(model, args.freeze)
    elif args.model == "mobilenet-transfer":
        backbone = build_mobilenet(include_top=False, input_hw=args.input_size,
                                   seed=args.seed)
        model = attach_transfer_head(backbone, args.classes, seed=args.seed)
        set_trainable_boundary(model, args.freeze)
    else:
        raise ConfigError("inspect needs --model or --model-file")
    print(summarize(model))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "gradcam": _cmd_gradcam,
    "inspect": _cmd_inspect,
}


def run(argv) -> int:
    threads = os.environ.get("BANANET_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    from .errors import (ConfigError, DataError, FormatError, NumericError,
                         ShapeError, WeightLoadError)

    try:
        _print_config(args)
        return _COMMANDS[args.command](args)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FormatError, WeightLoadError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
