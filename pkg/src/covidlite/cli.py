"""``covidlite`` command line: ingest, preprocess, split, train, evaluate, explain."""

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import interpret
from .imaging import (
    ImageDecodeError,
    PreprocessConfig,
    encode_image,
    preprocess,
    read_image,
)
from .metrics import class_report, confusion, multiclass_auc, roc_curve, write_roc_csv
from .model import build_covidlite, format_param_table
from .training import (
    DatasetIndex,
    ImageCache,
    TrainConfig,
    cross_validate,
    fit,
    predict_index,
    read_manifest,
    stratified_split,
    write_manifest,
)
from .weights import WeightFileError, load_weights, save_weights

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_MODEL = 3
EXIT_CLASS_MISMATCH = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_ERROR):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """Usage errors as one line on stderr."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def ingest(root):
    """Index ``root/<class_name>/*`` with class ids in lexicographic name order."""
    root = Path(root)
    if not root.is_dir():
        raise CliError(f"data root is not a directory: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise CliError(f"data root has no class directories: {root}")
    entries = []
    for label, d in enumerate(class_dirs):
        readable = 0
        for f in sorted(d.iterdir()):
            if f.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                read_image(f)
            except (OSError, ImageDecodeError) as exc:
                logging.warning("skipping unreadable image %s: %s", f, exc)
                continue
            entries.append((str(f), label))
            readable += 1
        if readable == 0:
            raise CliError(f"class directory has no readable images: {d}")
    return DatasetIndex(entries, [d.name for d in class_dirs])


def _preprocess_config(args):
    return PreprocessConfig(
        apply_white_balance=not args.no_white_balance,
        apply_clahe=not args.no_clahe,
        clahe_tiles=args.clahe_tiles,
        clahe_clip=args.clahe_clip,
        target_size=args.target_size,
    )


def _train_config(args, num_classes):
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        initial_lr=args.lr,
        seed=args.seed,
        num_classes=num_classes,
        k_folds=getattr(args, "folds", 5),
        bn_momentum=args.bn_momentum,
    )


def _load_index(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"manifest not found: {path}")
    index = read_manifest(path)
    if len(index) == 0:
        raise CliError(f"manifest has no entries: {path}")
    return index


def _load_model(path):
    try:
        return load_weights(path)
    except FileNotFoundError:
        raise CliError(f"model file not found: {path}", EXIT_MISSING_MODEL) from None
    except WeightFileError as exc:
        raise CliError(f"invalid model file {path}: {exc}", EXIT_MISSING_MODEL) from None


def _model_preprocess(model, args):
    """Preprocessing recorded in the weights unless overridden on the command line."""
    if args.no_white_balance or args.no_clahe:
        return _preprocess_config(args)
    stored = model.meta.get("preprocess")
    return PreprocessConfig(**stored) if stored else _preprocess_config(args)


def _class_names(model):
    names = model.meta.get("class_names")
    return names or [str(i) for i in range(model.num_classes)]


def _check_classes(model, index):
    if model.num_classes != index.num_classes:
        raise CliError(
            f"class-count mismatch: weights have {model.num_classes} classes, "
            f"data has {index.num_classes}",
            EXIT_CLASS_MISMATCH,
        )


def _write_text(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_ingest(args):
    index = ingest(args.root)
    write_manifest(index, args.out)
    counts = index.class_counts()
    for name, n in zip(index.class_names, counts):
        print(f"{name}: {n}")
    print(f"total: {len(index)}")


def cmd_preprocess(args):
    index = _load_index(args.manifest)
    config = _preprocess_config(args)
    out_dir = Path(args.out_dir)
    entries = []
    for path, label in index.entries:
        x = preprocess(read_image(path), config)
        dest = out_dir / index.class_names[label] / (Path(path).stem + ".png")
        dest.parent.mkdir(parents=True, exist_ok=True)
        encode_image(interpret.to_uint8(x), dest)
        entries.append((str(dest), label))
    out = DatasetIndex(entries, index.class_names)
    write_manifest(out, out_dir / "manifest.csv", f"preprocess={json.dumps(asdict(config), sort_keys=True)}")
    print(f"wrote {len(entries)} images to {out_dir}")


def cmd_split(args):
    index = _load_index(args.manifest)
    train, test = stratified_split(index, args.ratio, args.seed)
    comment = f"seed={args.seed} ratio={args.ratio}"
    write_manifest(train, args.train_out, comment)
    write_manifest(test, args.test_out, comment)
    print(f"{'class':<16}{'train':>8}{'test':>8}")
    for name, a, b in zip(index.class_names, train.class_counts(), test.class_counts()):
        print(f"{name:<16}{a:>8}{b:>8}")


def cmd_train(args):
    index = _load_index(args.manifest)
    config = _train_config(args, index.num_classes)
    pconf = _preprocess_config(args)
    model = build_covidlite(index.num_classes, seed=args.seed)
    history = fit(model, index, config, pconf)
    meta = {
        "config": asdict(config),
        "preprocess": asdict(pconf),
        "class_names": list(index.class_names),
    }
    save_weights(model, args.weights, meta)
    if args.history:
        history.to_csv(args.history)
    last = history.epochs[-1]
    print(f"epochs: {last['epoch']}  loss: {last['loss']:.4f}  accuracy: {last['accuracy']:.4f}")
    if history.skipped:
        print(f"skipped {len(history.skipped)} unreadable image(s)")
    print(f"weights: {args.weights}")


def cmd_crossval(args):
    index = _load_index(args.manifest)
    config = _train_config(args, index.num_classes)
    report = cross_validate(index, config, _preprocess_config(args))
    text = f"# seed={config.seed} config={json.dumps(asdict(config), sort_keys=True)}\n"
    text += report.format_table() + "\n"
    if args.report:
        _write_text(args.report, text)
    print(text, end="")


def cmd_eval(args):
    model = _load_model(args.weights)
    index = _load_index(args.manifest)
    _check_classes(model, index)
    pconf = _model_preprocess(model, args)
    probs, labels, _ = predict_index(model, index, pconf, ImageCache(pconf))
    if len(labels) == 0:
        raise CliError("no readable images to evaluate")
    k = model.num_classes
    names = list(index.class_names)
    cm = confusion(labels, probs.argmax(axis=1), k)
    report = class_report(cm, names)
    present = [c for c in range(k) if 0 < (labels == c).sum() < len(labels)]
    if len(present) == k:
        report.auc = multiclass_auc(probs, labels, k)[0]
    curves = {names[c]: roc_curve(probs[:, c], labels == c) for c in present}
    extra = {"seed": model.meta.get("seed"), "weights": str(args.weights)}
    if args.report:
        _write_text(args.report, report.to_json(confusion_matrix=cm.counts.tolist(), **extra))
    if args.roc:
        Path(args.roc).parent.mkdir(parents=True, exist_ok=True)
        write_roc_csv(curves, args.roc, f"seed={extra['seed']} weights={args.weights}")
    if args.confusion:
        rows = [f"# seed={extra['seed']}", "true\\pred," + ",".join(names)]
        rows += [names[i] + "," + ",".join(str(v) for v in cm.counts[i]) for i in range(k)]
        _write_text(args.confusion, "\n".join(rows) + "\n")
    print(report.format_table())
    print("Confusion matrix (rows true, columns predicted):")
    print(cm.counts)


def cmd_predict(args):
    model = _load_model(args.weights)
    pconf = _model_preprocess(model, args)
    x = preprocess(read_image(args.image), pconf)
    probs = model.predict_proba(x)[0]
    names = _class_names(model)
    best = int(probs.argmax())
    print(f"class: {names[best]} ({best})")
    for name, p in zip(names, probs):
        print(f"  {name}: {p:.4f}")


def cmd_explain(args):
    model = _load_model(args.weights)
    pconf = _model_preprocess(model, args)
    x = preprocess(read_image(args.image), pconf)
    class_id = args.class_id
    if class_id is None:
        class_id = int(model.predict_proba(x)[0].argmax())
    if not 0 <= class_id < model.num_classes:
        raise CliError(f"class id {class_id} outside [0, {model.num_classes})")
    if args.method == "saliency":
        heat = interpret.saliency_map(model, x, class_id)
    else:
        heat = interpret.grad_cam(model, x, class_id)
    out = interpret.overlay(interpret.to_uint8(x), heat, args.alpha)
    encode_image(out, args.out)
    print(f"{args.method} for class {class_id} -> {args.out}")


def cmd_params(args):
    print(format_param_table(build_covidlite(args.classes)))


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_preprocess_flags(p):
    g = p.add_argument_group("preprocessing")
    g.add_argument("--no-white-balance", action="store_true", help="skip percentile white balance")
    g.add_argument("--no-clahe", action="store_true", help="skip CLAHE")
    g.add_argument("--clahe-tiles", type=int, default=8)
    g.add_argument("--clahe-clip", type=float, default=2.0)
    g.add_argument("--target-size", type=int, default=224)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bn-momentum", type=float, default=0.99,
                   help="BatchNorm moving-statistics momentum (lower it for very short runs)")


def build_parser():
    parser = _Parser(prog="covidlite", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="index a class-per-directory image tree")
    p.add_argument("root")
    p.add_argument("--out", default="manifest.csv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", help="write enhanced PNGs for a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("manifest")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", default="train.csv")
    p.add_argument("--test-out", default="test.csv")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit a model and save its weights")
    p.add_argument("manifest")
    p.add_argument("--weights", required=True)
    p.add_argument("--history")
    _add_train_flags(p)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    p.add_argument("manifest")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--report")
    _add_train_flags(p)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", help="class report, ROC and confusion matrix")
    p.add_argument("manifest")
    p.add_argument("--weights", required=True)
    p.add_argument("--report")
    p.add_argument("--roc")
    p.add_argument("--confusion")
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="saliency or Grad-CAM overlay")
    p.add_argument("image")
    p.add_argument("--weights", required=True)
    p.add_argument("--method", choices=interpret.METHODS, default="gradcam")
    p.add_argument("--class", dest="class_id", type=int)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--out", required=True)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("params", help="per-layer parameter table")
    p.add_argument("--classes", type=int, choices=(2, 3), default=3)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError, WeightFileError, KeyError, FloatingPointError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
