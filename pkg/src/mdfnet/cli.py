"""Command-line entry point: ``mdfnet {synth,encode,train,eval,explain,gradcheck}``.

Exit codes: 0 success, 1 contract violation (bad input, bad arguments),
2 internal failure.
"""
import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import data, encoder, fcn, gradcheck, netpbm, pipeline

OUTPUT_ENV = "MDFNET_OUTPUT_DIR"
log = logging.getLogger("mdfnet")

class UsageError(ValueError):
    pass

def _triple(text):
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three integers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three integers, got {text!r}")
    return vals

def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV)
    if not out:
        raise UsageError(f"--out not given and ${OUTPUT_ENV} is unset")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

def _fmt(v):
    return f"{v:.17g}"

# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    ds = data.synthesize_twopatterns(args.classes, args.count, args.length, args.sigma, args.seed)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, split in (("TRAIN", ds.train), ("TEST", ds.test)):
        paths[name] = f"{prefix}_{name}.tsv"
        data.write_ucr_file(paths[name], split)
    print(f"wrote {paths['TRAIN']} and {paths['TEST']}")

def cmd_encode(args):
    split = data.load_ucr_file(args.input)
    out = _out_dir(args)
    values = split.values
    if args.bounds:
        values = encoder.minmax_normalize(values, *args.bounds)
    images = encoder.encode_batch(values, args.n)
    rec = out / "mdf.bin"
    data.write_mdf_records(rec, images, split.labels, args.n, split.length)
    if args.channel_images:
        sidecar = {}
        for k, img in enumerate(images):
            for i, channel in enumerate(img, start=1):
                name = f"series{k:04d}_ch{i}.pgm"
                sidecar[name] = netpbm.write_pgm(out / name, channel)
        netpbm.write_sidecar(out / "images.json", sidecar)
    print(f"encoded {len(images)} series to {rec} shape {images.shape[1:]}")

def _train_config(args):
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    flags = {
        "n": args.n, "filters": args.filters, "strides": args.strides,
        "epochs": args.epochs, "cv_epochs": args.cv_epochs,
        "batch_size": args.batch, "seed": args.seed, "lr": args.lr,
    }
    if args.full_scale:
        flags["filters"] = fcn.FULL_FILTERS
    merged = {**base, **{k: v for k, v in flags.items() if v is not None}}
    cv = bool(merged.pop("cv", False)) or args.cv
    if cv and args.strides:
        raise UsageError("--strides and --cv are mutually exclusive")
    if cv:
        merged["strides"] = None
    try:
        cfg = fcn.TrainConfig.from_dict(merged)
    except TypeError as exc:
        raise UsageError(f"bad config: {exc}") from None
    if cfg.strides is None:
        cv = True
    return cfg, cv

def cmd_train(args):
    cfg, cv = _train_config(args)
    split = data.load_ucr_file(args.train)
    out = _out_dir(args)
    art = pipeline.fit_split(split, cfg, cv=cv)
    model_path = out / "model.npz"
    meta = art.save(model_path)
    _write_json(out / "model.json", {**meta, "n": cfg.n, "train_file": str(args.train)})
    with open(out / "loss_history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(art.loss_history, start=1):
            w.writerow([epoch, _fmt(loss)])
    metrics = {
        "best_epoch": art.best_epoch,
        "best_train_loss": float(art.loss_history[art.best_epoch - 1]) if art.loss_history else None,
        "strides": list(art.strides),
        "cv_errors": art.cv_errors,
    }
    _write_json(out / "manifest.json", {
        "config": {**cfg.to_dict(), "cv": cv},
        "dataset_fingerprint": data.fingerprint(args.train),
        "artifacts": {"model": "model.npz", "sidecar": "model.json",
                      "loss_history": "loss_history.csv"},
        "metrics": metrics,
    })
    print(f"strides {','.join(map(str, art.strides))} best_epoch {art.best_epoch} "
          f"train_loss {_fmt(metrics['best_train_loss']) if art.loss_history else 'n/a'}")

def _load_model(model_dir):
    path = Path(model_dir) / "model.npz"
    if not path.exists():
        raise UsageError(f"no model.npz in {model_dir}")
    return fcn.TrainedArtifact.load(path)

def cmd_eval(args):
    art = _load_model(args.model)
    split = data.load_ucr_file(args.test, label_table=art.label_table)
    _check_length(art, split)
    err = pipeline.evaluate(art, split)
    out = Path(args.out) if args.out else Path(args.model) / "metrics.json"
    _write_json(out, {"error_rate": err, "n_test": len(split),
                      "test_fingerprint": data.fingerprint(args.test)})
    print(f"error_rate {err:.6f}")

def _check_length(art, split):
    if art.series_length is not None and split.length != art.series_length:
        raise UsageError(f"series length {split.length} differs from training length "
                         f"{art.series_length}")

def cmd_explain(args):
    art = _load_model(args.model)
    split = data.load_ucr_file(args.input, label_table=art.label_table)
    C = art.model.n_classes
    if not 1 <= args.class_index <= C:
        raise UsageError(f"--class-index must be in [1, {C}]")
    _check_length(art, split)
    out = _out_dir(args)
    sidecar = {"score": args.score, "class_index": args.class_index, "tie_tolerance": args.tie_tol,
               "images": {}}
    count = len(split) if args.limit is None else min(args.limit, len(split))
    for k in range(count):
        ex = pipeline.explain_series(art, split.values[k], args.class_index, args.score, args.tie_tol)
        stem = f"series{k:04d}"
        for kind, heat in (("coarse", ex.coarse), ("upsampled", ex.upsampled),
                           ("symmetrized", ex.symmetrized)):
            sidecar["images"][f"{stem}_{kind}.pgm"] = netpbm.write_pgm(out / f"{stem}_{kind}.pgm", heat)
        sidecar["images"][f"{stem}_symmetrized.ppm"] = netpbm.write_ppm(
            out / f"{stem}_symmetrized.ppm", ex.symmetrized)
        write_significance_csv(out / f"{stem}_significance.csv", ex.significance)
    netpbm.write_sidecar(out / "heatmaps.json", sidecar)
    print(f"explained {count} series for class {args.class_index} into {out}")

def write_significance_csv(path, sig):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pattern", "count", "score", "rank"])
        for j, code in enumerate(sig.codes):
            rank = sig.rank_of(j)
            score = _fmt(sig.scores[j]) if sig.counts[j] else ""
            w.writerow([code, int(sig.counts[j]), score, "" if rank is None else rank])

def cmd_gradcheck(args):
    results = gradcheck.run(range(args.seed, args.seed + args.count))
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status} {r.name:<22} seed={r.seed:<3} shape={r.shape} rel_err={r.rel_error:.3e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0

# -- parser --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mdfnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic plateau dataset (PREFIX_TRAIN/TEST.tsv)")
    s.add_argument("--classes", type=int, default=4, choices=(2, 4))
    s.add_argument("--count", type=int, default=50, help="series per class per split")
    s.add_argument("--length", type=int, default=64)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output path prefix")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("encode", help="encode a UCR file into MDF records")
    s.add_argument("--input", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out")
    s.add_argument("--channel-images", action="store_true")
    s.add_argument("--bounds", type=lambda t: tuple(float(v) for v in t.split(",")),
                   help="min,max for normalization before encoding")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", help="train an MDF-FCN classifier")
    s.add_argument("--train", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--filters", type=_triple)
    s.add_argument("--full-scale", action="store_true", help="filters 128,256,128")
    s.add_argument("--strides", type=_triple)
    s.add_argument("--cv", action="store_true", help="4-fold stride search")
    s.add_argument("--epochs", type=int)
    s.add_argument("--cv-epochs", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON file with defaults for these flags")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="test error rate of a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", help="metrics file (default MODEL/metrics.json)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("explain", help="Grad-CAM heat maps and pattern significance")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--class-index", type=int, required=True, help="1-based class label")
    s.add_argument("--score", choices=("logit", "softmax"), default="logit")
    s.add_argument("--tie-tol", type=float, default=0.0)
    s.add_argument("--limit", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p

def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as exc:
        print(f"mdfnet {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"mdfnet {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 2
