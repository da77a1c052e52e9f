"""Command-line harness.

Subcommands cover the whole experimental workflow:

    synth       generate a synthetic dataset (manifests + PGM frames)
    train-cnn   train the single-frame regression CNN
    extract     dump frozen-CNN feature timelines per sequence
    train-rnn   train the windowed Elman RNN on extracted features
    eval        score both models and export the prediction timeline
    sweep       run a hyperparameter grid and append a results CSV

Exit codes: 0 success, 1 runtime failure, 2 usage/input error.
"""

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, models, optim, pipeline, synth

DEFAULT_GRIDS = {
    "window": [25, 50, 75, 100, 150],
    "hidden": [50, 100, 150, 200],
    "layers": [[100], [100, 100], [100, 100, 50]],
    "nonlin": ["tanh", "relu"],
    "cnn": ["", "D", "A", "AD"],
}


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _sgd_config(doc, overrides=None, rnn=False):
    fields = dict(doc.get("optim", {}))
    if rnn:
        # the weight decay constant is stated for the CNN only
        fields.setdefault("weight_decay", 0.0)
    for key, val in (overrides or {}).items():
        if val is not None:
            fields[key] = val
    return optim.SgdConfig(**fields)


def _cnn_spec(doc):
    return models.CnnSpec(**doc.get("cnn", {}))


def _rnn_spec(doc, input_dim):
    fields = dict(doc.get("rnn", {}))
    fields["input_dim"] = input_dim
    return models.RnnSpec(**fields)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    doc = _load_config(args.config)
    fields = dict(doc.get("synth", {}))
    for key in ("train_sequences", "dev_sequences", "length", "image_size",
                "noise_sigma", "tau_s", "gap_fraction"):
        val = getattr(args, key)
        if val is not None:
            fields[key] = val
    if args.seed is not None:
        fields["seed"] = args.seed
    cfg = synth.SynthConfig(**fields)
    train_m, dev_m, template = synth.generate(cfg, args.out)
    print(f"wrote {train_m}, {dev_m}, {template}")
    return 0


def cmd_train_cnn(args):
    doc = _load_config(args.config)
    spec = _cnn_spec(doc)
    cfg = _sgd_config(doc, {"seed": args.seed, "epochs": args.epochs})
    dataset = dataio.load_manifest(args.manifest)
    template = dataio.load_template(args.template)
    samples = dataio.labeled_frames(dataset, template)
    dev_samples = None
    if args.dev_manifest:
        dev_samples = dataio.labeled_frames(dataio.load_manifest(args.dev_manifest),
                                            template)
    model, history = optim.train_cnn(
        samples, spec, cfg,
        use_dropout=args.dropout, use_augment=args.augment,
        dev_samples=dev_samples,
    )
    models.save_model(model, args.out_model)
    if args.history:
        optim.history_to_csv(history, args.history)
    if history:
        last = history[-1]
        print(f"epoch {last.epoch}: loss {last.loss:.5f} dev ccc {last.ccc:.4f}")
    return 0


def cmd_extract(args):
    model = models.load_model(args.model)
    if not isinstance(model, models.CnnModel):
        raise ValueError(f"{args.model}: expected a CNN model file")
    dataset = dataio.load_manifest(args.manifest)
    template = dataio.load_template(args.template)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for tl in pipeline.extract_timelines(model, dataset, template):
        dataio.write_features(tl, out / f"{tl.sequence_id}.aff")
    print(f"wrote {len(dataset.sequence_ids)} feature files to {out}")
    return 0


def _read_feature_dir(path):
    files = sorted(Path(path).glob("*.aff"))
    if not files:
        raise ValueError(f"{path}: no .aff feature files found")
    return [dataio.read_features(f) for f in files]


def cmd_train_rnn(args):
    doc = _load_config(args.config)
    timelines = _read_feature_dir(args.features)
    spec = _rnn_spec(doc, timelines[0].features.shape[1])
    cfg = _sgd_config(doc, {"seed": args.seed, "epochs": args.epochs}, rnn=True)
    dev_timelines = _read_feature_dir(args.dev_features) if args.dev_features else None
    model, history = optim.train_rnn(timelines, spec, cfg,
                                     dev_timelines=dev_timelines)
    models.save_model(model, args.out_model)
    if args.history:
        optim.history_to_csv(history, args.history)
    if history:
        last = history[-1]
        print(f"epoch {last.epoch}: loss {last.loss:.5f} dev ccc {last.ccc:.4f}")
    return 0


def cmd_eval(args):
    cnn = models.load_model(args.cnn_model)
    rnn = models.load_model(args.rnn_model)
    if not isinstance(cnn, models.CnnModel) or not isinstance(rnn, models.RnnModel):
        raise ValueError("eval needs --cnn-model (CNN) and --rnn-model (RNN) files")
    dataset = dataio.load_manifest(args.manifest)
    template = dataio.load_template(args.template)
    rows, report_cnn, report_rnn = pipeline.evaluate_models(cnn, rnn, dataset,
                                                            template)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_timeline_csv(rows, out / "timeline.csv")
    report_cnn.to_csv(out / "report_cnn.csv")
    report_cnn.to_json(out / "report_cnn.json")
    report_rnn.to_csv(out / "report_cnn_rnn.csv")
    report_rnn.to_json(out / "report_cnn_rnn.json")
    print(f"cnn     pooled rmse {report_cnn.rmse:.4f} cc {report_cnn.cc:.4f} "
          f"ccc {report_cnn.ccc:.4f}")
    print(f"cnn+rnn pooled rmse {report_rnn.rmse:.4f} cc {report_rnn.cc:.4f} "
          f"ccc {report_rnn.ccc:.4f}")
    return 0


# ---------------------------------------------------------------------------
# sweep


SWEEP_COLUMNS = ["config_hash", "axis", "value", "window", "hidden_sizes",
                 "activation", "cnn_flags", "rmse", "cc", "ccc", "seconds",
                 "status"]


def _config_hash(doc):
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    return hashlib.sha1(blob).hexdigest()[:12]


def _sweep_run_rnn(value, axis, doc, args):
    timelines = _read_feature_dir(args.features)
    dev = _read_feature_dir(args.dev_features)
    fields = dict(doc.get("rnn", {}))
    if axis == "window":
        fields["window"] = value
    elif axis == "hidden":
        fields["hidden_sizes"] = [value]
    elif axis == "layers":
        fields["hidden_sizes"] = value
    elif axis == "nonlin":
        fields["activation"] = value
    fields["input_dim"] = timelines[0].features.shape[1]
    spec = models.RnnSpec(**fields)
    cfg = _sgd_config(doc, {"seed": args.seed}, rnn=True)
    model, _ = optim.train_rnn(timelines, spec, cfg)
    preds, golds = {}, {}
    for tl in dev:
        p = models.predict_timeline(model, tl.features)
        p, _ = dataio.fill_gaps(p, tl.mask.astype(bool))
        preds[tl.sequence_id] = p
        golds[tl.sequence_id] = tl.labels
    from . import metrics
    report = metrics.evaluate_sequences(preds, golds)
    return spec, report


def _sweep_run_cnn(flags, doc, args):
    dataset = dataio.load_manifest(args.manifest)
    template = dataio.load_template(args.template)
    samples = dataio.labeled_frames(dataset, template)
    dev_dataset = dataio.load_manifest(args.dev_manifest)
    spec = _cnn_spec(doc)
    cfg = _sgd_config(doc, {"seed": args.seed})
    model, _ = optim.train_cnn(samples, spec, cfg,
                               use_dropout="D" in flags, use_augment="A" in flags)
    preds, golds = {}, {}
    for seq_id in dev_dataset.sequence_ids:
        records = dev_dataset.sequences[seq_id]
        preds[seq_id] = pipeline.predict_cnn_timeline(model, records, template)
        golds[seq_id] = np.array([r.valence for r in records])
    from . import metrics
    report = metrics.evaluate_sequences(preds, golds)
    return report


def cmd_sweep(args):
    doc = _load_config(args.config)
    if args.values is not None:
        values = json.loads(args.values)
    else:
        values = DEFAULT_GRIDS[args.axis]
    out_path = Path(args.out)
    done = set()
    if out_path.exists():
        import csv as _csv
        with open(out_path, newline="") as fh:
            for row in _csv.DictReader(fh):
                if row.get("status") == "OK":
                    done.add(row["config_hash"])
    write_header = not out_path.exists()
    import csv as _csv
    with open(out_path, "a", newline="") as fh:
        writer = _csv.writer(fh)
        if write_header:
            writer.writerow(SWEEP_COLUMNS)
        for value in values:
            run_doc = {"axis": args.axis, "value": value, "base": doc,
                       "seed": args.seed}
            chash = _config_hash(run_doc)
            if chash in done:
                print(f"skip {args.axis}={value} ({chash}: already done)")
                continue
            t0 = time.perf_counter()
            try:
                if args.axis == "cnn":
                    report = _sweep_run_cnn(value, doc, args)
                    window = hidden = ""
                    activation = doc.get("cnn", {}).get("activation", "relu")
                    flags = value
                else:
                    spec, report = _sweep_run_rnn(value, args.axis, doc, args)
                    window = spec.window
                    hidden = json.dumps(list(spec.hidden_sizes))
                    activation = spec.activation
                    flags = ""
                row = [chash, args.axis, json.dumps(value), window, hidden,
                       activation, flags, repr(report.rmse), repr(report.cc),
                       repr(report.ccc),
                       repr(time.perf_counter() - t0), "OK"]
            except Exception as exc:  # keep sweeping past single failures
                row = [chash, args.axis, json.dumps(value), "", "", "", "",
                       "", "", "", repr(time.perf_counter() - t0),
                       f"FAILED: {exc}"]
            writer.writerow(row)
            fh.flush()
            print(f"{args.axis}={value}: {row[-1]}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="affectnn",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--train-sequences", type=int, dest="train_sequences")
    p.add_argument("--dev-sequences", type=int, dest="dev_sequences")
    p.add_argument("--length", type=int)
    p.add_argument("--image-size", type=int, dest="image_size")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--tau-s", type=float, dest="tau_s")
    p.add_argument("--gap-fraction", type=float, dest="gap_fraction")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-cnn", help="train the single-frame CNN")
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--dev-manifest", default=None)
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--dropout", action="store_true")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_cnn)

    p = sub.add_parser("extract", help="extract frozen-CNN features")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-rnn", help="train the windowed RNN")
    p.add_argument("--features", required=True)
    p.add_argument("--dev-features", default=None)
    p.add_argument("--out-model", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_rnn)

    p = sub.add_parser("eval", help="evaluate both models")
    p.add_argument("--cnn-model", required=True)
    p.add_argument("--rnn-model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a hyperparameter grid")
    p.add_argument("--axis", required=True, choices=sorted(DEFAULT_GRIDS))
    p.add_argument("--values", default=None,
                   help="JSON list overriding the default grid")
    p.add_argument("--out", required=True, help="results CSV (appended)")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features", default=None)
    p.add_argument("--dev-features", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--dev-manifest", default=None)
    p.add_argument("--template", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
