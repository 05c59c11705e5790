"""Command-line orchestration of the full experimental protocol.

Subcommands cover the pipeline end to end: synthesize, preprocess,
build-dataset, train, evaluate, derive, perturb.  Every command is
reproducible from (config, seed): reruns give byte-identical metric
files.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .baselines import all_zeros_forecast, last_scene_forecast
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    SplitSpec,
    build_sequences,
    chronological_split,
    filter_volcano,
    load_sequences,
    save_sequences,
    select_window_length,
)
from .evaluation import (
    cumulative_histogram,
    derive_series,
    histogram_match,
    perturb_time_experiment,
    rmse,
)
from .model import ForecastModel, ModelSpec
from .pipeline import ScalerParams, Scene, UnusableSceneError, preprocess_volcano
from .sceneio import load_volcano
from .synthetic import synthesize_corpus, write_corpus
from .training import (
    DEFAULT_WEIGHT_DECAY_SWEEP,
    SequenceStore,
    regularization_sweep,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

SPLIT_MODES = ("70-15-15", "85-15")


class DataError(Exception):
    """Bad or missing input data (exit code 2)."""


class NumericalError(Exception):
    """Non-finite results or training divergence (exit code 3)."""


# ---------------------------------------------------------------------------
# processed-store and dataset-store serialization

def _save_processed(out_dir: Path, volcano_id: str, scenes: list[Scene]):
    np.savez_compressed(
        out_dir / f"{volcano_id}.processed.npz",
        grids=np.stack([s.grid for s in scenes]),
        fill_ages=np.stack([s.fill_age for s in scenes]),
        backgrounds=np.array([s.background for s in scenes]),
        dates=np.array([s.date.isoformat() for s in scenes]),
        volcano_id=np.array(volcano_id),
    )


def _load_processed(path: Path) -> list[Scene]:
    with np.load(path, allow_pickle=False) as z:
        vid = str(z["volcano_id"])
        return [Scene(grid=z["grids"][i],
                      date=dt.date.fromisoformat(str(d)),
                      fill_age=z["fill_ages"][i],
                      background=float(z["backgrounds"][i]),
                      volcano_id=vid)
                for i, d in enumerate(z["dates"])]


def _load_dataset(dataset_dir) -> tuple[dict, dict]:
    dataset_dir = Path(dataset_dir)
    meta_path = dataset_dir / "dataset.json"
    if not meta_path.exists():
        raise DataError(f"{meta_path} not found; run build-dataset first")
    meta = json.loads(meta_path.read_text())
    splits = {}
    for name in ("train", "validation", "test"):
        path = dataset_dir / f"{name}.npz"
        splits[name] = load_sequences(path) if path.exists() else []
    return meta, splits


def _scaler_from_meta(meta: dict) -> ScalerParams:
    return ScalerParams(meta["scaler_min"], meta["scaler_max"])


def _model_from_checkpoint(path) -> tuple[ForecastModel, dict]:
    try:
        spec_dict, params, extra = load_checkpoint(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    model = ForecastModel(ModelSpec.from_dict(spec_dict), np.random.default_rng(0))
    try:
        model.load_parameters(params)
    except (KeyError, ValueError) as e:
        raise DataError(f"checkpoint {path} does not match its spec: {e}") from e
    return model, extra


def _split_sequences(splits: dict, name: str):
    if name not in splits:
        raise DataError(f"unknown split {name!r}")
    if not splits[name]:
        raise DataError(f"split {name!r} is empty")
    return splits[name]


def _group_by_volcano(sequences):
    groups: dict[str, list] = {}
    for s in sequences:
        groups.setdefault(s.volcano_id, []).append(s)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# commands

def cmd_synthesize(args) -> int:
    out = Path(args.out)
    corpus = synthesize_corpus(args.seed, args.volcanoes, args.scenes, args.size)
    paths = write_corpus(out, corpus)
    print(f"wrote {len(paths)} volcano manifests to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for manifest in args.manifest:
        try:
            raw = load_volcano(manifest)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot load {manifest}: {e}") from e
        if not raw:
            raise DataError(f"{manifest}: no scenes")
        scenes, rep = preprocess_volcano(raw)
        if not scenes:
            raise DataError(f"{manifest}: every scene was unusable")
        vid = scenes[0].volcano_id
        _save_processed(out, vid, scenes)
        reports[vid] = rep
        print(f"{vid}: {len(scenes)} scenes processed, "
              f"{len(rep['excluded'])} excluded")
    report.write_summary_json(out / "preprocess_report.json", reports)
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    processed = sorted(Path(args.processed).glob("*.processed.npz"))
    if not processed:
        raise DataError(f"no processed scene stores under {args.processed}")
    scenes = []
    for path in processed:
        scenes.extend(_load_processed(path))

    spec = SplitSpec() if args.split_mode == "70-15-15" else SplitSpec.merged_train()
    splits = chronological_split(scenes, spec)
    if not splits["train"]:
        raise DataError("training split is empty")
    scaler = ScalerParams.fit(splits["train"])

    if args.window is not None:
        window = args.window
    else:
        by_volcano = _group_by_volcano(splits["train"])
        series = [[s.grid.mean() for s in group] for group in by_volcano.values()]
        try:
            window = select_window_length(series, mode="pooled")
        except ValueError as e:
            raise DataError(f"window selection failed: {e}") from e

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name in ("train", "validation", "test"):
        seqs = build_sequences(splits[name], window, scaler=scaler)
        counts[name] = len(seqs)
        if seqs:
            save_sequences(out / f"{name}.npz", seqs)
    if counts["train"] == 0:
        raise DataError(f"no training sequences at window length {window}")
    report.write_summary_json(out / "dataset.json", {
        "window_length": window,
        "split_mode": args.split_mode,
        "scaler_min": scaler.x_min,
        "scaler_max": scaler.x_max,
        "sequence_counts": counts,
        "volcano_ids": sorted({s.volcano_id for s in scenes}),
    })
    print(f"window={window} sequences={counts}")
    return EXIT_OK


def _model_spec_from_args(args, window: int) -> ModelSpec:
    hidden = [int(v) for v in str(args.hidden_dims).split(",")]
    return ModelSpec(cell_kind=args.model, hidden_dims=hidden,
                     kernel_size=args.kernel_size, unet=args.unet,
                     window_length=window)


def cmd_train(args) -> int:
    meta, splits = _load_dataset(args.dataset)
    window = args.window if args.window is not None else meta["window_length"]
    if window != meta["window_length"]:
        raise DataError(
            f"dataset was built with window {meta['window_length']}, "
            f"requested {window}; rebuild the dataset")
    scaler = _scaler_from_meta(meta)

    if args.volcano != "all":
        try:
            splits = {name: (filter_volcano(seqs, args.volcano) if seqs else [])
                      for name, seqs in splits.items()}
        except ValueError as e:
            raise DataError(str(e)) from e
    store = SequenceStore(splits)
    if not splits["train"]:
        raise DataError("training split is empty")
    use_validation = bool(splits["validation"])

    spec = _model_spec_from_args(args, window)
    strengths = ([args.weight_decay] if args.weight_decay is not None
                 else list(DEFAULT_WEIGHT_DECAY_SWEEP))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if use_validation:
            best, table = regularization_sweep(
                spec, store, scaler=scaler, strengths=strengths,
                epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
        else:
            # merged-train mode: no validation split, single strength only
            if len(strengths) > 1:
                raise DataError(
                    "no validation split for a sweep; pass --weight-decay")
            from dataclasses import replace as dc_replace
            from .training import train_model
            best = train_model(dc_replace(spec, weight_decay=strengths[0]),
                               store, epochs=args.epochs,
                               batch_size=args.batch_size, seed=args.seed)
            if best.diverged:
                raise NumericalError("training diverged")
            table = [{"weight_decay": strengths[0], "diverged": False,
                      "final_train_loss": best.epoch_losses[-1],
                      "validation_rmse": float("nan")}]
    except RuntimeError as e:
        raise NumericalError(str(e)) from e

    save_checkpoint(out / "model.ckpt", best.model.spec.to_dict(),
                    [(name, p.data) for name, p in best.model.named_parameters()],
                    extra={"training_filter": args.volcano,
                           "seed": args.seed,
                           "epochs": args.epochs,
                           "split_mode": meta["split_mode"]})
    report.write_sweep_table(out / "sweep.csv", table)
    report.write_delimited(out / "training_loss.csv", ["epoch", "loss"],
                           [[i + 1, loss]
                            for i, loss in enumerate(best.epoch_losses)])
    report.plot_training_curves(
        out / "training_loss.png",
        {f"wd={best.model.spec.weight_decay:g}": best.epoch_losses})
    best_wd = best.model.spec.weight_decay
    print(f"best weight_decay={best_wd:g}; checkpoint at {out / 'model.ckpt'}")
    return EXIT_OK


def _per_volcano_rmse(forecast_fn, sequences, scaler) -> dict[str, float]:
    out = {}
    for vid, group in _group_by_volcano(sequences).items():
        preds = np.stack([scaler.inverse(forecast_fn(s)) for s in group])
        targets = np.stack([scaler.inverse(s.target) for s in group])
        out[vid] = rmse(preds, targets)
    return out


def cmd_evaluate(args) -> int:
    meta, splits = _load_dataset(args.dataset)
    scaler = _scaler_from_meta(meta)
    sequences = _split_sequences(splits, args.split)
    volcano_ids = sorted({s.volcano_id for s in sequences})

    rows = []
    for path in args.checkpoint:
        model, extra = _model_from_checkpoint(path)
        if model.spec.window_length != meta["window_length"]:
            raise DataError(
                f"checkpoint {path} expects window {model.spec.window_length}, "
                f"dataset has {meta['window_length']}")
        rows.append({
            "training_filter": extra.get("training_filter", "all"),
            "per_volcano": _per_volcano_rmse(model.forecast, sequences, scaler),
        })
    if args.baselines or not args.checkpoint:
        rows.append({"training_filter": "baseline:last_scene",
                     "per_volcano": _per_volcano_rmse(
                         lambda s: last_scene_forecast(list(s.inputs)),
                         sequences, scaler)})
        rows.append({"training_filter": "baseline:all_zeros",
                     "per_volcano": _per_volcano_rmse(
                         # zero degC above background, in scaled units
                         lambda s: scaler.scale(all_zeros_forecast(s.target.shape)),
                         sequences, scaler)})
    for row in rows:
        if not all(np.isfinite(v) for v in row["per_volcano"].values()):
            raise NumericalError(
                f"non-finite RMSE for {row['training_filter']!r}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_rmse_table(out / "rmse_table.csv", rows, volcano_ids)
    report.write_summary_json(out / "evaluate_summary.json", {
        "split": args.split,
        "volcano_ids": volcano_ids,
        "rows": [{"training_filter": r["training_filter"],
                  "per_volcano": r["per_volcano"]} for r in rows],
    })
    print(f"rmse table ({len(rows)} rows x {len(volcano_ids)} volcanoes) "
          f"at {out / 'rmse_table.csv'}")
    return EXIT_OK


def cmd_derive(args) -> int:
    meta, splits = _load_dataset(args.dataset)
    scaler = _scaler_from_meta(meta)
    sequences = _split_sequences(splits, args.split)
    model, _ = _model_from_checkpoint(args.checkpoint)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    histograms = {}
    for vid, group in _group_by_volcano(sequences).items():
        dates = [s.dates[-1] for s in group]
        preds = [scaler.inverse(model.forecast(s)) for s in group]
        targets = [scaler.inverse(s.target) for s in group]
        if not all(np.isfinite(p).all() for p in preds):
            raise NumericalError(f"non-finite forecast for {vid}")
        observed_pool = np.concatenate([t.ravel() for t in targets])
        matched = [histogram_match(p, observed_pool) for p in preds]

        report.write_derived_series(out, vid, derive_series(targets, dates),
                                    suffix="_observed")
        report.write_derived_series(out, vid, derive_series(preds, dates),
                                    suffix="_forecast")
        paths = report.write_derived_series(
            out, vid, derive_series(matched, dates), suffix="_forecast_matched")
        report.plot_derived_series(out / f"{vid}_derived.png", vid,
                                   derive_series(matched, dates))
        histograms[f"{vid} observed"] = cumulative_histogram(observed_pool)
        histograms[f"{vid} forecast"] = cumulative_histogram(
            np.concatenate([p.ravel() for p in preds]))
        report.write_cumulative_histogram(
            out / f"{vid}_cumulative_observed.csv", histograms[f"{vid} observed"])
        report.write_cumulative_histogram(
            out / f"{vid}_cumulative_forecast.csv", histograms[f"{vid} forecast"])
        summary[vid] = {"n_scenes": len(group),
                        "files": [p.name for p in paths]}
    report.plot_cumulative_histogram(out / "cumulative_histograms.png", histograms)
    report.write_summary_json(out / "derive_summary.json",
                              {"split": args.split, "volcanoes": summary})
    print(f"derived series for {len(summary)} volcanoes at {out}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    meta, splits = _load_dataset(args.dataset)
    scaler = _scaler_from_meta(meta)
    sequences = _split_sequences(splits, args.split)
    model, _ = _model_from_checkpoint(args.checkpoint)
    try:
        results = perturb_time_experiment(model, sequences, scaler=scaler)
    except ValueError as e:
        raise DataError(str(e)) from e
    if not all(np.isfinite(r.rmse_vs_original) for r in results):
        raise NumericalError("non-finite perturbation metrics")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_perturbation_table(out / "perturbation.csv", results)
    report.plot_perturbation_table(out / "perturbation.png", results)
    report.write_summary_json(out / "perturb_summary.json", {
        "split": args.split,
        "rows": [{"adjustment": r.label, "mean_diff_degc": r.mean_diff,
                  "rmse_vs_original_degc": r.rmse_vs_original}
                 for r in results],
    })
    print(f"perturbation table at {out / 'perturbation.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling

def _apply_config(args: argparse.Namespace, argv: list[str]):
    """Overlay config-file values under explicit flags: flags win."""
    if not getattr(args, "config", None):
        return
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read config {args.config}: {e}") from e
    if not isinstance(config, dict):
        raise DataError(f"config {args.config} must be a JSON object")
    explicit = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in config.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            continue
        if f"--{key.replace('_', '-')}" in explicit:
            continue
        setattr(args, attr, value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vulcast",
        description="Forecasting for irregularly sampled thermal scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synthesize", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--volcanoes", type=int, default=3)
    p.add_argument("--scenes", type=int, default=60)
    p.add_argument("--size", type=int, default=24)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("preprocess", help="run the scene pipeline")
    common(p)
    p.add_argument("--manifest", action="append", required=True,
                   help="volcano manifest path (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("build-dataset", help="build split sequence stores")
    common(p)
    p.add_argument("--processed", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=None,
                   help="override the autocorrelation-selected window length")
    p.add_argument("--split-mode", choices=SPLIT_MODES, default="70-15-15")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="train with a regularization sweep")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", default="convtimelstm")
    p.add_argument("--hidden-dims", default="8,8")
    p.add_argument("--kernel-size", type=int, default=3)
    p.add_argument("--unet", action="store_true")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--weight-decay", type=float, default=None,
                   help="single strength instead of the default sweep")
    p.add_argument("--volcano", default="all",
                   help="training filter: 'all' or one volcano id")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-volcano RMSE table")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", action="append", default=[],
                   help="checkpoint path (repeatable; one table row each)")
    p.add_argument("--split", default="validation")
    p.add_argument("--baselines", action="store_true",
                   help="append last-scene and all-zeros baseline rows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("derive", help="derived monitoring time series")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("perturb", help="elapsed-time sensitivity experiment")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        _apply_config(args, argv)
        if getattr(args, "epochs", 1) < 1:
            raise DataError("epochs must be >= 1")
        return args.func(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except UnusableSceneError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
