"""Command-line interface.

Subcommands: features, train, detect, baseline, bench. Configuration comes
from ``DEFAULTS`` below, overridden by a JSON config file (``--config``),
overridden by explicit flags. Every command that writes artifacts echoes its
effective configuration into the output directory.

Exit codes: 0 success, 2 input/config error, 3 numerical failure, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import kmeans_anomalies, kmeans_fit_best, skewness_anomalies
from .bench import (
    SyntheticSpec,
    build_scenario,
    compare_methods,
    default_scenario,
    export_report,
    format_cell,
    write_csv,
)
from .contrastive import (
    EncoderModel,
    PairPolicy,
    TrainConfig,
    detect_anomalies,
    instance_result,
    train,
)
from .errors import InputError, NumericalError
from .timeseries import load_csv, make_windows, rows_covered, select_features, zscore_normalize

# Single source of truth for option defaults: help text and the merge below
# both read from here, so the documented and effective defaults cannot
# diverge.
DEFAULTS: dict[str, object] = {
    "target": "Energy",
    "top_k": 5,
    "feature": "Energy",
    "threshold": 0.5,
    "learning_rate": 1e-3,
    "margin": 1.0,
    "epochs": 50,
    "batch_size": 64,
    "seed": 0,
    "window_length": 24,
    "stride": 1,
    "embedding_size": 16,
    "hidden_size": 16,
    "positive_max_lag": 1,
    "negative_min_gap": 168,
    "negatives_per_positive": 1,
    "allow_empty_negatives": False,
    "method": "kmeans",
    "kmeans_k": 3,
    "kmeans_max_iter": 100,
    "kmeans_quantile": 0.95,
    "kmeans_restarts": 1,
    "skew_window": 24,
    "skew_cutoff": 2.0,
    "seeds": "0,1,2,3,4",
    "methods": "contrastive,kmeans,skewness",
    "features": "",
}

_TRAIN_KEYS = (
    "learning_rate", "margin", "epochs", "batch_size", "seed",
    "window_length", "stride", "embedding_size", "hidden_size",
)
_POLICY_KEYS = (
    "positive_max_lag", "negative_min_gap", "negatives_per_positive",
    "allow_empty_negatives",
)
_BASELINE_KEYS = (
    "kmeans_k", "kmeans_max_iter", "kmeans_quantile", "kmeans_restarts",
    "skew_window", "skew_cutoff",
)


def _add(parser: argparse.ArgumentParser, name: str, kind=str, help: str = "") -> None:
    flag = "--" + name.replace("_", "-")
    default = DEFAULTS[name]
    if isinstance(default, bool):
        parser.add_argument(
            flag, dest=name, action=argparse.BooleanOptionalAction, default=None,
            help=f"{help} (default: {default})",
        )
    else:
        parser.add_argument(
            flag, dest=name, type=kind, default=None,
            help=f"{help} (default: {default})",
        )


def _add_train_policy_flags(p: argparse.ArgumentParser) -> None:
    _add(p, "learning_rate", float, "Adam learning rate")
    _add(p, "margin", float, "contrastive margin")
    _add(p, "epochs", int, "training epochs")
    _add(p, "batch_size", int, "pairs per optimizer step")
    _add(p, "seed", int, "training seed")
    _add(p, "window_length", int, "instance window length")
    _add(p, "stride", int, "window stride")
    _add(p, "embedding_size", int, "embedding dimensionality")
    _add(p, "hidden_size", int, "LSTM hidden units")
    _add(p, "positive_max_lag", int, "max start gap labeled similar")
    _add(p, "negative_min_gap", int, "min start gap for dissimilar pairs")
    _add(p, "negatives_per_positive", int, "dissimilar pairs per similar pair")
    _add(p, "allow_empty_negatives", help="accept a positives-only pair set")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wattlens",
        description="Contrastive-learning anomaly detection for energy time series, "
        "with k-means and skewness baselines.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="rank features by |Pearson| against a target")
    p.add_argument("input", help="input CSV")
    p.add_argument("--config", help="JSON config file")
    _add(p, "target", str, "target feature")
    _add(p, "top_k", int, "how many features to report")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the contrastive encoder on one feature")
    p.add_argument("input", help="input CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    _add(p, "feature", str, "feature to train on")
    _add_train_policy_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="flag pairs/instances with a trained encoder")
    p.add_argument("input", help="input CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--model", required=True, help="encoder checkpoint path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--feature", default=None,
                   help="feature to score (default: the model's training feature)")
    _add(p, "threshold", float, "pair distance threshold")
    _add(p, "positive_max_lag", int, "max start gap labeled similar")
    _add(p, "negative_min_gap", int, "min start gap for dissimilar pairs")
    _add(p, "negatives_per_positive", int, "dissimilar pairs per similar pair")
    _add(p, "allow_empty_negatives", help="accept a positives-only pair set")
    _add(p, "seed", int, "pair sampling seed")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("baseline", help="run the k-means or skewness baseline")
    p.add_argument("input", help="input CSV")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    _add(p, "method", str, "kmeans or skewness")
    _add(p, "feature", str, "feature to score")
    _add(p, "window_length", int, "instance window length")
    _add(p, "stride", int, "window stride (kmeans)")
    _add(p, "seed", int, "k-means seed")
    _add(p, "kmeans_k", int, "number of clusters")
    _add(p, "kmeans_max_iter", int, "Lloyd iteration cap")
    _add(p, "kmeans_quantile", float, "distance quantile above which to flag")
    _add(p, "kmeans_restarts", int, "seeded restarts, best inertia wins")
    _add(p, "skew_window", int, "rolling skewness window")
    _add(p, "skew_cutoff", float, "|skewness| cutoff")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("bench", help="multi-seed method comparison report")
    p.add_argument("--input", default=None, help="input CSV (default: built-in synthetic scenario)")
    p.add_argument("--scenario", default=None, help="synthetic scenario JSON file")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="report directory")
    _add(p, "features", str, "comma-separated features (default: all)")
    _add(p, "methods", str, "comma-separated methods")
    _add(p, "seeds", str, "comma-separated seeds")
    _add(p, "threshold", float, "pair distance threshold")
    _add_train_policy_flags(p)
    _add(p, "kmeans_k", int, "number of clusters")
    _add(p, "kmeans_max_iter", int, "Lloyd iteration cap")
    _add(p, "kmeans_quantile", float, "distance quantile above which to flag")
    _add(p, "kmeans_restarts", int, "seeded restarts, best inertia wins")
    _add(p, "skew_window", int, "rolling skewness window")
    _add(p, "skew_cutoff", float, "|skewness| cutoff")
    p.set_defaults(func=cmd_bench)

    return parser


def _effective(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    """Merge defaults, config file, and explicit flags (flags win)."""
    cfg = {k: DEFAULTS[k] for k in keys}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{config_path}: invalid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError(f"{config_path}: config must be a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise InputError(f"{config_path}: unknown config keys {sorted(unknown)}")
        for k in keys:
            if k in loaded:
                cfg[k] = loaded[k]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        margin=float(cfg["margin"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        seed=int(cfg["seed"]),
        window_length=int(cfg["window_length"]),
        stride=int(cfg["stride"]),
        embedding_size=int(cfg["embedding_size"]),
        hidden_size=int(cfg["hidden_size"]),
    )


def _pair_policy(cfg: dict, seed: int) -> PairPolicy:
    return PairPolicy(
        positive_max_lag=int(cfg["positive_max_lag"]),
        negative_min_gap=int(cfg["negative_min_gap"]),
        negatives_per_positive=int(cfg["negatives_per_positive"]),
        seed=seed,
        allow_empty_negatives=bool(cfg["allow_empty_negatives"]),
    )


def _echo_config(out: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    payload = {"command": command, **cfg}
    if extra:
        payload.update(extra)
    (out / "config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _int_list(text: str) -> tuple[int, ...]:
    items = tuple(int(x) for x in str(text).split(",") if x.strip() != "")
    if not items:
        raise InputError(f"expected a comma-separated integer list, got {text!r}")
    return items


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in str(text).split(",") if x.strip())


def cmd_features(args: argparse.Namespace) -> int:
    cfg = _effective(args, ("target", "top_k"))
    matrix = load_csv(args.input)
    ranking = select_features(matrix, str(cfg["target"]), int(cfg["top_k"]))
    print(f"|Pearson| against {ranking.target!r}:")
    for rank, (name, score) in enumerate(ranking, 1):
        print(f"{rank:3d}  {name:<24s} {score:.6f}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _effective(args, ("feature", *_TRAIN_KEYS, *_POLICY_KEYS))
    matrix = load_csv(args.input)
    config = _train_config(cfg)
    policy = _pair_policy(cfg, config.seed)
    model, history = train(matrix, str(cfg["feature"]), config, policy)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "encoder.json")
    write_csv(out / "losses.csv", ["epoch", "loss"],
              [[epoch, f"{loss:.12g}"] for epoch, loss in enumerate(history)])
    _echo_config(out, "train", cfg, {"input": args.input})
    print(f"trained {cfg['feature']!r}: first-epoch loss {history[0]:.6f}, "
          f"final {history[-1]:.6f}; checkpoint at {out / 'encoder.json'}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _effective(args, ("threshold", "seed", *_POLICY_KEYS))
    matrix = load_csv(args.input)
    model = EncoderModel.load(args.model)
    feature = args.feature if args.feature is not None else model.feature
    policy = _pair_policy(cfg, int(cfg["seed"]))
    threshold = float(cfg["threshold"])

    pair_res = detect_anomalies(feature, model, matrix, threshold, policy)
    n_windows = (matrix.row_count - model.config.window_length) // model.config.stride + 1
    inst = instance_result(pair_res, n_windows)

    rows = []
    for i, j, score, flag in zip(
        pair_res.index_i, pair_res.index_j, pair_res.scores, pair_res.flags
    ):
        rows.append(["pair", i, j, f"{score:.12g}", int(flag)])
    for i, score, flag in zip(inst.index_i, inst.scores, inst.flags):
        rows.append(["instance", i, "", f"{score:.12g}", int(flag)])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "detections.csv", ["unit", "index_i", "index_j", "score", "flagged"], rows)
    _echo_config(out, "detect", {**cfg, "feature": feature}, {"input": args.input, "model": args.model})
    print(f"{pair_res.flag_count} of {len(pair_res.scores)} pairs above {threshold:g}; "
          f"{inst.flag_count} of {n_windows} instances flagged")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg = _effective(
        args, ("method", "feature", "window_length", "stride", "seed", *_BASELINE_KEYS)
    )
    method = str(cfg["method"])
    feature = str(cfg["feature"])
    matrix = load_csv(args.input)
    n_rows = matrix.row_count

    if method == "kmeans":
        normalized, _ = zscore_normalize(matrix)
        windows = make_windows(normalized, feature, int(cfg["window_length"]), int(cfg["stride"]))
        points = np.stack([w.values for w in windows])
        model = kmeans_fit_best(
            points, int(cfg["kmeans_k"]), max_iter=int(cfg["kmeans_max_iter"]),
            seed=int(cfg["seed"]), restarts=int(cfg["kmeans_restarts"]),
        )
        d2 = np.sum((points[:, np.newaxis, :] - model.centroids[np.newaxis, :, :]) ** 2, axis=2)
        scores = np.sqrt(d2.min(axis=1))
        window_flags = kmeans_anomalies(model, points, float(cfg["kmeans_quantile"]))
        starts = np.array([w.start_index for w in windows], dtype=np.int64)
        length = int(cfg["window_length"])
    elif method == "skewness":
        report = skewness_anomalies(
            matrix, feature, int(cfg["skew_window"]), float(cfg["skew_cutoff"])
        )
        scores = np.abs(report.values)
        window_flags = report.flags
        starts = np.arange(window_flags.size, dtype=np.int64)
        length = int(cfg["skew_window"])
    else:
        raise InputError(f"unknown baseline method {method!r}")

    row_flags = rows_covered(starts, length, window_flags, n_rows)
    rows = []
    for idx, (score, flag) in enumerate(zip(scores, window_flags)):
        rows.append(["instance", idx, "", f"{score:.12g}", int(flag)])
    for idx, flag in enumerate(row_flags):
        rows.append(["row", idx, "", "", int(flag)])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "detections.csv", ["unit", "index_i", "index_j", "score", "flagged"], rows)
    _echo_config(out, "baseline", cfg, {"input": args.input})
    print(f"{method}: {int(window_flags.sum())} of {window_flags.size} instances flagged "
          f"({int(row_flags.sum())} rows covered)")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _effective(
        args,
        ("features", "methods", "seeds", "threshold",
         *_TRAIN_KEYS, *_POLICY_KEYS, *_BASELINE_KEYS),
    )
    if args.input and args.scenario:
        raise InputError("pass --input or --scenario, not both")

    truth = None
    if args.input:
        matrix = load_csv(args.input)
        source: dict = {"input": args.input}
    else:
        if args.scenario:
            raw = json.loads(Path(args.scenario).read_text(encoding="utf-8"))
            specs = [SyntheticSpec.from_dict(d) for d in (raw if isinstance(raw, list) else [raw])]
        else:
            specs = [default_scenario()]
        matrix, truth = build_scenario(specs)
        source = {"scenario": [s.to_dict() for s in specs]}

    features = _str_list(str(cfg["features"])) or matrix.feature_names
    methods = _str_list(str(cfg["methods"]))
    seeds = _int_list(str(cfg["seeds"]))

    report = compare_methods(
        matrix, features, methods, seeds,
        truth=truth,
        train_config=_train_config(cfg),
        pair_policy=_pair_policy(cfg, int(cfg["seed"])),
        threshold=float(cfg["threshold"]),
        kmeans_k=int(cfg["kmeans_k"]),
        kmeans_max_iter=int(cfg["kmeans_max_iter"]),
        kmeans_quantile=float(cfg["kmeans_quantile"]),
        kmeans_restarts=int(cfg["kmeans_restarts"]),
        skew_window=int(cfg["skew_window"]),
        skew_cutoff=float(cfg["skew_cutoff"]),
    )
    report.config["cli"] = {"command": "bench", **cfg, **source}
    written = export_report(report, args.out)

    for feature in report.features:
        cells = []
        for method in report.methods:
            stats = report.cell_stats(feature, method, "instance")
            cells.append(f"{method}: {format_cell(*stats) if stats else 'failed'}")
        print(f"{feature:<16s} " + "  ".join(cells))
    for key, msg in sorted(report.failures.items()):
        print(f"failed {key}: {msg}", file=sys.stderr)
    print(f"report written to {Path(args.out)} ({len(written)} files)")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
