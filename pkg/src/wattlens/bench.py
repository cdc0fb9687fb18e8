"""Synthetic labeled data, confusion-matrix metrics, multi-seed method
comparison, and report export (CSV tables, loss curves, SVG plots).

Every report number is a pure function of (config, seeds, input bytes);
re-running the harness reproduces each output file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import kmeans_anomalies, kmeans_fit_best, skewness_anomalies
from .contrastive import (
    PairPolicy,
    TrainConfig,
    detect_anomalies,
    instance_result,
    train,
)
from .errors import LengthMismatchError, OverlappingInjectionsError, WattlensError
from .timeseries import FeatureMatrix, make_windows, rows_covered, zscore_normalize

INJECTION_SHAPES = ("spike", "level-shift", "dropout")

# 2021-01-01T00:00:00Z; synthetic series tick hourly from here.
_EPOCH_START = 1609459200.0
_HOUR = 3600.0


@dataclass(frozen=True)
class Injection:
    """One injected anomaly: additive offset of ``magnitude_sigma`` noise
    standard deviations (spike, level-shift) or a forced zero reading
    (dropout) over ``duration`` samples."""

    start: int
    duration: int
    magnitude_sigma: float
    shape: str

    def __post_init__(self):
        if self.shape not in INJECTION_SHAPES:
            raise ValueError(f"shape must be one of {INJECTION_SHAPES}")
        if self.duration < 1 or self.start < 0:
            raise ValueError("start must be >= 0 and duration >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one labeled synthetic feature series.

    ``base`` is a sum of sinusoids given as (amplitude, period_hours, phase)
    triples; Gaussian noise with ``noise_sigma`` rides on top.
    """

    length: int = 2880
    base: tuple[tuple[float, float, float], ...] = ((1.0, 24.0, 0.0), (0.4, 168.0, 0.9))
    noise_sigma: float = 0.1
    injections: tuple[Injection, ...] = ()
    seed: int = 0
    feature_name: str = "Energy"

    def __post_init__(self):
        object.__setattr__(
            self,
            "base",
            tuple((float(a), float(p), float(ph)) for a, p, ph in self.base),
        )
        object.__setattr__(self, "injections", tuple(self.injections))
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be > 0")
        spans = sorted((inj.start, inj.start + inj.duration) for inj in self.injections)
        for lo, hi in spans:
            if hi > self.length:
                raise OverlappingInjectionsError(
                    f"injection [{lo}, {hi}) leaves series of length {self.length}"
                )
        for (_, hi), (lo, _) in zip(spans, spans[1:]):
            if lo < hi:
                raise OverlappingInjectionsError("injections overlap")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = [list(b) for b in self.base]
        d["injections"] = [asdict(i) for i in self.injections]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "injections" in d:
            d["injections"] = tuple(Injection(**i) for i in d["injections"])
        if "base" in d:
            d["base"] = tuple(tuple(b) for b in d["base"])
        return cls(**d)


def default_scenario(seed: int = 0) -> SyntheticSpec:
    """120 days of hourly data with four 10-sigma spikes."""
    return SyntheticSpec(
        injections=(
            Injection(400, 1, 10.0, "spike"),
            Injection(1100, 1, 10.0, "spike"),
            Injection(1900, 1, 10.0, "spike"),
            Injection(2500, 1, 10.0, "spike"),
        ),
        seed=seed,
    )


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureMatrix, np.ndarray]:
    """Deterministic series plus ground-truth flags marking injected indices."""
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    signal = np.zeros(spec.length)
    for amp, period, phase in spec.base:
        signal += amp * np.sin(2.0 * np.pi * t / period + phase)
    values = signal + rng.normal(0.0, spec.noise_sigma, spec.length)

    truth = np.zeros(spec.length, dtype=bool)
    for inj in spec.injections:
        span = slice(inj.start, inj.start + inj.duration)
        if inj.shape == "dropout":
            values[span] = 0.0
        else:
            values[span] += inj.magnitude_sigma * spec.noise_sigma
        truth[span] = True

    timestamps = _EPOCH_START + _HOUR * t
    matrix = FeatureMatrix(timestamps, (spec.feature_name,), values[:, np.newaxis])
    return matrix, truth


def build_scenario(
    specs: list[SyntheticSpec],
) -> tuple[FeatureMatrix, dict[str, np.ndarray]]:
    """Assemble several single-feature specs into one matrix plus per-feature truth."""
    if not specs:
        raise ValueError("need at least one spec")
    lengths = {s.length for s in specs}
    if len(lengths) != 1:
        raise ValueError(f"specs disagree on length: {sorted(lengths)}")
    names = [s.feature_name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("feature names must be distinct")
    columns = []
    truth: dict[str, np.ndarray] = {}
    timestamps = None
    for spec in specs:
        matrix, flags = generate_synthetic(spec)
        columns.append(matrix.values[:, 0])
        truth[spec.feature_name] = flags
        timestamps = matrix.timestamps
    return FeatureMatrix(timestamps, tuple(names), np.column_stack(columns)), truth


@dataclass(frozen=True)
class Metrics:
    """Row-level confusion counts and derived rates.

    Undefined rates (zero denominator) are reported as 0.0 with the
    matching ``*_defined`` flag cleared.
    """

    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int
    precision: float
    recall: float
    false_positive_rate: float
    precision_defined: bool
    recall_defined: bool
    flagged_count: int


def evaluate(flags: np.ndarray, truth: np.ndarray) -> Metrics:
    """Standard confusion-matrix arithmetic over aligned boolean vectors."""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if flags.shape != truth.shape or flags.ndim != 1:
        raise LengthMismatchError(f"flags {flags.shape} and truth {truth.shape} differ")
    tp = int(np.sum(flags & truth))
    fp = int(np.sum(flags & ~truth))
    tn = int(np.sum(~flags & ~truth))
    fn = int(np.sum(~flags & truth))
    return Metrics(
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        false_positive_rate=fp / (fp + tn) if fp + tn else 0.0,
        precision_defined=tp + fp > 0,
        recall_defined=tp + fn > 0,
        flagged_count=int(flags.sum()),
    )


METHODS = ("contrastive", "kmeans", "skewness")

# Counting units recorded per method. "instance" counts flagged windows;
# "row" counts rows covered by a flagged window and is what metrics use.
_METHOD_UNITS = {
    "contrastive": ("pair", "instance", "row"),
    "kmeans": ("instance", "row"),
    "skewness": ("instance", "row"),
}


@dataclass
class RunReport:
    """Per (feature, method) flagged counts across seeds, loss histories for
    contrastive runs, row-level metrics when ground truth exists, and the
    config snapshot the report can be regenerated from."""

    features: tuple[str, ...]
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    counts: dict[tuple[str, str, str], tuple[int, ...]] = field(default_factory=dict)
    losses: dict[tuple[str, int], tuple[float, ...]] = field(default_factory=dict)
    metrics: dict[tuple[str, str, int], Metrics] = field(default_factory=dict)
    failures: dict[tuple[str, str, int], str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def cell_stats(self, feature: str, method: str, unit: str) -> tuple[float, float] | None:
        """Mean and population std of flagged counts across seeds."""
        counts = self.counts.get((feature, method, unit))
        if not counts:
            return None
        a = np.asarray(counts, dtype=np.float64)
        return float(a.mean()), float(a.std(ddof=0))


def _method_row_flags(
    method: str,
    matrix: FeatureMatrix,
    normalized: FeatureMatrix,
    feature: str,
    seed: int,
    train_config: TrainConfig,
    pair_policy: PairPolicy,
    threshold: float,
    kmeans_k: int,
    kmeans_max_iter: int,
    kmeans_quantile: float,
    kmeans_restarts: int,
    skew_window: int,
    skew_cutoff: float,
) -> tuple[dict[str, int], np.ndarray, tuple[float, ...] | None]:
    """Run one (method, feature, seed) cell.

    Returns per-unit flagged counts, row-level flags, and the loss history
    (contrastive only).
    """
    n_rows = matrix.row_count
    if method == "contrastive":
        cfg = replace(train_config, seed=seed)
        pol = replace(pair_policy, seed=seed)
        model, history = train(matrix, feature, cfg, pol)
        pair_res = detect_anomalies(feature, model, matrix, threshold, pol)
        n_windows = (n_rows - cfg.window_length) // cfg.stride + 1
        inst = instance_result(pair_res, n_windows)
        starts = np.arange(n_windows, dtype=np.int64) * cfg.stride
        row_flags = rows_covered(starts, cfg.window_length, inst.flags, n_rows)
        counts = {
            "pair": pair_res.flag_count,
            "instance": inst.flag_count,
            "row": int(row_flags.sum()),
        }
        return counts, row_flags, tuple(history)
    if method == "kmeans":
        windows = make_windows(
            normalized, feature, train_config.window_length, train_config.stride
        )
        points = np.stack([w.values for w in windows])
        model = kmeans_fit_best(
            points, kmeans_k, max_iter=kmeans_max_iter, seed=seed, restarts=kmeans_restarts
        )
        window_flags = kmeans_anomalies(model, points, kmeans_quantile)
        starts = np.array([w.start_index for w in windows], dtype=np.int64)
        row_flags = rows_covered(starts, train_config.window_length, window_flags, n_rows)
        counts = {"instance": int(window_flags.sum()), "row": int(row_flags.sum())}
        return counts, row_flags, None
    if method == "skewness":
        report = skewness_anomalies(matrix, feature, skew_window, skew_cutoff)
        counts = {
            "instance": int(report.flags.sum()),
            "row": int(report.instance_flags.sum()),
        }
        return counts, report.instance_flags, None
    raise ValueError(f"unknown method {method!r}")


def compare_methods(
    matrix: FeatureMatrix,
    features: tuple[str, ...],
    methods: tuple[str, ...] = METHODS,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
    *,
    truth: np.ndarray | dict[str, np.ndarray] | None = None,
    train_config: TrainConfig = TrainConfig(),
    pair_policy: PairPolicy = PairPolicy(),
    threshold: float = 0.5,
    kmeans_k: int = 3,
    kmeans_max_iter: int = 100,
    kmeans_quantile: float = 0.95,
    kmeans_restarts: int = 1,
    skew_window: int = 24,
    skew_cutoff: float = 2.0,
) -> RunReport:
    """Run every method on every feature under every seed and aggregate.

    Failures are recorded per cell instead of aborting the sweep. Passing
    row-level ground truth (one array, or a dict keyed by feature) adds
    precision/recall/false-positive-rate metrics.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    if isinstance(truth, dict) or truth is None:
        truth_by = dict(truth or {})
    else:
        truth_by = {f: truth for f in features}

    normalized, _ = zscore_normalize(matrix)
    report = RunReport(
        features=tuple(features),
        methods=tuple(methods),
        seeds=tuple(int(s) for s in seeds),
        config={
            "features": list(features),
            "methods": list(methods),
            "seeds": [int(s) for s in seeds],
            "threshold": threshold,
            "train": train_config.to_dict(),
            "policy": asdict(pair_policy),
            "kmeans": {
                "k": kmeans_k,
                "max_iter": kmeans_max_iter,
                "flag_quantile": kmeans_quantile,
                "restarts": kmeans_restarts,
            },
            "skewness": {"window": skew_window, "cutoff": skew_cutoff},
        },
    )

    for feature in report.features:
        truth_f = truth_by.get(feature)
        for method in report.methods:
            per_unit: dict[str, list[int]] = {u: [] for u in _METHOD_UNITS[method]}
            for seed in report.seeds:
                try:
                    counts, row_flags, history = _method_row_flags(
                        method, matrix, normalized, feature, seed,
                        train_config, pair_policy, threshold,
                        kmeans_k, kmeans_max_iter, kmeans_quantile, kmeans_restarts,
                        skew_window, skew_cutoff,
                    )
                except (WattlensError, ValueError) as exc:
                    report.failures[(feature, method, seed)] = f"{type(exc).__name__}: {exc}"
                    continue
                for unit, value in counts.items():
                    per_unit[unit].append(value)
                if history is not None:
                    report.losses[(feature, seed)] = history
                if truth_f is not None:
                    report.metrics[(feature, method, seed)] = evaluate(row_flags, truth_f)
            for unit, values in per_unit.items():
                if values:
                    report.counts[(feature, method, unit)] = tuple(values)
    return report


# --- export -------------------------------------------------------------------

_SVG_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _fmt(x: float) -> str:
    return f"{x:g}"


def format_cell(mean: float, std: float) -> str:
    return f"{_fmt(mean)} ± {_fmt(std)}"


def _svg_line_plot(
    series: list[tuple[str, tuple[float, ...]]], title: str, xlabel: str, ylabel: str
) -> str:
    """Self-contained SVG line plot with deterministic text output."""
    width, height = 640, 400
    ml, mr, mt, mb = 62, 16, 34, 46
    plot_w, plot_h = width - ml - mr, height - mt - mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    ys = [y for _, vals in series for y in vals]
    if ys:
        y_lo, y_hi = min(ys), max(ys)
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad
        x_max = max(1, max(len(vals) for _, vals in series) - 1)

        def px(x: float) -> float:
            return ml + plot_w * x / x_max

        def py(y: float) -> float:
            return mt + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

        parts.append(
            f'<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" '
            f'fill="none" stroke="#333" stroke-width="1"/>'
        )
        for i in range(5):
            frac = i / 4
            yv = y_lo + frac * (y_hi - y_lo)
            ypix = py(yv)
            parts.append(
                f'<line x1="{ml - 4}" y1="{ypix:.2f}" x2="{ml}" y2="{ypix:.2f}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{ml - 8}" y="{ypix + 4:.2f}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11">{yv:.3g}</text>'
            )
            xv = round(frac * x_max)
            xpix = px(xv)
            parts.append(
                f'<line x1="{xpix:.2f}" y1="{mt + plot_h}" x2="{xpix:.2f}" '
                f'y2="{mt + plot_h + 4}" stroke="#333"/>'
            )
            parts.append(
                f'<text x="{xpix:.2f}" y="{mt + plot_h + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="11">{xv}</text>'
            )
        for idx, (label, vals) in enumerate(series):
            color = _SVG_COLORS[idx % len(_SVG_COLORS)]
            if len(vals) == 1:
                pts = f"{px(0):.2f},{py(vals[0]):.2f} {px(x_max):.2f},{py(vals[0]):.2f}"
            else:
                pts = " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(vals))
            parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
            parts.append(
                f'<text x="{width - mr - 4}" y="{mt + 14 + 14 * idx}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11" fill="{color}">{label}</text>'
            )
    parts.append(
        f'<text x="{ml + plot_w / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="14" y="{mt + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {mt + plot_h / 2:.1f})">{ylabel}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def export_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Write table1.csv, counts.csv, loss curves (CSV + SVG), metrics.csv when
    ground truth was available, and the config.json snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    table = out / "table1.csv"
    rows = []
    for feature in report.features:
        row: list[str] = [feature]
        for method in report.methods:
            stats = report.cell_stats(feature, method, "instance")
            row.append(format_cell(*stats) if stats else "failed")
        rows.append(row)
    write_csv(table, ["feature", *report.methods], rows)
    written.append(table)

    counts = out / "counts.csv"
    rows = []
    for (feature, method, unit), values in sorted(report.counts.items()):
        for seed, value in zip(report.seeds, values):
            rows.append([feature, method, unit, seed, value])
    write_csv(counts, ["feature", "method", "unit", "seed", "flagged_count"], rows)
    written.append(counts)

    if report.metrics:
        metrics = out / "metrics.csv"
        rows = []
        for (feature, method, seed), m in sorted(report.metrics.items()):
            rows.append([
                feature, method, seed,
                m.true_positives, m.false_positives, m.true_negatives, m.false_negatives,
                _fmt(m.precision), _fmt(m.recall), _fmt(m.false_positive_rate),
                int(m.precision_defined), int(m.recall_defined), m.flagged_count,
            ])
        write_csv(
            metrics,
            ["feature", "method", "seed", "tp", "fp", "tn", "fn",
             "precision", "recall", "false_positive_rate",
             "precision_defined", "recall_defined", "flagged_count"],
            rows,
        )
        written.append(metrics)

    for feature in report.features:
        per_seed = [
            (f"seed {seed}", report.losses[(feature, seed)])
            for seed in report.seeds
            if (feature, seed) in report.losses
        ]
        if not per_seed:
            continue
        epochs = max(len(vals) for _, vals in per_seed)
        csv_path = out / f"losses_{feature}.csv"
        rows = []
        for epoch in range(epochs):
            rows.append([epoch] + [
                _fmt(vals[epoch]) if epoch < len(vals) else "" for _, vals in per_seed
            ])
        write_csv(
            csv_path,
            ["epoch"] + [label.replace(" ", "_") for label, _ in per_seed],
            rows,
        )
        written.append(csv_path)

        svg_path = out / f"losses_{feature}.svg"
        svg_path.write_text(
            _svg_line_plot(per_seed, f"Training loss: {feature}", "epoch", "mean pair loss"),
            encoding="utf-8",
        )
        written.append(svg_path)

    config = out / "config.json"
    config.write_text(json.dumps(report.config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    written.append(config)
    return written
