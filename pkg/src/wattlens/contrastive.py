"""Pair construction, the margin contrastive objective, encoder training,
and the two anomaly-scoring procedures (min-distance and pairwise).

An instance is a fixed-length window of one feature. Pairs are labeled by
temporal proximity: windows whose starts differ by at most
``positive_max_lag`` are similar (y=1); dissimilar pairs (y=0) are sampled
uniformly among window pairs whose starts differ by at least
``negative_min_gap``. Everything is seeded and bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import (
    DivergedLossError,
    EmptyReferenceError,
    NoNegativesAvailableError,
    NotEnoughWindowsError,
    ShapeMismatchError,
)
from .timeseries import FeatureMatrix, NormalizationParams, Window, make_windows, zscore_normalize

# Gradient of the hinge term is left at zero below this distance, where the
# Euclidean norm is not differentiable.
_DIST_EPS = 1e-12


@dataclass(frozen=True)
class PairPolicy:
    """Rule that assigns similarity labels to window index pairs.

    ``allow_empty_negatives`` turns the no-far-pairs condition from an error
    into a positives-only pair set.
    """

    positive_max_lag: int = 1
    negative_min_gap: int = 7 * 24
    negatives_per_positive: int = 1
    seed: int = 0
    allow_empty_negatives: bool = False

    def __post_init__(self):
        if self.positive_max_lag < 1 or self.negatives_per_positive < 1:
            raise ValueError("lags and counts must be >= 1")
        if not self.positive_max_lag < self.negative_min_gap:
            raise ValueError("positive_max_lag must be smaller than negative_min_gap")


@dataclass(frozen=True)
class PairSet:
    """Index pairs with 0/1 similarity labels over a window list of size n_windows."""

    i_indices: np.ndarray
    j_indices: np.ndarray
    labels: np.ndarray
    n_windows: int
    policy: PairPolicy

    def __post_init__(self):
        i = np.asarray(self.i_indices, dtype=np.int64)
        j = np.asarray(self.j_indices, dtype=np.int64)
        y = np.asarray(self.labels, dtype=np.int64)
        for name, a in (("i_indices", i), ("j_indices", j), ("labels", y)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (i.shape == j.shape == y.shape) or i.ndim != 1:
            raise ValueError("index and label arrays must be equal-length 1-D")
        if np.any(i == j):
            raise ValueError("a pair may not reference the same window twice")
        for a in (i, j):
            if a.size and (a.min() < 0 or a.max() >= self.n_windows):
                raise ValueError("pair indices out of window-list bounds")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def create_pairs(windows: list[Window], policy: PairPolicy) -> PairSet:
    """Build the labeled pair set for a window list.

    Every window whose successor starts within ``positive_max_lag`` yields
    one similar pair; for each similar pair, ``negatives_per_positive``
    dissimilar pairs are drawn uniformly (seeded) from all index pairs whose
    start gap is at least ``negative_min_gap``.
    """
    n = len(windows)
    if n < 2:
        raise NotEnoughWindowsError(f"need >= 2 windows, got {n}")
    starts = np.array([w.start_index for w in windows], dtype=np.int64)
    if np.any(np.diff(starts) <= 0):
        raise ValueError("windows must be ordered by strictly increasing start")

    close = np.flatnonzero(np.diff(starts) <= policy.positive_max_lag)
    if close.size == 0:
        raise NotEnoughWindowsError(
            f"no window starts within {policy.positive_max_lag} of a successor"
        )
    pos_i = close
    pos_j = close + 1

    # Far partners of window a split into a left run [0, lo_a) and a right
    # run [hi_a, n); sampling an integer below the total count maps back to
    # a concrete (a, j) pair.
    lo = np.searchsorted(starts, starts - policy.negative_min_gap, side="right")
    hi = np.searchsorted(starts, starts + policy.negative_min_gap, side="left")
    partners = lo + (n - hi)
    total = int(partners.sum())

    if total == 0:
        if not policy.allow_empty_negatives:
            raise NoNegativesAvailableError(
                f"no start gap reaches {policy.negative_min_gap}; "
                "shorten the gap or set allow_empty_negatives"
            )
        neg_i = np.empty(0, dtype=np.int64)
        neg_j = np.empty(0, dtype=np.int64)
    else:
        rng = np.random.default_rng(policy.seed)
        draws = rng.integers(0, total, size=pos_i.size * policy.negatives_per_positive)
        cum = np.cumsum(partners)
        neg_i = np.searchsorted(cum, draws, side="right")
        offset = draws - (cum[neg_i] - partners[neg_i])
        neg_j = np.where(offset < lo[neg_i], offset, hi[neg_i] + offset - lo[neg_i])

    i = np.concatenate([pos_i, neg_i])
    j = np.concatenate([pos_j, neg_j])
    y = np.concatenate([np.ones(pos_i.size, dtype=np.int64), np.zeros(neg_i.size, dtype=np.int64)])
    return PairSet(i, j, y, n_windows=n, policy=policy)


def pair_loss(h_i: np.ndarray, h_j: np.ndarray, y: int, margin: float) -> float:
    """Margin contrastive loss for one embedding pair.

    y=1 pays squared distance; y=0 pays squared hinge max(0, margin - distance).
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape or h_i.ndim != 1:
        raise ShapeMismatchError(f"embedding shapes {h_i.shape} and {h_j.shape} differ")
    if margin <= 0:
        raise ValueError("margin must be > 0")
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    losses, _, _ = _pair_losses_and_grads(
        h_i[np.newaxis], h_j[np.newaxis], np.array([y]), margin
    )
    return float(losses[0])


def _pair_losses_and_grads(
    e_i: np.ndarray, e_j: np.ndarray, labels: np.ndarray, margin: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair losses plus dloss/de_i and dloss/de_j, all shape-(B, ...)."""
    diff = e_i - e_j
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    pos = labels == 1
    hinge = np.maximum(0.0, margin - dist)
    losses = np.where(pos, dist * dist, hinge * hinge)

    grad_i = np.zeros_like(diff)
    grad_i[pos] = 2.0 * diff[pos]
    active = (~pos) & (dist < margin) & (dist > _DIST_EPS)
    if np.any(active):
        scale = -2.0 * hinge[active] / dist[active]
        grad_i[active] = scale[:, np.newaxis] * diff[active]
    return losses, grad_i, -grad_i


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one encoder training run."""

    learning_rate: float = 1e-3
    margin: float = 1.0
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    window_length: int = 24
    stride: int = 1
    embedding_size: int = 16
    hidden_size: int = 16

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.window_length < 2 or self.stride < 1:
            raise ValueError("window_length must be >= 2 and stride >= 1")
        if self.embedding_size < 1 or self.hidden_size < 1:
            raise ValueError("sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


CHECKPOINT_FORMAT = "wattlens-encoder"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderModel:
    """Trained window encoder: LSTM, projection head, and the fitted
    normalization the windows must be transformed with."""

    lstm: nn.LstmParams
    projection: nn.LinearParams
    normalization: NormalizationParams
    feature: str
    config: TrainConfig

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def params_dict(self) -> dict[str, np.ndarray]:
        return {**self.lstm.as_dict("lstm."), **self.projection.as_dict("proj.")}

    def to_json(self) -> str:
        payload = {
            "format": CHECKPOINT_FORMAT,
            "format_version": CHECKPOINT_VERSION,
            "feature": self.feature,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "normalization": {
                "feature_names": list(self.normalization.feature_names),
                "mean": self.normalization.mean.tolist(),
                "std": self.normalization.std.tolist(),
            },
            "lstm": {k: v.tolist() for k, v in self.lstm.as_dict().items()},
            "projection": {k: v.tolist() for k, v in self.projection.as_dict().items()},
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EncoderModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        norm = payload["normalization"]
        model = cls(
            lstm=nn.LstmParams(**{k: np.array(v, dtype=np.float64) for k, v in payload["lstm"].items()}),
            projection=nn.LinearParams(
                **{k: np.array(v, dtype=np.float64) for k, v in payload["projection"].items()}
            ),
            normalization=NormalizationParams(
                tuple(norm["feature_names"]), np.array(norm["mean"]), np.array(norm["std"])
            ),
            feature=payload["feature"],
            config=TrainConfig(**payload["config"]),
        )
        if model.config_hash != payload["config_hash"]:
            raise ValueError(f"{path}: config hash mismatch")
        return model


def _stack_windows(windows: list[Window]) -> np.ndarray:
    return np.stack([w.values for w in windows])[:, :, np.newaxis]


def embed(model: EncoderModel, windows: list[Window]) -> np.ndarray:
    """Embed windows (already in the model's normalized scale) to (n, E)."""
    if not windows:
        return np.empty((0, model.projection.out_size))
    run = nn.lstm_forward(model.lstm, _stack_windows(windows))
    return nn.linear_forward(model.projection, run.last_hidden)


def total_loss(model: EncoderModel, windows: list[Window], pairs: PairSet) -> float:
    """Mean contrastive loss of the pair set under the model."""
    if pairs.n_windows != len(windows):
        raise ValueError("pair set was built for a different window list")
    if len(pairs) == 0:
        return 0.0
    emb = embed(model, windows)
    losses, _, _ = _pair_losses_and_grads(
        emb[pairs.i_indices], emb[pairs.j_indices], pairs.labels, model.config.margin
    )
    return float(losses.mean())


def _loss_and_grads(
    params: dict[str, np.ndarray],
    window_values: np.ndarray,
    i_idx: np.ndarray,
    j_idx: np.ndarray,
    labels: np.ndarray,
    margin: float,
) -> tuple[np.ndarray, nn.GradientBundle]:
    """Per-pair losses and gradients of their mean w.r.t. every parameter.

    Both sides of each pair run through one stacked forward so a single
    backward pass covers the batch.
    """
    lstm = nn.lstm_from_dict(params, "lstm.")
    proj = nn.linear_from_dict(params, "proj.")
    b = i_idx.shape[0]
    x = np.concatenate([window_values[i_idx], window_values[j_idx]])[:, :, np.newaxis]
    run = nn.lstm_forward(lstm, x, want_cache=True)
    emb = nn.linear_forward(proj, run.last_hidden)
    losses, grad_i, grad_j = _pair_losses_and_grads(emb[:b], emb[b:], labels, margin)
    d_emb = np.concatenate([grad_i, grad_j]) / b  # loss is the batch mean
    proj_grads, d_hidden = nn.linear_backward(proj, run.last_hidden, d_emb)
    lstm_grads, _ = nn.lstm_backward(lstm, run.cache, d_hidden)
    grads = {**{f"lstm.{k}": v for k, v in lstm_grads.items()},
             **{f"proj.{k}": v for k, v in proj_grads.items()}}
    return losses, grads


def train(
    matrix: FeatureMatrix,
    feature: str,
    config: TrainConfig = TrainConfig(),
    policy: PairPolicy = PairPolicy(),
) -> tuple[EncoderModel, list[float]]:
    """Fit the encoder on one feature with mini-batch Adam.

    Returns the trained model and the per-epoch mean training loss. The run
    is bit-reproducible from (matrix, feature, config, policy).
    """
    normalized, norm_params = zscore_normalize(matrix)
    windows = make_windows(normalized, feature, config.window_length, config.stride)
    pairs = create_pairs(windows, policy)
    window_values = np.stack([w.values for w in windows])

    rng = np.random.default_rng(config.seed)
    lstm = nn.init_lstm(1, config.hidden_size, rng)
    proj = nn.init_linear(config.hidden_size, config.embedding_size, rng)
    params = {**lstm.as_dict("lstm."), **proj.as_dict("proj.")}
    state = nn.adam_init(params)

    n_pairs = len(pairs)
    history: list[float] = []
    with nn.single_threaded_blas():
        for epoch in range(config.epochs):
            order = rng.permutation(n_pairs)
            loss_sum = 0.0
            for lo in range(0, n_pairs, config.batch_size):
                batch = order[lo : lo + config.batch_size]
                losses, grads = _loss_and_grads(
                    params,
                    window_values,
                    pairs.i_indices[batch],
                    pairs.j_indices[batch],
                    pairs.labels[batch],
                    config.margin,
                )
                loss_sum += float(losses.sum())
                params, state = nn.adam_step(state, params, grads, config.learning_rate)
            epoch_loss = loss_sum / n_pairs
            if not np.isfinite(epoch_loss):
                raise DivergedLossError(f"epoch {epoch} loss is {epoch_loss}")
            history.append(epoch_loss)

    model = EncoderModel(
        lstm=nn.lstm_from_dict(params, "lstm."),
        projection=nn.linear_from_dict(params, "proj."),
        normalization=norm_params,
        feature=feature,
        config=config,
    )
    return model, history


def anomaly_score_min(x_new: Window, model: EncoderModel, reference: np.ndarray) -> float:
    """Minimum embedding distance from a (normalized) window to the reference set."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 2 or reference.shape[0] == 0:
        raise EmptyReferenceError("reference embeddings must be a non-empty (n, E) array")
    e = embed(model, [x_new])[0]
    if e.shape[0] != reference.shape[1]:
        raise ShapeMismatchError(
            f"reference dim {reference.shape[1]} != embedding dim {e.shape[0]}"
        )
    diff = reference - e
    return float(np.sqrt(np.sum(diff * diff, axis=1)).min())


@dataclass(frozen=True)
class DetectionResult:
    """Scores plus threshold flags, either per pair or per instance (window).

    For pair results ``index_i``/``index_j`` are the window indices of each
    side; for instance results ``index_i`` is the window index and
    ``index_j`` is -1 throughout.
    """

    unit: str
    scores: np.ndarray
    flags: np.ndarray
    threshold: float
    model_id: str
    index_i: np.ndarray
    index_j: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        flags = np.asarray(self.flags, dtype=bool)
        i = np.asarray(self.index_i, dtype=np.int64)
        j = np.asarray(self.index_j, dtype=np.int64)
        for name, a in (("scores", scores), ("flags", flags), ("index_i", i), ("index_j", j)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.unit not in ("pair", "instance"):
            raise ValueError(f"unknown unit {self.unit!r}")
        if not (scores.shape == flags.shape == i.shape == j.shape):
            raise ValueError("result arrays must have equal length")
        if np.any(scores < 0):
            raise ValueError("scores must be >= 0")
        if not np.array_equal(flags, scores > self.threshold):
            raise ValueError("flags must equal scores > threshold exactly")

    @property
    def flag_count(self) -> int:
        return int(self.flags.sum())


def detect_anomalies(
    feature: str,
    model: EncoderModel,
    matrix: FeatureMatrix,
    threshold: float = 0.5,
    policy: PairPolicy = PairPolicy(),
) -> DetectionResult:
    """Pairwise detection: embed both sides of each similar pair and flag
    pairs whose embedding distance exceeds the threshold.

    Only pairs the policy labels similar are scored; dissimilar pairs are
    trained to exceed the margin, so their distances carry no anomaly
    signal. Use :func:`instance_result` to fold pair flags onto windows.
    """
    normalized = model.normalization.transform(matrix)
    windows = make_windows(normalized, feature, model.config.window_length, model.config.stride)
    pairs = create_pairs(windows, policy)
    keep = pairs.labels == 1
    i_idx = pairs.i_indices[keep]
    j_idx = pairs.j_indices[keep]

    emb = embed(model, windows)
    diff = emb[i_idx] - emb[j_idx]
    scores = np.sqrt(np.sum(diff * diff, axis=1))
    return DetectionResult(
        unit="pair",
        scores=scores,
        flags=scores > threshold,
        threshold=threshold,
        model_id=model.config_hash,
        index_i=i_idx,
        index_j=j_idx,
    )


def instance_result(pair_result: DetectionResult, n_windows: int) -> DetectionResult:
    """Aggregate a pair-level result onto windows.

    A window's score is the maximum score over pairs touching it (0 with no
    pairs), so a window is flagged exactly when one of its pairs is.
    """
    if pair_result.unit != "pair":
        raise ValueError("expected a pair-level result")
    scores = np.zeros(n_windows)
    np.maximum.at(scores, pair_result.index_i, pair_result.scores)
    np.maximum.at(scores, pair_result.index_j, pair_result.scores)
    return DetectionResult(
        unit="instance",
        scores=scores,
        flags=scores > pair_result.threshold,
        threshold=pair_result.threshold,
        model_id=pair_result.model_id,
        index_i=np.arange(n_windows, dtype=np.int64),
        index_j=np.full(n_windows, -1, dtype=np.int64),
    )
