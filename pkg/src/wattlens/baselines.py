"""Comparison methods: k-means distance-to-centroid flagging and rolling
skewness flagging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatchError,
    TooFewPointsError,
    WindowTooLongError,
    ZeroVarianceError,
)
from .timeseries import FeatureMatrix, rows_covered


@dataclass(frozen=True)
class KMeansModel:
    """Lloyd's-algorithm fit: centroids, assignments, and the inertia trace."""

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    seed: int
    inertia_history: tuple[float, ...]

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        a = np.asarray(self.assignments, dtype=np.int64)
        c.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "centroids", c)
        object.__setattr__(self, "assignments", a)
        object.__setattr__(self, "inertia_history", tuple(float(x) for x in self.inertia_history))
        if c.shape[0] != self.k:
            raise ValueError("centroid count != k")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError("assignments out of range")


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances."""
    diff = points[:, np.newaxis, :] - centroids[np.newaxis, :, :]
    return np.sum(diff * diff, axis=2)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ seeding: squared-distance-weighted draws."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    chosen = [int(rng.integers(n))]
    centroids[0] = points[chosen[0]]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for m in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # All remaining mass sits on already-chosen locations; fall back
            # to a uniform draw over unchosen indices.
            rest = np.setdiff1d(np.arange(n), np.array(chosen))
            idx = int(rest[rng.integers(rest.size)])
        chosen.append(idx)
        centroids[m] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[m]) ** 2, axis=1))
    return centroids


def kmeans_fit(points: np.ndarray, k: int, max_iter: int = 100, seed: int = 0) -> KMeansModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iter`` iterations. A
    cluster left empty by an update is re-seeded to the point currently
    farthest from its assigned centroid, which keeps the recorded inertia
    non-increasing.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = points.shape[0]
    if k < 1 or k > n:
        raise TooFewPointsError(f"k={k} needs 1 <= k <= {n} points")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, k, rng)
    prev_assign = None
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    inertia = 0.0
    iterations = 0

    for iterations in range(1, max_iter + 1):
        d2 = _squared_distances(points, centroids)
        assign = d2.argmin(axis=1)
        nearest = d2[np.arange(n), assign]
        inertia = float(nearest.sum())
        if history:
            assert inertia <= history[-1] + 1e-9 * max(1.0, history[-1]), "inertia increased"
        history.append(inertia)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign

        new_centroids = np.empty_like(centroids)
        empty = []
        for c in range(k):
            members = assign == c
            if members.any():
                new_centroids[c] = points[members].mean(axis=0)
            else:
                empty.append(c)
        if empty:
            farthest = np.argsort(-nearest)
            for c, idx in zip(empty, farthest[: len(empty)]):
                new_centroids[c] = points[idx]
        centroids = new_centroids

    return KMeansModel(
        k=k,
        centroids=centroids,
        assignments=assign,
        inertia=inertia,
        iterations_run=iterations,
        seed=seed,
        inertia_history=tuple(history),
    )


def kmeans_fit_best(
    points: np.ndarray, k: int, max_iter: int = 100, seed: int = 0, restarts: int = 10
) -> KMeansModel:
    """Best of ``restarts`` seeded fits (seeds seed, seed+1, ...), by inertia."""
    best = None
    for r in range(restarts):
        model = kmeans_fit(points, k, max_iter=max_iter, seed=seed + r)
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def kmeans_anomalies(
    model: KMeansModel, points: np.ndarray, flag_quantile: float = 0.95
) -> np.ndarray:
    """Flag points strictly farther from their assigned centroid than the
    ``flag_quantile`` quantile of all such distances."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.centroids.shape[1]:
        raise DimMismatchError(
            f"points dim {points.shape} incompatible with centroids {model.centroids.shape}"
        )
    if not 0.0 < flag_quantile < 1.0:
        raise ValueError("flag_quantile must lie in (0, 1)")
    d2 = _squared_distances(points, model.centroids)
    dist = np.sqrt(d2.min(axis=1))
    return dist > np.quantile(dist, flag_quantile)


def skewness(values: np.ndarray) -> float:
    """Bias-corrected sample skewness.

    gamma = n / ((n-1)(n-2)) * sum(((x - mean) / s)^3) with s the sample
    standard deviation (n-1 denominator).
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("values must be 1-D")
    n = x.size
    if n < 3:
        raise TooFewPointsError(f"skewness needs >= 3 points, got {n}")
    s = x.std(ddof=1)
    if s == 0.0:
        raise ZeroVarianceError("skewness undefined for constant data")
    z = (x - x.mean()) / s
    return float(n / ((n - 1) * (n - 2)) * np.sum(z**3))


@dataclass(frozen=True)
class SkewnessReport:
    """Rolling skewness values with window and instance (row) flags."""

    feature: str
    window_length: int
    cutoff: float
    values: np.ndarray  # gamma per window
    flags: np.ndarray  # per window: |gamma| > cutoff
    instance_flags: np.ndarray  # per row: covered by a flagged window

    def __post_init__(self):
        g = np.asarray(self.values, dtype=np.float64)
        wf = np.asarray(self.flags, dtype=bool)
        rf = np.asarray(self.instance_flags, dtype=bool)
        for name, a in (("values", g), ("flags", wf), ("instance_flags", rf)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if g.shape != wf.shape:
            raise ValueError("values and flags must have equal length")
        if not np.array_equal(wf, np.abs(g) > self.cutoff):
            raise ValueError("flags must equal |gamma| > cutoff exactly")


def skewness_anomalies(
    m: FeatureMatrix, feature: str, window_length: int = 24, cutoff: float = 2.0
) -> SkewnessReport:
    """Rolling (stride-1) skewness flagging for one feature.

    A window is flagged when |gamma| exceeds the cutoff; a row is flagged
    when any flagged window covers it. Constant windows get gamma = 0.
    """
    if window_length < 3:
        raise ValueError("window_length must be >= 3")
    n = m.row_count
    if window_length > n:
        raise WindowTooLongError(f"window length {window_length} exceeds {n} rows")
    col = m.column(feature)
    w = np.lib.stride_tricks.sliding_window_view(col, window_length)
    mean = w.mean(axis=1)
    s = w.std(axis=1, ddof=1)
    ok = s > 0.0
    z3 = np.zeros(w.shape[0])
    if np.any(ok):
        z = (w[ok] - mean[ok, np.newaxis]) / s[ok, np.newaxis]
        z3[ok] = np.sum(z**3, axis=1)
    wl = window_length
    gamma = wl / ((wl - 1) * (wl - 2)) * z3
    flags = np.abs(gamma) > cutoff
    starts = np.arange(w.shape[0], dtype=np.int64)
    return SkewnessReport(
        feature=feature,
        window_length=wl,
        cutoff=cutoff,
        values=gamma,
        flags=flags,
        instance_flags=rows_covered(starts, wl, flags, n),
    )
