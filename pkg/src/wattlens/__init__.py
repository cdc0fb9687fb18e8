"""Contrastive-learning anomaly detection for energy-consumption time series,
with k-means and skewness baselines and a reproducible benchmark harness."""

__version__ = "0.1.0"

from .baselines import (
    KMeansModel,
    SkewnessReport,
    kmeans_anomalies,
    kmeans_fit,
    kmeans_fit_best,
    skewness,
    skewness_anomalies,
)
from .bench import (
    Injection,
    Metrics,
    RunReport,
    SyntheticSpec,
    build_scenario,
    compare_methods,
    default_scenario,
    evaluate,
    export_report,
    generate_synthetic,
)
from .contrastive import (
    DetectionResult,
    EncoderModel,
    PairPolicy,
    PairSet,
    TrainConfig,
    anomaly_score_min,
    create_pairs,
    detect_anomalies,
    embed,
    instance_result,
    pair_loss,
    total_loss,
    train,
)
from .timeseries import (
    CsvSchema,
    FeatureMatrix,
    FeatureRanking,
    NormalizationParams,
    Window,
    load_csv,
    make_windows,
    pearson_correlation,
    rows_covered,
    select_features,
    zscore_normalize,
)

__all__ = [
    "CsvSchema",
    "DetectionResult",
    "EncoderModel",
    "FeatureMatrix",
    "FeatureRanking",
    "Injection",
    "KMeansModel",
    "Metrics",
    "NormalizationParams",
    "PairPolicy",
    "PairSet",
    "RunReport",
    "SkewnessReport",
    "SyntheticSpec",
    "TrainConfig",
    "Window",
    "anomaly_score_min",
    "build_scenario",
    "compare_methods",
    "create_pairs",
    "default_scenario",
    "detect_anomalies",
    "embed",
    "evaluate",
    "export_report",
    "generate_synthetic",
    "instance_result",
    "kmeans_anomalies",
    "kmeans_fit",
    "kmeans_fit_best",
    "load_csv",
    "make_windows",
    "pair_loss",
    "pearson_correlation",
    "rows_covered",
    "select_features",
    "skewness",
    "skewness_anomalies",
    "total_loss",
    "train",
    "zscore_normalize",
]
