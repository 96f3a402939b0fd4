"""Temporal mixture volatility models over order-book features."""

from ._core import (
    Error,
    __version__,
    auc,
    feature_names,
    features,
    fit,
    ks_two_sample,
    mae,
    predict,
    realized_volatility,
    rmse,
    run_cli,
    synth,
    synth_dataset,
)

__all__ = [
    "Error",
    "__version__",
    "auc",
    "feature_names",
    "features",
    "fit",
    "ks_two_sample",
    "mae",
    "predict",
    "realized_volatility",
    "rmse",
    "run_cli",
    "synth",
    "synth_dataset",
]
