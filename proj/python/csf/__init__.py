"""Causal streamflow forecasting: river-graph STGCN with station-level VAE embeddings."""

from ._csf import (
    CsfError,
    Dataset,
    Graph,
    Model,
    Simulation,
    TrainResult,
    config_text,
    kge,
    knn_alignment,
    nse,
    pearson_rho,
    simulate,
    train,
    volumetric_efficiency,
)

__all__ = [
    "CsfError",
    "Dataset",
    "Graph",
    "Model",
    "Simulation",
    "TrainResult",
    "config_text",
    "kge",
    "knn_alignment",
    "nse",
    "pearson_rho",
    "simulate",
    "train",
    "volumetric_efficiency",
]
