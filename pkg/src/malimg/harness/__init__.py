"""Configuration, data ingestion, training loops, ablation grid and reports."""
from .config import ModelConfig, RunConfig, resolve_paths
from .data import ArrayDataset, DatasetIndex, PngDataset, ingest, split_dataset
from .runner import (
    TABLE3_FLAGS,
    ablate,
    evaluate,
    load_grid,
    run,
    table3_grid,
    train,
    write_table,
)
from .synthetic import make_corpus, synthetic_dex
from .train import FitResult, evaluate_model, fit, load_model, read_history, rng_stream, write_history

__all__ = [
    "ArrayDataset", "DatasetIndex", "FitResult", "ModelConfig", "PngDataset", "RunConfig",
    "TABLE3_FLAGS", "ablate", "evaluate", "evaluate_model", "fit", "ingest", "load_grid",
    "load_model", "make_corpus", "read_history", "resolve_paths", "rng_stream", "run", "split_dataset",
    "synthetic_dex", "table3_grid", "train", "write_history", "write_table",
]
