"""High-level train / evaluate / ablate entry points writing run artifacts."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Sequence

from threadpoolctl import threadpool_limits

from ..exceptions import ConfigError, ConfigMismatch, MalimgError
from ..metrics import MetricsReport, table_csv, table_row
from .config import RunConfig
from .data import DatasetIndex, ingest, split_dataset
from .train import FitResult, evaluate_model, fit, load_model, save_checkpoint, write_history

logger = logging.getLogger(__name__)

CHECKPOINT = "best.mifw"
HISTORY = "history.jsonl"
REPORT = "report.json"
TABLE = "table.csv"


@dataclass
class TrainOutput:
    checkpoint: Path
    history: List[dict]
    result: FitResult


def load_index(cfg: RunConfig) -> DatasetIndex:
    if cfg.data_root is None:
        raise ConfigError("data_root is required")
    return ingest(cfg.data_root, cfg.layout)


def train(cfg: RunConfig, index: DatasetIndex, out_dir) -> TrainOutput:
    """Fit on the train split, select by validation F1, write checkpoint + history."""
    num_classes = cfg.num_classes or index.num_classes
    if num_classes != index.num_classes:
        raise ConfigMismatch(f"config expects {num_classes} classes, data has {index.num_classes}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(
        cfg,
        split_dataset(index, "train", cfg.in_channels),
        split_dataset(index, "val", cfg.in_channels),
        num_classes,
        class_names=index.class_names,
        out_dir=out,
    )
    ckpt = out / CHECKPOINT
    save_checkpoint(ckpt, cfg, result)
    write_history(out / HISTORY, result.history)
    return TrainOutput(checkpoint=ckpt, history=result.history, result=result)


def evaluate(checkpoint_path, index: DatasetIndex, split: str = "test",
             batch_size: int = 256) -> MetricsReport:
    """Metrics of a saved checkpoint on one split; no augmentation, deterministic."""
    model, meta = load_model(checkpoint_path)
    channels = model.cfg.backbone.in_channels
    if list(meta.get("class_names") or index.class_names) != index.class_names:
        raise ConfigMismatch("checkpoint class names differ from the dataset's")
    threads = int(meta.get("threads", 1))
    with threadpool_limits(limits=threads):
        return evaluate_model(model, split_dataset(index, split, channels), batch_size, index.class_names)


def report_payload(cfg: RunConfig, report: MetricsReport | None, status: str = "ok",
                   error: str | None = None, **extra) -> dict:
    return {"id": cfg.id, "flags": cfg.flags(), "seed": cfg.seed, "threads": cfg.threads,
            "config": cfg.to_dict(), "status": status, "error": error,
            "report": None if report is None else report.to_dict(), **extra}


def run(cfg: RunConfig, out_dir, index: DatasetIndex | None = None) -> dict:
    """Train then evaluate on test; writes every artifact of one run into ``out_dir``."""
    index = index or load_index(cfg)
    out = Path(out_dir)
    trained = train(cfg, index, out)
    report = evaluate(trained.checkpoint, index, "test", cfg.eval_batch_size)
    payload = report_payload(cfg, report, best_epoch=trained.result.best_epoch,
                             steps=trained.result.optimizer.t)
    (out / REPORT).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / TABLE).write_text(table_csv([table_row(cfg.id, cfg.flags(), report)]))
    return payload


def ablate(grid: Sequence[RunConfig], out_dir, index: DatasetIndex | None = None) -> List[dict]:
    """Run each config in order; failed runs get ``nan`` metric rows instead of aborting."""
    if not grid:
        raise ConfigError("ablation grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = []
    for i, cfg in enumerate(grid):
        run_dir = out / f"{i:02d}_{cfg.id}"
        try:
            payload = run(cfg, run_dir, index or load_index(cfg))
        except MalimgError as exc:
            logger.error("run %s failed: %s", cfg.id, exc)
            payload = report_payload(cfg, None, status="failed", error=f"{type(exc).__name__}: {exc}")
        payloads.append(payload)
    write_table(payloads, out)
    return payloads


def write_table(payloads: Sequence[Mapping], out_dir) -> str:
    rows = []
    for p in payloads:
        report = MetricsReport.from_dict(p["report"]) if p.get("report") else None
        rows.append(table_row(p["id"], p["flags"], report))
    text = table_csv(rows)
    out = Path(out_dir)
    (out / TABLE).write_text(text)
    (out / REPORT).write_text(json.dumps({"runs": list(payloads)}, indent=2, sort_keys=True) + "\n")
    return text


# Flag columns of the published 15-run ablation, in row order:
# (id, pt, fpn, in, ta, mu, opt, loss)
TABLE3_FLAGS = (
    (1, False, False, 1, False, False, "AF", "WCE"),
    (2, True, False, 3, False, False, "AW", "CE"),
    (3, False, False, 1, False, False, "AF", "CE"),
    (4, False, False, 1, False, False, "AF", "CE"),
    (5, False, False, 1, False, False, "AW", "WCE"),
    (6, False, False, 1, False, False, "AF", "CE"),
    (7, True, False, 3, False, False, "AW", "CE"),
    (8, True, True, 3, False, False, "AF", "CE"),
    (9, True, False, 1, False, False, "AF", "CE"),
    (10, True, False, 3, False, True, "AF", "CE"),
    (11, True, False, 1, False, True, "AF", "CE"),
    (12, False, True, 3, True, True, "AF", "CE"),
    (13, True, False, 3, True, False, "AF", "CE"),
    (14, True, False, 3, True, True, "AF", "CE"),
    (15, True, True, 3, True, True, "AF", "CE"),
)

# Rows 3, 4 and 6 share every flag; they are spread over the searched
# learning rates / beta1 values so the three runs differ.
TABLE3_SF_OVERRIDES = {
    3: {"lr": 0.01, "beta1": 0.9},
    4: {"lr": 0.001, "beta1": 0.9},
    6: {"lr": 0.005, "beta1": 0.95},
}


def table3_grid(base: RunConfig, pt_weights: str | None) -> List[RunConfig]:
    """The 15 ablation configs on top of ``base``; PT rows initialise from ``pt_weights``."""
    if pt_weights is None and any(row[1] for row in TABLE3_FLAGS):
        raise ConfigError("the ablation grid has pretrained rows; supply pt_weights")
    grid = []
    for rid, pt, fpn, ch, ta, mu, opt, loss in TABLE3_FLAGS:
        grid.append(base.with_updates(
            id=str(rid), pt=pt_weights if pt else None, fpn=fpn, in_channels=ch,
            ta={"enabled": ta}, mixup={"enabled": mu}, opt=opt, loss=loss,
            sf=TABLE3_SF_OVERRIDES.get(rid, {}),
        ))
    return grid


def load_grid(path) -> List[RunConfig]:
    """Grid file: ``{"base": {...}, "runs": [{overrides}, ...]}`` or
    ``{"base": {...}, "preset": "table3", "pt_weights": "path"}``."""
    path = Path(path)
    spec = json.loads(path.read_text())
    unknown = set(spec) - {"base", "runs", "preset", "pt_weights"}
    if unknown:
        raise ConfigError(f"unknown keys in grid file: {sorted(unknown)}")
    from .config import resolve_paths

    base = resolve_paths(RunConfig.from_dict(spec.get("base", {})), path.parent)
    if spec.get("preset") is not None:
        if spec["preset"] != "table3":
            raise ConfigError(f"unknown grid preset {spec['preset']!r}")
        pt = spec.get("pt_weights")
        if pt is not None and not Path(pt).is_absolute():
            pt = str(path.parent / pt)
        return table3_grid(base, pt)
    runs = spec.get("runs") or []
    return [resolve_paths(base.with_updates(**r), path.parent) for r in runs]
