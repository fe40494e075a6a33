"""Training and evaluation loops shared by the CLI and the estimator API."""
from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..augment import LabeledBatch, mixup, trivial_augment
from ..exceptions import ConfigError, ConfigMismatch, NonFiniteError, NonFiniteLoss
from ..metrics import MetricsReport, build_report, select_checkpoint
from ..nn import checkpoint
from ..nn.functional import class_weights, cross_entropy, log_softmax
from ..nn.layers import BackboneConfig, FpnConfig, MalwareNet, NetConfig
from ..optim import AdamW, FlatParams, ScheduleFreeAdamW
from .config import RunConfig

logger = logging.getLogger(__name__)

# stream ids for seed splitting: SeedSequence([seed, stream, *counters])
STREAM_INIT, STREAM_SHUFFLE, STREAM_AUGMENT = 0, 1, 2


def rng_stream(seed: int, stream: int, *counters: int) -> np.random.Generator:
    """Independent generator for one purpose (init, shuffle, augment) and epoch/batch."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream, *map(int, counters)]))


def net_config(cfg: RunConfig, num_classes: int) -> NetConfig:
    return NetConfig(
        backbone=BackboneConfig(in_channels=cfg.in_channels, widths=cfg.model.widths),
        fpn=FpnConfig(width=cfg.model.fpn_width) if cfg.fpn else None,
        num_classes=num_classes,
    )


def build_model(cfg: RunConfig, num_classes: int) -> MalwareNet:
    seed = int(rng_stream(cfg.seed, STREAM_INIT).integers(2**31))
    model = MalwareNet(net_config(cfg, num_classes), seed=seed, dtype=np.float32)
    if cfg.pt:
        if not Path(cfg.pt).is_file():
            raise ConfigError(f"initial weights {cfg.pt} not found")
        arrays, _ = checkpoint.load(cfg.pt)
        skipped = model.load_arrays(arrays, strict=False)
        if skipped:
            logger.warning("initial weights %s: kept random init for %s", cfg.pt, skipped)
    return model


def build_optimizer(cfg: RunConfig, params: np.ndarray):
    if cfg.opt == "AF":
        return ScheduleFreeAdamW(params, cfg.sf)
    return AdamW(params, cfg.adamw)


@contextlib.contextmanager
def no_grad(model: MalwareNet):
    params = list(model.parameters().values())
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def set_params(model: MalwareNet, layout: FlatParams, vec: np.ndarray) -> None:
    for name, arr in layout.unflatten(vec).items():
        model.parameters()[name].data = arr


def predict_logits(model: MalwareNet, dataset, batch_size: int) -> np.ndarray:
    out = []
    with no_grad(model):
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            out.append(model(dataset.load(idx)).data)
    return np.concatenate(out).astype(np.float64)


def evaluate_model(model: MalwareNet, dataset, batch_size: int,
                   class_names: Sequence[str] | None = None) -> MetricsReport:
    """Unaugmented pass: softmax scores for metrics, unweighted CE for the loss."""
    logits = predict_logits(model, dataset, batch_size)
    logp = log_softmax(logits)
    labels = dataset.labels
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    return build_report(np.exp(logp), labels, loss, class_names)


@dataclass
class FitResult:
    model: MalwareNet
    optimizer: object
    layout: FlatParams
    history: List[dict]
    best_epoch: int
    best_params: np.ndarray
    best_opt_vectors: Dict[str, np.ndarray]
    best_opt_scalars: dict
    steps_per_epoch: int
    class_names: List[str] = field(default_factory=list)

    def use_best(self) -> MalwareNet:
        set_params(self.model, self.layout, self.best_params)
        return self.model


def _one_hot(labels: np.ndarray, n: int) -> np.ndarray:
    y = np.zeros((len(labels), n), dtype=np.float64)
    y[np.arange(len(labels)), labels] = 1.0
    return y


def fit(cfg: RunConfig, train_ds, val_ds, num_classes: int,
        class_names: Sequence[str] | None = None, out_dir=None,
        model: MalwareNet | None = None) -> FitResult:
    """Train for ``cfg.epochs`` epochs, validating the deployable parameters after each."""
    if train_ds.channels != cfg.in_channels:
        raise ConfigMismatch(f"data has {train_ds.channels} channels, config says {cfg.in_channels}")
    counts = np.bincount(train_ds.labels, minlength=num_classes)
    weights = class_weights(counts) if cfg.loss == "WCE" else None
    model = model or build_model(cfg, num_classes)
    layout = FlatParams.from_arrays(model.state_arrays())
    opt = build_optimizer(cfg, layout.flatten(model.state_arrays()))
    out_dir = Path(out_dir) if out_dir is not None else None

    n = len(train_ds)
    steps_per_epoch = -(-n // cfg.batch_size)
    history: List[dict] = []
    best = None

    with threadpool_limits(limits=cfg.threads):
        for epoch in range(1, cfg.epochs + 1):
            order = rng_stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
            loss_sum = 0.0
            for b in range(steps_per_epoch):
                idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
                aug_rng = rng_stream(cfg.seed, STREAM_AUGMENT, epoch, b)
                images = train_ds.load(idx)
                targets = _one_hot(train_ds.labels[idx], num_classes)
                if cfg.use_ta:
                    images = trivial_augment(images, cfg.ta, aug_rng)
                if cfg.mu and len(idx) >= 2:
                    mixed = mixup(LabeledBatch(images, targets), cfg.mixup, aug_rng)
                    images, targets = mixed.images, mixed.labels

                set_params(model, layout, opt.train_params())
                model.zero_grad()
                try:
                    loss = cross_entropy(model(images), targets, weights)
                    loss.backward()
                    grad = layout.flatten({k: p.grad for k, p in model.parameters().items()})
                    opt.step(grad)
                except NonFiniteError as exc:
                    if out_dir is not None:
                        checkpoint.save(out_dir / "nonfinite_dump.mifw",
                                        {f"opt.{k}": v for k, v in opt.state_vectors().items()},
                                        {"epoch": epoch, "batch": b, "error": str(exc),
                                         "optimizer": opt.state_scalars()})
                    raise NonFiniteLoss(f"epoch {epoch} batch {b}: {exc}") from exc
                loss_sum += loss.item() * len(idx)

            set_params(model, layout, opt.eval_params())
            val = evaluate_model(model, val_ds, cfg.eval_batch_size, class_names)
            record = {
                "epoch": epoch, "step": opt.t, "seed": cfg.seed, "threads": cfg.threads,
                "train_loss": loss_sum / n, "val_loss": val.loss, "val_f1_macro": val.f1_macro,
                "val_p_macro": val.p_macro, "val_r_macro": val.r_macro, "val_auc_macro": val.auc_macro,
            }
            history.append(record)
            logger.info("epoch %d: train_loss=%.4f val_loss=%.4f val_f1=%.4f",
                        epoch, record["train_loss"], val.loss, val.f1_macro)
            if select_checkpoint(history) == epoch:
                best = (epoch, opt.eval_params().copy(),
                        {k: v.copy() for k, v in opt.state_vectors().items()}, dict(opt.state_scalars()))

    result = FitResult(model=model, optimizer=opt, layout=layout, history=history,
                       best_epoch=best[0], best_params=best[1], best_opt_vectors=best[2],
                       best_opt_scalars=best[3], steps_per_epoch=steps_per_epoch,
                       class_names=list(class_names or []))
    result.use_best()
    return result


def checkpoint_meta(cfg: RunConfig, result: FitResult) -> dict:
    return {
        "net": result.model.cfg.to_dict(),
        "run": cfg.to_dict(),
        "class_names": result.class_names,
        "epoch": result.best_epoch,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "optimizer": {"name": cfg.opt, **result.best_opt_scalars},
    }


def save_checkpoint(path, cfg: RunConfig, result: FitResult) -> None:
    tensors = dict(result.layout.unflatten(result.best_params))
    tensors.update({f"opt.{k}": v for k, v in result.best_opt_vectors.items()})
    checkpoint.save(path, tensors, checkpoint_meta(cfg, result))


def load_model(path) -> tuple[MalwareNet, dict]:
    arrays, meta = checkpoint.load(path)
    model = MalwareNet(NetConfig.from_dict(meta["net"]), dtype=np.float32)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    return model, meta


def write_history(path, history: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_history(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
