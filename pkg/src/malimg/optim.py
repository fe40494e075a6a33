"""Schedule-free AdamW and a reference (constant-rate) AdamW on flat vectors.

Schedule-free AdamW keeps three sequences: ``z`` takes Adam-normalised
steps, ``x`` is a weighted running average of ``z`` and is what gets
deployed, and gradients are taken at the interpolation
``y = (1 - beta1) z + beta1 x``. Averaging weights are
``c = eta_t^2 / sum_{i<=t} eta_i^2`` with a linear warmup on ``eta_t``.

Both optimizers act on 1-D float arrays; :class:`FlatParams` maps a model's
named parameters onto such a vector.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .exceptions import NonFiniteGradient, NonFiniteState


@dataclass(frozen=True)
class SfHyper:
    lr: float = 0.005
    weight_decay: float = 0.01
    warmup_steps: int = 1000
    beta1: float = 0.95
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.weight_decay < 0 or self.warmup_steps < 0:
            raise ValueError("weight_decay and warmup_steps must be non-negative")


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 0.001
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0 or self.weight_decay < 0:
            raise ValueError("eps must be positive and weight_decay non-negative")


def warmup_lr(hyper: SfHyper, t: int) -> float:
    """``lr * min(1, t / warmup_steps)``; no warmup when ``warmup_steps == 0``."""
    if hyper.warmup_steps == 0:
        return hyper.lr
    return hyper.lr * min(1.0, t / hyper.warmup_steps)


@dataclass
class SfState:
    x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    t: int = 0
    lr_sq_sum: float = 0.0

    @classmethod
    def init(cls, params) -> "SfState":
        p = np.array(params, copy=True)
        return cls(x=p.copy(), z=p, v=np.zeros_like(p), t=0, lr_sq_sum=0.0)


def eval_point(state: SfState, hyper: SfHyper) -> np.ndarray:
    """Where the next gradient must be evaluated: ``(1 - beta1) z + beta1 x``."""
    return (1.0 - hyper.beta1) * state.z + hyper.beta1 * state.x


def sf_step(state: SfState, grad, hyper: SfHyper) -> SfState:
    """One schedule-free AdamW step; ``grad`` must be taken at :func:`eval_point`.

    Returns a new state; the input state is not modified.
    """
    g = np.asarray(grad, dtype=state.z.dtype)
    if g.shape != state.z.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.z.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")

    t = state.t + 1
    lr_t = warmup_lr(hyper, t)
    # overflow is reported as NonFiniteState below
    with np.errstate(over="ignore", invalid="ignore"):
        y = eval_point(state, hyper)
        v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * g * g
        v_hat = v / (1.0 - hyper.beta2 ** t)
        z = state.z - lr_t * g / (np.sqrt(v_hat) + hyper.eps) - lr_t * hyper.weight_decay * y
        lr_sq_sum = state.lr_sq_sum + lr_t * lr_t
        c = lr_t * lr_t / lr_sq_sum if lr_sq_sum > 0 else 0.0
        x = (1.0 - c) * state.x + c * z

    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and np.all(np.isfinite(v))):
        raise NonFiniteState(f"optimizer state became non-finite at step {t}")
    return SfState(x=x, z=z, v=v, t=t, lr_sq_sum=lr_sq_sum)


@dataclass
class AdamWState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, params) -> "AdamWState":
        p = np.array(params, copy=True)
        return cls(params=p, m=np.zeros_like(p), v=np.zeros_like(p), t=0)


def adamw_step(state: AdamWState, grad, hyper: AdamWHyper) -> AdamWState:
    """Bias-corrected Adam with decoupled weight decay at a constant rate."""
    g = np.asarray(grad, dtype=state.params.dtype)
    if g.shape != state.params.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.params.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * g * g
    m_hat = m / (1.0 - hyper.beta1 ** t)
    v_hat = v / (1.0 - hyper.beta2 ** t)
    with np.errstate(over="ignore", invalid="ignore"):
        params = state.params * (1.0 - hyper.lr * hyper.weight_decay) - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    if not np.all(np.isfinite(params)):
        raise NonFiniteState(f"parameters became non-finite at step {t}")
    return AdamWState(params=params, m=m, v=v, t=t)


# -- model-facing wrappers ----------------------------------------------------


@dataclass
class FlatParams:
    """Layout of named parameter arrays inside one flat vector."""

    shapes: "OrderedDict[str, tuple[int, ...]]"
    dtype: np.dtype = field(default=np.dtype(np.float32))

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "FlatParams":
        first = next(iter(arrays.values()))
        return cls(OrderedDict((k, tuple(a.shape)) for k, a in arrays.items()), np.dtype(first.dtype))

    @property
    def size(self) -> int:
        return sum(int(np.prod(s, dtype=np.int64)) for s in self.shapes.values())

    def flatten(self, arrays: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(arrays[k], dtype=self.dtype).ravel() for k in self.shapes])

    def unflatten(self, vec: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        pos = 0
        for k, shape in self.shapes.items():
            n = int(np.prod(shape, dtype=np.int64))
            out[k] = vec[pos:pos + n].reshape(shape)
            pos += n
        return out


class ScheduleFreeAdamW:
    """Stateful wrapper: gradients at :meth:`train_params`, deploy :meth:`eval_params`."""

    name = "AF"

    def __init__(self, params: np.ndarray, hyper: SfHyper):
        self.hyper = hyper
        self.state = SfState.init(params)

    @property
    def t(self) -> int:
        return self.state.t

    def train_params(self) -> np.ndarray:
        return eval_point(self.state, self.hyper)

    def eval_params(self) -> np.ndarray:
        return self.state.x

    def step(self, grad) -> None:
        self.state = sf_step(self.state, grad, self.hyper)

    def state_vectors(self) -> dict[str, np.ndarray]:
        return {"x": self.state.x, "z": self.state.z, "v": self.state.v}

    def state_scalars(self) -> dict:
        return {"t": self.state.t, "lr_sq_sum": self.state.lr_sq_sum}

    def load_state(self, vectors: Mapping[str, np.ndarray], scalars: Mapping) -> None:
        dtype = self.state.x.dtype
        self.state = SfState(
            x=np.array(vectors["x"], dtype=dtype), z=np.array(vectors["z"], dtype=dtype),
            v=np.array(vectors["v"], dtype=dtype), t=int(scalars["t"]),
            lr_sq_sum=float(scalars["lr_sq_sum"]),
        )


class AdamW:
    name = "AW"

    def __init__(self, params: np.ndarray, hyper: AdamWHyper):
        self.hyper = hyper
        self.state = AdamWState.init(params)

    @property
    def t(self) -> int:
        return self.state.t

    def train_params(self) -> np.ndarray:
        return self.state.params

    eval_params = train_params

    def step(self, grad) -> None:
        self.state = adamw_step(self.state, grad, self.hyper)

    def state_vectors(self) -> dict[str, np.ndarray]:
        return {"params": self.state.params, "m": self.state.m, "v": self.state.v}

    def state_scalars(self) -> dict:
        return {"t": self.state.t}

    def load_state(self, vectors: Mapping[str, np.ndarray], scalars: Mapping) -> None:
        dtype = self.state.params.dtype
        self.state = AdamWState(
            params=np.array(vectors["params"], dtype=dtype), m=np.array(vectors["m"], dtype=dtype),
            v=np.array(vectors["v"], dtype=dtype), t=int(scalars["t"]),
        )

