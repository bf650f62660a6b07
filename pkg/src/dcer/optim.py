"""Adaptive-moment optimizer with decoupled weight decay.

Parameters whose gradient buffer is absent after backward are skipped
entirely (no moment update, no decay), so loss terms with zero weight leave
their networks untouched. Parameters flagged `no_decay` (layer-norm gains
and biases, embedding tables, query tokens) never receive weight decay.
"""

from __future__ import annotations

from typing import Dict, Iterable, Tuple

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(
        self,
        named_params: Iterable[Tuple[str, Tensor]],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: Dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in self.params
        }
        self.v: Dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in self.params
        }
        self.steps: Dict[str, int] = {name: 0 for name, _ in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        b1, b2 = np.float32(self.beta1), np.float32(self.beta2)
        lr, eps = np.float32(self.lr), np.float32(self.eps)
        wd = np.float32(self.weight_decay)
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            t = self.steps[name] + 1
            self.steps[name] = t
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (np.float32(1.0) - b1) * g
            v *= b2
            v += (np.float32(1.0) - b2) * (g * g)
            mhat = m / np.float32(1.0 - self.beta1**t)
            vhat = v / np.float32(1.0 - self.beta2**t)
            update = mhat / (np.sqrt(vhat) + eps)
            if wd > 0 and not p.no_decay:
                update = update + wd * p.data
            p.data = p.data - lr * update
