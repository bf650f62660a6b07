"""Energy-based reconstruction: the compatibility energy between a candidate
modality encoding and the bottleneck state, the learned initializer, and the
momentum-descent refinement loop whose final energy doubles as an
uncertainty score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import DivergenceError
from .nn import MLP, Module, MultiHeadAttention
from .tensor import Tensor, enable_grad, grad, no_grad

SELF_WEIGHT = 0.1  # fixed lambda weighting the direct h_m term


class EnergyNet(Module):
    """E(h, Z) = f(h - CrossAttn(h, Z)) + 0.1 * g(h), one scalar per sample.

    f and g are per-token MLPs (D -> D -> 1, GELU) with an absolute-value
    readout, pooled by token mean, so the energy is independent of sequence
    length and bounded below by zero. The lower bound matters because the
    energy loss minimizes E at reconstructed points directly; an unbounded
    readout lets that minimization run away. The readout layers start at a
    larger scale so descent gradients are non-negligible from the start.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cross = MultiHeadAttention(cfg.hidden, cfg.heads, rng)
        self.f = MLP([cfg.hidden, cfg.hidden, 1], rng)
        self.g = MLP([cfg.hidden, cfg.hidden, 1], rng)
        for net in (self.f, self.g):
            last = getattr(net, f"l{net.depth - 1}")
            last.w.data = last.w.data * np.float32(4.0)

    def residual_term(self, h: Tensor, z: Tensor) -> Tensor:
        resid = T.sub(h, self.cross(h, z))
        e = T.tmean(T.absolute(self.f(resid)), axis=-2)
        return T.reshape(e, (h.shape[0],))

    def self_term(self, h: Tensor) -> Tensor:
        e = T.tmean(T.absolute(self.g(h)), axis=-2)
        return T.reshape(e, (h.shape[0],))

    def __call__(self, h: Tensor, z: Tensor) -> Tensor:
        return T.add(self.residual_term(h, z), T.mul(self.self_term(h), SELF_WEIGHT))


class Initializer(Module):
    """Maps [flatten(Z); pooled observed encodings] to a full T_m x D start."""

    def __init__(self, out_len: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.out_len = out_len
        self.hidden = cfg.hidden
        self.net = MLP(
            [cfg.queries * cfg.hidden + cfg.hidden, cfg.hidden, out_len * cfg.hidden],
            rng,
        )

    def __call__(self, z: Tensor, pooled_obs: Tensor) -> Tensor:
        b, k, d = z.shape
        flat = T.reshape(z, (b, k * d))
        x = T.concat([flat, pooled_obs], axis=1)
        return T.reshape(self.net(x), (b, self.out_len, self.hidden))


@dataclass
class ReconResult:
    """Refined encodings, final per-sample energy, and the energy trajectory
    (length steps+1, trajectory[-1] == final_energy)."""

    h: np.ndarray
    final_energy: np.ndarray
    trajectory: np.ndarray


def descend(
    energy_fn: Callable[[Tensor], Tensor],
    h0: np.ndarray,
    steps: int,
    eta: float,
    rho: float,
) -> ReconResult:
    """Heavy-ball descent on the energy over the candidate encoding.

    v_t = rho * v_{t-1} + eta * dE/dh(h_{t-1}), h_t = h_{t-1} - v_t, v_0 = 0.
    `energy_fn` maps a (B, T, D) tensor to per-sample energies (B,); the
    gradient treats every parameter inside the closure as constant.
    """
    h = np.array(h0, dtype=np.float32)
    batch = h.shape[0]
    v = np.zeros_like(h)
    trajectory = np.empty((batch, steps + 1), dtype=np.float32)
    for t in range(1, steps + 1):
        with enable_grad():
            leaf = Tensor(h, requires_grad=True)
            e = energy_fn(leaf)
            if not np.all(np.isfinite(e.data)):
                raise DivergenceError("non-finite energy", step=t)
            trajectory[:, t - 1] = e.data
            (g,) = grad(T.tsum(e), [leaf])
        if g is None or not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite energy gradient", step=t)
        v = rho * v + np.float32(eta) * g
        h = h - v
    with no_grad():
        e_final = energy_fn(Tensor(h)).data.copy()
    if not np.all(np.isfinite(e_final)):
        raise DivergenceError("non-finite energy", step=steps)
    trajectory[:, steps] = e_final
    return ReconResult(h=h, final_energy=e_final, trajectory=trajectory)


def quadratic_energy(target: np.ndarray) -> Callable[[Tensor], Tensor]:
    """Test hook: squared distance to a fixed target, E(h) = sum((h - h*)^2)
    per sample. Its gradient is 2 (h - h*)."""
    t = Tensor(np.asarray(target, dtype=np.float32))

    def fn(h: Tensor) -> Tensor:
        diff = T.sub(h, t)
        flat = T.reshape(T.square(diff), (h.shape[0], -1))
        return T.tsum(flat, axis=1)

    return fn
