"""The four training objective terms and their weighted composition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


def loss_pred(yhat: Tensor, labels: np.ndarray) -> Tensor:
    """Mean squared prediction error over the batch."""
    return T.tmean(T.square(T.sub(yhat, Tensor(labels))))


def loss_recon(h_true: Tensor, h_hat: Tensor) -> Tensor:
    """Mean squared reconstruction error, averaged over all elements."""
    return T.tmean(T.square(T.sub(h_true, h_hat)))


def loss_energy(energies: Tensor) -> Tensor:
    """Mean final energy over reconstructed (sample, modality) pairs."""
    return T.tmean(energies)


def loss_joint(z_full: Tensor, z_recon: Tensor) -> Tensor:
    """Mean squared difference between the complete-data bottleneck and the
    bottleneck recomputed from reconstruction-completed encodings."""
    return T.tmean(T.square(T.sub(z_full, z_recon)))


@dataclass
class LossBreakdown:
    pred: float
    recon: float
    energy: float
    joint: float
    total: float

    def as_row(self):
        return [self.pred, self.recon, self.energy, self.joint, self.total]

    def finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_row())
