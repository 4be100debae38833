"""Reference scoring model: independent linear heads for objectness and box offsets.

The model is deliberately tiny so analytic gradients can be audited
against finite differences: with d input features it has exactly
5d + 5 parameters (d + 1 for the logistic head, 4d + 4 for the offsets).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .loss import AnchorKind, LossBreakdown, batch_loss, smooth_l1_grad


@dataclass
class TrainingInstance:
    """One sampled batch ready for the optimizer.

    delta_targets rows are only meaningful where kinds is POSITIVE.
    """

    features: np.ndarray          # (n, d)
    kinds: list[AnchorKind]
    prob_targets: np.ndarray      # (n,)
    delta_targets: np.ndarray     # (n, 4)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.features.shape[0]
        if not (len(self.kinds) == n == self.prob_targets.shape[0]
                == self.delta_targets.shape[0]):
            raise ValueError("instance arrays disagree on batch size")


class ScoringModel(Protocol):
    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def loss_and_grad(self, instance: TrainingInstance,
                      lambda_reg: float) -> tuple[LossBreakdown, np.ndarray]: ...

    def get_params(self) -> np.ndarray: ...

    def set_params(self, params: np.ndarray) -> None: ...


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LinearLogisticModel:
    """p = sigmoid(w.x + b); offsets t = W.x + c."""

    def __init__(self, n_features: int):
        if n_features < 1:
            raise ValueError("model needs at least one feature")
        self.d = n_features
        self.w = np.zeros(n_features, dtype=np.float64)
        self.b = 0.0
        self.W = np.zeros((4, n_features), dtype=np.float64)
        self.c = np.zeros(4, dtype=np.float64)

    @property
    def n_params(self) -> int:
        return 5 * self.d + 5

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.w, [self.b], self.W.ravel(), self.c])

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        d = self.d
        self.w = params[:d].copy()
        self.b = float(params[d])
        self.W = params[d + 1:d + 1 + 4 * d].reshape(4, d).copy()
        self.c = params[d + 1 + 4 * d:].copy()

    def predict(self, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(features, dtype=np.float64)
        p = sigmoid(X @ self.w + self.b)
        deltas = X @ self.W.T + self.c
        return p, deltas

    def loss_and_grad(self, instance: TrainingInstance,
                      lambda_reg: float = 1.0) -> tuple[LossBreakdown, np.ndarray]:
        """Analytic gradient of the batch loss in get_params() layout.

        Ignored rows get exactly zero gradient through both heads.
        """
        X = np.asarray(instance.features, dtype=np.float64)
        p, deltas = self.predict(X)
        breakdown = batch_loss(p, deltas, instance.kinds, instance.prob_targets,
                               instance.delta_targets, lambda_reg)
        n_eff = breakdown.n

        counted = np.array([k is not AnchorKind.IGNORED for k in instance.kinds])
        dz = np.where(counted, p - instance.prob_targets, 0.0) / n_eff
        grad_w = X.T @ dz
        grad_b = float(dz.sum())

        pos = np.array([k is AnchorKind.POSITIVE for k in instance.kinds])
        dT = np.zeros_like(deltas)
        if pos.any():
            residual = deltas[pos] - instance.delta_targets[pos]
            dT[pos] = lambda_reg * smooth_l1_grad(residual) / n_eff
        grad_W = dT.T @ X
        grad_c = dT.sum(axis=0)

        grad = np.concatenate([grad_w, [grad_b], grad_W.ravel(), grad_c])
        return breakdown, grad

    def step(self, grad: np.ndarray, learning_rate: float) -> None:
        self.set_params(self.get_params() - learning_rate * grad)
