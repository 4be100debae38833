"""Gradient-descent training loop with loss tracing and divergence abort."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .loss import AnchorKind, LAMBDA_REG
from .model import LinearLogisticModel, ScoringModel, TrainingInstance

DIVERGENCE_LIMIT = 1e6

# Wire format of the loss trace; the three cls columns are the positive,
# forced-negative, and random-negative groups in that order.
TRACE_FIELDS = ("epoch", "loss", "cls_i", "cls_j", "cls_k", "reg")


class TrainingDiverged(RuntimeError):
    """Loss exceeded the divergence limit or went non-finite."""


@dataclass(frozen=True)
class EpochRow:
    epoch: int
    loss: float
    cls_positive: float
    cls_forced_negative: float
    cls_random_negative: float
    reg: float

    def as_csv_row(self) -> list:
        return [self.epoch, f"{self.loss:.8f}", f"{self.cls_positive:.8f}",
                f"{self.cls_forced_negative:.8f}", f"{self.cls_random_negative:.8f}",
                f"{self.reg:.8f}"]


def train_epochs(model: ScoringModel, instances: list[TrainingInstance],
                 epochs: int, learning_rate: float,
                 lambda_reg: float = LAMBDA_REG,
                 divergence_limit: float = DIVERGENCE_LIMIT) -> list[EpochRow]:
    """Run plain gradient descent, one step per instance, in fixed order.

    Returns one row per epoch with the mean loss components across
    instances. Raises TrainingDiverged the moment an epoch's mean loss is
    non-finite or above the limit; the model is left at its last state
    for post-mortem inspection.
    """
    if not instances:
        raise ValueError("cannot train on an empty instance list")
    rows: list[EpochRow] = []
    for epoch in range(1, epochs + 1):
        sums = np.zeros(5, dtype=np.float64)
        for instance in instances:
            breakdown, grad = model.loss_and_grad(instance, lambda_reg)
            model.step(grad, learning_rate)
            sums += [breakdown.total, breakdown.cls_positive / breakdown.n,
                     breakdown.cls_forced_negative / breakdown.n,
                     breakdown.cls_random_negative / breakdown.n,
                     breakdown.reg_total]
        means = sums / len(instances)
        row = EpochRow(epoch, *[float(v) for v in means])
        rows.append(row)
        if not np.isfinite(row.loss) or row.loss > divergence_limit:
            raise TrainingDiverged(
                f"epoch {epoch}: loss {row.loss} exceeded limit {divergence_limit}")
    return rows


def write_trace(rows: list[EpochRow], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        for row in rows:
            writer.writerow(row.as_csv_row())


def make_toy_instance(rng: np.random.Generator, n_features: int = 3,
                      n_positive: int = 8, n_forced: int = 4, n_random: int = 8,
                      n_ignored: int = 2) -> TrainingInstance:
    """Small linearly separable batch for optimizer and gradient tests.

    Positive features cluster around +0.8 per dimension and negatives
    around -0.8, so a linear logistic head can drive the loss down.
    """
    def cluster(count: int, center: float) -> np.ndarray:
        return center + 0.3 * rng.standard_normal((count, n_features))

    features = np.vstack([
        cluster(n_positive, 0.8),
        cluster(n_forced, -0.8),
        cluster(n_random, -0.8),
        cluster(n_ignored, 0.8),
    ])
    kinds = ([AnchorKind.POSITIVE] * n_positive
             + [AnchorKind.FORCED_NEGATIVE] * n_forced
             + [AnchorKind.RANDOM_NEGATIVE] * n_random
             + [AnchorKind.IGNORED] * n_ignored)
    prob_targets = np.array([1.0] * n_positive
                            + [0.0] * (n_forced + n_random)
                            + [0.0] * n_ignored)
    delta_targets = np.zeros((len(kinds), 4))
    delta_targets[:n_positive] = 0.4 * rng.standard_normal((n_positive, 4))
    return TrainingInstance(features, kinds, prob_targets, delta_targets)


def new_reference_model(n_features: int = 3) -> LinearLogisticModel:
    return LinearLogisticModel(n_features)
