"""Loss terms for half-labeled detection batches.

The classification loss sums binary cross-entropy over three disjoint
anchor groups (object positives, confirmed-background negatives, random
negatives) and normalizes by the combined count N. Box regression is a
per-component smooth L1 over positives only, normalized by the same N and
weighted by lambda. Ignored anchors contribute nothing anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

EPSILON = 1e-7
LAMBDA_REG = 1.0


class LossError(ValueError):
    """Raised when a batch cannot produce a defined loss."""


class AnchorKind(Enum):
    POSITIVE = "positive"
    FORCED_NEGATIVE = "forced_negative"
    RANDOM_NEGATIVE = "random_negative"
    IGNORED = "ignored"


COUNTED_KINDS = (AnchorKind.POSITIVE, AnchorKind.FORCED_NEGATIVE,
                 AnchorKind.RANDOM_NEGATIVE)


def bce(p: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Elementwise binary cross-entropy with probability clamping.

    Probabilities are clamped to [EPSILON, 1 - EPSILON] so saturated
    predictions stay finite.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), EPSILON, 1.0 - EPSILON)
    target = np.asarray(target, dtype=np.float64)
    return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))


def classification_loss(p: float, p_star: float) -> float:
    """Scalar binary cross-entropy for one anchor."""
    return float(bce(np.array([p]), np.array([p_star]))[0])


def localization_loss(t, t_star) -> float:
    """Smooth L1 summed over the four delta components."""
    diff = np.array([t.tx - t_star.tx, t.ty - t_star.ty,
                     t.tw - t_star.tw, t.th - t_star.th])
    return float(np.sum(smooth_l1(diff)))


def smooth_l1(x: np.ndarray) -> np.ndarray:
    """Elementwise smooth L1: quadratic inside the unit interval, linear outside."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(x < 1.0, 0.5 * x * x, x - 0.5)


def smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of smooth L1: the residual clamped to [-1, 1]."""
    return np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-group sums plus the effective batch count used for normalization."""

    cls_positive: float
    cls_forced_negative: float
    cls_random_negative: float
    reg: float
    n: int
    lambda_reg: float = LAMBDA_REG

    @property
    def cls_total(self) -> float:
        return (self.cls_positive + self.cls_forced_negative
                + self.cls_random_negative) / self.n

    @property
    def reg_total(self) -> float:
        return self.lambda_reg * self.reg / self.n

    @property
    def total(self) -> float:
        return self.cls_total + self.reg_total


def batch_loss(p: np.ndarray, deltas: np.ndarray, kinds: list[AnchorKind],
               prob_targets: np.ndarray, delta_targets: np.ndarray,
               lambda_reg: float = LAMBDA_REG, n: int | None = None) -> LossBreakdown:
    """Compute the combined loss for one sampled batch.

    Args:
        p: predicted objectness per anchor, shape (n,).
        deltas: predicted box offsets per anchor, shape (n, 4).
        kinds: group assignment per anchor; IGNORED rows are skipped.
        prob_targets: 1.0 for positives, 0.0 for both negative groups.
        delta_targets: encoded true offsets, only read on POSITIVE rows.
        lambda_reg: weight on the regression term.
        n: normalizer override (declared minibatch size). Defaults to the
            number of counted anchors actually present.

    Raises:
        LossError: if no anchors are in a counted group (N would be zero).
    """
    p = np.asarray(p, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    kinds_arr = np.array(kinds, dtype=object)
    if n is None:
        n = int(sum(1 for k in kinds if k in COUNTED_KINDS))
    if n <= 0:
        raise LossError("batch has no counted anchors; loss is undefined")

    sums = {}
    for kind in COUNTED_KINDS:
        mask = kinds_arr == kind
        sums[kind] = float(np.sum(bce(p[mask], prob_targets[mask]))) if mask.any() else 0.0

    pos_mask = kinds_arr == AnchorKind.POSITIVE
    if pos_mask.any():
        residual = deltas[pos_mask] - np.asarray(delta_targets, dtype=np.float64)[pos_mask]
        reg = float(np.sum(smooth_l1(residual)))
    else:
        reg = 0.0

    return LossBreakdown(sums[AnchorKind.POSITIVE], sums[AnchorKind.FORCED_NEGATIVE],
                         sums[AnchorKind.RANDOM_NEGATIVE], reg, n, lambda_reg)
