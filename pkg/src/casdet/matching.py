"""One-to-one assignment between predictions and ground truth.

The classification part of the cost is modulated by localization quality so
that matching prefers better-localized predictions; box terms are plain L1
and GIoU complements. The assignment itself is a linear sum assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geom import box_cxcywh_to_xyxy, giou_matrix

PROB_EPS = 1e-7


@dataclass(frozen=True)
class MatchConfig:
    """Cost coefficients (classification, L1, GIoU), coupling and focal power."""

    c_cls: float = 2.0
    c_l1: float = 5.0
    c_giou: float = 2.0
    beta: float = 0.5
    gamma: float = 2.0


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment on a rectangular cost matrix.

    Returns (row, col) pairs sorted by row; with fewer rows than columns some
    columns stay unmatched and vice versa. An empty matrix yields no pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def stable_cls_cost(p, s_prime, gamma: float = 2.0, beta: float = 0.5) -> np.ndarray:
    """Localization-modulated classification cost, lower is better.

    ``p`` is the predicted probability of the candidate class, ``s_prime`` a
    rescaled localization score in [0, 1]; the effective confidence is
    q = p * s_prime**beta, clamped away from {0, 1}, and the cost is
    |1-q|^gamma * BCE(q, 1) - q^gamma * BCE(1-q, 1), strictly decreasing in q.
    """
    p = np.asarray(p, dtype=np.float64)
    s_prime = np.clip(np.asarray(s_prime, dtype=np.float64), 0.0, 1.0)
    q = np.clip(p * s_prime**beta, PROB_EPS, 1.0 - PROB_EPS)
    return (1.0 - q) ** gamma * (-np.log(q)) - q**gamma * (-np.log(1.0 - q))


def match_cost_matrix(
    pred_boxes: np.ndarray,
    pred_probs: np.ndarray,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    cfg: MatchConfig,
) -> np.ndarray:
    """Pairwise matching cost: (n_pred, n_gt).

    Boxes are center/size; ``pred_probs`` is (n_pred, n_classes) of per-class
    probabilities. The localization score feeding the classification term is
    GIoU rescaled to [0, 1].
    """
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64)
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    if gt_boxes.shape[0] == 0:
        raise ValueError("gt_boxes must be nonempty")

    giou = giou_matrix(box_cxcywh_to_xyxy(pred_boxes), box_cxcywh_to_xyxy(gt_boxes))
    s_prime = (giou + 1.0) / 2.0
    p = pred_probs[:, gt_labels]
    cls_cost = stable_cls_cost(p, s_prime, gamma=cfg.gamma, beta=cfg.beta)
    l1 = np.abs(pred_boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
    return cfg.c_cls * cls_cost + cfg.c_l1 * l1 + cfg.c_giou * (1.0 - giou)
