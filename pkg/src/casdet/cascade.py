"""Layer-wise denoising curriculum: thresholds, weights, feature modulation.

Each decoder layer gets an IoU threshold that rises linearly with depth; a
denoising query's reconstruction quality relative to that threshold maps
through a sigmoid to a training weight, which scales the feature entering
the denoising prediction heads. Weights are constants of differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encode import np_sigmoid
from .geom import box_cxcywh_to_xyxy, iou_xyxy
from .tensor import Tensor


@dataclass(frozen=True)
class CascadeConfig:
    """Threshold schedule and weighting temperature.

    ``force_omega`` overrides every computed weight with a constant; setting
    it to 1.0 reproduces uniform denoising through the cascade code path.
    """

    theta1: float = 0.3
    delta_theta: float = 0.6
    n_layers: int = 6
    tau: float = 0.1
    force_omega: float | None = None

    def __post_init__(self):
        if not (0.0 < self.theta1 < 1.0):
            raise ValueError("theta1 must be in (0, 1)")
        if self.theta1 + self.delta_theta > 1.0 + 1e-12:
            raise ValueError("theta1 + delta_theta must not exceed 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")


def threshold_schedule(cfg: CascadeConfig) -> np.ndarray:
    """Per-layer thresholds rising linearly from theta1 by delta_theta total."""
    if cfg.n_layers == 1:
        return np.array([cfg.theta1])
    steps = np.arange(cfg.n_layers) / (cfg.n_layers - 1)
    return cfg.theta1 + cfg.delta_theta * steps


def dn_weight(iou, theta_l: float, tau: float):
    """Sigmoid weighting of reconstruction quality against a threshold."""
    return np_sigmoid((np.asarray(iou, dtype=np.float64) - theta_l) / tau)


def layer_dn_weights(dn_pred_boxes: np.ndarray, gt_boxes: np.ndarray, theta_l: float, tau: float) -> np.ndarray:
    """Weights for grouped denoising predictions at one layer.

    ``dn_pred_boxes`` is (..., n_gt, 4) center/size; query j pairs with GT j
    (identity correspondence, no matching). Returns weights of shape (...,
    n_gt).
    """
    dn_pred_boxes = np.asarray(dn_pred_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if dn_pred_boxes.shape[-2] != gt_boxes.shape[0]:
        raise ValueError(
            f"prediction count {dn_pred_boxes.shape[-2]} does not match GT count {gt_boxes.shape[0]}"
        )
    ious = iou_xyxy(box_cxcywh_to_xyxy(dn_pred_boxes), box_cxcywh_to_xyxy(gt_boxes))
    return dn_weight(ious, theta_l, tau)


def modulate(feature: Tensor, omega) -> Tensor:
    """Scale features by their weights; omega is detached from the graph."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim and omega.shape == feature.shape[:-1]:
        omega = omega[..., None]
    return feature * Tensor(omega)
