"""Earth Mover Distance (exact optimal bijection) and Chamfer Distance, with gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


@dataclass
class LossValue:
    value: float
    grad: np.ndarray  # gradient wrt the estimated cloud, same shape


def _as_cloud(a, name: str) -> np.ndarray:
    pts = np.asarray(a, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must be (N, 3), got {pts.shape}")
    if len(pts) == 0:
        raise ValueError(f"{name} is empty")
    return pts


def emd_assignment(est: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Index ``j = psi[i]`` of the template point matched to ``est[i]`` under the optimal bijection."""
    cost = cdist(est, template)
    rows, cols = linear_sum_assignment(cost)
    psi = np.empty(len(est), dtype=np.int64)
    psi[rows] = cols
    return psi


def emd(est, template) -> LossValue:
    """Mean Euclidean distance under the optimal bijection.

    The assignment is held fixed for the gradient; coincident matched pairs
    contribute zero gradient.
    """
    x = _as_cloud(est, "est")
    y = _as_cloud(template, "template")
    if len(x) != len(y):
        raise ValueError(f"EMD needs equal-size clouds, got {len(x)} and {len(y)}")
    n = len(x)
    diff = x - y[emd_assignment(x, y)]
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.where((dist > 0)[:, None], diff / (n * safe[:, None]), 0.0)
    return LossValue(float(dist.sum() / n), grad)


def chamfer(est, template) -> LossValue:
    """Mean nearest-neighbour distance est->template plus template->est."""
    x = _as_cloud(est, "est")
    y = _as_cloud(template, "template")
    d = cdist(x, y)
    nn_xy = d.argmin(axis=1)
    nn_yx = d.argmin(axis=0)
    diff_xy = x - y[nn_xy]
    diff_yx = x[nn_yx] - y
    dist_xy = np.linalg.norm(diff_xy, axis=1)
    dist_yx = np.linalg.norm(diff_yx, axis=1)
    value = dist_xy.mean() + dist_yx.mean()

    def unit(diff, dist):
        safe = np.where(dist > 0, dist, 1.0)
        return np.where((dist > 0)[:, None], diff / safe[:, None], 0.0)

    grad = unit(diff_xy, dist_xy) / len(x)
    np.add.at(grad, nn_yx, unit(diff_yx, dist_yx) / len(y))
    return LossValue(float(value), grad)


LOSSES = {"emd": emd, "chamfer": chamfer}


def batch_loss(name: str, est: np.ndarray, template: np.ndarray) -> LossValue:
    """Loss averaged over a batch ``(B, N, 3)``; gradient scaled accordingly."""
    fn = LOSSES[name]
    B = len(est)
    grads = np.empty(est.shape, dtype=np.float64)
    total = 0.0
    for b in range(B):
        lv = fn(est[b], template[b])
        total += lv.value
        grads[b] = lv.grad
    return LossValue(total / B, grads / B)
