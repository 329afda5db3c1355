"""Point-to-point ICP with kd-tree correspondences and an SVD (Kabsch) solver."""

from __future__ import annotations

import time

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .pcrnet import DEFAULT_EPS, RegistrationResult

ICP_MAX_ITER = 100


class DegenerateCorrespondences(ValueError):
    pass


def kabsch_best_fit(src: np.ndarray, dst: np.ndarray, correspondences=None) -> geo.RigidTransform:
    """Least-squares rigid transform mapping ``src[i]`` onto ``dst[j]`` for each pair ``(i, j)``.

    With ``correspondences=None`` the points are paired by index.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if correspondences is not None:
        pairs = np.asarray(correspondences, dtype=np.int64).reshape(-1, 2)
        src, dst = src[pairs[:, 0]], dst[pairs[:, 1]]
    if src.shape != dst.shape or len(src) < 3:
        raise DegenerateCorrespondences("need at least 3 matched pairs")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    H = a.T @ b
    U, S, Vt = np.linalg.svd(H)
    # collinear or coincident sets leave two singular values at ~0
    if S[1] <= 1e-12 * max(S[0], 1.0):
        raise DegenerateCorrespondences("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return geo.RigidTransform(R, mu_d - R @ mu_s)


def nearest_neighbors(tree: cKDTree, queries: np.ndarray):
    """Nearest tree point for each query; exact distance ties go to the lower index."""
    k = min(2, tree.n)
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        return dist, idx
    tie = dist[:, 1] == dist[:, 0]
    best = np.where(tie, np.minimum(idx[:, 0], idx[:, 1]), idx[:, 0])
    return dist[:, 0], best


def icp_register(
    source: np.ndarray,
    template: np.ndarray,
    max_iter: int = ICP_MAX_ITER,
    eps: float = DEFAULT_EPS,
) -> RegistrationResult:
    """Align ``source`` onto ``template``.

    ``residuals[i]`` is the mean squared correspondence distance found at
    iteration ``i``, before that iteration's update.
    """
    start = time.perf_counter()
    tmpl = np.asarray(template, dtype=np.float64)
    src = np.asarray(source, dtype=np.float64)
    if len(src) == 0 or len(tmpl) == 0:
        raise ValueError("empty cloud")
    tree = cKDTree(tmpl)
    total = geo.RigidTransform.identity()
    steps: list[geo.RigidTransform] = []
    residuals: list[float] = []
    converged = False
    for _ in range(max_iter):
        dist, idx = nearest_neighbors(tree, src)
        residuals.append(float(np.mean(dist**2)))
        step = kabsch_best_fit(src, tmpl[idx])
        steps.append(step)
        prev, total = total, geo.compose(step, total)
        src = geo.apply_transform(step, src)
        if geo.convergence_delta(total, prev) < eps:
            converged = True
            break
    elapsed = time.perf_counter() - start
    return RegistrationResult(total, steps, len(steps), converged, elapsed, residuals)
