"""Evaluation metrics in millimeters over named template regions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import SkeletonTemplate
from .errors import RegionMismatch

REGION_ALIASES = {
    "fbody": "fbody", "ubody": "ubody", "ubody-h": "ubody-h", "ubody-f": "ubody-f",
    "lhand": "lhand", "rhand": "rhand",
}


@dataclass(frozen=True)
class RegionSpec:
    name: str
    vertices: np.ndarray
    joints: np.ndarray

    @classmethod
    def from_template(cls, tpl: SkeletonTemplate, name):
        key = REGION_ALIASES.get(name.lower().replace("_", "-").replace("−", "-"))
        if key is None or key not in tpl.regions:
            raise RegionMismatch(f"unknown region {name!r}; known: {sorted(tpl.regions)}")
        reg = tpl.regions[key]
        return cls(key, np.asarray(reg["vertices"]), np.asarray(reg["joints"]))


def _select(pred, gt, idx, kind):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim < 2 or pred.shape[-1] != 3:
        raise RegionMismatch(f"{kind} arrays differ or are not (..., N, 3): {pred.shape} vs {gt.shape}")
    if idx is None:
        return pred, gt
    idx = np.asarray(idx)
    if len(idx) == 0 or idx.min() < 0 or idx.max() >= pred.shape[-2]:
        raise RegionMismatch(f"region indices do not fit {pred.shape[-2]} {kind}")
    return pred[..., idx, :], gt[..., idx, :]


def _mean_dist_mm(a, b):
    return 1000.0 * np.mean(np.linalg.norm(a - b, axis=-1), axis=-1)


def mpjpe(pred_joints, gt_joints, region: RegionSpec | None = None):
    """Mean per-joint position error in mm (per frame if inputs are batched)."""
    p, g = _select(pred_joints, gt_joints, None if region is None else region.joints, "joint")
    return _mean_dist_mm(p, g)


def mpvpe(pred_vertices, gt_vertices, region: RegionSpec | None = None):
    p, g = _select(pred_vertices, gt_vertices, None if region is None else region.vertices, "vertex")
    return _mean_dist_mm(p, g)


def tr_v2v(pred_vertices, gt_vertices, region: RegionSpec | None = None):
    """Vertex error after removing each cloud's region centroid (rotation is kept)."""
    p, g = _select(pred_vertices, gt_vertices, None if region is None else region.vertices, "vertex")
    p = p - p.mean(axis=-2, keepdims=True)
    g = g - g.mean(axis=-2, keepdims=True)
    return _mean_dist_mm(p, g)
