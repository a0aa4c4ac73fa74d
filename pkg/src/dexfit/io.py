"""Versioned JSON file formats.  Everything on disk is in meters and radians."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .body_model import Camera, PoseParams, SkeletonTemplate, build_toy_template, load_template
from .errors import ValidationError
from .fitting import FitResult, KeypointFrame

SCHEMA_VERSION = 1
POSE_LAYOUT = "root_orient(3) root_trans(3) body(21x3) left_hand(15x3) right_hand(15x3) shape(S)"


def _read(path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict) or data.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"{path}: missing or unsupported schema_version")
    return data


def _write(path, data):
    text = json.dumps(data, indent=1)
    if path is None or str(path) == "-":
        return text
    Path(path).write_text(text + "\n")
    return text


def _need(d, key, path):
    if key not in d:
        raise ValidationError(f"{path}: missing field {key!r}")
    return d[key]


# ---------------------------------------------------------------- templates


def template_or_default(path=None) -> SkeletonTemplate:
    return build_toy_template() if path is None else load_template(path)


# -------------------------------------------------------------------- poses


def poses_to_dict(poses, indices=None, kind="poses"):
    indices = range(len(poses)) if indices is None else indices
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "layout": POSE_LAYOUT,
        "frames": [{"index": int(i), "pose": p.to_vector().tolist()} for i, p in zip(indices, poses)],
    }


def save_poses(path, poses, indices=None):
    return _write(path, poses_to_dict(poses, indices))


def load_poses(path):
    """Pose frames from a pose file or a fit-result file: (indices, [PoseParams])."""
    d = _read(path)
    frames = _need(d, "frames", path)
    idx, poses = [], []
    for fr in frames:
        idx.append(int(_need(fr, "index", path)))
        poses.append(PoseParams.from_vector(_need(fr, "pose", path)))
    return idx, poses


# ------------------------------------------------------------------- camera


def save_camera(path, camera: Camera):
    return _write(path, {"schema_version": SCHEMA_VERSION, **camera.to_dict()})


def load_camera(path) -> Camera:
    d = _read(path)
    try:
        return Camera.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: bad camera ({exc})") from None


# ---------------------------------------------------------------- keypoints


def save_keypoints(path, frames):
    if not frames:
        raise ValidationError("no frames to write")
    names = list(frames[0].joint_names)
    return _write(path, {
        "schema_version": SCHEMA_VERSION,
        "units": "pixels",
        "joint_names": names,
        "frames": [
            {
                "index": f.index,
                "handedness": f.handedness,
                "keypoints": f.keypoints.tolist(),
                "confidence": f.confidence.tolist(),
                "weights": f.weights.tolist(),
            }
            for f in frames
        ],
    })


def load_keypoints(path):
    d = _read(path)
    names = list(_need(d, "joint_names", path))
    out = []
    for fr in _need(d, "frames", path):
        n = len(names)
        out.append(KeypointFrame(
            names,
            np.asarray(_need(fr, "keypoints", path), dtype=float),
            np.asarray(fr.get("confidence", [1.0] * n), dtype=float),
            np.asarray(fr.get("weights", [1.0] * n), dtype=float),
            int(_need(fr, "index", path)),
            fr.get("handedness", "two-handed"),
        ))
    return out


# -------------------------------------------------------------- fit results


def save_fit_results(path, results, meta=None):
    frames = []
    for r in results:
        frames.append({
            "index": r.index,
            "pose": r.pose.to_vector().tolist(),
            "zbar": np.asarray(r.zbar).tolist(),
            "eps_l": np.asarray(r.eps_l).tolist(),
            "eps_r": np.asarray(r.eps_r).tolist(),
            "objective": None if not np.isfinite(r.objective) else r.objective,
            "terms": r.terms,
            "iterations": r.iterations,
            "converged": r.converged,
            "status": r.status,
            "trace": r.trace,
            "error": r.error,
        })
    weights = results[0].weights if results else {}
    return _write(path, {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_result",
        "layout": POSE_LAYOUT,
        "weights": weights,
        "meta": meta or {},
        "frames": frames,
    })


def load_fit_results(path):
    d = _read(path)
    out = []
    for fr in _need(d, "frames", path):
        obj = fr.get("objective")
        out.append(FitResult(
            int(fr["index"]), PoseParams.from_vector(fr["pose"]), np.asarray(fr["zbar"]),
            np.asarray(fr["eps_l"]), np.asarray(fr["eps_r"]), float("nan") if obj is None else obj,
            fr.get("terms", {}), d.get("weights", {}), fr.get("iterations", 0), fr.get("converged", False),
            fr.get("status", ""), fr.get("trace", []), fr.get("error"),
        ))
    return out


def load_json_config(path):
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ValidationError(f"config {path} must be a JSON object")
    return d
