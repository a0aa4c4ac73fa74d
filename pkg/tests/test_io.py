from __future__ import annotations

import json

import numpy as np
import pytest

from dexfit import io
from dexfit.body_model import Camera, PoseParams
from dexfit.errors import ValidationError
from dexfit.fitting import FitResult, KeypointFrame


def random_pose(rng):
    return PoseParams.from_vector(rng.normal(0, 0.3, PoseParams.zeros().to_vector().size))


def test_pose_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    poses = [random_pose(rng) for _ in range(3)]
    io.save_poses(tmp_path / "p.json", poses, [4, 7, 9])
    idx, back = io.load_poses(tmp_path / "p.json")
    assert idx == [4, 7, 9]
    assert all(np.array_equal(a.to_vector(), b.to_vector()) for a, b in zip(poses, back))


def test_camera_round_trip(tmp_path):
    cam = Camera.default_front(2.0, 0.1)
    io.save_camera(tmp_path / "c.json", cam)
    back = io.load_camera(tmp_path / "c.json")
    for k in ("focal", "principal", "rotation", "translation"):
        assert np.array_equal(getattr(cam, k), getattr(back, k))


def test_keypoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    names = ["a", "b", "c"]
    frames = [KeypointFrame(names, rng.normal(0, 100, (3, 2)), rng.uniform(0, 1, 3), rng.uniform(0.5, 2, 3), i,
                            "one-handed-left") for i in range(2)]
    io.save_keypoints(tmp_path / "k.json", frames)
    back = io.load_keypoints(tmp_path / "k.json")
    for a, b in zip(frames, back):
        assert a.joint_names == b.joint_names and a.index == b.index and a.handedness == b.handedness
        for k in ("keypoints", "confidence", "weights"):
            assert np.array_equal(getattr(a, k), getattr(b, k))
    with pytest.raises(ValidationError):
        io.save_keypoints(tmp_path / "empty.json", [])


def test_fit_result_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    ok = FitResult(0, random_pose(rng), rng.normal(size=5), rng.normal(size=3), rng.normal(size=3), 1.5,
                   {"joint": 1.0}, {"lambdas": [1.0] * 6}, 12, True, "gtol", [2.0, 1.5])
    bad = FitResult(1, random_pose(rng), np.zeros(5), np.zeros(3), np.zeros(3), float("nan"), {}, {}, 0, False,
                    "failed", [], "boom")
    io.save_fit_results(tmp_path / "r.json", [ok, bad])
    a, b = io.load_fit_results(tmp_path / "r.json")
    assert np.array_equal(a.pose.to_vector(), ok.pose.to_vector()) and np.array_equal(a.zbar, ok.zbar)
    assert a.objective == 1.5 and a.trace == [2.0, 1.5] and a.status == "gtol" and a.converged
    assert np.isnan(b.objective) and b.error == "boom"
    # fit results double as pose files
    idx, poses = io.load_poses(tmp_path / "r.json")
    assert idx == [0, 1] and np.array_equal(poses[1].to_vector(), bad.pose.to_vector())


def test_schema_errors(tmp_path):
    p = tmp_path / "x.json"
    with pytest.raises(ValidationError):
        io.load_poses(tmp_path / "missing.json")
    p.write_text("{broken")
    with pytest.raises(ValidationError):
        io.load_poses(p)
    p.write_text(json.dumps({"schema_version": 2, "frames": []}))
    with pytest.raises(ValidationError):
        io.load_poses(p)
    p.write_text(json.dumps({"schema_version": 1}))
    with pytest.raises(ValidationError):
        io.load_poses(p)
    p.write_text(json.dumps({"schema_version": 1, "frames": [{"pose": [0.0] * 10}]}))
    with pytest.raises(ValidationError):
        io.load_poses(p)
    p.write_text(json.dumps({"schema_version": 1, "focal": [1, 1]}))
    with pytest.raises(ValidationError):
        io.load_camera(p)
    p.write_text("[1, 2]")
    with pytest.raises(ValidationError):
        io.load_json_config(p)
