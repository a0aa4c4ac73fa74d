"""Synthetic signing data: pose samplers and keypoint sequences for round-trip tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rotations as rot
from .biomech import RomTable, clamp_joint_rotations, filter_body_frame, hand_penalty, rectify_hand_frame
from .body_model import (JOINT_NAMES, Camera, PoseParams, SkeletonTemplate, forward_kinematics, project)
from .errors import ValidationError
from .fitting import HANDEDNESS, KeypointFrame
from .penetration import CollisionProxies, penetration_loss
from .priors import PriorModel, decode, encode_axis_angle

# neutral signing posture: upper arms down and forward, elbows bent, hands in front of the chest
NEUTRAL_ARMS = {"shoulder": (50.0, 20.0, 0.0), "elbow": (110.0, 0.0, 0.0), "wrist": (0.0, 0.0, 0.0)}


def neutral_body_pose(tpl: SkeletonTemplate, rom: RomTable):
    body = np.zeros((tpl.body_joint_count, 3))
    for side in ("left", "right"):
        for j, ang in NEUTRAL_ARMS.items():
            name = f"{side}_{j}"
            a = np.radians(ang)
            if side == "left":
                a = a * np.where(_mirror_flags(rom[name].convention), -1.0, 1.0)
            body[tpl.index(name) - 1] = rot.matrix_to_axis_angle(rot.euler_to_matrix(a, rom[name].convention))
    return body


def _mirror_flags(convention):
    i, j, k, _ = rot.parse_convention(convention)
    return np.array([ax != 0 for ax in (i, j, k)])


def _arm_slots(tpl, rom):
    return [tpl.index(j) - 1 for j in rom.body_joints]


def clamp_body_pose(body, tpl: SkeletonTemplate, rom: RomTable):
    out = np.array(body, dtype=float)
    slots = _arm_slots(tpl, rom)
    out[slots] = clamp_joint_rotations(out[slots], rom, rom.body_joints)
    return out


def body_ok(body, tpl, rom, proxies=None, hands=None):
    pose = PoseParams.zeros(tpl.body_joint_count, tpl.hand_joint_count, tpl.n_shape)
    pose.body_pose = np.asarray(body, dtype=float)
    if hands is not None:
        pose.left_hand_pose, pose.right_hand_pose = hands
    if not filter_body_frame(pose, rom, None, tpl).accepted:
        return False
    if proxies is not None:
        joints, _ = forward_kinematics(tpl, pose)
        if float(penetration_loss(joints, proxies)) > 0:
            return False
    return True


def sample_body_pose(rng, tpl: SkeletonTemplate, rom: RomTable, arm_scale=0.35, trunk_scale=0.05,
                     max_tries=20):
    """Neutral posture plus noise, clamped to ROM and shrunk until the filter accepts."""
    neutral = neutral_body_pose(tpl, rom)
    noise = rng.normal(0.0, trunk_scale, neutral.shape)
    slots = _arm_slots(tpl, rom)
    noise[slots] = rng.normal(0.0, arm_scale, (len(slots), 3))
    for _ in range(max_tries):
        body = clamp_body_pose(neutral + noise, tpl, rom)
        if body_ok(body, tpl, rom):
            return body
        noise *= 0.6
    return neutral


def sample_hand_pose(rng, rom: RomTable, side="right", spread=0.5):
    """Per-finger curl shared across its three joints, small splay and twist."""
    out = np.zeros((len(rom.hand_joints), 3))
    curls = {}
    for i, name in enumerate(rom.hand_joint_names("right")):
        e = rom[name]
        finger = name.split("_")[1][:-1]
        c = curls.setdefault(finger, rng.uniform(0.0, 1.0))
        mid = 0.5 * (e.lower + e.upper)
        half = 0.5 * (e.upper - e.lower)
        ang = mid + spread * half * rng.uniform(-1, 1, 3)
        ang[0] = e.lower[0] + (e.upper[0] - e.lower[0]) * np.clip(0.1 + 0.6 * c + 0.1 * rng.normal(), 0.02, 0.98)
        out[i] = rot.matrix_to_axis_angle(rot.euler_to_matrix(ang, e.convention))
    out = rectify_hand_frame(out, rom, "right")
    return rot.mirror_axis_angle(out) if side == "left" else out


@dataclass
class GeneratorConfig:
    n_frames: int = 30
    mode: str = "random_walk"  # or "prior"
    handedness: str = "two-handed"
    noise_px: float = 0.0
    confidence_min: float = 1.0  # confidences drawn from U(confidence_min, 1)
    dropout: float = 0.0  # probability a joint is dropped (confidence 0)
    smoothing: float = 0.8  # low-pass factor on the random-walk velocity
    step: float = 0.05  # random-walk step scale (radians, or latent units in prior mode)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValidationError("n_frames must be positive")
        if self.mode not in ("random_walk", "prior"):
            raise ValidationError("mode must be random_walk or prior")
        if self.handedness not in HANDEDNESS:
            raise ValidationError(f"handedness must be one of {HANDEDNESS}")
        if self.noise_px < 0 or not 0 <= self.confidence_min <= 1 or not 0 <= self.dropout < 1:
            raise ValidationError("invalid noise, confidence or dropout setting")
        if not 0 <= self.smoothing < 1:
            raise ValidationError("smoothing must lie in [0, 1)")


def _walk(rng, n, dim, smoothing, step):
    vel = np.zeros(dim)
    out = np.zeros((n, dim))
    for t in range(1, n):
        vel = smoothing * vel + (1.0 - smoothing) * rng.normal(0.0, step, dim)
        out[t] = out[t - 1] + vel
    return out


def _accept_hand(h, rom, side, proxies, tpl):
    return hand_penalty(h, rom, side) == 0.0


def _decoded_hand(model, eps, side):
    aa = np.array(decode(model, eps)[2])
    return rot.mirror_axis_angle(aa) if side == "left" else aa


def _walk_poses_random(rng, tpl, rom, proxies, cfg, max_starts=50):
    """Smoothed random walks in pose space.  A frame that cannot be made
    admissible by pulling the body toward neutral repeats the previous one."""
    for _ in range(max_starts):
        body0 = sample_body_pose(rng, tpl, rom, arm_scale=0.2)
        hands0 = [sample_hand_pose(rng, rom, s, spread=0.3) for s in ("left", "right")]
        if body_ok(body0, tpl, rom, proxies, hands0):
            break
    else:
        raise ValidationError("could not sample an admissible starting pose")
    dim = body0.size + 2 * hands0[0].size
    walk = _walk(rng, cfg.n_frames, dim, cfg.smoothing, cfg.step)
    neutral = neutral_body_pose(tpl, rom)
    nb = body0.size
    poses = []
    prev = (body0, hands0[0], hands0[1])
    for t in range(cfg.n_frames):
        body = clamp_body_pose(body0 + walk[t, :nb].reshape(-1, 3), tpl, rom)
        hl = rectify_hand_frame(hands0[0] + walk[t, nb:nb + 45].reshape(-1, 3), rom, "left")
        hr = rectify_hand_frame(hands0[1] + walk[t, nb + 45:].reshape(-1, 3), rom, "right")
        for _ in range(30):
            if body_ok(body, tpl, rom, proxies, (hl, hr)):
                prev = (body, hl, hr)
                break
            body = clamp_body_pose(neutral + 0.5 * (body - neutral), tpl, rom)
        poses.append(prev)
    return poses


def _walk_poses_prior(rng, tpl, rom, proxies, cfg, priors, anchors):
    """Latent random walks around encoded anchor poses, accepting only decoded
    poses that pass the filter, have zero hand penalty and no collisions."""
    body_model, hand_model = priors
    if anchors is None:
        anchors = (neutral_body_pose(tpl, rom), sample_hand_pose(rng, rom, "left", 0.3),
                   sample_hand_pose(rng, rom, "right", 0.3))
    zb0 = np.array(encode_axis_angle(body_model, anchors[0])[0])
    el0 = np.array(encode_axis_angle(hand_model, rot.mirror_axis_angle(anchors[1]))[0])
    er0 = np.array(encode_axis_angle(hand_model, anchors[2])[0])
    sizes = (zb0.size, el0.size, er0.size)
    state = [zb0, el0, er0]
    vel = [np.zeros(n) for n in sizes]
    poses = []
    current = None
    for t in range(cfg.n_frames):
        for k in range(3):
            vel[k] = cfg.smoothing * vel[k] + (1.0 - cfg.smoothing) * rng.normal(0.0, cfg.step, sizes[k])
        proposal = [s + v for s, v in zip(state, vel)]
        for _ in range(12):
            body = np.array(decode(body_model, proposal[0])[2])
            hl = _decoded_hand(hand_model, proposal[1], "left")
            hr = _decoded_hand(hand_model, proposal[2], "right")
            ok = (_accept_hand(hl, rom, "left", proxies, tpl) and _accept_hand(hr, rom, "right", proxies, tpl)
                  and body_ok(body, tpl, rom, proxies, (hl, hr)))
            if ok:
                state = proposal
                current = (body, hl, hr)
                break
            proposal = [0.5 * (p + s) for p, s in zip(proposal, state)]
            vel = [0.5 * v for v in vel]
        if current is None:
            raise ValidationError("prior anchors do not decode to admissible poses")
        poses.append(current)
    return poses, state


def keypoint_frames(gt_poses, tpl: SkeletonTemplate, camera: Camera, cfg: GeneratorConfig, rng):
    frames = []
    names = list(JOINT_NAMES)
    for t, pose in enumerate(gt_poses):
        joints, _ = forward_kinematics(tpl, pose)
        uv = project(camera, joints)
        if cfg.noise_px > 0:
            uv = uv + rng.normal(0.0, cfg.noise_px, uv.shape)
        conf = np.ones(len(names))
        if cfg.confidence_min < 1:
            conf = rng.uniform(cfg.confidence_min, 1.0, len(names))
        if cfg.dropout > 0:
            conf[rng.random(len(names)) < cfg.dropout] = 0.0
        frames.append(KeypointFrame(names, uv, conf, np.ones(len(names)), t, cfg.handedness))
    return frames


def synth_sequence(tpl: SkeletonTemplate, camera: Camera, rom: RomTable, cfg: GeneratorConfig, seed=0,
                   proxies: CollisionProxies | None = None, priors: tuple[PriorModel, PriorModel] | None = None,
                   anchors=None):
    """Ground-truth poses and keypoint frames.  Reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    if cfg.mode == "prior":
        if priors is None:
            raise ValidationError("prior mode needs (body_prior, hand_prior)")
        raw, _ = _walk_poses_prior(rng, tpl, rom, proxies, cfg, priors, anchors)
    else:
        raw = _walk_poses_random(rng, tpl, rom, proxies, cfg)
    gt = []
    for body, hl, hr in raw:
        p = PoseParams.zeros(tpl.body_joint_count, tpl.hand_joint_count, tpl.n_shape)
        p.body_pose, p.left_hand_pose, p.right_hand_pose = body, hl, hr
        gt.append(p)
    frames = keypoint_frames(gt, tpl, camera, cfg, rng)
    return gt, frames


def perturb_pose(pose: PoseParams, rng, body_sigma=0.05, hand_sigma=0.05, root_sigma=0.02):
    """Initialization for fitting: ground truth plus small Gaussian noise."""
    p = pose.copy()
    p.body_pose = p.body_pose + rng.normal(0.0, body_sigma, p.body_pose.shape)
    p.left_hand_pose = p.left_hand_pose + rng.normal(0.0, hand_sigma, p.left_hand_pose.shape)
    p.right_hand_pose = p.right_hand_pose + rng.normal(0.0, hand_sigma, p.right_hand_pose.shape)
    p.root_orient = p.root_orient + rng.normal(0.0, root_sigma, 3)
    p.root_trans = p.root_trans + rng.normal(0.0, root_sigma, 3)
    return p


def training_poses(rng, tpl: SkeletonTemplate, rom: RomTable, n, kind):
    """Independent admissible poses for prior training: (n, 21, 3) body or
    (n, 15, 3) right-frame hand poses."""
    if kind == "body":
        return np.stack([sample_body_pose(rng, tpl, rom) for _ in range(n)])
    if kind == "hand":
        return np.stack([sample_hand_pose(rng, rom, "right") for _ in range(n)])
    raise ValidationError(f"unknown kind {kind!r}")
