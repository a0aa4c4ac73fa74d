"""Toy-scale SMPL-X-style articulated body.

Joint layout follows SMPL-X without the face joints: pelvis, 21 body joints,
15 left-hand joints, 15 right-hand joints (52 posed joints), followed by 11
unposed end sites (head top and ten fingertips) that exist so that distal
rotations are observable from keypoints.

The same forward-kinematics and skinning code runs on numpy arrays and on
autodiff ``Var``s; the batched ``*_batch`` functions are what the priors and
the fitter use.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import BehindCamera, DimensionMismatch, ValidationError
from .rotations import axis_angle_to_matrix

TEMPLATE_SCHEMA_VERSION = 1

BODY_JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
]
FINGER_JOINTS = [f"{f}{i}" for f in ("index", "middle", "pinky", "ring", "thumb") for i in (1, 2, 3)]
TIP_FINGERS = ["thumb", "index", "middle", "ring", "pinky"]
JOINT_NAMES = (
    BODY_JOINT_NAMES
    + [f"left_{n}" for n in FINGER_JOINTS]
    + [f"right_{n}" for n in FINGER_JOINTS]
    + ["head_top"]
    + [f"left_{f}_tip" for f in TIP_FINGERS]
    + [f"right_{f}_tip" for f in TIP_FINGERS]
)
LOWER_BODY_JOINTS = [
    "left_hip", "right_hip", "left_knee", "right_knee",
    "left_ankle", "right_ankle", "left_foot", "right_foot",
]

N_BODY = 21
N_HAND = 15
N_POSED = 1 + N_BODY + 2 * N_HAND


@dataclass
class SkeletonTemplate:
    joint_names: list
    parents: np.ndarray  # (K,) int, -1 for root
    offsets: np.ndarray  # (K, 3) rest offsets from parent; root offset is its position
    vertices: np.ndarray  # (N, 3)
    skin_weights: np.ndarray  # (N, K)
    shape_dirs: np.ndarray  # (N, 3, S)
    joint_regressor: np.ndarray  # (K, N)
    regions: dict = field(default_factory=dict)  # name -> {"vertices": idx, "joints": idx}
    body_joint_count: int = N_BODY
    hand_joint_count: int = N_HAND

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=int)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.skin_weights = np.asarray(self.skin_weights, dtype=float)
        self.shape_dirs = np.asarray(self.shape_dirs, dtype=float)
        self.joint_regressor = np.asarray(self.joint_regressor, dtype=float)
        self.regions = {
            k: {kk: np.asarray(vv, dtype=int) for kk, vv in v.items()} for k, v in self.regions.items()
        }
        self._validate()
        self._levels = _kinematic_levels(self.parents)

    def _validate(self):
        k = len(self.joint_names)
        n = self.vertices.shape[0]
        if self.parents.shape != (k,) or self.offsets.shape != (k, 3):
            raise ValidationError("joint arrays disagree with joint_names")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1 or roots[0] != 0:
            raise ValidationError("template needs exactly one root at index 0")
        if np.any(self.parents[1:] >= np.arange(1, k)):
            raise ValidationError("joints must be topologically sorted (parent < child)")
        if self.skin_weights.shape != (n, k):
            raise ValidationError(f"skin_weights shape {self.skin_weights.shape} != {(n, k)}")
        if np.any(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("skin weight rows must sum to 1")
        if np.any(np.count_nonzero(self.skin_weights, axis=1) > 4):
            raise ValidationError("at most 4 influences per vertex")
        if self.shape_dirs.shape[:2] != (n, 3):
            raise ValidationError("shape_dirs must be (N, 3, S)")
        if self.joint_regressor.shape != (k, n):
            raise ValidationError("joint_regressor must be (K, N)")
        for name, reg in self.regions.items():
            for kind, size in (("vertices", n), ("joints", k)):
                idx = reg.get(kind, np.zeros(0, int))
                if len(idx) == 0 or idx.min() < 0 or idx.max() >= size:
                    raise ValidationError(f"region {name!r} has invalid {kind}")

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_shape(self):
        return self.shape_dirs.shape[2]

    @property
    def n_posed(self):
        return 1 + self.body_joint_count + 2 * self.hand_joint_count

    def index(self, name):
        return self.joint_names.index(name)

    def rest_joints(self):
        return self.joint_regressor @ self.vertices

    def body_height(self):
        return float(np.ptp(self.vertices[:, 1]))


@dataclass
class PoseParams:
    root_orient: np.ndarray
    root_trans: np.ndarray
    body_pose: np.ndarray  # (21, 3)
    left_hand_pose: np.ndarray  # (15, 3)
    right_hand_pose: np.ndarray  # (15, 3)
    shape: np.ndarray

    def __post_init__(self):
        for name in ("root_orient", "root_trans", "body_pose", "left_hand_pose", "right_hand_pose", "shape"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite values in {name}")
            setattr(self, name, arr)
        self.root_orient = self.root_orient.reshape(3)
        self.root_trans = self.root_trans.reshape(3)
        self.body_pose = self.body_pose.reshape(-1, 3)
        self.left_hand_pose = self.left_hand_pose.reshape(-1, 3)
        self.right_hand_pose = self.right_hand_pose.reshape(-1, 3)

    @classmethod
    def zeros(cls, n_body=N_BODY, n_hand=N_HAND, n_shape=10):
        return cls(np.zeros(3), np.zeros(3), np.zeros((n_body, 3)), np.zeros((n_hand, 3)),
                   np.zeros((n_hand, 3)), np.zeros(n_shape))

    def full_pose(self):
        """(P, 3) local axis-angles: root, body, left hand, right hand."""
        return np.concatenate(
            [self.root_orient[None], self.body_pose, self.left_hand_pose, self.right_hand_pose]
        )

    def to_vector(self):
        return np.concatenate(
            [self.root_orient, self.root_trans, self.body_pose.ravel(),
             self.left_hand_pose.ravel(), self.right_hand_pose.ravel(), self.shape]
        )

    @classmethod
    def from_vector(cls, vec, n_body=N_BODY, n_hand=N_HAND):
        vec = np.asarray(vec, dtype=float)
        base = 6 + 3 * n_body + 6 * n_hand
        if vec.ndim != 1 or vec.size < base:
            raise DimensionMismatch(f"pose vector of length {vec.size} is too short")
        o = 6
        body = vec[o:o + 3 * n_body]
        o += 3 * n_body
        left = vec[o:o + 3 * n_hand]
        o += 3 * n_hand
        right = vec[o:o + 3 * n_hand]
        o += 3 * n_hand
        return cls(vec[:3], vec[3:6], body, left, right, vec[o:])

    def copy(self):
        return PoseParams.from_vector(self.to_vector(), len(self.body_pose), len(self.left_hand_pose))


@dataclass
class Camera:
    focal: np.ndarray = field(default_factory=lambda: np.array([1000.0, 1000.0]))
    principal: np.ndarray = field(default_factory=lambda: np.array([500.0, 500.0]))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.focal = np.asarray(self.focal, dtype=float).reshape(2)
        self.principal = np.asarray(self.principal, dtype=float).reshape(2)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if np.any(self.focal <= 0):
            raise ValidationError("focal lengths must be positive")

    @classmethod
    def default_front(cls, distance=1.2, height=0.3):
        """Camera in front of the toy body (which faces +z), image y pointing down.

        The default distance frames the upper body the way sign-language footage does.
        """
        return cls(rotation=np.diag([1.0, -1.0, -1.0]), translation=np.array([0.0, height, distance]))

    def to_dict(self):
        return {"schema_version": 1, "focal": self.focal.tolist(), "principal": self.principal.tolist(),
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["focal"], d["principal"], d["rotation"], d["translation"])


# ------------------------------------------------------------------ kinematics


def _kinematic_levels(parents):
    depth = np.zeros(len(parents), dtype=int)
    for k in range(1, len(parents)):
        depth[k] = depth[parents[k]] + 1
    levels = [np.flatnonzero(depth == d) for d in range(depth.max() + 1)]
    pos_in_level = np.zeros(len(parents), dtype=int)
    for lev in levels:
        pos_in_level[lev] = np.arange(len(lev))
    parent_slots = [None] + [pos_in_level[parents[lev]] for lev in levels[1:]]
    order = np.concatenate(levels)
    return levels, parent_slots, np.argsort(order)


def shaped_template(tpl: SkeletonTemplate, shape):
    shape = np.asarray(shape, dtype=float)
    if shape.shape != (tpl.n_shape,):
        raise DimensionMismatch(f"shape has {shape.shape}, template expects ({tpl.n_shape},)")
    verts = tpl.vertices + tpl.shape_dirs @ shape
    return verts, tpl.joint_regressor @ verts


def fk_batch(tpl: SkeletonTemplate, local_rot, root_trans, rest_joints):
    """Batched forward kinematics.

    local_rot: (B, P, 3, 3) rotations for the posed joints; root_trans: (B, 3).
    Returns world rotations (B, K, 3, 3) and world joint positions (B, K, 3).
    Works on numpy arrays or autodiff Vars.
    """
    levels, parent_slots, inv = tpl._levels
    lr = ad.value_of(local_rot)
    b, p = lr.shape[0], lr.shape[1]
    k = tpl.n_joints
    if p < k:
        eye = np.broadcast_to(np.eye(3), (b, k - p, 3, 3)).copy()
        local_all = ad.concat([local_rot, eye], axis=1)
    else:
        local_all = local_rot
    rest = np.asarray(rest_joints, dtype=float)
    rot_levels = [local_all[:, levels[0]]]
    root_pos = ad.add(ad.reshape(root_trans, (b, 1, 3)), np.broadcast_to(rest[0], (b, 1, 3)).copy())
    pos_levels = [root_pos]
    for lev, slots in zip(levels[1:], parent_slots[1:]):
        r_par = rot_levels[-1][:, slots]
        t_par = pos_levels[-1][:, slots]
        off = rest[lev] - rest[tpl.parents[lev]]
        pos_levels.append(ad.add(t_par, ad.einsum("bnij,nj->bni", r_par, off)))
        rot_levels.append(ad.matmul(r_par, local_all[:, lev]))
    world_r = ad.concat(rot_levels, axis=1)[:, inv]
    world_t = ad.concat(pos_levels, axis=1)[:, inv]
    return world_r, world_t


def skin_batch(tpl: SkeletonTemplate, world_r, world_t, rest_vertices, rest_joints, vertex_ids=None):
    """Linear blend skinning: v' = sum_k w_k (R_k (v - J_k) + t_k).

    ``vertex_ids`` restricts the output to a subset of vertices.
    """
    rest_joints = np.asarray(rest_joints, dtype=float)
    w = tpl.skin_weights
    if vertex_ids is not None:
        w = w[vertex_ids]
        rest_vertices = np.asarray(rest_vertices)[vertex_ids]
    trans = ad.sub(world_t, ad.einsum("bkij,kj->bki", world_r, rest_joints))
    blend_r = ad.einsum("nk,bkij->bnij", w, world_r)
    blend_t = ad.einsum("nk,bki->bni", w, trans)
    return ad.add(ad.einsum("bnij,nj->bni", blend_r, rest_vertices), blend_t)


def forward_kinematics(tpl: SkeletonTemplate, pose: PoseParams):
    """World joint positions (K, 3) and 4x4 world transforms (K, 4, 4)."""
    _, rest_j = shaped_template(tpl, pose.shape)
    rots = axis_angle_to_matrix(pose.full_pose())[None]
    wr, wt = fk_batch(tpl, rots, pose.root_trans[None], rest_j)
    tf = np.zeros((tpl.n_joints, 4, 4))
    tf[:, :3, :3] = wr[0]
    tf[:, :3, 3] = wt[0]
    tf[:, 3, 3] = 1.0
    return wt[0], tf


def skin_vertices(tpl: SkeletonTemplate, pose: PoseParams):
    verts, rest_j = shaped_template(tpl, pose.shape)
    rots = axis_angle_to_matrix(pose.full_pose())[None]
    wr, wt = fk_batch(tpl, rots, pose.root_trans[None], rest_j)
    return skin_batch(tpl, wr, wt, verts, rest_j)[0]


def project(camera: Camera, points, strict=True):
    """Pinhole projection of (..., 3) world points to pixels.

    With ``strict`` a point at or behind the image plane raises BehindCamera;
    otherwise such points come back as NaN.
    """
    pts = np.asarray(points, dtype=float)
    cam = pts @ camera.rotation.T + camera.translation
    behind = cam[..., 2] <= 1e-6
    if strict and np.any(behind):
        idx = np.flatnonzero(behind.ravel())
        raise BehindCamera(f"{len(idx)} point(s) behind the camera", idx)
    z = np.where(behind, np.nan, cam[..., 2])
    return camera.focal * cam[..., :2] / z[..., None] + camera.principal


def project_var(camera: Camera, points, behind_mask=None):
    """Differentiable projection of (M, 3) points.  Points flagged in
    ``behind_mask`` are pushed to unit depth so the graph stays finite; the
    caller decides what to do with them."""
    cam = ad.add(
        ad.einsum("ij,mj->mi", camera.rotation, points),
        np.broadcast_to(camera.translation, ad.value_of(points).shape).copy(),
    )
    depth = cam[:, 2]
    if behind_mask is not None and np.any(behind_mask):
        keep = (~behind_mask).astype(float)
        depth = ad.add(ad.mul(depth, keep), 1.0 - keep)
    m = ad.value_of(points).shape[0]
    inv_z = ad.div(1.0, depth)
    uv = ad.mul(cam[:, :2], ad.stack([inv_z, inv_z], axis=1))
    return ad.add(
        ad.mul(uv, np.broadcast_to(camera.focal, (m, 2)).copy()),
        np.broadcast_to(camera.principal, (m, 2)).copy(),
    )


def camera_depths(camera: Camera, points):
    pts = np.asarray(points, dtype=float)
    return (pts @ camera.rotation.T + camera.translation)[..., 2]


# ----------------------------------------------------------- toy construction

_HAND_LAYOUT = {
    # knuckle offset from wrist (x outward, y up, z forward) and segment lengths to
    # joint 2, joint 3 and the tip
    "index": ((0.085, 0.0, 0.025), (0.035, 0.025, 0.022)),
    "middle": ((0.088, 0.0, 0.005), (0.040, 0.027, 0.024)),
    "ring": ((0.082, 0.0, -0.015), (0.037, 0.025, 0.023)),
    "pinky": ((0.075, 0.0, -0.034), (0.028, 0.020, 0.020)),
    "thumb": ((0.025, -0.012, 0.030), (0.032, 0.030, 0.026)),
}
_THUMB_DIR = np.array([0.75, 0.0, 0.66]) / np.linalg.norm([0.75, 0.0, 0.66])

_BODY_OFFSETS = {
    "pelvis": (0.0, 0.0, 0.0),
    "left_hip": (0.09, -0.09, 0.0),
    "spine1": (0.0, 0.11, -0.01),
    "left_knee": (0.01, -0.39, 0.0),
    "spine2": (0.0, 0.13, 0.0),
    "left_ankle": (0.0, -0.40, -0.03),
    "spine3": (0.0, 0.05, 0.02),
    "left_foot": (0.02, -0.06, 0.12),
    "neck": (0.0, 0.21, -0.03),
    "left_collar": (0.08, 0.12, -0.01),
    "head": (0.0, 0.09, 0.05),
    "left_shoulder": (0.11, 0.03, -0.01),
    "left_elbow": (0.26, 0.0, 0.0),
    "left_wrist": (0.25, 0.0, 0.0),
}
_BODY_PARENTS = {
    "pelvis": None, "left_hip": "pelvis", "right_hip": "pelvis", "spine1": "pelvis",
    "left_knee": "left_hip", "right_knee": "right_hip", "spine2": "spine1",
    "left_ankle": "left_knee", "right_ankle": "right_knee", "spine3": "spine2",
    "left_foot": "left_ankle", "right_foot": "right_ankle", "neck": "spine3",
    "left_collar": "spine3", "right_collar": "spine3", "head": "neck",
    "left_shoulder": "left_collar", "right_shoulder": "right_collar",
    "left_elbow": "left_shoulder", "right_elbow": "right_shoulder",
    "left_wrist": "left_elbow", "right_wrist": "right_elbow",
}


def _bone_radius(name):
    if "tip" in name or any(f in name for f in ("index", "middle", "ring", "pinky", "thumb")):
        return 0.008
    if name in ("spine1", "spine2", "spine3", "neck", "left_hip", "right_hip"):
        return 0.10
    if name in ("head", "head_top"):
        return 0.085
    if "collar" in name:
        return 0.05
    if "knee" in name or "ankle" in name:
        return 0.06
    if "foot" in name:
        return 0.04
    if "shoulder" in name or "elbow" in name:
        return 0.04
    if "wrist" in name:
        return 0.03
    return 0.05


def _skeleton():
    names = JOINT_NAMES
    parents, offsets = [], []
    for name in names:
        if name in _BODY_PARENTS:
            par = _BODY_PARENTS[name]
            key = name.replace("right_", "left_")
            off = np.array(_BODY_OFFSETS[key], dtype=float)
            if name.startswith("right_"):
                off[0] = -off[0]
        elif name == "head_top":
            par, off = "head", np.array([0.0, 0.19, -0.02])
        else:
            side, rest = name.split("_", 1)
            sgn = 1.0 if side == "left" else -1.0
            if rest.endswith("_tip"):
                finger = rest[:-4]
                par = f"{side}_{finger}3"
                seg = _HAND_LAYOUT[finger][1][2]
                direction = _THUMB_DIR if finger == "thumb" else np.array([1.0, 0.0, 0.0])
                off = seg * direction
            else:
                finger, i = rest[:-1], int(rest[-1])
                knuckle, segs = _HAND_LAYOUT[finger]
                direction = _THUMB_DIR if finger == "thumb" else np.array([1.0, 0.0, 0.0])
                if i == 1:
                    par, off = f"{side}_wrist", np.array(knuckle, dtype=float)
                else:
                    par, off = f"{side}_{finger}{i - 1}", segs[i - 2] * direction
            off = np.array(off, dtype=float)
            off[0] *= sgn
        parents.append(-1 if par is None else names.index(par))
        offsets.append(off)
    return names, np.array(parents), np.array(offsets)


def _perp_basis(d):
    d = d / np.linalg.norm(d)
    helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(d, e1)


def build_toy_template(n_vertices=600, n_shape=10, seed=0) -> SkeletonTemplate:
    """Deterministic procedural humanoid in a T-pose facing +z, y up, meters.

    Each bone carries a ring of four vertices around its start joint (and end
    sites get a ring at their end) so the joint regressor reproduces rest
    joints exactly; remaining vertices are spread over the bone surfaces.
    """
    rng = np.random.default_rng(seed)
    names, parents, offsets = _skeleton()
    k = len(names)
    rest = np.zeros((k, 3))
    for j in range(k):
        rest[j] = offsets[j] + (rest[parents[j]] if parents[j] >= 0 else 0.0)
    children = {j: [c for c in range(k) if parents[c] == j] for j in range(k)}
    bones = [(int(parents[c]), c) for c in range(1, k)]
    n_ring = 4
    n_fixed = n_ring * k
    if n_vertices < n_fixed + len(bones):
        raise ValidationError(f"need at least {n_fixed + len(bones)} vertices, got {n_vertices}")
    extra = n_vertices - n_fixed
    per_bone = np.full(len(bones), extra // len(bones))
    per_bone[: extra % len(bones)] += 1

    verts, radial, weights, bone_of = [], [], [], []
    regressor = np.zeros((k, n_vertices))

    def add_vertex(pos, nrm, w, bone):
        verts.append(pos)
        radial.append(nrm)
        weights.append(w)
        bone_of.append(bone)
        return len(verts) - 1

    def bone_weights(p, c, t):
        w = np.zeros(k)
        par = parents[p]
        if t < 0.2 and par >= 0:
            w[par] = 0.5 * (1.0 - t / 0.2)
        if t > 0.8 and c < N_POSED and children[c]:
            w[c] = 0.5 * (t - 0.8) / 0.2
        w[p] = 1.0 - w.sum()
        return w

    ring_done = set()
    for b, (p, c) in enumerate(bones):
        d = rest[c] - rest[p]
        e1, e2 = _perp_basis(d)
        r = _bone_radius(names[c])
        if p not in ring_done:
            ring_done.add(p)
            for ang in range(n_ring):
                nrm = [e1, e2, -e1, -e2][ang]
                vi = add_vertex(rest[p] + r * nrm, nrm, bone_weights(p, c, 0.0), b)
                regressor[p, vi] = 1.0 / n_ring
        if not children[c]:
            for ang in range(n_ring):
                nrm = [e1, e2, -e1, -e2][ang]
                vi = add_vertex(rest[c] + r * nrm, nrm, bone_weights(p, c, 1.0), b)
                regressor[c, vi] = 1.0 / n_ring
        for _ in range(per_bone[b]):
            t = rng.uniform(0.1, 0.9)
            phi = rng.uniform(0, 2 * np.pi)
            nrm = np.cos(phi) * e1 + np.sin(phi) * e2
            add_vertex(rest[p] + t * d + r * nrm, nrm, bone_weights(p, c, t), b)

    verts = np.array(verts)
    radial = np.array(radial)
    weights = np.array(weights)
    bone_of = np.array(bone_of)

    shape_dirs = np.zeros((len(verts), 3, n_shape))
    if n_shape > 0:
        shape_dirs[:, 1, 0] = 0.05 * verts[:, 1]  # stature
    if n_shape > 1:
        shape_dirs[:, :, 1] = 0.01 * radial  # girth
    if n_shape > 2:
        reach = np.maximum(np.abs(verts[:, 0]) - 0.19, 0.0)
        shape_dirs[:, 0, 2] = 0.05 * np.sign(verts[:, 0]) * reach  # arm span
    for s in range(3, n_shape):
        freq = rng.normal(size=(3, 3)) * 2.0
        phase = rng.uniform(0, 2 * np.pi, size=3)
        shape_dirs[:, :, s] = 0.004 * np.sin(verts @ freq + phase)

    regions = _default_regions(names, parents, rest, verts, bone_of, bones)
    return SkeletonTemplate(
        joint_names=list(names),
        parents=parents,
        offsets=offsets,
        vertices=verts,
        skin_weights=weights,
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        regions=regions,
    )


def _default_regions(names, parents, rest, verts, bone_of, bones):
    idx = {n: i for i, n in enumerate(names)}
    bone_parent = np.array([bones[b][0] for b in bone_of])
    bone_child = np.array([bones[b][1] for b in bone_of])
    upper_v = verts[:, 1] > rest[0, 1] + 1e-9
    upper_j = rest[:, 1] > rest[0, 1] + 1e-9
    head_ids = [idx["neck"], idx["head"]]
    head_v = np.isin(bone_parent, head_ids)
    face_v = (bone_parent == idx["head"]) & (verts[:, 2] > rest[idx["head"], 2])
    regions = {
        "fbody": (np.arange(len(verts)), np.arange(len(names))),
        "ubody": (np.flatnonzero(upper_v), np.flatnonzero(upper_j)),
        "ubody-h": (
            np.flatnonzero(upper_v & ~head_v),
            np.flatnonzero(upper_j & ~np.isin(np.arange(len(names)), [idx["head"], idx["head_top"]])),
        ),
        "ubody-f": (
            np.flatnonzero(upper_v & ~face_v),
            np.flatnonzero(upper_j & (np.arange(len(names)) != idx["head_top"])),
        ),
    }
    for side in ("left", "right"):
        hand_j = [idx[f"{side}_wrist"]] + [i for i, n in enumerate(names)
                                           if n.startswith(f"{side}_") and
                                           any(f in n for f in TIP_FINGERS)]
        hv = np.isin(bone_parent, hand_j) & (bone_child != idx[f"{side}_wrist"])
        regions[f"{side[0]}hand"] = (np.flatnonzero(hv), np.array(sorted(hand_j)))
    return {k: {"vertices": v, "joints": j} for k, (v, j) in regions.items()}


# ------------------------------------------------------------------- file I/O


def template_to_dict(tpl: SkeletonTemplate):
    nz = np.nonzero(tpl.skin_weights)
    rz = np.nonzero(tpl.joint_regressor)
    return {
        "schema_version": TEMPLATE_SCHEMA_VERSION,
        "joints": [
            {"name": n, "parent": int(p), "offset": o.tolist()}
            for n, p, o in zip(tpl.joint_names, tpl.parents, tpl.offsets)
        ],
        "body_joint_count": tpl.body_joint_count,
        "hand_joint_count": tpl.hand_joint_count,
        "vertices": tpl.vertices.tolist(),
        "skin_weights": [[int(v), int(j), float(tpl.skin_weights[v, j])] for v, j in zip(*nz)],
        "shape_dirs": tpl.shape_dirs.tolist(),
        "joint_regressor": [[int(j), int(v), float(tpl.joint_regressor[j, v])] for j, v in zip(*rz)],
        "regions": {
            k: {kk: vv.tolist() for kk, vv in reg.items()} for k, reg in tpl.regions.items()
        },
    }


def template_from_dict(d) -> SkeletonTemplate:
    if d.get("schema_version") != TEMPLATE_SCHEMA_VERSION:
        raise ValidationError(f"unsupported template schema_version {d.get('schema_version')!r}")
    joints = d["joints"]
    verts = np.array(d["vertices"], dtype=float)
    k, n = len(joints), len(verts)
    weights = np.zeros((n, k))
    for v, j, w in d["skin_weights"]:
        weights[int(v), int(j)] = w
    reg = np.zeros((k, n))
    for j, v, w in d["joint_regressor"]:
        reg[int(j), int(v)] = w
    return SkeletonTemplate(
        joint_names=[j["name"] for j in joints],
        parents=[j["parent"] for j in joints],
        offsets=[j["offset"] for j in joints],
        vertices=verts,
        skin_weights=weights,
        shape_dirs=np.array(d["shape_dirs"], dtype=float).reshape(n, 3, -1),
        joint_regressor=reg,
        regions=d.get("regions", {}),
        body_joint_count=d.get("body_joint_count", N_BODY),
        hand_joint_count=d.get("hand_joint_count", N_HAND),
    )


def save_template(tpl: SkeletonTemplate, path):
    Path(path).write_text(json.dumps(template_to_dict(tpl)))


def load_template(path) -> SkeletonTemplate:
    return template_from_dict(json.loads(Path(path).read_text()))
