"""Range-of-motion tables, signer space, body filter, hand rectifier, and the
one-sided quadratic joint-limit penalty."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import rotations as rot
from .body_model import PoseParams, SkeletonTemplate, fk_batch, shaped_template
from .errors import ConventionMismatch, ValidationError

ROM_SCHEMA_VERSION = 1
RECTIFY_MARGIN = 1e-10  # clamp slightly inside so the re-decomposed angles stay in range


def mirror_sensitive(convention):
    """Per-axis flags: under x -> -x reflection, y and z rotations change sign."""
    i, j, k, _ = rot.parse_convention(convention)
    return np.array([ax != 0 for ax in (i, j, k)])


def normalize_rom(clinical, side, convention):
    """Unsigned clinical magnitudes -> signed radian bounds.

    ``clinical`` holds one ``(negative_deg, positive_deg)`` pair per Euler axis,
    authored for the right side.  The left side is mirrored across the sagittal
    plane.  Returns (lower, upper) arrays of shape (3,).
    """
    rot.parse_convention(convention)
    mags = np.asarray(clinical, dtype=float)
    if mags.shape != (3, 2):
        raise ValidationError("clinical ROM needs (neg, pos) magnitudes for three axes")
    if np.any(mags < 0):
        raise ValidationError("clinical magnitudes must be non-negative")
    lo, hi = -np.radians(mags[:, 0]), np.radians(mags[:, 1])
    if side == "left":
        lo, hi = mirror_bounds(lo, hi, convention)
    elif side not in ("right", "central"):
        raise ValidationError(f"unknown side {side!r}")
    return lo, hi


def mirror_bounds(lo, hi, convention):
    flip = mirror_sensitive(convention)
    return np.where(flip, -hi, lo), np.where(flip, -lo, hi)


@dataclass(frozen=True)
class RomEntry:
    joint: str
    convention: str
    lower: np.ndarray
    upper: np.ndarray
    side: str
    mirror: bool
    labels: tuple = ("a", "b", "c")


@dataclass
class SignerSpace:
    lateral_half_width: float = 1.2  # multiples of shoulder half-width
    vertical_low: float = 0.3  # torso lengths below the shoulder line
    vertical_high: str | float = "head_top"  # joint name, or torso lengths above shoulders
    depth_near: float = 0.05  # torso lengths in front of the shoulder line
    depth_far: float = 0.8
    abduction_cap: float = 0.0  # radians of horizontal abduction behind the frontal plane
    adduction_cap: float = np.radians(130.0)

    def __post_init__(self):
        if self.lateral_half_width <= 0:
            raise ValidationError("signer space half-width must be positive")
        if not self.depth_near < self.depth_far:
            raise ValidationError("signer space needs depth_near < depth_far")
        if isinstance(self.vertical_high, (int, float)) and not -self.vertical_low < self.vertical_high:
            raise ValidationError("signer space needs low < high")


@dataclass
class RomTable:
    entries: dict
    body_joints: list
    hand_joints: list  # un-sided names, e.g. "index1"
    signer_space: SignerSpace = field(default_factory=SignerSpace)

    def __post_init__(self):
        for e in self.entries.values():
            if np.any(e.lower > e.upper):
                raise ValidationError(f"ROM for {e.joint} has min > max")

    def __contains__(self, joint):
        return joint in self.entries

    def __getitem__(self, joint) -> RomEntry:
        return self.entries[joint]

    def hand_joint_names(self, side):
        return [f"{side}_{n}" for n in self.hand_joints]

    def bounds(self, joints):
        ents = [self.entries[j] for j in joints]
        return (
            [e.convention for e in ents],
            np.stack([e.lower for e in ents]),
            np.stack([e.upper for e in ents]),
        )


def rom_from_dict(d) -> RomTable:
    if d.get("schema_version") != ROM_SCHEMA_VERSION:
        raise ValidationError(f"unsupported ROM schema_version {d.get('schema_version')!r}")
    if d.get("units", "degrees") != "degrees":
        raise ValidationError("ROM files are authored in degrees")
    kinds = d["joint_kinds"]
    entries = {}
    for base, kind in kinds.items():
        spec = d["joints"][kind]
        conv = spec["convention"]
        rot.parse_convention(conv)
        clinical = [(ax["neg"][1], ax["pos"][1]) for ax in spec["axes"]]
        labels = tuple(spec.get("labels", ("a", "b", "c")))
        for side in ("right", "left"):
            lo, hi = normalize_rom(clinical, side, conv)
            name = f"{side}_{base}"
            entries[name] = RomEntry(name, conv.upper(), lo, hi, side, True, labels)
    ss = d.get("signer_space", {})
    space = SignerSpace(
        lateral_half_width=ss.get("lateral_half_width", 1.2),
        vertical_low=ss.get("vertical_low", 0.3),
        vertical_high=ss.get("vertical_high", "head_top"),
        depth_near=ss.get("depth_near", 0.05),
        depth_far=ss.get("depth_far", 0.8),
        abduction_cap=np.radians(ss.get("horizontal_abduction_cap_deg", 0.0)),
        adduction_cap=np.radians(ss.get("horizontal_adduction_cap_deg", 130.0)),
    )
    return RomTable(entries, list(d["body_joints"]), list(d["hand_joints"]), space)


def load_rom(path=None) -> RomTable:
    if path is None:
        text = resources.files("dexfit").joinpath("data/rom_default.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read ROM file {path}: {exc}") from None
    try:
        return rom_from_dict(json.loads(text))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed ROM file {path}: {exc}") from None


# --------------------------------------------------------------------- penalty


def limit_penalty(angles, lower, upper):
    """sum ||max(theta - max, min - theta, 0)||^2 over the trailing (J, 3) axes.

    Works on arrays or autodiff Vars; returns one value per leading batch entry.
    """
    lo = np.broadcast_to(lower, ad.value_of(angles).shape).copy()
    hi = np.broadcast_to(upper, ad.value_of(angles).shape).copy()
    over = ad.hinge(ad.sub(angles, hi))
    under = ad.hinge(ad.sub(lo, angles))
    per = ad.add(ad.square(over), ad.square(under))
    nd = ad.value_of(per).ndim
    return ad.sum(per, axis=(nd - 2, nd - 1))


def biomech_penalty(triples, rom: RomTable, joints):
    """Penalty for a list of EulerTriples (one per joint name in ``joints``)."""
    convs, lo, hi = rom.bounds(joints)
    if len(triples) != len(joints):
        raise ValidationError("one Euler triple per joint is required")
    for t, c, name in zip(triples, convs, joints):
        if t.convention.upper() != c:
            raise ConventionMismatch(f"{name}: angles in {t.convention}, ROM expects {c}")
    angles = np.stack([np.asarray(t.angles, dtype=float) for t in triples], axis=-2)
    return float(limit_penalty(angles, lo, hi))


def rotation_penalty(local_rot, rom: RomTable, joints):
    """Penalty on rotation matrices (..., J, 3, 3) for the named joints.

    Groups joints by Euler convention so each group is one decomposition.
    Differentiable when ``local_rot`` is a Var; returns shape ``(...)``.
    """
    convs, lo, hi = rom.bounds(joints)
    total = None
    for conv in sorted(set(convs)):
        sel = [i for i, c in enumerate(convs) if c == conv]
        ang = ad.euler_angles(local_rot[..., sel, :, :], conv)
        term = limit_penalty(ang, lo[sel], hi[sel])
        total = term if total is None else ad.add(total, term)
    return total


def joint_euler(rotmats, rom: RomTable, joints):
    """EulerTriples (with gimbal flags) for the given local rotations (J, 3, 3)."""
    return [rot.matrix_to_euler(rotmats[i], rom[j].convention) for i, j in enumerate(joints)]


# ---------------------------------------------------------------- body filter


@dataclass
class FilterResult:
    accepted: bool
    reasons: list

    def to_record(self, index=None):
        rec = {"accepted": self.accepted, "reasons": self.reasons}
        if index is not None:
            rec = {"index": index, **rec}
        return rec


def _space_geometry(tpl: SkeletonTemplate, rest, space: SignerSpace):
    ls, rs = tpl.index("left_shoulder"), tpl.index("right_shoulder")
    half_w = 0.5 * abs(rest[ls, 0] - rest[rs, 0])
    torso = float(np.linalg.norm(rest[tpl.index("neck")] - rest[0]))
    shoulder_y = 0.5 * (rest[ls, 1] + rest[rs, 1])
    if isinstance(space.vertical_high, str):
        high = rest[tpl.index(space.vertical_high), 1] - shoulder_y
    else:
        high = space.vertical_high * torso
    return {
        "lateral": space.lateral_half_width * half_w,
        "low": -space.vertical_low * torso,
        "high": high,
        "near": space.depth_near * torso,
        "far": space.depth_far * torso,
    }


def torso_frame(tpl: SkeletonTemplate, world_r, world_t):
    """Origin between the shoulders, axes from the chest (spine3) rotation."""
    ls, rs = tpl.index("left_shoulder"), tpl.index("right_shoulder")
    origin = 0.5 * (world_t[ls] + world_t[rs])
    return origin, world_r[tpl.index("spine3")]


def wrist_box_violations(tpl, rest, world_r, world_t, space: SignerSpace):
    geo = _space_geometry(tpl, rest, space)
    origin, frame = torso_frame(tpl, world_r, world_t)
    out = []
    for side in ("left", "right"):
        p = frame.T @ (world_t[tpl.index(f"{side}_wrist")] - origin)
        if abs(p[0]) > geo["lateral"]:
            out.append(f"signer_space:{side}_wrist:lateral")
        if not geo["low"] <= p[1] <= geo["high"]:
            out.append(f"signer_space:{side}_wrist:vertical")
        if not geo["near"] <= p[2] <= geo["far"]:
            out.append(f"signer_space:{side}_wrist:depth")
    return out


def shoulder_horizontal_angles(tpl, world_r, world_t, min_fraction=0.25):
    """Horizontal angle of each upper arm in the torso frame.

    0 points straight out to the side, positive is forward (horizontal
    adduction), negative is behind the frontal plane.  None when the arm is
    close to vertical and the angle is ill-defined.
    """
    _, frame = torso_frame(tpl, world_r, world_t)
    out = {}
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        u = frame.T @ (world_t[tpl.index(f"{side}_elbow")] - world_t[tpl.index(f"{side}_shoulder")])
        horiz = np.hypot(u[0], u[2])
        if horiz < min_fraction * np.linalg.norm(u):
            out[side] = None
        else:
            out[side] = float(np.arctan2(u[2], sgn * u[0]))
    return out


def filter_body_frame(pose: PoseParams, rom: RomTable, space: SignerSpace | None, tpl: SkeletonTemplate):
    space = space or rom.signer_space
    reasons = []
    _, rest = shaped_template(tpl, pose.shape)
    local = rot.axis_angle_to_matrix(pose.full_pose())
    for name in rom.body_joints:
        e = rom[name]
        triple = rot.matrix_to_euler(local[tpl.index(name)], e.convention)
        if bool(triple.gimbal):
            reasons.append(f"gimbal:{name}")
            continue
        for ax in range(3):
            a = triple.angles[ax]
            if a > e.upper[ax]:
                reasons.append(f"rom:{name}:{e.labels[ax]}:above_max")
            elif a < e.lower[ax]:
                reasons.append(f"rom:{name}:{e.labels[ax]}:below_min")
    wr, wt = fk_batch(tpl, local[None], pose.root_trans[None], rest)
    wr, wt = wr[0], wt[0]
    reasons += wrist_box_violations(tpl, rest, wr, wt, space)
    for side, h in shoulder_horizontal_angles(tpl, wr, wt).items():
        if h is None:
            continue
        if h < -space.abduction_cap:
            reasons.append(f"shoulder:{side}:horizontal_abduction")
        elif h > space.adduction_cap:
            reasons.append(f"shoulder:{side}:horizontal_adduction")
    return FilterResult(not reasons, reasons)


# -------------------------------------------------------------- rectification


def clamp_joint_rotations(aa, rom: RomTable, joints):
    """Clamp each joint's Euler angles into its ROM box; joints already inside
    are returned untouched (bit-identical)."""
    aa = np.array(aa, dtype=float).reshape(len(joints), 3)
    out = aa.copy()
    mats = rot.axis_angle_to_matrix(aa)
    for i, name in enumerate(joints):
        e = rom[name]
        triple = rot.matrix_to_euler(mats[i], e.convention)
        ang = triple.angles
        if np.all(ang >= e.lower) and np.all(ang <= e.upper) and not bool(triple.gimbal):
            continue
        clamped = np.clip(ang, e.lower + RECTIFY_MARGIN, e.upper - RECTIFY_MARGIN)
        # degenerate [0, 0] intervals collapse to the midpoint
        clamped = np.where(e.upper - e.lower < 2 * RECTIFY_MARGIN, 0.5 * (e.lower + e.upper), clamped)
        out[i] = rot.matrix_to_axis_angle(rot.euler_to_matrix(clamped, e.convention))
    return out


def rectify_hand_frame(hand_pose, rom: RomTable, side="right"):
    return clamp_joint_rotations(hand_pose, rom, rom.hand_joint_names(side))


def hand_penalty(hand_pose, rom: RomTable, side="right"):
    joints = rom.hand_joint_names(side)
    mats = rot.axis_angle_to_matrix(np.asarray(hand_pose, dtype=float).reshape(-1, 3))
    return float(rotation_penalty(mats, rom, joints))
