"""Capsule proxies for self-penetration.

Each capsule is a segment between two skeleton joints with a radius.  For a
pair the penetration depth is ``max(0, r_a + r_b - d)`` with ``d`` the
segment-segment distance.  The closest-point parameters are found in numpy and
held fixed while differentiating; by the envelope theorem this gives the exact
gradient of the distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import SkeletonTemplate
from .errors import ValidationError

_DIST_EPS = 1e-12


@dataclass(frozen=True)
class CollisionProxies:
    names: tuple  # capsule labels
    ends: np.ndarray  # (C, 2) joint indices
    radii: np.ndarray  # (C,)
    groups: tuple  # (C,) group label; capsules in one group never collide with each other
    pairs: np.ndarray  # (M, 2) capsule indices that are tested

    def __post_init__(self):
        if np.any(np.asarray(self.radii) <= 0):
            raise ValidationError("capsule radii must be positive")
        if len(self.pairs) == 0:
            raise ValidationError("no capsule pairs to test")


def build_proxies(names, ends, radii, groups, tpl: SkeletonTemplate):
    ends = np.asarray(ends, dtype=int)
    if ends.ndim != 2 or ends.shape[1] != 2 or ends.min() < 0 or ends.max() >= tpl.n_joints:
        raise ValidationError("capsule endpoints must be valid joint indices")
    pairs = []
    for a in range(len(ends)):
        for b in range(a + 1, len(ends)):
            if groups[a] == groups[b] or set(ends[a]) & set(ends[b]):
                continue
            pairs.append((a, b))
    return CollisionProxies(tuple(names), ends, np.asarray(radii, dtype=float), tuple(groups), np.array(pairs, int))


def default_proxies(tpl: SkeletonTemplate) -> CollisionProxies:
    """Torso, both forearms, and three segments per finger.

    Radii are chosen so the rest pose is collision free.
    """
    names, ends, radii, groups = [], [], [], []

    def cap(label, a, b, r, group):
        names.append(label)
        ends.append((tpl.index(a), tpl.index(b)))
        radii.append(r)
        groups.append(group)

    cap("torso", "spine1", "neck", 0.10, "torso")
    for side in ("left", "right"):
        cap(f"{side}_forearm", f"{side}_elbow", f"{side}_wrist", 0.03, f"{side}_forearm")
        for finger in ("thumb", "index", "middle", "ring", "pinky"):
            chain = [f"{side}_{finger}{i}" for i in (1, 2, 3)] + [f"{side}_{finger}_tip"]
            for i in range(3):
                cap(f"{chain[i]}", chain[i], chain[i + 1], 0.0075, f"{side}_{finger}")
    return build_proxies(names, ends, radii, groups, tpl)


def closest_params(p0, p1, q0, q1):
    """Closest-point parameters (s, t) in [0, 1]^2 for batches of segments."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a = np.sum(d1 * d1, -1)
    e = np.sum(d2 * d2, -1)
    f = np.sum(d2 * r, -1)
    c = np.sum(d1 * r, -1)
    b = np.sum(d1 * d2, -1)
    denom = a * e - b * b
    tiny = 1e-18
    s = np.where(denom > tiny, np.clip((b * f - c * e) / np.where(denom > tiny, denom, 1.0), 0, 1), 0.0)
    s = np.where(a > tiny, s, 0.0)
    t = np.where(e > tiny, (b * s + f) / np.where(e > tiny, e, 1.0), 0.0)
    # re-clamp t and recompute s where needed
    t_lo, t_hi = t < 0, t > 1
    t = np.clip(t, 0, 1)
    s_alt = np.where(t_lo, -c, b - c) / np.where(a > tiny, a, 1.0)
    s = np.where((t_lo | t_hi) & (a > tiny), np.clip(s_alt, 0, 1), s)
    return s, t


def segment_distances(p0, p1, q0, q1):
    s, t = closest_params(p0, p1, q0, q1)
    p = p0 + s[..., None] * (p1 - p0)
    q = q0 + t[..., None] * (q1 - q0)
    return np.linalg.norm(p - q, axis=-1)


def pair_depths(joints, proxies: CollisionProxies):
    """Penetration depth per tested pair.  ``joints``: (K, 3) array or Var."""
    jv = ad.value_of(joints)
    ca, cb = proxies.pairs[:, 0], proxies.pairs[:, 1]
    ia0, ia1 = proxies.ends[ca, 0], proxies.ends[ca, 1]
    ib0, ib1 = proxies.ends[cb, 0], proxies.ends[cb, 1]
    s, t = closest_params(jv[ia0], jv[ia1], jv[ib0], jv[ib1])
    m = len(proxies.pairs)
    s3 = np.repeat(s[:, None], 3, 1)
    t3 = np.repeat(t[:, None], 3, 1)
    pa = ad.add(ad.mul(joints[ia0], 1.0 - s3), ad.mul(joints[ia1], s3))
    pb = ad.add(ad.mul(joints[ib0], 1.0 - t3), ad.mul(joints[ib1], t3))
    diff = ad.sub(pa, pb)
    dist = ad.sqrt(ad.add(ad.sum(ad.square(diff), axis=1), np.full(m, _DIST_EPS)))
    reach = proxies.radii[ca] + proxies.radii[cb]
    return ad.hinge(ad.sub(reach, dist))


def penetration_loss(joints, proxies: CollisionProxies):
    """Sum of squared pair depths divided by the number of tested pairs.

    Normalizing by the fixed pair count rather than the colliding count keeps
    the loss continuously differentiable when pairs enter or leave contact.
    """
    depth = pair_depths(joints, proxies)
    return ad.div(ad.sum(ad.square(depth)), float(len(proxies.pairs)))


def colliding_pairs(joints, proxies: CollisionProxies):
    depth = ad.value_of(pair_depths(np.asarray(joints, dtype=float), proxies))
    return [(proxies.names[a], proxies.names[b], float(d))
            for (a, b), d in zip(proxies.pairs, depth) if d > 0]
