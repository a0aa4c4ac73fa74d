"""Rotation representations: axis-angle, rotation matrices, Euler triples.

Everything here is batched over leading dimensions: an axis-angle array has
shape ``(..., 3)`` and a matrix array ``(..., 3, 3)``.

Euler conventions are intrinsic Tait-Bryan triples written as three distinct
axis letters, e.g. ``"XZY"`` means ``R = Rx(a) @ Rz(b) @ Ry(c)``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DegenerateMatrix, NotARotation, UnknownConvention

ROTATION_TOL = 1e-4  # orthogonality defect above which a matrix is rejected
GIMBAL_TOL = 1e-6
LOCK_TOL = 1e-9  # below this the outer angles are merged into the first
_SMALL_ANGLE = 1e-4
_AXES = {"X": 0, "Y": 1, "Z": 2}


class EulerTriple(NamedTuple):
    angles: np.ndarray  # (..., 3) radians, in convention order
    convention: str
    gimbal: np.ndarray  # (...,) bool


def hat(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee_antisym(m):
    """(m32 - m23, m13 - m31, m21 - m12); twice the axial vector of the skew part."""
    return np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def rodrigues_coefficients(theta):
    """a = sin t / t, b = (1 - cos t) / t^2, and c = a'/t, d = b'/t.

    R = I + a K + b K^2 with K = hat(v), t = |v|.  c and d are the radial
    derivatives needed for the Jacobian.  Taylor series below 1e-4.
    """
    theta = np.asarray(theta, dtype=float)
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    s, co = np.sin(t), np.cos(t)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, s / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - co) / t**2)
    c = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, (t * co - s) / t**3)
    d = np.where(
        small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0, (t * s - 2.0 * (1.0 - co)) / t**4
    )
    return a, b, c, d


def axis_angle_to_matrix(aa):
    aa = np.asarray(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1)
    a, b, _, _ = rodrigues_coefficients(theta)
    k = hat(aa)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def orthogonality_defect(m):
    """Squared Frobenius norm of m m^T - I."""
    m = np.asarray(m, dtype=float)
    e = m @ np.swapaxes(m, -1, -2) - np.eye(3)
    return np.sum(e * e, axis=(-2, -1))


def is_rotation(m, tol=1e-6):
    m = np.asarray(m, dtype=float)
    return (np.sqrt(orthogonality_defect(m)) < tol) & (np.linalg.det(m) > 0)


def _check_rotation(R):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise NotARotation(f"expected (..., 3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise NotARotation("non-finite matrix entries")
    bad = (orthogonality_defect(R) > ROTATION_TOL) | (np.linalg.det(R) <= 0)
    if np.any(bad):
        raise NotARotation(f"{int(np.sum(bad))} matrices are not proper rotations")
    return R


def canonicalize_axis_angle(aa):
    """Map every axis-angle vector to the equivalent one with angle in [0, pi].

    At exactly pi the two representatives differ by sign; we keep the one whose
    largest-magnitude component is positive.
    """
    aa = np.array(aa, dtype=float)
    theta = np.linalg.norm(aa, axis=-1)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi  # (-pi, pi]
    safe = np.where(theta > 0, theta, 1.0)
    axis = aa / safe[..., None]
    out = axis * np.abs(wrapped)[..., None] * np.sign(np.where(wrapped == 0, 1.0, wrapped))[..., None]
    return _fix_half_turn_sign(out)


def _fix_half_turn_sign(aa):
    theta = np.linalg.norm(aa, axis=-1)
    half = np.abs(theta - np.pi) < 1e-9
    if np.any(half):
        idx = np.argmax(np.abs(aa), axis=-1)
        lead = np.take_along_axis(aa, idx[..., None], axis=-1)[..., 0]
        flip = half & (lead < 0)
        aa = np.where(flip[..., None], -aa, aa)
    return aa


def matrix_to_axis_angle(R):
    """Log map.  Returns canonical axis-angle with angle in [0, pi]."""
    R = _check_rotation(R)
    return _log_unchecked(R)


def _log_unchecked(R):
    w = 0.5 * vee_antisym(R)
    s = np.linalg.norm(w, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    small = s < 1e-12
    factor = np.where(small, 1.0 / np.where(c == 0, 1.0, c), theta / np.where(small, 1.0, s))
    out = factor[..., None] * w
    # Near a half turn w carries almost no information; recover the axis from
    # the symmetric part instead.
    near_pi = (s < 1e-3) & (c < 0)
    if np.any(near_pi):
        sym = 0.5 * (R + np.swapaxes(R, -1, -2))
        nn = (sym - c[..., None, None] * np.eye(3)) / (1.0 - c)[..., None, None]
        col = np.argmax(np.diagonal(nn, axis1=-2, axis2=-1), axis=-1)
        axis = np.take_along_axis(nn, col[..., None, None], axis=-1)[..., 0]
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        sgn = np.where(np.sum(axis * w, axis=-1) < 0, -1.0, 1.0)
        alt = axis * (sgn * theta)[..., None]
        out = np.where(near_pi[..., None], alt, out)
    return _fix_half_turn_sign(out)


def project_to_rotation(m, return_svd=False):
    """Nearest rotation in Frobenius norm (SVD with determinant correction)."""
    m = np.asarray(m, dtype=float)
    if m.shape[-2:] != (3, 3):
        raise DegenerateMatrix(f"expected (..., 3, 3), got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateMatrix("non-finite matrix entries")
    u, sig, vt = np.linalg.svd(m)
    if np.any(sig[..., 1] <= 1e-12 * np.maximum(sig[..., 0], 1e-300)) or np.any(sig[..., 0] == 0):
        raise DegenerateMatrix("matrix rank < 2, nearest rotation is not unique")
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    sig = sig.copy()
    sig[..., 2] *= d
    r = u @ vt
    if return_svd:
        return r, (u, sig, vt)
    return r


def parse_convention(convention):
    """'XZY' -> (0, 2, 1, parity) with parity +1 for cyclic orderings."""
    if not isinstance(convention, str) or len(convention) != 3:
        raise UnknownConvention(f"bad Euler convention {convention!r}")
    try:
        i, j, k = (_AXES[ch] for ch in convention.upper())
    except KeyError:
        raise UnknownConvention(f"bad Euler convention {convention!r}") from None
    if len({i, j, k}) != 3:
        raise UnknownConvention(f"only Tait-Bryan conventions are supported, got {convention!r}")
    parity = 1.0 if (j - i) % 3 == 1 else -1.0
    return i, j, k, parity


def elementary_rotation(axis, angle):
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    p, q = (axis + 1) % 3, (axis + 2) % 3
    out[..., axis, axis] = 1.0
    out[..., p, p] = c
    out[..., q, q] = c
    out[..., q, p] = s
    out[..., p, q] = -s
    return out


def euler_to_matrix(angles, convention):
    i, j, k, _ = parse_convention(convention)
    angles = np.asarray(angles, dtype=float)
    return (
        elementary_rotation(i, angles[..., 0])
        @ elementary_rotation(j, angles[..., 1])
        @ elementary_rotation(k, angles[..., 2])
    )


def matrix_to_euler(R, convention) -> EulerTriple:
    """Decompose into intrinsic Euler angles.

    ``gimbal`` is set when the middle angle is within GIMBAL_TOL of +-pi/2.
    Only where the split between the outer angles is numerically undefined
    (cos of the middle angle below LOCK_TOL) is the third angle set to 0 and
    the whole free rotation given to the first angle.  The first angle is
    always solved from R Rk(c)^T Rj(b)^T, so the triple recomposes to R at
    machine precision up to that lock band.
    """
    i, j, k, eps = parse_convention(convention)
    R = _check_rotation(R)
    cos_mid = np.hypot(R[..., i, i], R[..., i, j])
    b = np.arctan2(eps * R[..., i, k], cos_mid)
    c = np.arctan2(-eps * R[..., i, j], R[..., i, i])
    c = np.where(cos_mid < LOCK_TOL, 0.0, c)
    m = R @ np.swapaxes(elementary_rotation(k, c), -1, -2) @ np.swapaxes(elementary_rotation(j, b), -1, -2)
    p, q = (i + 1) % 3, (i + 2) % 3
    a = np.arctan2(m[..., q, p] - m[..., p, q], m[..., p, p] + m[..., q, q])
    gimbal = cos_mid < np.sin(GIMBAL_TOL)
    angles = np.stack([a, b, c], axis=-1)
    # atan2 returns [-pi, pi]; fold -pi onto pi
    angles = np.where(angles <= -np.pi, angles + 2 * np.pi, angles)
    return EulerTriple(angles, convention.upper(), np.asarray(gimbal))


def mirror_axis_angle(aa):
    """Reflect through the sagittal (x = 0) plane: (x, y, z) -> (x, -y, -z)."""
    aa = np.asarray(aa, dtype=float)
    return aa * np.array([1.0, -1.0, -1.0])
