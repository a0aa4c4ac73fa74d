"""Per-frame pose fitting against 2D keypoints.

The articulated pose is parameterized through the prior latents: the body
latent decodes to the 21 body rotations and each hand latent decodes to 15
hand rotations.  Shoulders, elbows and wrists additionally carry additive
axis-angle refinements.  Global orientation and translation are free; shape
stays at its initialization.

Masked (non-dominant) arm joints and hand are replaced by their initial values
as constants, so they are frozen bit-for-bit and receive no gradient.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rotations as rot
from .biomech import RomTable, rotation_penalty
from .body_model import (LOWER_BODY_JOINTS, Camera, PoseParams, SkeletonTemplate, camera_depths,
                         fk_batch, project, project_var, shaped_template)
from .errors import KindMismatch, NumericalError, ValidationError
from .lbfgs import LbfgsSettings, lbfgs_minimize
from .penetration import CollisionProxies, penetration_loss
from .priors import PriorModel, decode, encode_axis_angle, mirror_var, to_right_frame

log = logging.getLogger(__name__)

HANDEDNESS = ("two-handed", "one-handed-left", "one-handed-right")
ARM_JOINTS = ("shoulder", "elbow", "wrist")
TERM_NAMES = ("joint", "bprior", "hprior", "pen", "temp", "bbiomech", "hbiomech")
TORSO_JOINTS = ("pelvis", "spine1", "spine2", "spine3", "neck", "left_collar", "right_collar",
                "left_shoulder", "right_shoulder", "head")


@dataclass
class KeypointFrame:
    joint_names: list
    keypoints: np.ndarray  # (J, 2) pixels
    confidence: np.ndarray  # (J,) in [0, 1]
    weights: np.ndarray  # (J,) static gamma > 0
    index: int = 0
    handedness: str = "two-handed"

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=float)
        self.confidence = np.asarray(self.confidence, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.joint_names)
        if len(set(self.joint_names)) != n:
            raise ValidationError("keypoint joint names must be unique")
        if self.keypoints.shape != (n, 2) or self.confidence.shape != (n,) or self.weights.shape != (n,):
            raise ValidationError("keypoints, confidence and weights disagree with joint_names")
        if np.any(self.confidence < 0) or np.any(self.confidence > 1):
            raise ValidationError("confidences must lie in [0, 1]")
        if np.any(self.weights <= 0):
            raise ValidationError("static joint weights must be positive")
        if self.handedness not in HANDEDNESS:
            raise ValidationError(f"handedness must be one of {HANDEDNESS}")
        if not np.all(np.isfinite(self.keypoints[self.confidence > 0])):
            raise ValidationError("non-finite keypoints with positive confidence")

    def template_indices(self, tpl: SkeletonTemplate):
        try:
            return np.array([tpl.index(n) for n in self.joint_names], dtype=int)
        except ValueError as exc:
            raise ValidationError(f"keypoint joint not in template: {exc}") from None


@dataclass
class FitWeights:
    lambdas: tuple = (1.0, 1.0, 0.1, 1.0, 1.5, 1.5)  # bprior, hprior, pen, temp, bbiomech, hbiomech
    lam_zbar: float = 0.01
    lam_eps_l: float = 0.01
    lam_eps_r: float = 0.01
    sigma_joint: float = 100.0  # pixels
    sigma_prior: float = 1.0  # radians
    sigma_temp: float = 1.0
    lbfgs: LbfgsSettings = field(default_factory=lambda: LbfgsSettings(max_iter=150, gtol=1e-6, ftol=1e-12))
    prealign_iters: int = 50
    refine_arms: bool = True

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 6 or any(v < 0 for v in self.lambdas):
            raise ValidationError("six non-negative lambdas are required")
        if min(self.lam_zbar, self.lam_eps_l, self.lam_eps_r) < 0:
            raise ValidationError("latent weights must be non-negative")
        if min(self.sigma_joint, self.sigma_prior, self.sigma_temp) <= 0:
            raise ValidationError("robustifier scales must be positive")

    def with_lambda(self, term, value):
        lam = list(self.lambdas)
        lam[TERM_NAMES.index(term) - 1] = float(value)
        return FitWeights(tuple(lam), self.lam_zbar, self.lam_eps_l, self.lam_eps_r, self.sigma_joint,
                          self.sigma_prior, self.sigma_temp, self.lbfgs, self.prealign_iters, self.refine_arms)


@dataclass
class FitResult:
    index: int
    pose: PoseParams
    zbar: np.ndarray
    eps_l: np.ndarray
    eps_r: np.ndarray
    objective: float
    terms: dict
    weights: dict
    iterations: int
    converged: bool
    status: str
    trace: list
    error: str | None = None


# ----------------------------------------------------------------- robustifier


def geman_mcclure(residual, sigma):
    """sigma^2 |e|^2 / (sigma^2 + |e|^2) over the whole residual."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    e2 = ad.sum(ad.square(residual))
    s2 = float(sigma) ** 2
    return ad.div(ad.mul(e2, s2), ad.add(e2, s2))


def geman_mcclure_rows(residual, sigma):
    """Row-wise robustifier for an (M, D) residual; returns (M,)."""
    e2 = ad.sum(ad.square(residual), axis=1)
    s2 = float(sigma) ** 2
    m = ad.value_of(e2).shape[0]
    return ad.div(ad.mul(e2, s2), ad.add(e2, np.full(m, s2)))


# ---------------------------------------------------------------------- masks


def decision_mask(handedness, tpl: SkeletonTemplate):
    """Per-template-joint data weight multipliers (K,) in {0, 1}."""
    if handedness not in HANDEDNESS:
        raise ValidationError(f"handedness must be one of {HANDEDNESS}")
    mask = np.ones(tpl.n_joints)
    for name in LOWER_BODY_JOINTS:
        mask[tpl.index(name)] = 0.0
    off = non_dominant_side(handedness)
    if off:
        for j in masked_joint_names(off, tpl):
            mask[tpl.index(j)] = 0.0
    return mask


def non_dominant_side(handedness):
    return {"one-handed-right": "left", "one-handed-left": "right"}.get(handedness)


def masked_joint_names(side, tpl: SkeletonTemplate):
    """Arm and hand joints (including finger tips) of one side."""
    names = [f"{side}_{j}" for j in ARM_JOINTS]
    names += [n for n in tpl.joint_names if n.startswith(f"{side}_") and
              any(f in n for f in ("thumb", "index", "middle", "ring", "pinky"))]
    return names


def apply_mask(weights, mask):
    return np.asarray(weights) * np.asarray(mask)


# ---------------------------------------------------------------- loss pieces


def joint_loss(joints, camera: Camera, frame: KeypointFrame, tpl: SkeletonTemplate, mask, sigma):
    """(1/|J|) sum gamma_i omega_i psi(P(D_i) - K_i).  ``joints``: (K, 3) world positions."""
    idx = frame.template_indices(tpl)
    w = frame.weights * frame.confidence * np.asarray(mask)[idx]
    n_all = float(len(idx))
    active = np.flatnonzero(w > 0)
    if len(active) == 0:
        return 0.0
    jv = ad.value_of(joints)
    depths = camera_depths(camera, jv[idx[active]])
    behind = depths <= 1e-6
    pts = joints[idx[active]]
    uv = project_var(camera, pts, behind)
    res = ad.sub(uv, frame.keypoints[active])
    psi = geman_mcclure_rows(res, sigma)
    if np.any(behind):
        log.debug("frame %s: %d joints behind the camera", frame.index, int(behind.sum()))
        keep = (~behind).astype(float)
        psi = ad.add(ad.mul(psi, keep), (1.0 - keep) * sigma**2)
    return ad.div(ad.sum(ad.mul(psi, w[active])), n_all)


def latent_regularizer(z, variance=1.0):
    """Zero-mean Gaussian prior on a latent: sum z_i^2 / sigma_i^2."""
    return ad.div(ad.sum(ad.square(z)), float(variance))


def temporal_loss(theta_b, theta_prev, sigma):
    if theta_prev is None:
        return 0.0
    return geman_mcclure(ad.sub(theta_b, np.asarray(theta_prev, dtype=float)), sigma)


def _check_kind(model, kind):
    if model.kind != kind:
        raise KindMismatch(f"expected a {kind} prior, got {model.kind}")


def bprior_loss(zbar, theta_b_init, body_prior: PriorModel, sigma=1.0, lam_zbar=0.01):
    """psi(decode(zbar) - theta_b_init) + lam * |zbar|^2."""
    _check_kind(body_prior, "body")
    _, _, aa = decode(body_prior, zbar)
    dev = geman_mcclure(ad.sub(aa, np.asarray(theta_b_init, dtype=float)), sigma)
    return ad.add(dev, ad.mul(latent_regularizer(zbar), lam_zbar))


def hprior_loss(eps_l, eps_r, theta_l_init, theta_r_init, hand_prior: PriorModel, sigma=1.0,
                lam_l=0.01, lam_r=0.01, active=("left", "right")):
    """Per-hand psi(decode - init) plus latent regularizers; inactive hands contribute 0.

    Left-hand latents live in the mirrored (right-hand) frame.
    """
    _check_kind(hand_prior, "hand")
    total = 0.0
    for side, eps, init, lam in (("left", eps_l, theta_l_init, lam_l), ("right", eps_r, theta_r_init, lam_r)):
        if side not in active:
            continue
        _, _, aa = decode(hand_prior, eps)
        if side == "left":
            aa = mirror_var(aa)
        dev = geman_mcclure(ad.sub(aa, np.asarray(init, dtype=float)), sigma)
        total = ad.add(total, ad.add(dev, ad.mul(latent_regularizer(eps), lam)))
    return total


# -------------------------------------------------------------------- problem


@dataclass
class Priors:
    body: PriorModel
    hand: PriorModel

    def __post_init__(self):
        _check_kind(self.body, "body")
        _check_kind(self.hand, "hand")


class FrameProblem:
    """The full objective for one frame as a function of a flat vector."""

    def __init__(self, frame: KeypointFrame, init: PoseParams, tpl: SkeletonTemplate, camera: Camera,
                 priors: Priors, rom: RomTable, proxies: CollisionProxies, weights: FitWeights,
                 prev_theta_b=None):
        self.frame, self.init, self.tpl, self.camera = frame, init, tpl, camera
        self.priors, self.rom, self.proxies, self.w = priors, rom, proxies, weights
        self.prev = None if prev_theta_b is None else np.asarray(prev_theta_b, dtype=float).reshape(-1)
        self.mask = decision_mask(frame.handedness, tpl)
        self.off = non_dominant_side(frame.handedness)
        self.hands = tuple(s for s in ("left", "right") if s != self.off)
        _, self.rest_joints = shaped_template(tpl, init.shape)
        nb = tpl.body_joint_count
        frozen = set(masked_joint_names(self.off, tpl)) if self.off else set()
        self.body_keep = np.ones((nb, 3))
        for j in range(nb):
            if tpl.joint_names[j + 1] in frozen:
                self.body_keep[j] = 0.0
        arm = [f"{s}_{j}" for s in ("left", "right") for j in ARM_JOINTS]
        self.delta_joints = [j for j in arm if j not in frozen] if weights.refine_arms else []
        self.delta_scatter = np.zeros((nb, len(self.delta_joints)))
        for k, j in enumerate(self.delta_joints):
            self.delta_scatter[tpl.index(j) - 1, k] = 1.0
        self.bio_body = [j for j in self.rom.body_joints if j not in frozen]
        self.bio_slots = [tpl.index(j) - 1 for j in self.bio_body]
        self.dz = priors.body.latent_dim
        self.de = priors.hand.latent_dim
        sizes = [("zbar", self.dz)]
        sizes += [(f"eps_{s[0]}", self.de) for s in self.hands]
        sizes += [("root_orient", 3), ("root_trans", 3), ("delta", 3 * len(self.delta_joints))]
        self.layout = {}
        o = 0
        for name, n in sizes:
            self.layout[name] = slice(o, o + n)
            o += n
        self.size = o

    # --- variables

    def initial_vector(self, start: FitResult | None = None):
        x = np.zeros(self.size)
        if start is None:
            mu, _ = encode_axis_angle(self.priors.body, self.init.body_pose)
            x[self.layout["zbar"]] = mu
            for s in self.hands:
                hp = self.init.left_hand_pose if s == "left" else self.init.right_hand_pose
                mu, _ = encode_axis_angle(self.priors.hand, to_right_frame(hp, s))
                x[self.layout[f"eps_{s[0]}"]] = mu
            x[self.layout["root_orient"]] = self.init.root_orient
            x[self.layout["root_trans"]] = self.init.root_trans
        else:
            x[self.layout["zbar"]] = start.zbar
            if "left" in self.hands:
                x[self.layout["eps_l"]] = start.eps_l
            if "right" in self.hands:
                x[self.layout["eps_r"]] = start.eps_r
            x[self.layout["root_orient"]] = start.pose.root_orient
            x[self.layout["root_trans"]] = start.pose.root_trans
            # carry refinements as the residual between the previous solution and its decoded pose
            _, _, dec = decode(self.priors.body, start.zbar)
            d = (start.pose.body_pose - dec)[[self.tpl.index(j) - 1 for j in self.delta_joints]]
            x[self.layout["delta"]] = d.ravel()
        return x

    def part(self, x, name):
        return x[self.layout[name]]

    # --- pose assembly

    def body_pose(self, x):
        zbar = self.part(x, "zbar")
        _, _, dec = decode(self.priors.body, zbar)
        theta = ad.add(ad.mul(dec, self.body_keep), self.init.body_pose * (1.0 - self.body_keep))
        if self.delta_joints:
            delta = ad.reshape(self.part(x, "delta"), (len(self.delta_joints), 3))
            theta = ad.add(theta, ad.einsum("jk,kc->jc", self.delta_scatter, delta))
        return theta

    def hand_pose(self, x, side):
        init = self.init.left_hand_pose if side == "left" else self.init.right_hand_pose
        if side not in self.hands:
            return init
        _, _, aa = decode(self.priors.hand, self.part(x, f"eps_{side[0]}"))
        return mirror_var(aa) if side == "left" else aa

    def joints(self, x, theta_b=None, hands=None):
        theta_b = self.body_pose(x) if theta_b is None else theta_b
        hl, hr = hands if hands is not None else (self.hand_pose(x, "left"), self.hand_pose(x, "right"))
        root = ad.reshape(self.part(x, "root_orient"), (1, 3))
        full = ad.concat([root, theta_b, hl, hr], axis=0)
        rots = ad.rodrigues(full)
        n = ad.value_of(full).shape[0]
        _, wt = fk_batch(self.tpl, ad.reshape(rots, (1, n, 3, 3)),
                         ad.reshape(self.part(x, "root_trans"), (1, 3)), self.rest_joints)
        return wt[0]

    # --- objective

    def terms(self, x):
        w = self.w
        theta_b = self.body_pose(x)
        hl, hr = self.hand_pose(x, "left"), self.hand_pose(x, "right")
        joints = self.joints(x, theta_b, (hl, hr))
        t = {"joint": joint_loss(joints, self.camera, self.frame, self.tpl, self.mask, w.sigma_joint)}
        t["bprior"] = bprior_loss(self.part(x, "zbar"), self.init.body_pose, self.priors.body,
                                  w.sigma_prior, w.lam_zbar)
        t["hprior"] = hprior_loss(
            self.part(x, "eps_l") if "left" in self.hands else None,
            self.part(x, "eps_r") if "right" in self.hands else None,
            self.init.left_hand_pose,
            self.init.right_hand_pose, self.priors.hand, w.sigma_prior, w.lam_eps_l, w.lam_eps_r,
            self.hands,
        )
        t["pen"] = penetration_loss(joints, self.proxies)
        t["temp"] = temporal_loss(ad.reshape(theta_b, (-1,)), self.prev, w.sigma_temp)
        if self.bio_body:
            arm = ad.rodrigues(theta_b[self.bio_slots])
            t["bbiomech"] = rotation_penalty(arm, self.rom, self.bio_body)
        else:
            t["bbiomech"] = 0.0
        hb = 0.0
        for side, h in (("left", hl), ("right", hr)):
            if side in self.hands:
                hb = ad.add(hb, rotation_penalty(ad.rodrigues(h), self.rom, self.rom.hand_joint_names(side)))
        t["hbiomech"] = hb
        return t

    def total(self, terms):
        tot = terms["joint"]
        for lam, name in zip(self.w.lambdas, TERM_NAMES[1:]):
            if lam != 0.0:
                tot = ad.add(tot, ad.mul(terms[name], lam))
        return tot

    def value_and_grad(self, x):
        tape = ad.Tape()
        xv = tape.var(x)
        f = self.total(self.terms(xv))
        (g,) = ad.gradient(f, [xv])
        return float(ad.value_of(f)), g

    def report(self, x):
        terms = {k: float(ad.value_of(v)) for k, v in self.terms(np.asarray(x, dtype=float)).items()}
        total = terms["joint"] + sum(l * terms[n] for l, n in zip(self.w.lambdas, TERM_NAMES[1:]))
        return total, terms

    def pose(self, x) -> PoseParams:
        theta_b = ad.value_of(self.body_pose(x))
        return PoseParams(
            self.part(x, "root_orient").copy(), self.part(x, "root_trans").copy(), theta_b,
            np.array(ad.value_of(self.hand_pose(x, "left"))), np.array(ad.value_of(self.hand_pose(x, "right"))),
            self.init.shape.copy(),
        )

    # --- stages

    def prealign(self, x, iters):
        """Fit only the global orientation and translation on torso keypoints."""
        if iters <= 0:
            return x
        torso = np.zeros(self.tpl.n_joints)
        for j in TORSO_JOINTS:
            torso[self.tpl.index(j)] = 1.0
        mask = self.mask * torso
        idx = self.frame.template_indices(self.tpl)
        if not np.any(self.frame.weights * self.frame.confidence * mask[idx] > 0):
            return x
        free = np.r_[np.arange(self.size)[self.layout["root_orient"]], np.arange(self.size)[self.layout["root_trans"]]]
        theta_b = ad.value_of(self.body_pose(x))
        hands = (ad.value_of(self.hand_pose(x, "left")), ad.value_of(self.hand_pose(x, "right")))

        def fun(v):
            tape = ad.Tape()
            vv = tape.var(v)
            xx = ad.concat([x[: free[0]], vv, x[free[-1] + 1:]], axis=0)
            j = self.joints(xx, theta_b, hands)
            f = joint_loss(j, self.camera, self.frame, self.tpl, mask, self.w.sigma_joint)
            (g,) = ad.gradient(f, [vv])
            return float(ad.value_of(f)), g

        assert np.all(np.diff(free) == 1)
        res = lbfgs_minimize(fun, x[free], LbfgsSettings(max_iter=iters, gtol=1e-6))
        out = x.copy()
        out[free] = res.x
        return out

    def _gn_residuals(self, x):
        theta_b = np.asarray(ad.value_of(self.body_pose(x)))
        hl = np.asarray(ad.value_of(self.hand_pose(x, "left")))
        hr = np.asarray(ad.value_of(self.hand_pose(x, "right")))
        joints = np.asarray(ad.value_of(self.joints(x, theta_b, (hl, hr))))
        idx = self.frame.template_indices(self.tpl)
        w = self.frame.weights * self.frame.confidence * self.mask[idx]
        act = w > 0
        uv = project(self.camera, joints[idx[act]], strict=False)
        uv = np.nan_to_num(uv) * np.sqrt(w[act] / len(idx))[:, None]
        lam_b = np.sqrt(self.w.lambdas[0] + self.w.lambdas[3])
        lam_h = np.sqrt(self.w.lambdas[1])
        return np.concatenate([uv.ravel(), lam_b * theta_b.ravel(), lam_h * hl.ravel(), lam_h * hr.ravel()])

    def jacobi_scales(self, x, h=1e-6):
        """Per-variable step scales 1/sqrt(diag(J^T J)) from a Gauss-Newton
        approximation of the objective, by forward differences."""
        r0 = self._gn_residuals(x)
        diag = np.zeros(self.size)
        for i in range(self.size):
            xi = x.copy()
            xi[i] += h
            diag[i] = np.sum(((self._gn_residuals(xi) - r0) / h) ** 2)
        for name, lam in (("zbar", self.w.lam_zbar), ("eps_l", self.w.lam_eps_l), ("eps_r", self.w.lam_eps_r)):
            if name in self.layout:
                diag[self.layout[name]] += lam
        diag = np.maximum(diag, 1e-6 * max(np.max(diag), 1e-12))
        return 1.0 / np.sqrt(diag)

    def solve(self, start: FitResult | None = None, scales=None):
        """Prealign, then L-BFGS in the Jacobi-scaled variables u = (x - x0) / scales."""
        x0 = self.initial_vector(start)
        x0 = self.prealign(x0, self.w.prealign_iters)
        if scales is None or len(scales) != self.size:
            scales = self.jacobi_scales(x0)

        def fun(u):
            f, g = self.value_and_grad(x0 + scales * u)
            return f, g * scales

        res = lbfgs_minimize(fun, np.zeros(self.size), self.w.lbfgs)
        res.x = x0 + scales * res.x
        self.scales = scales
        total, terms = self.report(res.x)
        hands = {s: self.part(res.x, f"eps_{s[0]}").copy() if s in self.hands else None for s in ("left", "right")}
        eps_l = hands["left"] if hands["left"] is not None else np.zeros(self.de)
        eps_r = hands["right"] if hands["right"] is not None else np.zeros(self.de)
        return FitResult(
            self.frame.index, self.pose(res.x), self.part(res.x, "zbar").copy(), eps_l, eps_r,
            total, terms, weights_dict(self.w), res.iterations, res.converged, res.status, res.trace,
        )


def weights_dict(w: FitWeights):
    return {"lambdas": list(w.lambdas), "lam_zbar": w.lam_zbar, "lam_eps_l": w.lam_eps_l,
            "lam_eps_r": w.lam_eps_r, "sigma_joint": w.sigma_joint, "sigma_prior": w.sigma_prior,
            "sigma_temp": w.sigma_temp}


def objective(x, problem: FrameProblem):
    """Scalar objective Var (or float) for a flat variable vector."""
    return problem.total(problem.terms(x))


def fit_sequence(frames, tpl: SkeletonTemplate, camera: Camera, priors: Priors, rom: RomTable,
                 proxies: CollisionProxies, weights: FitWeights | None = None, init_poses=None):
    """Fit frames in order; frame t warm-starts from, and is smoothed toward, frame t-1."""
    weights = weights or FitWeights()
    frames = list(frames)
    if any(b.index <= a.index for a, b in zip(frames, frames[1:])):
        raise ValidationError("frames must be sorted by strictly increasing index")
    if isinstance(init_poses, PoseParams):
        init_poses = [init_poses] * len(frames)
    if init_poses is None or len(init_poses) != len(frames):
        raise ValidationError("need one initial pose per frame (or a single shared one)")
    results, last, scales = [], None, None
    for frame, init in zip(frames, init_poses):
        prev_theta = None if last is None else last.pose.body_pose
        prob = FrameProblem(frame, init, tpl, camera, priors, rom, proxies, weights, prev_theta)
        try:
            # variable scales are computed once and reused while the layout is unchanged
            res = prob.solve(last, scales)
            scales = prob.scales
        except NumericalError as exc:
            log.warning("frame %s failed: %s", frame.index, exc)
            base = last.pose if last is not None else init
            res = FitResult(frame.index, base.copy(), np.zeros(priors.body.latent_dim),
                            np.zeros(priors.hand.latent_dim), np.zeros(priors.hand.latent_dim),
                            float("nan"), {}, weights_dict(weights), 0, False, "failed", [], str(exc))
            results.append(res)
            continue
        results.append(res)
        last = res
    return results
