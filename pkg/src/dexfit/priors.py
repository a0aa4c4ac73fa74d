"""VAE pose priors for the body and the hands.

Encoder: flattened per-joint rotation matrices -> hidden -> hidden -> (mu, log_var).
Decoder: latent -> hidden -> hidden -> raw 3x3 blocks, which are projected onto
SO(3) and mapped to axis-angle.  Hidden layers use a leaky rectifier; the two
output heads are linear.

One hand model serves both hands.  Left-hand poses are mirrored into the
right-hand frame before encoding and mirrored back after decoding.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import rotations as rot
from .biomech import RomTable, rotation_penalty
from .body_model import N_BODY, N_HAND, SkeletonTemplate, fk_batch, skin_batch
from .errors import (
    DimensionMismatch,
    DivergedTraining,
    KindMismatch,
    NumericalError,
    ShapeMismatch,
    ValidationError,
)

MODEL_SCHEMA_VERSION = 1
BODY_WEIGHTS = (0.001, 0.999, 0.999, 0.01, 0.0001, 1.5)
HAND_WEIGHTS = (0.0001, 0.999, 0.999, 0.01, 0.0001, 1.5)
LOSS_NAMES = ("kl", "recon", "mesh", "orth", "reg", "biomech")
LEAKY_SLOPE = 0.2


@dataclass
class PriorConfig:
    kind: str = "body"
    n_joints: int = N_BODY
    latent_dim: int = 33
    hidden: int = 512
    n_layers: int = 3
    weights: tuple = BODY_WEIGHTS  # c1..c6: kl, recon, mesh, orth, reg, biomech (0 disables)
    lr: float = 1e-3
    seed: int = 0
    batch_size: int = 64
    steps: int = 2000

    def __post_init__(self):
        if self.kind not in ("body", "hand"):
            raise ValidationError(f"prior kind must be body or hand, got {self.kind!r}")
        self.weights = tuple(float(w) for w in self.weights)
        if len(self.weights) != 6 or any(w < 0 for w in self.weights):
            raise ValidationError("six non-negative loss weights are required")
        if self.latent_dim < 1 or self.hidden < 1 or self.n_joints < 1:
            raise ValidationError("latent_dim, hidden and n_joints must be positive")
        if self.n_layers != 3:
            raise ValidationError("only 3 weight layers per stack are supported")

    @classmethod
    def body(cls, **kw):
        return cls(**{"kind": "body", "n_joints": N_BODY, "latent_dim": 33, "weights": BODY_WEIGHTS, **kw})

    @classmethod
    def hand(cls, unfiltered=False, **kw):
        d = 24 if unfiltered else 23
        return cls(**{"kind": "hand", "n_joints": N_HAND, "latent_dim": d, "weights": HAND_WEIGHTS, **kw})


def _layer_shapes(cfg: PriorConfig):
    d_in, h, d = 9 * cfg.n_joints, cfg.hidden, cfg.latent_dim
    return {
        "enc0": (d_in, h), "enc1": (h, h), "enc2": (h, 2 * d),
        "dec0": (d, h), "dec1": (h, h), "dec2": (h, d_in),
    }


def init_params(cfg: PriorConfig):
    """He-style init; the decoder's last bias is tiled identities so an
    untrained decoder already emits valid rotations."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, (fan_in, fan_out) in _layer_shapes(cfg).items():
        scale = np.sqrt(2.0 / fan_in)
        if name == "dec2":
            scale *= 0.1
        params[name + ".w"] = rng.normal(0.0, scale, (fan_in, fan_out))
        params[name + ".b"] = np.zeros(fan_out)
    params["dec2.b"] = np.tile(np.eye(3).ravel(), cfg.n_joints)
    return params


def _dense(x, w, b, act):
    n = ad.value_of(x).shape[0]
    y = ad.add(ad.matmul(x, w), ad.broadcast_to(b, (n, ad.value_of(b).shape[0])))
    return ad.leaky_relu(y, LEAKY_SLOPE) if act else y


def _as_batch_matrices(rotmats, n_joints):
    r = ad.value_of(rotmats)
    single = r.ndim == 3
    if r.shape[-3:] != (n_joints, 3, 3):
        raise ShapeMismatch(f"expected (..., {n_joints}, 3, 3) rotations, got {r.shape}")
    return single


@dataclass
class PriorModel:
    config: PriorConfig
    params: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = _layer_shapes(self.config)
        for name, (fi, fo) in shapes.items():
            if self.params[name + ".w"].shape != (fi, fo) or self.params[name + ".b"].shape != (fo,):
                raise ShapeMismatch(f"parameter {name} has the wrong shape")
        for v in self.params.values():
            if not np.all(np.isfinite(v)):
                raise ValidationError("non-finite prior weights")

    @classmethod
    def initialize(cls, config: PriorConfig):
        return cls(config, init_params(config), {"activation": f"leaky_relu({LEAKY_SLOPE})"})

    @property
    def kind(self):
        return self.config.kind

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def param_names(self):
        return sorted(self.params)

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def param_vector(self):
        return np.concatenate([self.params[k].ravel() for k in self.param_names()])

    # --- network pieces; ``p`` maps names to arrays or Vars

    def encoder(self, rotmats, p=None):
        p = p or self.params
        x = rotmats
        n = ad.value_of(x).shape[0]
        x = ad.reshape(x, (n, 9 * self.config.n_joints))
        h = _dense(x, p["enc0.w"], p["enc0.b"], True)
        h = _dense(h, p["enc1.w"], p["enc1.b"], True)
        out = _dense(h, p["enc2.w"], p["enc2.b"], False)
        d = self.config.latent_dim
        return out[:, :d], out[:, d:]

    def decoder_raw(self, z, p=None):
        p = p or self.params
        n = ad.value_of(z).shape[0]
        h = _dense(z, p["dec0.w"], p["dec0.b"], True)
        h = _dense(h, p["dec1.w"], p["dec1.b"], True)
        out = _dense(h, p["dec2.w"], p["dec2.b"], False)
        return ad.reshape(out, (n, self.config.n_joints, 3, 3))


def encode(model: PriorModel, rotmats):
    """(J, 3, 3) or (B, J, 3, 3) rotations -> (mu, log_var)."""
    single = _as_batch_matrices(rotmats, model.config.n_joints)
    r = ad.reshape(rotmats, (1,) + ad.value_of(rotmats).shape) if single else rotmats
    mu, lv = model.encoder(r)
    if single:
        return mu[0], lv[0]
    return mu, lv


def encode_axis_angle(model: PriorModel, aa):
    aa = np.asarray(aa, dtype=float)
    return encode(model, rot.axis_angle_to_matrix(aa))


def reparameterize(mu, log_var, noise):
    noise = np.asarray(noise, dtype=float)
    if noise.shape != ad.value_of(mu).shape or ad.value_of(log_var).shape != noise.shape:
        raise ShapeMismatch("mu, log_var and noise must have the same shape")
    return ad.add(mu, ad.mul(ad.exp(ad.mul(log_var, 0.5)), noise))


def decode(model: PriorModel, z):
    """z (d,) or (B, d) -> (raw blocks, projected rotations, axis-angles)."""
    zv = ad.value_of(z)
    if zv.shape[-1] != model.latent_dim or zv.ndim not in (1, 2):
        raise DimensionMismatch(f"latent has shape {zv.shape}, model expects (..., {model.latent_dim})")
    single = zv.ndim == 1
    zz = ad.reshape(z, (1, zv.shape[0])) if single else z
    raw = model.decoder_raw(zz)
    proj = ad.project_rotation(raw)
    aa = ad.rotation_log(proj)
    if single:
        return raw[0], proj[0], aa[0]
    return raw, proj, aa


def kl_loss(mu, log_var):
    """0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2), averaged over a leading batch axis if any."""
    per = ad.sub(ad.add(ad.square(mu), ad.exp(log_var)), ad.add(log_var, 1.0))
    tot = ad.mul(ad.sum(per), 0.5)
    nd = ad.value_of(mu).ndim
    return ad.div(tot, float(ad.value_of(mu).shape[0])) if nd == 2 else tot


# -------------------------------------------------------------------- losses


@dataclass
class MeshContext:
    """Everything the mesh and biomech terms need, prepared once per template."""

    tpl: SkeletonTemplate
    rest_vertices: np.ndarray
    rest_joints: np.ndarray
    offset: int  # index of the first modeled joint inside the full (P, 3) pose
    vertex_ids: np.ndarray
    rom: RomTable
    rom_joints: list
    rom_slots: list  # positions of rom_joints inside the modeled joint block


def mesh_context(kind, tpl: SkeletonTemplate, rom: RomTable):
    verts = tpl.vertices
    rest_j = tpl.joint_regressor @ verts
    if kind == "body":
        offset = 1
        vids = np.arange(tpl.n_vertices)
        joints = list(rom.body_joints)
        slots = [tpl.index(j) - offset for j in joints]
    elif kind == "hand":
        offset = 1 + tpl.body_joint_count + tpl.hand_joint_count
        vids = tpl.regions["rhand"]["vertices"]
        joints = rom.hand_joint_names("right")
        slots = [tpl.index(j) - offset for j in joints]
    else:
        raise KindMismatch(f"unknown prior kind {kind!r}")
    return MeshContext(tpl, verts, rest_j, offset, np.asarray(vids), rom, joints, slots)


def posed_vertices(ctx: MeshContext, local_rot):
    """Skin a batch where only the modeled joint block is posed; (B, J, 3, 3) in."""
    tpl = ctx.tpl
    lr = ad.value_of(local_rot)
    b, j = lr.shape[0], lr.shape[1]
    p = tpl.n_posed
    before = np.broadcast_to(np.eye(3), (b, ctx.offset, 3, 3)).copy()
    after = np.broadcast_to(np.eye(3), (b, p - ctx.offset - j, 3, 3)).copy()
    parts = [before, local_rot] + ([after] if after.shape[1] else [])
    full = ad.concat(parts, axis=1)
    wr, wt = fk_batch(tpl, full, np.zeros((b, 3)), ctx.rest_joints)
    return skin_batch(tpl, wr, wt, ctx.rest_vertices, ctx.rest_joints, ctx.vertex_ids), wt


def loss_components(mu, log_var, raw, proj, aa_hat, aa_in, target_verts, ctx: MeshContext, phi_sq):
    """Unweighted loss terms as a dict of scalars (Vars when inputs are Vars)."""
    n = float(np.shape(aa_in)[0])
    diff = ad.sub(aa_hat, aa_in)
    recon = ad.div(ad.sum(ad.square(diff)), n)
    verts, _ = posed_vertices(ctx, proj)
    dv = ad.sub(verts, target_verts)
    n_v = float(np.shape(target_verts)[1])
    mesh = ad.div(ad.sum(ad.square(dv)), n * n_v)
    rawv = ad.value_of(raw)
    gram = ad.matmul(raw, ad.swapaxes(raw, -1, -2))
    eye = np.broadcast_to(np.eye(3), rawv.shape).copy()
    orth = ad.div(ad.sum(ad.square(ad.sub(gram, eye))), n)
    bio = ad.div(ad.sum(rotation_penalty(proj[:, ctx.rom_slots], ctx.rom, ctx.rom_joints)), n)
    return {
        "kl": kl_loss(mu, log_var),
        "recon": recon,
        "mesh": mesh,
        "orth": orth,
        "reg": phi_sq,
        "biomech": bio,
    }


def weighted_total(components, weights):
    total = 0.0
    for w, name in zip(weights, LOSS_NAMES):
        if w != 0.0:
            total = ad.add(total, ad.mul(components[name], w))
    return total


def _phi_sq(params):
    total = 0.0
    for k in sorted(params):
        total = ad.add(total, ad.sum(ad.square(params[k])))
    return total


def training_losses(model: PriorModel, batch_aa, ctx: MeshContext, noise, params=None, target_verts=None):
    """Total loss and components for a batch of axis-angle poses (B, J, 3).

    ``params`` may hold Vars (for training); defaults to the model arrays.
    """
    if model.kind == "body" and ctx.offset != 1 or model.kind == "hand" and ctx.offset == 1:
        raise KindMismatch("mesh context does not match the prior kind")
    p = params or model.params
    batch_aa = np.asarray(batch_aa, dtype=float)
    if batch_aa.ndim != 3 or batch_aa.shape[1:] != (model.config.n_joints, 3) or len(batch_aa) == 0:
        raise ShapeMismatch(f"batch must be (B, {model.config.n_joints}, 3), got {batch_aa.shape}")
    rin = rot.axis_angle_to_matrix(batch_aa)
    if target_verts is None:
        target_verts, _ = posed_vertices(ctx, rin)
    mu, lv = model.encoder(rin, p)
    z = reparameterize(mu, lv, noise)
    raw = model.decoder_raw(z, p)
    proj = ad.project_rotation(raw)
    aa_hat = ad.rotation_log(proj)
    comps = loss_components(mu, lv, raw, proj, aa_hat, batch_aa, target_verts, ctx, _phi_sq(p))
    return weighted_total(comps, model.config.weights), comps


# ------------------------------------------------------------------- training


def reconstruction_mpjpe(model: PriorModel, aa, ctx: MeshContext):
    """Mean joint error (mm) between FK of the input and of decode(mu)."""
    aa = np.asarray(aa, dtype=float)
    mu, _ = encode_axis_angle(model, aa)
    _, proj, _ = decode(model, mu)
    _, j_in = posed_vertices(ctx, rot.axis_angle_to_matrix(aa))
    _, j_out = posed_vertices(ctx, proj)
    if model.kind == "hand":
        sel = ctx.tpl.regions["rhand"]["joints"]
    else:
        sel = np.arange(ctx.tpl.n_joints)
    d = np.linalg.norm(j_in[:, sel] - j_out[:, sel], axis=-1)
    return float(1000.0 * d.mean())


@dataclass
class TrainResult:
    model: PriorModel
    curve: list  # per-step dicts: total plus components
    val_curve: list
    steps: int


class Adam:
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def split_by_sequence(sequence_ids, seed=0, fractions=(0.9, 0.05, 0.05)):
    """Indices for train/dev/test, keeping whole sequences together."""
    ids = np.asarray(sequence_ids)
    uniq = np.unique(ids)
    rng = np.random.default_rng(seed)
    order = rng.permutation(uniq)
    n = len(order)
    n_train = max(1, int(round(fractions[0] * n)))
    n_dev = int(round(fractions[1] * n)) if n - n_train > 0 else 0
    groups = (order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:])
    return [np.flatnonzero(np.isin(ids, g)) for g in groups]


def dataset_hash(poses):
    return hashlib.sha256(np.ascontiguousarray(poses, dtype=np.float64).tobytes()).hexdigest()[:16]


def train(config: PriorConfig, poses, tpl: SkeletonTemplate, rom: RomTable, sequence_ids=None,
          stop_ratio=None, log=None) -> TrainResult:
    """Adam training.  ``poses``: (N, J, 3) axis-angles (right-hand frame for hands).

    Returns the parameters with the best dev loss (train loss when there is
    no dev split).  ``stop_ratio`` stops early once the train reconstruction
    MPJPE falls below that fraction of its initial value.
    """
    poses = np.asarray(poses, dtype=float)
    if poses.ndim != 3 or poses.shape[1:] != (config.n_joints, 3):
        raise ShapeMismatch(f"poses must be (N, {config.n_joints}, 3), got {poses.shape}")
    if sequence_ids is None:
        train_idx, dev_idx = np.arange(len(poses)), np.zeros(0, int)
    else:
        train_idx, dev_idx, _ = split_by_sequence(sequence_ids, config.seed)
    model = PriorModel.initialize(config)
    ctx = mesh_context(config.kind, tpl, rom)
    rng = np.random.default_rng(config.seed + 1)
    params = {k: v.copy() for k, v in model.params.items()}
    opt = Adam(params, config.lr)
    train_poses = poses[train_idx]
    targets = posed_vertices(ctx, rot.axis_angle_to_matrix(train_poses))[0]
    curve, val_curve = [], []
    best, best_params = np.inf, {k: v.copy() for k, v in params.items()}
    mpjpe0 = reconstruction_mpjpe(model, train_poses, ctx) if stop_ratio else None
    step = 0
    for step in range(1, config.steps + 1):
        bsz = min(config.batch_size, len(train_poses))
        sel = np.sort(rng.choice(len(train_poses), bsz, replace=False)) if bsz < len(train_poses) else np.arange(bsz)
        noise = rng.standard_normal((bsz, config.latent_dim))
        tape = ad.Tape(check_finite=False)
        pv = {k: tape.var(v) for k, v in params.items()}
        try:
            total, comps = training_losses(model, train_poses[sel], ctx, noise, pv, targets[sel])
        except NumericalError as exc:
            raise DivergedTraining(f"training step {step} failed: {exc}") from exc
        tval = float(ad.value_of(total))
        if not np.isfinite(tval):
            raise DivergedTraining(f"non-finite training loss at step {step}")
        names = sorted(pv)
        grads = ad.gradient(total, [pv[k] for k in names])
        opt.step(params, dict(zip(names, grads)))
        rec = {"step": step, "total": tval, **{k: float(ad.value_of(v)) for k, v in comps.items()}}
        curve.append(rec)
        score = tval
        if len(dev_idx):
            dev = poses[dev_idx]
            dv_total, _ = training_losses(
                PriorModel(config, params), dev, ctx, np.zeros((len(dev), config.latent_dim))
            )
            score = float(dv_total)
            val_curve.append(score)
        if score < best:
            best, best_params = score, {k: v.copy() for k, v in params.items()}
        if log and step % 100 == 0:
            log(f"step {step} total {tval:.5f} recon {rec['recon']:.5f} kl {rec['kl']:.4f}")
        if stop_ratio and step % 25 == 0:
            cur = reconstruction_mpjpe(PriorModel(config, params), train_poses, ctx)
            if cur < stop_ratio * mpjpe0:
                best_params = {k: v.copy() for k, v in params.items()}
                break
    meta = {
        "activation": f"leaky_relu({LEAKY_SLOPE})",
        "seed": config.seed,
        "dataset_hash": dataset_hash(poses),
        "loss_curve": [c["total"] for c in curve],
        "steps": step,
    }
    return TrainResult(PriorModel(config, best_params, meta), curve, val_curve, step)


# ------------------------------------------------------------- serialization


def save_model(model: PriorModel, path):
    header = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": {**asdict(model.config), "weights": list(model.config.weights)},
        "metadata": model.metadata,
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> PriorModel:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            params = {k[len("param/"):]: np.array(data[k]) for k in data.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as exc:
        raise ValidationError(f"cannot read prior model {path}: {exc}") from None
    if header.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema_version {header.get('schema_version')!r}")
    try:
        return PriorModel(PriorConfig(**header["config"]), params, header.get("metadata", {}))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed prior model ({exc})") from None


# --------------------------------------------------------------- hand frames


def to_right_frame(hand_aa, side):
    """Mirror a left-hand pose into the right-hand frame (identity for right)."""
    hand_aa = np.asarray(hand_aa, dtype=float)
    return rot.mirror_axis_angle(hand_aa) if side == "left" else hand_aa


def mirror_var(aa):
    """Differentiable sagittal mirror of (..., 3) axis-angles."""
    sign = np.broadcast_to(np.array([1.0, -1.0, -1.0]), ad.value_of(aa).shape).copy()
    return ad.mul(aa, sign)
