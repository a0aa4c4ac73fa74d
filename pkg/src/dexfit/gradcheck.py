"""Randomized finite-difference checks for the autodiff primitives."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import rotations as rot

FD_STEP = 1e-5


def relative_error(g_ad, g_fd, floor=1e-12):
    g_ad, g_fd = np.ravel(g_ad), np.ravel(g_fd)
    scale = max(np.linalg.norm(g_fd), np.linalg.norm(g_ad), floor)
    return float(np.linalg.norm(g_ad - g_fd) / scale)


def numeric_gradient(f, x, h=FD_STEP, coords=None):
    """Central differences of a scalar function; optionally only at ``coords``."""
    x = np.array(x, dtype=float)
    flat = x.ravel()
    coords = range(flat.size) if coords is None else coords
    g = np.zeros(flat.size)
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        fp = f(flat.reshape(x.shape))
        flat[i] = old - h
        fm = f(flat.reshape(x.shape))
        flat[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape)


def check_scalar_fn(fn, x, h=FD_STEP):
    """fn maps a Var (or array) to a scalar; returns relative error of the gradient."""
    _, g = ad.value_and_grad(fn, x)
    g_fd = numeric_gradient(lambda v: float(ad.value_of(fn(v))), x, h)
    return relative_error(g, g_fd)


def _projector(rng, shape):
    w = rng.normal(size=shape)
    return lambda out: ad.sum(ad.mul(out, w))


def _primitive_cases(rng):
    """name -> (function of a Var returning a tensor, sampler for the input)."""
    def away_from_zero(shape):
        return lambda: rng.uniform(0.3, 2.0, shape) * rng.choice([-1.0, 1.0], shape)

    def rotations_near(shape, scale=0.1):
        return lambda: rot.axis_angle_to_matrix(rng.normal(size=shape[:-2] + (3,))) + scale * rng.normal(size=shape)

    m_fixed = rng.normal(size=(4, 3))
    return {
        "add": (lambda x: ad.add(x, ad.square(x)), lambda: rng.normal(size=(3, 4))),
        "sub": (lambda x: ad.sub(ad.sin(x), x), lambda: rng.normal(size=(3, 4))),
        "mul": (lambda x: ad.mul(x, ad.cos(x)), lambda: rng.normal(size=(5,))),
        "div": (lambda x: ad.div(ad.sin(x), x), away_from_zero((5,))),
        "exp": (ad.exp, lambda: rng.normal(size=(4,))),
        "log": (ad.log, lambda: rng.uniform(0.2, 3.0, (4,))),
        "sqrt": (ad.sqrt, lambda: rng.uniform(0.2, 3.0, (4,))),
        "square": (ad.square, lambda: rng.normal(size=(4,))),
        "sin": (ad.sin, lambda: rng.normal(size=(4,))),
        "cos": (ad.cos, lambda: rng.normal(size=(4,))),
        "hinge": (lambda x: ad.square(ad.hinge(x)), away_from_zero((6,))),
        "leaky_relu": (ad.leaky_relu, away_from_zero((6,))),
        "maximum": (lambda x: ad.maximum(x, ad.mul(x, -0.5)), away_from_zero((6,))),
        "atan2": (lambda x: ad.atan2(x[0], x[1]), lambda: rng.normal(size=(2, 5)) + 0.5),
        "sum": (lambda x: ad.sum(ad.square(x), axis=1), lambda: rng.normal(size=(3, 4))),
        "mean": (lambda x: ad.mean(ad.square(x), axis=0), lambda: rng.normal(size=(3, 4))),
        "matmul": (lambda x: ad.matmul(x, ad.transpose(x)), lambda: rng.normal(size=(3, 4))),
        "einsum": (lambda x: ad.einsum("ij,kj->ik", x, m_fixed), lambda: rng.normal(size=(2, 3))),
        "concat": (lambda x: ad.concat([x, ad.square(x)], axis=0), lambda: rng.normal(size=(2, 3))),
        "slice": (lambda x: ad.square(x[1:, ::2]), lambda: rng.normal(size=(3, 4))),
        "transpose": (lambda x: ad.mul(ad.transpose(x), ad.transpose(x)), lambda: rng.normal(size=(3, 4))),
        "rodrigues": (ad.rodrigues, lambda: rng.normal(size=(4, 3))),
        "rodrigues_small": (ad.rodrigues, lambda: 1e-5 * rng.normal(size=(4, 3))),
        "project_rotation": (ad.project_rotation, rotations_near((3, 3, 3))),
        "rotation_log": (lambda x: ad.rotation_log(ad.project_rotation(x)), rotations_near((3, 3, 3), 0.05)),
        "euler_angles": (lambda x: ad.euler_angles(ad.rodrigues(x), "XZY"), lambda: 0.5 * rng.normal(size=(4, 3))),
    }


def run_suite(samples=100, seed=0, names=None):
    """Max relative error per primitive over random inputs and random output projections."""
    rng = np.random.default_rng(seed)
    cases = _primitive_cases(rng)
    out = {}
    for name, (op, sample) in cases.items():
        if names and name not in names:
            continue
        worst = 0.0
        for _ in range(samples):
            x = sample()
            probe = _projector(rng, np.shape(ad.value_of(op(x))))
            worst = max(worst, check_scalar_fn(lambda v: probe(op(v)), x))
        out[name] = worst
    return out
