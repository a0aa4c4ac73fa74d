from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from dexfit import rotations as rot
from dexfit.biomech import load_rom
from dexfit.body_model import Camera, build_toy_template
from dexfit.penetration import default_proxies
from dexfit.priors import PriorConfig, PriorModel, train
from dexfit.synth import training_poses

settings.register_profile("dexfit", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("dexfit")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tpl():
    return build_toy_template()


@pytest.fixture(scope="session")
def rom():
    return load_rom()


@pytest.fixture(scope="session")
def camera():
    return Camera.default_front()


@pytest.fixture(scope="session")
def proxies(tpl):
    return default_proxies(tpl)


def tiny_prior(kind, seed=0, hidden=8, latent=4, weight_scale=None):
    cfg = PriorConfig.body(hidden=hidden, latent_dim=latent, seed=seed) if kind == "body" else \
        PriorConfig.hand(hidden=hidden, latent_dim=latent, seed=seed)
    model = PriorModel.initialize(cfg)
    if weight_scale is not None:
        rng = np.random.default_rng(seed + 100)
        for k, v in model.params.items():
            if k != "dec2.b":
                model.params[k] = rng.normal(0.0, weight_scale, v.shape)
    return model


@pytest.fixture(scope="session")
def tiny_priors():
    from dexfit.fitting import Priors

    return Priors(tiny_prior("body", 0), tiny_prior("hand", 1))


@pytest.fixture(scope="session")
def fit_priors(tpl, rom):
    """Full-size priors (hidden 512, d 33 / 23) trained briefly on 64 sampled poses each."""
    from dexfit.fitting import Priors

    rng = np.random.default_rng(0)
    bp = training_poses(rng, tpl, rom, 64, "body")
    hp = training_poses(rng, tpl, rom, 64, "hand")
    body = train(PriorConfig.body(steps=300), bp, tpl, rom).model
    hand = train(PriorConfig.hand(steps=300), hp, tpl, rom).model
    return Priors(body, hand), bp, hp


def random_rotations(rng, n, max_angle=np.pi - 1e-3):
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    ang = rng.uniform(1e-6, max_angle, n)
    return axis * ang[:, None], rot.axis_angle_to_matrix(axis * ang[:, None])
