"""Shared fixtures: a small synthetic dataset and a model trained on it.

Session-scoped because training even a small model costs seconds; tests
must not mutate these in place.
"""
from dataclasses import replace

import numpy as np
import pytest

from mitoscan import Config, SyntheticConfig, generate_synthetic, train
from mitoscan.training import assemble_dataset


@pytest.fixture(scope="session")
def small_cfg() -> Config:
    cfg = Config()
    return replace(
        cfg,
        pipeline=replace(cfg.pipeline, epochs=24, train_images=7,
                         dgsb=False, se=False, incdp=True),
        synth=replace(cfg.synth, images=10, size=192, nuclei=12, mitoses=4,
                      impostors=3, seed=11),
    )


@pytest.fixture(scope="session")
def small_synth(small_cfg):
    imgs, annots = generate_synthetic(small_cfg.synth)
    images = {info.id: im for info, im in zip(annots.images, imgs)}
    return images, annots


@pytest.fixture(scope="session")
def small_dataset(small_synth, small_cfg):
    images, annots = small_synth
    n = small_cfg.pipeline.train_images
    train_imgs = {info.id: images[info.id] for info in annots.images[:n]}
    return assemble_dataset(train_imgs, annots, small_cfg)


@pytest.fixture(scope="session")
def trained_small(small_dataset, small_cfg):
    return train(small_dataset, small_cfg, seed=1)


@pytest.fixture(scope="session")
def detect_fixture():
    """One fresh image with 5 planted mitoses, unseen by trained_small."""
    cfg = SyntheticConfig(images=1, size=256, nuclei=12, mitoses=5,
                          impostors=4, seed=23)
    imgs, annots = generate_synthetic(cfg)
    return imgs[0], annots


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # stash the call-phase outcome so teardown fixtures can see pass/fail
    # (used by the acceptance reporter)
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)
