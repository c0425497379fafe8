import json
from pathlib import Path

import numpy as np
import pytest

from radsmith.models.schemas import DegradationConfig, DenoiserSpec, DiscriminatorSpec, ModelSpec, SRSpec, TrainConfig
from radsmith.services import autodiff as ad
from radsmith.services.fixtures import generate_fixture, write_fixture


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def float64_default():
    ad.set_default_dtype("float64")
    yield
    ad.set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def radiographs():
    """Four 32x32 synthetic radiographs"""
    return generate_fixture(count=4, size=32, seed=3)


@pytest.fixture
def hr_dir(tmp_path):
    directory = tmp_path / "hr"
    write_fixture(directory, count=4, size=32, seed=3)
    return directory


@pytest.fixture
def tiny_spec():
    return ModelSpec(
        denoiser=DenoiserSpec(n_rca_blocks=2, channels=4),
        sr=SRSpec(n_res_blocks=1, channels=4, scale=2),
        discriminator=DiscriminatorSpec(n_layers=2, base_channels=4),
    )


@pytest.fixture
def tiny_train():
    return TrainConfig(
        patch_size=24,
        batch_size=2,
        steps_separate=3,
        steps_joint=2,
        lr_denoise=1e-3,
        lr_sr=1e-3,
        eval_every=0,
        degradation=DegradationConfig(scale=2, kernel_size_choices=[1, 3]),
    )


@pytest.fixture
def tiny_config_file(tmp_path, tiny_spec, tiny_train) -> Path:
    """--config document matching tiny_spec / tiny_train"""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "model": tiny_spec.model_dump(),
        "train": tiny_train.model_dump(mode="json"),
    }))
    return path
