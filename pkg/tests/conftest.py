import json

import numpy as np
import pytest

from core.forecaster import init_params
from models.configs import ArchSpec
from models.params import ModelDims
from models.series import ImputationSet, MaskSet, SampleSet, SplitTag
from services.dataio import make_synthetic_series, write_series


def make_samples(rng, n, n_features=1, input_len=6, output_len=4, split=SplitTag.TRAIN):
    return SampleSet(inputs=rng.normal(size=(n, n_features, input_len)),
                     targets=rng.normal(size=(n, output_len)), split_tag=split)


def make_imputation(labels, masked=None, name="baseline"):
    labels = np.asarray(labels, dtype=np.float64)
    masked = np.ones(labels.shape, dtype=bool) if masked is None else masked
    return ImputationSet(labels=labels, source_name=name,
                         mask_ref=MaskSet(masks=masked, realized_rate=float(np.mean(masked))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_mlp():
    arch = ArchSpec.mlp(layers=2, hidden=8)
    return init_params(arch, ModelDims(1, 6, 4), seed=3)


@pytest.fixture
def linear_model(rng):
    """Bias-free linear map f = W x, whose tangent kernel is (x_a . x_b) I."""
    params = init_params(ArchSpec.linear(bias=False), ModelDims(1, 5, 3), seed=0)
    return params.with_theta(rng.normal(size=params.n_params))


@pytest.fixture
def gain_problem(rng):
    """Training/evaluation samples and a pair of label sets for a (1, 6, 4) model."""
    train = make_samples(rng, 10)
    val = make_samples(rng, 5, split=SplitTag.VALIDATION)
    y1 = make_imputation(train.targets, name="mean")
    y2 = make_imputation(train.targets + rng.normal(scale=0.5, size=train.targets.shape), name="linear")
    return train, val, y1, y2


def write_experiment(tmp_path):
    """Small synthetic dataset plus a fast experiment config, both written to tmp_path."""
    data_path = write_series(make_synthetic_series(n_days=12, seed=5), tmp_path / "load.csv")
    config = {
        "name": "smoke",
        "seed": 0,
        "output_dir": str(tmp_path / "run"),
        "data": {"path": str(data_path), "input_len": 12, "output_len": 6, "stride": 2},
        "splits": {"train_end": "2011-01-09T00:00:00", "val_end": "2011-01-11T00:00:00"},
        "mask": {"missing_rate": 0.3, "run_lengths": [2, 4, 6]},
        "arch": {"kind": "mlp", "layers": 2, "hidden": 8},
        "train": {"learning_rate": 0.05, "max_epochs": 6, "patience": 2, "batch_size": 16},
        "estimate": {"estimators": ["seq-sim", "seg-2", "trajectory", "influence"], "axiom_samples": 4},
        "influence": {"cg_max_iters": 50, "cg_tolerance": 1e-6},
        "oracle": {"limit": 3},
        "ensemble": {"replace_percent": 50},
        "toy": {"seeds": [0]},
    }
    config_path = tmp_path / "experiment.json"
    config_path.write_text(json.dumps(config), encoding="utf-8")
    return tmp_path, config_path


@pytest.fixture
def experiment_dir(tmp_path):
    return write_experiment(tmp_path)
