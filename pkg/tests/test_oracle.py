import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import make_imputation
from models.configs import ArchSpec, TrainConfig
from services import oracle as oracle_module
from services.oracle import OracleStore, RetrainingOracle, load_oracle, write_oracle_summary
from services.training import per_sample_losses, train

ARCH = ArchSpec.mlp(layers=2, hidden=8)
CFG = TrainConfig(learning_rate=0.05, max_epochs=3, patience=3, batch_size=5, seed=2)


@pytest.fixture
def oracle(gain_problem):
    train_set, val, y1, y2 = gain_problem
    return RetrainingOracle(ARCH, CFG, train_set, y1, y2, val, val)


def test_swapped_labels_change_one_sample(oracle):
    labels = oracle.swapped_labels(3)
    assert_array_equal(labels[3], oracle.y2.labels[3])
    assert_array_equal(np.delete(labels, 3, axis=0), np.delete(oracle.y1.labels, 3, axis=0))
    entry = oracle.swapped_labels(3, timestep=1)
    assert entry[3, 1] == oracle.y2.labels[3, 1]
    assert entry[3, 0] == oracle.y1.labels[3, 0]


def test_null_swap_is_exactly_zero(gain_problem):
    train_set, val, y1, y2 = gain_problem
    labels = y2.labels.copy()
    labels[4] = y1.labels[4]
    oracle = RetrainingOracle(ARCH, CFG, train_set, y1, make_imputation(labels), val, val)
    gain, run_sum, _ = oracle.run(4)
    assert gain == 0.0
    assert run_sum == oracle.base_loss_sum


def test_gain_is_base_minus_run_loss(oracle):
    gain, run_sum, seconds = oracle.run(2)
    assert gain == pytest.approx(oracle.base_loss_sum - run_sum, rel=0, abs=1e-15)
    assert seconds >= 0.0
    params, _ = train(ARCH, oracle.train_set, oracle.swapped_labels(2), oracle.val_set, CFG)
    assert run_sum == pytest.approx(per_sample_losses(params, oracle.eval_set).sum(), rel=1e-12)


def test_sweep_writes_a_sorted_resumable_store(oracle, tmp_path, monkeypatch):
    store = OracleStore(tmp_path / "oracle.csv")
    result = oracle.sweep([5, 1, 3], store=store, workers=2, progress=False)
    assert_array_equal(result.indices, [5, 1, 3])
    assert_allclose(result.true_gains, result.base_loss_sum - result.run_loss_sums, atol=1e-12)

    frame = pd.read_csv(store.path)
    assert list(frame.columns) == ["sample_index", "true_gain", "run_loss"]
    assert frame["sample_index"].tolist() == [1, 3, 5]
    assert len(store.load()) == 3

    def no_training(*args, **kwargs):
        raise AssertionError("completed runs must not be retrained")

    monkeypatch.setattr(oracle_module, "train", no_training)
    resumed = RetrainingOracle(ARCH, CFG, oracle.train_set, oracle.y1, oracle.y2, oracle.val_set,
                               oracle.eval_set, base_params=oracle._base_params)
    again = resumed.sweep([1, 3, 5], store=store, progress=False)
    assert_array_equal(again.true_gains, [result.true_gains[1], result.true_gains[2], result.true_gains[0]])
    assert len(again.retrain_seconds) == 0


def test_rows_missing_from_the_manifest_are_rerun(oracle, tmp_path):
    store = OracleStore(tmp_path / "oracle.csv")
    oracle.sweep([0, 2], store=store, progress=False)
    store.manifest.write_text("0:-1\n", encoding="utf-8")
    assert set(store.load()) == {(0, -1)}
    result = oracle.sweep([0, 2], store=store, progress=False)
    assert len(result.retrain_seconds) == 1


def test_timestep_level_sweep(oracle, tmp_path):
    store = OracleStore(tmp_path / "oracle.csv", timestep_level=True)
    result = oracle.sweep([1], store=store, timestep_level=True, progress=False)
    assert_array_equal(result.timesteps, [0, 1, 2, 3])
    assert_array_equal(result.indices, [1, 1, 1, 1])
    assert list(pd.read_csv(store.path).columns) == ["sample_index", "timestep", "true_gain", "run_loss"]


def test_out_of_range_indices(oracle):
    with pytest.raises(ValueError, match="oracle indices"):
        oracle.sweep([0, 10], progress=False)


def test_summary_round_trip(oracle, tmp_path):
    store = OracleStore(tmp_path / "oracle.csv")
    result = oracle.sweep([0, 4], store=store, progress=False)
    write_oracle_summary(result, oracle.eval_set.n, tmp_path)
    loaded = load_oracle(tmp_path)
    assert_array_equal(loaded.indices, [0, 4])
    assert_array_equal(loaded.true_gains, result.true_gains)
    assert loaded.base_loss_sum == result.base_loss_sum
    assert loaded.n_train == 10
    assert loaded.timesteps is None


def test_empty_index_set(oracle, tmp_path):
    result = oracle.sweep([], store=OracleStore(tmp_path / "oracle.csv"), progress=False)
    assert len(result.indices) == 0
    assert len(result.true_gains) == 0
    assert result.base_loss_sum == oracle.base_loss_sum
    assert result.projected_full_seconds == 0.0


def test_store_written_for_other_labels_is_not_reused(oracle, tmp_path):
    store = OracleStore(tmp_path / "oracle.csv")
    first = oracle.sweep([1, 6], store=store, progress=False)

    changed = make_imputation(oracle.y2.labels + 0.75, name="linear")
    other = RetrainingOracle(ARCH, CFG, oracle.train_set, oracle.y1, changed, oracle.val_set,
                             oracle.eval_set, base_params=oracle._base_params)
    fresh = RetrainingOracle(ARCH, CFG, oracle.train_set, oracle.y1, changed, oracle.val_set,
                             oracle.eval_set, base_params=oracle._base_params).sweep([1, 6], progress=False)
    resumed = other.sweep([1, 6], store=store, progress=False)

    assert len(resumed.retrain_seconds) == 2
    assert_array_equal(resumed.true_gains, fresh.true_gains)
    assert not np.array_equal(resumed.true_gains, first.true_gains)
    assert store.stored_fingerprint() == other.fingerprint()


def test_fingerprint_is_stable_for_identical_inputs(oracle):
    again = RetrainingOracle(ARCH, CFG, oracle.train_set, oracle.y1, oracle.y2, oracle.val_set,
                             oracle.eval_set, base_params=oracle._base_params)
    assert again.fingerprint() == oracle.fingerprint()
