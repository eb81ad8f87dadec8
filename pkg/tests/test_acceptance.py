"""
End-to-end runs on the bundled dataset. Slow: run with `pytest -m slow`.
"""

import json
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import app
from conftest import make_imputation, make_samples
from core.forecaster import init_params
from core.settings import ConfigLoader
from models.configs import ArchSpec
from models.gain import load_gain_matrix
from models.params import ModelDims
from models.series import ImputationSet, SplitTag
from services.ensemble import EnsembleSpec, run_ensemble
from services.gain import estimate_seg, estimate_seq_sim
from services.metrics import agreement
from services.oracle import load_oracle
from services.pipeline import ExperimentPipeline

REPO_ROOT = Path(__file__).resolve().parents[1]

pytestmark = pytest.mark.slow

REDUCED = [
    "arch.hidden=16", "train.max_epochs=5", "train.patience=2",
    'estimate.estimators=["seq-sim", "seg-4", "influence"]', "estimate.axiom_samples=4",
    "oracle.limit=5", "toy.seeds=[0]",
]


@pytest.fixture
def bundled(tmp_path, monkeypatch):
    monkeypatch.chdir(REPO_ROOT)
    return [*REDUCED, f"output_dir={tmp_path / 'run'}"]


def test_full_pipeline_on_the_bundled_data(bundled, tmp_path):
    argv = ["pipeline"]
    for override in bundled:
        argv += ["--set", override]
    assert app.main(argv) == 0
    out = tmp_path / "run"
    for name in ("gains/test/seq-sim.csv", "gains/validation/seg-4.csv", "ensemble/labels.csv",
                 "report/report.md", "report/agreement.csv"):
        assert (out / name).is_file(), name

    gains = pd.read_csv(out / "gains" / "test" / "seq-sim.csv", comment="#")
    assert len(gains) % 24 == 0
    # observed entries carry identical labels in both imputations
    assert (gains.loc[gains["masked_flag"] == 0, "gain"] == 0.0).all()
    ensemble = json.loads((out / "ensemble" / "report.json").read_text(encoding="utf-8"))
    assert ensemble["pair"] == ["mean", "linear"]


def test_toy_table_is_deterministic(bundled, tmp_path):
    config = ConfigLoader().load(bundled)
    first = ExperimentPipeline(config).run("toy")
    before = (tmp_path / "run" / "toy" / "table.csv").read_bytes()
    second = ExperimentPipeline(config).run("toy")
    assert (tmp_path / "run" / "toy" / "table.csv").read_bytes() == before
    pd.testing.assert_frame_equal(first, second)


def desk_pipeline(tmp_path, seed, *overrides):
    config = ConfigLoader("experiment_desk.json").load([
        f"output_dir={tmp_path / f'desk{seed}'}", f"seed={seed}", f"mask.seed={seed}", f"train.seed={seed}",
        *overrides,
    ])
    return ExperimentPipeline(config)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_seq_sim_agrees_with_retraining_on_the_top_decile(bundled, tmp_path, seed):
    pipeline = desk_pipeline(tmp_path, seed, 'estimate.estimators=["seq-sim"]', 'estimate.eval_splits=["test"]')
    for stage in ("mask", "impute", "train", "estimate", "oracle"):
        pipeline.run(stage)
    oracle = load_oracle(pipeline.out / "oracle")
    assert oracle.indices.size == pipeline.label_sets().train.n

    gain = load_gain_matrix(pipeline.gain_path("test", "seq-sim"))
    top = agreement(gain.values, oracle, [10], label="seq-sim").at(10)
    assert top["corr"] > 0.21
    assert top["sign_acc"] > 0.6


def _timed(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def test_segment_count_drives_estimation_cost():
    rng = np.random.default_rng(0)
    train = make_samples(rng, 300, input_len=24, output_len=24)
    eval_set = make_samples(rng, 50, input_len=24, output_len=24, split=SplitTag.TEST)
    params = init_params(ArchSpec.mlp(layers=3, hidden=64), ModelDims(1, 24, 24), seed=0)
    y1 = make_imputation(rng.normal(size=train.targets.shape))
    y2 = make_imputation(rng.normal(size=train.targets.shape), name="candidate")

    seq_sim = _timed(lambda: estimate_seq_sim(params, train, y1, y2, eval_set))
    seg = {r: _timed(lambda r=r: estimate_seg(params, train, y1, y2, eval_set, r)) for r in (1, 6, 12)}
    assert seg[1] <= 0.5 * seq_sim
    assert 1.4 <= seg[12] / seg[6] <= 2.6


def _constructed_candidate(truth: np.ndarray, baseline: ImputationSet, samples, seed: int) -> ImputationSet:
    """Truth on 30% of the masked steps, pushed further from it than the baseline everywhere else."""
    missing = baseline.mask_ref.series_mask
    better = missing & (np.random.default_rng(seed).random(missing.size) < 0.3)
    worse = missing & ~better
    series = baseline.series.copy()
    series[better] = truth[better]
    away = np.sign(baseline.series[worse] - truth[worse])
    series[worse] = baseline.series[worse] + np.where(away == 0, 1.0, away)
    return ImputationSet(labels=samples.cut_targets(series), source_name="constructed",
                         mask_ref=baseline.mask_ref, series=series)


def test_splicing_a_partly_better_candidate_lowers_test_error(bundled, tmp_path):
    improvements = []
    for seed in (0, 1, 2):
        pipeline = desk_pipeline(tmp_path, seed)
        for stage in ("mask", "impute", "train"):
            pipeline.run(stage)
        sets = pipeline.label_sets()
        samples = pipeline.prepare().samples[SplitTag.TRAIN]
        candidate = _constructed_candidate(samples.series.target, sets.baseline, samples, seed)
        params = pipeline.load_params()
        gain = estimate_seq_sim(params, sets.train, sets.baseline, candidate, sets.eval_set("validation"))

        spec = EnsembleSpec(gain=gain, baseline=sets.baseline, candidate=candidate, replace_percent=10)
        config = pipeline.config
        _, report = run_ensemble(spec, config.arch, config.train, sets.train, sets.val, sets.test,
                                 sets.val_labels, baseline_params=params)
        assert report.replaced > 0
        assert report.ensemble_mse <= report.baseline_mse, f"seed {seed}"
        improvements.append(report.improvement)
    assert np.mean(improvements) > 0


def test_noisier_imputation_can_still_forecast_better(bundled, tmp_path):
    config = ConfigLoader().load(["arch.hidden=16", "data.stride=8", "toy.seeds=[0, 1, 2]",
                                  f"output_dir={tmp_path / 'toy'}"])
    ExperimentPipeline(config).run("toy")
    runs = pd.read_csv(tmp_path / "toy" / "toy" / "runs.csv", comment="#")
    for seed, rows in runs.groupby("seed"):
        by_case = rows.set_index("case")
        assert by_case.at["case_i", "imputation_mse"] > by_case.at["case_ii", "imputation_mse"], seed
        assert by_case.at["case_i", "forecast_mse"] < by_case.at["case_ii", "forecast_mse"], seed
