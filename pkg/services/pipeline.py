"""
Experiment pipeline behind the command line.

Every command rebuilds the normalized, windowed splits from the configuration,
reads its upstream artifacts from the output directory and overwrites its own.
"""

import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from core.errors import MissingArtifactError
from core.settings import RuntimeSettings, derive_seed, dump_config, get_settings
from models.configs import ExperimentConfig
from models.gain import GainMatrix, export_gain_matrix, load_gain_matrix
from models.params import ModelParams, load_checkpoint, save_checkpoint
from models.results import AxiomReport
from models.series import ImputationSet, MaskSet, SampleSet, SplitTag, TimeSeriesDataset
from models.trajectory import load_trajectory, save_trajectory
from .dataio import (export_mask, export_series_imputation, fit_calendar_profile, generate_mask, impute,
                     impute_inputs, load_external_imputation, load_mask, load_series, make_synthetic_series,
                     normalize, series_mse, simulate_toy, split_by_boundaries, window, write_series)
from .ensemble import EnsembleSpec, combine, export_spliced_labels, run_discard, run_ensemble
from .gain import axiom_checks, estimate_seg, estimate_seq_sim, estimate_trajectory
from .influence import estimate_influence
from .metrics import agreement, curve_frame, imputation_mse, mse_table, timing_frame, timing_report
from .oracle import OracleStore, RetrainingOracle, load_oracle, write_oracle_summary
from .report_templates import ReportTemplates
from .reporting import ReportWriter
from .training import evaluate, train

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "mask", "impute", "train", "estimate", "oracle", "ensemble", "report", "toy", "pipeline")
PIPELINE_STAGES = ("mask", "impute", "train", "estimate", "oracle", "ensemble", "report")


@dataclass
class PreparedData:
    series: Dict[SplitTag, TimeSeriesDataset]
    samples: Dict[SplitTag, SampleSet]
    scaler: StandardScaler


@dataclass
class LabelSets:
    """Training inputs and labels after the baseline imputation has been applied."""
    train: SampleSet
    baseline: ImputationSet
    candidate: ImputationSet
    val: SampleSet
    val_labels: Optional[np.ndarray]
    test: SampleSet

    def eval_set(self, split: str) -> SampleSet:
        if split == SplitTag.TEST.value:
            return self.test
        if self.val_labels is None:
            return self.val
        return self.val.with_targets(self.val_labels)


def _dump_json(payload, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _read_json(path: Path, producer: str):
    if not path.is_file():
        raise MissingArtifactError(str(path), producer)
    return json.loads(path.read_text(encoding="utf-8"))


class ExperimentPipeline:
    """
    Runs the experiment stages of one configuration.

    Artifacts under config.output_dir:
        masks/{split}.csv, imputations/{source}_{split}.csv, checkpoints/model.ckpt,
        trajectory/, gains/{split}/{estimator}.csv, oracle/, ensemble/, report/, toy/
    """

    def __init__(self, config: ExperimentConfig, settings: Optional[RuntimeSettings] = None):
        self.config = config
        self.settings = settings or get_settings()
        self.out = Path(config.output_dir or Path(self.settings.output_root) / config.name)
        self._data: Optional[PreparedData] = None

    @property
    def progress(self) -> bool:
        return self.settings.progress and sys.stderr.isatty()

    # Paths

    def mask_path(self, split: SplitTag) -> Path:
        return self.out / "masks" / f"{split.value}.csv"

    def imputation_path(self, role: str, split: SplitTag) -> Path:
        return self.out / "imputations" / f"{role}_{split.value}.csv"

    @property
    def checkpoint_path(self) -> Path:
        return self.out / "checkpoints" / "model.ckpt"

    def gain_path(self, split: str, estimator: str) -> Path:
        return self.out / "gains" / split / f"{estimator}.csv"

    @property
    def masked_splits(self) -> List[SplitTag]:
        if self.config.imputation.mask_validation:
            return [SplitTag.TRAIN, SplitTag.VALIDATION]
        return [SplitTag.TRAIN]

    # Data preparation

    def prepare(self) -> PreparedData:
        if self._data is not None:
            return self._data
        cfg = self.config
        ds = load_series(cfg.data.path, cfg.data.target_index)
        if not cfg.data.use_covariates:
            ds = ds.only_target()
        parts = split_by_boundaries(ds, cfg.splits.train_end, cfg.splits.val_end)
        scaler, scaled = normalize(*parts.values())
        series = dict(zip(parts, scaled))
        samples = {tag: window(part, cfg.data.input_len, cfg.data.output_len, cfg.data.stride, tag)
                   for tag, part in series.items()}
        logger.info("Samples: " + ", ".join(f"{tag.value}={ss.n}" for tag, ss in samples.items()))
        self._data = PreparedData(series=series, samples=samples, scaler=scaler)
        return self._data

    def load_masks(self) -> Dict[SplitTag, MaskSet]:
        data = self.prepare()
        masks = {}
        for split in self.masked_splits:
            path = self.mask_path(split)
            if not path.is_file():
                raise MissingArtifactError(str(path), "mask")
            masks[split] = load_mask(path, data.samples[split], self.config.mask.missing_rate)
        return masks

    def source_name(self, role: str) -> str:
        source = getattr(self.config.imputation, role)
        if source.startswith("external:"):
            return f"external:{Path(source.split(':', 1)[1]).stem}"
        return source

    def load_imputation(self, role: str, split: SplitTag, mask: MaskSet) -> ImputationSet:
        path = self.imputation_path(role, split)
        if not path.is_file():
            raise MissingArtifactError(str(path), "impute")
        return load_external_imputation(path, self.prepare().samples[split], mask, self.source_name(role))

    def label_sets(self) -> LabelSets:
        data = self.prepare()
        masks = self.load_masks()
        train_ss = data.samples[SplitTag.TRAIN]
        baseline = self.load_imputation("baseline", SplitTag.TRAIN, masks[SplitTag.TRAIN])
        candidate = self.load_imputation("candidate", SplitTag.TRAIN, masks[SplitTag.TRAIN])
        val_ss, val_labels = data.samples[SplitTag.VALIDATION], None
        if SplitTag.VALIDATION in masks:
            val_baseline = self.load_imputation("baseline", SplitTag.VALIDATION, masks[SplitTag.VALIDATION])
            val_ss, val_labels = impute_inputs(val_ss, val_baseline), val_baseline.labels
        return LabelSets(train=impute_inputs(train_ss, baseline), baseline=baseline, candidate=candidate,
                         val=val_ss, val_labels=val_labels, test=data.samples[SplitTag.TEST])

    def load_params(self) -> ModelParams:
        if not self.checkpoint_path.is_file():
            raise MissingArtifactError(str(self.checkpoint_path), "train")
        return load_checkpoint(self.checkpoint_path)

    # Commands

    def cmd_synth(self, path: Optional[str] = None, n_days: int = 120) -> Path:
        target = Path(path) if path else self.out / "data" / "synthetic_load.csv"
        written = write_series(make_synthetic_series(n_days=n_days, seed=self.config.seed), target)
        logger.info(f"Wrote synthetic series of {n_days} days to {written}")
        return written

    def cmd_mask(self) -> Dict[SplitTag, MaskSet]:
        data = self.prepare()
        dump_config(self.config, self.out / "config.json")
        masks = {}
        for split in self.masked_splits:
            seed = derive_seed(self.config.seed + self.config.mask.seed, f"mask:{split.value}")
            spec = self.config.mask.model_copy(update={"seed": seed})
            masks[split] = generate_mask(data.samples[split], spec)
            export_mask(masks[split], data.samples[split], self.mask_path(split))
        return masks

    def cmd_impute(self) -> Dict[str, float]:
        """Baseline and candidate labels for the training split, baseline for validation."""
        cfg = self.config.imputation
        data = self.prepare()
        masks = self.load_masks()
        train_ss, train_mask = data.samples[SplitTag.TRAIN], masks[SplitTag.TRAIN]
        profile = fit_calendar_profile(train_ss, train_mask, self.config.data.calendar_period)

        def produce(source: str, split: SplitTag) -> ImputationSet:
            ss, mask = data.samples[split], masks[split]
            if source.startswith("external:"):
                # external files hold physical units
                return load_external_imputation(source.split(":", 1)[1], ss, mask, scaler=data.scaler)
            return impute(ss, mask, source, profile=profile, period=self.config.data.calendar_period)

        summary = {}
        jobs = [("baseline", cfg.baseline, SplitTag.TRAIN), ("candidate", cfg.candidate, SplitTag.TRAIN)]
        if SplitTag.VALIDATION in masks:
            jobs.append(("baseline", cfg.baseline, SplitTag.VALIDATION))
        for role, source, split in jobs:
            imputation = produce(source, split)
            export_series_imputation(imputation, data.samples[split], self.imputation_path(role, split),
                                     header={"source": imputation.source_name, "split": split.value})
            error = series_mse(imputation.series[masks[split].series_mask],
                               data.samples[split].series.target[masks[split].series_mask])
            summary[f"{role}_{split.value}_mse"] = error
            summary[f"{role}_{split.value}_window_mse"] = imputation_mse(imputation, data.samples[split])
            logger.info(f"{role} ({imputation.source_name}) on {split.value}: imputation MSE {error:.6f}")
        summary["realized_rate_train"] = train_mask.realized_rate
        _dump_json(summary, self.out / "imputations" / "summary.json")
        return summary

    def cmd_train(self) -> Tuple[ModelParams, Dict[str, float]]:
        sets = self.label_sets()
        params, trajectory = train(self.config.arch, sets.train, sets.baseline, sets.val, self.config.train,
                                   sets.val_labels, progress=self.progress)
        save_checkpoint(params, self.checkpoint_path)
        save_trajectory(trajectory, self.out / "trajectory")
        summary = {
            "best_epoch": trajectory.best_epoch,
            "epochs": trajectory.T,
            "n_params": params.n_params,
            "test_mse": evaluate(params, sets.test),
            "val_mse": float(trajectory.val_losses[trajectory.best_epoch - 1]) if trajectory.best_epoch else None,
        }
        _dump_json(summary, self.out / "train" / "summary.json")
        logger.info(f"Trained model: best epoch {summary['best_epoch']}, test MSE {summary['test_mse']:.6f}")
        return params, summary

    def cmd_estimate(self) -> Dict[str, Dict[str, GainMatrix]]:
        cfg = self.config.estimate
        params = self.load_params()
        sets = self.label_sets()
        trajectory_dir = self.out / "trajectory"
        results: Dict[str, Dict[str, GainMatrix]] = {}
        timings: Dict[str, Dict[str, float]] = {}
        diagnostics = {}

        for split in cfg.eval_splits:
            eval_set = sets.eval_set(split)
            results[split], timings[split] = {}, {}
            for name in cfg.estimators:
                started = time.perf_counter()
                if name == "seq-sim":
                    gain = estimate_seq_sim(params, sets.train, sets.baseline, sets.candidate, eval_set,
                                            cfg.chunk_size)
                elif name.startswith("seg-"):
                    gain = estimate_seg(params, sets.train, sets.baseline, sets.candidate, eval_set,
                                        int(name.split("-", 1)[1]), cfg.chunk_size)
                elif name == "trajectory":
                    if not (trajectory_dir / "manifest.json").is_file():
                        raise MissingArtifactError(str(trajectory_dir), "train")
                    gain = estimate_trajectory(load_trajectory(trajectory_dir), sets.train, sets.baseline,
                                               sets.candidate, eval_set, cfg.chunk_size)
                else:
                    gain, cg = estimate_influence(params, sets.train, sets.baseline, sets.candidate,
                                                  eval_set, self.config.influence)
                    diagnostics[split] = cg.to_dict()
                timings[split][name] = time.perf_counter() - started
                export_gain_matrix(gain, self.gain_path(split, name))
                results[split][name] = gain

        first_split = cfg.eval_splits[0]
        axioms = axiom_checks(params, sets.train, sets.baseline, sets.eval_set(first_split),
                              max_samples=cfg.axiom_samples, seed=derive_seed(self.config.seed, "axioms"))
        _dump_json(axioms.to_dict(), self.out / "gains" / "axioms.json")
        if diagnostics:
            _dump_json(diagnostics, self.out / "gains" / "influence_cg.json")
        _dump_json(timings, self.out / "gains" / "timings.json")
        return results

    def oracle_indices(self, n_train: int) -> List[int]:
        spec = self.config.oracle
        if spec.indices is not None:
            return sorted(set(spec.indices))
        return sorted(set(np.linspace(0, n_train - 1, min(spec.limit, n_train)).round().astype(int).tolist()))

    def cmd_oracle(self):
        spec = self.config.oracle
        params = self.load_params()
        sets = self.label_sets()
        oracle = RetrainingOracle(self.config.arch, self.config.train, sets.train, sets.baseline, sets.candidate,
                                  sets.val, sets.eval_set(spec.eval_split), sets.val_labels, base_params=params)
        store = OracleStore(self.out / "oracle" / "oracle.csv", spec.timestep_level)
        result = oracle.sweep(self.oracle_indices(sets.train.n), store=store, workers=self.config.threads,
                              timestep_level=spec.timestep_level, progress=self.progress)
        write_oracle_summary(result, sets.eval_set(spec.eval_split).n, self.out / "oracle")
        return result

    def cmd_ensemble(self):
        settings = self.config.ensemble
        path = self.gain_path(SplitTag.VALIDATION.value, settings.estimator)
        if not path.is_file():
            raise MissingArtifactError(str(path), "estimate")
        params = self.load_params()
        sets = self.label_sets()
        gain = load_gain_matrix(path)
        spec = EnsembleSpec(gain=gain, baseline=sets.baseline, candidate=sets.candidate,
                            replace_percent=settings.replace_percent)
        spliced_params, report = run_ensemble(spec, self.config.arch, self.config.train, sets.train, sets.val,
                                              sets.test, sets.val_labels, baseline_params=params)
        export_spliced_labels(spec, combine(spec), self.out / "ensemble" / "labels.csv")
        payload = report.to_dict()
        payload["improvement"] = report.improvement

        influence_path = self.gain_path(SplitTag.VALIDATION.value, "influence")
        if settings.discard and influence_path.is_file():
            _, discard = run_discard(load_gain_matrix(influence_path), self.config.influence.discard_percent,
                                     self.config.arch, self.config.train, sets.train, sets.baseline, sets.val,
                                     sets.test, sets.val_labels)
            payload["discard"] = {"percent": discard.percent, "test_mse": discard.test_mse, "kept": discard.kept,
                                  "discarded": discard.discarded.tolist()}
        elif settings.discard:
            logger.warning(f"discard workflow skipped: {influence_path} not found")
        _dump_json(payload, self.out / "ensemble" / "report.json")
        return spliced_params, report

    def _agreement_curves(self, warnings: List[str]):
        oracle_dir = self.out / "oracle"
        if not (oracle_dir / "summary.json").is_file():
            warnings.append(ReportTemplates.missing("oracle"))
            return [], None
        oracle = load_oracle(oracle_dir)
        split = self.config.oracle.eval_split
        curves = []
        for name in self.config.estimate.estimators:
            path = self.gain_path(split, name)
            if not path.is_file():
                warnings.append(f"no {split} gains for {name}: {ReportTemplates.missing('estimate')}")
                continue
            gain = load_gain_matrix(path)
            if gain.flags:
                warnings.append(f"{name}: {', '.join(gain.flags)}")
            curves.append(agreement(gain.values, oracle, self.config.oracle.percents, label=name))
        return curves, oracle

    def cmd_report(self) -> Path:
        """Forecast MSE table, agreement curves, timings and attribution checks from earlier stages."""
        train_summary = _read_json(self.out / "train" / "summary.json", "train")
        writer = ReportWriter(self.out / "report")
        warnings: List[str] = []

        pair = f"{self.source_name('baseline')} -> {self.source_name('candidate')}"
        rows = {f"trained on {self.source_name('baseline')}": {"test_mse": train_summary["test_mse"]}}
        ensemble_path = self.out / "ensemble" / "report.json"
        if ensemble_path.is_file():
            ensemble = json.loads(ensemble_path.read_text(encoding="utf-8"))
            rows[f"ensemble ({ensemble['estimator']}, c={ensemble['replace_percent']:g})"] = {
                "test_mse": ensemble["ensemble_mse"]}
            if "discard" in ensemble:
                rows[f"discard {ensemble['discard']['percent']:g}% (influence)"] = {
                    "test_mse": ensemble["discard"]["test_mse"]}
        else:
            warnings.append(ReportTemplates.missing("ensemble"))
        mse_frame = mse_table(rows)
        writer.write_table(mse_frame, "forecast_mse.csv", index=True)
        writer.plot_bars({label: row["test_mse"] for label, row in rows.items()}, "forecast_mse.png")

        curves, oracle = self._agreement_curves(warnings)
        agreement_frame = curve_frame(curves)
        writer.write_table(agreement_frame, "agreement.csv")
        if curves:
            writer.plot_agreement(curves)

        timing_text = ReportTemplates.missing("estimate")
        timings_path = self.out / "gains" / "timings.json"
        if timings_path.is_file():
            timings = json.loads(timings_path.read_text(encoding="utf-8"))
            split = self.config.oracle.eval_split if self.config.oracle.eval_split in timings else next(iter(timings))
            table = timing_report(timings[split],
                                  per_retrain_seconds=oracle.mean_retrain_seconds if oracle else None,
                                  n_train=oracle.n_train if oracle else None)
            frame = timing_frame(table)
            writer.write_table(frame, "timings.csv")
            timing_text = ReportTemplates.table(frame)

        axioms_text = ReportTemplates.missing("estimate")
        axioms_path = self.out / "gains" / "axioms.json"
        if axioms_path.is_file():
            axioms = AxiomReport.from_dict(json.loads(axioms_path.read_text(encoding="utf-8")))
            if axioms is not None:
                axioms_text = ReportTemplates.get_axioms(axioms)

        imputation_summary = {}
        summary_path = self.out / "imputations" / "summary.json"
        if summary_path.is_file():
            imputation_summary = json.loads(summary_path.read_text(encoding="utf-8"))
        text = ReportTemplates.get_report(
            name=self.config.name,
            dataset=self.config.data.path,
            arch=f"{self.config.arch.kind.value} ({train_summary['n_params']} parameters)",
            seed=self.config.seed,
            requested_rate=self.config.mask.missing_rate,
            realized_rate=f"{imputation_summary.get('realized_rate_train', float('nan')):.4f}",
            pair=pair,
            mse_table=ReportTemplates.table(mse_frame, index=True),
            agreement_table=ReportTemplates.table(agreement_frame) if curves else ReportTemplates.missing("oracle"),
            timing_table=timing_text,
            axioms=axioms_text,
            warnings=ReportTemplates.bullet_list(warnings),
        )
        path = writer.write_text(text, "report.md")
        logger.info(f"Report written to {path}")
        return path

    def cmd_toy(self) -> pd.DataFrame:
        """
        Train on two simulated imputations of the training series: a denser but noisy
        one (case I) and a sparser clean one (case II), then compare both MSEs.
        """
        spec = self.config.toy
        data = self.prepare()
        base = data.series[SplitTag.TRAIN]
        dims = self.config.data
        rows = []
        for seed in spec.seeds:
            cases = simulate_toy(base, (spec.noisy_keep, spec.clean_keep), spec.noise_mean, spec.noise_std,
                                 seed=derive_seed(seed, "toy:case_i"))
            for label, case in zip(("case_i", "case_ii"), cases):
                samples = window(case, dims.input_len, dims.output_len, dims.stride, SplitTag.TRAIN)
                cfg = self.config.train.model_copy(update={"seed": seed})
                params, _ = train(self.config.arch, samples, None, data.samples[SplitTag.VALIDATION], cfg)
                rows.append({
                    "seed": seed,
                    "case": label,
                    "imputation_mse": series_mse(case.target, base.target),
                    "forecast_mse": evaluate(params, data.samples[SplitTag.TEST]),
                })
                logger.info(f"toy seed {seed} {label}: imputation {rows[-1]['imputation_mse']:.4f}, "
                            f"forecast {rows[-1]['forecast_mse']:.4f}")

        writer = ReportWriter(self.out / "toy")
        runs = pd.DataFrame(rows)
        writer.write_table(runs, "runs.csv")
        table = runs.groupby("case")[["imputation_mse", "forecast_mse"]].mean()
        writer.write_table(table, "table.csv", index=True)
        writer.write_text(ReportTemplates.get_toy(table), "report.md")
        writer.plot_grouped_bars(table, "mse.png")
        return table

    def cmd_pipeline(self) -> Path:
        for stage in PIPELINE_STAGES:
            logger.info(f"== {stage} ==")
            self.run(stage)
        return self.out / "report" / "report.md"

    def run(self, command: str, **kwargs):
        if command not in COMMANDS:
            raise ValueError(f"unknown command '{command}'")
        return getattr(self, f"cmd_{command}")(**kwargs)
