"""
Brute-force retraining oracle for label-swap gains.
"""

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from models.configs import ArchSpec, TrainConfig
from models.params import ModelParams
from models.results import OracleResult
from models.series import ImputationSet, SampleSet
from .training import per_sample_losses, train

logger = logging.getLogger(__name__)

RunKey = Tuple[int, int]


class OracleStore:
    """
    Resumable result file: (sample_index[, timestep], true_gain, run_loss) rows plus
    a manifest of finished keys. A row counts only once its key is in the manifest.
    A fingerprint file ties the rows to the labels, settings and base model that
    produced them; rows written under another fingerprint are never reused.
    """

    def __init__(self, path: Union[str, Path], timestep_level: bool = False):
        self.path = Path(path)
        self.manifest = self.path.with_suffix(self.path.suffix + ".done")
        self.fingerprint_path = self.path.with_suffix(self.path.suffix + ".key")
        self.timestep_level = timestep_level
        self._lock = threading.Lock()

    @property
    def columns(self) -> List[str]:
        if self.timestep_level:
            return ["sample_index", "timestep", "true_gain", "run_loss"]
        return ["sample_index", "true_gain", "run_loss"]

    def _key(self, row) -> RunKey:
        return int(row["sample_index"]), int(row["timestep"]) if self.timestep_level else -1

    def stored_fingerprint(self) -> Optional[str]:
        if not self.fingerprint_path.is_file():
            return None
        return self.fingerprint_path.read_text(encoding="utf-8").strip() or None

    def load(self, fingerprint: Optional[str] = None) -> Dict[RunKey, Tuple[float, float]]:
        if not self.path.is_file() or not self.manifest.is_file():
            return {}
        if fingerprint is not None and self.stored_fingerprint() != fingerprint:
            logger.warning(f"{self.path} was written for other labels, settings or base model; starting over")
            return {}
        done = set()
        for line in self.manifest.read_text(encoding="utf-8").split():
            index, _, step = line.partition(":")
            done.add((int(index), int(step)))
        results = {}
        for _, row in pd.read_csv(self.path, float_precision="round_trip").iterrows():
            key = self._key(row)
            if key in done:
                results[key] = (float(row["true_gain"]), float(row["run_loss"]))
        return results

    def reset(self, fingerprint: Optional[str] = None) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if fingerprint is None:
            self.fingerprint_path.unlink(missing_ok=True)
        else:
            self.fingerprint_path.write_text(fingerprint + "\n", encoding="utf-8")
        self.path.write_text(",".join(self.columns) + "\n", encoding="utf-8")
        self.manifest.write_text("", encoding="utf-8")

    def append(self, key: RunKey, gain: float, run_loss: float) -> None:
        index, step = key
        fields = [str(index)] + ([str(step)] if self.timestep_level else []) + [repr(gain), repr(run_loss)]
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(",".join(fields) + "\n")
            with open(self.manifest, "a", encoding="utf-8") as f:
                f.write(f"{index}:{step}\n")

    def finalize(self, results: Dict[RunKey, Tuple[float, float]]) -> None:
        """Rewrite the file in key order so reruns produce identical bytes."""
        keys = sorted(results)
        frame = pd.DataFrame({
            "sample_index": [k[0] for k in keys],
            "timestep": [k[1] for k in keys],
            "true_gain": [results[k][0] for k in keys],
            "run_loss": [results[k][1] for k in keys],
        })[self.columns]
        frame.to_csv(self.path, index=False, float_format="%.17g")
        self.manifest.write_text("".join(f"{i}:{s}\n" for i, s in keys), encoding="utf-8")


class RetrainingOracle:
    """
    Retrains the forecaster with one sample's (or one entry's) labels swapped
    from y1 to y2 and measures the summed evaluation-loss difference.

    Every retrain reuses the base run's seed, so initialization and shuffling
    are shared with the y1 model.
    """

    def __init__(self, arch: ArchSpec, cfg: TrainConfig, train_set: SampleSet, y1: ImputationSet,
                 y2: ImputationSet, val_set: SampleSet, eval_set: SampleSet,
                 val_labels: Optional[np.ndarray] = None, base_params: Optional[ModelParams] = None):
        if y1.labels.shape != y2.labels.shape or y1.labels.shape != train_set.targets.shape:
            raise ValueError("y1, y2 and the training targets must share one shape")
        self.arch = arch
        self.cfg = cfg
        self.train_set = train_set
        self.y1 = y1
        self.y2 = y2
        self.val_set = val_set
        self.eval_set = eval_set
        self.val_labels = val_labels
        self._base_params = base_params
        self._base_losses: Optional[np.ndarray] = None

    def _initialize(self) -> None:
        if self._base_losses is not None:
            return
        if self._base_params is None:
            self._base_params, _ = train(self.arch, self.train_set, self.y1.labels, self.val_set,
                                         self.cfg, self.val_labels)
        self._base_losses = per_sample_losses(self._base_params, self.eval_set)
        logger.info(f"Oracle base model: eval MSE {self._base_losses.mean():.6f}")

    @property
    def base_loss_sum(self) -> float:
        self._initialize()
        return float(self._base_losses.sum())

    def fingerprint(self) -> str:
        """Digest of everything a stored true gain depends on."""
        self._initialize()
        digest = hashlib.sha256()
        digest.update(self.arch.model_dump_json().encode())
        digest.update(self.cfg.model_dump_json().encode())
        arrays = [self._base_params.theta, self.y1.labels, self.y2.labels, self.train_set.inputs,
                  self.val_set.inputs, self.eval_set.inputs, self.eval_set.targets]
        if self.val_labels is not None:
            arrays.append(self.val_labels)
        for array in arrays:
            array = np.ascontiguousarray(array, dtype=np.float64)
            digest.update(str(array.shape).encode())
            digest.update(array.tobytes())
        return digest.hexdigest()

    def swapped_labels(self, index: int, timestep: Optional[int] = None) -> np.ndarray:
        labels = self.y1.labels.copy()
        if timestep is None:
            labels[index] = self.y2.labels[index]
        else:
            labels[index, timestep] = self.y2.labels[index, timestep]
        return labels

    def run(self, index: int, timestep: Optional[int] = None) -> Tuple[float, float, float]:
        """
        Returns:
            (true_gain, run_loss_sum, seconds)
        """
        self._initialize()
        started = time.perf_counter()
        labels = self.swapped_labels(index, timestep)
        if np.array_equal(labels, self.y1.labels):
            return 0.0, self.base_loss_sum, time.perf_counter() - started
        params, _ = train(self.arch, self.train_set, labels, self.val_set, self.cfg, self.val_labels)
        run_sum = float(per_sample_losses(params, self.eval_set).sum())
        return self.base_loss_sum - run_sum, run_sum, time.perf_counter() - started

    def sweep(self, indices: Iterable[int], store: Optional[OracleStore] = None, workers: int = 1,
              timestep_level: bool = False, progress: bool = True) -> OracleResult:
        """
        One retrain per index (or per index and timestep). Completed runs found
        in `store` are not repeated.
        """
        self._initialize()
        indices = [int(i) for i in indices]
        if any(i < 0 or i >= self.train_set.n for i in indices):
            raise ValueError(f"oracle indices must lie in [0, {self.train_set.n})")
        keys = [(i, l) for i in indices for l in range(self.train_set.output_len)] if timestep_level \
            else [(i, -1) for i in indices]

        fingerprint = self.fingerprint() if store else None
        results = store.load(fingerprint) if store else {}
        if store and not results:
            store.reset(fingerprint)
        pending = [key for key in keys if key not in results]
        logger.info(f"Oracle sweep: {len(keys)} runs, {len(keys) - len(pending)} already done")

        seconds: Dict[RunKey, float] = {}

        def job(key: RunKey):
            return key, self.run(key[0], None if key[1] < 0 else key[1])

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = [pool.submit(job, key) for key in pending]
            for future in tqdm(as_completed(futures), total=len(futures), desc="oracle", disable=not progress):
                key, (gain, run_sum, elapsed) = future.result()
                results[key] = (gain, run_sum / self.eval_set.n)
                seconds[key] = elapsed
                if store:
                    store.append(key, gain, run_sum / self.eval_set.n)

        if store:
            store.finalize({key: results[key] for key in keys})
        run_losses = np.array([results[key][1] for key in keys])
        result = OracleResult(
            indices=np.array([key[0] for key in keys], dtype=np.int64),
            true_gains=np.array([results[key][0] for key in keys]),
            base_loss=float(self._base_losses.mean()),
            base_loss_sum=self.base_loss_sum,
            per_run_losses=run_losses,
            run_loss_sums=run_losses * self.eval_set.n,
            timesteps=np.array([key[1] for key in keys], dtype=np.int64) if timestep_level else None,
            retrain_seconds=np.array([seconds[key] for key in pending]),
            n_train=self.train_set.n,
        )
        if len(pending):
            logger.info(f"Oracle: {result.mean_retrain_seconds:.2f}s per retrain, projected full sweep "
                        f"{result.projected_full_seconds / 3600:.2f}h")
        return result


def true_gain(index: int, y1: ImputationSet, y2: ImputationSet, train_set: SampleSet, eval_set: SampleSet,
              arch: ArchSpec, cfg: TrainConfig, val_set: SampleSet,
              val_labels: Optional[np.ndarray] = None, timestep: Optional[int] = None) -> float:
    """Sum over evaluation samples of L(theta_1) - L(theta_2) for one swapped sample."""
    oracle = RetrainingOracle(arch, cfg, train_set, y1, y2, val_set, eval_set, val_labels)
    gain, _, _ = oracle.run(index, timestep)
    return gain


def oracle_sweep(indices: Iterable[int], y1: ImputationSet, y2: ImputationSet, train_set: SampleSet,
                 eval_set: SampleSet, arch: ArchSpec, cfg: TrainConfig, val_set: SampleSet,
                 val_labels: Optional[np.ndarray] = None, store_path: Optional[Union[str, Path]] = None,
                 workers: int = 1, timestep_level: bool = False, progress: bool = True) -> OracleResult:
    oracle = RetrainingOracle(arch, cfg, train_set, y1, y2, val_set, eval_set, val_labels)
    store = OracleStore(store_path, timestep_level) if store_path else None
    return oracle.sweep(indices, store=store, workers=workers, timestep_level=timestep_level, progress=progress)


def write_oracle_summary(result: OracleResult, n_eval: int, directory: Union[str, Path]) -> Tuple[Path, Path]:
    """summary.json holds the reproducible figures, timings.json the wall times."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = {"base_loss": result.base_loss, "base_loss_sum": result.base_loss_sum, "n_eval": n_eval,
               "n_train": result.n_train, "timestep_level": result.timesteps is not None}
    timings = {"retrains": int(len(result.retrain_seconds)),
               "mean_retrain_seconds": result.mean_retrain_seconds,
               "projected_full_seconds": result.projected_full_seconds}
    summary_path, timings_path = directory / "summary.json", directory / "timings.json"
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    timings_path.write_text(json.dumps(timings, indent=2), encoding="utf-8")
    return summary_path, timings_path


def load_oracle(directory: Union[str, Path]) -> OracleResult:
    """
    Raises:
        FileNotFoundError: no oracle.csv or summary.json in directory
    """
    directory = Path(directory)
    summary = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
    frame = pd.read_csv(directory / "oracle.csv", float_precision="round_trip")
    timings_path = directory / "timings.json"
    mean_seconds = json.loads(timings_path.read_text(encoding="utf-8"))["mean_retrain_seconds"] \
        if timings_path.is_file() else 0.0
    run_losses = frame["run_loss"].to_numpy(dtype=np.float64)
    return OracleResult(
        indices=frame["sample_index"].to_numpy(dtype=np.int64),
        true_gains=frame["true_gain"].to_numpy(dtype=np.float64),
        base_loss=summary["base_loss"],
        base_loss_sum=summary["base_loss_sum"],
        per_run_losses=run_losses,
        run_loss_sums=run_losses * summary["n_eval"],
        timesteps=frame["timestep"].to_numpy(dtype=np.int64) if summary["timestep_level"] else None,
        retrain_seconds=np.array([mean_seconds]) if mean_seconds else np.zeros(0),
        n_train=summary["n_train"],
    )
