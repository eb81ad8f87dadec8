"""
Report bundle writer: CSV tables, markdown summaries and static plots.
"""

import logging
from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from models.results import AgreementCurve  # noqa: E402

logger = logging.getLogger(__name__)

# PNG metadata without the software version keeps reruns byte-identical
PNG_METADATA = {"Software": None}


class ReportWriter:
    """Writes report artifacts under one directory."""

    def __init__(self, out_dir: Union[str, Path], dpi: int = 120):
        self.out_dir = Path(out_dir)
        self.dpi = dpi
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write_table(self, frame: pd.DataFrame, name: str, index: bool = False) -> Path:
        path = self.out_dir / name
        frame.to_csv(path, index=index, float_format="%.10g")
        logger.debug(f"wrote {path}")
        return path

    def write_text(self, text: str, name: str) -> Path:
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def _save(self, fig, name: str) -> Path:
        path = self.out_dir / name
        fig.savefig(path, dpi=self.dpi, bbox_inches="tight", metadata=PNG_METADATA)
        plt.close(fig)
        logger.debug(f"wrote {path}")
        return path

    def plot_agreement(self, curves: Sequence[AgreementCurve], name: str = "agreement.png") -> Path:
        """Correlation and sign accuracy against the top-x% selection, one line per estimator."""
        fig, (ax_corr, ax_sign) = plt.subplots(1, 2, figsize=(10, 4))
        for curve in curves:
            ax_corr.plot(curve.percents, curve.corr, marker="o", label=curve.label)
            ax_sign.plot(curve.percents, curve.sign_acc, marker="o", label=curve.label)
        ax_corr.axhline(0.0, color="grey", linewidth=0.8)
        ax_sign.axhline(0.5, color="grey", linewidth=0.8)
        ax_corr.set(xlabel="top x% by |estimate|", ylabel="Pearson correlation", ylim=(-1.05, 1.05))
        ax_sign.set(xlabel="top x% by |estimate|", ylabel="sign accuracy", ylim=(-0.05, 1.05))
        if curves:
            ax_sign.legend(loc="lower right", fontsize="small")
        return self._save(fig, name)

    def plot_bars(self, values: Mapping[str, float], name: str, ylabel: str = "test MSE") -> Path:
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(values)), 4))
        labels = list(values)
        ax.bar(range(len(labels)), [values[k] for k in labels], color="tab:blue")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, ha="right")
        ax.set_ylabel(ylabel)
        return self._save(fig, name)

    def plot_grouped_bars(self, frame: pd.DataFrame, name: str, ylabel: str = "MSE") -> Path:
        """One group per row, one bar per column."""
        ax = frame.plot.bar(figsize=(6, 4), rot=0)
        ax.set_ylabel(ylabel)
        return self._save(ax.get_figure(), name)
