"""
Markdown templates for the experiment report.
"""

from typing import Iterable, List, Optional

import pandas as pd


class ReportTemplates:
    """
    Collection of markdown templates for the report bundle.
    """

    REPORT = """# Experiment report: {name}

- dataset: `{dataset}`
- architecture: {arch}
- seed: {seed}
- missing rate: requested {requested_rate}, realized {realized_rate}
- imputation pair: {pair}

## Forecast MSE (test split)

{mse_table}

## Estimator agreement with the retraining oracle

{agreement_table}

## Estimator timings

{timing_table}

## Kernel attribution checks

{axioms}

## Warnings

{warnings}
"""

    AXIOMS = """- zero-kernel training pairs: {zero_kernel_pairs}
- symmetric-zero violations: {symmetric_zero_violations}
- continuity shift: {continuity_shift:.3e} at eps {continuity_eps:g} (fitted slope {continuity_slope:.3e}) -> {continuity}
- diagonal dominance rate: {diagonal_dominance_rate:.2f}
- efficiency residual: {efficiency_residual:.2e} -> {efficiency} (retrained totals are in the oracle sweep)"""

    TOY = """# Imputation accuracy versus forecasting accuracy

{table}

Case I has {imputation_order} imputation MSE and {forecast_order} forecasting MSE than case II.
"""

    MISSING = "_not available: run `{command}` first_"

    @staticmethod
    def table(frame: Optional[pd.DataFrame], float_format: str = ".6g", index: bool = False) -> str:
        """Pipe table without the optional tabulate dependency."""
        if frame is None or frame.empty:
            return "_empty_"
        frame = frame.reset_index() if index else frame
        columns = [str(c) for c in frame.columns]

        def cell(value) -> str:
            if isinstance(value, float):
                return format(value, float_format)
            return str(value)

        lines: List[str] = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
        for row in frame.itertuples(index=False):
            lines.append("| " + " | ".join(cell(v) for v in row) + " |")
        return "\n".join(lines)

    @classmethod
    def missing(cls, command: str) -> str:
        return cls.MISSING.format(command=command)

    @classmethod
    def get_report(cls, **kwargs) -> str:
        return cls.REPORT.format(**kwargs)

    @classmethod
    def get_axioms(cls, report) -> str:
        return cls.AXIOMS.format(
            zero_kernel_pairs=report.zero_kernel_pairs,
            symmetric_zero_violations=report.symmetric_zero_violations,
            continuity_shift=report.continuity_shift,
            continuity_eps=report.continuity_eps,
            continuity_slope=report.continuity_slope,
            continuity="ok" if report.continuity_passed else "FAILED",
            diagonal_dominance_rate=report.diagonal_dominance_rate,
            efficiency_residual=report.efficiency_residual,
            efficiency="ok" if report.efficiency_holds else "FAILED",
        )

    @classmethod
    def get_toy(cls, frame: pd.DataFrame) -> str:
        def order(column: str) -> str:
            return "higher" if frame.loc["case_i", column] > frame.loc["case_ii", column] else "lower"

        return cls.TOY.format(table=cls.table(frame, index=True),
                              imputation_order=order("imputation_mse"),
                              forecast_order=order("forecast_mse"))

    @staticmethod
    def bullet_list(items: Iterable[str]) -> str:
        return "\n".join(f"- {item}" for item in items) or "_none_"
