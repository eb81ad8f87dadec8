"""
Utility classes for timestamp handling and small numeric helpers.
"""

import math
from datetime import datetime
from typing import Iterable, Union

import numpy as np
import pandas as pd


class TimestampUtils:
    """
    Utility class for the timestamp column of a series.

    Timestamps are either ISO-8601 datetimes (stored as datetime64[ns]) or
    plain integer indices (stored as int64).
    """

    @staticmethod
    def parse_column(raw: Iterable) -> np.ndarray:
        """
        Parse a raw timestamp column.

        Args:
            raw: Column values as read from a delimited file

        Returns:
            int64 array for integer indices, datetime64[ns] array otherwise

        Raises:
            ValueError: If a value is neither an integer nor an ISO datetime
        """
        series = pd.Series(list(raw))
        if pd.api.types.is_integer_dtype(series):
            return series.to_numpy(dtype=np.int64)
        as_text = series.astype(str).str.strip()
        if as_text.str.fullmatch(r"-?\d+").all():
            return as_text.astype(np.int64).to_numpy()
        return pd.to_datetime(as_text, format="ISO8601").to_numpy(dtype="datetime64[ns]")

    @staticmethod
    def is_datetime(timestamps: np.ndarray) -> bool:
        return np.issubdtype(np.asarray(timestamps).dtype, np.datetime64)

    @staticmethod
    def calendar_positions(timestamps: np.ndarray, period: int = 24) -> np.ndarray:
        """
        Position-within-day of every timestamp.

        Datetimes map to minutes of the day; integer indices map to index % period.
        """
        timestamps = np.asarray(timestamps)
        if TimestampUtils.is_datetime(timestamps):
            index = pd.DatetimeIndex(timestamps)
            return (index.hour * 60 + index.minute).to_numpy(dtype=np.int64)
        return np.mod(timestamps.astype(np.int64), period)

    @staticmethod
    def to_text(timestamps: np.ndarray) -> np.ndarray:
        """Render timestamps the way they are written to delimited files."""
        timestamps = np.asarray(timestamps)
        if TimestampUtils.is_datetime(timestamps):
            return pd.DatetimeIndex(timestamps).strftime("%Y-%m-%dT%H:%M:%S").to_numpy()
        return timestamps.astype(np.int64).astype(str)

    @staticmethod
    def parse_boundary(value: Union[int, str, datetime]) -> Union[int, np.datetime64]:
        """Parse a split boundary into something comparable with a timestamp column."""
        if isinstance(value, (int, np.integer)):
            return int(value)
        return np.datetime64(pd.Timestamp(value).to_datetime64(), "ns")


def nearest_rank(percent: float, count: int) -> int:
    """ceil(percent * count / 100), robust to binary rounding of the product."""
    return int(math.ceil(round(percent * count / 100.0, 9)))
