"""
Base DTO class with common functionality.
"""

from abc import ABC
from dataclasses import fields, is_dataclass
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Optional
import json

import numpy as np
from pydantic import BaseModel


def to_plain(value: Any) -> Any:
    """Convert numpy, pydantic and nested DTO values into JSON-ready objects."""
    if isinstance(value, BaseDTO):
        return value.to_dict()
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()] if value.dtype == object else value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, datetime):
        return value.isoformat()
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    return value


def values_equal(left: Any, right: Any) -> bool:
    """Exact equality that also handles arrays and lists of arrays."""
    if isinstance(left, np.ndarray) or isinstance(right, np.ndarray):
        return np.array_equal(left, right)
    if isinstance(left, (list, tuple)) and isinstance(right, (list, tuple)):
        return len(left) == len(right) and all(values_equal(a, b) for a, b in zip(left, right))
    return bool(left == right)


class BaseDTO(ABC):
    """
    Base class for dataclass DTOs holding numpy arrays.
    """

    def _public_items(self):
        names = [f.name for f in fields(self)] if is_dataclass(self) else list(self.__dict__)
        return [(name, getattr(self, name)) for name in names if not name.startswith('_')]

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert DTO to a JSON-ready dictionary.

        Returns:
            Dictionary with arrays turned into nested lists
        """
        return {key: to_plain(value) for key, value in self._public_items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> Optional['BaseDTO']:
        """
        Create DTO instance from dictionary.

        Returns:
            DTO instance or None if the data does not fit the DTO
        """
        try:
            return cls(**data)
        except (TypeError, ValueError):
            return None

    def __repr__(self) -> str:
        def short(value):
            if isinstance(value, np.ndarray):
                return f"array(shape={value.shape}, dtype={value.dtype})"
            return repr(value)
        attrs = ", ".join(f"{k}={short(v)}" for k, v in self._public_items())
        return f"{self.__class__.__name__}({attrs})"

    def __eq__(self, other) -> bool:
        """Field-wise equality; arrays compare exactly."""
        if not isinstance(other, self.__class__):
            return False
        return all(
            values_equal(mine, theirs)
            for (_, mine), (_, theirs) in zip(self._public_items(), other._public_items())
        )

    __hash__ = None
