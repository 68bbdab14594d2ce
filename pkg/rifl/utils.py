import json
import math
import re
from enum import Enum
from typing import Any

import numpy as np


class StrEnum(str, Enum):
    """Enum where members are also (and must be) strings"""

    def __new__(cls, value: str):
        if not isinstance(value, str):
            msg = f"{value!r} is not a string"
            raise TypeError(msg)
        member = str.__new__(cls, value)
        member._value_ = value
        return member

    __str__ = str.__str__

    @staticmethod
    def _generate_next_value_(name: str, start: int, count: int, last_values) -> str:
        return name.lower()


def flatten_dict(
    d: dict[str, Any],
    parent_key: str = "",
    sep: str = "__",
    verify_keys_do_not_have_sep: bool = True,
) -> dict:
    """Flatten a nested dictionary (nested record fields become CSV columns)"""
    items = []
    for k, v in d.items():
        if verify_keys_do_not_have_sep and sep in k:
            msg = f"Separator {sep!r} is not allowed in keys. Found in {k!r}"
            raise ValueError(msg)
        new_key = f"{parent_key}{sep}{k}" if parent_key else k
        if isinstance(v, dict):
            items.extend(
                flatten_dict(v, new_key, sep, verify_keys_do_not_have_sep).items(),
            )
        else:
            items.append((new_key, v))
    return dict(items)


def format_number(value: float) -> str:
    """Decimal text with 17 significant digits, enough to round-trip a double."""
    value = float(value)
    if not math.isfinite(value):
        msg = f"Non-finite number {value!r} cannot be serialized"
        raise ValueError(msg)
    if value == 0.0:
        return "0.0"
    return format(value, ".17g")


_FLOAT_MARK = "\ue000"
_FLOAT_SLOT = re.compile(f'"{_FLOAT_MARK}(\\d+){_FLOAT_MARK}"')


def _plain(obj: Any, floats: list[str]) -> Any:
    """Copy of obj with numpy values unwrapped and floats swapped for numbered slots."""
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist(), floats)
    if isinstance(obj, bool | np.bool_):
        return bool(obj)
    if isinstance(obj, int | np.integer):
        return int(obj)
    if isinstance(obj, float | np.floating):
        floats.append(format_number(obj))
        return f"{_FLOAT_MARK}{len(floats) - 1}{_FLOAT_MARK}"
    if isinstance(obj, str):
        if _FLOAT_MARK in obj:
            msg = f"String contains the reserved character U+E000: {obj!r}"
            raise ValueError(msg)
        return obj
    if isinstance(obj, list | tuple):
        return [_plain(v, floats) for v in obj]
    if isinstance(obj, dict):
        for k in obj:
            if not isinstance(k, str):
                msg = f"Only string keys are supported, got {k!r}"
                raise TypeError(msg)
        return {_plain(k, floats): _plain(v, floats) for k, v in obj.items()}
    return obj


def canonical_dumps(obj: Any) -> str:
    """
    Canonical JSON text: sorted keys, no insignificant whitespace, floats with
    17 significant digits. Identical inputs always give identical bytes, which
    is what the record checksums and the reproducible reports rely on.
    """
    floats: list[str] = []
    text = json.dumps(
        _plain(obj, floats),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )
    return _FLOAT_SLOT.sub(lambda m: floats[int(m.group(1))], text)
