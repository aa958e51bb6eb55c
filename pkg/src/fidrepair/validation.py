"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers
import re
from typing import Iterable

_CWE_RE = re.compile(r"CWE-[0-9]+")


def check_cwe_id(value: str) -> str:
    if not isinstance(value, str) or not _CWE_RE.fullmatch(value):
        raise ValueError(f"expected a CWE identifier like 'CWE-125', got {value!r}")
    return value


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_weights(weights: Iterable[float], n: int = 4) -> tuple[float, ...]:
    w = tuple(float(x) for x in weights)
    if len(w) != n or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise ValueError(f"expected {n} non-negative weights summing to 1, got {w}")
    return w


def check_bundles(X, segment_len: int | None = None) -> list:
    """Coerce ``X`` to a list of ContextBundle and check slot lengths against ``segment_len``."""
    from .fid_model.context import ContextBundle

    if isinstance(X, ContextBundle):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one ContextBundle")
    for i, b in enumerate(X):
        if not isinstance(b, ContextBundle):
            raise TypeError(f"X[{i}] is {type(b).__name__}, expected ContextBundle")
        if segment_len is not None:
            for seg in b.slots():
                if len(seg) > segment_len:
                    raise ValueError(
                        f"X[{i}] ({b.sample_id!r}) has a {seg.kind} segment of length {len(seg)} > {segment_len}"
                    )
    return X
