"""Dynamic time warping distance between numeric sequences."""

from __future__ import annotations

import math
from typing import Sequence


def dtw(a: Sequence[float], b: Sequence[float]) -> float:
    """Alignment cost with local cost |a_i - b_j| and no band constraint.

    Conventions: dtw(s, s) == 0, dtw([], []) == 0, and dtw([], s) == sum(s).
    """
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    if n == 0:
        return float(sum(b))
    if m == 0:
        return float(sum(a))
    prev = [0.0] + [math.inf] * m
    for i in range(1, n + 1):
        ai = a[i - 1]
        cur = [math.inf] * (m + 1)
        for j in range(1, m + 1):
            d = ai - b[j - 1]
            if d < 0:
                d = -d
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = d + best
        prev = cur
    return prev[m]
