"""Isotonic recalibration of raw predictions, one map per dataset.

Fitting runs pool-adjacent-violators on (prediction, gold) pairs sorted
by prediction, after pre-merging tied predictions by their gold mean.
The fitted map is applied as a right-continuous step function, clamped
to its end values outside the fitted range, so calibrated outputs never
leave the observed label range. Maps must be fit on the train split
only; that is the caller's contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IsotonicMap", "fit_isotonic", "apply_calibration"]


@dataclass(frozen=True)
class IsotonicMap:
    """Sorted breakpoints with non-decreasing fitted values."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.breakpoints) != len(self.values) or len(self.breakpoints) == 0:
            raise ValueError("breakpoints and values must align and be non-empty")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("fitted values must be non-decreasing")

    def __call__(self, x):
        return apply_calibration(self, x)

    def to_pairs(self) -> list[list[float]]:
        return [[float(x), float(y)] for x, y in zip(self.breakpoints, self.values)]

    @classmethod
    def from_pairs(cls, pairs) -> "IsotonicMap":
        xs = np.array([p[0] for p in pairs], dtype=np.float64)
        ys = np.array([p[1] for p in pairs], dtype=np.float64)
        return cls(xs, ys)


def fit_isotonic(predictions, golds) -> IsotonicMap:
    """Least-squares monotone fit of gold as a function of prediction."""
    preds = np.asarray(predictions, dtype=np.float64)
    gold = np.asarray(golds, dtype=np.float64)
    if preds.shape != gold.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError("fit_isotonic: need equal-length, non-empty 1-D inputs")

    order = np.argsort(preds, kind="stable")
    preds, gold = preds[order], gold[order]

    # merge tied predictions: the fitted map is a function of the prediction
    xs: list[float] = []
    ys: list[float] = []
    ws: list[float] = []
    i = 0
    while i < len(preds):
        j = i
        while j < len(preds) and preds[j] == preds[i]:
            j += 1
        xs.append(preds[i])
        ys.append(float(np.mean(gold[i:j])))
        ws.append(float(j - i))
        i = j

    # pool adjacent violators, weighted by merge counts
    vals: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for y, w in zip(ys, ws):
        vals.append(y)
        weights.append(w)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            y2, w2, s2 = vals.pop(), weights.pop(), sizes.pop()
            y1, w1, s1 = vals.pop(), weights.pop(), sizes.pop()
            vals.append((y1 * w1 + y2 * w2) / (w1 + w2))
            weights.append(w1 + w2)
            sizes.append(s1 + s2)

    fitted = np.concatenate([np.full(s, v) for v, s in zip(vals, sizes)])
    return IsotonicMap(np.array(xs), fitted)


def apply_calibration(mapping: IsotonicMap, x):
    """Evaluate the step map; inputs outside the range clamp to the ends."""
    x = np.asarray(x, dtype=np.float64)
    idx = np.searchsorted(mapping.breakpoints, x, side="right") - 1
    idx = np.clip(idx, 0, len(mapping.breakpoints) - 1)
    out = mapping.values[idx]
    return float(out) if out.ndim == 0 else out
