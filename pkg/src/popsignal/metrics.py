"""Forecast accuracy metrics: WAPE, MAE, MAPE and the thresholded edit distance.

The edit distance is reported under the name ``erp``. It counts edits where
two values match when they differ by at most ``epsilon`` (after scaling both
series by the maximum of the ground truth), and is normalised by the longer
length so results fall in [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .core import Series, ValidationError, fmt

ERP_EPSILON = 0.03


def _arr(x) -> np.ndarray:
    return x.to_numpy() if isinstance(x, Series) else np.asarray(x, dtype=np.float64)


def _pair(gt, pred):
    gt, pred = _arr(gt), _arr(pred)
    if gt.shape != pred.shape:
        raise ValidationError(f"length mismatch: {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        raise ValidationError("empty series")
    return gt, pred


def wape(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    total = gt.sum()
    if total <= 0:
        raise ValidationError("WAPE undefined: ground truth sums to zero")
    return float(100.0 * np.abs(gt - pred).sum() / total)


def mae(gt, pred) -> float:
    gt, pred = _pair(gt, pred)
    return float(np.abs(gt - pred).mean())


def mape(gt, pred) -> float:
    """Mean absolute percentage error as a fraction (1.0 = 100%)."""
    gt, pred = _pair(gt, pred)
    if np.any(gt == 0):
        raise ValidationError("MAPE undefined: ground truth contains zeros")
    return float(np.mean(np.abs(gt - pred) / np.abs(gt)))


def erp_threshold(gt, pred, epsilon: float = ERP_EPSILON) -> float:
    gt, pred = _arr(gt), _arr(pred)
    if gt.size == 0 or pred.size == 0:
        raise ValidationError("edit distance needs non-empty series")
    top = gt.max()
    if top <= 0:
        raise ValidationError("edit distance undefined: max(ground truth) must be > 0")
    edits = _kernels.edit_distance(gt / top, pred / top, float(epsilon))
    return edits / max(gt.size, pred.size)


@dataclass(frozen=True)
class MetricReport:
    wape: float | None
    mae: float
    mape: float | None
    erp: float | None

    def as_row(self) -> dict:
        return {k: ("" if v is None else fmt(v)) for k, v in asdict(self).items()}


def evaluate(gt, pred, epsilon: float = ERP_EPSILON) -> MetricReport:
    """All four metrics; a metric undefined for this ground truth is ``None``."""
    def guarded(fn, *args):
        try:
            return fn(*args)
        except ValidationError:
            return None

    return MetricReport(guarded(wape, gt, pred), mae(gt, pred), guarded(mape, gt, pred),
                        guarded(erp_threshold, gt, pred, epsilon))
