"""Style extraction by NMF of an attribute-confidence matrix, and style POP."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (MissingDataError, Series, ValidationError, aggregate_yearly, average_series,
                   fmt, min_max_normalize)

DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class AttributeMatrix:
    A: np.ndarray
    attribute_names: tuple
    image_ids: tuple

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        if A.ndim != 2:
            raise ValidationError("attribute matrix must be 2-D")
        if A.shape != (len(self.attribute_names), len(self.image_ids)):
            raise ValidationError("attribute matrix shape does not match names/ids")
        if not np.all(np.isfinite(A)):
            raise ValidationError("attribute matrix must be finite")
        if np.any(A < 0):
            raise ValidationError("attribute matrix must be non-negative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        object.__setattr__(self, "image_ids", tuple(self.image_ids))


def load_attribute_matrix(path: str | Path) -> AttributeMatrix:
    """Rows are attributes (name in the first column), columns are image ids."""
    p = Path(path)
    if not p.exists():
        raise MissingDataError(f"attribute matrix not found: {p}")
    rows = list(csv.reader(io.StringIO(p.read_text())))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise ValidationError(f"{p}: need a header of image ids and at least one attribute row")
    ids = rows[0][1:]
    names, vals = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(rows[0]):
            raise ValidationError(f"{p}: row {lineno} has {len(r) - 1} values, expected {len(ids)}")
        names.append(r[0])
        vals.append([float(v) for v in r[1:]])
    return AttributeMatrix(np.array(vals), names, ids)


@dataclass
class StyleModel:
    W: np.ndarray
    H: np.ndarray
    attribute_names: tuple = ()
    image_ids: tuple = ()
    reconstruction_error: float = 0.0
    objective_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def K(self) -> int:
        return self.W.shape[1]


def _objective(A, W, H) -> float:
    R = A - W @ H
    return float(np.sum(R * R))


def fit_nmf(A, K: int, seed: int, max_iter: int = 200, tol: float = 1e-4,
            attribute_names: Sequence[str] = (), image_ids: Sequence[str] = ()) -> StyleModel:
    """Lee-Seung multiplicative updates for ``min |A - WH|_F^2``, ``W, H >= 0``.

    Initial entries are uniform on (0, 1] scaled by ``sqrt(mean(A) / K)``.
    Stops after ``max_iter`` sweeps or once the relative decrease of the
    objective drops below ``tol``. ``reconstruction_error`` is the relative
    Frobenius error ``|A - WH| / |A|`` (0 for an all-zero ``A``).
    """
    if isinstance(A, AttributeMatrix):
        attribute_names, image_ids, A = A.attribute_names, A.image_ids, A.A
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError("A must be 2-D")
    if np.any(A < 0):
        raise ValidationError("A has negative entries")
    m, n = A.shape
    if not 1 <= K <= min(m, n):
        raise ValidationError(f"K={K} must lie in [1, {min(m, n)}]")

    rng = np.random.default_rng(seed)
    scale = np.sqrt(A.mean() / K)
    W = (1.0 - rng.random((m, K))) * scale
    H = (1.0 - rng.random((K, n))) * scale

    history = [_objective(A, W, H)]
    it = 0
    for it in range(1, max_iter + 1):
        H *= (W.T @ A) / np.maximum(W.T @ W @ H, DENOM_FLOOR)
        W *= (A @ H.T) / np.maximum(W @ (H @ H.T), DENOM_FLOOR)
        history.append(_objective(A, W, H))
        prev, cur = history[-2], history[-1]
        if prev == 0 or (prev - cur) / prev < tol:
            break

    norm = np.linalg.norm(A)
    rel = float(np.sqrt(history[-1]) / norm) if norm > 0 else 0.0
    return StyleModel(W, H, tuple(attribute_names), tuple(image_ids), rel, history, it)


def _top(values: np.ndarray, top: int) -> list[int]:
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return order[:top]


def style_attributes(model: StyleModel, k: int, top: int = 2) -> list:
    """Names (or indices when unnamed) of the ``top`` heaviest attributes of style ``k``."""
    if not 0 <= k < model.K:
        raise ValidationError(f"style {k} out of range 0..{model.K - 1}")
    idx = _top(model.W[:, k], top)
    return [model.attribute_names[i] for i in idx] if model.attribute_names else idx


def style_top_images(model: StyleModel, k: int, top: int = 10) -> list:
    if not 0 <= k < model.K:
        raise ValidationError(f"style {k} out of range 0..{model.K - 1}")
    idx = _top(model.H[k, :], top)
    return [model.image_ids[i] for i in idx] if model.image_ids else idx


def style_pop(model: StyleModel, k: int, per_image: Mapping[str, Series], top: int = 10,
              weeks_per_year: int = 52) -> Series:
    """Average the top images' weekly POP, take yearly means, min-max normalise."""
    ids = style_top_images(model, k, top)
    missing = [i for i in ids if i not in per_image]
    if missing:
        raise MissingDataError(f"style {k}: no POP series for images {missing}")
    avg = average_series([per_image[i] for i in ids])
    return min_max_normalize(aggregate_yearly(avg, weeks_per_year))


def _matrix_csv(M: np.ndarray, row_names, col_names, corner: str) -> str:
    buf = io.StringIO()
    buf.write(",".join([corner] + [str(c) for c in col_names]) + "\n")
    for name, row in zip(row_names, M):
        buf.write(",".join([str(name)] + [fmt(v) for v in row]) + "\n")
    return buf.getvalue()


def dump_model(model: StyleModel, out_dir: str | Path, top_attributes: int = 2,
               top_images: int = 10) -> None:
    """Write ``W.csv``, ``H.csv`` and ``styles.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    styles = [f"style{k}" for k in range(model.K)]
    attrs = model.attribute_names or range(model.W.shape[0])
    imgs = model.image_ids or range(model.H.shape[1])
    (out / "W.csv").write_text(_matrix_csv(model.W, attrs, styles, "attribute"))
    (out / "H.csv").write_text(_matrix_csv(model.H, styles, imgs, "style"))
    summary = {
        "K": model.K,
        "n_iter": model.n_iter,
        "reconstruction_error": float(fmt(model.reconstruction_error)),
        "styles": [{"style": k,
                    "top_attributes": list(style_attributes(model, k, top_attributes)),
                    "top_images": list(style_top_images(model, k, top_images))}
                   for k in range(model.K)],
    }
    (out / "styles.json").write_text(json.dumps(summary, indent=2) + "\n")
