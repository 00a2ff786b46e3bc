"""Form the POP series: per-step mean cosine similarity to the probe."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Series, ValidationError, fmt

POP = "pop"
NEGATIVE = "negative"
POS_NEG = "pos-neg"
NO_LEARNING = "no-learning"
NO_EXPANSION = "no-expansion"
VARIANTS = (POP, NEGATIVE, POS_NEG, NO_LEARNING, NO_EXPANSION)


class ZeroNormFeature(ValidationError):
    """A feature vector with zero norm reached the cosine."""


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroNormFeature("cosine of a zero-norm feature vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def mean_cosine(feats: np.ndarray, probe_feat: np.ndarray) -> float:
    """Average cosine between each row of ``feats`` and ``probe_feat``."""
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    probe_feat = np.asarray(probe_feat, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1)
    pn = np.linalg.norm(probe_feat)
    if pn == 0 or np.any(norms == 0):
        raise ZeroNormFeature("cosine of a zero-norm feature vector")
    cos = (feats @ probe_feat) / (norms * pn)
    return float(np.clip(cos, -1.0, 1.0).mean())


def fill_gaps(values: Sequence[float | None]) -> np.ndarray:
    """Linear interpolation over missing steps; edges copy the nearest value."""
    vals = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    known = np.flatnonzero(~np.isnan(vals))
    if known.size == 0:
        raise ValidationError("every step is empty; no signal can be formed")
    return np.interp(np.arange(len(vals)), known, vals[known])


@dataclass(frozen=True)
class PopSeries:
    """POP channel(s) for one probe, ordered oldest step first.

    ``series[0]`` is the main channel; for ``pos-neg`` ``series[1]`` is the
    negative channel. ``coverage[j]`` is the image count behind value ``j``
    (one tuple entry per channel).
    """

    series: tuple
    variant: str
    probe_id: str
    coverage: tuple

    @property
    def main(self) -> Series:
        return self.series[0]

    def matrix(self) -> np.ndarray:
        return np.vstack([s.to_numpy() for s in self.series])

    def to_csv(self) -> str:
        buf = io.StringIO()
        cov = ";".join("/".join(str(c) for c in cs) for cs in self.coverage)
        buf.write(f"# variant={self.variant}\n# probe_id={self.probe_id}\n")
        buf.write(f"# channels={'positive,negative' if len(self.series) == 2 else self.variant}\n")
        buf.write(f"# coverage={cov}\n")
        buf.write("week,value" + (",value_neg" if len(self.series) == 2 else "") + "\n")
        for j, week in enumerate(self.main.index):
            buf.write(f"{week}," + ",".join(fmt(s.values[j]) for s in self.series) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PopSeries":
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            elif line.strip():
                body.append(line.split(","))
        if not body or body[0][:2] != ["week", "value"]:
            raise ValidationError("POP CSV needs header 'week,value[,value_neg]'")
        rows = body[1:]
        start = int(rows[0][0])
        n_ch = len(body[0]) - 1
        series = tuple(Series(start, (float(r[1 + c]) for r in rows)) for c in range(n_ch))
        cov = tuple(tuple(int(c) for c in part.split("/"))
                    for part in meta.get("coverage", "").split(";") if part)
        return cls(series, meta.get("variant", POP), meta.get("probe_id", ""), cov)


def form_signal(probe_feature: np.ndarray, step_features: Mapping[int, np.ndarray],
                k_past: int, observation_week: int, probe_id: str = "",
                variant: str = POP,
                negative_features: Mapping[int, np.ndarray] | None = None) -> PopSeries:
    """Build the POP series from feature vectors that are already extracted.

    ``step_features[k]`` holds the feature rows of the images for look-back
    step ``k`` (1..k_past); missing or empty steps are interpolated. Output
    value ``j`` belongs to week ``observation_week - k_past + j``, i.e. step
    ``k = k_past - j``. For ``pos-neg`` pass the negative images through
    ``negative_features``; they become the second channel.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"unknown signal variant {variant!r}")
    channels = [step_features]
    if variant == POS_NEG:
        if negative_features is None:
            raise ValidationError("pos-neg variant needs negative features")
        channels.append(negative_features)

    out, coverage = [], []
    for feats_by_step in channels:
        raw, counts = [], []
        for k in range(k_past, 0, -1):
            f = feats_by_step.get(k)
            n = 0 if f is None else len(f)
            counts.append(n)
            raw.append(mean_cosine(f, probe_feature) if n else None)
        out.append(Series(observation_week - k_past, fill_gaps(raw)))
        coverage.append(counts)
    return PopSeries(tuple(out), variant, probe_id, tuple(zip(*coverage)))


def group_by_step(steps: np.ndarray, feats: np.ndarray, mask: np.ndarray | None = None) -> dict:
    """Split feature rows into ``{step_k: rows}`` keeping original order."""
    steps = np.asarray(steps)
    if mask is not None:
        steps, feats = steps[mask], feats[mask]
    return {int(k): feats[steps == k] for k in np.unique(steps)}


def extract(feature_map: Callable[[np.ndarray], np.ndarray] | None, X: np.ndarray) -> np.ndarray:
    """Apply the feature map; ``None`` means raw embeddings (no learning)."""
    return np.asarray(X, dtype=np.float64) if feature_map is None else feature_map(X)
