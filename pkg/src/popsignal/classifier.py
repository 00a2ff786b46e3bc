"""Binary fashionable/unfashionable head and confident-learning cleanup.

Labels are encoded as integers: ``0`` = fashionable (positive queries),
``1`` = unfashionable (negative queries). Probability matrices have the same
column order.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import NumericError, ValidationError, fmt

FASHIONABLE = 0
UNFASHIONABLE = 1
CLASS_NAMES = ("fashionable", "unfashionable")


@dataclass(frozen=True)
class LabeledDataset:
    image_ids: tuple
    X: np.ndarray
    labels: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        steps = np.asarray(self.steps, dtype=np.int64)
        if X.ndim != 2:
            raise ValidationError("X must be 2-D")
        n = X.shape[0]
        if len(self.image_ids) != n or labels.shape != (n,) or steps.shape != (n,):
            raise ValidationError("image_ids, X, labels and steps must have equal length")
        if n and not np.isin(labels, (FASHIONABLE, UNFASHIONABLE)).all():
            raise ValidationError("labels must be 0 (fashionable) or 1 (unfashionable)")
        object.__setattr__(self, "image_ids", tuple(self.image_ids))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return len(self.image_ids)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(tuple(self.image_ids[i] for i in idx), self.X[idx],
                              self.labels[idx], self.steps[idx])

    def class_counts(self) -> tuple[int, int]:
        return (int(np.sum(self.labels == FASHIONABLE)), int(np.sum(self.labels == UNFASHIONABLE)))

    def step_counts(self, k_past: int | None = None) -> dict[int, tuple[int, int]]:
        """Per-step ``(positives, negatives)`` counts, i.e. M' and M'' of each step."""
        ks = range(1, k_past + 1) if k_past else sorted(set(self.steps.tolist()))
        return {k: (int(np.sum((self.steps == k) & (self.labels == FASHIONABLE))),
                    int(np.sum((self.steps == k) & (self.labels == UNFASHIONABLE))))
                for k in ks}


@dataclass
class HeadModel:
    """One hidden rectified layer followed by a 2-way softmax."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def params(self) -> tuple:
        return self.W1, self.b1, self.W2, self.b2

    def copy(self) -> "HeadModel":
        return HeadModel(*(p.copy() for p in self.params()))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _softmax(_relu(X @ self.W1 + self.b1) @ self.W2 + self.b2)

    def to_dict(self) -> dict:
        return {name: p.tolist() for name, p in zip(("W1", "b1", "W2", "b2"), self.params())}


def init_head(dim: int, hidden: int, seed: int) -> HeadModel:
    rng = np.random.default_rng(seed)
    return HeadModel(
        W1=rng.standard_normal((dim, hidden)) * np.sqrt(2.0 / dim),
        b1=np.zeros(hidden),
        W2=rng.standard_normal((hidden, 2)) * np.sqrt(1.0 / hidden),
        b2=np.zeros(2),
    )


def _relu(a):
    return np.maximum(a, 0.0)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(model: HeadModel, X: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy plus ``l2/2 * (|W1|^2 + |W2|^2)`` and its gradient.

    Returns ``(loss, (dW1, db1, dW2, db2))``.
    """
    n = X.shape[0]
    pre = X @ model.W1 + model.b1
    hid = _relu(pre)
    logits = hid @ model.W2 + model.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    loss = -logp[np.arange(n), y].mean()
    loss += 0.5 * l2 * (np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2))

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dW2 = hid.T @ dlogits + l2 * model.W2
    db2 = dlogits.sum(axis=0)
    dpre = (dlogits @ model.W2.T) * (pre > 0)
    dW1 = X.T @ dpre + l2 * model.W1
    db1 = dpre.sum(axis=0)
    return float(loss), (dW1, db1, dW2, db2)


def _require_both_classes(labels: np.ndarray, what: str):
    if not (np.any(labels == FASHIONABLE) and np.any(labels == UNFASHIONABLE)):
        raise ValidationError(f"{what} needs both fashionable and unfashionable samples")


def train_head(ds: LabeledDataset, seed: int, epochs: int = 50, lr: float = 1e-2,
               l2: float = 1e-4, hidden: int = 128) -> HeadModel:
    """Full-batch gradient descent with weight decay from a seeded init."""
    _require_both_classes(ds.labels, "training")
    model = init_head(ds.X.shape[1], hidden, seed)
    for _ in range(epochs):
        _, grads = loss_and_grad(model, ds.X, ds.labels, l2)
        for p, g in zip(model.params(), grads):
            p -= lr * g
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise NumericError("head training diverged; lower the learning rate")
    return model


def features(model: HeadModel, e: np.ndarray) -> np.ndarray:
    """Hidden-layer activations of one vector (1-D) or a batch (2-D)."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != model.dim:
        raise ValidationError(f"embedding dim {e.shape[-1]} != model dim {model.dim}")
    return _relu(e @ model.W1 + model.b1)


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per sample: seeded shuffle inside each class, then round-robin.

    The round-robin position carries over from one class to the next, so
    fold sizes differ by at most one.
    """
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for c in (FASHIONABLE, UNFASHIONABLE):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (pos + np.arange(len(idx))) % folds
        pos += len(idx)
    return assign


def out_of_fold_probs(ds: LabeledDataset, folds: int = 5, seed: int = 0, jobs: int = 1,
                      **train_kw) -> np.ndarray:
    """``N x 2`` probabilities, row ``i`` predicted by a model that never saw ``i``."""
    n = len(ds)
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if n < folds:
        raise ValidationError(f"{n} samples cannot be split into {folds} folds")
    _require_both_classes(ds.labels, "cross-validation")
    assign = stratified_folds(ds.labels, folds, seed)
    for f in range(folds):
        _require_both_classes(ds.labels[assign != f], f"training split of fold {f}")

    def run(f):
        test = np.flatnonzero(assign == f)
        model = train_head(ds.subset(np.flatnonzero(assign != f)), seed=seed + 1 + f, **train_kw)
        return test, model.predict_proba(ds.X[test])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, range(folds)))
    else:
        parts = [run(f) for f in range(folds)]
    P = np.empty((n, 2))
    for test, probs in parts:
        P[test] = probs
    return P


def self_confidence_thresholds(P: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Per-class mean of the probability assigned to the sample's own label."""
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels)
    out = []
    for c in (FASHIONABLE, UNFASHIONABLE):
        mask = labels == c
        if not mask.any():
            raise ValidationError(f"class {CLASS_NAMES[c]!r} has no samples")
        out.append(float(P[mask, c].mean()))
    return out[0], out[1]


def confident_joint(P: np.ndarray, labels: np.ndarray, thresholds: Sequence[float]):
    """Thresholded 2x2 count matrix and the sample indices behind each cell.

    Cell ``(h, l)`` holds the samples labelled ``h`` whose probability for
    ``l`` reaches ``t_l``. A sample may sit in both cells of its row.
    """
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels)
    confident = P >= np.asarray(thresholds, dtype=np.float64)[None, :]
    C = np.zeros((2, 2), dtype=np.int64)
    members = [[None, None], [None, None]]
    for h in (0, 1):
        row = labels == h
        for l in (0, 1):
            idx = np.flatnonzero(row & confident[:, l])
            members[h][l] = idx
            C[h, l] = len(idx)
    return C, members


@dataclass
class ConfidentReport:
    thresholds: tuple
    joint: np.ndarray
    pruned_ids: list = field(default_factory=list)
    pruned_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def to_json(self, extra: dict | None = None) -> str:
        doc = {
            "thresholds": {name: None if t is None else float(fmt(t))
                           for name, t in zip(CLASS_NAMES, self.thresholds)},
            "confident_joint": self.joint.tolist(),
            "pruned_ids": list(self.pruned_ids),
        }
        doc.update(extra or {})
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def confident_report(ds: LabeledDataset, P: np.ndarray) -> ConfidentReport:
    t = self_confidence_thresholds(P, ds.labels)
    C, members = confident_joint(P, ds.labels, t)
    off = np.union1d(members[0][1], members[1][0]).astype(np.int64)
    return ConfidentReport(t, C, sorted(ds.image_ids[i] for i in off), off)


def prune(ds: LabeledDataset, report: ConfidentReport) -> LabeledDataset:
    keep = np.setdiff1d(np.arange(len(ds)), report.pruned_index)
    cleaned = ds.subset(keep)
    pos, neg = cleaned.class_counts()
    if pos == 0 or neg == 0:
        raise ValidationError("pruning emptied a whole class; cannot retrain")
    return cleaned


def prune_and_retrain(ds: LabeledDataset, report: ConfidentReport, seed: int, **train_kw):
    """Drop the off-diagonal samples and retrain the head on what is left."""
    cleaned = prune(ds, report)
    return cleaned, train_head(cleaned, seed=seed, **train_kw)


@dataclass
class CleaningOutcome:
    report: ConfidentReport
    cleaned: LabeledDataset
    model: HeadModel
    probs: np.ndarray | None = None


def clean(ds: LabeledDataset, seed: int, folds: int = 5, keep_noisy: bool = False,
          jobs: int = 1, **train_kw) -> CleaningOutcome:
    """Full cleaning stage: out-of-fold probabilities, report, prune, retrain.

    With ``keep_noisy`` nothing is pruned and the head is trained on all data.
    """
    if keep_noisy:
        _require_both_classes(ds.labels, "training")
        report = ConfidentReport((None, None), np.zeros((2, 2), dtype=np.int64))
        return CleaningOutcome(report, ds, train_head(ds, seed=seed, **train_kw))
    P = out_of_fold_probs(ds, folds=folds, seed=seed, jobs=jobs, **train_kw)
    report = confident_report(ds, P)
    cleaned, model = prune_and_retrain(ds, report, seed=seed, **train_kw)
    return CleaningOutcome(report, cleaned, model, P)
