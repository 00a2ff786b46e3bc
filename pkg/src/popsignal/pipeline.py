"""File-based pipeline stages: mine, clean, signal, forecast, evaluate, styles.

Each stage reads only the files written by earlier stages (or user inputs)
and writes its own outputs under ``out_dir``. Missing inputs raise
:class:`MissingDataError`; nothing is silently recomputed.

Layout of ``out_dir``::

    queries.json            audit manifest of every query and its hit count
    records.csv             one row per image hit
    cache/                  search-response cache (fixture layout)
    clean/index.json        probe -> cleaning group
    clean/<group>/          report.json, cleaned.csv, model.json
    signals/<probe>.csv     POP series per probe
    forecast/*.csv          forecasts with the held-out actuals
    metrics.csv             evaluation table
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import classifier as clf
from . import signal as sig
from .core import MissingDataError, Probe, ValidationError, fmt, load_series, min_max_normalize
from .embeddings import EmbeddingStore
from .forecasting import FORECASTERS, ForecastRequest, exo_ridge_forecast
from .gateway import FetchResult, GatewayConfig, LiveBackend, fetch_all
from .metrics import ERP_EPSILON, evaluate as evaluate_pair, wape
from .query import NEUTRAL, NO_EXPANSION, POSITIVE, ExpansionConfig, canonical_key, expand

log = logging.getLogger(__name__)

RECORD_FIELDS = ["probe_id", "query_key", "polarity", "step_k", "rank", "image_id",
                 "source_url", "interval_start", "interval_end"]
FORECAST_FIELDS = ["series_id", "method", "step", "actual", "forecast"]
METRIC_FIELDS = ["series_id", "method", "wape", "mae", "mape", "erp"]
POOLED = "ALL"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingDataError(f"{what} not found: {path} (run the upstream stage first)")
    return path


def _write_csv(path: Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue())


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dump_json(path: Path, doc, indent: int | None = 2) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=indent, sort_keys=True) + "\n")


# --- probes ----------------------------------------------------------------

def load_probes(path: str | Path) -> list[Probe]:
    """Probe manifest: JSON array of ``{image_id, tags, observation_week}``."""
    p = _require(Path(path), "probe manifest")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(doc, list) or not doc:
        raise ValidationError(f"{p}: expected a non-empty JSON array of probes")
    probes, seen = [], set()
    for i, entry in enumerate(doc):
        try:
            probe = Probe(entry["image_id"], entry["tags"], entry["observation_week"],
                          entry.get("attributes"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{p}: probe {i} is missing field {exc}") from None
        if probe.image_id in seen:
            raise ValidationError(f"{p}: duplicate probe {probe.image_id!r}")
        seen.add(probe.image_id)
        probes.append(probe)
    return probes


# --- mine ------------------------------------------------------------------

def mine(probes: Sequence[Probe], exp_cfg: ExpansionConfig, gw_cfg: GatewayConfig,
         out_dir: str | Path, live: LiveBackend | None = None) -> dict:
    """Expand and fetch every probe's queries; write the audit manifest and records.

    Returns the manifest. Failed queries are listed under ``failures``; the
    caller decides whether they are fatal.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"expansion": asdict(exp_cfg), "m_per_query": gw_cfg.m_per_query,
                "probes": [], "failures": {}}
    rows = []
    fetched, failed = {}, {}
    for probe in probes:
        specs = expand(probe, exp_cfg)
        # probes sharing tags share queries; each key is fetched once per run
        todo = [q for q in specs if canonical_key(q) not in fetched and canonical_key(q) not in failed]
        if todo:
            batch = fetch_all(todo, gw_cfg, live)
            fetched.update(batch.records)
            failed.update(batch.failures)
        result = FetchResult({k: fetched[k] for k in map(canonical_key, specs) if k in fetched},
                             {k: failed[k] for k in map(canonical_key, specs) if k in failed})
        entry = {"image_id": probe.image_id, "tags": list(probe.tags),
                 "observation_week": probe.observation_week, "queries": []}
        for q in specs:
            key = canonical_key(q)
            recs = result.records.get(key)
            entry["queries"].append({
                "key": key, "tokens": list(q.tokens), "polarity": q.polarity, "step_k": q.step_k,
                "interval": [q.interval.start, q.interval.end],
                "records": None if recs is None else len(recs)})
            for r in recs or ():
                rows.append({"probe_id": probe.image_id, "query_key": key, "polarity": r.polarity,
                             "step_k": r.step_k, "rank": r.rank, "image_id": r.image_id,
                             "source_url": r.source_url, "interval_start": r.interval.start,
                             "interval_end": r.interval.end})
        entry["n_queries"] = len(specs)
        entry["n_records"] = result.total
        manifest["probes"].append(entry)
        for key, err in result.failures.items():
            manifest["failures"][f"{probe.image_id}:{key}"] = str(err)
    manifest["n_queries"] = sum(p["n_queries"] for p in manifest["probes"])
    manifest["n_records"] = len(rows)
    _dump_json(out / "queries.json", manifest, indent=None)
    _write_csv(out / "records.csv", RECORD_FIELDS, rows)
    return manifest


def read_manifest(out_dir: str | Path) -> dict:
    return json.loads(_require(Path(out_dir) / "queries.json", "query manifest").read_text())


def read_records(out_dir: str | Path) -> dict[str, list[dict]]:
    """Records grouped by probe id, in file order."""
    rows = _read_csv(_require(Path(out_dir) / "records.csv", "records file"))
    grouped = defaultdict(list)
    for r in rows:
        r["step_k"] = int(r["step_k"])
        r["rank"] = int(r["rank"])
        grouped[r["probe_id"]].append(r)
    return grouped


def _expansion_of(manifest: dict) -> ExpansionConfig:
    return ExpansionConfig(**manifest["expansion"])


# --- clean -----------------------------------------------------------------

def dataset_for(records: Sequence[dict], store: EmbeddingStore) -> clf.LabeledDataset:
    labels = []
    for r in records:
        if r["polarity"] == NEUTRAL:
            raise ValidationError("neutral (no-expansion) records carry no labels to learn from")
        labels.append(clf.FASHIONABLE if r["polarity"] == POSITIVE else clf.UNFASHIONABLE)
    ids = [r["image_id"] for r in records]
    return clf.LabeledDataset(ids, store.lookup_many(ids), labels, [r["step_k"] for r in records])


def group_key(records: Sequence[dict]) -> str:
    """Probes with identical query sets share one cleaning run."""
    keys = sorted({r["query_key"] for r in records})
    return hashlib.sha1("\n".join(keys).encode()).hexdigest()[:12]


def save_model(model: clf.HeadModel, path: Path) -> None:
    path.write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path: Path) -> clf.HeadModel:
    doc = json.loads(_require(path, "head model").read_text())
    return clf.HeadModel(*(np.array(doc[k], dtype=np.float64) for k in ("W1", "b1", "W2", "b2")))


def clean_stage(out_dir: str | Path, store: EmbeddingStore, seed: int, folds: int = 5,
                keep_noisy: bool = False, jobs: int = 1, **train_kw) -> dict:
    """Confident-learning cleanup per query group; returns ``{group: report}``."""
    out = Path(out_dir)
    manifest = read_manifest(out)
    exp_cfg = _expansion_of(manifest)
    if exp_cfg.mode == NO_EXPANSION:
        raise ValidationError("no_expansion runs have no polarity labels; skip the clean stage")
    by_probe = read_records(out)
    groups, index = {}, {}
    for probe_id in sorted(by_probe):
        g = group_key(by_probe[probe_id])
        index[probe_id] = g
        groups.setdefault(g, by_probe[probe_id])

    reports = {}
    for g, records in sorted(groups.items()):
        ds = dataset_for(records, store)
        outcome = clf.clean(ds, seed=seed, folds=folds, keep_noisy=keep_noisy, jobs=jobs, **train_kw)
        gdir = out / "clean" / g
        gdir.mkdir(parents=True, exist_ok=True)
        counts = outcome.cleaned.step_counts(exp_cfg.k_past)
        extra = {"n_samples": len(ds), "n_kept": len(outcome.cleaned), "keep_noisy": keep_noisy,
                 "step_counts": {str(k): {"positive": v[0], "negative": v[1]}
                                 for k, v in counts.items()}}
        (gdir / "report.json").write_text(outcome.report.to_json(extra))
        _write_csv(gdir / "cleaned.csv", ["image_id", "label", "step_k"],
                   ({"image_id": i, "label": clf.CLASS_NAMES[l], "step_k": k}
                    for i, l, k in zip(outcome.cleaned.image_ids, outcome.cleaned.labels,
                                       outcome.cleaned.steps)))
        save_model(outcome.model, gdir / "model.json")
        reports[g] = outcome.report
    _dump_json(out / "clean" / "index.json", index)
    return reports


# --- signal ----------------------------------------------------------------

def _cleaned(gdir: Path, store: EmbeddingStore):
    rows = _read_csv(_require(gdir / "cleaned.csv", "cleaned dataset"))
    ids = [r["image_id"] for r in rows]
    labels = np.array([clf.CLASS_NAMES.index(r["label"]) for r in rows])
    steps = np.array([int(r["step_k"]) for r in rows])
    return store.lookup_many(ids), labels, steps


def signal_for(probe_id: str, out_dir: Path, store: EmbeddingStore, variant: str,
               k_past: int, observation_week: int, records: Sequence[dict],
               index: dict | None, group_cache: dict | None = None) -> sig.PopSeries:
    probe_raw = store.lookup(probe_id)
    if variant in (sig.NO_LEARNING, sig.NO_EXPANSION):
        want = NEUTRAL if variant == sig.NO_EXPANSION else POSITIVE
        sel = [r for r in records if r["polarity"] == want]
        X = store.lookup_many([r["image_id"] for r in sel])
        steps = np.array([r["step_k"] for r in sel])
        return sig.form_signal(probe_raw, sig.group_by_step(steps, X), k_past, observation_week,
                               probe_id, variant)

    if index is None or probe_id not in index:
        raise MissingDataError(f"no cleaning output for probe {probe_id!r} (run clean first)")
    gdir = out_dir / "clean" / index[probe_id]
    cache = {} if group_cache is None else group_cache
    if gdir not in cache:
        model = load_model(gdir / "model.json")
        X, labels, steps = _cleaned(gdir, store)
        F = clf.features(model, X) if len(X) else np.empty((0, model.hidden))
        cache[gdir] = model, F, labels, steps
    model, F, labels, steps = cache[gdir]
    pf = clf.features(model, probe_raw)
    pos = sig.group_by_step(steps, F, labels == clf.FASHIONABLE)
    neg = sig.group_by_step(steps, F, labels == clf.UNFASHIONABLE)
    if variant == sig.POP:
        return sig.form_signal(pf, pos, k_past, observation_week, probe_id, variant)
    if variant == sig.NEGATIVE:
        return sig.form_signal(pf, neg, k_past, observation_week, probe_id, variant)
    return sig.form_signal(pf, pos, k_past, observation_week, probe_id, variant, negative_features=neg)


def signal_stage(out_dir: str | Path, store: EmbeddingStore, variant: str = sig.POP) -> dict:
    """Write ``signals/<probe>.csv`` for every mined probe; returns ``{probe: PopSeries}``."""
    out = Path(out_dir)
    manifest = read_manifest(out)
    exp_cfg = _expansion_of(manifest)
    if (variant == sig.NO_EXPANSION) != (exp_cfg.mode == NO_EXPANSION):
        raise ValidationError(
            f"variant {variant!r} does not match mining mode {exp_cfg.mode!r} "
            "(no-expansion signals need a no_expansion mining run and vice versa)")
    by_probe = read_records(out)
    index = None
    if variant not in (sig.NO_LEARNING, sig.NO_EXPANSION):
        index = json.loads(_require(out / "clean" / "index.json", "cleaning index").read_text())
    results, group_cache = {}, {}
    for p in manifest["probes"]:
        pid = p["image_id"]
        pop = signal_for(pid, out, store, variant, exp_cfg.k_past, p["observation_week"],
                         by_probe.get(pid, []), index, group_cache)
        path = out / "signals" / f"{pid}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(pop.to_csv())
        results[pid] = pop
    return results


def load_signal(path: Path) -> sig.PopSeries:
    return sig.PopSeries.from_csv(_require(path, "POP series").read_text())


# --- forecast / evaluate -------------------------------------------------------

def load_sales(path: str | Path):
    """Sales table: ``product_id,split,s_*...,y0..y{n-1}`` with split in {train,test}."""
    rows = _read_csv(_require(Path(path), "sales table"))
    if not rows:
        raise ValidationError(f"{path}: empty sales table")
    cols = list(rows[0])
    s_cols = [c for c in cols if c.startswith("s_")]
    y_cols = sorted((c for c in cols if c.startswith("y") and c[1:].isdigit()), key=lambda c: int(c[1:]))
    if not y_cols:
        raise ValidationError(f"{path}: no sales columns y0..")
    ids = [r["product_id"] for r in rows]
    split = np.array([r["split"] for r in rows])
    if not set(split) <= {"train", "test"}:
        raise ValidationError(f"{path}: split must be train or test")
    S = np.array([[float(r[c]) for c in s_cols] for r in rows]) if s_cols else None
    Y = np.array([[float(r[c]) for c in y_cols] for r in rows])
    return ids, split, S, Y


def exogenous_windows(signals_dir: Path, ids: Sequence[str], window: int) -> np.ndarray:
    """``(n, channels, window)``: the last ``window`` weeks of each product's POP."""
    out = []
    for pid in ids:
        m = load_signal(signals_dir / f"{pid}.csv").matrix()
        if m.shape[1] < window:
            raise ValidationError(f"POP for {pid!r} has {m.shape[1]} weeks, window needs {window}")
        out.append(m[:, -window:])
    return np.array(out)


def forecast_sales(sales_path: str | Path, out_path: str | Path, signals_dir: str | Path | None = None,
                   window: int = 52, horizon: int = 6, lam: float = 1.0, method: str | None = None) -> list[dict]:
    """Ridge forecasts for the test products, with or without POP windows."""
    ids, split, S, Y = load_sales(sales_path)
    train, test = split == "train", split == "test"
    if not train.any() or not test.any():
        raise ValidationError("sales table needs both train and test products")
    exo = None
    if signals_dir is not None:
        exo = exogenous_windows(Path(signals_dir), ids, window)
    name = method or ("exo_ridge" if exo is None else "exo_ridge+pop")
    res = exo_ridge_forecast(None if S is None else S[train], None if exo is None else exo[train],
                             Y[train], None if S is None else S[test],
                             None if exo is None else exo[test], horizon, lam)
    preds = np.atleast_2d(res.values)
    rows = []
    test_ids = [i for i, t in zip(ids, test) if t]
    for pid, actual, pred in zip(test_ids, Y[test][:, :horizon], preds):
        for step, (a, f) in enumerate(zip(actual, pred)):
            rows.append({"series_id": pid, "method": name, "step": step, "actual": fmt(a), "forecast": fmt(f)})
    _write_csv(Path(out_path), FORECAST_FIELDS, rows)
    return rows


def load_batch_manifest(path: str | Path) -> dict:
    p = _require(Path(path), "batch manifest")
    doc = json.loads(p.read_text())
    for key in ("series", "methods"):
        if key not in doc:
            raise ValidationError(f"{p}: batch manifest needs {key!r}")
    unknown = set(doc["methods"]) - set(FORECASTERS)
    if unknown:
        raise ValidationError(f"{p}: unknown methods {sorted(unknown)}")
    base = p.parent
    for s in doc["series"]:
        s["path"] = str((base / s["path"]).resolve()) if not Path(s["path"]).is_absolute() else s["path"]
    return doc


def forecast_batch(manifest: dict, out_path: str | Path, seed: int = 0) -> list[dict]:
    """Hold out the last ``horizon`` points of each series and forecast them."""
    horizon = int(manifest.get("horizon", 1))
    normalize = bool(manifest.get("normalize", True))
    rows = []
    for entry in manifest["series"]:
        s = load_series(entry["path"], entry.get("granularity", "weekly"))
        if normalize:
            s = min_max_normalize(s)
        y = s.to_numpy()
        if len(y) <= horizon:
            raise ValidationError(f"series {entry['id']!r} is too short for horizon {horizon}")
        hist, actual = y[:-horizon], y[-horizon:]
        for method in manifest["methods"]:
            kw = {"seed": seed} if method == "arima" else {}
            if method == "ar" and len(hist) < 10:
                kw["p"] = 1
            res = FORECASTERS[method](ForecastRequest(hist, horizon), **kw)
            for step, (a, f) in enumerate(zip(actual, res.values)):
                rows.append({"series_id": entry["id"], "method": method, "step": step,
                             "actual": fmt(a), "forecast": fmt(f)})
    _write_csv(Path(out_path), FORECAST_FIELDS, rows)
    return rows


def evaluate_forecasts(paths: Sequence[str | Path], out_path: str | Path,
                       epsilon: float = ERP_EPSILON) -> list[dict]:
    """Per-series metrics plus one pooled row per method (``series_id=ALL``).

    The pooled WAPE is total absolute error over total ground truth across all
    series; pooled MAE/MAPE/ERP are means of the per-series values.
    """
    grouped = defaultdict(lambda: ([], []))
    order = []
    for path in paths:
        for r in _read_csv(_require(Path(path), "forecast table")):
            key = (r["method"], r["series_id"])
            if key not in grouped:
                order.append(key)
            grouped[key][0].append(float(r["actual"]))
            grouped[key][1].append(float(r["forecast"]))
    rows, per_method = [], defaultdict(list)
    for method, sid in order:
        gt, pred = (np.array(v) for v in grouped[(method, sid)])
        rep = evaluate_pair(gt, pred, epsilon)
        per_method[method].append((gt, pred, rep))
        rows.append({"series_id": sid, "method": method, **rep.as_row()})
    for method, items in per_method.items():
        gt = np.concatenate([g for g, _, _ in items])
        pred = np.concatenate([p for _, p, _ in items])

        def mean_of(attr):
            vals = [getattr(r, attr) for _, _, r in items if getattr(r, attr) is not None]
            return fmt(np.mean(vals)) if vals else ""

        pooled = fmt(wape(gt, pred)) if gt.sum() > 0 else ""
        rows.append({"series_id": POOLED, "method": method, "wape": pooled,
                     "mae": mean_of("mae"), "mape": mean_of("mape"), "erp": mean_of("erp")})
    _write_csv(Path(out_path), METRIC_FIELDS, rows)
    return rows


def pooled_wape(metric_rows: Sequence[dict], method: str) -> float:
    for r in metric_rows:
        if r["series_id"] == POOLED and r["method"] == method:
            return float(r["wape"])
    raise MissingDataError(f"no pooled row for method {method!r}")
