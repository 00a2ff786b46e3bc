"""Seeded synthetic world for end-to-end checks of the whole pipeline.

Each tag group (colour + category) has a latent fashion trend ``tau(w)``: a
vector that drifts week by week as the sum of a slow and a fast
Ornstein-Uhlenbeck process; ``nu`` and ``eta`` are independent processes of
the same kind that carry no information about sales. Web images are generated per query window:

* fashionable hit:   ``+A e0 + tau(u) + noise``
* unfashionable hit: ``-A e0 + nu(u) + noise``
* neutral hit (no expansion): a generic catalogue image ``eta(u) + noise``,
  or with probability ``neutral_fashion_share`` a fashionable hit

where ``u`` is a week drawn from the query window. Positive (negative) query
results are contaminated with unfashionable (fashionable) images at the
configured label-noise rate. A product's sales level rises with the alignment
between its embedding and the trend averaged over the year before launch,
so a faithful POP series carries real information about sales.

``run_harness`` writes the world to disk, runs mine/clean/signal/forecast/
evaluate through :mod:`popsignal.pipeline`, and reports pooled WAPE for the
ridge forecaster without exogenous input and with each POP variant.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import pipeline as pl
from . import signal as sig
from .core import Probe
from .embeddings import EmbeddingStore, load as load_embeddings, save as save_embeddings
from .gateway import GatewayConfig, write_fixture
from .query import (MISALIGNED_PAST, NEUTRAL, NO_EXPANSION, POSITIVE, STANDARD,
                    ExpansionConfig, canonical_key, expand)

COLORS = ("yellow", "black", "red", "white", "blue", "green", "pink", "grey")
CATEGORIES = ("long sleeve", "maxi dress", "culottes", "sweater", "kimono dress", "trousers")

VARIANT_RUNS = {
    "pop": (STANDARD, sig.POP),
    "misaligned_past": (MISALIGNED_PAST, sig.POP),
    "no_expansion": (NO_EXPANSION, sig.NO_EXPANSION),
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    dim: int = 16
    groups: int = 12
    products_per_group: int = 10
    test_per_group: int = 3
    k_past: int = 52
    window_w: int = 4
    m_per_query: int = 5
    label_noise: float = 0.1
    fashion_offset: float = 3.0
    trend_scale: float = 1.5
    image_sigma: float = 1.0
    slow_weeks: float = 80.0
    fast_weeks: float = 4.0
    slow_share: float = 0.6
    neutral_fashion_share: float = 0.2
    sales_weeks: int = 12
    horizon: int = 6
    base_level: float = 10.0
    pop_effect: float = 20.0
    static_effect: float = 2.0
    sales_noise: float = 1.0
    ridge_lambda: float = 1000.0
    exo_window: int = 52
    folds: int = 5
    train_kw: dict = field(default_factory=dict)


def _ou(rng, n_weeks: int, dims: int, corr_weeks: float) -> np.ndarray:
    rho = np.exp(-1.0 / corr_weeks)
    out = np.empty((n_weeks, dims))
    out[0] = rng.standard_normal(dims)
    innov = np.sqrt(1 - rho ** 2)
    for i in range(1, n_weeks):
        out[i] = rho * out[i - 1] + innov * rng.standard_normal(dims)
    return out


class World:
    """Latent trends, products and sales for one seed."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.dim
        self.first_week = {}
        self.trends = {}
        self.unfashionable = {}
        self.generic = {}
        self.probes: list[Probe] = []
        self.probe_vectors = {}
        self.sales_rows = []
        span = 2 * cfg.k_past + cfg.window_w + 2
        n_static = 2
        static_w = rng.standard_normal(n_static)
        for g in range(cfg.groups):
            tags = (COLORS[g % len(COLORS)], CATEGORIES[(g // len(COLORS) + g) % len(CATEGORIES)])
            t = 600 + 13 * g
            self.first_week[g] = t - span
            self.trends[g] = self._drift(rng, span)
            self.unfashionable[g] = self._drift(rng, span)
            self.generic[g] = self._drift(rng, span)
            past_year = self.trend_at(g, np.arange(t - cfg.k_past, t)).mean(axis=0)
            group_effect = rng.standard_normal()
            for i in range(cfg.products_per_group):
                pid = f"p{g}_{i:02d}"
                z = np.concatenate([[0.0], rng.standard_normal(d - 1)])
                self.probe_vectors[pid] = z
                self.probes.append(Probe(pid, tags, t))
                align = float(z @ past_year / np.linalg.norm(z))
                static = rng.standard_normal(n_static)
                level = (cfg.base_level + cfg.pop_effect * align + cfg.static_effect * static @ static_w
                         + group_effect)
                shape = np.exp(-np.arange(cfg.sales_weeks) / 6.0)
                sales = np.maximum(0.0, shape * (level + cfg.sales_noise * rng.standard_normal(cfg.sales_weeks)))
                split = "test" if i >= cfg.products_per_group - cfg.test_per_group else "train"
                onehot = np.eye(cfg.groups)[g]
                self.sales_rows.append((pid, split, np.concatenate([static, onehot]), sales, align))
        self._rng = rng

    def _drift(self, rng, span: int) -> np.ndarray:
        cfg = self.cfg
        slow = _ou(rng, span, cfg.dim - 1, cfg.slow_weeks)
        fast = _ou(rng, span, cfg.dim - 1, cfg.fast_weeks)
        proc = np.sqrt(cfg.slow_share) * slow + np.sqrt(1 - cfg.slow_share) * fast
        proc *= cfg.trend_scale / np.sqrt(cfg.dim - 1)
        return np.hstack([np.zeros((span, 1)), proc])

    def _at(self, table: dict, g: int, weeks) -> np.ndarray:
        idx = np.asarray(weeks) - self.first_week[g]
        if np.any(idx < 0) or np.any(idx >= len(table[g])):
            raise ValueError(f"week outside the simulated span of group {g}")
        return table[g][idx]

    def trend_at(self, g: int, weeks) -> np.ndarray:
        return self._at(self.trends, g, weeks)

    def images_for(self, g: int, polarity: str, interval, n: int, rng) -> np.ndarray:
        """``n`` hits for one query window; rows are embeddings."""
        cfg = self.cfg
        weeks = rng.integers(interval.start, interval.end + 1, size=n)
        e0 = np.zeros(cfg.dim)
        e0[0] = cfg.fashion_offset
        fashionable = e0 + self.trend_at(g, weeks)
        unfashionable = -e0 + self._at(self.unfashionable, g, weeks)
        u = rng.random(n)
        if polarity == NEUTRAL:
            generic = self._at(self.generic, g, weeks)
            pick = u < cfg.neutral_fashion_share
            X = np.where(pick[:, None], fashionable, generic)
        else:
            flipped = u < cfg.label_noise
            want_pos = (polarity == POSITIVE) != flipped
            X = np.where(want_pos[:, None], fashionable, unfashionable)
        return X + cfg.image_sigma * rng.standard_normal((n, cfg.dim))


def write_world(world: World, root: str | Path) -> dict:
    """Write probes, fixtures, embeddings and sales; returns the input paths."""
    cfg = world.cfg
    root = Path(root)
    fixtures = root / "fixtures"
    rng = np.random.default_rng([cfg.seed, 1])
    ids, vecs = [], []
    groups = {}
    for p in world.probes:
        groups.setdefault(int(p.image_id[1:].split("_")[0]), p)
    for mode in (STANDARD, MISALIGNED_PAST, NO_EXPANSION):
        exp_cfg = ExpansionConfig(k_past=cfg.k_past, window_w=cfg.window_w, mode=mode)
        for g, probe in sorted(groups.items()):
            for q in expand(probe, exp_cfg):
                key = canonical_key(q)
                X = world.images_for(g, q.polarity, q.interval, cfg.m_per_query, rng)
                stem = hashlib.sha1(key.encode()).hexdigest()[:10]
                entries = []
                for r, x in enumerate(X, start=1):
                    iid = f"w{stem}r{r:02d}"
                    entries.append({"image_id": iid, "source_url": f"synthetic://{stem}/{r}"})
                    ids.append(iid)
                    vecs.append(x)
                write_fixture(fixtures, key, entries)
    for pid, z in world.probe_vectors.items():
        ids.append(pid)
        vecs.append(z)
    save_embeddings(EmbeddingStore(ids, np.array(vecs)), root / "embeddings.csv")

    probes = [{"image_id": p.image_id, "tags": list(p.tags), "observation_week": p.observation_week}
              for p in world.probes]
    (root / "probes.json").write_text(json.dumps(probes, indent=1) + "\n")

    n_static = len(world.sales_rows[0][2])
    header = ["product_id", "split"] + [f"s_{j}" for j in range(n_static)] + \
             [f"y{j}" for j in range(cfg.sales_weeks)]
    lines = [",".join(header)]
    for pid, split, static, sales, _ in world.sales_rows:
        lines.append(",".join([pid, split] + [pl.fmt(v) for v in static] + [pl.fmt(v) for v in sales]))
    (root / "sales.csv").write_text("\n".join(lines) + "\n")
    return {"fixtures": fixtures, "embeddings": root / "embeddings.csv",
            "probes": root / "probes.json", "sales": root / "sales.csv"}


def run_variant(paths: dict, out_dir: Path, cfg: SynthConfig, mode: str, variant: str,
                store: EmbeddingStore, keep_noisy: bool = False) -> Path:
    """mine -> clean -> signal for one mining mode; returns the signals directory."""
    probes = pl.load_probes(paths["probes"])
    exp_cfg = ExpansionConfig(k_past=cfg.k_past, window_w=cfg.window_w, mode=mode)
    gw = GatewayConfig(m_per_query=cfg.m_per_query, fixture_dir=paths["fixtures"],
                       cache_dir=out_dir / "cache")
    manifest = pl.mine(probes, exp_cfg, gw, out_dir)
    if manifest["failures"]:
        raise RuntimeError(f"synthetic fixtures incomplete: {list(manifest['failures'])[:3]}")
    if variant not in (sig.NO_LEARNING, sig.NO_EXPANSION):
        pl.clean_stage(out_dir, store, seed=cfg.seed, folds=cfg.folds, keep_noisy=keep_noisy,
                       **cfg.train_kw)
    pl.signal_stage(out_dir, store, variant)
    return out_dir / "signals"


def run_harness(cfg: SynthConfig, root: str | Path, variants=tuple(VARIANT_RUNS)) -> dict:
    """Run the full pipeline on a fresh synthetic world under ``root``.

    Returns a report with pooled WAPE per method and the relative improvement
    of each POP variant over the forecaster without exogenous input.
    """
    root = Path(root)
    world = World(cfg)
    paths = write_world(world, root / "inputs")
    store = load_embeddings(paths["embeddings"])

    forecast_files = []
    base = root / "forecast" / "no_exogenous.csv"
    pl.forecast_sales(paths["sales"], base, None, horizon=cfg.horizon, lam=cfg.ridge_lambda,
                      method="no_exogenous")
    forecast_files.append(base)
    for name in variants:
        mode, variant = VARIANT_RUNS[name]
        signals = run_variant(paths, root / "runs" / name, cfg, mode, variant, store)
        path = root / "forecast" / f"{name}.csv"
        pl.forecast_sales(paths["sales"], path, signals, window=cfg.exo_window,
                          horizon=cfg.horizon, lam=cfg.ridge_lambda, method=name)
        forecast_files.append(path)
    rows = pl.evaluate_forecasts(forecast_files, root / "metrics.csv")

    wapes = {"no_exogenous": pl.pooled_wape(rows, "no_exogenous")}
    for name in variants:
        wapes[name] = pl.pooled_wape(rows, name)
    report = {
        "seed": cfg.seed,
        "wape": wapes,
        "relative_improvement": {n: (wapes["no_exogenous"] - wapes[n]) / wapes["no_exogenous"]
                                 for n in variants},
        "config": {k: v for k, v in asdict(cfg).items() if k != "train_kw"},
    }
    (root / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
