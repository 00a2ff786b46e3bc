import json
import shutil

import numpy as np
import pytest

from popsignal import pipeline as pl
from popsignal import signal as sig
from popsignal.core import MissingDataError, Series, ValidationError, save_series
from popsignal.embeddings import load as load_embeddings
from popsignal.gateway import GatewayConfig
from popsignal.query import MISALIGNED_PAST, NO_EXPANSION, ExpansionConfig


def mined(tiny_world, out, mode="standard"):
    cfg, paths = tiny_world
    exp = ExpansionConfig(k_past=cfg.k_past, window_w=cfg.window_w, mode=mode)
    gw = GatewayConfig(m_per_query=cfg.m_per_query, fixture_dir=paths["fixtures"],
                       cache_dir=out / "cache")
    return pl.mine(pl.load_probes(paths["probes"]), exp, gw, out)


@pytest.fixture(scope="module")
def cleaned(tiny_world, tmp_path_factory):
    cfg, paths = tiny_world
    out = tmp_path_factory.mktemp("run")
    mined(tiny_world, out)
    store = load_embeddings(paths["embeddings"])
    reports = pl.clean_stage(out, store, seed=0, epochs=20)
    return out, store, reports


def test_manifest_counts(tiny_world, tmp_path):
    cfg, _ = tiny_world
    m = mined(tiny_world, tmp_path)
    n_probes = cfg.groups * cfg.products_per_group
    assert m["n_queries"] == n_probes * 2 * cfg.k_past
    assert m["n_records"] == m["n_queries"] * cfg.m_per_query
    assert not m["failures"]
    assert pl.read_manifest(tmp_path) == m
    q = m["probes"][0]["queries"][0]
    assert q["step_k"] == 1 and q["records"] == cfg.m_per_query
    assert len(pl.read_records(tmp_path)) == n_probes


def test_probe_manifest_errors(tmp_path):
    p = tmp_path / "probes.json"
    p.write_text("{}")
    with pytest.raises(ValidationError):
        pl.load_probes(p)
    p.write_text('[{"image_id": "a", "tags": ["red"]}]')
    with pytest.raises(ValidationError, match="observation_week"):
        pl.load_probes(p)
    entry = {"image_id": "a", "tags": ["red"], "observation_week": 3}
    p.write_text(json.dumps([entry]))
    assert pl.load_probes(p)[0].image_id == "a"
    p.write_text(json.dumps([entry, entry]))
    with pytest.raises(ValidationError, match="duplicate"):
        pl.load_probes(p)
    with pytest.raises(MissingDataError):
        pl.load_probes(tmp_path / "nope.json")


def test_clean_outputs(cleaned):
    out, store, reports = cleaned
    index = json.loads((out / "clean" / "index.json").read_text())
    assert set(index.values()) == set(reports)
    # probes of one tag group share a cleaning run
    assert len(reports) == 2
    for g, rep in reports.items():
        doc = json.loads((out / "clean" / g / "report.json").read_text())
        assert doc["confident_joint"] == rep.joint.tolist()
        assert doc["n_samples"] - doc["n_kept"] == len(rep.pruned_ids)
        kept = {r["image_id"] for r in pl._read_csv(out / "clean" / g / "cleaned.csv")}
        assert not kept & set(rep.pruned_ids)


def test_clean_is_deterministic(cleaned, tiny_world, tmp_path):
    out, store, _ = cleaned
    other = tmp_path / "again"
    mined(tiny_world, other)
    pl.clean_stage(other, store, seed=0, epochs=20)
    for g in json.loads((out / "clean" / "index.json").read_text()).values():
        for name in ("report.json", "cleaned.csv", "model.json"):
            assert (out / "clean" / g / name).read_bytes() == (other / "clean" / g / name).read_bytes()


def test_keep_noisy(tiny_world, tmp_path):
    _, paths = tiny_world
    mined(tiny_world, tmp_path)
    reports = pl.clean_stage(tmp_path, load_embeddings(paths["embeddings"]), seed=0,
                             keep_noisy=True, epochs=5)
    assert all(r.pruned_ids == [] for r in reports.values())


def test_signal_coverage_matches_cleaned_counts(cleaned, tiny_world):
    out, store, _ = cleaned
    cfg, _ = tiny_world
    results = pl.signal_stage(out, store, sig.POP)
    index = json.loads((out / "clean" / "index.json").read_text())
    for pid, pop in results.items():
        assert len(pop.main) == cfg.k_past
        doc = json.loads((out / "clean" / index[pid] / "report.json").read_text())
        expected = [doc["step_counts"][str(k)]["positive"] for k in range(cfg.k_past, 0, -1)]
        assert [c[0] for c in pop.coverage] == expected
        back = pl.load_signal(out / "signals" / f"{pid}.csv")
        np.testing.assert_allclose(back.main.to_numpy(), pop.main.to_numpy(), atol=1e-8)


@pytest.mark.parametrize("variant, channels", [(sig.NEGATIVE, 1), (sig.POS_NEG, 2),
                                               (sig.NO_LEARNING, 1)])
def test_other_variants(cleaned, variant, channels):
    out, store, _ = cleaned
    res = pl.signal_stage(out, store, variant)
    pop = next(iter(res.values()))
    assert pop.variant == variant and pop.matrix().shape[0] == channels


def test_variant_must_match_mode(cleaned, tiny_world, tmp_path):
    out, store, _ = cleaned
    with pytest.raises(ValidationError):
        pl.signal_stage(out, store, sig.NO_EXPANSION)
    mined(tiny_world, tmp_path, NO_EXPANSION)
    with pytest.raises(ValidationError):
        pl.clean_stage(tmp_path, store, seed=0)
    res = pl.signal_stage(tmp_path, store, sig.NO_EXPANSION)
    assert all(p.variant == sig.NO_EXPANSION for p in res.values())


def test_misaligned_run(tiny_world, tmp_path):
    cfg, paths = tiny_world
    m = mined(tiny_world, tmp_path, MISALIGNED_PAST)
    q = m["probes"][0]["queries"][0]
    t = m["probes"][0]["observation_week"]
    assert q["interval"] == [t - 1 - cfg.window_w - cfg.k_past, t - 1 - cfg.k_past]


def test_missing_intermediate_fails_loudly(cleaned, tmp_path):
    out, store, _ = cleaned
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    g = next(p for p in (copy / "clean").iterdir() if p.is_dir())
    (g / "model.json").unlink()
    with pytest.raises(MissingDataError):
        pl.signal_stage(copy, store, sig.POP)
    (copy / "records.csv").unlink()
    with pytest.raises(MissingDataError):
        pl.clean_stage(copy, store, seed=0)


def test_forecast_and_evaluate(cleaned, tiny_world, tmp_path):
    out, store, _ = cleaned
    cfg, paths = tiny_world
    pl.signal_stage(out, store, sig.POP)
    base = pl.forecast_sales(paths["sales"], tmp_path / "f" / "base.csv", None, horizon=cfg.horizon,
                             lam=10.0, method="base")
    pop = pl.forecast_sales(paths["sales"], tmp_path / "f" / "pop.csv", out / "signals",
                            window=cfg.exo_window, horizon=cfg.horizon, lam=10.0, method="pop")
    n_test = cfg.groups * cfg.test_per_group
    assert len(base) == len(pop) == n_test * cfg.horizon
    rows = pl.evaluate_forecasts([tmp_path / "f" / "base.csv", tmp_path / "f" / "pop.csv"],
                                 tmp_path / "metrics.csv")
    assert [r["series_id"] for r in rows].count(pl.POOLED) == 2
    assert pl.pooled_wape(rows, "pop") > 0
    with pytest.raises(MissingDataError):
        pl.pooled_wape(rows, "other")
    with pytest.raises(ValidationError):
        pl.forecast_sales(paths["sales"], tmp_path / "x.csv", out / "signals", window=cfg.k_past + 1)


def test_forecast_batch(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        save_series(Series(0, rng.random(4)), tmp_path / f"s{i}.csv")
    manifest = {"series": [{"id": f"s{i}", "path": f"s{i}.csv", "granularity": "yearly"}
                           for i in range(3)],
                "methods": ["mean", "last", "drift", "ses", "ar", "arima"], "horizon": 1}
    (tmp_path / "batch.json").write_text(json.dumps(manifest))
    doc = pl.load_batch_manifest(tmp_path / "batch.json")
    rows = pl.forecast_batch(doc, tmp_path / "fc.csv")
    assert len(rows) == 3 * 6
    # normalised history: the held-out value lies in [0, 1]
    assert all(0 <= float(r["actual"]) <= 1 for r in rows)
    metrics = pl.evaluate_forecasts([tmp_path / "fc.csv"], tmp_path / "m.csv")
    assert {r["method"] for r in metrics if r["series_id"] == pl.POOLED} == set(manifest["methods"])
    manifest["methods"] = ["prophet"]
    (tmp_path / "bad.json").write_text(json.dumps(manifest))
    with pytest.raises(ValidationError):
        pl.load_batch_manifest(tmp_path / "bad.json")
