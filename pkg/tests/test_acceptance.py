"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the summary lines are printed
at the end of the session) or directly with ``python3 tests/test_acceptance.py``.
"""
import hashlib
import math
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import blobs, brute_edit_distance, brute_force_joint, gradient_check
from popsignal.classifier import (LabeledDataset, clean, confident_joint, confident_report,
                                  init_head, self_confidence_thresholds)
from popsignal.cli import main as cli_main
from popsignal.forecasting import (ForecastRequest, arima_forecast, drift_forecast, fit_ar,
                                   last_forecast, ses_forecast)
from popsignal.metrics import erp_threshold, mae, mape, wape
from popsignal.signal import form_signal
from popsignal.styles import fit_nmf
from popsignal.synthetic import SynthConfig, run_harness

RESULTS = {}
HARNESS_SEEDS = range(5)


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def summary_lines():
    return [f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
            for n, (ok, detail) in sorted(RESULTS.items())]


def test_c01_confident_joint_oracle():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(2, 201))
        P = rng.random((n, 2))
        P /= P.sum(axis=1, keepdims=True)
        y = rng.integers(0, 2, n)
        y[rng.choice(n, 2, replace=False)] = [0, 1]
        t = self_confidence_thresholds(P, y)
        C, _ = confident_joint(P, y, t)
        bC, bpruned = brute_force_joint(P.tolist(), y.tolist(), t)
        ds = LabeledDataset([str(i) for i in range(n)], np.zeros((n, 1)), y, np.ones(n, int))
        pruned = set(confident_report(ds, P).pruned_index.tolist())
        mismatches += C.tolist() != bC or pruned != bpruned
    record(1, mismatches == 0, f"{200 - mismatches}/200 instances match the double-loop oracle")


def test_c02_worked_example():
    P = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.3, 0.7], [0.1, 0.9], [0.85, 0.15]])
    y = np.array([0, 0, 0, 1, 1, 1])
    t = self_confidence_thresholds(P, y)
    C, _ = confident_joint(P, y, t)
    ds = LabeledDataset([f"sample {i}" for i in range(1, 7)], np.zeros((6, 1)), y, np.ones(6, int))
    pruned = confident_report(ds, P).pruned_ids
    ok = (abs(t[0] - 0.63333333333) <= 1e-9 and abs(t[1] - 0.58333333333) <= 1e-9
          and C.tolist() == [[2, 1], [1, 2]] and pruned == ["sample 3", "sample 6"])
    record(2, ok, f"t=({t[0]:.5f}, {t[1]:.5f}) C={C.tolist()} pruned={pruned}")


def test_c03_noisy_label_recovery():
    details, ok = [], True
    for seed in range(5):
        X, y, flipped = blobs(seed, n_per_class=260, dim=16, sep=6.0, sigma=1.0, flip=0.1)
        ds = LabeledDataset([str(i) for i in range(len(y))], X, y, np.ones(len(y), int))
        out = clean(ds, seed=seed)
        pruned = np.zeros(len(y), dtype=bool)
        pruned[out.report.pruned_index] = True
        hit, false = pruned[flipped].mean(), pruned[~flipped].mean()
        ok &= hit >= 0.70 and false <= 0.05
        details.append(f"{100 * hit:.0f}%/{100 * false:.1f}%")
    record(3, ok, "flips pruned / clean pruned per seed: " + ", ".join(details))


def test_c04_signal_forming():
    probe = np.array([1.0, 0.0])
    at = lambda c: [c, math.sqrt(1 - c * c)]  # noqa: E731  unit vector at cosine c
    fixture = form_signal(probe, {1: np.array([[1.0, 0.0], [0.0, 1.0]]),
                                  3: np.array([at(0.2)]), 4: np.array([at(0.6), at(0.2)])}, 4, 100)
    hand = np.array([0.4, 0.2, 0.35, 0.5])
    err_hand = np.abs(fixture.main.to_numpy() - hand).max()
    rng = np.random.default_rng(7)
    err_scale, lengths_ok = 0.0, True
    for _ in range(200):
        k_past, dim = int(rng.integers(1, 80)), int(rng.integers(1, 12))
        steps = {k: rng.standard_normal((int(rng.integers(1, 6)), dim))
                 for k in range(1, k_past + 1) if k == 1 or rng.random() < 0.7}
        z = rng.standard_normal(dim)
        c = float(np.exp(rng.uniform(-5, 5)))
        a = form_signal(z, steps, k_past, 1000).main.to_numpy()
        b = form_signal(c * z, {k: c * v for k, v in steps.items()}, k_past, 1000).main.to_numpy()
        err_scale = max(err_scale, np.abs(a - b).max())
        lengths_ok &= len(a) == k_past
    ok = err_hand <= 1e-9 and err_scale <= 1e-12 and lengths_ok
    record(4, ok, f"hand fixture err {err_hand:.1e}, scale err {err_scale:.1e}, length==K_past {lengths_ok}")


def test_c05_gradient_check():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(10):
        model = init_head(6, 8, seed=i)
        for p in model.params():
            p += 0.1 * rng.standard_normal(p.shape)
        X, y = rng.standard_normal((20, 6)), rng.integers(0, 2, 20)
        worst = max(worst, gradient_check(model, X, y, l2=1e-3))
    record(5, worst < 1e-4, f"max relative error {worst:.2e} over 10 points")


def test_c06_metric_oracles():
    gt, pred = [10, 20, 30], [12, 18, 33]
    hand = [abs(wape(gt, pred) - 100 * 7 / 60), abs(mae(gt, pred) - 7 / 3),
            abs(mape([1, 2], [2, 1]) - 0.75), abs(wape(gt, [3 * v for v in gt]) - 200),
            abs(mape(gt, [2 * v for v in gt]) - 1.0)]
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(500):
        a = rng.random(int(rng.integers(1, 9))) + 0.01
        m = int(rng.integers(1, 9))
        # half the points sit near a value of a, so matches within epsilon are common
        near = rng.choice(a, m) + rng.normal(0, 0.02, m)
        b = np.where(rng.random(m) < 0.5, near, rng.random(m))
        top = a.max()
        expected = brute_edit_distance(tuple(a / top), tuple(b / top), 0.03) / max(len(a), len(b))
        mismatches += erp_threshold(a, b) != expected
    ok = max(hand) <= 1e-7 and mismatches == 0
    record(6, ok, f"hand examples max err {max(hand):.1e}; edit distance {500 - mismatches}/500 match")


def test_c07_forecaster_recovery():
    checks = {}
    phis = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        y = np.zeros(600)
        e = 0.1 * rng.standard_normal(600)
        for t in range(1, 600):
            y[t] = 0.8 * y[t - 1] + e[t]
        phis.append(fit_ar(y[100:], 1)[1][0])
    checks["ar1"] = all(abs(p - 0.8) <= 0.05 for p in phis)
    rng = np.random.default_rng(1)
    hist = rng.random(30) * 10
    req = ForecastRequest(hist, 5)
    checks["ses=last"] = np.array_equal(ses_forecast(req, alpha=1.0).values, last_forecast(req).values)
    checks["drift"] = (drift_forecast(ForecastRequest([2, 4, 6], 2)).values.tolist() == [8, 10]
                       and drift_forecast(ForecastRequest([0, 1], 3)).values.tolist() == [2, 3, 4])
    checks["arima010=last"] = np.array_equal(arima_forecast(req, order=(0, 1, 0)).values,
                                             last_forecast(req).values)
    nmf = fit_nmf(np.array([[2.0, 4.0], [1.0, 2.0]]), 1, seed=0)
    h = np.array(nmf.objective_history)
    checks["nmf"] = nmf.reconstruction_error < 1e-6 and bool(np.all(h[1:] <= h[:-1] + 1e-10 * h[0]))
    detail = ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items())
    record(7, all(checks.values()), detail + f" (phi: {', '.join(f'{p:.3f}' for p in phis)})")


@pytest.fixture(scope="module")
def harness_reports(tmp_path_factory):
    root = tmp_path_factory.mktemp("harness")
    return [run_harness(SynthConfig(seed=s), root / f"seed{s}") for s in HARNESS_SEEDS]


def test_c08_pop_improves_forecasts(harness_reports):
    gains = [r["relative_improvement"]["pop"] for r in harness_reports]
    wins = sum(g >= 0.05 for g in gains)
    record(8, wins >= 4, f"POP gain over no-exogenous per seed: "
           + ", ".join(f"{100 * g:.1f}%" for g in gains) + f" ({wins}/5 >= 5%)")


def test_c09_ablation_ordering(harness_reports):
    def leq(a, b):
        return a <= b * 1.01

    wins, parts = 0, []
    for r in harness_reports:
        w = r["wape"]
        ok = leq(w["pop"], w["misaligned_past"]) and leq(w["misaligned_past"], w["no_expansion"])
        wins += ok
        parts.append(f"{w['pop']:.1f}/{w['misaligned_past']:.1f}/{w['no_expansion']:.1f}")
    record(9, wins >= 4, "WAPE pop/misaligned/no-expansion: " + ", ".join(parts) + f" ({wins}/5 ordered)")


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism(tmp_path):
    argv = ["synthetic", "--seed", "3", "--set", "groups=3", "--set", "products_per_group=5",
            "--set", "test_per_group=2", "--set", "k_past=20", "--set", "exo_window=20"]
    codes = [cli_main(argv + ["--out-dir", str(tmp_path / run)]) for run in ("a", "b")]
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    ok = codes == [0, 0] and a == b and len(a) > 0
    diff = sorted(set(a.items()) ^ set(b.items()))
    record(10, ok, f"{len(a)} files compared, {len(diff)} differ")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q"])
    sys.exit(code)
