import sys

import numpy as np
import pytest

from popsignal.core import Probe
from popsignal.gateway import write_fixture
from popsignal.query import ExpansionConfig, canonical_key, expand


@pytest.fixture
def probe():
    return Probe("probe-1", ["Yellow", "long sleeve"], 100)


def write_probe_fixtures(fixture_dir, probe, cfg=None, n=25, skip=()):
    """Fixture files for every query of ``probe``; keys in ``skip`` are left out."""
    cfg = cfg or ExpansionConfig()
    keys = []
    for q in expand(probe, cfg):
        key = canonical_key(q)
        keys.append(key)
        if key in skip:
            continue
        entries = [{"image_id": f"{key}/{r}", "source_url": f"http://img/{r}"} for r in range(n)]
        write_fixture(fixture_dir, key, entries)
    return keys


def blobs(seed, n_per_class=260, dim=16, sep=6.0, sigma=1.0, flip=0.1):
    """Two Gaussian blobs with a known set of flipped labels."""
    rng = np.random.default_rng(seed)
    centre = np.zeros(dim)
    centre[0] = sep / 2
    X = np.vstack([centre + sigma * rng.standard_normal((n_per_class, dim)),
                   -centre + sigma * rng.standard_normal((n_per_class, dim))])
    truth = np.repeat([0, 1], n_per_class)
    flipped = np.zeros(len(truth), dtype=bool)
    flipped[rng.choice(len(truth), int(round(flip * len(truth))), replace=False)] = True
    noisy = np.where(flipped, 1 - truth, truth)
    return X, noisy, flipped


def gradient_check(model, X, y, l2, h=1e-6):
    """Largest relative error between analytic and central-difference gradients.

    The error of each parameter array is ``|g_a - g_n| / max(|g_a|, |g_n|)``
    in the Euclidean norm; the maximum over the four arrays is returned.
    """
    from popsignal.classifier import loss_and_grad

    _, analytic = loss_and_grad(model, X, y, l2)
    worst = 0.0
    for p, g in zip(model.params(), analytic):
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up, _ = loss_and_grad(model, X, y, l2)
            p[idx] = old - h
            down, _ = loss_and_grad(model, X, y, l2)
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(g), np.linalg.norm(num), 1e-12)
        worst = max(worst, np.linalg.norm(g - num) / scale)
    return worst


def brute_force_joint(P, labels, thresholds):
    """Double loop over samples and cells, written independently of the library."""
    C = [[0, 0], [0, 0]]
    pruned = set()
    for i in range(len(labels)):
        for l in (0, 1):
            if P[i][l] >= thresholds[l]:
                C[labels[i]][l] += 1
                if l != labels[i]:
                    pruned.add(i)
    return C, pruned


def brute_thresholds(P, labels):
    out = []
    for c in (0, 1):
        vals = [P[i][c] for i in range(len(labels)) if labels[i] == c]
        out.append(sum(vals) / len(vals))
    return out


def brute_edit_distance(a, b, eps):
    """Plain recursion over (i, j), no table: the oracle for the DP kernels."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        match = 0 if abs(a[i - 1] - b[j - 1]) <= eps else 1
        return min(d(i - 1, j - 1) + match, d(i - 1, j) + 1, d(i, j - 1) + 1)

    return d(len(a), len(b))


TINY = dict(groups=2, products_per_group=4, test_per_group=1, k_past=12, m_per_query=5,
            exo_window=12)


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """Inputs of a small synthetic world: fixtures, embeddings, probes, sales."""
    from popsignal.synthetic import SynthConfig, World, write_world

    cfg = SynthConfig(seed=2, **TINY)
    root = tmp_path_factory.mktemp("tiny")
    paths = write_world(World(cfg), root)
    return cfg, paths


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
