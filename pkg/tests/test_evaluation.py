import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpgwas.evaluation import (RecoveryConfig, kl_divergence_empirical, kl_grid, ks_closed_form,
                               ks_statistic, recovery_frequency, roc_curve, roc_study,
                               rows_to_csv, spearman_rho)


def test_kl_identical_samples():
    x = np.random.default_rng(0).normal(size=1000)
    assert kl_divergence_empirical(x, x) == 0.0


def test_kl_gaussians():
    g = np.random.default_rng(1)
    kl = kl_divergence_empirical(g.normal(0, 1, 1_000_000), g.normal(1, 1, 1_000_000))
    assert kl == pytest.approx(0.5, rel=0.1)


def test_kl_validation():
    with pytest.raises(ValueError):
        kl_divergence_empirical([], [1.0])
    with pytest.raises(ValueError):
        kl_divergence_empirical([1.0], [np.inf])
    assert 0.0 <= kl_divergence_empirical([2.0, 2.0], [2.0]) < 0.01


def test_kl_trends_for_table_a():
    rows = kl_grid(["a"], [0.1, 0.4], [200, 2000], n_tables=5000, seed=2)
    kl = {(r["N"], r["epsilon"]): r["kl"] for r in rows}
    assert kl[(200, 0.1)] > kl[(2000, 0.1)]
    assert kl[(200, 0.1)] > kl[(200, 0.4)]
    assert kl[(2000, 0.1)] > kl[(2000, 0.4)]


def test_kl_grid_independent_of_jobs():
    a = kl_grid(["b"], [0.2], [200, 400], n_tables=500, seed=3, jobs=1)
    b = kl_grid(["b"], [0.2], [200, 400], n_tables=500, seed=3, jobs=2)
    assert rows_to_csv(a) == rows_to_csv(b)


def test_roc_separated_and_random():
    assert roc_curve([1, 1, 0, 0], [0.1, 0.2, 0.3, 0.4]).auc == 1.0
    assert roc_curve([1, 1, 0, 0], [0.1, 0.2, 0.3, 0.4], positive_when="high").auc == 0.0
    g = np.random.default_rng(4)
    assert roc_curve(g.integers(0, 2, 20_000), g.random(20_000)).auc == pytest.approx(0.5, abs=0.02)


def test_roc_matches_mann_whitney():
    g = np.random.default_rng(5)
    labels = g.integers(0, 2, 500)
    scores = np.round(g.normal(labels * 0.5, 1.0), 1)  # with ties
    u = stats.mannwhitneyu(scores[labels == 1], scores[labels == 0]).statistic
    auc_high = u / ((labels == 1).sum() * (labels == 0).sum())
    assert roc_curve(labels, scores, positive_when="high").auc == pytest.approx(auc_high)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 20)), min_size=2, max_size=60))
def test_roc_properties(pairs):
    labels = np.array([p[0] for p in pairs])
    scores = np.array([p[1] for p in pairs], dtype=float)
    if labels.min() == labels.max():
        with pytest.raises(ValueError):
            roc_curve(labels, scores)
        return
    c = roc_curve(labels, scores)
    assert (np.diff(c.fpr) >= 0).all() and (np.diff(c.tpr) >= 0).all()
    assert (c.fpr[0], c.tpr[0], c.fpr[-1], c.tpr[-1]) == (0, 0, 1, 1)
    assert 0.0 <= c.auc <= 1.0
    assert roc_curve(labels, -scores).auc == pytest.approx(1.0 - c.auc)


def test_roc_study_corner_segments():
    c = roc_study(0.1, seed=0)
    assert 0.5 <= c.auc <= 0.65
    assert c.thresholds[1] == 0.0 and c.fpr[1] > 0.3
    assert c.thresholds[-1] == 1.0 and 1.0 - c.fpr[-2] > 0.3
    assert c.to_csv().splitlines()[0] == "threshold,fpr,tpr"


def test_ks_statistic():
    assert ks_statistic(np.zeros(50), stats.norm.cdf) >= 0.5
    x = np.random.default_rng(6).normal(size=1_000_000)
    assert ks_statistic(x, stats.norm.cdf) < 0.002
    assert ks_statistic(x[:500], stats.norm.cdf) == pytest.approx(
        stats.kstest(x[:500], "norm").statistic)
    with pytest.raises(ValueError):
        ks_statistic([], stats.norm.cdf)


def test_ks_closed_form_rows():
    rows = ks_closed_form([0.2], 100_000, seed=1)
    assert rows[0]["ks"] < 0.01 and rows[0]["n"] == 100_000


def test_recovery_noiseless_limit():
    rows = recovery_frequency(RecoveryConfig(("a", "a"), 200), 3, [1e9], [1000], 20, seed=0)
    assert rows[0]["freq_all"] == 1.0 and rows[0]["freq_any"] == 1.0


def test_recovery_nondecreasing_in_epsilon():
    rows = recovery_frequency(RecoveryConfig(("c", "c"), 500), 3, [0.5, 1.0, 2.0, 4.0],
                              [4000], 1000, seed=5)
    freq = [r["freq_all"] for r in rows]
    se = 0.5 / np.sqrt(1000)
    assert all(b >= a - 3 * se for a, b in zip(freq, freq[1:]))
    assert freq[-1] > freq[0]


def test_weaker_signal_needs_more_individuals():
    Ns = [2000, 4000, 8000, 16000]

    def first_n(causal):
        rows = recovery_frequency(RecoveryConfig(causal, 500), 3, [1.0], Ns, 100, seed=6)
        ok = [r["N"] for r in rows if r["freq_all"] >= 0.5]
        return min(ok) if ok else np.inf

    assert first_n(("d", "d")) > first_n(("c", "c"))


def test_recovery_independent_of_jobs():
    cfg = RecoveryConfig(("b",), 100)
    a = recovery_frequency(cfg, 2, [0.5, 1.0], [500], 30, seed=1, jobs=1)
    b = recovery_frequency(cfg, 2, [0.5, 1.0], [500], 30, seed=1, jobs=2)
    assert a == b


def test_csv_and_spearman():
    assert rows_to_csv([]) == ""
    assert rows_to_csv([{"a": 1, "b": 0.5}]) == "a,b\n1,0.5\n"
    assert spearman_rho([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
