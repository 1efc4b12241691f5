import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpgwas import rng
from dpgwas.core_stats import (BalanceError, ContingencyTable3x2, GwasDataset, MarginError,
                               chi2_statistic, maf_vector, pvalue_df2)
from dpgwas.dp_mechanisms import (PrivacyBudget, ProjectionParam,
                                  ReleaseReport, adjacent_tables, dataset_statistics,
                                  laplace_from_uniform, laplace_noise, laplace_noise_at,
                                  laplace_sample, projected_table_chi2, rank_by_relevance,
                                  release_chi2_single, release_counts, release_maf,
                                  release_pvalue_single, release_top_m, release_top_m_dataset,
                                  select_top_m, sensitivity_chi2, sensitivity_counts,
                                  sensitivity_maf, sensitivity_pvalue,
                                  sensitivity_pvalue_projected)
from dpgwas.simgen import builtin_frequency_tables, synth_gwas

import oracles

HUGE_EPS = PrivacyBudget(1e12)


def test_laplace_inverse_cdf_values():
    assert laplace_from_uniform(0.5, 1.0) == 0.0
    assert laplace_from_uniform(0.75, 1.0) == pytest.approx(math.log(2.0))
    assert laplace_from_uniform(0.25, 1.0) == pytest.approx(-math.log(2.0))


def test_laplace_noise_centered():
    x = laplace_noise(4.0, 123, 9, 0, 1_000_000)
    assert abs(x.mean()) < 0.02
    assert np.mean(np.abs(x)) == pytest.approx(4.0, rel=0.01)


def test_laplace_sample_and_validation():
    gen = rng.generator(0)
    assert math.isfinite(laplace_sample(2.0, gen))
    with pytest.raises(ValueError):
        laplace_sample(0.0, gen)
    with pytest.raises(ValueError):
        laplace_noise(-1.0, 0, 1)


def test_noise_positions_are_subset_independent():
    full = laplace_noise(1.0, 7, 6, 0, 200)
    pos = np.array([150, 3, 77])
    np.testing.assert_array_equal(laplace_noise_at(1.0, 7, 6, pos), full[pos])


def test_budget_validation():
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            PrivacyBudget(bad)
    assert PrivacyBudget(0.5).scale(2.0) == 4.0


# Sensitivities ----------------------------------------------------------------

def test_maf_sensitivity_values():
    assert sensitivity_maf(1, 2) == 1.0
    assert sensitivity_maf(100, 1000) == pytest.approx(0.2)
    assert sensitivity_maf(3, 6) == 1.0


def test_maf_sensitivity_brute_force_six_people():
    gen = np.random.default_rng(3)
    g = gen.integers(0, 3, (6, 3))
    y = np.array([0, 0, 0, 1, 1, 1])
    base = np.concatenate([maf_vector(GwasDataset(g, y), s) for s in ("case", "control")])
    worst = 0.0
    for person in range(6):
        for new in itertools.product(range(3), repeat=3):
            h = g.copy()
            h[person] = new
            other = np.concatenate([maf_vector(GwasDataset(h, y), s) for s in ("case", "control")])
            worst = max(worst, np.abs(other - base).sum())
    assert worst == pytest.approx(sensitivity_maf(3, 6))


def test_count_sensitivity():
    assert sensitivity_counts(1) == 2
    assert sensitivity_counts(5) == 10
    # four people, one SNP: change any one person's genotype
    g, y = np.array([0, 1, 2, 1]), np.array([0, 0, 1, 1])
    def table(gv):
        t = np.zeros((3, 2), dtype=int)
        np.add.at(t, (gv, y), 1)
        return t
    worst = 0
    for person in range(4):
        for new in range(3):
            h = g.copy()
            h[person] = new
            worst = max(worst, np.abs(table(h) - table(g)).sum())
    assert worst == sensitivity_counts(1)


def test_chi2_sensitivity_values():
    assert sensitivity_chi2(6) == pytest.approx(3.0)
    assert sensitivity_chi2(100) == pytest.approx(400 / 102)
    assert sensitivity_chi2(10**9) == pytest.approx(4.0, rel=1e-8)
    with pytest.raises(ValueError):
        sensitivity_chi2(7)


def test_chi2_sensitivity_brute_force_n6():
    gap, _ = oracles.max_adjacent_gap(6, oracles.chi2_by_expected)
    assert gap == pytest.approx(3.0, abs=1e-9)


def test_pvalue_sensitivity_proof_tables():
    assert sensitivity_pvalue() == pytest.approx(math.exp(-2 / 3))
    p1 = pvalue_df2(chi2_statistic([[1, 1], [1, 1], [2, 2]]))
    p2 = pvalue_df2(chi2_statistic([[0, 1], [2, 1], [2, 2]]))
    assert abs(p1 - p2) == pytest.approx(1 - math.exp(-2 / 3))
    assert abs(p1 - p2) <= sensitivity_pvalue()


def test_pvalue_sensitivity_brute_force_n8():
    gap, _ = oracles.max_adjacent_gap(8, oracles.pvalue_by_expected)
    assert gap <= math.exp(-2 / 3) + 1e-12


def test_projected_sensitivity_formula():
    N, c = 300, 3
    expected = math.exp(-100) - math.exp(-300 * 597 / 1782 / 2)
    assert sensitivity_pvalue_projected(N, c) == pytest.approx(expected, rel=1e-12)
    assert sensitivity_pvalue_projected(N, ProjectionParam(c, N)) < ProjectionParam(c, N).p_star


def test_projected_sensitivity_proof_tables():
    # N = 30, c = 3: the boundary table and its one-individual neighbour
    edge = [[0, 10], [10, 0], [5, 5]]
    moved = [[0, 11], [10, 0], [5, 4]]
    assert chi2_statistic(edge) == pytest.approx(20.0)
    assert chi2_statistic(moved) == pytest.approx(projected_table_chi2(30, 3))
    gap = math.exp(-chi2_statistic(edge) / 2) - math.exp(-chi2_statistic(moved) / 2)
    assert sensitivity_pvalue_projected(30, 3) == pytest.approx(gap, rel=1e-12)


def test_projection_param_validation():
    with pytest.raises(ValueError):
        ProjectionParam(2.5, 100)
    assert ProjectionParam(4, 40).p_star == pytest.approx(math.exp(-10))


# Releases -------------------------------------------------------------------

def _dataset(N=20, M=5, seed=0):
    gen = np.random.default_rng(seed)
    return GwasDataset(gen.integers(0, 3, (N, M)), np.repeat([0, 1], N // 2))


def test_maf_release_without_noise_is_exact():
    ds = _dataset()
    rep = release_maf(ds, ds.snp_ids, HUGE_EPS, seed=1)
    exact = np.column_stack([maf_vector(ds, "case"), maf_vector(ds, "control")]).ravel()
    np.testing.assert_allclose(rep.value_array(), exact, atol=1e-9)
    assert rep.values[0][0] == "snp0/case"


def test_maf_release_scale_recorded():
    ds = _dataset(N=1000, M=100)
    rep = release_maf(ds, ds.snp_ids, PrivacyBudget(1.0), seed=2)
    assert rep.noise_scale == pytest.approx(0.2)
    assert rep.sensitivity == pytest.approx(0.2)


def test_maf_release_subset_independent():
    ds = _dataset()
    whole = dict(release_maf(ds, ds.snp_ids, PrivacyBudget(1.0), seed=4).values)
    part = dict(release_maf(ds, ["snp3"], PrivacyBudget(1.0), seed=4).values)
    # the subset has a different sensitivity, so compare the noise divided by the scale
    s_whole, s_part = sensitivity_maf(5, 20), sensitivity_maf(1, 20)
    exact = maf_vector(ds, "case")[3]
    assert (whole["snp3/case"] - exact) / s_whole == pytest.approx((part["snp3/case"] - exact) / s_part)


def test_maf_release_clamp_and_errors():
    ds = _dataset()
    rep = release_maf(ds, ds.snp_ids, PrivacyBudget(0.01), seed=0, clamp=True)
    assert rep.value_array().min() >= 0.0 and rep.value_array().max() <= 1.0
    with pytest.raises(BalanceError):
        release_maf(GwasDataset([[0], [1], [2]], [0, 1, 1]), [0], PrivacyBudget(1.0))
    with pytest.raises(ValueError):
        release_maf(ds, [], PrivacyBudget(1.0))


@pytest.mark.slow
def test_maf_release_noise_variance():
    ds = GwasDataset([[0], [1]], [0, 1])
    budget = PrivacyBudget(1.0)
    case = maf_vector(ds, "case")[0]
    noise = np.array([release_maf(ds, [0], budget, seed=s).values[0][1] - case
                      for s in range(100_000)])
    scale = sensitivity_maf(1, 2)
    assert noise.var() == pytest.approx(2 * scale**2, rel=0.03)


def test_count_release():
    rep = release_counts([[[1, 2], [3, 4], [5, 6]]], PrivacyBudget(0.2), seed=0)
    assert rep.noise_scale == pytest.approx(10.0)
    assert len(rep.values) == 6
    exact = release_counts([[[1, 2], [3, 4], [5, 6]]], HUGE_EPS, seed=0)
    np.testing.assert_allclose(exact.value_array(), [1, 2, 3, 4, 5, 6], atol=1e-9)


def test_count_release_density_ratio():
    t = ContingencyTable3x2([[3, 1], [2, 2], [1, 3]])
    eps = 0.2
    scale = release_counts([t], PrivacyBudget(eps)).noise_scale
    grid = np.linspace(-20, 20, 201)
    for u in adjacent_tables(t):
        # the six cells are released independently; sum the per-cell log ratios
        lr = sum(np.abs(grid - u.counts.ravel()[k]) - np.abs(grid - t.counts.ravel()[k])
                 for k in range(6)) / scale
        assert lr.max() <= eps + 1e-12


def test_chi2_release():
    t = ContingencyTable3x2([[10, 20], [25, 20], [15, 10]])
    rep = release_chi2_single(t, PrivacyBudget(0.4), seed=3, snp_id="rs1")
    assert rep.noise_scale == pytest.approx(400 / 102 / 0.4)
    assert rep.values[0][0] == "rs1"
    exact = release_chi2_single(t, HUGE_EPS, seed=3)
    assert exact.values[0][1] == pytest.approx(chi2_statistic(t), abs=1e-9)
    with pytest.raises(BalanceError):
        release_chi2_single([[10, 20], [25, 20], [15, 11]], PrivacyBudget(1))
    with pytest.raises(MarginError):
        release_chi2_single([[0, 0], [25, 20], [15, 20]], PrivacyBudget(1))


@pytest.mark.slow
def test_chi2_release_is_unbiased():
    t = ContingencyTable3x2([[10, 20], [25, 20], [15, 10]])
    budget = PrivacyBudget(0.4)
    vals = np.array([release_chi2_single(t, budget, seed=s).values[0][1]
                     for s in range(100_000)])
    sigma = math.sqrt(2) * (400 / 102 / 0.4)
    assert abs(vals.mean() - chi2_statistic(t)) < 3 * sigma / math.sqrt(vals.size)


def test_pvalue_release():
    t = ContingencyTable3x2([[10, 20], [25, 20], [15, 10]])
    rep = release_pvalue_single(t, PrivacyBudget(0.2), seed=0)
    assert rep.noise_scale == pytest.approx(math.exp(-2 / 3) / 0.2)
    assert rep.noise_scale == pytest.approx(2.567, abs=1e-3)
    assert 0.0 <= rep.values[0][1] <= 1.0
    assert rep.details["raw_value"] != rep.values[0][1] or 0 < rep.values[0][1] < 1
    exact = release_pvalue_single(t, HUGE_EPS, seed=0)
    assert exact.values[0][1] == pytest.approx(pvalue_df2(chi2_statistic(t)), abs=1e-9)


def test_projected_pvalue_release_centres_on_p_star():
    # an independent table at N = 300 has p = 1 > p*
    t = ContingencyTable3x2([[50, 50], [50, 50], [50, 50]])
    proj = ProjectionParam(3, 300)
    rep = release_pvalue_single(t, PrivacyBudget(1.0), seed=5, proj=proj)
    assert rep.mechanism == "pvalue_projected"
    assert rep.details["p_star"] == pytest.approx(proj.p_star)
    assert abs(rep.details["raw_value"] - proj.p_star) <= 40 * rep.noise_scale


def test_top_m_noiseless_selects_everything_exactly():
    stats = np.array([3.0, 9.0, 1.0, 4.0])
    rep = release_top_m(stats, 4, "chi2", 100, HUGE_EPS, seed=0)
    assert rep.selected_ids == ["snp1", "snp3", "snp0", "snp2"]
    np.testing.assert_allclose(rep.value_array(), [9.0, 4.0, 3.0, 1.0], atol=1e-8)


def test_top_m_noise_scales():
    rep = release_top_m(np.arange(10.0), 3, "chi2", 800, PrivacyBudget(0.4), seed=0)
    assert rep.details["stage1_noise_scale"] == pytest.approx(30 * 3200 / 802)
    assert rep.details["stage1_noise_scale"] == pytest.approx(119.7, abs=0.05)
    assert rep.noise_scale == pytest.approx(rep.details["stage1_noise_scale"] / 2)


def test_top_m_pvalues_pick_smallest():
    p = np.array([0.5, 1e-9, 0.9, 1e-12])
    sel = select_top_m(p, 2, "pvalue", 100, HUGE_EPS, seed=0)
    assert sel.tolist() == [3, 1]


def test_rank_ties_go_to_lower_index():
    assert rank_by_relevance([1.0, 2.0, 2.0, 0.0], "chi2").tolist() == [1, 2, 0, 3]
    assert rank_by_relevance([1.0, 0.5, 0.5], "pvalue").tolist() == [1, 2, 0]


def test_top_m_validation():
    with pytest.raises(ValueError):
        select_top_m([1.0, 2.0], 3, "chi2", 10, PrivacyBudget(1), 0)
    with pytest.raises(ValueError):
        select_top_m([1.0, 2.0], 1, "maf", 10, PrivacyBudget(1), 0)


def test_top_m_dataset_release():
    ds = synth_gwas(30, [builtin_frequency_tables()["a"]], 400, seed=1)
    rep = release_top_m_dataset(ds, 3, "chi2", PrivacyBudget(0.4), seed=7)
    assert len(rep.selected_ids) == 3
    assert rep.mechanism == "top_m_chi2"
    stats = dataset_statistics(ds, "pvalue")
    assert stats.min() >= 0 and stats.max() <= 1


@pytest.mark.slow
def test_top_m_recovery_majority_at_n8000():
    # two causal SNPs of average MAF about 0.4 (table (c)) among 2,000 nulls
    c = builtin_frequency_tables()["c"]
    ds = synth_gwas(2000, [c, c], 8000, seed=11)
    stats = dataset_statistics(ds, "chi2")
    budget = PrivacyBudget(0.4)
    hits = sum(set(select_top_m(stats, 3, "chi2", 8000, budget, seed=r)) >= {0, 1}
               for r in range(200))
    assert hits > 100


def test_report_json_roundtrip():
    rep = release_top_m(np.arange(5.0), 2, "chi2", 100, PrivacyBudget(1.0), seed=3)
    d = json.loads(rep.to_json())
    assert set(d) >= {"mechanism", "epsilon", "sensitivity", "noise_scale", "seed", "values",
                      "selected_ids"}
    back = ReleaseReport.from_dict(d)
    assert back.to_json() == rep.to_json()
    with pytest.raises(ValueError):
        ReleaseReport("bogus", 1.0, 1.0, 1.0, 0, [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=6, max_size=6), st.integers(0, 2**32))
def test_adjacent_tables_are_one_move_away(cells, seed):
    t = np.array(cells).reshape(3, 2)
    t[2, 1] += t[:, 0].sum() - t[:, 1].sum()
    if t[2, 1] < 0:
        return
    table = ContingencyTable3x2(t)
    for u in adjacent_tables(table):
        assert u.balanced and u.positive_margins
        assert np.abs(u.counts - t).sum() == 2
        assert (u.counts.sum(axis=0) == t.sum(axis=0)).all()
    a = release_chi2_single(table, PrivacyBudget(1.0), seed) if table.positive_margins else None
    if a is not None:
        assert a.to_json() == release_chi2_single(table, PrivacyBudget(1.0), seed).to_json()


def test_projected_pvalue_with_underflowing_threshold_is_noise_free():
    t = ContingencyTable3x2([[700, 500], [900, 1000], [400, 500]])
    rep = release_pvalue_single(t, PrivacyBudget(0.4), seed=1, proj=4.0)
    assert rep.sensitivity == 0.0 and rep.details["noise_free"]
    assert rep.values[0][1] == 0.0
