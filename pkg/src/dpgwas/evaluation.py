"""Utility metrics for private releases: KL divergence, ROC/AUC, KS distance, top-M recovery."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .core_stats import ContingencyTable3x2, pearson_chi2_observed
from .dp_distributions import perturbed_cdf
from .dp_mechanisms import (PVALUE_SENSITIVITY, PrivacyBudget, select_top_m,
                            sensitivity_chi2)
from .fiber_mcmc import FiberWalkConfig, pooled_perturbed_distribution
from .simgen import (FrequencyTable3x2, builtin_frequency_tables,
                     sample_pvalue_mixture, sample_tables, synth_null_tables)

DEFAULT_KL_BINS = 200


def kl_divergence_empirical(sample_f, sample_g, bins: int = DEFAULT_KL_BINS) -> float:
    """Histogram estimate of KL(f || g) from two samples.

    Both samples are binned on ``bins`` equal-width bins spanning their pooled
    range; each bin gets one pseudo-count before normalizing.
    """
    f = np.asarray(sample_f, dtype=np.float64).ravel()
    g = np.asarray(sample_g, dtype=np.float64).ravel()
    if f.size == 0 or g.size == 0:
        raise ValueError("both samples must be nonempty")
    if bins < 1:
        raise ValueError("bins must be positive")
    if not (np.isfinite(f).all() and np.isfinite(g).all()):
        raise ValueError("samples must be finite")
    lo, hi = min(f.min(), g.min()), max(f.max(), g.max())
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.linspace(lo - 0.5, hi + 0.5, bins + 1)
    cf = np.histogram(f, edges)[0] + 1.0
    cg = np.histogram(g, edges)[0] + 1.0
    pf, pg = cf / cf.sum(), cg / cg.sum()
    return max(float(np.sum(pf * np.log(pf / pg))), 0.0)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, x, y in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y))])
        return buf.getvalue()


def roc_curve(labels, scores, positive_when: str = "low") -> RocCurve:
    """ROC over every distinct threshold; tied scores enter the curve together.

    With ``positive_when="low"`` (p-values) an item is called positive when its
    score is <= the threshold; with ``"high"`` when it is >= the threshold.
    The first point is (0, 0) and the last (1, 1).
    """
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if labels.size != scores.size:
        raise ValueError("labels and scores differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    if positive_when == "high":
        key = -scores
    elif positive_when == "low":
        key = scores
    else:
        raise ValueError("positive_when must be 'low' or 'high'")
    order = np.argsort(key, kind="mergesort")
    k, lab = key[order], labels[order]
    last_of_group = np.r_[k[1:] != k[:-1], True]
    tp = np.cumsum(lab)[last_of_group]
    fp = np.cumsum(~lab)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = scores[order][last_of_group]
    thr = np.r_[-np.inf if positive_when == "low" else np.inf, thr]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


def ks_statistic(sample, cdf: Callable) -> float:
    """sup_x |F_n(x) - F(x)| for a continuous reference ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("sample is empty")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


# Utility studies ----------------------------------------------------------

def _freq(spec) -> FrequencyTable3x2:
    if isinstance(spec, FrequencyTable3x2):
        return spec
    return builtin_frequency_tables()[spec]


def private_statistic_samples(freq, N: int, epsilon: float, n_tables: int,
                              statistic: str, seed: int):
    """Original and released statistics of ``n_tables`` tables sampled at size N.

    ``chi2``: released value = chi2 + Laplace(4N/((N+2) eps)).
    ``pvalue``: released value = clip(p + Laplace(exp(-2/3)/eps), 0, 1).
    """
    gen_tables = rngmod.generator(seed, 0)
    tables = sample_tables(_freq(freq), N, n_tables, gen_tables)
    chi2 = pearson_chi2_observed(tables)
    gen_noise = rngmod.generator(seed, 1)
    if statistic == "chi2":
        scale = sensitivity_chi2(N) / epsilon
        return chi2, chi2 + gen_noise.laplace(0.0, scale, n_tables)
    if statistic == "pvalue":
        p = np.exp(-chi2 / 2.0)
        scale = PVALUE_SENSITIVITY / epsilon
        return p, np.clip(p + gen_noise.laplace(0.0, scale, n_tables), 0.0, 1.0)
    raise ValueError(f"statistic must be 'chi2' or 'pvalue', got {statistic!r}")


def _kl_cell(args):
    spec, name, N, epsilons, statistic, n_tables, bins, cell_seed = args
    rows = []
    for eps in epsilons:
        orig, priv = private_statistic_samples(spec, N, eps, n_tables, statistic, cell_seed)
        rows.append({"table": name, "N": int(N), "epsilon": float(eps),
                     "statistic": statistic, "bins": bins,
                     "kl": kl_divergence_empirical(orig, priv, bins)})
    return rows


def kl_grid(freq_tables: Sequence, epsilons: Sequence[float], Ns: Sequence[int],
            statistic: str = "chi2", n_tables: int = 10_000,
            bins: int = DEFAULT_KL_BINS, seed: int = 0, jobs: int = 1) -> list[dict]:
    """KL(original || private) for every (frequency table, N, epsilon) cell.

    The sampled tables for a (frequency table, N) pair are shared across
    epsilons, so the epsilon trend is not confounded by table resampling.
    Results do not depend on ``jobs``.
    """
    tasks = []
    for ti, spec in enumerate(freq_tables):
        name = spec if isinstance(spec, str) else (spec.name or f"table{ti}")
        for ni, N in enumerate(Ns):
            tasks.append((spec, name, N, list(epsilons), statistic, n_tables, bins,
                          rngmod.child_seed(seed, ti, ni)))
    cells = _run(_kl_cell, tasks, jobs)
    return [row for cell in cells for row in cell]


def roc_study(epsilon: float, n_pos: int = 500, n_neg: int = 500,
              seed: int = 0) -> RocCurve:
    """ROC of clamped noisy p-values on the uniform positive/negative mixture."""
    p, labels = sample_pvalue_mixture(n_pos, n_neg, seed)
    gen = rngmod.generator(seed, 1)
    noisy = np.clip(p + gen.laplace(0.0, PVALUE_SENSITIVITY / epsilon, p.size), 0.0, 1.0)
    return roc_curve(labels, noisy, positive_when="low")


def _ks_closed_form_cell(args):
    eps, n_draws, cell_seed = args
    gen = rngmod.generator(cell_seed, 0)
    x = gen.chisquare(2, n_draws) + gen.laplace(0.0, 4.0 / eps, n_draws)
    return {"epsilon": float(eps), "source": "closed_form", "n": n_draws,
            "ks": ks_statistic(x, lambda v: perturbed_cdf(v, eps))}


def ks_closed_form(epsilons: Sequence[float], n_draws: int = 1_000_000, seed: int = 0,
                   jobs: int = 1) -> list[dict]:
    """KS distance between simulated chi2(2) + Laplace(0, 4/eps) and its closed-form CDF."""
    tasks = [(eps, n_draws, rngmod.child_seed(seed, k)) for k, eps in enumerate(epsilons)]
    return _run(_ks_closed_form_cell, tasks, jobs)


def _chi2_df2_cdf(x):
    return -np.expm1(-np.maximum(x, 0.0) / 2.0)


def _ks_fiber_cell(args):
    start, eps, config, n_chains, cell_seed = args
    config = FiberWalkConfig(config.steps, config.burn_in, config.thin, config.target,
                             config.perturb, eps, config.proposal)
    sample = pooled_perturbed_distribution(start, config, n_chains, cell_seed)
    if config.perturb == "statistic":
        ref = lambda v: perturbed_cdf(v, eps)
    else:
        ref = _chi2_df2_cdf
    return {"epsilon": float(eps), "source": f"fiber_{config.perturb}",
            "n": int(sample.size), "ks": ks_statistic(sample, ref)}


def ks_fiber(start, epsilons: Sequence[float], config: FiberWalkConfig, n_chains: int = 1,
             seed: int = 0, jobs: int = 1) -> list[dict]:
    """KS distance of released statistics along fiber walks from ``start``.

    The reference law is chi2(2) for cell-level noise and for unperturbed
    statistics, and the closed-form perturbed law for statistic-level noise.
    """
    start = ContingencyTable3x2(start) if not isinstance(start, ContingencyTable3x2) else start
    tasks = [(start, eps, config, n_chains, rngmod.child_seed(seed, k))
             for k, eps in enumerate(epsilons)]
    return _run(_ks_fiber_cell, tasks, jobs)


def _run(fn, tasks, jobs):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


@dataclass(frozen=True)
class RecoveryConfig:
    """Synthetic study for top-M recovery of planted causal SNPs.

    ``resample_data=False`` keeps one dataset per N and repeats only the
    release noise across runs; ``True`` draws fresh data every run.
    """

    causal: tuple = ("c", "c")
    n_null_snps: int = 2000
    kind: str = "chi2"
    resample_data: bool = False
    maf_range: tuple = (0.05, 0.5)

    def __post_init__(self):
        if len(self.causal) < 1:
            raise ValueError("at least one causal SNP is required")


def _simulate_stats(config: RecoveryConfig, N: int, seed: int) -> np.ndarray:
    gen = rngmod.generator(seed, 0)
    causal = np.concatenate([sample_tables(_freq(c), N, 1, gen) for c in config.causal])
    mafs = gen.uniform(*config.maf_range, size=config.n_null_snps)
    tables = np.concatenate([causal, synth_null_tables(mafs, N, gen)])
    chi2 = pearson_chi2_observed(tables)
    return chi2 if config.kind == "chi2" else np.exp(-chi2 / 2.0)


def _recovery_cell(args):
    config, M, eps, N, runs, data_seed, noise_seed = args
    n_causal = len(config.causal)
    budget = PrivacyBudget(eps)
    stats = _simulate_stats(config, N, data_seed)
    one = both = 0
    for r in range(runs):
        if config.resample_data and r:
            stats = _simulate_stats(config, N, rngmod.child_seed(data_seed, r))
        chosen = select_top_m(stats, M, config.kind, N, budget,
                              rngmod.child_seed(noise_seed, r))
        hits = int(np.sum(chosen < n_causal))
        one += hits >= 1
        both += hits == n_causal
    return {"epsilon": float(eps), "N": int(N), "runs": runs,
            "freq_any": one / runs, "freq_all": both / runs}


def recovery_frequency(config: RecoveryConfig, M: int, epsilons: Sequence[float],
                       Ns: Sequence[int], runs: int, seed: int = 0,
                       jobs: int = 1) -> list[dict]:
    """Fraction of runs whose private top-M set contains any / all causal SNPs.

    For a given N the simulated data do not depend on epsilon, so differences
    across epsilon come from the release noise alone. Results do not depend
    on ``jobs``.
    """
    tasks = []
    for ni, N in enumerate(Ns):
        data_seed = rngmod.child_seed(seed, 0, ni)
        for ei, eps in enumerate(epsilons):
            tasks.append((config, M, eps, N, runs, data_seed,
                          rngmod.child_seed(seed, 1, ni, ei)))
    return _run(_recovery_cell, tasks, jobs)


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def spearman_rho(x, y) -> float:
    from scipy import stats
    return float(stats.spearmanr(x, y).statistic)
