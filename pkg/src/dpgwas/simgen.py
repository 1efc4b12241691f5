"""Synthetic case/control data.

Tables are drawn from a product multinomial: the control column and the case
column are independent multinomials of N/2 individuals each, over the three
genotypes, with per-column genotype frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core_stats import ContingencyTable3x2, GwasDataset, pearson_chi2


@dataclass(frozen=True, eq=False)
class FrequencyTable3x2:
    """Genotype frequencies per column; ``probs[:, 0]`` controls, ``probs[:, 1]`` cases."""

    probs: np.ndarray
    name: str = ""

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.shape != (3, 2):
            raise ValueError("expected a 3x2 frequency table")
        if (p < 0).any() or (p > 1).any():
            raise ValueError("frequencies must lie in [0, 1]")
        if np.abs(p.sum(axis=0) - 1.0).max() > 1e-12:
            raise ValueError(f"each column must sum to 1, got {p.sum(axis=0)}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def expected_table(self, N: int) -> np.ndarray:
        return self.probs * (N / 2.0)

    def expected_chi2(self, N: int) -> float:
        """Statistic of the expected table (the noncentrality at sample size N)."""
        return float(pearson_chi2(self.expected_table(N)))


_BUILTIN = {
    "a": [[0.72, 0.20], [0.18, 0.28], [0.10, 0.52]],
    "b": [[0.60, 0.23], [0.21, 0.30], [0.19, 0.47]],
    "c": [[0.47, 0.25], [0.45, 0.51], [0.08, 0.24]],
    "d": [[0.65, 0.46], [0.29, 0.43], [0.06, 0.11]],
}


def builtin_frequency_tables() -> dict[str, FrequencyTable3x2]:
    """The four reference association strengths (a) to (d), strongest first."""
    return {k: FrequencyTable3x2(v, name=k) for k, v in _BUILTIN.items()}


def _check_even(N):
    if N <= 0 or N % 2:
        raise ValueError(f"N must be a positive even number, got {N}")


def sample_tables(freq: FrequencyTable3x2, N: int, size: int,
                  gen: np.random.Generator) -> np.ndarray:
    """``size`` balanced tables, shape (size, 3, 2)."""
    _check_even(N)
    half = N // 2
    controls = gen.multinomial(half, freq.probs[:, 0], size=size)
    cases = gen.multinomial(half, freq.probs[:, 1], size=size)
    return np.stack([controls, cases], axis=2)


def sample_table(freq: FrequencyTable3x2, N: int, seed: int = 0) -> ContingencyTable3x2:
    return ContingencyTable3x2(sample_tables(freq, N, 1, rngmod.generator(seed))[0])


def null_frequency_table(maf: float) -> FrequencyTable3x2:
    """Hardy-Weinberg genotype frequencies, identical for cases and controls."""
    col = [(1 - maf) ** 2, 2 * maf * (1 - maf), maf ** 2]
    return FrequencyTable3x2(np.column_stack([col, col]))


def _column_genotypes(freq, half, gen):
    """Shuffled genotypes for N/2 controls followed by N/2 cases."""
    out = np.empty(2 * half, dtype=np.int8)
    for s in range(2):
        counts = gen.multinomial(half, freq.probs[:, s])
        col = np.repeat(np.arange(3, dtype=np.int8), counts)
        gen.shuffle(col)
        out[s * half:(s + 1) * half] = col
    return out


def synth_gwas(n_null_snps: int, causal_specs, N: int, seed: int = 0,
               maf_range=(0.05, 0.5)) -> GwasDataset:
    """A balanced synthetic GWAS: causal SNPs first (``causal0``, ...), then nulls.

    Null SNPs have a MAF drawn uniformly from ``maf_range`` and Hardy-Weinberg
    genotype frequencies shared by cases and controls. Each causal SNP draws
    its two columns from its frequency table. The first N/2 individuals are
    controls, the rest cases.
    """
    _check_even(N)
    half = N // 2
    causal_specs = list(causal_specs)
    gen = rngmod.generator(seed, 0)
    n_snps = len(causal_specs) + n_null_snps
    g = np.empty((N, n_snps), dtype=np.int8)
    for k, freq in enumerate(causal_specs):
        g[:, k] = _column_genotypes(freq, half, gen)
    if n_null_snps:
        mafs = gen.uniform(*maf_range, size=n_null_snps)
        p = np.column_stack([(1 - mafs) ** 2, 2 * mafs * (1 - mafs), mafs ** 2])
        # inverse-CDF draw of each null genotype, shared law for both columns
        u = gen.random((N, n_null_snps))
        g[:, len(causal_specs):] = (u > p[:, 0]).astype(np.int8) + (u > p[:, 0] + p[:, 1])
    ids = [f"causal{k}" for k in range(len(causal_specs))] + [
        f"null{k}" for k in range(n_null_snps)]
    phenotype = np.repeat(np.array([0, 1], dtype=np.int8), half)
    return GwasDataset(g, phenotype, tuple(ids))


def synth_null_tables(mafs, N: int, gen: np.random.Generator) -> np.ndarray:
    """Tables of null SNPs directly, shape (len(mafs), 3, 2); equivalent to tallying synth_gwas."""
    _check_even(N)
    mafs = np.asarray(mafs, dtype=np.float64)
    p = np.column_stack([(1 - mafs) ** 2, 2 * mafs * (1 - mafs), mafs ** 2])
    out = np.empty((mafs.size, 3, 2), dtype=np.int64)
    for s in range(2):
        n0 = gen.binomial(N // 2, p[:, 0])
        n1 = gen.binomial(N // 2 - n0, np.clip(p[:, 1] / (1.0 - p[:, 0]), 0.0, 1.0))
        out[:, 0, s], out[:, 1, s], out[:, 2, s] = n0, n1, N // 2 - n0 - n1
    return out


def sample_pvalue_mixture(n_pos: int, n_neg: int, seed: int = 0):
    """True positives ~ U[0, 0.05] and true negatives ~ U[0.05, 1].

    Returns ``(pvalues, labels)`` with label 1 for positives.
    """
    if n_pos < 0 or n_neg < 0:
        raise ValueError("counts must be nonnegative")
    gen = rngmod.generator(seed, 0)
    p = np.concatenate([gen.uniform(0.0, 0.05, n_pos), gen.uniform(0.05, 1.0, n_neg)])
    labels = np.concatenate([np.ones(n_pos, dtype=np.int8), np.zeros(n_neg, dtype=np.int8)])
    return p, labels


def synth_planted_logistic(N: int, n_snps: int, model: str, strength: float,
                           seed: int = 0, maf_range=(0.3, 0.5)) -> GwasDataset:
    """Balanced case/control sample from a population with a planted logistic model.

    Individuals are simulated under Hardy-Weinberg genotypes and Bernoulli
    phenotypes until N/2 cases and N/2 controls are collected (controls first
    in the output). SNPs 0 and 1 carry the effect. ``model="additive"`` uses
    log-odds ``strength * (g0 + g1 - 2)``; ``model="interaction"`` uses
    ``+strength`` when ``g0 + g1`` is even and ``-strength`` otherwise, which
    leaves little marginal signal at either SNP. ``model="null"`` ignores the
    genotypes.
    """
    _check_even(N)
    if n_snps < 2 and model != "null":
        raise ValueError("planted models need at least two SNPs")
    if model not in ("additive", "interaction", "null"):
        raise ValueError(f"unknown model {model!r}")
    if n_snps < 1:
        raise ValueError("need at least one SNP")
    half = N // 2
    gen = rngmod.generator(seed, 0)
    mafs = gen.uniform(*maf_range, size=n_snps)
    p0, p1 = (1 - mafs) ** 2, 2 * mafs * (1 - mafs)
    groups = {0: [], 1: []}
    have = {0: 0, 1: 0}
    while min(have.values()) < half:
        u = gen.random((N, n_snps))
        g = ((u > p0).astype(np.int8) + (u > p0 + p1)).astype(np.int8)
        if model == "additive":
            eta = strength * (g[:, 0] + g[:, 1] - 2.0)
        elif model == "interaction":
            eta = np.where((g[:, 0] + g[:, 1]) % 2 == 0, strength, -strength)
        else:
            eta = np.zeros(N)
        y = gen.random(N) < 1.0 / (1.0 + np.exp(-eta))
        for status, rows in ((0, g[~y]), (1, g[y])):
            take = rows[:half - have[status]]
            groups[status].append(take)
            have[status] += take.shape[0]
    genotypes = np.concatenate(groups[0] + groups[1])
    phenotype = np.repeat(np.array([0, 1], dtype=np.int8), half)
    return GwasDataset(genotypes, phenotype, tuple(f"snp{k}" for k in range(n_snps)))
