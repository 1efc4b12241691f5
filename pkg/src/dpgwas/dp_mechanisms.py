"""Laplace-mechanism releases of MAFs, cell counts, chi-square statistics and p-values.

All releases are deterministic given their inputs and a 64-bit seed. Noise for
the value at position ``i`` (SNP column, table cell, ...) is the ``i``-th
variate of a named stream derived from the seed, see :mod:`dpgwas.rng`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .core_stats import (BalanceError, ContingencyTable3x2, GwasDataset,
                         MarginError, all_tables, chi2_statistic, maf_vector,
                         pearson_chi2_observed, pvalue_df2)

MECHANISMS = ("maf", "counts", "chi2", "pvalue", "pvalue_projected",
              "top_m_chi2", "top_m_pvalue")

# Stream numbers; fixed so that reports stay replayable across versions.
STREAM_MAF = 1
STREAM_COUNTS = 2
STREAM_CHI2 = 3
STREAM_PVALUE = 4
STREAM_TOPM_SELECT = 5
STREAM_TOPM_RELEASE = 6

PVALUE_SENSITIVITY = math.exp(-2.0 / 3.0)


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not (eps > 0 and math.isfinite(eps)):
            raise ValueError(f"epsilon must be a positive finite number, got {self.epsilon}")
        object.__setattr__(self, "epsilon", eps)

    def scale(self, sensitivity: float) -> float:
        return sensitivity / self.epsilon


@dataclass(frozen=True)
class ProjectionParam:
    """Projection of large p-values onto ``p_star = exp(-N / c)``."""

    c: float
    N: int

    def __post_init__(self):
        if not self.c >= 3:
            raise ValueError(f"projection constant c must be >= 3, got {self.c}")
        if self.N <= 0:
            raise ValueError("N must be positive")

    @property
    def p_star(self) -> float:
        return math.exp(-self.N / self.c)


@dataclass
class ReleaseReport:
    """Auditable output of one release: what was added, at which scale, from which seed."""

    mechanism: str
    epsilon: float
    sensitivity: float
    noise_scale: float
    seed: int
    values: list[tuple[str, float]]
    selected_ids: list[str] | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not all(math.isfinite(v) for _, v in self.values):
            raise ValueError("released values must be finite")

    def value_array(self) -> np.ndarray:
        return np.array([v for _, v in self.values], dtype=np.float64)

    def to_dict(self) -> dict:
        out = {
            "mechanism": self.mechanism,
            "epsilon": self.epsilon,
            "sensitivity": self.sensitivity,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
            "values": [{"id": i, "value": v} for i, v in self.values],
        }
        if self.selected_ids is not None:
            out["selected_ids"] = list(self.selected_ids)
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "ReleaseReport":
        return cls(
            mechanism=d["mechanism"], epsilon=d["epsilon"],
            sensitivity=d["sensitivity"], noise_scale=d["noise_scale"],
            seed=d["seed"],
            values=[(v["id"], v["value"]) for v in d["values"]],
            selected_ids=d.get("selected_ids"), details=d.get("details", {}))


# Laplace noise ----------------------------------------------------------------

def laplace_from_uniform(u, scale):
    """Inverse CDF of Laplace(0, scale) evaluated at ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    d = u - 0.5
    return -np.sign(d) * scale * np.log1p(-2.0 * np.abs(d))


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    """One Laplace(0, scale) draw from a single uniform variate of ``rng``."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return float(laplace_from_uniform(u, scale))


def laplace_noise(scale: float, seed: int, stream, start: int = 0,
                  count: int = 1) -> np.ndarray:
    """Laplace(0, scale) draws at positions [start, start + count) of a stream."""
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale}")
    return laplace_from_uniform(rngmod.open_uniforms(seed, stream, start, count), scale)


def laplace_noise_at(scale: float, seed: int, stream, positions) -> np.ndarray:
    """Laplace draws at arbitrary stream positions (e.g. selected SNP columns)."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        return np.empty(0)
    lo, hi = int(positions.min()), int(positions.max())
    block = laplace_noise(scale, seed, stream, lo, hi - lo + 1)
    return block[positions - lo]


def laplace_logpdf(x, loc, scale):
    return -np.log(2.0 * scale) - np.abs(np.asarray(x) - loc) / scale


# Sensitivities ----------------------------------------------------------------

def sensitivity_maf(M: int, N: int) -> float:
    """L1 sensitivity of the case and control MAFs of M SNPs over N individuals."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if N < 2 or N % 2:
        raise ValueError(f"N must be a positive even number, got {N}")
    return 2.0 * M / N


def sensitivity_counts(M: int) -> float:
    if M < 1:
        raise ValueError("M must be at least 1")
    return 2.0 * M


def sensitivity_chi2(N: int) -> float:
    """Sensitivity of the chi-square statistic of a balanced 3x2 table."""
    if N < 6 or N % 2:
        raise ValueError(f"N must be an even number >= 6, got {N}")
    return 4.0 * N / (N + 2)


def sensitivity_pvalue() -> float:
    return PVALUE_SENSITIVITY


def projected_table_chi2(N: float, c: float) -> float:
    """Chi-square of the table one move beyond the projection boundary table."""
    denom = N * c - 2 * N - c
    if denom <= 0:
        raise ValueError(f"N*c - 2N - c must be positive (N={N}, c={c})")
    return N * (2 * N * c - 4 * N - 4 * c + c * c) / (c * denom)


def sensitivity_pvalue_projected(N: int, proj: ProjectionParam | float) -> float:
    """Sensitivity of p-values after projecting those above exp(-N/c) onto it."""
    c = proj.c if isinstance(proj, ProjectionParam) else float(proj)
    if c < 3:
        raise ValueError(f"projection constant c must be >= 3, got {c}")
    if N <= 0 or N % 2:
        raise ValueError(f"N must be a positive even number, got {N}")
    return math.exp(-N / c) - math.exp(-projected_table_chi2(N, c) / 2.0)


# Releases -------------------------------------------------------------------

def _check_balanced_table(table: ContingencyTable3x2) -> ContingencyTable3x2:
    if not isinstance(table, ContingencyTable3x2):
        table = ContingencyTable3x2(table)
    if not table.positive_margins:
        raise MarginError(f"table {table.tolist()} has a zero margin")
    if not table.balanced:
        raise BalanceError(f"table {table.tolist()} is not balanced: columns {table.col_margins}")
    return table


def release_maf(dataset: GwasDataset, snps: Sequence, budget: PrivacyBudget,
                seed: int = 0, clamp: bool = False) -> ReleaseReport:
    """Noisy case and control MAFs of the SNPs in ``snps``.

    Noise for SNP column ``j`` is drawn at stream positions ``2j`` (cases) and
    ``2j + 1`` (controls), so the release of a SNP does not depend on which
    other SNPs are released alongside it.
    """
    if not dataset.balanced:
        raise BalanceError(
            f"MAF release needs equal cases and controls, got {dataset.n_cases} "
            f"cases and {dataset.n_controls} controls")
    cols = [dataset.snp_index(s) for s in snps]
    if not cols:
        raise ValueError("snp subset is empty")
    if len(set(cols)) != len(cols):
        raise ValueError("snp subset contains duplicates")
    sens = sensitivity_maf(len(cols), dataset.n_individuals)
    scale = budget.scale(sens)
    case = maf_vector(dataset, "case")[cols]
    control = maf_vector(dataset, "control")[cols]
    pos = np.ravel(np.column_stack([2 * np.array(cols), 2 * np.array(cols) + 1]))
    noise = laplace_noise_at(scale, seed, STREAM_MAF, pos).reshape(-1, 2)
    noisy = np.column_stack([case, control]) + noise
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    values = []
    for k, j in enumerate(cols):
        sid = dataset.snp_ids[j]
        values.append((f"{sid}/case", float(noisy[k, 0])))
        values.append((f"{sid}/control", float(noisy[k, 1])))
    return ReleaseReport("maf", budget.epsilon, sens, scale, rngmod.check_seed(seed),
                         values, details={"clamped": clamp})


def release_counts(tables: Sequence, budget: PrivacyBudget, seed: int = 0,
                   ids: Sequence[str] | None = None, clamp: bool = False) -> ReleaseReport:
    """All six cells of each of M tables, each with Laplace(0, 2M/epsilon) noise."""
    tables = [t if isinstance(t, ContingencyTable3x2) else ContingencyTable3x2(t)
              for t in tables]
    if not tables:
        raise ValueError("no tables to release")
    ids = list(ids) if ids is not None else [f"table{k}" for k in range(len(tables))]
    if len(ids) != len(tables):
        raise ValueError("one id per table required")
    sens = sensitivity_counts(len(tables))
    scale = budget.scale(sens)
    counts = np.stack([t.counts for t in tables]).astype(np.float64)
    noisy = counts + laplace_noise(scale, seed, STREAM_COUNTS, 0, counts.size).reshape(counts.shape)
    if clamp:
        noisy = np.maximum(noisy, 0.0)
    values = [(f"{ids[k]}[{g},{s}]", float(noisy[k, g, s]))
              for k in range(len(tables)) for g in range(3) for s in range(2)]
    return ReleaseReport("counts", budget.epsilon, sens, scale, rngmod.check_seed(seed),
                         values, details={"clamped": clamp})


def release_chi2_single(table, budget: PrivacyBudget, seed: int = 0,
                        snp_id: str = "snp") -> ReleaseReport:
    table = _check_balanced_table(table)
    sens = sensitivity_chi2(table.total)
    scale = budget.scale(sens)
    value = chi2_statistic(table) + float(laplace_noise(scale, seed, STREAM_CHI2)[0])
    return ReleaseReport("chi2", budget.epsilon, sens, scale, rngmod.check_seed(seed),
                         [(snp_id, value)])


def release_pvalue_single(table, budget: PrivacyBudget, seed: int = 0,
                          proj: ProjectionParam | float | None = None,
                          snp_id: str = "snp") -> ReleaseReport:
    """Noisy p-value, clamped to [0, 1]; the unclamped value is kept in ``details``.

    With ``proj`` (a :class:`ProjectionParam` or the constant c), the exact
    p-value is first projected onto ``min(p, exp(-N/c))``.
    """
    table = _check_balanced_table(table)
    N = table.total
    p = pvalue_df2(chi2_statistic(table))
    if proj is None:
        mechanism, sens = "pvalue", sensitivity_pvalue()
        details = {}
    else:
        if not isinstance(proj, ProjectionParam):
            proj = ProjectionParam(float(proj), N)
        elif proj.N != N:
            proj = ProjectionParam(proj.c, N)
        mechanism, sens = "pvalue_projected", sensitivity_pvalue_projected(N, proj)
        p = min(p, proj.p_star)
        details = {"c": proj.c, "p_star": proj.p_star}
    scale = budget.scale(sens)
    if sens == 0.0:
        # exp(-N/c) underflowed: every projected p-value is 0, a constant output
        raw = p
        details["noise_free"] = True
    else:
        raw = p + float(laplace_noise(scale, seed, STREAM_PVALUE)[0])
    details["raw_value"] = raw
    return ReleaseReport(mechanism, budget.epsilon, sens, scale, rngmod.check_seed(seed),
                         [(snp_id, min(max(raw, 0.0), 1.0))], details=details)


def statistic_sensitivity(kind: str, N: int) -> float:
    if kind == "chi2":
        return sensitivity_chi2(N)
    if kind == "pvalue":
        return sensitivity_pvalue()
    raise ValueError(f"kind must be 'chi2' or 'pvalue', got {kind!r}")


def rank_by_relevance(values, kind: str) -> np.ndarray:
    """Indices ordered most relevant first; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    idx = np.arange(values.size)
    key = -values if kind == "chi2" else values
    return np.lexsort((idx, key))


def select_top_m(stats, M: int, kind: str, N: int, budget: PrivacyBudget,
                 seed: int = 0) -> np.ndarray:
    """Private selection of the M most relevant SNPs (first two steps of the top-M release).

    Returns the selected SNP indices, most relevant first.
    """
    stats = np.asarray(stats, dtype=np.float64)
    if stats.ndim != 1 or stats.size == 0:
        raise ValueError("stats must be a nonempty vector")
    if not 1 <= M <= stats.size:
        raise ValueError(f"M must be in [1, {stats.size}], got {M}")
    S = statistic_sensitivity(kind, N)
    scale1 = 4.0 * M * S / budget.epsilon
    perturbed = stats + laplace_noise(scale1, seed, STREAM_TOPM_SELECT, 0, stats.size)
    return rank_by_relevance(perturbed, kind)[:M]


def release_top_m(stats, M: int, kind: str, N: int, budget: PrivacyBudget,
                  seed: int = 0, ids: Sequence[str] | None = None) -> ReleaseReport:
    """Two-stage release of the M most relevant per-SNP statistics.

    Stage 1 perturbs every statistic at scale 4M*S/epsilon and keeps the top M
    by perturbed value (largest chi-square, smallest p-value). Stage 2 adds
    fresh noise at scale 2M*S/epsilon to the *true* statistics of the selected
    SNPs; only these stage-2 values are released.
    """
    stats = np.asarray(stats, dtype=np.float64)
    ids = list(ids) if ids is not None else [f"snp{i}" for i in range(stats.size)]
    if len(ids) != stats.size:
        raise ValueError("one id per statistic required")
    selected = select_top_m(stats, M, kind, N, budget, seed)
    S = statistic_sensitivity(kind, N)
    scale1 = 4.0 * M * S / budget.epsilon
    scale2 = 2.0 * M * S / budget.epsilon
    released = stats[selected] + laplace_noise_at(scale2, seed, STREAM_TOPM_RELEASE, selected)
    sel_ids = [ids[i] for i in selected]
    return ReleaseReport(
        f"top_m_{kind}", budget.epsilon, S, scale2, rngmod.check_seed(seed),
        [(i, float(v)) for i, v in zip(sel_ids, released)], selected_ids=sel_ids,
        details={"M": M, "N": N, "stage1_noise_scale": scale1})


def dataset_statistics(dataset: GwasDataset, kind: str, empty_rows: str = "drop") -> np.ndarray:
    """Exact per-SNP chi-square statistics or p-values of a balanced dataset.

    ``empty_rows`` decides what happens to SNPs with an unobserved genotype:
    ``"drop"`` evaluates the statistic over the observed genotypes only,
    ``"error"`` raises :class:`MarginError`.
    """
    if not dataset.balanced:
        raise BalanceError("top-M release needs equal cases and controls")
    tables = all_tables(dataset)
    empty = (tables.sum(axis=2) == 0).any(axis=1)
    if empty.any() and empty_rows == "error":
        bad = [dataset.snp_ids[j] for j in np.where(empty)[0][:5]]
        raise MarginError(f"SNPs with an unobserved genotype: {', '.join(bad)}")
    chi2 = pearson_chi2_observed(tables)
    return chi2 if kind == "chi2" else np.exp(-chi2 / 2.0)


def release_top_m_dataset(dataset: GwasDataset, M: int, kind: str,
                          budget: PrivacyBudget, seed: int = 0,
                          empty_rows: str = "drop") -> ReleaseReport:
    stats = dataset_statistics(dataset, kind, empty_rows)
    report = release_top_m(stats, M, kind, dataset.n_individuals, budget, seed,
                           ids=dataset.snp_ids)
    n_empty = int((all_tables(dataset).sum(axis=2) == 0).any(axis=1).sum())
    report.details["snps_with_unobserved_genotype"] = n_empty
    return report


def output_logdensity(statistic: float, scale: float, x) -> np.ndarray:
    """Log-density of ``statistic + Laplace(0, scale)`` at the points ``x``."""
    return laplace_logpdf(x, statistic, scale)


def mechanism_statistic(table, kind: str) -> float:
    """The exact quantity a single-table release perturbs."""
    chi2 = chi2_statistic(table)
    return chi2 if kind == "chi2" else pvalue_df2(chi2)


def adjacent_tables(table: ContingencyTable3x2) -> Iterable[ContingencyTable3x2]:
    """Balanced positive-margin tables differing from ``table`` in one individual's genotype."""
    counts = table.counts
    for s in range(2):
        for src in range(3):
            if counts[src, s] == 0:
                continue
            for dst in range(3):
                if dst == src:
                    continue
                new = counts.copy()
                new[src, s] -= 1
                new[dst, s] += 1
                t = ContingencyTable3x2(new)
                if t.positive_margins:
                    yield t
