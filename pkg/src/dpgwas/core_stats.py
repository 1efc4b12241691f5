"""Exact (non-private) contingency-table statistics for case/control SNP data.

Each SNP is summarized by a 3x2 table of counts: rows are genotypes (number of
minor alleles 0, 1, 2) and columns are disease status (0 = control, 1 = case).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CONTROL, CASE = 0, 1


class MarginError(ValueError):
    """A row or column margin is zero where a statistic needs it positive."""


class BalanceError(ValueError):
    """The table or dataset does not have equally many cases and controls."""


class FormatError(ValueError):
    """Malformed genotype text input; message carries line and column."""

    def __init__(self, path, line: int, column: int, message: str):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {message}")


@dataclass(frozen=True, eq=False)
class ContingencyTable3x2:
    """Genotype-by-status counts; ``counts[g, s]`` for genotype g and status s."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64)
        if arr.shape != (3, 2):
            raise ValueError(f"expected a 3x2 table, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValueError("cell counts must be nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @classmethod
    def from_rows(cls, rows) -> "ContingencyTable3x2":
        return cls(np.asarray(rows))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_margins(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.counts.sum(axis=1))

    @property
    def col_margins(self) -> tuple[int, int]:
        return tuple(int(v) for v in self.counts.sum(axis=0))

    @property
    def balanced(self) -> bool:
        c0, c1 = self.col_margins
        return c0 == c1

    @property
    def positive_margins(self) -> bool:
        return min(self.row_margins) > 0 and min(self.col_margins) > 0

    def tolist(self) -> list[list[int]]:
        return self.counts.tolist()

    def __eq__(self, other):
        if not isinstance(other, ContingencyTable3x2):
            return NotImplemented
        return bool(np.array_equal(self.counts, other.counts))

    def __hash__(self):
        return hash(tuple(self.counts.ravel().tolist()))

    def __repr__(self):
        return f"ContingencyTable3x2({self.tolist()})"


@dataclass(frozen=True, eq=False)
class GwasDataset:
    """N individuals by M' SNPs, with a binary phenotype per individual."""

    genotypes: np.ndarray
    phenotype: np.ndarray
    snp_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        g = np.array(self.genotypes, dtype=np.int8)
        y = np.array(self.phenotype, dtype=np.int8).ravel()
        if g.ndim != 2:
            raise ValueError("genotypes must be an N x M' matrix")
        if g.shape[0] != y.shape[0]:
            raise ValueError(
                f"{g.shape[0]} genotype rows but {y.shape[0]} phenotype values")
        if g.size and (g.min() < 0 or g.max() > 2):
            raise ValueError("genotype values must be in {0, 1, 2}")
        if y.size and (y.min() < 0 or y.max() > 1):
            raise ValueError("phenotype values must be in {0, 1}")
        ids = tuple(str(s) for s in self.snp_ids) or tuple(
            f"snp{i}" for i in range(g.shape[1]))
        if len(ids) != g.shape[1]:
            raise ValueError(f"{len(ids)} SNP ids for {g.shape[1]} SNPs")
        if len(set(ids)) != len(ids):
            raise ValueError("SNP ids must be unique")
        g.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "genotypes", g)
        object.__setattr__(self, "phenotype", y)
        object.__setattr__(self, "snp_ids", ids)

    @property
    def n_individuals(self) -> int:
        return self.genotypes.shape[0]

    @property
    def n_snps(self) -> int:
        return self.genotypes.shape[1]

    @property
    def n_cases(self) -> int:
        return int(self.phenotype.sum())

    @property
    def n_controls(self) -> int:
        return self.n_individuals - self.n_cases

    @property
    def balanced(self) -> bool:
        return self.n_cases == self.n_controls

    def snp_index(self, snp) -> int:
        """Resolve an SNP id or integer index to a column index."""
        if isinstance(snp, (int, np.integer)):
            idx = int(snp)
            if not 0 <= idx < self.n_snps:
                raise IndexError(f"SNP index {idx} out of range [0, {self.n_snps})")
            return idx
        try:
            return self.snp_ids.index(str(snp))
        except ValueError:
            raise KeyError(f"unknown SNP id {snp!r}") from None

    def __eq__(self, other):
        if not isinstance(other, GwasDataset):
            return NotImplemented
        return (self.snp_ids == other.snp_ids
                and np.array_equal(self.genotypes, other.genotypes)
                and np.array_equal(self.phenotype, other.phenotype))

    __hash__ = None


def table_from_snp(dataset: GwasDataset, snp_index) -> ContingencyTable3x2:
    idx = dataset.snp_index(snp_index)
    counts = np.zeros((3, 2), dtype=np.int64)
    np.add.at(counts, (dataset.genotypes[:, idx], dataset.phenotype), 1)
    return ContingencyTable3x2(counts)


def all_tables(dataset: GwasDataset) -> np.ndarray:
    """Counts for every SNP at once, shape (M', 3, 2)."""
    g = dataset.genotypes.astype(np.int64)
    case = dataset.phenotype.astype(bool)
    out = np.empty((dataset.n_snps, 3, 2), dtype=np.int64)
    for genotype in range(3):
        hit = g == genotype
        out[:, genotype, CASE] = hit[case].sum(axis=0)
        out[:, genotype, CONTROL] = hit[~case].sum(axis=0)
    return out


def pearson_chi2(counts) -> np.ndarray:
    """Pearson independence statistic over the last two axes.

    No validation: real-valued (e.g. noise-perturbed) tables are accepted, and a
    zero margin yields nan or inf. Use :func:`chi2_statistic` for checked input.
    """
    t = np.asarray(counts, dtype=np.float64)
    rows = t.sum(axis=-1, keepdims=True)
    cols = t.sum(axis=-2, keepdims=True)
    total = t.sum(axis=(-2, -1), keepdims=True)
    expected = rows * cols / total
    with np.errstate(divide="ignore", invalid="ignore"):
        return ((t - expected) ** 2 / expected).sum(axis=(-2, -1))


def pearson_chi2_observed(counts) -> np.ndarray:
    """Pearson statistic over observed genotypes: rows with a zero margin are skipped."""
    t = np.asarray(counts, dtype=np.float64)
    rows = t.sum(axis=-1, keepdims=True)
    cols = t.sum(axis=-2, keepdims=True)
    total = t.sum(axis=(-2, -1), keepdims=True)
    expected = rows * cols / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (t - expected) ** 2 / expected, 0.0)
    return terms.sum(axis=(-2, -1))


def chi2_statistic(table) -> float:
    """Pearson chi-square of independence for a 3x2 table with positive margins."""
    if not isinstance(table, ContingencyTable3x2):
        table = ContingencyTable3x2(table)
    if not table.positive_margins:
        raise MarginError(
            f"chi-square needs positive margins, got rows {table.row_margins} "
            f"and columns {table.col_margins}")
    return float(pearson_chi2(table.counts))


def balanced_chi2(a, b, m, n, N) -> float:
    """Closed form of the statistic for a balanced table.

    The table is parameterized by ``a`` = (genotype 0, control), ``b`` =
    (genotype 1, control), and genotype row margins ``m`` and ``n``; each column
    holds N/2 individuals.
    """
    rest = N - m - n
    return (2 * a - m) ** 2 / m + (2 * b - n) ** 2 / n + (2 * a - m + 2 * b - n) ** 2 / rest


def pvalue_df2(chi2) -> float:
    """Upper-tail probability of a chi-square variable with two degrees of freedom."""
    if chi2 < 0:
        raise ValueError(f"chi-square value must be nonnegative, got {chi2}")
    return math.exp(-chi2 / 2.0)


def maf_vector(dataset: GwasDataset, group) -> np.ndarray:
    """Per-SNP minor-allele frequency, averaged over cases or controls.

    Args:
      dataset: the genotype data.
      group: ``"case"``/``"control"`` or 1/0.
    """
    status = {"case": CASE, "control": CONTROL, 1: CASE, 0: CONTROL}.get(group)
    if status is None:
        raise ValueError(f"group must be 'case' or 'control', got {group!r}")
    members = dataset.phenotype == status
    if not members.any():
        raise ValueError(f"group {group!r} is empty")
    return dataset.genotypes[members].mean(axis=0, dtype=np.float64) / 2.0


# Text format ----------------------------------------------------------------

def _split(line: str) -> list[str]:
    return re.split(r"[,\t]", line.rstrip("\r\n"))


def read_genotypes(path) -> GwasDataset:
    """Read the delimited genotype format.

    One row per individual: phenotype (0/1) first, then one genotype (0/1/2)
    per SNP. Fields are separated by commas or tabs. An optional header row
    names the SNPs (its first field labels the phenotype column).
    """
    path = Path(path)
    rows, ids = [], None
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = _split(line)
            if ids is None and not rows and not all(f.strip().isdigit() for f in fields):
                ids = [f.strip() for f in fields[1:]]
                width = len(fields)
                continue
            if width is None:
                width = len(fields)
            if len(fields) != width:
                raise FormatError(path, lineno, min(len(fields), width) + 1,
                                  f"expected {width} fields, found {len(fields)}")
            values = []
            for col, raw in enumerate(fields, start=1):
                allowed = "01" if col == 1 else "012"
                raw = raw.strip()
                if len(raw) != 1 or raw not in allowed:
                    what = "phenotype" if col == 1 else "genotype"
                    raise FormatError(path, lineno, col,
                                      f"invalid {what} value {raw!r}")
                values.append(int(raw))
            rows.append(values)
    if not rows:
        raise FormatError(path, 1, 1, "no data rows")
    data = np.array(rows, dtype=np.int8)
    return GwasDataset(data[:, 1:], data[:, 0], tuple(ids) if ids else ())


def format_genotypes(dataset: GwasDataset, delimiter: str = "\t") -> str:
    """The text form of ``dataset``, header row included."""
    digits = np.array(["0", "1", "2"])
    body = np.column_stack([digits[dataset.phenotype], digits[dataset.genotypes]])
    lines = [delimiter.join(("phenotype",) + dataset.snp_ids)]
    lines.extend(delimiter.join(row) for row in body)
    return "\n".join(lines) + "\n"


def write_genotypes(dataset: GwasDataset, path, delimiter: str | None = None) -> None:
    """Write ``dataset`` with a header row; comma for .csv files, tab otherwise."""
    path = Path(path)
    if delimiter is None:
        delimiter = "," if path.suffix.lower() == ".csv" else "\t"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_genotypes(dataset, delimiter))


def tables_equal_margins(t1: Sequence, t2: Sequence) -> bool:
    a, b = np.asarray(t1), np.asarray(t2)
    return (np.array_equal(a.sum(axis=0), b.sum(axis=0))
            and np.array_equal(a.sum(axis=1), b.sum(axis=1)))


def read_table(path) -> ContingencyTable3x2:
    """Read a 3x2 table: three lines of two counts separated by commas, tabs or spaces.

    Blank lines and lines starting with ``#`` are ignored.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if len(rows) == 3:
                raise FormatError(path, lineno, 1, "more than three table rows")
            fields = re.split(r"[,\t ]+", text)
            if len(fields) != 2:
                raise FormatError(path, lineno, min(len(fields), 2) + 1,
                                  f"expected 2 counts, found {len(fields)}")
            row = []
            col = 1
            for raw in fields:
                start = line.index(raw, col - 1) + 1
                if not raw.isdigit():
                    raise FormatError(path, lineno, start, f"invalid count {raw!r}")
                row.append(int(raw))
                col = start + len(raw)
            rows.append(row)
    if len(rows) != 3:
        raise FormatError(path, max(len(rows), 1), 1, f"expected 3 table rows, found {len(rows)}")
    return ContingencyTable3x2(rows)
