"""Markov-basis random walks on 3x2 tables with fixed margins.

The fiber of a table is the set of nonnegative integer tables sharing its row
and column margins. For 3x2 tables the moves

    +1 at (i, 0), -1 at (i, 1), -1 at (j, 0), +1 at (j, 1)

for row pairs (i, j) in {(0, 1), (0, 2), (1, 2)}, together with their
negations, connect every fiber.

Two proposal kinds are available. ``"unit"`` proposes one of the six signed
moves uniformly and accepts by Metropolis. ``"line"`` picks a row pair
uniformly and resamples the whole line ``t + k * move`` from the target's
conditional law (a Gibbs step). Both leave the target invariant; the line
sampler mixes in a few steps even on fibers of tables with 10^5 individuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator

import numpy as np

from . import rng as rngmod
from .core_stats import ContingencyTable3x2, pearson_chi2

ROW_PAIRS = tuple(combinations(range(3), 2))
MAX_ENUMERATION_N = 60
_BLOCK = 1 << 14

# A small-sample start table and three large tables (totals 10,000 and 100,000)
SMALL_TABLE = ((1, 3), (8, 12), (41, 35))
LARGE_TABLES = {
    1: ((1400, 1600), (1900, 1300), (1700, 2100)),
    2: ((14000, 16000), (19000, 13000), (17000, 21000)),
    3: ((1, 3), (26000, 21000), (23999, 28997)),
}


@dataclass(frozen=True, eq=False)
class MarkovMove:
    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=np.int64)
        if d.shape != (3, 2):
            raise ValueError("a move is a 3x2 integer grid")
        if d.sum(axis=0).any() or d.sum(axis=1).any():
            raise ValueError("a move must have zero row and column sums")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    def __neg__(self):
        return MarkovMove(-self.delta)

    def __eq__(self, other):
        return isinstance(other, MarkovMove) and np.array_equal(self.delta, other.delta)

    def __hash__(self):
        return hash(tuple(self.delta.ravel().tolist()))

    def __repr__(self):
        return f"MarkovMove({self.delta.tolist()})"


def basis_move(i: int, j: int, sign: int = 1) -> MarkovMove:
    d = np.zeros((3, 2), dtype=np.int64)
    d[i, 0], d[i, 1], d[j, 0], d[j, 1] = 1, -1, -1, 1
    return MarkovMove(sign * d)


MARKOV_BASIS = tuple(basis_move(i, j) for i, j in ROW_PAIRS)
SIGNED_MOVES = tuple(m for b in MARKOV_BASIS for m in (b, -b))


@dataclass(frozen=True)
class FiberWalkConfig:
    steps: int
    burn_in: int = 10_000
    thin: int = 1
    target: str = "hypergeometric"
    perturb: str = "none"
    epsilon: float | None = None
    proposal: str = "unit"

    def __post_init__(self):
        if self.steps <= 0 or self.burn_in < 0 or self.steps <= self.burn_in:
            raise ValueError("need steps > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.target not in ("uniform", "hypergeometric"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.perturb not in ("none", "statistic", "cells"):
            raise ValueError(f"unknown perturbation {self.perturb!r}")
        if self.perturb != "none" and not (self.epsilon and self.epsilon > 0):
            raise ValueError("perturbation needs a positive epsilon")
        if self.proposal not in ("unit", "line"):
            raise ValueError(f"unknown proposal {self.proposal!r}")


def _counts(table) -> np.ndarray:
    if isinstance(table, ContingencyTable3x2):
        return table.counts
    return ContingencyTable3x2(table).counts


def apply_move(table, move: MarkovMove) -> ContingencyTable3x2 | None:
    """``table + move``, or None when a cell would become negative."""
    new = _counts(table) + move.delta
    if (new < 0).any():
        return None
    return ContingencyTable3x2(new)


def log_hypergeometric_weight(table) -> float:
    """Log of 1 / prod(cell!): the fiber law under independence, up to a constant."""
    return -sum(math.lgamma(int(v) + 1) for v in _counts(table).ravel())


def target_log_weight(table, target: str) -> float:
    if target == "uniform":
        return 0.0
    return log_hypergeometric_weight(table)


def acceptance_probability(table, proposed, target: str) -> float:
    """Metropolis acceptance of a unit move; 0 for an infeasible proposal."""
    if proposed is None:
        return 0.0
    if target == "uniform":
        return 1.0
    return min(1.0, math.exp(log_hypergeometric_weight(proposed)
                             - log_hypergeometric_weight(table)))


def enumerate_fiber(row_margins, col_margins) -> list[ContingencyTable3x2]:
    """All 3x2 tables with the given margins (N <= 60)."""
    r = [int(v) for v in row_margins]
    c = [int(v) for v in col_margins]
    if len(r) != 3 or len(c) != 2 or min(r + c) < 0:
        raise ValueError("need three row and two column margins, all nonnegative")
    if sum(r) != sum(c):
        raise ValueError(f"row total {sum(r)} != column total {sum(c)}")
    if sum(r) > MAX_ENUMERATION_N:
        raise ValueError(f"fiber enumeration is limited to N <= {MAX_ENUMERATION_N}")
    out = []
    for a in range(min(r[0], c[0]) + 1):
        for b in range(min(r[1], c[0] - a) + 1):
            rest = c[0] - a - b
            if rest > r[2]:
                continue
            out.append(ContingencyTable3x2(
                [[a, r[0] - a], [b, r[1] - b], [rest, r[2] - rest]]))
    return out


def transition_matrix(fiber: list[ContingencyTable3x2], target: str) -> np.ndarray:
    """Exact transition matrix of the unit-move walk restricted to ``fiber``."""
    index = {t: k for k, t in enumerate(fiber)}
    P = np.zeros((len(fiber), len(fiber)))
    for k, t in enumerate(fiber):
        for move in SIGNED_MOVES:
            new = apply_move(t, move)
            acc = acceptance_probability(t, new, target)
            if acc > 0:
                P[k, index[new]] += acc / len(SIGNED_MOVES)
        P[k, k] += 1.0 - P[k].sum()
    return P


def _walk(counts, steps: int, target: str, proposal: str,
          gen: np.random.Generator) -> Iterator[list[int]]:
    """Yield the chain state after each step as a flat list [t00, t01, t10, ...]."""
    t = [int(v) for v in np.asarray(counts).ravel()]
    hyper = target == "hypergeometric"
    done = 0
    while done < steps:
        n = min(_BLOCK, steps - done)
        picks = gen.integers(0, 6 if proposal == "unit" else 3, size=n).tolist()
        unif = gen.random(n).tolist() if proposal == "unit" else None
        for s in range(n):
            if proposal == "unit":
                i, j = ROW_PAIRS[picks[s] >> 1]
                # sign +1: (i,0)+, (i,1)-, (j,0)-, (j,1)+
                if picks[s] & 1:
                    i, j = j, i
                up_a, dn_a, dn_b, up_b = 2 * i, 2 * i + 1, 2 * j, 2 * j + 1
                if t[dn_a] > 0 and t[dn_b] > 0:
                    if hyper:
                        ratio = t[dn_a] * t[dn_b] / ((t[up_a] + 1) * (t[up_b] + 1))
                        ok = ratio >= 1.0 or unif[s] < ratio
                    else:
                        ok = True
                    if ok:
                        t[up_a] += 1
                        t[up_b] += 1
                        t[dn_a] -= 1
                        t[dn_b] -= 1
            else:
                i, j = ROW_PAIRS[picks[s]]
                ri = t[2 * i] + t[2 * i + 1]
                rj = t[2 * j] + t[2 * j + 1]
                col0 = t[2 * i] + t[2 * j]
                if hyper:
                    x = int(gen.hypergeometric(ri, rj, col0)) if ri and rj and col0 else t[2 * i]
                else:
                    x = int(gen.integers(max(0, col0 - rj), min(ri, col0) + 1))
                t[2 * i], t[2 * i + 1] = x, ri - x
                t[2 * j], t[2 * j + 1] = col0 - x, rj - col0 + x
            yield t
        done += n


def walk_states(start, config: FiberWalkConfig, seed: int = 0) -> np.ndarray:
    """Retained chain states (after burn-in, every ``thin``-th), shape (n, 3, 2)."""
    start = _counts(start)
    gen = rngmod.generator(seed, 0)
    kept = []
    for step, t in enumerate(_walk(start, config.steps, config.target,
                                   config.proposal, gen), start=1):
        if step > config.burn_in and (step - config.burn_in) % config.thin == 0:
            kept.append(list(t))
    return np.array(kept, dtype=np.int64).reshape(-1, 3, 2)


def fiber_walk(start, config: FiberWalkConfig, seed: int = 0) -> Iterator[ContingencyTable3x2]:
    """Stream of retained chain states as tables."""
    start = _counts(start)
    gen = rngmod.generator(seed, 0)
    for step, t in enumerate(_walk(start, config.steps, config.target,
                                   config.proposal, gen), start=1):
        if step > config.burn_in and (step - config.burn_in) % config.thin == 0:
            yield ContingencyTable3x2(np.reshape(t, (3, 2)))


def independent_chain_states(start, n_chains: int, steps: int, target: str = "uniform",
                             seed: int = 0) -> np.ndarray:
    """Final states of ``n_chains`` independent unit-move chains from ``start``.

    Vectorized across chains; the final states are independent draws whose law
    converges to the target as ``steps`` grows. ``start`` is one table or a
    stack of shape (n_chains, 3, 2) giving every chain its own start, which
    lets chains on many different fibers run in one batch.
    """
    gen = rngmod.generator(seed, 1)
    arr = np.asarray(start.counts if isinstance(start, ContingencyTable3x2) else start)
    if arr.ndim == 3:
        if arr.shape[1:] != (3, 2) or arr.shape[0] != n_chains:
            raise ValueError("a stack of starts must have shape (n_chains, 3, 2)")
        if (arr < 0).any():
            raise ValueError("counts must be nonnegative")
        t = arr.reshape(n_chains, 6).astype(np.int64)
    else:
        t = np.repeat(_counts(start).reshape(1, 6), n_chains, axis=0).astype(np.int64)
    flat = t.ravel()
    base = np.arange(n_chains) * 6
    # cell offsets (up_a, dn_a, dn_b, up_b) for each of the six signed moves
    cells = np.array([[2 * i, 2 * i + 1, 2 * j, 2 * j + 1]
                      for a, b in ROW_PAIRS for i, j in ((a, b), (b, a))])
    for _ in range(steps):
        pick = gen.integers(0, 6, size=n_chains)
        u = gen.random(n_chains)
        idx = base[:, None] + cells[pick]
        v = flat[idx]
        feasible = (v[:, 1] > 0) & (v[:, 2] > 0)
        if target == "hypergeometric":
            ratio = (v[:, 1] * v[:, 2]) / ((v[:, 0] + 1) * (v[:, 3] + 1))
            accept = feasible & (u < ratio)
        else:
            accept = feasible
        step = accept.astype(np.int64)[:, None] * np.array([1, -1, -1, 1])
        flat[idx] = v + step
    return t.reshape(n_chains, 3, 2)


def perturbed_statistics(states: np.ndarray, perturb: str, epsilon: float | None,
                         seed: int = 0) -> np.ndarray:
    """Chi-square statistics of chain states under the chosen release mechanism.

    ``statistic``: exact statistic plus Laplace(0, 4/eps).
    ``cells``: statistic of the table after Laplace(0, 2/eps) noise on each cell.
    """
    states = np.asarray(states, dtype=np.float64)
    gen = rngmod.generator(seed, 2)
    if perturb == "none":
        return pearson_chi2(states)
    if perturb == "statistic":
        return pearson_chi2(states) + gen.laplace(0.0, 4.0 / epsilon, states.shape[0])
    if perturb == "cells":
        return pearson_chi2(states + gen.laplace(0.0, 2.0 / epsilon, states.shape))
    raise ValueError(f"unknown perturbation {perturb!r}")


def empirical_perturbed_distribution(start, config: FiberWalkConfig,
                                     seed: int = 0) -> np.ndarray:
    """Sample of (possibly perturbed) chi-square statistics along one chain."""
    states = walk_states(start, config, seed)
    return perturbed_statistics(states, config.perturb, config.epsilon, seed)


def pooled_perturbed_distribution(start, config: FiberWalkConfig, n_chains: int,
                                  seed: int = 0) -> np.ndarray:
    """Concatenated samples of ``n_chains`` independent chains with derived seeds."""
    return np.concatenate([
        empirical_perturbed_distribution(start, config, rngmod.child_seed(seed, k))
        for k in range(n_chains)])
