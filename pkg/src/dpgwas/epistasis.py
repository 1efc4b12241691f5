"""Private detection of SNP-SNP interactions with perturbed ridge logistic regression.

Each model term is a main effect ``(s,)`` (three one-hot slots, genotypes
0/1/2) or a pairwise interaction ``(s, t)`` (nine slots, genotype pairs
00, 01, ..., 22). A feature vector is a leading 1 for the intercept followed by
the blocks in term order. Labels are +1 for cases and -1 for controls.

The fitted objective is

    sum_i log(1 + exp(-y_i beta.x_i)) + 1/2 lambda ||beta[1:]||^2
        + (1/N) b.beta + 1/2 delta ||beta||^2

where b is random with density proportional to exp(-eps_b ||b|| / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from .core_stats import GwasDataset

Term = tuple


def normalize_term(term) -> Term:
    term = tuple(int(s) for s in (term if isinstance(term, (tuple, list)) else (term,)))
    if len(term) == 1:
        return term
    if len(term) == 2 and term[0] != term[1]:
        return tuple(sorted(term))
    raise ValueError(f"terms are single SNPs or pairs of distinct SNPs, got {term}")


def term_size(term: Term) -> int:
    return 3 if len(term) == 1 else 9


def term_df(term: Term) -> int:
    """Free parameters a term adds on top of its marginal terms."""
    return 2 if len(term) == 1 else 4


@dataclass(frozen=True)
class FeatureEncoding:
    terms: tuple

    def __post_init__(self):
        terms = tuple(normalize_term(t) for t in self.terms)
        if len(set(terms)) != len(terms):
            raise ValueError("duplicate model terms")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return 1 + sum(term_size(t) for t in self.terms)

    @property
    def K(self) -> int:
        """Number of effects plus one; also the number of ones in every feature vector."""
        return len(self.terms) + 1

    @property
    def n_free(self) -> int:
        return 1 + sum(term_df(t) for t in self.terms)

    def block_slices(self) -> dict:
        out, start = {}, 1
        for t in self.terms:
            out[t] = slice(start, start + term_size(t))
            start += term_size(t)
        return out

    def describe(self, snp_ids=None) -> list[str]:
        name = (lambda s: snp_ids[s]) if snp_ids is not None else (lambda s: f"snp{s}")
        return ["x".join(name(s) for s in t) for t in self.terms]


@dataclass
class LabeledDesign:
    x: np.ndarray
    y: np.ndarray
    K: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.x.ndim != 2 or self.x.shape[0] != self.y.size:
            raise ValueError("x must be N x d with one label per row")
        if not np.isin(self.y, (-1.0, 1.0)).all():
            raise ValueError("labels must be -1 or +1")

    @property
    def N(self) -> int:
        return self.y.size


def encode_features(genotypes, terms) -> np.ndarray:
    """Feature matrix (or vector, for one individual) for the given terms.

    ``genotypes`` holds minor-allele counts indexed by SNP: shape (n_snps,) for
    one individual or (N, n_snps).
    """
    enc = terms if isinstance(terms, FeatureEncoding) else FeatureEncoding(tuple(terms))
    g = np.asarray(genotypes)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    if g.size and (g.min() < 0 or g.max() > 2 or not np.array_equal(g, np.round(g))):
        raise ValueError("genotype values must be 0, 1 or 2")
    g = g.astype(np.int64)
    x = np.zeros((g.shape[0], enc.dim))
    x[:, 0] = 1.0
    rows = np.arange(g.shape[0])
    for t, sl in enc.block_slices().items():
        state = g[:, t[0]] if len(t) == 1 else 3 * g[:, t[0]] + g[:, t[1]]
        x[rows, sl.start + state] = 1.0
    return x[0] if single else x


def design_from_dataset(dataset: GwasDataset, terms) -> LabeledDesign:
    enc = terms if isinstance(terms, FeatureEncoding) else FeatureEncoding(tuple(terms))
    x = encode_features(dataset.genotypes, enc)
    return LabeledDesign(x, 2.0 * dataset.phenotype - 1.0, enc.K)


def _penalty_diag(dim: int, lam: float) -> np.ndarray:
    d = np.full(dim, float(lam))
    d[0] = 0.0
    return d


def neg_log_likelihood(beta, design: LabeledDesign) -> float:
    margins = design.y * (design.x @ beta)
    return float(np.logaddexp(0.0, -margins).sum())


def objective(beta, design: LabeledDesign, lam: float) -> float:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (design.x.shape[1],):
        raise ValueError(f"beta has shape {beta.shape}, design has {design.x.shape[1]} columns")
    return neg_log_likelihood(beta, design) + 0.5 * float(np.sum(_penalty_diag(beta.size, lam) * beta ** 2))


def objective_gradient(beta, design: LabeledDesign, lam: float) -> np.ndarray:
    margins = design.y * (design.x @ beta)
    w = -design.y * expit(-margins)
    return design.x.T @ w + _penalty_diag(beta.size, lam) * beta


def objective_hessian(beta, design: LabeledDesign, lam: float) -> np.ndarray:
    margins = design.y * (design.x @ beta)
    s = expit(margins)
    curv = s * (1.0 - s)
    return (design.x * curv[:, None]).T @ design.x + np.diag(_penalty_diag(beta.size, lam))


def perturbed_objective(beta, design: LabeledDesign, lam: float, b) -> float:
    return objective(beta, design, lam) + float(np.dot(b, beta)) / design.N


def algorithm2_params(epsilon: float, lam: float, c: float, K: int, N: int):
    """Privacy split for the perturbed fit: returns ``(eps_prime, delta)``.

    ``eps_prime = eps - log(1 + 2cK/(N lam) + c^2 K^2/(N^2 lam^2))``; when that is
    not positive, ``delta = cK/(N (e^{eps/4} - 1)) - lam`` and
    ``eps_prime = eps / (2K)``.
    """
    if min(epsilon, lam, c, K, N) <= 0:
        raise ValueError("epsilon, lambda, c, K and N must all be positive")
    r = c * K / (N * lam)
    eps_prime = epsilon - math.log1p(2.0 * r + r * r)
    if eps_prime > 0:
        return eps_prime, 0.0
    delta = c * K / (N * math.expm1(epsilon / 4.0)) - lam
    return epsilon / (2.0 * K), delta


def sample_perturbation(dim: int, epsilon_used: float, gen: np.random.Generator) -> np.ndarray:
    """Draw b with density proportional to exp(-epsilon_used * ||b|| / 2)."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if not epsilon_used > 0:
        raise ValueError("epsilon must be positive")
    norm = gen.gamma(shape=dim, scale=2.0 / epsilon_used)
    direction = gen.standard_normal(dim)
    nrm = np.linalg.norm(direction)
    while nrm == 0.0:
        direction = gen.standard_normal(dim)
        nrm = np.linalg.norm(direction)
    return norm * direction / nrm


@dataclass(frozen=True)
class EpistasisConfig:
    """Settings for one private fit.

    ``delta_norm``: ``"squared"`` adds 1/2 delta ||beta||^2, ``"literal"`` adds
    1/2 delta ||beta||. ``noise_epsilon``: ``"eps_prime"`` draws b at the
    adjusted epsilon, ``"literal"`` at the input epsilon.
    """

    epsilon: float
    lam: float = 1.0
    c: float = 0.25
    criterion: str = "bic"
    tol: float = 1e-9
    max_iter: int = 100
    delta_norm: str = "squared"
    noise_epsilon: str = "eps_prime"

    def __post_init__(self):
        if min(self.epsilon, self.lam, self.c) <= 0:
            raise ValueError("epsilon, lambda and c must be positive")
        object.__setattr__(self, "criterion", self.criterion.lower())
        if self.criterion not in ("aic", "bic"):
            raise ValueError("criterion must be AIC or BIC")
        if self.delta_norm not in ("squared", "literal"):
            raise ValueError("delta_norm must be 'squared' or 'literal'")
        if self.noise_epsilon not in ("eps_prime", "literal"):
            raise ValueError("noise_epsilon must be 'eps_prime' or 'literal'")


@dataclass
class FitReport:
    beta: np.ndarray
    eps_prime: float
    delta: float
    noise_epsilon: float
    noise_mode: str
    iterations: int
    grad_norm: float
    converged: bool
    seed: int
    objective: float
    nll: float
    b: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "eps_prime": self.eps_prime, "delta": self.delta,
                "noise_epsilon": self.noise_epsilon, "noise_mode": self.noise_mode,
                "iterations": self.iterations, "grad_norm": self.grad_norm,
                "converged": self.converged, "seed": self.seed,
                "objective": self.objective, "nll": self.nll}


_SMOOTH = 1e-12


def _total(beta, design, lam, b, delta, delta_norm):
    val = perturbed_objective(beta, design, lam, b)
    if delta:
        if delta_norm == "squared":
            val += 0.5 * delta * float(beta @ beta)
        else:
            val += 0.5 * delta * math.sqrt(float(beta @ beta) + _SMOOTH)
    return val


def _total_grad_hess(beta, design, lam, b, delta, delta_norm):
    g = objective_gradient(beta, design, lam) + b / design.N
    H = objective_hessian(beta, design, lam)
    if delta:
        if delta_norm == "squared":
            g = g + delta * beta
            H = H + delta * np.eye(beta.size)
        else:
            r = math.sqrt(float(beta @ beta) + _SMOOTH)
            g = g + 0.5 * delta * beta / r
            H = H + 0.5 * delta * (np.eye(beta.size) / r - np.outer(beta, beta) / r ** 3)
    return g, H


def minimize_newton(design: LabeledDesign, lam: float, b, delta: float = 0.0,
                    delta_norm: str = "squared", tol: float = 1e-9, max_iter: int = 100,
                    beta0=None):
    """Damped Newton iterations with a backtracking line search.

    Returns ``(beta, iterations, grad_norm, converged)``; on non-convergence the
    best iterate is returned.
    """
    d = design.x.shape[1]
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=np.float64)
    b = np.zeros(d) if b is None else np.asarray(b, dtype=np.float64)
    f = _total(beta, design, lam, b, delta, delta_norm)
    gnorm = math.inf
    for it in range(max_iter + 1):
        g, H = _total_grad_hess(beta, design, lam, b, delta, delta_norm)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return beta, it, gnorm, True
        if it == max_iter:
            break
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ step)
        if slope >= 0:
            step, slope = -g, -float(g @ g)
        t = 1.0
        while True:
            cand = beta + t * step
            fc = _total(cand, design, lam, b, delta, delta_norm)
            if fc <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if fc > f:
            break
        beta, f = cand, fc
    return beta, max_iter, gnorm, False


def fit_private_logistic(design: LabeledDesign, config: EpistasisConfig,
                         seed: int = 0) -> FitReport:
    """Objective-perturbed ridge logistic fit.

    Non-convergence is reported through ``converged`` (with the best iterate)
    rather than raised.
    """
    if design.N == 0:
        raise ValueError("design is empty")
    eps_prime, delta = algorithm2_params(config.epsilon, config.lam, config.c,
                                         design.K, design.N)
    noise_eps = eps_prime if config.noise_epsilon == "eps_prime" else config.epsilon
    gen = rngmod.generator(seed, 0)
    b = sample_perturbation(design.x.shape[1], noise_eps, gen)
    beta, it, gnorm, ok = minimize_newton(design, config.lam, b, delta, config.delta_norm,
                                          config.tol, config.max_iter)
    return FitReport(beta=beta, eps_prime=eps_prime, delta=delta, noise_epsilon=noise_eps,
                     noise_mode=f"{config.noise_epsilon}/{config.delta_norm}",
                     iterations=it, grad_norm=gnorm, converged=ok, seed=rngmod.check_seed(seed),
                     objective=_total(beta, design, config.lam, b, delta, config.delta_norm),
                     nll=neg_log_likelihood(beta, design), b=b)


def fit_ridge_logistic(design: LabeledDesign, lam: float, tol: float = 1e-10,
                       max_iter: int = 100) -> np.ndarray:
    """Non-private fit (no perturbation, no extra regularization)."""
    beta, _, _, ok = minimize_newton(design, lam, None, 0.0, tol=tol, max_iter=max_iter)
    if not ok:
        raise RuntimeError("Newton iterations did not converge")
    return beta


def information_criterion(nll: float, n_free: int, N: int, criterion: str) -> float:
    if criterion == "aic":
        return 2.0 * n_free + 2.0 * nll
    if criterion == "bic":
        return n_free * math.log(N) + 2.0 * nll
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class SelectionResult:
    terms: tuple
    score: float
    fit: FitReport
    history: list = field(default_factory=list)
    n_fits: int = 0


def _score_model(dataset, terms, config, seed):
    enc = FeatureEncoding(tuple(terms))
    design = design_from_dataset(dataset, enc)
    fit = fit_private_logistic(design, config, seed)
    return information_criterion(fit.nll, enc.n_free, design.N, config.criterion), fit


def _canonical(terms):
    return tuple(sorted(terms, key=lambda t: (len(t), t)))


def stepwise_select(dataset: GwasDataset, candidate_snps: Sequence, config: EpistasisConfig,
                    seed: int = 0) -> SelectionResult:
    """Greedy forward selection (main effects, then interactions) and backward deletion.

    Every candidate model is scored by AIC or BIC computed from the private
    fit's unpenalized negative log-likelihood. Interactions are offered for
    every candidate pair, whether or not its main effects were selected, so a
    pure interaction without marginal signal can still enter. Any term may be
    removed in the backward pass. Each candidate fit gets its own seed
    derived from ``seed`` and the candidate's model, so scoring a sweep in any
    order gives the same result.
    """
    snps = [dataset.snp_index(s) for s in candidate_snps]
    if not snps:
        raise ValueError("candidate SNP set is empty")
    n_fits = 0

    def score(terms):
        nonlocal n_fits
        n_fits += 1
        key = [x for t in _canonical(terms) for x in (len(t),) + t]
        return _score_model(dataset, _canonical(terms), config,
                            rngmod.child_seed(seed, len(key), *key))

    current: tuple = ()
    cur_score, cur_fit = score(current)
    history = [("start", (), cur_score)]

    def step(candidates, kind):
        nonlocal current, cur_score, cur_fit
        best = None
        for cand in candidates:
            s, fit = score(cand)
            if s < cur_score and (best is None or s < best[0]):
                best = (s, fit, cand)
        if best is None:
            return False
        added = set(best[2]) ^ set(current)
        cur_score, cur_fit, current = best[0], best[1], _canonical(best[2])
        history.append((kind, tuple(added), cur_score))
        return True

    while step([current + ((s,),) for s in snps if (s,) not in current], "add"):
        pass

    def pair_candidates():
        ordered = sorted(snps)
        return [current + ((a, b),) for i, a in enumerate(ordered) for b in ordered[i + 1:]
                if (a, b) not in current]

    while step(pair_candidates(), "add"):
        pass

    def deletions():
        return [tuple(u for u in current if u != t) for t in current]

    while step(deletions(), "remove"):
        pass
    return SelectionResult(terms=current, score=cur_score, fit=cur_fit,
                           history=history, n_fits=n_fits)
