"""Negative samplers: UNS, NNCF, DNS, FairStatic and FairNeg.

Every strategy draws one negative per (user, positive) pair from the user's
train-unobserved items.  Draws go through an inverse CDF over candidates in
item-index order so a seeded generator reproduces them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .backbone import EmbeddingModel
from .dataset import GroupMap, InteractionTable
from .fairctl import GroupDistribution, project_simplex

UNS = "uns"
NNCF = "nncf"
DNS = "dns"
FAIRSTATIC = "fairstatic"
FAIRNEG = "fairneg"
STRATEGIES = (UNS, NNCF, DNS, FAIRSTATIC, FAIRNEG)


class EmptyCandidateError(ValueError):
    """A user has no unobserved item to sample."""


@dataclass(frozen=True)
class SamplerConfig:
    strategy: str = FAIRNEG
    beta: float = 0.5
    tau: float = 0.4
    dns_pool: int = 16
    popularity_exponent: float = 1.0
    candidate_pool: int = 0  # 0 = exact softmax over all candidates

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.dns_pool < 1:
            raise ValueError("dns_pool must be >= 1")
        if self.candidate_pool < 0:
            raise ValueError("candidate_pool must be >= 0")


# ---------------------------------------------------------------------------
# row-wise distributions over the catalog (zero outside the candidate set)


def _candidates(table: InteractionTable, users) -> np.ndarray:
    cand = ~table.positive_mask[np.asarray(users)]
    empty = ~cand.any(axis=1)
    if empty.any():
        raise EmptyCandidateError(f"user {np.asarray(users)[empty][0]} has no unobserved items")
    return cand


def fair_matrix(cand: np.ndarray, groups: GroupMap, p: np.ndarray) -> np.ndarray:
    """Group mass split evenly over each group's candidates.

    Mass of groups with no candidate for a user is redistributed over the
    remaining groups in proportion to their probabilities.
    """
    counts = cand.astype(float) @ groups.one_hot()
    mass = np.where(counts > 0, p, 0.0)
    mass /= mass.sum(axis=1, keepdims=True)
    per_item = np.divide(mass, counts, out=np.zeros_like(mass), where=counts > 0)
    return per_item[:, groups.item_group] * cand


def importance_matrix(scores: np.ndarray, cand: np.ndarray, tau: float) -> np.ndarray:
    """Softmax of ``score / tau`` restricted to candidates, max-shifted for stability."""
    z = np.where(cand, scores / tau, -np.inf)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _uniform_pool(cand: np.ndarray, size: int, rng) -> np.ndarray:
    """Restrict each row's candidates to ``size`` of them chosen uniformly without replacement."""
    keys = np.where(cand, rng.random(cand.shape), -1.0)
    k = np.minimum(size, cand.sum(axis=1))
    kth = -np.sort(-keys, axis=1)[np.arange(cand.shape[0]), k - 1]
    return cand & (keys >= kth[:, None])


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index drawn from each row of non-negative ``weights`` using uniforms ``u``."""
    cdf = np.cumsum(weights, axis=1)
    r = u * cdf[:, -1]
    idx = (cdf <= r[:, None]).sum(axis=1)
    last = weights.shape[1] - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)


ScoreFn = Callable[[np.ndarray], np.ndarray]


class NegativeSampler:
    """Batch sampler for one strategy over a fixed training table."""

    def __init__(self, config: SamplerConfig, train: InteractionTable, groups: GroupMap | None = None):
        self.config = config
        self.train = train
        self.groups = groups
        if config.strategy in (FAIRSTATIC, FAIRNEG) and groups is None:
            raise ValueError(f"{config.strategy} sampling needs an item group map")
        counts = np.maximum(train.item_degree(), 1).astype(float)
        self._popularity = counts ** config.popularity_exponent

    def weights(self, users, dist: GroupDistribution | None = None, score_fn: ScoreFn | None = None,
                rng=None) -> np.ndarray:
        """Row-stochastic ``len(users) x num_items`` sampling distribution (not used for DNS)."""
        cfg = self.config
        cand = _candidates(self.train, users)
        if cfg.strategy == UNS:
            w = cand.astype(float)
        elif cfg.strategy == NNCF:
            w = cand * self._popularity
        elif cfg.strategy == DNS:
            raise ValueError("DNS draws from a scored pool and has no closed-form weight matrix")
        else:
            w = fair_matrix(cand, self.groups, dist.p)
            if cfg.strategy == FAIRNEG and cfg.beta < 1.0:
                imp_cand = cand
                if cfg.candidate_pool:
                    imp_cand = _uniform_pool(cand, cfg.candidate_pool, rng)
                imp = importance_matrix(score_fn(np.asarray(users)), imp_cand, cfg.tau)
                w = cfg.beta * w + (1.0 - cfg.beta) * imp
            return w
        return w / w.sum(axis=1, keepdims=True)

    def sample(self, users, rng, dist: GroupDistribution | None = None,
               score_fn: ScoreFn | None = None) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if self.config.strategy == DNS:
            return self._sample_dns(users, rng, score_fn)
        w = self.weights(users, dist, score_fn, rng)
        return _inverse_cdf(w, rng.random(users.size))

    def _sample_dns(self, users, rng, score_fn) -> np.ndarray:
        cand = _candidates(self.train, users).astype(float)
        pool = self.config.dns_pool
        u = rng.random((users.size, pool))
        picks = np.stack([_inverse_cdf(cand, u[:, k]) for k in range(pool)], axis=1)
        if pool == 1:
            return picks[:, 0]
        scores = score_fn(users)
        return dns_select(picks, np.take_along_axis(scores, picks, axis=1))


def dns_select(pool_items: np.ndarray, pool_scores: np.ndarray) -> np.ndarray:
    """Highest-scored pool member per row; ties go to the smallest item index."""
    best = pool_scores.max(axis=1, keepdims=True)
    tied = np.where(pool_scores == best, pool_items, np.iinfo(np.int64).max)
    return tied.min(axis=1)


# ---------------------------------------------------------------------------
# single-user forms


def _model_scores(model: EmbeddingModel) -> ScoreFn:
    u_emb, i_emb = model.propagate()
    return lambda users: u_emb[users] @ i_emb.T


def sample_uns(user: int, table: InteractionTable, rng) -> int:
    return int(NegativeSampler(SamplerConfig(UNS), table).sample([user], rng)[0])


def sample_popularity(user: int, table: InteractionTable, rng, exponent: float = 1.0) -> int:
    cfg = SamplerConfig(NNCF, popularity_exponent=exponent)
    return int(NegativeSampler(cfg, table).sample([user], rng)[0])


def popularity_prob(user: int, table: InteractionTable, exponent: float = 1.0) -> np.ndarray:
    cfg = SamplerConfig(NNCF, popularity_exponent=exponent)
    return NegativeSampler(cfg, table).weights([user])[0][table.negatives(user)]


def sample_dns(user: int, model: EmbeddingModel, table: InteractionTable, rng, pool_size: int = 16) -> int:
    cfg = SamplerConfig(DNS, dns_pool=pool_size)
    return int(NegativeSampler(cfg, table).sample([user], rng, score_fn=_model_scores(model))[0])


def fair_prob(user: int, groups: GroupMap, table: InteractionTable, p: GroupDistribution) -> np.ndarray:
    """Fairness-aware probabilities aligned with ``table.negatives(user)``."""
    cand = _candidates(table, [user])
    return fair_matrix(cand, groups, p.p)[0][cand[0]]


def importance_prob(user: int, model: EmbeddingModel, table: InteractionTable, tau: float) -> np.ndarray:
    """Softmax-of-score probabilities aligned with ``table.negatives(user)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    cand = _candidates(table, [user])
    return importance_matrix(_model_scores(model)(np.array([user])), cand, tau)[0][cand[0]]


def mixup_prob(p_fair, p_imp, beta: float) -> np.ndarray:
    p_fair = np.asarray(p_fair, dtype=float)
    p_imp = np.asarray(p_imp, dtype=float)
    if p_fair.shape != p_imp.shape:
        raise ValueError(f"candidate sets differ: {p_fair.shape} vs {p_imp.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return beta * p_fair + (1.0 - beta) * p_imp


def sample_fairneg(user: int, model: EmbeddingModel, groups: GroupMap, table: InteractionTable,
                   p: GroupDistribution, config: SamplerConfig, rng) -> int:
    sampler = NegativeSampler(config, table, groups)
    return int(sampler.sample([user], rng, dist=p, score_fn=_model_scores(model))[0])


def fairstatic_distribution(table: InteractionTable, groups: GroupMap, floor: float = 1e-3) -> GroupDistribution:
    """Each group's share of the training positives."""
    counts = np.bincount(groups.item_group[table.items], minlength=groups.A).astype(float)
    if counts.sum() == 0:
        return GroupDistribution.uniform(groups.A, floor)
    return project_simplex(counts / counts.sum(), floor)
