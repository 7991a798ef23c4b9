"""Group fairness perception and the momentum update of the group sampling distribution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import EmbeddingModel, log_sigmoid
from .dataset import GroupMap, InteractionTable

DEFAULT_FLOOR = 1e-3


@dataclass(frozen=True, eq=False)
class GroupDistribution:
    """Probability of drawing the negative from each item group."""

    p: np.ndarray
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        if p.size < 1 or not np.isfinite(p).all():
            raise ValueError("group distribution must be a finite non-empty vector")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"group distribution sums to {p.sum()!r}, not 1")
        if p.size > 1 and (p < self.floor * (1 - 1e-12)).any():
            raise ValueError(f"group distribution entry below floor {self.floor}: {p}")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def A(self) -> int:
        return self.p.size

    @classmethod
    def uniform(cls, A: int, floor: float = DEFAULT_FLOOR) -> "GroupDistribution":
        return cls(np.full(A, 1.0 / A), floor)


def project_simplex(p_raw, floor: float = DEFAULT_FLOOR) -> GroupDistribution:
    """Map a raw probability vector back onto ``{p : sum p = 1, p >= floor}``.

    Entries below the floor are clamped to it; the remaining entries are
    rescaled proportionally so the total is 1.  Clamping repeats until no
    rescaled entry falls under the floor.  If nothing stays above the floor
    the result is uniform.
    """
    x = np.asarray(p_raw, dtype=float).ravel()
    if not np.isfinite(x).all():
        raise ValueError("cannot project a non-finite vector")
    A = x.size
    if floor * A > 1.0:
        raise ValueError(f"floor {floor} infeasible for {A} groups")
    clamped = x < floor
    while True:
        free = ~clamped
        if not free.any():
            return GroupDistribution(np.full(A, 1.0 / A), floor)
        budget = 1.0 - floor * clamped.sum()
        scaled = x[free] * (budget / x[free].sum())
        low = scaled < floor
        if not low.any():
            out = np.full(A, floor)
            out[free] = scaled
            # absorb rounding so the sum is 1 to machine precision
            out[np.flatnonzero(free)[np.argmax(scaled)]] += 1.0 - out.sum()
            return GroupDistribution(out, floor)
        clamped[np.flatnonzero(free)[low]] = True


@dataclass(frozen=True, eq=False)
class GroupLossVector:
    losses: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        losses = np.array(self.losses, dtype=float).ravel()
        if not np.isfinite(losses).all() or (losses < 0).any():
            raise ValueError(f"group losses must be finite and non-negative: {losses}")
        object.__setattr__(self, "losses", losses)


@dataclass
class MomentumBank:
    """One momentum value per group; ``gamma=0`` gives plain gradient steps."""

    v: np.ndarray
    gamma: float = 0.1
    alpha: float = 0.1

    @classmethod
    def zeros(cls, A: int, gamma: float = 0.1, alpha: float = 0.1) -> "MomentumBank":
        return cls(np.zeros(A), gamma, alpha)


def gbce_losses(model: EmbeddingModel, train: InteractionTable, groups: GroupMap, epoch: int = 0,
                cap: int = 500_000, subsample: int = 200_000, seed: int = 0) -> GroupLossVector:
    """Mean ``-ln sigma(score)`` over each group's training positives.

    When the table holds more than ``cap`` positives a seeded uniform
    subsample of ``subsample`` positives is used instead.
    """
    users, items = train.users, train.items
    if users.size > cap:
        idx = np.sort(np.random.default_rng(seed).choice(users.size, size=subsample, replace=False))
        users, items = users[idx], items[idx]
    g = groups.item_group[items]
    counts = np.bincount(g, minlength=groups.A)
    if (counts == 0).any():
        missing = [groups.group_labels[a] for a in np.flatnonzero(counts == 0)]
        raise ValueError(f"groups without training positives: {missing}")
    u_emb, i_emb = model.propagate()
    scores = np.einsum("bd,bd->b", u_emb[users], i_emb[items])
    nll = -log_sigmoid(scores)
    return GroupLossVector(np.bincount(g, weights=nll, minlength=groups.A) / counts, epoch)


def group_gradients(losses: GroupLossVector | np.ndarray) -> np.ndarray:
    """Deviation of each group's loss from the mean loss."""
    L = losses.losses if isinstance(losses, GroupLossVector) else np.asarray(losses, dtype=float)
    return L - L.mean()


def momentum_update(bank: MomentumBank, dist: GroupDistribution, grads) -> tuple[MomentumBank, GroupDistribution]:
    grads = np.asarray(grads, dtype=float)
    if not np.isfinite(grads).all():
        raise ValueError("non-finite group gradient")
    v = bank.gamma * bank.v + bank.alpha * grads
    new_dist = project_simplex(dist.p - v, dist.floor)
    return MomentumBank(v, bank.gamma, bank.alpha), new_dist


def recall_disp_loss(losses: GroupLossVector | np.ndarray) -> float:
    """Sum of absolute deviations of group losses from their mean (the outer objective)."""
    return float(np.abs(group_gradients(losses)).sum())


@dataclass
class FairnessRecord:
    epoch: int
    gbce: np.ndarray
    disp_loss: float
    p: np.ndarray
    v: np.ndarray = field(default=None)

    def as_row(self) -> dict:
        row = {"epoch": self.epoch, "recall_disp_loss": self.disp_loss}
        for name, vec in (("gbce", self.gbce), ("p", self.p), ("v", self.v)):
            for a, x in enumerate(vec):
                row[f"{name}_{a}"] = float(x)
        return row
