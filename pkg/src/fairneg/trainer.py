"""Inner BPR training and the bi-level loop that adapts the group sampling distribution."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .backbone import LIGHTGCN, MF, Adam, EmbeddingModel, bpr_batch_gradients, init_xavier, log_sigmoid
from .dataset import DataSplit, GroupMap, InteractionTable
from .fairctl import (FairnessRecord, GroupDistribution, MomentumBank, gbce_losses, group_gradients,
                      momentum_update, recall_disp_loss)
from .metrics import recall_at_k, topk_recommend
from .samplers import FAIRNEG, UNS, NegativeSampler, SamplerConfig, fairstatic_distribution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    backbone: str = MF
    dim: int = 64
    l2: float = 0.01
    lr: float | None = None  # None: 0.01 for MF, 0.001 for LightGCN
    n_layers: int = 3
    epochs_max: int = 100
    batch_size: int = 1024
    patience: int = 10
    seed: int = 0
    eval_k: int = 20
    gamma: float = 0.1
    alpha: float = 0.1
    dynamic: bool = True
    floor: float = 1e-3
    gbce_cap: int = 500_000
    gbce_subsample: int = 200_000

    def __post_init__(self):
        if self.backbone not in (MF, LIGHTGCN):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.epochs_max < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs_max, batch_size and patience must be >= 1")
        if self.dim < 1 or self.eval_k < 1:
            raise ValueError("dim and eval_k must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.alpha < 0 or self.l2 < 0:
            raise ValueError("alpha and l2 must be non-negative")

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.01 if self.backbone == MF else 0.001

    @property
    def adapts_distribution(self) -> bool:
        return self.sampler.strategy == FAIRNEG and self.dynamic

    def replace(self, **changes) -> "TrainConfig":
        sampler_fields = {f.name for f in dataclasses.fields(SamplerConfig)}
        s_changes = {k: changes.pop(k) for k in list(changes) if k in sampler_fields}
        sampler = dataclasses.replace(self.sampler, **s_changes) if s_changes else self.sampler
        return dataclasses.replace(self, sampler=sampler, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr"] = self.learning_rate
        return d


@dataclass
class EpochLog:
    epoch: int
    bpr_loss: float
    val_recall: float
    fairness: FairnessRecord
    grad_norm_pos: np.ndarray
    grad_norm_neg: np.ndarray
    count_pos: np.ndarray
    count_neg: np.ndarray

    def as_row(self) -> dict:
        row = {"epoch": self.epoch, "bpr_loss": self.bpr_loss, "val_recall": self.val_recall}
        row.update({k: v for k, v in self.fairness.as_row().items() if k != "epoch"})
        for name in ("grad_norm_pos", "grad_norm_neg", "count_pos", "count_neg"):
            for a, x in enumerate(getattr(self, name)):
                row[f"{name}_{a}"] = x.item()
        return row


@dataclass
class EpochStats:
    bpr_loss: float
    n_triples: int
    grad_norm_pos: np.ndarray
    grad_norm_neg: np.ndarray
    count_pos: np.ndarray
    count_neg: np.ndarray


@dataclass
class TrainResult:
    model: EmbeddingModel
    logs: list
    best_epoch: int
    best_val_recall: float
    distribution: GroupDistribution
    config: TrainConfig


def bpr_loss(model: EmbeddingModel, triples) -> float:
    """Mean ``-ln sigma(y_ui - y_uj)`` over ``(u, i, j)`` triples, without regularization."""
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if t.shape[0] == 0:
        raise ValueError("bpr_loss needs at least one triple")
    u_emb, i_emb = model.propagate()
    diff = np.einsum("bd,bd->b", u_emb[t[:, 0]], i_emb[t[:, 1]] - i_emb[t[:, 2]])
    return float(-log_sigmoid(diff).mean())


def make_score_fn(model: EmbeddingModel, snapshot: tuple | None = None):
    """Scorer for samplers: live MF factors, or a frozen LightGCN propagation."""
    if snapshot is not None:
        u_emb, i_emb = snapshot
        return lambda users: u_emb[users] @ i_emb.T
    return lambda users: model.user_factors[users] @ model.item_factors.T


def train_epoch(model: EmbeddingModel, optimizer: Adam, train: InteractionTable, sampler: NegativeSampler,
                dist: GroupDistribution | None, rng, groups: GroupMap, batch_size: int = 1024) -> EpochStats:
    """One pass over all training positives in shuffled mini-batches, one negative per positive.

    Besides the loss, per-group mean L2 norms of the per-triple BPR gradient on
    the positive and on the negative item embedding are collected.
    """
    A = groups.A
    sum_pos, sum_neg = np.zeros(A), np.zeros(A)
    cnt_pos, cnt_neg = np.zeros(A, dtype=np.int64), np.zeros(A, dtype=np.int64)
    n = len(train)
    if n == 0:
        return EpochStats(float("nan"), 0, sum_pos, sum_neg, cnt_pos, cnt_neg)
    snapshot = model.propagate() if model.kind == LIGHTGCN else None
    score_fn = make_score_fn(model, snapshot)
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        users, pos = train.users[idx], train.items[idx]
        neg = sampler.sample(users, rng, dist, score_fn)
        g_u, g_i, info = bpr_batch_gradients(model, users, pos, neg)
        total += float(-log_sigmoid(info["diff"]).sum())

        norms = info["c"] * np.linalg.norm(info["user_emb"], axis=1)
        gp, gn = groups.item_group[pos], groups.item_group[neg]
        sum_pos += np.bincount(gp, weights=norms, minlength=A)
        sum_neg += np.bincount(gn, weights=norms, minlength=A)
        cnt_pos += np.bincount(gp, minlength=A)
        cnt_neg += np.bincount(gn, minlength=A)

        optimizer.step(model.parameters(), [g_u, g_i])
    model.check_finite()
    with np.errstate(invalid="ignore"):
        mean_pos = np.where(cnt_pos > 0, sum_pos / np.maximum(cnt_pos, 1), 0.0)
        mean_neg = np.where(cnt_neg > 0, sum_neg / np.maximum(cnt_neg, 1), 0.0)
    return EpochStats(total / n, n, mean_pos, mean_neg, cnt_pos, cnt_neg)


def build_model(config: TrainConfig, train: InteractionTable) -> EmbeddingModel:
    return init_xavier(train.num_users, train.num_items, config.dim, config.seed, kind=config.backbone,
                       l2=config.l2, n_layers=config.n_layers, train=train)


def bilevel_train(config: TrainConfig, split: DataSplit, groups: GroupMap, callback=None) -> TrainResult:
    """Alternate one inner BPR epoch with one outer update of the group distribution.

    The distribution starts at each group's share of training positives.  It
    is updated only for FairNeg with ``dynamic=True``; other strategies keep
    it frozen (G-BCE is still logged).  Training stops after ``patience``
    epochs without a better validation Recall@eval_k and the best epoch's
    model is returned.
    """
    train = split.train
    counts = np.bincount(groups.item_group[train.items], minlength=groups.A)
    if (counts == 0).any():
        missing = [groups.group_labels[a] for a in np.flatnonzero(counts == 0)]
        raise ValueError(f"groups absent from the training positives: {missing}")

    model = build_model(config, train)
    optimizer = Adam(lr=config.learning_rate)
    sampler = NegativeSampler(config.sampler, train, groups)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    gbce_seed = int(seeds[1].generate_state(1)[0])

    dist = fairstatic_distribution(train, groups, config.floor)
    bank = MomentumBank.zeros(groups.A, config.gamma, config.alpha)

    logs = []
    best = (-np.inf, 0, model.copy())
    since_best = 0
    for epoch in range(1, config.epochs_max + 1):
        stats = train_epoch(model, optimizer, train, sampler, dist, rng, groups, config.batch_size)
        losses = gbce_losses(model, train, groups, epoch, config.gbce_cap, config.gbce_subsample, gbce_seed)
        p_used = dist.p
        if config.adapts_distribution and groups.A >= 2:
            bank, dist = momentum_update(bank, dist, group_gradients(losses))

        lists = topk_recommend(model, split, config.eval_k, stage="validation")
        val = recall_at_k(lists, split.validation, config.eval_k)
        record = FairnessRecord(epoch, losses.losses, recall_disp_loss(losses), p_used, bank.v.copy())
        entry = EpochLog(epoch, stats.bpr_loss, val, record, stats.grad_norm_pos, stats.grad_norm_neg,
                         stats.count_pos, stats.count_neg)
        logs.append(entry)
        log.debug("epoch %d loss %.4f val R@%d %.4f p %s", epoch, stats.bpr_loss, config.eval_k, val, p_used)
        if callback is not None:
            callback(entry)

        if val > best[0]:
            best = (val, epoch, model.copy())
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return TrainResult(best[2], logs, best[1], best[0], dist, config)


def ablation_variants(config: TrainConfig) -> dict[str, TrainConfig]:
    """The full FairNeg config, its three ablations and the UNS baseline."""
    if config.sampler.strategy != FAIRNEG:
        raise ValueError("ablations derive from a FairNeg configuration")
    return {
        "FairNeg": config,
        "FairNeg-Dynamic": config.replace(dynamic=False),
        "FairNeg-Imp": config.replace(beta=1.0),
        "FairNeg-Momentum": config.replace(gamma=0.0),
        "UNS": config.replace(strategy=UNS),
    }


def write_epoch_log(logs, path, header: str = "") -> None:
    """One CSV row per epoch; floats are written with ``repr`` so reruns are byte-identical."""
    rows = [e.as_row() for e in logs]
    with open(path, "w", newline="") as fh:
        fh.write(header)
        if not rows:
            fh.write("epoch\n")
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
