"""Top-k recommendation and utility / group-fairness metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import EmbeddingModel
from .dataset import DataSplit, GroupMap, InteractionTable


@dataclass(eq=False)
class RankedLists:
    """Top-k items per evaluated user; rows shorter than ``k`` are padded with ``-1``."""

    users: np.ndarray
    items: np.ndarray
    scores: np.ndarray
    k: int

    def __len__(self) -> int:
        return int(self.users.size)

    def lengths(self) -> np.ndarray:
        return (self.items >= 0).sum(axis=1)


def rank_scores(scores: np.ndarray, masked: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k columns of each row, descending score, ties by ascending column, masked columns excluded."""
    s = np.where(masked, -np.inf, scores)
    k_eff = min(k, s.shape[1])
    # stable sort on negated scores keeps ascending index order within ties
    order = np.argsort(-s, axis=1, kind="stable")[:, :k_eff]
    top = np.take_along_axis(s, order, axis=1)
    items = np.where(np.isneginf(top), -1, order)
    if k_eff < k:
        pad = k - k_eff
        items = np.pad(items, ((0, 0), (0, pad)), constant_values=-1)
        top = np.pad(top, ((0, 0), (0, pad)), constant_values=-np.inf)
    return items, top


def topk_recommend(model: EmbeddingModel, split: DataSplit, k: int, stage: str = "test",
                   batch_size: int = 2048) -> RankedLists:
    """Rank the catalog for every user with a positive in the evaluation part.

    ``stage="test"`` masks train and validation positives; ``stage="validation"``
    masks train positives only.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    target = split.test if stage == "test" else split.validation
    masks = [split.train] + ([split.validation] if stage == "test" else [])
    users = np.flatnonzero(target.user_degree() > 0)
    u_emb, i_emb = model.propagate()
    items_out, scores_out = [], []
    for start in range(0, users.size, batch_size):
        ub = users[start:start + batch_size]
        masked = np.zeros((ub.size, i_emb.shape[0]), dtype=bool)
        for t in masks:
            masked |= t.positive_mask[ub]
        items, top = rank_scores(u_emb[ub] @ i_emb.T, masked, k)
        items_out.append(items)
        scores_out.append(top)
    if not items_out:
        return RankedLists(users, np.empty((0, k), dtype=np.int64), np.empty((0, k)), k)
    return RankedLists(users, np.vstack(items_out), np.vstack(scores_out), k)


def _hit_matrix(lists: RankedLists, test: InteractionTable, k: int) -> np.ndarray:
    items = lists.items[:, :k]
    valid = items >= 0
    hits = np.zeros(items.shape, dtype=bool)
    if len(lists):
        rows = test.positive_mask[lists.users]
        hits = np.take_along_axis(rows, np.where(valid, items, 0), axis=1) & valid
    return hits


def _n_relevant(lists: RankedLists, test: InteractionTable) -> np.ndarray:
    return test.user_degree()[lists.users]


def recall_at_k(lists: RankedLists, test: InteractionTable, k: int) -> float:
    if not len(lists):
        return 0.0
    return float(np.mean(_hit_matrix(lists, test, k).sum(1) / _n_relevant(lists, test)))


def precision_at_k(lists: RankedLists, test: InteractionTable, k: int) -> float:
    if not len(lists):
        return 0.0
    return float(np.mean(_hit_matrix(lists, test, k).sum(1) / k))


def ndcg_at_k(lists: RankedLists, test: InteractionTable, k: int) -> float:
    if not len(lists):
        return 0.0
    hits = _hit_matrix(lists, test, k)
    discount = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = hits @ discount
    n_ideal = np.minimum(_n_relevant(lists, test), k)
    idcg = np.cumsum(discount)[n_ideal - 1]
    return float(np.mean(dcg / idcg))


def f1_at_k(lists: RankedLists, test: InteractionTable, k: int) -> float:
    p = precision_at_k(lists, test, k)
    r = recall_at_k(lists, test, k)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def group_hit_counts(lists: RankedLists, test: InteractionTable, groups: GroupMap, k: int):
    """Per-group (hit count, test-positive count) pooled over evaluated users."""
    hits = _hit_matrix(lists, test, k)
    hit_groups = groups.item_group[lists.items[:, :k][hits]]
    n_hits = np.bincount(hit_groups, minlength=groups.A)
    evaluated = np.zeros(test.num_users, dtype=bool)
    evaluated[lists.users] = True
    keep = evaluated[test.users]
    n_pos = np.bincount(groups.item_group[test.items[keep]], minlength=groups.A)
    return n_hits, n_pos


def group_recall_at_k(lists: RankedLists, test: InteractionTable, groups: GroupMap, k: int,
                      aggregation: str = "micro") -> np.ndarray:
    """Recall@k restricted to each item group; ``nan`` for groups without test positives.

    ``micro`` pools hits and positives over users; ``macro`` averages the
    per-user group recall over users holding a test positive in that group.
    """
    if aggregation == "micro":
        n_hits, n_pos = group_hit_counts(lists, test, groups, k)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n_pos > 0, n_hits / np.maximum(n_pos, 1), np.nan)
    if aggregation != "macro":
        raise ValueError(f"unknown aggregation {aggregation!r}")
    hits = _hit_matrix(lists, test, k)
    onehot = groups.one_hot()
    hit_g = np.zeros((len(lists), groups.A))
    safe = np.where(hits, lists.items[:, :k], 0)
    for a in range(groups.A):
        hit_g[:, a] = (hits & (groups.item_group[safe] == a)).sum(1)
    pos_g = test.positive_mask[lists.users].astype(float) @ onehot
    out = np.full(groups.A, np.nan)
    for a in range(groups.A):
        rows = pos_g[:, a] > 0
        if rows.any():
            out[a] = float(np.mean(hit_g[rows, a] / pos_g[rows, a]))
    return out


def recall_disp(group_recalls) -> float:
    """Population std of the defined group recalls divided by their mean."""
    r = np.asarray(group_recalls, dtype=float)
    r = r[~np.isnan(r)]
    if r.size < 2:
        raise ValueError("Recall-Disp needs at least two defined group recalls")
    mean = r.mean()
    if mean == 0:
        return math.nan
    return float(r.std() / mean)


def recall_min(group_recalls) -> float:
    return float(np.nanmin(np.asarray(group_recalls, dtype=float)))


def recall_avg(group_recalls) -> float:
    return float(np.nanmean(np.asarray(group_recalls, dtype=float)))


@dataclass
class MetricReport:
    k: int
    precision: float
    recall: float
    ndcg: float
    f1: float
    group_recall: list
    recall_disp: float
    recall_min: float
    recall_avg: float
    group_labels: list = field(default_factory=list)
    group_hits: list = field(default_factory=list)
    group_positives: list = field(default_factory=list)
    n_users: int = 0
    flags: list = field(default_factory=list)

    @property
    def pooled_recall(self) -> float:
        """Hits over test positives pooled across all users."""
        total = sum(self.group_positives)
        return sum(self.group_hits) / total if total else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_recall"] = [None if math.isnan(x) else x for x in self.group_recall]
        for key in ("recall_disp", "recall_min", "recall_avg"):
            if math.isnan(d[key]):
                d[key] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_header(self) -> list[str]:
        cols = [f"Recall-Disp@{self.k}", f"Recall-Min@{self.k}", f"Recall-Avg@{self.k}",
                f"N@{self.k}", f"P@{self.k}", f"R@{self.k}", f"F1@{self.k}"]
        cols += [f"Recall@{self.k}|{lab}" for lab in self.group_labels]
        return cols

    def csv_values(self) -> list[float]:
        return [self.recall_disp, self.recall_min, self.recall_avg, self.ndcg, self.precision,
                self.recall, self.f1, *self.group_recall]

    def to_csv(self) -> str:
        return ",".join(self.csv_header()) + "\n" + ",".join(repr(float(x)) for x in self.csv_values()) + "\n"


def evaluate(model: EmbeddingModel, split: DataSplit, groups: GroupMap, k: int = 20, stage: str = "test",
             aggregation: str = "micro", lists: RankedLists | None = None) -> MetricReport:
    target = split.test if stage == "test" else split.validation
    if lists is None or lists.k < k:
        lists = topk_recommend(model, split, k, stage)
    flags = []
    g_rec = group_recall_at_k(lists, target, groups, k, aggregation)
    n_hits, n_pos = group_hit_counts(lists, target, groups, k)
    for a in np.flatnonzero(np.isnan(g_rec)):
        flags.append(f"group {groups.group_labels[a]!r} has no {stage} positives")
    defined = g_rec[~np.isnan(g_rec)]
    disp = math.nan
    if defined.size >= 2:
        disp = recall_disp(defined)
        if math.isnan(disp):
            flags.append("Recall-Disp undefined: mean group recall is 0")
    return MetricReport(
        k=k,
        precision=precision_at_k(lists, target, k),
        recall=recall_at_k(lists, target, k),
        ndcg=ndcg_at_k(lists, target, k),
        f1=f1_at_k(lists, target, k),
        group_recall=[float(x) for x in g_rec],
        recall_disp=disp,
        recall_min=recall_min(defined) if defined.size else math.nan,
        recall_avg=recall_avg(defined) if defined.size else math.nan,
        group_labels=list(groups.group_labels),
        group_hits=[int(x) for x in n_hits],
        group_positives=[int(x) for x in n_pos],
        n_users=len(lists),
        flags=flags,
    )
