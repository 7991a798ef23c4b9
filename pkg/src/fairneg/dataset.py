"""Interaction ingestion, reindexing, item groups and train/validation/test splits."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int


@dataclass(frozen=True, eq=False)
class InteractionTable:
    """Binary user-item feedback over a fixed 0-based index space.

    ``users`` and ``items`` are parallel int64 arrays with no duplicate pair.
    """

    users: np.ndarray
    items: np.ndarray
    num_users: int
    num_items: int

    def __post_init__(self):
        users = np.ascontiguousarray(self.users, dtype=np.int64)
        items = np.ascontiguousarray(self.items, dtype=np.int64)
        if users.shape != items.shape or users.ndim != 1:
            raise DataError("users and items must be 1-d arrays of equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise DataError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise DataError("item index out of range")
        users.setflags(write=False)
        items.setflags(write=False)
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def interactions(self) -> list[Interaction]:
        return [Interaction(int(u), int(i)) for u, i in zip(self.users, self.items)]

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.lexsort((self.items, self.users))
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.users, minlength=self.num_users), out=indptr[1:])
        return indptr, self.items[order]

    def positives(self, user: int) -> np.ndarray:
        """Sorted positive item indices of ``user``."""
        indptr, indices = self._csr
        return indices[indptr[user]:indptr[user + 1]]

    def negatives(self, user: int) -> np.ndarray:
        """Sorted unobserved item indices of ``user`` (the full catalog minus positives)."""
        mask = np.ones(self.num_items, dtype=bool)
        mask[self.positives(user)] = False
        return np.flatnonzero(mask)

    @property
    def user_positives(self) -> list[np.ndarray]:
        return [self.positives(u) for u in range(self.num_users)]

    @cached_property
    def positive_mask(self) -> np.ndarray:
        """Dense boolean ``num_users x num_items`` matrix of observed pairs."""
        mask = np.zeros((self.num_users, self.num_items), dtype=bool)
        mask[self.users, self.items] = True
        mask.setflags(write=False)
        return mask

    def user_degree(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_degree(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.num_users, self.num_items], dtype=np.int64).tobytes())
        h.update(self.users.tobytes())
        h.update(self.items.tobytes())
        return h.hexdigest()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], num_users: int, num_items: int) -> "InteractionTable":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1], num_users, num_items)


@dataclass(frozen=True, eq=False)
class GroupMap:
    """Partition of the item catalog into ``A`` disjoint labelled groups."""

    item_group: np.ndarray
    group_labels: tuple[str, ...]

    def __post_init__(self):
        item_group = np.ascontiguousarray(self.item_group, dtype=np.int64)
        labels = tuple(self.group_labels)
        if len(labels) < 1:
            raise DataError("at least one group is required")
        if item_group.size and (item_group.min() < 0 or item_group.max() >= len(labels)):
            raise DataError("group index out of range")
        empty = np.flatnonzero(np.bincount(item_group, minlength=len(labels)) == 0)
        if empty.size:
            raise DataError(f"groups without items: {[labels[a] for a in empty]}")
        item_group.setflags(write=False)
        object.__setattr__(self, "item_group", item_group)
        object.__setattr__(self, "group_labels", labels)

    @property
    def A(self) -> int:
        return len(self.group_labels)

    @property
    def num_items(self) -> int:
        return int(self.item_group.size)

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.item_group, minlength=self.A)

    def one_hot(self) -> np.ndarray:
        """``num_items x A`` indicator matrix."""
        out = np.zeros((self.num_items, self.A))
        out[np.arange(self.num_items), self.item_group] = 1.0
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.group_labels).encode())
        h.update(self.item_group.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class DataSplit:
    train: InteractionTable
    validation: InteractionTable
    test: InteractionTable
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def manifest(self, groups: GroupMap | None = None) -> dict:
        out = {
            "seed": self.seed,
            "num_users": self.train.num_users,
            "num_items": self.train.num_items,
            "sizes": {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)},
            "hashes": {
                "train": self.train.digest(),
                "validation": self.validation.digest(),
                "test": self.test.digest(),
            },
        }
        if groups is not None:
            out["group_labels"] = list(groups.group_labels)
            out["hashes"]["groups"] = groups.digest()
        out["data_hash"] = _hash_json(out["hashes"])
        return out


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# ingestion


def _split_line(line: str, sep: str) -> list[str]:
    return [tok.strip() for tok in line.split(sep)]


def load_interactions(path, sep: str = "::", user_col: int = 0, item_col: int = 1) -> list[tuple[str, str]]:
    """Read raw ``(user_id, item_id)`` pairs from a delimited ratings file.

    Extra columns (rating, timestamp) are ignored and pairs are returned in
    file order, duplicates included.  Blank lines are skipped.
    """
    pairs = []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = _split_line(line, sep)
            if len(cols) <= max(user_col, item_col) or not cols[user_col] or not cols[item_col]:
                raise DataError(f"{path}:{lineno}: malformed record {line!r}")
            pairs.append((cols[user_col], cols[item_col]))
    return pairs


def load_item_attributes(
    path, sep: str = ",", item_col: int = 0, label_col: int = 1, label_sep: str | None = None
) -> list[tuple[str, tuple[str, ...]]]:
    """Read ``(item_id, labels)`` records; ``label_sep`` splits multi-valued labels (e.g. ``"|"``)."""
    records = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            cols = _split_line(line, sep)
            if len(cols) <= max(item_col, label_col) or not cols[item_col]:
                raise DataError(f"{path}:{lineno}: malformed record {line!r}")
            raw = cols[label_col]
            labels = tuple(s.strip() for s in raw.split(label_sep)) if label_sep else (raw,)
            records.append((cols[item_col], tuple(s for s in labels if s)))
    return records


def filter_attributes(
    records: Sequence[tuple[str, tuple[str, ...]]], keep: Sequence[str], multi_label: str = "drop"
) -> list[tuple[str, str]]:
    """Restrict attribute records to the labels in ``keep``.

    An item survives when exactly one of its labels is in ``keep``.  Items
    carrying several kept labels are dropped (``multi_label="drop"``) or
    rejected (``"error"``).
    """
    keep = list(keep)
    if not keep:
        raise DataError("attribute filter must name at least one group label")
    if multi_label not in ("drop", "error"):
        raise ValueError(f"unknown multi_label policy {multi_label!r}")
    wanted = set(keep)
    out = []
    for item, labels in records:
        hit = sorted(set(labels) & wanted, key=keep.index)
        if len(hit) == 1:
            out.append((item, hit[0]))
        elif len(hit) > 1 and multi_label == "error":
            raise DataError(f"item {item!r} carries several selected labels {hit}")
    return out


def reindex(
    raw_pairs: Sequence[tuple], attributes: Sequence[tuple[str, str]], label_order: Sequence[str] | None = None
) -> tuple[InteractionTable, GroupMap]:
    """Map raw ids to contiguous indices, collapse duplicates and build the group map.

    Users and items are numbered by first appearance in ``raw_pairs``; items
    that only appear in ``attributes`` are appended after them.  Groups are
    numbered in ``label_order`` (default: sorted labels), keeping only labels
    that own at least one retained item.
    """
    item_label: dict = {}
    for item, label in attributes:
        prev = item_label.get(item)
        if prev is not None and prev != label:
            raise DataError(f"item {item!r} has conflicting attributes {prev!r} and {label!r}")
        item_label[item] = label

    user_index: dict = {}
    item_index: dict = {}
    seen = set()
    users, items = [], []
    missing = []
    for raw_u, raw_i in raw_pairs:
        if raw_i not in item_label:
            missing.append(raw_i)
            continue
        u = user_index.setdefault(raw_u, len(user_index))
        i = item_index.setdefault(raw_i, len(item_index))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        users.append(u)
        items.append(i)
    if missing:
        sample = sorted(set(map(str, missing)))[:10]
        raise DataError(f"{len(set(missing))} interacted items lack an attribute record, e.g. {sample}")
    for item, _ in attributes:
        item_index.setdefault(item, len(item_index))

    present = {item_label[it] for it in item_index}
    if label_order is None:
        labels = sorted(present)
    else:
        labels = [lab for lab in label_order if lab in present]
        extra = present - set(labels)
        if extra:
            raise DataError(f"labels outside the configured order: {sorted(extra)}")
    gidx = {lab: a for a, lab in enumerate(labels)}
    item_group = np.empty(len(item_index), dtype=np.int64)
    for item, i in item_index.items():
        item_group[i] = gidx[item_label[item]]

    table = InteractionTable(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                             len(user_index), len(item_index))
    return table, GroupMap(item_group, tuple(labels))


def split(table: InteractionTable, seed: int, fractions=(0.6, 0.2, 0.2)) -> DataSplit:
    """Globally shuffle interactions and cut them 60/20/20.

    Validation and test sizes are ``floor(0.2 n)``; the remainder goes to train.
    """
    n = len(table)
    if n == 0:
        raise DataError("cannot split an empty interaction table")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    parts = []
    for idx in (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]):
        idx = np.sort(idx)
        parts.append(InteractionTable(table.users[idx], table.items[idx], table.num_users, table.num_items))
    return DataSplit(*parts, seed=seed)


@dataclass(frozen=True)
class GroupStat:
    label: str
    n_items: int
    n_feedback: int

    @property
    def feedback_per_item(self) -> float:
        return self.n_feedback / self.n_items if self.n_items else 0.0


def group_stats(table: InteractionTable, groups: GroupMap) -> list[GroupStat]:
    n_items = groups.group_sizes()
    n_feedback = np.bincount(groups.item_group[table.items], minlength=groups.A)
    return [GroupStat(lab, int(n_items[a]), int(n_feedback[a])) for a, lab in enumerate(groups.group_labels)]


def format_group_stats(stats: Sequence[GroupStat]) -> str:
    lines = ["group,n_items,n_feedback,feedback_per_item"]
    for s in stats:
        lines.append(f"{s.label},{s.n_items},{s.n_feedback},{s.feedback_per_item:.0f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Parameters of the latent-factor generator used for toy and benchmark data.

    ``item_share`` sets the fraction of catalog items in each group and
    ``feedback_share`` the fraction of interactions landing in each group.
    Each user's positives within a group are a weighted draw without
    replacement, with weights from a low-rank preference term plus a
    lognormal item popularity.
    """

    num_users: int = 200
    num_items: int = 100
    density: float = 0.1
    item_share: Sequence[float] = (0.5, 0.5)
    feedback_share: Sequence[float] | None = None
    rank: int = 8
    concentration: float = 1.0
    popularity_skew: float = 1.0
    seed: int = 0
    labels: Sequence[str] | None = None


def _gumbel_top(logits: np.ndarray, k: int, rng) -> np.ndarray:
    """Indices of a ``k``-draw without replacement with probabilities ``softmax(logits)``."""
    if k >= logits.size:
        return np.arange(logits.size)
    keys = logits + rng.gumbel(size=logits.size)
    return np.argpartition(-keys, k - 1)[:k]


def synthesize(spec: SyntheticSpec) -> tuple[InteractionTable, GroupMap]:
    rng = np.random.default_rng(spec.seed)
    share = np.asarray(spec.item_share, dtype=float)
    share = share / share.sum()
    A = share.size
    sizes = np.floor(share * spec.num_items).astype(int)
    sizes[np.argmax(share)] += spec.num_items - sizes.sum()
    if (sizes < 1).any():
        raise DataError("every synthetic group needs at least one item")
    item_group = np.repeat(np.arange(A), sizes)
    fb_share = share if spec.feedback_share is None else np.asarray(spec.feedback_share, dtype=float)
    fb_share = fb_share / fb_share.sum()

    user_f = rng.normal(size=(spec.num_users, spec.rank)) / np.sqrt(spec.rank)
    item_f = rng.normal(size=(spec.num_items, spec.rank)) / np.sqrt(spec.rank)
    pop = rng.lognormal(sigma=spec.popularity_skew, size=spec.num_items)
    logits = spec.concentration * np.sqrt(spec.rank) * (user_f @ item_f.T) + np.log(pop)

    n_per_user = np.clip(rng.binomial(spec.num_items, spec.density, size=spec.num_users), 1, spec.num_items - 1)
    members = [np.flatnonzero(item_group == a) for a in range(A)]
    users, items = [], []
    for u in range(spec.num_users):
        counts = rng.multinomial(n_per_user[u], fb_share)
        for a in range(A):
            k = min(int(counts[a]), members[a].size - 1)
            if k <= 0:
                continue
            chosen = members[a][_gumbel_top(logits[u, members[a]], k, rng)]
            users.append(np.full(k, u))
            items.append(np.sort(chosen))
    table = InteractionTable(np.concatenate(users), np.concatenate(items), spec.num_users, spec.num_items)
    labels = tuple(spec.labels) if spec.labels is not None else tuple(f"g{a}" for a in range(A))
    return table, GroupMap(item_group, labels)


# ---------------------------------------------------------------------------
# on-disk prepared format


def write_table(table: InteractionTable, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# num_users={table.num_users} num_items={table.num_items}\n")
        for u, i in zip(table.users.tolist(), table.items.tolist()):
            fh.write(f"{u}\t{i}\n")


def read_table(path) -> InteractionTable:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise DataError(f"{path}: missing header")
        meta = dict(kv.split("=") for kv in header[2:].split())
        arr = np.loadtxt(fh, dtype=np.int64, ndmin=2, delimiter="\t")
    arr = arr.reshape(-1, 2)
    return InteractionTable(arr[:, 0], arr[:, 1], int(meta["num_users"]), int(meta["num_items"]))


def write_groups(groups: GroupMap, path) -> None:
    with open(path, "w") as fh:
        fh.write("# labels=" + json.dumps(list(groups.group_labels)) + "\n")
        for i, a in enumerate(groups.item_group.tolist()):
            fh.write(f"{i}\t{a}\n")


def read_groups(path) -> GroupMap:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# labels="):
            raise DataError(f"{path}: missing header")
        labels = json.loads(header[len("# labels="):])
        arr = np.loadtxt(fh, dtype=np.int64, ndmin=2, delimiter="\t").reshape(-1, 2)
    item_group = np.empty(arr.shape[0], dtype=np.int64)
    item_group[arr[:, 0]] = arr[:, 1]
    return GroupMap(item_group, tuple(labels))


def save_prepared(split_: DataSplit, groups: GroupMap, full: InteractionTable, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(split_.train, out / "train.tsv")
    write_table(split_.validation, out / "validation.tsv")
    write_table(split_.test, out / "test.tsv")
    write_groups(groups, out / "item_groups.tsv")
    manifest = split_.manifest(groups)
    (out / "split_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "group_stats.csv").write_text(format_group_stats(group_stats(full, groups)))
    return manifest


def load_prepared(data_dir) -> tuple[DataSplit, GroupMap, dict]:
    d = Path(data_dir)
    try:
        manifest = json.loads((d / "split_manifest.json").read_text())
        parts = [read_table(d / f"{name}.tsv") for name in ("train", "validation", "test")]
        groups = read_groups(d / "item_groups.tsv")
    except FileNotFoundError as exc:
        raise DataError(f"prepared data incomplete: {exc.filename}") from exc
    data = DataSplit(*parts, seed=int(manifest["seed"]))
    if data.manifest(groups)["data_hash"] != manifest["data_hash"]:
        raise DataError(f"{d}: files do not match split_manifest.json hashes")
    return data, groups, manifest
