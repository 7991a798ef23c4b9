"""Scoring backbones (MF, LightGCN), BPR gradients and a native Adam optimizer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dataset import InteractionTable

MF = "mf"
LIGHTGCN = "lightgcn"


class NonFiniteError(FloatingPointError):
    """Raised when parameters or gradients stop being finite."""


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


def normalized_adjacency(train: InteractionTable) -> sp.csr_matrix:
    """Symmetric-normalized adjacency ``D^-1/2 A D^-1/2`` of the user-item bipartite graph.

    Users occupy rows ``[0, num_users)`` and items the rows after them.
    Isolated nodes get an all-zero row.
    """
    n_u, n_i = train.num_users, train.num_items
    rows = np.concatenate([train.users, train.items + n_u])
    cols = np.concatenate([train.items + n_u, train.users])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_u + n_i, n_u + n_i))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    d = sp.diags(inv)
    return (d @ adj @ d).tocsr()


@dataclass(eq=False)
class EmbeddingModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    l2: float = 0.01
    kind: str = MF
    n_layers: int = 0
    adjacency: sp.csr_matrix | None = None
    seed: int | None = None

    @property
    def dim(self) -> int:
        return self.user_factors.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_factors.shape[0]

    def parameters(self) -> list[np.ndarray]:
        return [self.user_factors, self.item_factors]

    def attach_graph(self, train: InteractionTable) -> None:
        self.adjacency = normalized_adjacency(train)

    def propagate(self) -> tuple[np.ndarray, np.ndarray]:
        """Final (user, item) embeddings used for scoring."""
        if self.kind == MF:
            return self.user_factors, self.item_factors
        return lightgcn_forward(self)

    def score(self, user: int, item: int) -> float:
        users, items = self.propagate()
        return float(users[user] @ items[item])

    def score_users(self, users) -> np.ndarray:
        """Raw scores of ``users`` against the whole catalog."""
        u_emb, i_emb = self.propagate()
        return u_emb[np.asarray(users)] @ i_emb.T

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.user_factors.copy(), self.item_factors.copy(), self.l2, self.kind,
                              self.n_layers, self.adjacency, self.seed)

    def check_finite(self) -> None:
        for name, arr in (("user_factors", self.user_factors), ("item_factors", self.item_factors)):
            if not np.isfinite(arr).all():
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise NonFiniteError(f"non-finite value in {name} at row {bad[0]}")


def init_xavier(num_users: int, num_items: int, dim: int, seed: int, kind: str = MF,
                l2: float = 0.01, n_layers: int = 3, train: InteractionTable | None = None) -> EmbeddingModel:
    """Xavier-uniform embedding tables with bound ``sqrt(6 / (2 dim))``."""
    if dim < 1:
        raise ValueError("latent dimension must be >= 1")
    if kind not in (MF, LIGHTGCN):
        raise ValueError(f"unknown backbone {kind!r}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (2 * dim))
    user_factors = rng.uniform(-bound, bound, size=(num_users, dim))
    item_factors = rng.uniform(-bound, bound, size=(num_items, dim))
    model = EmbeddingModel(user_factors, item_factors, l2=l2, kind=kind,
                           n_layers=n_layers if kind == LIGHTGCN else 0, seed=seed)
    if kind == LIGHTGCN and train is not None:
        model.attach_graph(train)
    return model


def _stacked(model: EmbeddingModel) -> np.ndarray:
    return np.vstack([model.user_factors, model.item_factors])


def _layer_mean(adj: sp.csr_matrix, base: np.ndarray, n_layers: int) -> np.ndarray:
    acc = base.copy()
    cur = base
    for _ in range(n_layers):
        cur = adj @ cur
        acc += cur
    return acc / (n_layers + 1)


def lightgcn_forward(model: EmbeddingModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean over layers ``0..L`` of ``A_hat^l E``; with ``L = 0`` the base embeddings come back."""
    if model.n_layers and model.adjacency is None:
        raise ValueError("LightGCN model has no propagation graph attached")
    base = _stacked(model)
    out = base if model.n_layers == 0 else _layer_mean(model.adjacency, base, model.n_layers)
    return out[:model.num_users], out[model.num_users:]


def bpr_batch_gradients(model: EmbeddingModel, users, pos, neg, reduce: str = "mean"):
    """Gradients of the BPR objective over a batch of ``(u, i, j)`` triples.

    Per triple the objective is ``-ln sigma(y_ui - y_uj) + l2 * (|e_u|^2 + |e_i|^2 + |e_j|^2)``
    where the regularized rows are the base embeddings.  Triples are averaged
    (``reduce="mean"``) or summed.  Returns ``(user_grad, item_grad, info)``
    with dense gradient arrays shaped like the factor tables; ``info`` holds
    the per-triple coefficient ``c = sigma(y_uj - y_ui)`` and the final
    embeddings used.
    """
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    n = users.size
    scale = 1.0 / n if reduce == "mean" else 1.0
    u_emb, i_emb = model.propagate()
    eu, ei, ej = u_emb[users], i_emb[pos], i_emb[neg]
    diff = np.einsum("bd,bd->b", eu, ei - ej)
    c = sigmoid(-diff)

    # gradient w.r.t. final embeddings
    g_u = np.zeros_like(u_emb)
    g_i = np.zeros_like(i_emb)
    cw = (c * scale)[:, None]
    np.add.at(g_u, users, -cw * (ei - ej))
    np.add.at(g_i, pos, -cw * eu)
    np.add.at(g_i, neg, cw * eu)

    if model.kind == LIGHTGCN and model.n_layers:
        # A_hat is symmetric, so the transpose propagation is the propagation itself
        back = _layer_mean(model.adjacency, np.vstack([g_u, g_i]), model.n_layers)
        g_u, g_i = back[:model.num_users], back[model.num_users:]

    if model.l2:
        r = 2.0 * model.l2 * scale
        np.add.at(g_u, users, r * model.user_factors[users])
        np.add.at(g_i, pos, r * model.item_factors[pos])
        np.add.at(g_i, neg, r * model.item_factors[neg])
    return g_u, g_i, {"c": c, "diff": diff, "user_emb": eu}


def bpr_triple_gradients(model: EmbeddingModel, u: int, i: int, j: int):
    """Gradients of one triple's regularized BPR loss as ``(user_grad, item_grad)``."""
    g_u, g_i, _ = bpr_batch_gradients(model, [u], [i], [j], reduce="sum")
    return g_u, g_i


def bpr_objective(model: EmbeddingModel, users, pos, neg, reduce: str = "mean") -> float:
    """Regularized BPR objective matching :func:`bpr_batch_gradients`."""
    users = np.asarray(users)
    pos = np.asarray(pos)
    neg = np.asarray(neg)
    u_emb, i_emb = model.propagate()
    diff = np.einsum("bd,bd->b", u_emb[users], i_emb[pos] - i_emb[neg])
    per = -log_sigmoid(diff) + model.l2 * (
        (model.user_factors[users] ** 2).sum(1)
        + (model.item_factors[pos] ** 2).sum(1)
        + (model.item_factors[neg] ** 2).sum(1)
    )
    return float(per.mean() if reduce == "mean" else per.sum())


@dataclass
class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays (updated in place)."""

    lr: float = 0.01
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for k, g in enumerate(grads):
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {k} at step {self.t + 1}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: EmbeddingModel, path, extra: dict | None = None) -> None:
    header = {
        "backbone": model.kind,
        "dim": model.dim,
        "n_layers": model.n_layers,
        "num_users": model.num_users,
        "num_items": model.num_items,
        "seed": model.seed,
        "l2": model.l2,
    }
    if extra:
        header.update(extra)
    payload = {
        "header": header,
        "user_factors": model.user_factors.ravel().tolist(),
        "item_factors": model.item_factors.ravel().tolist(),
    }
    # float repr is the shortest string that round-trips exactly
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, train: InteractionTable | None = None) -> tuple[EmbeddingModel, dict]:
    with open(path) as fh:
        payload = json.load(fh)
    h = payload["header"]
    user = np.array(payload["user_factors"], dtype=float).reshape(h["num_users"], h["dim"])
    item = np.array(payload["item_factors"], dtype=float).reshape(h["num_items"], h["dim"])
    model = EmbeddingModel(user, item, l2=h["l2"], kind=h["backbone"], n_layers=h["n_layers"], seed=h["seed"])
    if model.kind == LIGHTGCN:
        if train is None:
            raise ValueError("a LightGCN checkpoint needs its train table to rebuild the graph")
        model.attach_graph(train)
    return model, h
