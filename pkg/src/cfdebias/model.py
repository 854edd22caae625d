"""Causal-graph rating model.

Review documents are encoded into ``z_u`` / ``z_i`` by a text CNN with
position attention; id embeddings ``h_u`` / ``h_i`` feed an NCF branch. The
fused prediction is::

    y_hat_ui  = q_m + f_u(z_u) + f_i(z_i)
    s_ui      = f_s(z_u * z_i)
    y_hat_uis = y_hat_ui * sigmoid(s_ui)
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import CONV_WIDTH, PAD
from .errors import InvalidArgumentError, InvalidIndexError, InvalidShapeError

POOL_WINDOW = 3
POOL_STRIDE = 3
SIDES = ("user", "item")


@dataclass
class ModelDims:
    d_w: int = 100  # word embedding
    d_h: int = 32   # id embedding
    d_c: int = 64   # conv channels
    d_z: int = 64   # review embedding
    d_a: int = 32   # attention hidden
    d_m: int = 32   # interaction head hidden


@dataclass
class ModelParams:
    """Named parameter arrays plus the sizes they were built for."""
    dims: ModelDims
    arrays: Dict[str, np.ndarray]
    n_vocab: int
    n_users: int
    n_items: int

    def copy(self) -> "ModelParams":
        return ModelParams(copy.copy(self.dims), {k: v.copy() for k, v in self.arrays.items()},
                           self.n_vocab, self.n_users, self.n_items)

    def meta(self) -> dict:
        return {"dims": asdict(self.dims), "n_vocab": self.n_vocab,
                "n_users": self.n_users, "n_items": self.n_items}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], meta: Mapping) -> "ModelParams":
        return cls(ModelDims(**meta["dims"]), dict(arrays), meta["n_vocab"], meta["n_users"], meta["n_items"])


def parameter_shapes(dims: ModelDims, n_vocab: int, n_users: int, n_items: int) -> Dict[str, tuple]:
    shapes = {"word_emb": (n_vocab, dims.d_w), "user_emb": (n_users, dims.d_h),
              "item_emb": (n_items, dims.d_h)}
    for side in SIDES:
        shapes.update({
            f"{side}_conv_w": (CONV_WIDTH, dims.d_w, dims.d_c), f"{side}_conv_b": (dims.d_c,),
            f"{side}_fc_w": (dims.d_c, dims.d_z), f"{side}_fc_b": (dims.d_z,),
            f"{side}_att1_w": (dims.d_z, dims.d_a), f"{side}_att1_b": (dims.d_a,),
            f"{side}_att2_w": (dims.d_a, 1), f"{side}_att2_b": (1,),
        })
    shapes.update({
        "fu_w": (dims.d_z, 1), "fu_b": (1,), "fi_w": (dims.d_z, 1), "fi_b": (1,),
        "fs_w": (dims.d_z, 1), "fs_b": (1,),
        "fm1_w": (dims.d_h, dims.d_m), "fm1_b": (dims.d_m,), "fm2_w": (dims.d_m, 1), "fm2_b": (1,),
    })
    return shapes


def init_params(dims: ModelDims, n_vocab: int, n_users: int, n_items: int,
                rng: np.random.Generator) -> ModelParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); embeddings ~ U(-1/sqrt(d), 1/sqrt(d));
    biases zero; the PAD word row zero."""
    arrays = {}
    for name, shape in parameter_shapes(dims, n_vocab, n_users, n_items).items():
        if name.endswith("_b"):
            arrays[name] = np.zeros(shape)
            continue
        fan_in = shape[-1] if name.endswith("_emb") else int(np.prod(shape[:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays["word_emb"][PAD] = 0.0
    return ModelParams(dims, arrays, n_vocab, n_users, n_items)


def load_pretrained_embeddings(path, vocab: Mapping[str, int], params: ModelParams) -> int:
    """Overwrite word-embedding rows from a text file of ``token v1 ... v_dw`` lines.

    Returns the number of vocabulary rows that were set.
    """
    emb = params.arrays["word_emb"]
    hits = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip().split(" ")
            if len(parts) != emb.shape[1] + 1:
                continue
            idx = vocab.get(parts[0])
            if idx is None or idx == PAD:
                continue
            emb[idx] = np.asarray(parts[1:], dtype=np.float64)
            hits += 1
    return hits


# ---------------------------------------------------------------- document batching

@dataclass
class DocBatch:
    tokens: np.ndarray     # (B, L) int
    conv_mask: np.ndarray  # (B, L - 4, 1) float, 1 for conv windows inside the document
    pool_mask: np.ndarray  # (B, P) bool, pooled positions that cover document windows


def effective_length(doc: np.ndarray) -> int:
    """Length up to the last non-PAD token, never below the conv width."""
    nz = np.flatnonzero(np.asarray(doc) != PAD)
    return max(CONV_WIDTH, int(nz[-1]) + 1 if nz.size else 0)


def batch_docs(docs: Sequence[np.ndarray]) -> DocBatch:
    """Pad documents to a shared length. Trailing PAD is ignored: conv windows
    past a document's effective length are zeroed after ReLU, and pooled
    positions made only of such windows are excluded from attention."""
    lengths = np.array([effective_length(d) for d in docs])
    n_conv = lengths - CONV_WIDTH + 1
    n_pool = -(-n_conv // POOL_WINDOW)
    conv_len = int(n_pool.max()) * POOL_WINDOW
    total = conv_len + CONV_WIDTH - 1
    tokens = np.full((len(docs), total), PAD, dtype=np.int64)
    for b, (doc, n) in enumerate(zip(docs, lengths)):
        tokens[b, :n] = doc[:n]
    conv_mask = (np.arange(conv_len)[None, :] < n_conv[:, None]).astype(np.float64)[:, :, None]
    pool_mask = np.arange(conv_len // POOL_WINDOW)[None, :] < n_pool[:, None]
    return DocBatch(tokens, conv_mask, pool_mask)


# ---------------------------------------------------------------- graph pieces

def encode_batch(P: Mapping[str, Tensor], side: str, batch: DocBatch, train: bool = False,
                 rng: Optional[np.random.Generator] = None, dropout: float = 0.0,
                 return_attention: bool = False):
    """embed -> conv(5) -> ReLU -> maxpool(3, 3) -> FC -> dropout -> attention -> z."""
    e = ad.embedding(P["word_emb"], batch.tokens)
    c = ad.conv1d(e, P[f"{side}_conv_w"], P[f"{side}_conv_b"])
    c = ad.mul(ad.relu(c), batch.conv_mask)
    pooled = ad.maxpool1d(c, POOL_WINDOW, POOL_STRIDE)
    v = ad.linear(pooled, P[f"{side}_fc_w"], P[f"{side}_fc_b"])
    v = ad.dropout(v, dropout, rng, train)
    a = ad.relu(ad.linear(v, P[f"{side}_att1_w"], P[f"{side}_att1_b"]))
    a = ad.dropout(a, dropout, rng, train)
    a = ad.linear(a, P[f"{side}_att2_w"], P[f"{side}_att2_b"])
    b, n_pos = batch.pool_mask.shape
    weights = ad.softmax(ad.reshape(a, (b, n_pos)), mask=batch.pool_mask)
    z = ad.sum_(ad.mul(v, ad.reshape(weights, (b, n_pos, 1))), axis=1)
    return (z, weights) if return_attention else z


def _scalar_head(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = ad.dense(x, w, b)
    return ad.reshape(out, out.shape[:-1])


def interaction_branch(P: Mapping[str, Tensor], h_u: Tensor, h_i: Tensor) -> Tensor:
    hidden = ad.relu(ad.dense(ad.mul(h_u, h_i), P["fm1_w"], P["fm1_b"]))
    return _scalar_head(hidden, P["fm2_w"], P["fm2_b"])


def gate_branch(P: Mapping[str, Tensor], z_u: Tensor, z_i: Tensor):
    if z_u.shape != z_i.shape:
        raise InvalidShapeError(f"z_u {z_u.shape} and z_i {z_i.shape} differ")
    s = _scalar_head(ad.mul(z_u, z_i), P["fs_w"], P["fs_b"])
    return s, ad.sigmoid(s)


def fuse(P: Mapping[str, Tensor], z_u: Tensor, z_i: Tensor, h_u: Tensor, h_i: Tensor) -> Dict[str, Tensor]:
    y_u = _scalar_head(z_u, P["fu_w"], P["fu_b"])
    y_i = _scalar_head(z_i, P["fi_w"], P["fi_b"])
    q_m = interaction_branch(P, h_u, h_i)
    y_ui = ad.add(ad.add(q_m, y_u), y_i)
    s, sig = gate_branch(P, z_u, z_i)
    return {"q_m": q_m, "y_hat_u": y_u, "y_hat_i": y_i, "s_ui": s, "sigma_s": sig,
            "y_hat_ui": y_ui, "y_hat_uis": ad.mul(y_ui, sig)}


# ---------------------------------------------------------------- bundles

@dataclass
class PredictionBundle:
    """Per-pair forward outputs (arrays aligned with ``users``/``items``)."""
    users: np.ndarray
    items: np.ndarray
    q_m: np.ndarray
    y_hat_u: np.ndarray
    y_hat_i: np.ndarray
    s_ui: np.ndarray
    sigma_s: np.ndarray
    y_hat_ui: np.ndarray
    y_hat_uis: np.ndarray
    y_debiased: Optional[np.ndarray] = None

    FIELDS = ("q_m", "y_hat_u", "y_hat_i", "s_ui", "sigma_s", "y_hat_ui", "y_hat_uis")

    @classmethod
    def from_graph(cls, users, items, out: Mapping[str, Tensor]) -> "PredictionBundle":
        return cls(np.asarray(users), np.asarray(items), **{k: out[k].data.copy() for k in cls.FIELDS})

    @classmethod
    def concat(cls, parts: Sequence["PredictionBundle"]) -> "PredictionBundle":
        cols = {k: np.concatenate([getattr(p, k) for p in parts]) for k in ("users", "items") + cls.FIELDS}
        return cls(**cols)

    def take(self, idx) -> "PredictionBundle":
        return PredictionBundle(**{k: getattr(self, k)[idx] for k in ("users", "items") + self.FIELDS})

    def __len__(self):
        return len(self.users)


# ---------------------------------------------------------------- model

def as_tensors(arrays: Mapping[str, np.ndarray], requires_grad: bool = False) -> Dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}


class RatingModel:
    """Binds parameter tensors to a corpus' entity documents."""

    def __init__(self, user_docs: Sequence[np.ndarray], item_docs: Sequence[np.ndarray],
                 dropout: float = 0.5, encode_chunk: int = 256):
        self.docs = {"user": list(user_docs), "item": list(item_docs)}
        self.dropout = dropout
        self.encode_chunk = encode_chunk

    def _check(self, side: str, idx: np.ndarray) -> None:
        n = len(self.docs[side])
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise InvalidIndexError(f"{side} index out of range [0, {n})")

    def encode(self, P: Mapping[str, Tensor], side: str, entities, train: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        entities = np.asarray(entities, dtype=np.int64)
        self._check(side, entities)
        batch = batch_docs([self.docs[side][e] for e in entities])
        return encode_batch(P, side, batch, train, rng, self.dropout)

    def forward(self, P: Mapping[str, Tensor], users, items, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> Dict[str, Tensor]:
        """Graph forward for aligned ``users``/``items``; each distinct entity is encoded once."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check("user", users)
        self._check("item", items)
        uu, u_inv = np.unique(users, return_inverse=True)
        ii, i_inv = np.unique(items, return_inverse=True)
        z_u = ad.gather(self.encode(P, "user", uu, train, rng), u_inv)
        z_i = ad.gather(self.encode(P, "item", ii, train, rng), i_inv)
        h_u = ad.gather(P["user_emb"], users)
        h_i = ad.gather(P["item_emb"], items)
        return fuse(P, z_u, z_i, h_u, h_i)

    # -- evaluation path

    def encode_all(self, params: ModelParams, side: str) -> np.ndarray:
        """Eval-mode embeddings for every entity, in fixed chunks of index order so a
        given entity always gets the same bits."""
        P = as_tensors(params.arrays)
        n = len(self.docs[side])
        out = []
        for start in range(0, n, self.encode_chunk):
            ids = np.arange(start, min(n, start + self.encode_chunk))
            out.append(self.encode(P, side, ids).data)
        return np.concatenate(out) if out else np.zeros((0, params.dims.d_z))

    def predict(self, params: ModelParams, users, items, batch_size: int = 1024,
                cache: Optional[Dict[str, np.ndarray]] = None) -> PredictionBundle:
        """Eval-mode bundle. Results for a pair do not depend on ``batch_size``."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        self._check("user", users)
        self._check("item", items)
        if cache is None:
            cache = self.embedding_cache(params)
        P = as_tensors(params.arrays)
        parts = []
        for start in range(0, max(len(users), 1), batch_size):
            u, i = users[start:start + batch_size], items[start:start + batch_size]
            out = fuse(P, Tensor(cache["user"][u]), Tensor(cache["item"][i]),
                       Tensor(params.arrays["user_emb"][u]), Tensor(params.arrays["item_emb"][i]))
            parts.append(PredictionBundle.from_graph(u, i, out))
        return PredictionBundle.concat(parts)

    def embedding_cache(self, params: ModelParams) -> Dict[str, np.ndarray]:
        return {side: self.encode_all(params, side) for side in SIDES}


# ---------------------------------------------------------------- single-pair conveniences

def encode_entity(doc, params: ModelParams, side: str = "user") -> np.ndarray:
    """Eval-mode review embedding of one document."""
    doc = np.asarray(doc, dtype=np.int64)
    if doc.size == 0:
        raise InvalidShapeError("empty document; pad to the conv width first")
    z = encode_batch(as_tensors(params.arrays), side, batch_docs([doc]))
    return z.data[0]


def interaction_score(u: int, i: int, params: ModelParams) -> float:
    """q_m = f_m(h_u * h_i)."""
    if not 0 <= u < params.n_users or not 0 <= i < params.n_items:
        raise InvalidIndexError(f"pair ({u}, {i}) out of range")
    P = as_tensors(params.arrays)
    q = interaction_branch(P, Tensor(params.arrays["user_emb"][[u]]), Tensor(params.arrays["item_emb"][[i]]))
    return float(q.data[0])


def sentiment_gate(z_u, z_i, params: ModelParams):
    """(s_ui, sigmoid(s_ui)) for one pair of review embeddings."""
    z_u, z_i = np.atleast_2d(z_u), np.atleast_2d(z_i)
    s, sig = gate_branch(as_tensors(params.arrays), Tensor(z_u), Tensor(z_i))
    return float(s.data[0]), float(sig.data[0])


def forward(u: int, i: int, params: ModelParams, model: RatingModel, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> PredictionBundle:
    if mode not in ("train", "eval"):
        raise InvalidArgumentError("mode must be 'train' or 'eval'")
    out = model.forward(as_tensors(params.arrays), [u], [i], train=mode == "train", rng=rng)
    return PredictionBundle.from_graph(np.array([u]), np.array([i]), out)
