"""Multi-task training and evaluation."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step
from .data import PAD, Corpus
from .errors import InvalidArgumentError, NumericFailureError
from .metrics import mse
from .model import ModelDims, ModelParams, PredictionBundle, RatingModel, as_tensors, init_params

log = logging.getLogger(__name__)

REFERENCE_SEEDS = (670849, 234725, 300191, 49002, 237952)


@dataclass
class TrainConfig:
    lr: float = 0.002
    weight_decay: float = 1e-6
    alpha_u: float = 0.001
    alpha_i: float = 0.001
    batch_size: int = 128          # <= 0 means full batch
    max_epochs: int = 30
    patience: int = 5
    seed: int = 670849
    dropout: float = 0.5
    dims: ModelDims = field(default_factory=ModelDims)
    eval_batch_size: int = 1024
    target_mse: Optional[float] = None   # stop as soon as the selection MSE drops below this

    def __post_init__(self):
        if isinstance(self.dims, dict):
            self.dims = ModelDims(**self.dims)
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be positive")
        if self.alpha_u < 0 or self.alpha_i < 0:
            raise InvalidArgumentError("alpha_u and alpha_i must be non-negative")
        if self.max_epochs < 1:
            raise InvalidArgumentError("max_epochs must be >= 1")
        if self.patience < 1:
            raise InvalidArgumentError("patience must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    L: float
    L_RC: float
    L_U: float
    L_I: float
    val_mse: float


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    selection_split: str = "val"
    wall_time: float = 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L", "L_RC", "L_U", "L_I", "val_mse"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.L), repr(r.L_RC), repr(r.L_U), repr(r.L_I), repr(r.val_mse)])


class Losses(NamedTuple):
    total: Tensor
    rc: Tensor
    user: Tensor
    item: Tensor


def compute_losses(y_hat_uis, y_hat_u, y_hat_i, y, alpha_u: float, alpha_i: float) -> Losses:
    """L_RC = sum((y - y_uis)^2) / 2N, L_U and L_I are plain MSEs of the two
    review-only heads, L = L_RC + alpha_u * L_U + alpha_i * L_I."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if n == 0:
        raise InvalidArgumentError("empty batch")
    rc = ad.mul(ad.sum_(ad.square(ad.sub(y, y_hat_uis))), 1.0 / (2 * n))
    lu = ad.mul(ad.sum_(ad.square(ad.sub(y, y_hat_u))), 1.0 / n)
    li = ad.mul(ad.sum_(ad.square(ad.sub(y, y_hat_i))), 1.0 / n)
    total = ad.add(ad.add(rc, ad.mul(lu, alpha_u)), ad.mul(li, alpha_i))
    return Losses(total, rc, lu, li)


def evaluate(params: ModelParams, split: str, corpus: Corpus, model: Optional[RatingModel] = None,
             batch_size: int = 1024, cache=None) -> Tuple[float, PredictionBundle]:
    """Eval-mode MSE of the biased prediction y_hat_uis over one split."""
    idx = corpus.indices(split)
    if idx.size == 0:
        raise InvalidArgumentError(f"split {split!r} is empty")
    model = model or RatingModel(corpus.user_docs, corpus.item_docs)
    bundle = model.predict(params, corpus.users[idx], corpus.items[idx], batch_size, cache)
    return mse(corpus.ratings[idx], bundle.y_hat_uis), bundle


class TrainingError(NumericFailureError):
    pass


def train(corpus: Corpus, config: TrainConfig, init: Optional[ModelParams] = None):
    """Adam on the multi-task loss with early stopping on validation MSE.

    Returns ``(best_params, history)``. Runs are bit-reproducible for a fixed
    config and corpus.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = init.copy() if init is not None else init_params(
        config.dims, len(corpus.vocab), corpus.n_users, corpus.n_items, rng)
    model = RatingModel(corpus.user_docs, corpus.item_docs, dropout=config.dropout)
    state = AdamState.zeros_like(params.arrays)
    train_idx = corpus.indices("train")
    if train_idx.size == 0:
        raise InvalidArgumentError("training split is empty")
    select_split = "val"
    if corpus.indices("val").size == 0:
        warnings.warn("validation split is empty; selecting on training MSE", stacklevel=2)
        select_split = "train"

    n = train_idx.size
    full_batch = config.batch_size <= 0 or config.batch_size >= n
    bs = n if full_batch else config.batch_size
    history = TrainHistory(selection_split=select_split)
    best, best_mse, stale = params.copy(), np.inf, 0

    for epoch in range(config.max_epochs):
        order = train_idx if full_batch else train_idx[rng.permutation(n)]
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, n, bs)):
            rows = order[start:start + bs]
            P = as_tensors(params.arrays, requires_grad=True)
            out = model.forward(P, corpus.users[rows], corpus.items[rows], train=True, rng=rng)
            losses = compute_losses(out["y_hat_uis"], out["y_hat_u"], out["y_hat_i"],
                                    corpus.ratings[rows], config.alpha_u, config.alpha_i)
            values = np.array([l.item() for l in losses])
            if not np.isfinite(values).all():
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: "
                                    f"L={values[0]}, L_RC={values[1]}, L_U={values[2]}, L_I={values[3]}")
            losses.total.backward()
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
            grads["word_emb"][PAD] = 0.0
            adam_step(params.arrays, grads, state, config.lr, config.weight_decay)
            sums += values
            n_batches += 1
        L, rc, lu, li = sums / n_batches
        sel_mse, _ = evaluate(params, select_split, corpus, model, config.eval_batch_size)
        history.records.append(EpochRecord(epoch, L, rc, lu, li, sel_mse))
        log.info("epoch %d  L=%.5f  L_RC=%.5f  L_U=%.5f  L_I=%.5f  %s_mse=%.5f",
                 epoch, L, rc, lu, li, select_split, sel_mse)
        if sel_mse < best_mse:
            best, best_mse, stale = params.copy(), sel_mse, 0
            history.best_epoch = epoch
            if config.target_mse is not None and sel_mse < config.target_mse:
                log.info("target MSE reached after epoch %d", epoch)
                break
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d (best %d)", epoch, history.best_epoch)
                break
    history.wall_time = time.perf_counter() - t0
    return best, history
