"""Counterfactual debiased inference and the beta sweep.

The debiased score removes the reference-state term from the gated
prediction::

    y_debiased = y_hat_ui * sigma(s_ui) - beta * sigma(s_ui)

``beta`` stands for the (discounted) reference-state rating; it is chosen on
validation data from a small sweep set.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .metrics import bias_metrics, mse
from .sentiment import extreme_deciles
from .training import evaluate

DEFAULT_BETAS = (0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
CRITERIA = ("mse", "mse_bias_tradeoff")


@dataclass
class DebiasConfig:
    beta: float = 0.0
    sweep: Tuple[float, ...] = DEFAULT_BETAS
    criterion: str = "mse"
    tradeoff_lambda: float = 1.0
    clip: bool = False

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidArgumentError("beta must be >= 0")
        if not self.sweep or any(b < 0 for b in self.sweep):
            raise InvalidArgumentError("sweep set must be non-empty with values >= 0")
        if self.criterion not in CRITERIA:
            raise InvalidArgumentError(f"criterion must be one of {CRITERIA}")


def debias(bundle, beta: float, clip: bool = False) -> np.ndarray:
    """Natural-direct-effect score for every pair in ``bundle``."""
    if beta < 0:
        raise InvalidArgumentError("beta must be >= 0")
    out = bundle.y_hat_ui * bundle.sigma_s - beta * bundle.sigma_s
    return np.clip(out, 1.0, 5.0) if clip else out


@dataclass
class SweepRow:
    beta: float
    mse: float
    bu: float
    bi: float
    selected: bool = False


def sweep_table(bundle, ratings, user_scores, item_scores, betas: Sequence[float] = DEFAULT_BETAS,
                criterion: str = "mse", tradeoff_lambda: float = 1.0, clip: bool = False):
    """Metrics of every beta over one precomputed bundle. Returns ``(rows, selected_beta)``.

    ``mse`` picks the lowest MSE; ``mse_bias_tradeoff`` the lowest
    ``MSE + lambda * (BU + BI)``. Ties go to the smaller beta.
    """
    if len(betas) == 0:
        raise InvalidArgumentError("empty sweep set")
    if criterion not in CRITERIA:
        raise InvalidArgumentError(f"criterion must be one of {CRITERIA}")
    ratings = np.asarray(ratings, dtype=np.float64)
    u_ext, i_ext = extreme_deciles(user_scores), extreme_deciles(item_scores)
    rows = []
    for beta in sorted(betas):
        pred = debias(bundle, beta, clip)
        bu, bi = bias_metrics((ratings - pred) ** 2, bundle.users, bundle.items, u_ext, i_ext)
        rows.append(SweepRow(float(beta), mse(ratings, pred), bu, bi))

    def score(r):
        return r.mse if criterion == "mse" else r.mse + tradeoff_lambda * (r.bu + r.bi)

    best = rows[0]
    for r in rows[1:]:
        if score(r) < score(best):
            best = r
    best.selected = True
    return rows, best.beta


def beta_sweep(params, corpus, user_scores, item_scores, split: str = "val",
               betas: Sequence[float] = DEFAULT_BETAS, criterion: str = "mse",
               tradeoff_lambda: float = 1.0, clip: bool = False, model=None):
    """Evaluate ``split`` once, then score every beta on the cached bundle."""
    _, bundle = evaluate(params, split, corpus, model)
    ratings = corpus.ratings[corpus.indices(split)]
    return sweep_table(bundle, ratings, user_scores, item_scores, betas, criterion, tradeoff_lambda, clip)


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "mse", "bu", "bi", "selected"])
        for r in rows:
            w.writerow([repr(r.beta), repr(r.mse), repr(r.bu), repr(r.bi), int(r.selected)])
