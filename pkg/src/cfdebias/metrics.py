"""Evaluation analytics: MSE, sentiment-bias metrics (BU/BI), polarity-group
error summaries, rating-distribution shift, gate/sentiment correlation and the
Wilcoxon signed-rank test."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateTestError, InvalidArgumentError, UndefinedMetricError
from .sentiment import decile_groups, extreme_deciles


def mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise InvalidArgumentError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise InvalidArgumentError("MSE of an empty set")
    d = y - y_hat
    return float(np.mean(d * d))


def _restricted_mse(sq_errors, owner, members, what) -> float:
    sel = np.isin(owner, members)
    if not sel.any():
        raise UndefinedMetricError(f"no interactions for the {what} set")
    return float(np.mean(sq_errors[sel]))


def bias_metrics(sq_errors, users, items, user_extremes, item_extremes) -> Tuple[float, float]:
    """BU = MSE(users in U-) - MSE(users in U+), BI likewise over items.

    ``*_extremes`` are ``(positive, negative)`` index sets as returned by
    :func:`cfdebias.sentiment.extreme_deciles`. Errors are per-interaction
    squared errors.
    """
    sq_errors = np.asarray(sq_errors, dtype=np.float64)
    u_pos, u_neg = user_extremes
    i_pos, i_neg = item_extremes
    bu = _restricted_mse(sq_errors, users, u_neg, "negative-user") - _restricted_mse(sq_errors, users, u_pos, "positive-user")
    bi = _restricted_mse(sq_errors, items, i_neg, "negative-item") - _restricted_mse(sq_errors, items, i_pos, "positive-item")
    return bu, bi


# ---------------------------------------------------------------- group summaries

def five_number(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"min": None, "q1": None, "median": None, "q3": None, "max": None, "mean": None, "count": 0}
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return {"min": float(q[0]), "q1": float(q[1]), "median": float(q[2]), "q3": float(q[3]),
            "max": float(q[4]), "mean": float(v.mean()), "count": int(v.size)}


def per_entity_mse(sq_errors, owner, n_entities: int) -> Tuple[np.ndarray, np.ndarray]:
    owner = np.asarray(owner, dtype=np.int64)
    counts = np.bincount(owner, minlength=n_entities)
    sums = np.bincount(owner, weights=np.asarray(sq_errors, dtype=np.float64), minlength=n_entities)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts, counts


def group_mse_stats(sq_errors, owner, groups: Mapping[str, np.ndarray]) -> Dict[str, dict]:
    """Five-number summary (+ mean, count) of per-entity mean squared error per group.

    Entities without interactions in ``sq_errors`` are left out; a group with
    none left is reported with ``count == 0``.
    """
    n = 1 + max([int(np.max(g)) for g in groups.values() if len(g)] + [int(np.max(owner, initial=0))])
    means, counts = per_entity_mse(sq_errors, owner, n)
    out = {}
    for label, members in groups.items():
        members = np.asarray(members, dtype=np.int64)
        members = members[counts[members] > 0]
        out[label] = five_number(means[members])
    return out


# ---------------------------------------------------------------- distribution shift

@dataclass
class DistDiff:
    edges: List[float]
    before: List[int]
    after: List[int]
    diff: List[int]


def rating_distribution_diff(before, after, bin_width: float = 0.1, lo: float = 0.0, hi: float = 5.0) -> DistDiff:
    """Per-bin count(after) - count(before) on [lo, hi]; outside values go to the edge bins."""
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise InvalidArgumentError("before and after must have equal length")
    if bin_width <= 0:
        raise InvalidArgumentError("bin_width must be positive")
    n_bins = int(round((hi - lo) / bin_width))

    def counts(x):
        idx = np.floor(np.round((x - lo) / bin_width, 9)).astype(np.int64)
        return np.bincount(np.clip(idx, 0, n_bins - 1), minlength=n_bins)

    cb, ca = counts(before), counts(after)
    edges = [round(lo + k * bin_width, 10) for k in range(n_bins + 1)]
    return DistDiff(edges, cb.tolist(), ca.tolist(), (ca - cb).tolist())


# ---------------------------------------------------------------- correlation

def spearman(x, y) -> Tuple[float, bool]:
    """Spearman rank correlation (average ranks for ties).

    Returns ``(rho, degenerate)``; a constant side gives ``(0.0, True)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("x and y must be 1-D and of equal length")
    if x.size < 2:
        raise UndefinedMetricError("correlation needs at least 2 pairs")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    return float(rx @ ry) / math.sqrt(sxx * syy), False


def sentiment_correlation(sigma, users, items, user_scores, item_scores, n_bins: int = 20) -> dict:
    """Binned mean of sigma(s_ui) against s_u * s_i, plus Spearman over all pairs."""
    sigma = np.asarray(sigma, dtype=np.float64)
    x = np.asarray(user_scores)[users] * np.asarray(item_scores)[items]
    rho, degenerate = spearman(x, sigma)
    lo, hi = float(x.min()), float(x.max())
    width = (hi - lo) / n_bins if hi > lo else 1.0
    idx = np.clip(((x - lo) / width).astype(np.int64), 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        sel = idx == b
        bins.append({"lo": lo + b * width, "hi": lo + (b + 1) * width, "count": int(sel.sum()),
                     "mean_sigma": float(sigma[sel].mean()) if sel.any() else None})
    return {"spearman": rho, "degenerate": degenerate, "n_pairs": int(x.size), "bins": bins}


# ---------------------------------------------------------------- Wilcoxon

@dataclass
class WilcoxonResult:
    w_minus: float
    w_plus: float
    n: int
    z: Optional[float]
    p: float
    mode: str
    alternative: str


def _normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def signed_rank_null_counts(n: int) -> List[int]:
    """Number of sign assignments of ranks 1..n giving each negative-rank sum."""
    counts = [1]
    for r in range(1, n + 1):
        new = counts + [0] * r
        for w, c in enumerate(counts):
            new[w + r] += c
        counts = new
    return counts


def wilcoxon_signed_rank(differences, alternative: str = "greater", mode: str = "normal") -> WilcoxonResult:
    """Wilcoxon signed-rank test on paired differences.

    ``alternative="greater"`` tests whether differences tend to be positive,
    so small negative-rank sums give small p. Zeros are dropped. The normal
    mode applies no continuity correction; tied magnitudes get average ranks
    and the usual variance correction. Exact mode (n <= 25, no zeros, no
    ties) counts all 2**n sign assignments and otherwise falls back to the
    normal approximation with a warning.
    """
    if alternative not in ("greater", "less", "two-sided"):
        raise InvalidArgumentError(f"unknown alternative {alternative!r}")
    if mode not in ("exact", "normal"):
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    d = np.asarray(differences, dtype=np.float64)
    has_zero = bool((d == 0).any())
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateTestError("all differences are zero")
    mag = np.abs(d)
    ranks = rankdata(mag)
    w_minus = float(ranks[d < 0].sum())
    w_plus = float(ranks[d > 0].sum())
    tied = np.unique(mag).size != n

    if mode == "exact" and (n > 25 or has_zero or tied):
        warnings.warn("exact Wilcoxon needs n <= 25 with no zeros or ties; using the normal approximation",
                      stacklevel=2)
        mode = "normal"

    if mode == "exact":
        counts = signed_rank_null_counts(n)
        total = 2 ** n
        w = int(round(w_minus))
        p_greater = sum(counts[:w + 1]) / total
        p_less = sum(counts[w:]) / total
        p = {"greater": p_greater, "less": p_less,
             "two-sided": min(1.0, 2.0 * min(p_greater, p_less))}[alternative]
        return WilcoxonResult(w_minus, w_plus, n, None, p, "exact", alternative)

    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(mag, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes ** 3 - tie_sizes).sum()) / 48.0
    z = (w_minus - mean) / math.sqrt(var)
    if alternative == "greater":
        p = _normal_cdf(z)
    elif alternative == "less":
        p = _normal_cdf(-z)
    else:
        p = min(1.0, 2.0 * min(_normal_cdf(z), _normal_cdf(-z)))
    return WilcoxonResult(w_minus, w_plus, n, z, p, "normal", alternative)


# ---------------------------------------------------------------- report

@dataclass
class BiasReport:
    beta: float
    split: str
    mse: float
    bu: float
    bi: float
    mse_before: float
    bu_before: float
    bi_before: float
    group_stats: Dict[str, Dict[str, Dict[str, dict]]] = field(default_factory=dict)
    dist_diff: Optional[DistDiff] = None
    correlation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def export(self, out_dir) -> List[Path]:
        """Write report.json, group_stats.csv, dist_diff.csv and correlation_bins.csv."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "group_stats.csv", out / "dist_diff.csv", out / "correlation_bins.csv"]
        paths[0].write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        cols = ["min", "q1", "median", "q3", "max", "mean", "count"]
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entity", "phase", "group"] + cols)
            for entity, phases in self.group_stats.items():
                for phase, groups in phases.items():
                    for label, stats in groups.items():
                        w.writerow([entity, phase, label] + ["" if stats[c] is None else repr(stats[c]) for c in cols])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count_before", "count_after", "diff"])
            dd = self.dist_diff
            for k, diff in enumerate(dd.diff):
                w.writerow([repr(dd.edges[k]), repr(dd.edges[k + 1]), dd.before[k], dd.after[k], diff])
        with open(paths[3], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_lo", "x_hi", "count", "mean_sigma"])
            for b in self.correlation["bins"]:
                w.writerow([repr(b["lo"]), repr(b["hi"]), b["count"],
                            "" if b["mean_sigma"] is None else repr(b["mean_sigma"])])
        return paths


def build_bias_report(bundle, ratings, user_scores, item_scores, beta: float, split: str = "test",
                      bin_width: float = 0.1, debiased=None) -> BiasReport:
    """Before (beta = 0) versus after (``debiased``) analytics for one evaluated split."""
    ratings = np.asarray(ratings, dtype=np.float64)
    before = bundle.y_hat_uis
    after = before if debiased is None else np.asarray(debiased)
    err_before = (ratings - before) ** 2
    err_after = (ratings - after) ** 2
    u_ext, i_ext = extreme_deciles(user_scores), extreme_deciles(item_scores)
    bu0, bi0 = bias_metrics(err_before, bundle.users, bundle.items, u_ext, i_ext)
    bu1, bi1 = bias_metrics(err_after, bundle.users, bundle.items, u_ext, i_ext)
    u_groups, i_groups = decile_groups(user_scores), decile_groups(item_scores)
    groups = {
        "user": {"before": group_mse_stats(err_before, bundle.users, u_groups),
                 "after": group_mse_stats(err_after, bundle.users, u_groups)},
        "item": {"before": group_mse_stats(err_before, bundle.items, i_groups),
                 "after": group_mse_stats(err_after, bundle.items, i_groups)},
    }
    return BiasReport(beta=beta, split=split, mse=mse(ratings, after), bu=bu1, bi=bi1,
                      mse_before=mse(ratings, before), bu_before=bu0, bi_before=bi0,
                      group_stats=groups, dist_diff=rating_distribution_diff(before, after, bin_width),
                      correlation=sentiment_correlation(bundle.sigma_s, bundle.users, bundle.items,
                                                        user_scores, item_scores))
