"""Lexicon polarity scoring and polarity-based entity grouping.

Review polarity is the mean lexicon polarity over matched tokens; a match
directly preceded by a negation token has its polarity scaled by the
negation multiplier. Entities are then ranked by the mean polarity of their
reviews.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, FrozenSet, Sequence, Tuple

import numpy as np

from .errors import InsufficientEntitiesError, LexiconFormatError, UndefinedMetricError

DEFAULT_NEGATIONS = frozenset({"not", "no", "never", "n't"})
GROUP_LABELS = ("N5", "N4", "N3", "N2", "N1", "P1", "P2", "P3", "P4", "P5")


@dataclass(frozen=True)
class Lexicon:
    polarity: Dict[str, float]
    negations: FrozenSet[str] = DEFAULT_NEGATIONS
    negation_multiplier: float = -0.5

    def __post_init__(self):
        bad = [t for t, p in self.polarity.items() if not -1.0 <= p <= 1.0]
        if bad:
            raise LexiconFormatError(f"polarities outside [-1, 1]: {bad[:5]}")
        if not -1.0 <= self.negation_multiplier < 0.0:
            raise LexiconFormatError("negation multiplier must lie in [-1, 0)")


def parse_lexicon(lines: Sequence[str], source: str = "<lexicon>", **kwargs) -> Lexicon:
    table, errors = {}, []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 2 or not parts[0]:
                raise ValueError
            value = float(parts[1])
            if not -1.0 <= value <= 1.0:
                raise ValueError
        except ValueError:
            errors.append(lineno)
            continue
        table[parts[0].strip().lower()] = value
    if errors:
        shown = ", ".join(map(str, errors[:10]))
        raise LexiconFormatError(f"{source}: invalid lexicon lines {shown}"
                                 + (f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""))
    return Lexicon(table, **kwargs)


def load_lexicon(path=None, **kwargs) -> Lexicon:
    """Read a ``token<TAB>polarity`` file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("cfdebias").joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
        return parse_lexicon(text.splitlines(), "default lexicon", **kwargs)
    return parse_lexicon(Path(path).read_text(encoding="utf-8").splitlines(), str(path), **kwargs)


def review_polarity(tokens: Sequence[str], lexicon: Lexicon) -> float:
    total, hits = 0.0, 0
    table, neg = lexicon.polarity, lexicon.negations
    for k, tok in enumerate(tokens):
        p = table.get(tok)
        if p is None:
            continue
        if k > 0 and tokens[k - 1] in neg:
            p *= lexicon.negation_multiplier
        total += p
        hits += 1
    return total / hits if hits else 0.0


def entity_polarity(review_scores: Sequence[float]) -> float:
    """Unweighted mean of an entity's review polarities. The sum is exactly
    rounded, so the result does not depend on review order."""
    if len(review_scores) == 0:
        raise UndefinedMetricError("entity has no reviews")
    return math.fsum(review_scores) / len(review_scores)


@dataclass
class PolarityProfile:
    user_scores: np.ndarray
    item_scores: np.ndarray
    user_counts: np.ndarray
    item_counts: np.ndarray
    review_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))


def polarity_profile(corpus, lexicon: Lexicon) -> PolarityProfile:
    """Per-user and per-item mean review polarity over all splits."""
    scores = np.array([review_polarity(x.review, lexicon) for x in corpus.interactions])
    u_cnt = np.bincount(corpus.users, minlength=corpus.n_users)
    i_cnt = np.bincount(corpus.items, minlength=corpus.n_items)
    if (u_cnt == 0).any() or (i_cnt == 0).any():
        raise UndefinedMetricError("an indexed entity has no reviews")

    def per_entity(owner, n):
        order = np.argsort(owner, kind="stable")
        bounds = np.searchsorted(owner[order], np.arange(n + 1))
        return np.array([entity_polarity(scores[order[bounds[e]:bounds[e + 1]]]) for e in range(n)])

    return PolarityProfile(per_entity(corpus.users, corpus.n_users), per_entity(corpus.items, corpus.n_items),
                           u_cnt, i_cnt, scores)


def _ascending(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 10:
        raise InsufficientEntitiesError(f"need at least 10 entities, got {scores.size}")
    return np.lexsort((np.arange(scores.size), scores))


def extreme_deciles(scores) -> Tuple[np.ndarray, np.ndarray]:
    """(positive, negative) entity indices: top and bottom floor(n/10) by polarity."""
    order = _ascending(scores)
    k = order.size // 10
    return order[order.size - k:], order[:k]


def decile_groups(scores) -> Dict[str, np.ndarray]:
    """Ten ascending polarity groups labelled N5..N1, P1..P5; sizes differ by at
    most one, with the larger groups first."""
    order = _ascending(scores)
    base, extra = divmod(order.size, 10)
    groups, start = {}, 0
    for g, label in enumerate(GROUP_LABELS):
        size = base + (1 if g < extra else 0)
        groups[label] = order[start:start + size]
        start += size
    return groups
