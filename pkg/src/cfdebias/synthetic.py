"""Desk-scale corpora with a known, tunable sentiment bias.

Every entity gets a latent polarity in [-1, 1]. Ratings follow a latent
affinity model plus per-entity offsets tied to polarity; observation noise
grows with how negative the user and the item are, scaled by
``bias_strength``. Review text is drawn from lexicon words whose polarity
tracks the observed rating, so lexicon scoring recovers the entity polarity
ordering.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .data import Corpus, Interaction, build_corpus
from .errors import InvalidArgumentError
from .sentiment import Lexicon, load_lexicon

FILLER_WORDS = (
    "product", "item", "package", "box", "order", "taste", "flavor", "price", "size", "color",
    "bought", "received", "used", "tried", "bag", "jar", "bottle", "shipping", "brand", "store",
    "week", "month", "kitchen", "morning", "coffee", "tea", "snack", "sauce", "pack", "amount",
    "this", "the", "it", "was", "for", "and", "with", "my", "a", "of",
)


@dataclass
class SynthConfig:
    n_users: int = 1000
    n_items: int = 500
    interactions_per_user: int = 10
    bias_strength: float = 1.0
    base_noise: float = 0.3
    seed: int = 670849
    latent_dim: int = 8
    polarity_mean: float = 0.3
    polarity_std: float = 0.45
    sentiment_tokens: int = 4
    filler_tokens: int = 6
    k: int = 5
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_tokens: int = 500
    lexicon: Optional[str] = None

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        if min(self.n_users, self.n_items, self.interactions_per_user, self.latent_dim) <= 0:
            raise InvalidArgumentError("counts must be positive")
        if self.interactions_per_user < self.k or self.n_users < self.k or self.n_items < self.interactions_per_user:
            raise InvalidArgumentError("configuration cannot satisfy the k-core constraint")
        if self.bias_strength < 0 or self.base_noise < 0:
            raise InvalidArgumentError("bias_strength and base_noise must be >= 0")


@dataclass
class SynthTruth:
    user_polarity: np.ndarray   # by corpus user index
    item_polarity: np.ndarray   # by corpus item index
    true_ratings: np.ndarray    # aligned with corpus.interactions
    noise_std: np.ndarray

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, doc: dict) -> "SynthTruth":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in doc.items()})


def _pairs(cfg: SynthConfig, rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Every item first gets k distinct users, then users are topped up with
    fresh items to ``interactions_per_user``; both sides end up >= k."""
    owned = [set() for _ in range(cfg.n_users)]
    for i in range(cfg.n_items):
        for u in rng.choice(cfg.n_users, size=cfg.k, replace=False):
            owned[u].add(i)
    for u in range(cfg.n_users):
        need = cfg.interactions_per_user - len(owned[u])
        if need <= 0:
            continue
        for i in rng.permutation(cfg.n_items):
            if need == 0:
                break
            if i not in owned[u]:
                owned[u].add(int(i))
                need -= 1
    return [(u, i) for u in range(cfg.n_users) for i in sorted(owned[u])]


def _review(target: float, words: np.ndarray, pols: np.ndarray, fillers: List[str],
            cfg: SynthConfig, rng: np.random.Generator) -> List[str]:
    tokens = []
    for t in target + rng.normal(0.0, 0.1, cfg.sentiment_tokens):
        pos = int(np.clip(np.searchsorted(pols, t), 0, len(pols) - 1))
        lo, hi = max(0, pos - 4), min(len(pols), pos + 4)
        tokens.append(str(words[rng.integers(lo, hi)]))
    tokens += [fillers[j] for j in rng.integers(0, len(fillers), cfg.filler_tokens)]
    return [tokens[j] for j in rng.permutation(len(tokens))]


def generate(cfg: SynthConfig, lexicon: Optional[Lexicon] = None) -> Tuple[Corpus, SynthTruth]:
    rng = np.random.default_rng(cfg.seed)
    lexicon = lexicon or load_lexicon(cfg.lexicon)
    entries = sorted(lexicon.polarity.items(), key=lambda kv: (kv[1], kv[0]))
    words = np.array([w for w, _ in entries if w not in lexicon.negations])
    pols = np.array([p for w, p in entries if w not in lexicon.negations])
    fillers = [w for w in FILLER_WORDS if w not in lexicon.polarity and w not in lexicon.negations]

    rho_u = np.clip(rng.normal(cfg.polarity_mean, cfg.polarity_std, cfg.n_users), -1, 1)
    rho_i = np.clip(rng.normal(cfg.polarity_mean, cfg.polarity_std, cfg.n_items), -1, 1)
    scale = 1.0 / np.sqrt(cfg.latent_dim)
    p = rng.normal(0.0, scale, (cfg.n_users, cfg.latent_dim))
    q = rng.normal(0.0, scale, (cfg.n_items, cfg.latent_dim))

    pairs = _pairs(cfg, rng)
    us = np.array([u for u, _ in pairs])
    its = np.array([i for _, i in pairs])
    eps = rng.standard_normal(len(pairs))
    affinity = np.einsum("nd,nd->n", p[us], q[its])
    true = np.clip(3.4 + 0.7 * rho_u[us] + 0.7 * rho_i[its] + affinity, 1.0, 5.0)
    std = cfg.base_noise + cfg.bias_strength * (np.maximum(0.0, -rho_u[us]) + np.maximum(0.0, -rho_i[its]))
    observed = np.clip(true + std * eps, 1.0, 5.0)

    interactions = []
    for k, (u, i) in enumerate(pairs):
        target = float(np.clip((observed[k] - 3.0) / 2.0, -1.0, 1.0))
        tokens = _review(target, words, pols, fillers, cfg, rng)
        interactions.append(Interaction(f"u{u:06d}", f"i{i:06d}", float(observed[k]), tuple(tokens),
                                        " ".join(tokens), k))
    corpus = build_corpus(interactions, k=cfg.k, ratios=cfg.ratios, seed=cfg.seed, max_tokens=cfg.max_tokens)
    if len(corpus.interactions) != len(interactions):
        raise AssertionError("generated data is not a k-core")
    corpus.settings["synthetic"] = {k: v for k, v in asdict(cfg).items()}
    # entity ids are zero-padded, so corpus index order equals generation order
    truth = SynthTruth(rho_u, rho_i, true.copy(), std.copy())
    return corpus, truth


def oracle_errors(corpus: Corpus, truth: SynthTruth) -> np.ndarray:
    """Squared error of the noiseless predictor for every interaction."""
    return (corpus.ratings - truth.true_ratings) ** 2


def export_interactions(corpus: Corpus, path) -> None:
    """JSON lines readable by ``parse_generic_jsonl``."""
    with open(path, "w", encoding="utf-8") as fh:
        for x in corpus.interactions:
            fh.write(json.dumps({"user_id": x.user_id, "item_id": x.item_id, "rating": x.rating,
                                 "text": x.raw_text, "timestamp": x.timestamp}, sort_keys=True) + "\n")


def save_truth(truth: SynthTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_json(), sort_keys=True) + "\n")


def load_truth(path) -> SynthTruth:
    return SynthTruth.from_json(json.loads(Path(path).read_text()))
