"""Review dataset ingestion: parsing, k-core filtering, vocabulary, splits and
per-entity review documents."""
from __future__ import annotations

import gzip
import hashlib
import io
import json
import logging
import re
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyDatasetError, InvalidArgumentError

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
CONV_WIDTH = 5
SPLITS = ("train", "val", "test")
CORPUS_FORMAT = "cfdebias-corpus/1"

_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    review: Tuple[str, ...]
    raw_text: str = ""
    timestamp: Optional[int] = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise InvalidArgumentError("user_id and item_id must be non-empty")
        if not 1.0 <= self.rating <= 5.0:
            raise InvalidArgumentError(f"rating {self.rating} outside [1, 5]")


def tokenize(text: str) -> List[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower()) if text else []


# ---------------------------------------------------------------- parsing

def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _parse_jsonl(path, user_key, item_key, rating_key, text_key, time_fn, counters):
    out, skipped = [], 0
    with _open_text(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                user, item = rec[user_key], rec[item_key]
                rating, text = float(rec[rating_key]), rec[text_key]
                if not isinstance(text, str) or not user or not item or not 1.0 <= rating <= 5.0:
                    raise ValueError
                out.append(Interaction(str(user), str(item), rating, tuple(tokenize(text)), text, time_fn(rec)))
            except (ValueError, KeyError, TypeError):
                skipped += 1
    if counters is not None:
        counters["skipped"] = counters.get("skipped", 0) + skipped
        counters["parsed"] = counters.get("parsed", 0) + len(out)
    if skipped:
        log.warning("%s: skipped %d invalid lines", path, skipped)
    if not out:
        raise EmptyDatasetError(f"{path}: no valid interactions")
    return out


def _int_or_none(value):
    try:
        return int(value)
    except (TypeError, ValueError):
        return None


def _yelp_time(rec):
    date = rec.get("date")
    if not date:
        return None
    try:
        dt = datetime.strptime(date, "%Y-%m-%d %H:%M:%S")
    except ValueError:
        try:
            dt = datetime.strptime(date, "%Y-%m-%d")
        except ValueError:
            return None
    return int(dt.replace(tzinfo=timezone.utc).timestamp())


def parse_amazon_jsonl(path, counters: Optional[dict] = None) -> List[Interaction]:
    """Amazon review lines: reviewerID, asin, overall, reviewText[, unixReviewTime]."""
    return _parse_jsonl(path, "reviewerID", "asin", "overall", "reviewText",
                        lambda r: _int_or_none(r.get("unixReviewTime")), counters)


def parse_yelp_reviews(path, counters: Optional[dict] = None) -> List[Interaction]:
    """Yelp review lines: user_id, business_id, stars, text[, date]."""
    return _parse_jsonl(path, "user_id", "business_id", "stars", "text", _yelp_time, counters)


def parse_generic_jsonl(path, counters: Optional[dict] = None) -> List[Interaction]:
    """Lines with user_id, item_id, rating, text[, timestamp] (the synthetic export format)."""
    return _parse_jsonl(path, "user_id", "item_id", "rating", "text",
                        lambda r: _int_or_none(r.get("timestamp")), counters)


PARSERS = {"amazon": parse_amazon_jsonl, "yelp": parse_yelp_reviews, "synthetic": parse_generic_jsonl}


# ---------------------------------------------------------------- filtering / vocab / split

def k_core_filter(interactions: Sequence[Interaction], k: int) -> List[Interaction]:
    """Largest subset in which every user and every item has at least k interactions."""
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    keep = list(interactions)
    while True:
        users = Counter(x.user_id for x in keep)
        items = Counter(x.item_id for x in keep)
        pruned = [x for x in keep if users[x.user_id] >= k and items[x.item_id] >= k]
        if len(pruned) == len(keep):
            break
        keep = pruned
    if not keep:
        raise EmptyDatasetError(f"{k}-core of the input is empty")
    return keep


def build_vocab(token_seqs: Iterable[Sequence[str]], min_freq: int = 1,
                max_size: Optional[int] = None) -> Dict[str, int]:
    """Token -> id, most frequent first, ties lexicographic. Ids 0/1 are PAD/UNK.

    ``max_size`` caps the number of real tokens (PAD/UNK not counted).
    """
    if min_freq < 1:
        raise InvalidArgumentError("min_freq must be >= 1")
    counts = Counter()
    for seq in token_seqs:
        counts.update(seq)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    vocab = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
    for tok in ranked:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return vocab


def split(n: int, ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 670849) -> List[str]:
    """Seeded shuffle, then prefix cuts into train/val/test. Returns one tag per interaction."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_trainval = int(round((ratios[0] + ratios[1]) * n))
    tags = [""] * n
    for rank, idx in enumerate(perm):
        tags[idx] = "train" if rank < n_train else "val" if rank < n_trainval else "test"
    sizes = Counter(tags)
    for name in SPLITS:
        if sizes[name] == 0:
            warnings.warn(f"split {name!r} is empty ({n} interactions)", stacklevel=2)
    return tags


def _ordered(reviews: List[Tuple[Optional[int], List[int]]]) -> List[List[int]]:
    if reviews and all(ts is not None for ts, _ in reviews):
        reviews = sorted(reviews, key=lambda r: r[0])
    return [ids for _, ids in reviews]


def build_docs(interactions: Sequence[Interaction], split_tags: Sequence[str],
               user_index: Dict[str, int], item_index: Dict[str, int], vocab: Dict[str, int],
               max_tokens: int = 500, min_len: int = CONV_WIDTH):
    """Concatenate each entity's training reviews (timestamp order when every
    review has one, otherwise input order), truncate, and PAD up to ``min_len``."""
    by_user = defaultdict(list)
    by_item = defaultdict(list)
    for x, tag in zip(interactions, split_tags):
        if tag != "train":
            continue
        ids = [vocab.get(t, UNK) for t in x.review]
        by_user[user_index[x.user_id]].append((x.timestamp, ids))
        by_item[item_index[x.item_id]].append((x.timestamp, ids))

    def assemble(groups, n):
        docs = []
        for e in range(n):
            seq = [t for ids in _ordered(groups.get(e, [])) for t in ids][:max_tokens]
            if len(seq) < min_len:
                seq = seq + [PAD] * (min_len - len(seq))
            docs.append(np.asarray(seq, dtype=np.int64))
        return docs

    return assemble(by_user, len(user_index)), assemble(by_item, len(item_index))


# ---------------------------------------------------------------- corpus

@dataclass
class Corpus:
    interactions: List[Interaction]
    user_index: Dict[str, int]
    item_index: Dict[str, int]
    vocab: Dict[str, int]
    user_docs: List[np.ndarray]
    item_docs: List[np.ndarray]
    split_tags: List[str]
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.users = np.array([self.user_index[x.user_id] for x in self.interactions], dtype=np.int64)
        self.items = np.array([self.item_index[x.item_id] for x in self.interactions], dtype=np.int64)
        self.ratings = np.array([x.rating for x in self.interactions], dtype=np.float64)
        tags = np.array(self.split_tags)
        self._split_idx = {name: np.flatnonzero(tags == name) for name in SPLITS}

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_items(self) -> int:
        return len(self.item_index)

    def indices(self, name: str) -> np.ndarray:
        if name not in self._split_idx:
            raise InvalidArgumentError(f"unknown split {name!r}")
        return self._split_idx[name]

    def summary(self) -> dict:
        return {"users": self.n_users, "items": self.n_items, "reviews": len(self.interactions),
                "train": len(self.indices("train")), "val": len(self.indices("val")),
                "test": len(self.indices("test")), "vocab": len(self.vocab)}

    def to_json(self) -> dict:
        users = sorted(self.user_index, key=self.user_index.get)
        items = sorted(self.item_index, key=self.item_index.get)
        tokens = sorted(self.vocab, key=self.vocab.get)
        return {
            "format": CORPUS_FORMAT,
            "settings": self.settings,
            "users": users,
            "items": items,
            "vocab": tokens,
            "interactions": [[self.user_index[x.user_id], self.item_index[x.item_id], x.rating,
                              x.timestamp, " ".join(x.review)] for x in self.interactions],
            "split": self.split_tags,
            "user_docs": [d.tolist() for d in self.user_docs],
            "item_docs": [d.tolist() for d in self.item_docs],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_json(cls, doc: dict) -> "Corpus":
        if doc.get("format") != CORPUS_FORMAT:
            raise InvalidArgumentError("not a cfdebias corpus document")
        users, items = doc["users"], doc["items"]
        interactions = [Interaction(users[u], items[i], float(r), tuple(text.split()), text, ts)
                        for u, i, r, ts, text in doc["interactions"]]
        return cls(interactions=interactions,
                   user_index={u: k for k, u in enumerate(users)},
                   item_index={i: k for k, i in enumerate(items)},
                   vocab={t: k for k, t in enumerate(doc["vocab"])},
                   user_docs=[np.asarray(d, dtype=np.int64) for d in doc["user_docs"]],
                   item_docs=[np.asarray(d, dtype=np.int64) for d in doc["item_docs"]],
                   split_tags=list(doc["split"]), settings=doc.get("settings", {}))


def build_corpus(interactions: Sequence[Interaction], k: Optional[int] = 5,
                 ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 670849,
                 min_freq: int = 1, max_size: Optional[int] = None, max_tokens: int = 500,
                 split_tags: Optional[Sequence[str]] = None) -> Corpus:
    """k-core -> split -> vocabulary (training reviews) -> entity documents."""
    inter = k_core_filter(interactions, k) if k else list(interactions)
    if not inter:
        raise EmptyDatasetError("no interactions")
    tags = list(split_tags) if split_tags is not None else split(len(inter), ratios, seed)
    if len(tags) != len(inter) or any(t not in SPLITS for t in tags):
        raise InvalidArgumentError("split tags must label every interaction with train/val/test")
    user_index = {u: n for n, u in enumerate(sorted({x.user_id for x in inter}))}
    item_index = {i: n for n, i in enumerate(sorted({x.item_id for x in inter}))}
    vocab = build_vocab((x.review for x, t in zip(inter, tags) if t == "train"), min_freq, max_size)
    user_docs, item_docs = build_docs(inter, tags, user_index, item_index, vocab, max_tokens)
    settings = {"k": k, "ratios": list(ratios), "seed": seed, "min_freq": min_freq,
                "max_size": max_size, "max_tokens": max_tokens}
    return Corpus(inter, user_index, item_index, vocab, user_docs, item_docs, tags, settings)


def save_corpus(corpus: Corpus, path) -> None:
    """gzip'd JSON with a zeroed header timestamp, so identical corpora give identical bytes."""
    blob = json.dumps(corpus.to_json(), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as gz:
        gz.write(blob)


def load_corpus(path) -> Corpus:
    with gzip.open(path, "rb") as gz:
        return Corpus.from_json(json.loads(gz.read()))
