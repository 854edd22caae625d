import warnings

import numpy as np
import pytest

from cfdebias.data import Interaction, build_corpus
from cfdebias.model import ModelDims

WORDS = ("good", "bad", "great", "awful", "fine", "tasty", "bland", "ok", "love", "hate", "box", "tea")
TINY_DIMS = ModelDims(d_w=8, d_c=8, d_z=8, d_h=4, d_a=4, d_m=4)


def toy_interactions(n_users, n_items, seed, review_len=12, density=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for u in range(n_users):
        for i in range(n_items):
            if density < 1.0 and rng.random() > density and u != i % n_users:
                continue
            words = tuple(str(w) for w in rng.choice(WORDS, size=review_len))
            out.append(Interaction(f"u{u}", f"i{i}", float(rng.integers(1, 6)), words,
                                   " ".join(words), len(out)))
    return out


def toy_corpus(n_users=2, n_items=2, seed=670849, review_len=12, ratios=(1.0, 0.0, 0.0), split_tags=None):
    inter = toy_interactions(n_users, n_items, seed, review_len)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_corpus(inter, k=None, ratios=ratios, seed=seed, split_tags=split_tags)


@pytest.fixture
def tiny_dims():
    return TINY_DIMS


@pytest.fixture
def corpus_2x2():
    return toy_corpus()


@pytest.fixture
def corpus_small():
    """12 users x 10 items, all pairs, all three splits populated."""
    return toy_corpus(12, 10, seed=7, review_len=6, ratios=(0.6, 0.2, 0.2))


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}
N_CRITERIA = 9


def record_criterion(number, ok, detail):
    status = ok if isinstance(ok, str) else ("PASS" if ok else "FAIL")
    ACCEPTANCE[number] = (status, detail)
    print(f"criterion {number}: {status}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        status, detail = ACCEPTANCE.get(n, ("----", "not run"))
        terminalreporter.write_line(f"criterion {n}: {status:4s}  {detail}")
