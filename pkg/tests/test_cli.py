import json

import pytest

from cfdebias.cli import DATA_ROOT_ENV, main
from cfdebias.data import load_corpus

TABLE_CSV = """Model,CISD,Ours
Gourmet,0.9641,0.9478
Video,1.0830,1.0305
Kindle,0.6104,0.5702
Elec,1.2253,1.2373
Yelp,1.4473,1.3981
"""

DIMS = "d_w=8,d_c=8,d_z=8,d_h=4,d_a=4,d_m=4"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run("gen-synth", "--users", 100, "--items", 40, "--per-user", 6, "--out", out) == 0
    return out


def test_wilcoxon_on_comparison_table(tmp_path, capsys):
    (tmp_path / "t.csv").write_text(TABLE_CSV)
    assert run("wilcoxon", tmp_path / "t.csv", "--out", tmp_path) == 0
    text = capsys.readouterr().out
    assert "W- = 1 " in text and "p = 0.0398" in text
    doc = json.loads((tmp_path / "wilcoxon.json").read_text())
    assert 0.0388 <= doc["p"] <= 0.0408
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["artifacts"]["result"]["path"] == "wilcoxon.json"


def test_missing_input_exits_2_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert run("ingest", missing, "--out", tmp_path) == 2
    assert str(missing) in capsys.readouterr().err


def test_data_root_fallback(tmp_path, monkeypatch):
    (tmp_path / "t.csv").write_text(TABLE_CSV)
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    assert run("wilcoxon", "t.csv", "--out", tmp_path / "w") == 0


def test_ingest_is_idempotent_and_config_overrides(tmp_path, synth_dir):
    src = synth_dir / "interactions.jsonl"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "ingest": {"type": "synthetic", "k": 5, "max_tokens": 50}}))
    assert run("ingest", src, "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("ingest", src, "--config", cfg, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "corpus.json.gz").read_bytes() == (tmp_path / "b" / "corpus.json.gz").read_bytes()
    assert run("ingest", src, "--config", cfg, "--max-tokens", 20, "--out", tmp_path / "c") == 0
    manifest = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert manifest["config"]["max_tokens"] == 20 and manifest["seeds"] == [5]
    corpus = load_corpus(tmp_path / "c" / "corpus.json.gz")
    assert max(len(d) for d in corpus.user_docs) <= 20


def test_bad_config_exits_2(tmp_path, synth_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert run("wilcoxon", synth_dir / "truth.json", "--config", cfg, "--out", tmp_path) == 2


def test_train_twice_identical_and_analyze_at_zero(tmp_path, synth_dir):
    corpus = synth_dir / "corpus.json.gz"
    for name in ("r1", "r2"):
        assert run("train", corpus, "--dims", DIMS, "--epochs", 2, "--out", tmp_path / name) == 0
    ck1, ck2 = (tmp_path / n / "checkpoint.json" for n in ("r1", "r2"))
    assert ck1.read_bytes() == ck2.read_bytes()
    assert run("analyze", ck1, corpus, "--beta", 0, "--out", tmp_path / "an") == 0
    rep = json.loads((tmp_path / "an" / "report.json").read_text())
    assert (rep["mse"], rep["bu"], rep["bi"]) == (rep["mse_before"], rep["bu_before"], rep["bi_before"])
    assert all(d == 0 for d in rep["dist_diff"]["diff"])

    from cfdebias.checkpoint import load_checkpoint
    from cfdebias.model import ModelParams
    from cfdebias.training import evaluate
    arrays, meta = load_checkpoint(ck1)
    mse, _ = evaluate(ModelParams.from_arrays(arrays, meta), "test", load_corpus(corpus))
    assert rep["mse_before"] == mse

    assert run("sweep-beta", ck1, corpus, "--betas", 0, 0.1, "--out", tmp_path / "sw") == 0
    assert (tmp_path / "sw" / "sweep.csv").read_text().startswith("beta,mse,bu,bi,selected\n0.0,")


def test_checkpoint_corpus_mismatch_exits_2(tmp_path, synth_dir):
    other = tmp_path / "other"
    assert run("gen-synth", "--users", 60, "--items", 30, "--per-user", 5, "--out", other) == 0
    assert run("train", synth_dir / "corpus.json.gz", "--dims", DIMS, "--epochs", 1, "--out", tmp_path / "t") == 0
    assert run("sweep-beta", tmp_path / "t" / "checkpoint.json", other / "corpus.json.gz", "--out", tmp_path) == 2
