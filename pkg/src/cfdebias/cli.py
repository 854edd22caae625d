"""Command-line entry point.

Subcommands: ingest, gen-synth, train, sweep-beta, analyze, wilcoxon. Each
writes its outputs plus a ``manifest.json`` into ``--out``. A JSON file given
with ``--config`` may hold a top-level ``seed`` and one section per command
(``ingest``, ``synth``, ``train``, ``sweep``, ``analyze``, ``wilcoxon``);
flags given on the command line win over the file.

Relative input paths that do not exist are retried under ``$CFDEBIAS_DATA_ROOT``.

Exit status: 0 success, 1 computation failure, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PARSERS, build_corpus, load_corpus, save_corpus
from .debias import CRITERIA, DEFAULT_BETAS, debias, sweep_table, write_sweep_csv
from .errors import CFDebiasError, InvalidArgumentError, LexiconFormatError
from .metrics import build_bias_report, wilcoxon_signed_rank
from .model import ModelParams, RatingModel
from .sentiment import load_lexicon, polarity_profile
from .synthetic import SynthConfig, export_interactions, generate, save_truth
from .training import TrainConfig, evaluate, train

log = logging.getLogger("cfdebias")

DATA_ROOT_ENV = "CFDEBIAS_DATA_ROOT"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def resolve_input(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute() and (Path(root) / p).exists():
        return Path(root) / p
    raise FileNotFoundError(f"input file not found: {path}")


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(resolve_input(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return doc


def _overrides(args, names: Dict[str, str]) -> dict:
    """Flags the user actually gave, keyed by config field name."""
    return {field: getattr(args, attr) for attr, field in names.items() if getattr(args, attr) is not None}


def _seed(args, cfg: dict, section: dict, default: int) -> int:
    if args.seed is not None:
        return args.seed
    return int(section.get("seed", cfg.get("seed", default)))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(out: Path, command: str, config: dict, seeds: List[int],
                   artifacts: Dict[str, Path], fingerprint: Optional[str] = None) -> Path:
    """Record what was run and what it produced. Artifact paths are relative to ``out``."""
    for name, path in artifacts.items():
        if not path.exists():
            raise CFDebiasError(f"artifact {name} missing after {command}: {path}")
    doc = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "config_hash": _config_hash(config),
        "dataset_fingerprint": fingerprint,
        "seeds": seeds,
        "artifacts": {name: {"path": os.path.relpath(p, out), "sha256": _sha256(p)}
                      for name, p in sorted(artifacts.items())},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_table(header: List[str], rows: List[list]) -> None:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    for row in [header] + rows:
        print("  ".join(str(c).rjust(w) for c, w in zip(row, widths)))


def _load_model(checkpoint: str, corpus_path: str):
    arrays, meta = load_checkpoint(resolve_input(checkpoint))
    corpus = load_corpus(resolve_input(corpus_path))
    params = ModelParams.from_arrays(arrays, meta)
    if (params.n_users, params.n_items, params.n_vocab) != (corpus.n_users, corpus.n_items, len(corpus.vocab)):
        raise UsageError("checkpoint was trained on a different corpus (entity or vocabulary sizes differ)")
    if meta.get("dataset_fingerprint") not in (None, corpus.fingerprint()):
        log.warning("corpus fingerprint differs from the one recorded in the checkpoint")
    return params, meta, corpus


def _profile(corpus, lexicon_path: Optional[str]):
    lexicon = load_lexicon(resolve_input(lexicon_path) if lexicon_path else None)
    return polarity_profile(corpus, lexicon)


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    cfg = _read_config(args.config)
    section = {**cfg.get("ingest", {}), **_overrides(args, {
        "type": "type", "k": "k", "ratios": "ratios", "min_freq": "min_freq",
        "max_vocab": "max_size", "max_tokens": "max_tokens"})}
    settings = {"type": "amazon", "k": 5, "ratios": [0.8, 0.1, 0.1], "min_freq": 1,
                "max_size": None, "max_tokens": 500, **section}
    if settings["type"] not in PARSERS:
        raise UsageError(f"unknown dataset type {settings['type']!r}; choose from {sorted(PARSERS)}")
    seed = _seed(args, cfg, cfg.get("ingest", {}), 670849)
    source = resolve_input(args.source)
    counters: dict = {}
    interactions = PARSERS[settings["type"]](source, counters)
    corpus = build_corpus(interactions, k=settings["k"], ratios=settings["ratios"], seed=seed,
                          min_freq=settings["min_freq"], max_size=settings["max_size"],
                          max_tokens=settings["max_tokens"])
    out = _out_dir(args)
    corpus_path = out / "corpus.json.gz"
    save_corpus(corpus, corpus_path)
    s = corpus.summary()
    _print_table(["users", "items", "reviews", "train", "val", "test", "vocab"],
                 [[f"{s[c]:,}" for c in ("users", "items", "reviews", "train", "val", "test", "vocab")]])
    if counters:
        log.info("parser counters: %s", counters)
    write_manifest(out, "ingest", {**settings, "seed": seed, "source": str(args.source)}, [seed],
                   {"corpus": corpus_path}, corpus.fingerprint())
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    cfg = _read_config(args.config)
    section = {**cfg.get("synth", {}), **_overrides(args, {
        "users": "n_users", "items": "n_items", "per_user": "interactions_per_user",
        "bias_strength": "bias_strength", "base_noise": "base_noise", "lexicon": "lexicon"})}
    section["seed"] = _seed(args, cfg, section, 670849)
    synth = SynthConfig(**section)
    if synth.lexicon:
        synth.lexicon = str(resolve_input(synth.lexicon))
    corpus, truth = generate(synth)
    out = _out_dir(args)
    paths = {"corpus": out / "corpus.json.gz", "truth": out / "truth.json",
             "interactions": out / "interactions.jsonl"}
    save_corpus(corpus, paths["corpus"])
    save_truth(truth, paths["truth"])
    export_interactions(corpus, paths["interactions"])
    s = corpus.summary()
    _print_table(["users", "items", "reviews", "train", "val", "test", "vocab"],
                 [[f"{s[c]:,}" for c in ("users", "items", "reviews", "train", "val", "test", "vocab")]])
    write_manifest(out, "gen-synth", asdict(synth), [synth.seed], paths, corpus.fingerprint())
    return EXIT_OK


def _parse_dims(text: str) -> dict:
    dims = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        if not value:
            raise UsageError(f"--dims expects name=value pairs, got {part!r}")
        dims[key.strip()] = int(value)
    return dims


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    section = dict(cfg.get("train", {}))
    section.update(_overrides(args, {
        "lr": "lr", "weight_decay": "weight_decay", "alpha_u": "alpha_u", "alpha_i": "alpha_i",
        "batch_size": "batch_size", "epochs": "max_epochs", "patience": "patience", "dropout": "dropout"}))
    if args.dims:
        section["dims"] = {**section.get("dims", {}), **_parse_dims(args.dims)}
    section["seed"] = _seed(args, cfg, section, 670849)
    try:
        config = TrainConfig.from_dict(section)
    except TypeError as exc:
        raise UsageError(f"bad train config: {exc}") from exc
    corpus = load_corpus(resolve_input(args.corpus))
    params, history = train(corpus, config)
    out = _out_dir(args)
    paths = {"checkpoint": out / "checkpoint.json", "history": out / "history.csv"}
    meta = {**params.meta(), "config": config.to_dict(), "config_hash": config.hash(),
            "dataset_fingerprint": corpus.fingerprint(), "best_epoch": history.best_epoch,
            "selection_split": history.selection_split, "tool_version": __version__}
    save_checkpoint(paths["checkpoint"], params.arrays, meta)
    history.to_csv(paths["history"])
    best = history.records[history.best_epoch]
    print(f"best epoch {best.epoch}: {history.selection_split} MSE {best.val_mse:.6f}")
    write_manifest(out, "train", config.to_dict(), [config.seed], paths, corpus.fingerprint())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _read_config(args.config)
    section = {**cfg.get("sweep", {}), **_overrides(args, {
        "split": "split", "betas": "betas", "criterion": "criterion",
        "tradeoff_lambda": "tradeoff_lambda", "lexicon": "lexicon"})}
    if args.clip:
        section["clip"] = True
    settings = {"split": "val", "betas": list(DEFAULT_BETAS), "criterion": "mse",
                "tradeoff_lambda": 1.0, "clip": False, "lexicon": None, **section}
    params, meta, corpus = _load_model(args.checkpoint, args.corpus)
    prof = _profile(corpus, settings["lexicon"])
    _, bundle = evaluate(params, settings["split"], corpus, RatingModel(corpus.user_docs, corpus.item_docs))
    ratings = corpus.ratings[corpus.indices(settings["split"])]
    rows, selected = sweep_table(bundle, ratings, prof.user_scores, prof.item_scores, settings["betas"],
                                 settings["criterion"], settings["tradeoff_lambda"], settings["clip"])
    out = _out_dir(args)
    path = out / "sweep.csv"
    write_sweep_csv(rows, path)
    _print_table(["beta", "mse", "BU", "BI", ""],
                 [[f"{r.beta:g}", f"{r.mse:.6f}", f"{r.bu:.6f}", f"{r.bi:.6f}", "*" if r.selected else ""]
                  for r in rows])
    print(f"selected beta = {selected:g} ({settings['criterion']} on {settings['split']})")
    seed = meta.get("config", {}).get("seed")
    write_manifest(out, "sweep-beta", {**settings, "checkpoint_config_hash": meta.get("config_hash")},
                   [seed] if seed is not None else [], {"sweep": path}, corpus.fingerprint())
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _read_config(args.config)
    section = {**cfg.get("analyze", {}), **_overrides(args, {
        "beta": "beta", "split": "split", "bin_width": "bin_width", "lexicon": "lexicon"})}
    if args.clip:
        section["clip"] = True
    settings = {"beta": 0.0, "split": "test", "bin_width": 0.1, "clip": False, "lexicon": None, **section}
    params, meta, corpus = _load_model(args.checkpoint, args.corpus)
    prof = _profile(corpus, settings["lexicon"])
    _, bundle = evaluate(params, settings["split"], corpus, RatingModel(corpus.user_docs, corpus.item_docs))
    ratings = corpus.ratings[corpus.indices(settings["split"])]
    after = debias(bundle, settings["beta"], settings["clip"])
    report = build_bias_report(bundle, ratings, prof.user_scores, prof.item_scores, settings["beta"],
                               settings["split"], settings["bin_width"], debiased=after)
    out = _out_dir(args)
    paths = dict(zip(("report", "group_stats", "dist_diff", "correlation_bins"), report.export(out)))
    _print_table(["", "MSE", "BU", "BI"],
                 [["before", f"{report.mse_before:.6f}", f"{report.bu_before:.6f}", f"{report.bi_before:.6f}"],
                  [f"beta={settings['beta']:g}", f"{report.mse:.6f}", f"{report.bu:.6f}", f"{report.bi:.6f}"]])
    rho = report.correlation.get("spearman")
    print(f"spearman(sigma, s_u*s_i) = {rho}")
    seed = meta.get("config", {}).get("seed")
    write_manifest(out, "analyze", {**settings, "checkpoint_config_hash": meta.get("config_hash")},
                   [seed] if seed is not None else [], paths, corpus.fingerprint())
    return EXIT_OK


def read_paired_columns(path: Path, col_a: Optional[str], col_b: Optional[str]):
    """Two numeric columns from a CSV; defaults to the last two columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{path}: no data rows")
    header = list(rows[0].keys())
    a = col_a or header[-2]
    b = col_b or header[-1]
    for c in (a, b):
        if c not in header:
            raise UsageError(f"{path}: no column {c!r} (have {header})")
    try:
        xa = np.array([float(r[a]) for r in rows])
        xb = np.array([float(r[b]) for r in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric value ({exc})") from exc
    return a, b, xa, xb


def cmd_wilcoxon(args) -> int:
    cfg = _read_config(args.config)
    section = {**cfg.get("wilcoxon", {}), **_overrides(args, {
        "a": "a", "b": "b", "alternative": "alternative", "mode": "mode"})}
    settings = {"a": None, "b": None, "alternative": "greater", "mode": "normal", **section}
    a, b, xa, xb = read_paired_columns(resolve_input(args.csv), settings["a"], settings["b"])
    res = wilcoxon_signed_rank(xa - xb, settings["alternative"], settings["mode"])
    print(f"differences = {a} - {b}, n = {res.n}")
    print(f"W- = {res.w_minus:g}  W+ = {res.w_plus:g}")
    if res.z is not None:
        print(f"z = {res.z:.4f}")
    print(f"p = {res.p:.4f} ({res.mode}, alternative {res.alternative})")
    out = _out_dir(args)
    path = out / "wilcoxon.json"
    path.write_text(json.dumps({**asdict(res), "a": a, "b": b}, sort_keys=True, indent=1) + "\n")
    write_manifest(out, "wilcoxon", {**settings, "a": a, "b": b, "csv": str(args.csv)}, [], {"result": path})
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="cfdebias", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse a review dump into a cached corpus")
    p.add_argument("source")
    p.add_argument("--type", choices=sorted(PARSERS))
    p.add_argument("--k", type=int)
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    p.add_argument("--min-freq", type=int)
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--max-tokens", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-synth", parents=[common], help="generate a synthetic corpus with known bias")
    p.add_argument("--users", type=int)
    p.add_argument("--items", type=int)
    p.add_argument("--per-user", type=int)
    p.add_argument("--bias-strength", type=float)
    p.add_argument("--base-noise", type=float)
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", parents=[common], help="train the rating model")
    p.add_argument("corpus")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--alpha-u", type=float)
    p.add_argument("--alpha-i", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--dims", help="comma-separated overrides, e.g. d_w=32,d_c=32")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-beta", parents=[common], help="score every beta of a sweep set")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--criterion", choices=CRITERIA)
    p.add_argument("--tradeoff-lambda", type=float)
    p.add_argument("--clip", action="store_true", help="clip debiased scores to [1, 5]")
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", parents=[common], help="bias report before and after debiasing")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--beta", type=float)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--bin-width", type=float)
    p.add_argument("--clip", action="store_true")
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("wilcoxon", parents=[common], help="signed-rank test on two paired CSV columns")
    p.add_argument("csv")
    p.add_argument("--a", help="first column (differences are a - b)")
    p.add_argument("--b", help="second column")
    p.add_argument("--alternative", choices=("greater", "less", "two-sided"))
    p.add_argument("--mode", choices=("normal", "exact"))
    p.set_defaults(func=cmd_wilcoxon)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InvalidArgumentError, LexiconFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CFDebiasError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
