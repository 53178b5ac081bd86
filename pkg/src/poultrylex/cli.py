"""One executable, subcommand per pipeline stage.

Every command resolves its configuration (defaults < --config file <
--set overrides < dedicated flags), writes a run manifest into the output
location before any artifact, and emits machine-readable JSON/CSV; human
summaries go to stdout only.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from contextlib import ExitStack
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, lexicon, topics, train_eval
from .errors import ConfigError, CorpusError, DataFormatError, NumericalError
from .ingest import Document, RunConfig, SentimentLabel, load_corpus, split_indices
from .lexicon import load_lexicon
from .preprocess import (
    Vocabulary,
    load_emoji_map,
    load_stopwords,
    read_processed,
    tfidf,
    tokenize_pipeline,
    write_processed,
)

TOOL = "poultrylex"


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _display_path(path: Path, rel_root: Path | None) -> str:
    # inputs under the run root are recorded relative to it, so reruns into
    # a different directory produce identical manifests
    if rel_root is not None:
        try:
            return str(Path(path).resolve().relative_to(Path(rel_root).resolve()))
        except ValueError:
            pass
    return str(path)


def _write_manifest(target: Path, command: str, cfg: RunConfig,
                    inputs: dict[str, Path], artifacts: list[str],
                    rel_root: Path | None = None) -> None:
    payload = {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {
            name: {"path": _display_path(p, rel_root), "sha256": _sha256(Path(p))}
            for name, p in inputs.items()
        },
        "artifacts": artifacts,
    }
    target.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(target, payload)


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for pair in args.set or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        cfg.apply_override(key.strip(), value)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


# ------------------------------------------------------------ command cores


def _do_preprocess(corpus_path: Path, fmt: str, out_dir: Path, cfg: RunConfig,
                   stopwords_path, emoji_path, rel_root: Path | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = ["processed.jsonl", "vocab.json", "tfidf.csv", "rejects.json"]
    _write_manifest(out_dir / "manifest.json", "preprocess", cfg,
                    {"corpus": corpus_path}, artifacts, rel_root)

    corpus = load_corpus(corpus_path, fmt)
    stopwords = load_stopwords(stopwords_path)
    emoji_map = load_emoji_map(emoji_path)
    sequences = [tokenize_pipeline(d, stopwords, emoji_map) for d in corpus.documents]
    labels = [d.label for d in corpus.documents]

    processed_path = out_dir / "processed.jsonl"
    write_processed(processed_path, sequences, labels)

    vocab = Vocabulary.build(sequences)
    _dump_json(out_dir / "vocab.json", {"itos": vocab.itos})

    matrix = tfidf(sequences, vocab, cfg)
    with (out_dir / "tfidf.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + vocab.itos)
        for seq, row in zip(sequences, matrix):
            writer.writerow([seq.source_id] + [repr(x) for x in row])

    _dump_json(out_dir / "rejects.json",
               [{"line": r.line, "reason": r.reason} for r in corpus.rejects])

    print(f"loaded {len(corpus)} documents ({len(corpus.rejects)} rejected), "
          f"vocabulary size {len(vocab)}")
    return processed_path


def _do_analyze(processed_path: Path, out_dir: Path, cfg: RunConfig,
                lexicon_path, top_k: int, rel_root: Path | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = ["term_frequencies.json", "term_frequencies.csv",
                 "emotions.json", "emotions.csv", "polarity.jsonl"]
    _write_manifest(out_dir / "manifest.json", "analyze", cfg,
                    {"processed": processed_path}, artifacts, rel_root)

    sequences, _ = read_processed(processed_path)
    lex = load_lexicon(lexicon_path)

    table = lexicon.term_frequencies(sequences)
    top = table.top_k(top_k)
    _dump_json(out_dir / "term_frequencies.json", {
        "total_tokens": table.total,
        "top": [{"term": t, "count": c} for t, c in top],
    })
    with (out_dir / "term_frequencies.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "count"])
        writer.writerows(table.top_k(len(table.counts)))

    hist = lexicon.emotion_histogram(sequences, lex)
    _dump_json(out_dir / "emotions.json", hist)
    with (out_dir / "emotions.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["emotion", "count"])
        writer.writerows(sorted(hist.items()))

    with (out_dir / "polarity.jsonl").open("w", encoding="utf-8") as fh:
        for seq in sequences:
            score = lexicon.score_document(seq, lex, cfg.neutral_band)
            fh.write(json.dumps({
                "id": seq.source_id,
                "pos_score": score.pos_score,
                "neg_score": score.neg_score,
                "p_c": score.p_c,
                "f_m": score.f_m,
                "label": score.label.to_string(),
                "no_hits": score.no_hits,
            }, sort_keys=True) + "\n")

    print(f"top {len(top)} terms:")
    for term, count in top:
        print(f"  {term:24s} {count}")
    print("emotion counts: " + ", ".join(f"{e}={hist[e]}" for e in lexicon.EMOTIONS))


def _do_topics(processed_path: Path, out_dir: Path, cfg: RunConfig,
               rel_root: Path | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir / "manifest.json", "topics", cfg,
                    {"processed": processed_path}, ["topics.json"], rel_root)

    sequences, _ = read_processed(processed_path)
    vocab = Vocabulary.build(sequences)
    state, history = topics.fit(
        sequences, vocab, cfg.num_topics, cfg.lda_alpha, cfg.lda_beta,
        cfg.seed, cfg.lda_sweeps, ll_every=max(1, cfg.lda_sweeps // 10),
    )
    report = topics.estimate(state)
    payload = report.to_json_dict()
    payload.update({
        "k": cfg.num_topics,
        "alpha": cfg.lda_alpha,
        "beta": cfg.lda_beta,
        "sweeps": cfg.lda_sweeps,
        "burn_in": cfg.lda_burn_in,
        "seed": cfg.seed,
        "log_likelihood": topics.log_likelihood(state),
    })
    _dump_json(out_dir / "topics.json", payload)

    print(f"fitted {cfg.num_topics} topics over {state.num_docs} documents "
          f"({state.num_tokens} tokens), final log-likelihood "
          f"{payload['log_likelihood']:.2f}")
    for entry in payload["topics"]:
        terms = ", ".join(t["term"] for t in entry["top_terms"])
        print(f"  Topic #{entry['id']}: {terms}")


def _split_pairs(sequences, labels, cfg: RunConfig):
    pairs = [(s, l) for s, l in zip(sequences, labels) if l is not None]
    unlabeled = len(sequences) - len(pairs)
    if not pairs:
        raise CorpusError("training requires labeled documents; none found")
    idx_train, idx_val, idx_test = split_indices(
        [l for _, l in pairs], cfg.split_ratios, cfg.seed, cfg.stratify
    )
    take = lambda idxs: [pairs[i] for i in idxs]
    return take(idx_train), take(idx_val), take(idx_test), unlabeled


def _do_train(processed_path: Path, model_kind: str, out_path: Path,
              cfg: RunConfig, lexicon_path, rel_root: Path | None = None) -> Path:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    artifacts = [out_path.name, out_path.name + ".history.csv",
                 out_path.name + ".splits.json", out_path.name + ".test.jsonl"]
    _write_manifest(Path(str(out_path) + ".manifest.json"), "train", cfg,
                    {"processed": processed_path}, artifacts, rel_root)

    sequences, labels = read_processed(processed_path)
    lex = load_lexicon(lexicon_path)
    train_pairs, val_pairs, test_pairs, unlabeled = _split_pairs(sequences, labels, cfg)
    if unlabeled:
        print(f"note: {unlabeled} unlabeled documents excluded from training")

    result = train_eval.train(model_kind, train_pairs, val_pairs, cfg, lex)
    train_eval.save_model(out_path, result.params, result.vocab, lex, cfg)

    with Path(str(out_path) + ".history.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_acc", "val_f1"])
        for row in result.history:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_acc"]), repr(row["val_f1"])])

    _dump_json(Path(str(out_path) + ".splits.json"), {
        "train": [s.source_id for s, _ in train_pairs],
        "val": [s.source_id for s, _ in val_pairs],
        "test": [s.source_id for s, _ in test_pairs],
    })
    test_path = Path(str(out_path) + ".test.jsonl")
    write_processed(test_path, [s for s, _ in test_pairs], [l for _, l in test_pairs])

    best = max((r["val_acc"] for r in result.history), default=float("nan"))
    print(f"trained {model_kind} for {cfg.epochs} epochs on {len(train_pairs)} documents; "
          f"best val accuracy {best:.4f}")
    return test_path


def _do_eval(ckpt_path: Path, processed_path: Path, out_path: Path, cfg: RunConfig,
             rel_root: Path | None = None) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    params, vocab, lex, _ = train_eval.load_model(ckpt_path)
    n_classes = params.config.n_classes
    artifacts = [out_path.name] + [
        f"{out_path.stem}.roc_class{c}.csv" for c in range(n_classes)
    ]
    _write_manifest(Path(str(out_path) + ".manifest.json"), "eval", cfg,
                    {"checkpoint": ckpt_path, "processed": processed_path}, artifacts,
                    rel_root)

    sequences, labels = read_processed(processed_path)
    pairs = [(s, l) for s, l in zip(sequences, labels) if l is not None]
    if not pairs:
        raise CorpusError("evaluation requires labeled documents; none found")
    report = train_eval.evaluate(params, pairs, vocab, lex)
    _dump_json(out_path, report.to_json_dict())

    for c in range(n_classes):
        curve = report.roc_curves[c]
        roc_path = out_path.parent / f"{out_path.stem}.roc_class{c}.csv"
        with roc_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, thr in curve or []:
                writer.writerow([repr(fpr), repr(tpr), "" if thr is None else repr(thr)])

    auc_text = ", ".join(
        f"class{c}={a:.4f}" if a is not None else f"class{c}=absent"
        for c, a in enumerate(report.auc_per_class)
    )
    print(f"accuracy {report.accuracy:.4f}, macro F1 {report.macro['f1']:.4f}, "
          f"AUC {auc_text}")


def _do_predict(ckpt_path: Path, text: str, cfg: RunConfig,
                stopwords_path, emoji_path) -> None:
    if not text or not text.strip():
        raise ConfigError("predict: --text must be non-empty")
    params, vocab, lex, _ = train_eval.load_model(ckpt_path)
    stopwords = load_stopwords(stopwords_path)
    emoji_map = load_emoji_map(emoji_path)

    seq = tokenize_pipeline(Document(id="query", text=text), stopwords, emoji_map)
    if not seq.tokens:
        raise CorpusError("predict: no tokens survive preprocessing for this text")
    ids, signs, _, _ = train_eval.encode_pairs(
        [(seq, SentimentLabel.NEUTRAL)], vocab, lex, params.config.max_len
    )
    probs = train_eval.predict_proba(params, ids, signs)[0]
    score = lexicon.score_document(seq, lex, cfg.neutral_band)
    names = ["negative", "neutral", "positive"]
    print(json.dumps({
        "class": names[int(np.argmax(probs))],
        "probabilities": {n: float(p) for n, p in zip(names, probs)},
        "lexicon": {
            "p_c": score.p_c,
            "f_m": score.f_m,
            "label": score.label.to_string(),
            "pos_score": score.pos_score,
            "neg_score": score.neg_score,
            "no_hits": score.no_hits,
        },
        "tokens": seq.tokens,
    }, sort_keys=True, indent=2))


# ------------------------------------------------------------------ commands


def cmd_preprocess(args) -> int:
    cfg = _resolve_config(args)
    _do_preprocess(Path(args.corpus), args.format, Path(args.out), cfg,
                   args.stopwords, args.emoji_map)
    return 0


def cmd_analyze(args) -> int:
    cfg = _resolve_config(args)
    _do_analyze(Path(args.processed), Path(args.out), cfg, args.lexicon, args.top_k)
    return 0


def cmd_topics(args) -> int:
    cfg = _resolve_config(args)
    if args.k is not None:
        cfg.num_topics = args.k
    if args.sweeps is not None:
        cfg.lda_sweeps = args.sweeps
    cfg.validate()
    _do_topics(Path(args.processed), Path(args.out), cfg)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    _do_train(Path(args.processed), args.model, Path(args.out), cfg, args.lexicon)
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else Path(args.ckpt + ".report.json")
    _do_eval(Path(args.ckpt), Path(args.processed), out, cfg)
    return 0


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    _do_predict(Path(args.ckpt), args.text, cfg, args.stopwords, args.emoji_map)
    return 0


def cmd_run_all(args) -> int:
    cfg = _resolve_config(args)
    if not args.config:
        # light profile so the full chain stays desk-scale fast
        cfg.epochs = 8
        cfg.d_model = 32
        cfg.n_heads = 2
        cfg.n_fusion_heads = 2
        cfg.n_layers = 1
        cfg.max_len = 32
        cfg.lda_sweeps = 300
        for pair in args.set or []:
            key, _, value = pair.partition("=")
            cfg.apply_override(key.strip(), value)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()

    out = Path(args.out)
    with ExitStack() as stack:
        if args.corpus:
            corpus_path = Path(args.corpus)
        else:
            corpus_path = stack.enter_context(
                resources.as_file(resources.files("poultrylex.data") / "sample_corpus.jsonl")
            )
        print("[1/5] preprocess")
        processed = _do_preprocess(corpus_path, "jsonl", out / "preprocess", cfg,
                                   None, None, rel_root=out)
        print("[2/5] analyze")
        _do_analyze(processed, out / "analyze", cfg, None, top_k=20, rel_root=out)
        print("[3/5] topics")
        _do_topics(processed, out / "topics", cfg, rel_root=out)
        print("[4/5] train")
        ckpt = out / "model" / "poultrylex.ckpt"
        test_path = _do_train(processed, "poultrylex", ckpt, cfg, None, rel_root=out)
        print("[5/5] eval")
        _do_eval(ckpt, test_path, out / "eval" / "report.json", cfg, rel_root=out)
    print(f"pipeline complete; artifacts under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL,
        description="Poultry-discourse analytics: preprocessing, lexicon sentiment, "
                    "topic modeling, and neural sentiment classification.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common],
                       help="clean, tokenize, and vectorize a raw corpus")
    p.add_argument("corpus", help="corpus file (JSONL or CSV)")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stopwords", help="stopword file (one token per line)")
    p.add_argument("--emoji-map", dest="emoji_map", help="emoji TSV map")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("analyze", parents=[common],
                       help="term frequencies, emotions, and per-document polarity")
    p.add_argument("processed", help="processed corpus (JSONL from preprocess)")
    p.add_argument("--lexicon", help="sentiment lexicon TSV")
    p.add_argument("--top-k", dest="top_k", type=int, default=20)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("topics", parents=[common], help="fit topics by Gibbs sampling")
    p.add_argument("processed")
    p.add_argument("--k", type=int, help="topic count")
    p.add_argument("--sweeps", type=int, help="Gibbs sweeps")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("train", parents=[common], help="train a sentiment classifier")
    p.add_argument("processed")
    p.add_argument("--model", choices=train_eval.MODEL_KINDS, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--lexicon", help="sentiment lexicon TSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("ckpt")
    p.add_argument("processed")
    p.add_argument("--out", help="report path (default <ckpt>.report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="classify a single post")
    p.add_argument("ckpt")
    p.add_argument("--text", required=True)
    p.add_argument("--stopwords")
    p.add_argument("--emoji-map", dest="emoji_map")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("run-all", parents=[common],
                       help="full pipeline on a corpus (default: bundled sample)")
    p.add_argument("corpus", nargs="?", help="corpus JSONL (default: bundled sample)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (CorpusError, ConfigError, DataFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
