"""Raw post text -> normalized token sequences and TF-IDF vectors.

The cleaning pass strips URLs, HTML tags, @mentions and punctuation,
keeps hashtag words (without ``#``), folds case and collapses whitespace.
Tokenization then runs stopword removal, the negation transform
(``not good`` -> ``not_good``) and Porter stemming, in that order.

TF-IDF uses a binary presence indicator by default: a term scores
``log(N / DF)`` in every document that contains it, 0 elsewhere.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import stemmer
from .errors import ConfigError, CorpusError, DataFormatError
from .ingest import Document, RunConfig, SentimentLabel

UNK_TOKEN = "<unk>"
PAD_TOKEN = "<pad>"
UNK_ID = 0
PAD_ID = 1

NEGATION_CUES = frozenset({"not", "no", "never", "cannot"})
NEGATION_PREFIX = "not_"

_URL_RE = re.compile(r"(?:[a-z][a-z0-9+.-]*://\S+|www\.\S+)")
_HTML_TAG_RE = re.compile(r"<[^>]+>")
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"#(?=\w)")
_NON_ALNUM_RE = re.compile(r"[^a-z0-9\s]")
_WS_RE = re.compile(r"\s+")

# n't contractions expand before punctuation is stripped so the negation
# transform sees a plain "not" cue
_CONTRACTION_SPECIAL = {
    "won't": "will not",
    "can't": "can not",
    "shan't": "shall not",
    "ain't": "is not",
}
_NT_RE = re.compile(r"\b([a-z]+)n't\b")

# Emoji-bearing codepoint ranges; unmapped matches are deleted outright.
_EMOJI_RE = re.compile(
    "["
    "\U0001f000-\U0001faff"
    "\U00002600-\U000027bf"
    "\U0001f1e6-\U0001f1ff"
    "⬀-⯿"
    "←-⇿"
    "⌀-⏿"
    "️"
    "‍"
    "]"
)


def clean(text: str) -> str:
    """Normalize raw post text; total function, may return ''."""
    s = text.lower()
    s = _URL_RE.sub(" ", s)
    s = _HTML_TAG_RE.sub(" ", s)
    for contraction, expansion in _CONTRACTION_SPECIAL.items():
        s = s.replace(contraction, expansion)
    s = _NT_RE.sub(r"\1 not", s)
    s = _MENTION_RE.sub(" ", s)
    s = _HASHTAG_RE.sub("", s)
    s = _NON_ALNUM_RE.sub(" ", s)
    return _WS_RE.sub(" ", s).strip()


def load_emoji_map(path: str | Path | None = None) -> dict[str, str]:
    """Load a TSV ``emoji<TAB>word`` table; None loads the bundled default."""
    if path is None:
        text = resources.files("poultrylex.data").joinpath("emoji_map.tsv").read_text("utf-8")
        source = "<bundled emoji map>"
    else:
        p = Path(path)
        if not p.is_file():
            raise DataFormatError(f"emoji map file not found: {p}")
        text = p.read_text(encoding="utf-8")
        source = str(p)
    table: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1].strip():
            raise DataFormatError(f"{source}:{line_no}: expected emoji<TAB>word, got {line!r}")
        table[parts[0]] = parts[1].strip()
    return table


def apply_emoji_map(text: str, emoji_map: dict[str, str]) -> str:
    """Replace mapped emojis with their word, delete unmapped emojis."""
    # longest key first so multi-codepoint emojis win over their prefixes
    for emoji in sorted(emoji_map, key=len, reverse=True):
        if emoji in text:
            text = text.replace(emoji, f" {emoji_map[emoji]} ")
    text = _EMOJI_RE.sub("", text)
    return _WS_RE.sub(" ", text).strip()


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One token per line; None loads the bundled ~150-word English list."""
    if path is None:
        text = resources.files("poultrylex.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        p = Path(path)
        if not p.is_file():
            raise DataFormatError(f"stopword file not found: {p}")
        text = p.read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


@dataclass
class TokenSequence:
    tokens: list[str]
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def negation_transform(tokens: list[str]) -> list[str]:
    """Fold negation cues into the following word: ``not good`` -> ``not_good``.

    Single left-to-right pass; consecutive cues stack prefixes and a cue
    with nothing after it is dropped.
    """
    out: list[str] = []
    pending = ""
    for tok in tokens:
        if tok in NEGATION_CUES:
            pending += NEGATION_PREFIX
        else:
            out.append(pending + tok)
            pending = ""
    return out


def _stem_token(token: str) -> str:
    # stem only the base of a negation-marked token so lexicon lookups match
    base = token
    prefix = ""
    while base.startswith(NEGATION_PREFIX):
        prefix += NEGATION_PREFIX
        base = base[len(NEGATION_PREFIX):]
    return prefix + stemmer.stem_fixpoint(base)


def tokenize_pipeline(
    doc: Document,
    stopwords: frozenset[str],
    emoji_map: dict[str, str],
) -> TokenSequence:
    """clean -> emoji words -> split -> stopwords -> negation -> stem."""
    text = clean(apply_emoji_map(doc.text, emoji_map))
    tokens = [t for t in text.split() if t not in stopwords]
    tokens = negation_transform(tokens)
    return TokenSequence(tokens=[_stem_token(t) for t in tokens], source_id=doc.id)


@dataclass
class Vocabulary:
    """Dense token index with reserved entries 0=UNK and 1=PAD."""

    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    @classmethod
    def build(cls, corpus_tokens: list[TokenSequence], min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for seq in corpus_tokens:
            for tok in seq.tokens:
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(t for t, c in counts.items() if c >= min_count)
        return cls(itos=[UNK_TOKEN, PAD_TOKEN] + kept)

    def encode(self, tokens: list[str], max_len: int) -> tuple[np.ndarray, int]:
        """Pad/truncate to ``max_len``; returns (ids, real_length)."""
        ids = [self.index(t) for t in tokens[:max_len]]
        real = len(ids)
        ids.extend([PAD_ID] * (max_len - real))
        return np.asarray(ids, dtype=np.int64), real


def write_processed(
    path: str | Path,
    sequences: list[TokenSequence],
    labels: list[SentimentLabel | None],
) -> None:
    """Tokenized corpus as JSONL rows {"id", "tokens", "label"?}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for seq, label in zip(sequences, labels):
            row: dict = {"id": seq.source_id, "tokens": seq.tokens}
            if label is not None:
                row["label"] = label.to_string()
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_processed(
    path: str | Path,
) -> tuple[list[TokenSequence], list[SentimentLabel | None]]:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"processed corpus not found: {path}")
    sequences: list[TokenSequence] = []
    labels: list[SentimentLabel | None] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {exc.msg}") from None
            if not isinstance(row, dict) or "id" not in row or "tokens" not in row:
                raise CorpusError(f"{path}:{line_no}: expected an object with id and tokens")
            sequences.append(TokenSequence(tokens=list(row["tokens"]), source_id=str(row["id"])))
            raw = row.get("label")
            labels.append(SentimentLabel.from_string(raw) if raw else None)
    return sequences, labels


@dataclass
class TfIdfStats:
    """Document count and per-term document frequencies for one corpus."""

    n_docs: int
    df: np.ndarray  # (V,) ints

    @classmethod
    def from_corpus(cls, corpus_tokens: list[TokenSequence], vocab: Vocabulary) -> "TfIdfStats":
        df = np.zeros(len(vocab), dtype=np.int64)
        for seq in corpus_tokens:
            present = {vocab.stoi[t] for t in seq.tokens if t in vocab.stoi}
            for idx in present:
                df[idx] += 1
        return cls(n_docs=len(corpus_tokens), df=df)


def tfidf(
    corpus_tokens: list[TokenSequence],
    vocab: Vocabulary,
    cfg: RunConfig | None = None,
) -> np.ndarray:
    """(num_docs x V) matrix: presence-indicator (or raw-count) times log(N/DF).

    Terms absent from every document (DF = 0) score 0 everywhere; tokens
    outside the vocabulary are ignored.
    """
    cfg = cfg or RunConfig()
    if cfg.log_base == "natural":
        log = math.log
    elif cfg.log_base == "base10":
        log = math.log10
    else:
        raise ConfigError(f"unknown log base: {cfg.log_base!r}")

    stats = TfIdfStats.from_corpus(corpus_tokens, vocab)
    n = stats.n_docs
    idf = np.zeros(len(vocab), dtype=np.float64)
    nonzero = stats.df > 0
    idf[nonzero] = [log(n / d) for d in stats.df[nonzero]]

    matrix = np.zeros((n, len(vocab)), dtype=np.float64)
    for row, seq in enumerate(corpus_tokens):
        if cfg.tf_variant == "binary":
            for tok in set(seq.tokens):
                idx = vocab.stoi.get(tok)
                if idx is not None:
                    matrix[row, idx] = idf[idx]
        else:
            for tok in seq.tokens:
                idx = vocab.stoi.get(tok)
                if idx is not None:
                    matrix[row, idx] += idf[idx]
    return matrix
