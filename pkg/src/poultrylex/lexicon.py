"""Lexicon-based polarity scoring, emotion counting, and term frequencies.

A lexicon row carries non-negative positive/negative weights plus an
optional set of emotion tags.  Document polarity is the normalized
difference of the accumulated weights, ``(pos - neg) / (pos + neg)``,
which lives in [-1, 1]; tokens carrying a ``not_`` prefix swap the
contribution of their base term.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import stemmer
from .errors import DataFormatError
from .ingest import SentimentLabel
from .preprocess import NEGATION_PREFIX, TokenSequence

EMOTIONS = (
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "surprise",
    "trust",
)


@dataclass
class LexiconEntry:
    pos_weight: float = 0.0
    neg_weight: float = 0.0
    emotions: frozenset[str] = frozenset()


@dataclass
class SentimentLexicon:
    entries: dict[str, LexiconEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, term: str) -> LexiconEntry | None:
        return self.entries.get(term)

    def scaled(self, factor: float) -> "SentimentLexicon":
        return SentimentLexicon(
            entries={
                t: LexiconEntry(e.pos_weight * factor, e.neg_weight * factor, e.emotions)
                for t, e in self.entries.items()
            }
        )

    def to_rows(self) -> list[list]:
        return [
            [t, e.pos_weight, e.neg_weight, sorted(e.emotions)]
            for t, e in sorted(self.entries.items())
        ]

    @classmethod
    def from_rows(cls, rows: list[list]) -> "SentimentLexicon":
        return cls(
            entries={
                t: LexiconEntry(float(p), float(n), frozenset(em)) for t, p, n, em in rows
            }
        )


def load_lexicon(path: str | Path | None = None, stem_terms: bool = True) -> SentimentLexicon:
    """Load a TSV lexicon: ``term<TAB>pos<TAB>neg<TAB>emotion,emotion,...``.

    None loads the bundled poultry-flavored list.  With ``stem_terms`` the
    term column is run through the Porter stemmer so entries match
    pipeline output; colliding stems merge (max weights, union emotions).
    """
    if path is None:
        text = resources.files("poultrylex.data").joinpath("lexicon.tsv").read_text("utf-8")
        source = "<bundled lexicon>"
    else:
        p = Path(path)
        if not p.is_file():
            raise DataFormatError(f"lexicon file not found: {p}")
        text = p.read_text(encoding="utf-8")
        source = str(p)

    entries: dict[str, LexiconEntry] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) not in (3, 4):
            raise DataFormatError(
                f"{source}:{line_no}: expected term<TAB>pos<TAB>neg[<TAB>emotions], got {line!r}"
            )
        term = parts[0].strip().lower()
        if not term:
            raise DataFormatError(f"{source}:{line_no}: empty term")
        try:
            pos, neg = float(parts[1]), float(parts[2])
        except ValueError:
            raise DataFormatError(f"{source}:{line_no}: weights must be numbers") from None
        if pos < 0 or neg < 0:
            raise DataFormatError(f"{source}:{line_no}: weights must be non-negative")
        emotions = frozenset(
            e.strip().lower() for e in (parts[3].split(",") if len(parts) == 4 and parts[3] else []) if e.strip()
        )
        unknown = emotions - set(EMOTIONS)
        if unknown:
            raise DataFormatError(f"{source}:{line_no}: unknown emotions {sorted(unknown)}")
        if pos == 0 and neg == 0 and not emotions:
            raise DataFormatError(f"{source}:{line_no}: entry carries no weight or emotion")

        key = stemmer.stem_fixpoint(term) if stem_terms else term
        prev = entries.get(key)
        if prev is None:
            entries[key] = LexiconEntry(pos, neg, emotions)
        else:
            entries[key] = LexiconEntry(
                max(prev.pos_weight, pos), max(prev.neg_weight, neg), prev.emotions | emotions
            )
    return SentimentLexicon(entries=entries)


@dataclass
class PolarityScore:
    pos_score: float
    neg_score: float
    p_c: float
    f_m: float
    label: SentimentLabel
    no_hits: bool = False


@dataclass
class TermFrequencyTable:
    counts: Counter

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def top_k(self, k: int) -> list[tuple[str, int]]:
        # deterministic: count descending, then lexicographic
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def term_frequencies(corpus_tokens: list[TokenSequence]) -> TermFrequencyTable:
    counts: Counter = Counter()
    for seq in corpus_tokens:
        counts.update(seq.tokens)
    return TermFrequencyTable(counts=counts)


def polarity_pc(pos: float, neg: float) -> tuple[float, bool]:
    """Normalized polarity (pos - neg) / (pos + neg); (0, flagged) when both zero."""
    total = pos + neg
    if total == 0:
        return 0.0, True
    return (pos - neg) / total, False


def polarity_fm(pos: float, neg: float) -> tuple[float, bool]:
    """Signed share of the dominant side: +pos/(pos+neg) or -neg/(pos+neg).

    Ties score 0; both-zero scores 0 with the no-hits flag.
    """
    total = pos + neg
    if total == 0:
        return 0.0, True
    if pos > neg:
        return pos / total, False
    if neg > pos:
        return -neg / total, False
    return 0.0, False


def _split_negation(token: str) -> tuple[str, bool]:
    negated = False
    while token.startswith(NEGATION_PREFIX):
        negated = not negated
        token = token[len(NEGATION_PREFIX):]
    return token, negated


def score_document(
    tokens: TokenSequence,
    lex: SentimentLexicon,
    neutral_band: float = 0.1,
) -> PolarityScore:
    """Accumulate lexicon weights over the tokens and label by polarity.

    ``not_``-prefixed tokens swap the pos/neg contribution of their base
    term.  Label is positive above +neutral_band, negative below
    -neutral_band, else neutral.
    """
    pos = neg = 0.0
    for token in tokens:
        base, negated = _split_negation(token)
        entry = lex.get(base)
        if entry is None:
            continue
        if negated:
            pos += entry.neg_weight
            neg += entry.pos_weight
        else:
            pos += entry.pos_weight
            neg += entry.neg_weight

    p_c, no_hits = polarity_pc(pos, neg)
    f_m, _ = polarity_fm(pos, neg)
    if p_c > neutral_band:
        label = SentimentLabel.POSITIVE
    elif p_c < -neutral_band:
        label = SentimentLabel.NEGATIVE
    else:
        label = SentimentLabel.NEUTRAL
    return PolarityScore(pos, neg, p_c, f_m, label, no_hits)


def emotion_histogram(
    corpus_tokens: list[TokenSequence], lex: SentimentLexicon
) -> dict[str, int]:
    """Token-occurrence counts per emotion; one occurrence may hit several."""
    hist = {e: 0 for e in EMOTIONS}
    for seq in corpus_tokens:
        for token in seq:
            base, _ = _split_negation(token)
            entry = lex.get(base)
            if entry is None:
                continue
            for emotion in entry.emotions:
                hist[emotion] += 1
    return hist


def token_polarity_signs(tokens: list[str], lex: SentimentLexicon) -> list[int]:
    """Per-token polarity class for the classifier's lexicon feature.

    0 = net negative, 1 = neutral/no hit, 2 = net positive, after the
    ``not_`` swap.
    """
    signs = []
    for token in tokens:
        base, negated = _split_negation(token)
        entry = lex.get(base)
        if entry is None:
            signs.append(1)
            continue
        pos, neg = entry.pos_weight, entry.neg_weight
        if negated:
            pos, neg = neg, pos
        signs.append(2 if pos > neg else 0 if neg > pos else 1)
    return signs
