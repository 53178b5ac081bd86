import json
from pathlib import Path

import numpy as np
import pytest

from poultrylex.ingest import SentimentLabel
from poultrylex.lexicon import LexiconEntry, SentimentLexicon
from poultrylex.model import CnnConfig, ModelConfig, init_cnn, init_poultrylex
from poultrylex.preprocess import TokenSequence


SAMPLE_CORPUS = Path(__file__).resolve().parents[1] / "src" / "poultrylex" / "data" / "sample_corpus.jsonl"


@pytest.fixture
def tiny_corpus_file(tmp_path):
    rows = [
        {"id": "a", "text": "Great feed today", "label": "positive"},
        {"id": "b", "text": "Routine barn walk", "label": "neutral"},
        {"id": "c", "text": "Outbreak nearby, worried", "label": "negative"},
    ]
    path = tmp_path / "corpus.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def tiny_lexicon():
    return SentimentLexicon(entries={
        "good": LexiconEntry(1.0, 0.0, frozenset({"joy"})),
        "great": LexiconEntry(1.5, 0.0, frozenset({"joy", "trust"})),
        "bad": LexiconEntry(0.0, 1.0, frozenset({"sadness"})),
        "sick": LexiconEntry(0.0, 1.2, frozenset({"sadness", "fear"})),
        "trusty": LexiconEntry(0.5, 0.0, frozenset({"trust", "joy"})),
    })


def tiny_model_config(**overrides):
    base = dict(vocab_size=12, d_model=8, n_heads=2, n_layers=1, window=1,
                max_len=4, n_fusion_heads=2, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(seed=3, **overrides):
    return init_poultrylex(tiny_model_config(**overrides), seed=seed)


def tiny_cnn(seed=5, **overrides):
    base = dict(vocab_size=12, d_model=8, max_len=6, filter_widths=(2, 3), n_filters=4)
    base.update(overrides)
    return init_cnn(CnnConfig(**base), seed=seed)


def separable_pairs(n=32, length=5, seed=4):
    """3-class corpus where each class owns its own vocabulary."""
    rng = np.random.default_rng(seed)
    class_words = {
        0: ["sick", "outbreak", "loss", "bad"],
        1: ["report", "schedule", "routine", "count"],
        2: ["great", "healthy", "gain", "good"],
    }
    pairs = []
    for i in range(n):
        c = i % 3
        tokens = [class_words[c][rng.integers(len(class_words[c]))] for _ in range(length)]
        pairs.append((TokenSequence(tokens=tokens, source_id=f"d{i}"), SentimentLabel(c)))
    return pairs
