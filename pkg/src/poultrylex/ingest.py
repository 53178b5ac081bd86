"""Corpus loading, validation, stratified splitting, and run configuration.

The canonical corpus format is JSONL, one object per line:
``{"id": "...", "text": "...", "label": "positive|neutral|negative"}``
with ``label`` optional (inference-only corpora).  CSV with a header row
(``id,text,label``) is accepted as an alternative.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorpusError


class SentimentLabel(enum.IntEnum):
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2

    @classmethod
    def from_string(cls, s: str) -> "SentimentLabel":
        try:
            return _LABEL_NAMES[s.strip().lower()]
        except KeyError:
            raise CorpusError(f"unknown label string: {s!r}") from None

    def to_string(self) -> str:
        return self.name.lower()


_LABEL_NAMES = {
    "negative": SentimentLabel.NEGATIVE,
    "neutral": SentimentLabel.NEUTRAL,
    "positive": SentimentLabel.POSITIVE,
}


@dataclass(frozen=True)
class Document:
    """One raw post: unique non-empty id, non-empty text, optional label."""

    id: str
    text: str
    label: SentimentLabel | None = None


@dataclass
class RejectedRow:
    line: int
    reason: str


@dataclass
class LabeledCorpus:
    documents: list[Document]
    rejects: list[RejectedRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def labeled(self) -> list[Document]:
        return [d for d in self.documents if d.label is not None]

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for d in self.documents:
            key = d.label.to_string() if d.label is not None else "unlabeled"
            counts[key] = counts.get(key, 0) + 1
        return counts


def _doc_from_fields(fields: dict, line_no: int, seen_ids: set[str]) -> Document | RejectedRow:
    doc_id = fields.get("id")
    if doc_id is None or (isinstance(doc_id, str) and not doc_id.strip()):
        return RejectedRow(line_no, "missing or empty id")
    doc_id = str(doc_id)
    if doc_id in seen_ids:
        raise CorpusError(f"duplicate document id {doc_id!r} at line {line_no}")
    text = fields.get("text")
    if text is None:
        return RejectedRow(line_no, "missing text field")
    if not isinstance(text, str) or not text.strip():
        return RejectedRow(line_no, "empty text")
    raw_label = fields.get("label")
    label = None
    if raw_label is not None and raw_label != "":
        if not isinstance(raw_label, str):
            raise CorpusError(f"label must be a string at line {line_no}: {raw_label!r}")
        try:
            label = SentimentLabel.from_string(raw_label)
        except CorpusError:
            raise CorpusError(f"unknown label string {raw_label!r} at line {line_no}") from None
    seen_ids.add(doc_id)
    return Document(id=doc_id, text=text, label=label)


def load_corpus(path: str | Path, format: str = "jsonl") -> LabeledCorpus:
    """Load a corpus file, collecting malformed rows instead of failing.

    Malformed rows (bad JSON, missing id/text) land in ``corpus.rejects``
    with their line number.  Unknown label strings and duplicate ids are
    hard errors.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    if format not in ("jsonl", "csv"):
        raise ConfigError(f"unknown corpus format: {format!r} (expected jsonl or csv)")

    documents: list[Document] = []
    rejects: list[RejectedRow] = []
    seen_ids: set[str] = set()

    if format == "jsonl":
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    fields = json.loads(line)
                except json.JSONDecodeError as exc:
                    rejects.append(RejectedRow(line_no, f"invalid JSON: {exc.msg}"))
                    continue
                if not isinstance(fields, dict):
                    rejects.append(RejectedRow(line_no, "row is not a JSON object"))
                    continue
                row = _doc_from_fields(fields, line_no, seen_ids)
                (documents if isinstance(row, Document) else rejects).append(row)
    else:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "id" not in reader.fieldnames or "text" not in reader.fieldnames:
                raise CorpusError(f"{path}: CSV header must contain id and text columns")
            for fields in reader:
                row = _doc_from_fields(fields, reader.line_num, seen_ids)
                (documents if isinstance(row, Document) else rejects).append(row)

    return LabeledCorpus(documents=documents, rejects=rejects)


def save_corpus(corpus: LabeledCorpus, path: str | Path) -> None:
    """Write the canonical JSONL form (load/save round-trips byte-identically)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus.documents:
            row: dict = {"id": doc.id, "text": doc.text}
            if doc.label is not None:
                row["label"] = doc.label.to_string()
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> list[int]:
    quotas = [n * r for r in ratios]
    base = [int(math.floor(q + 1e-9)) for q in quotas]
    short = n - sum(base)
    # hand out remaining docs by descending fractional part, earlier split wins ties
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def validate_ratios(ratios: tuple[float, float, float]) -> None:
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")


def split_indices(
    group_keys: list,
    ratios: tuple[float, float, float],
    seed: int,
    stratify: bool = True,
) -> tuple[list[int], list[int], list[int]]:
    """Partition item indices into three splits, stratified by group key.

    Deterministic per seed; per-group counts stay within one item of the
    exact proportional share; each returned list is in original order.
    """
    validate_ratios(ratios)
    if not group_keys:
        raise CorpusError("cannot split an empty corpus")

    rng = np.random.default_rng(seed)
    n_active = sum(1 for r in ratios if r > 0)

    if stratify:
        strata: dict[object, list[int]] = {}
        for i, key in enumerate(group_keys):
            strata.setdefault(key, []).append(i)
        for key, members in strata.items():
            if len(members) < n_active:
                name = key.to_string() if isinstance(key, SentimentLabel) else str(key)
                raise CorpusError(
                    f"class {name!r} has {len(members)} documents, fewer than the "
                    f"{n_active} non-empty splits; disable stratification (--no-stratify) to proceed"
                )
        groups = [strata[k] for k in sorted(strata, key=lambda k: (k is None, k))]
    else:
        groups = [list(range(len(group_keys)))]

    assigned: tuple[list[int], list[int], list[int]] = ([], [], [])
    for members in groups:
        perm = rng.permutation(len(members))
        shuffled = [members[j] for j in perm]
        counts = _largest_remainder(len(members), ratios)
        pos = 0
        for split_idx, c in enumerate(counts):
            assigned[split_idx].extend(shuffled[pos : pos + c])
            pos += c
    return tuple(sorted(idxs) for idxs in assigned)


def split_corpus(
    corpus: LabeledCorpus,
    ratios: tuple[float, float, float],
    seed: int,
    stratify: bool = True,
) -> tuple[LabeledCorpus, LabeledCorpus, LabeledCorpus]:
    """Deterministic (train, val, test) partition, stratified by label.

    Every document lands in exactly one split; per-class counts stay within
    one document of the exact proportional share.  Unlabeled documents form
    their own stratum.
    """
    parts = split_indices([d.label for d in corpus.documents], ratios, seed, stratify)
    train, val, test = (
        LabeledCorpus(documents=[corpus.documents[i] for i in idxs]) for idxs in parts
    )
    return train, val, test


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class RunConfig:
    """Every knob of the pipeline; file values < --set overrides < CLI flags."""

    seed: int = 7
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    test_ratio: float = 0.1
    stratify: bool = True
    num_topics: int = 5
    lda_alpha: float = 0.1
    lda_beta: float = 0.01
    lda_sweeps: int = 1000
    lda_burn_in: int = 200
    d_model: int = 64
    n_heads: int = 4
    n_fusion_heads: int = 4
    n_layers: int = 2
    window: int = 2
    max_len: int = 64
    dropout: float = 0.1
    residuals: bool = True
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 16
    neutral_band: float = 0.1
    log_base: str = "natural"
    tf_variant: str = "binary"

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def validate(self) -> "RunConfig":
        validate_ratios(self.split_ratios)
        if self.num_topics < 1:
            raise ConfigError(f"num_topics must be >= 1, got {self.num_topics}")
        if self.lda_alpha <= 0 or self.lda_beta <= 0:
            raise ConfigError("lda_alpha and lda_beta must be > 0")
        if self.lda_sweeps < 0 or self.lda_burn_in < 0:
            raise ConfigError("lda_sweeps and lda_burn_in must be >= 0")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.n_fusion_heads < 1:
            raise ConfigError("n_fusion_heads must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.neutral_band < 0:
            raise ConfigError(f"neutral_band must be >= 0, got {self.neutral_band}")
        if self.log_base not in ("natural", "base10"):
            raise ConfigError(f"log_base must be natural or base10, got {self.log_base!r}")
        if self.tf_variant not in ("binary", "count"):
            raise ConfigError(f"tf_variant must be binary or count, got {self.tf_variant!r}")
        if self.max_len < 1 or self.window < 0 or self.n_layers < 1:
            raise ConfigError("max_len >= 1, window >= 0, n_layers >= 1 required")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate >= 0, epochs >= 0, batch_size >= 1 required")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def apply_override(self, key: str, raw: str) -> None:
        if key not in {f.name for f in dataclasses.fields(self)}:
            raise ConfigError(f"unknown config key: {key!r}")
        kind = type(getattr(self, key))
        if kind is bool:
            low = raw.strip().lower()
            if low in _TRUE:
                value: object = True
            elif low in _FALSE:
                value = False
            else:
                raise ConfigError(f"config key {key}: expected boolean, got {raw!r}")
        elif kind is int:
            try:
                value = int(raw)
            except ValueError:
                raise ConfigError(f"config key {key}: expected integer, got {raw!r}") from None
        elif kind is float:
            try:
                value = float(raw)
            except ValueError:
                raise ConfigError(f"config key {key}: expected number, got {raw!r}") from None
        else:
            value = raw.strip()
        setattr(self, key, value)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        """Parse a flat key=value text file.  Blank lines and # comments allowed."""
        cfg = cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, raw = stripped.partition("=")
            cfg.apply_override(key.strip(), raw)
        return cfg
