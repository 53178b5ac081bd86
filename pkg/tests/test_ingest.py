import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poultrylex.errors import ConfigError, CorpusError
from poultrylex.ingest import (
    Document,
    LabeledCorpus,
    RunConfig,
    SentimentLabel,
    load_corpus,
    save_corpus,
    split_corpus,
    split_indices,
)


class TestLoadCorpus:
    def test_jsonl_three_valid_rows(self, tiny_corpus_file):
        corpus = load_corpus(tiny_corpus_file)
        assert len(corpus) == 3
        assert [d.id for d in corpus] == ["a", "b", "c"]
        assert corpus.documents[0].label == SentimentLabel.POSITIVE
        assert not corpus.rejects

    def test_label_case_insensitive(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"1","text":"x","label":"POSITIVE"}\n')
        corpus = load_corpus(path)
        assert corpus.documents[0].label == SentimentLabel.POSITIVE

    def test_missing_text_goes_to_rejects(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(
            '{"id":"1","text":"ok one"}\n'
            '{"id":"2"}\n'
            '{"id":"3","text":"ok two"}\n'
        )
        corpus = load_corpus(path)
        assert [d.id for d in corpus] == ["1", "3"]
        assert len(corpus.rejects) == 1
        assert corpus.rejects[0].line == 2
        assert "text" in corpus.rejects[0].reason

    def test_invalid_json_rejected_with_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"1","text":"ok"}\nnot json at all\n')
        corpus = load_corpus(path)
        assert len(corpus) == 1
        assert corpus.rejects[0].line == 2

    def test_duplicate_id_is_hard_error(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"x","text":"a"}\n{"id":"x","text":"b"}\n')
        with pytest.raises(CorpusError, match="duplicate.*'x'.*line 2"):
            load_corpus(path)

    def test_unknown_label_is_hard_error(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"1","text":"a","label":"meh"}\n')
        with pytest.raises(CorpusError, match="unknown label.*'meh'"):
            load_corpus(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorpusError, match="not found"):
            load_corpus(tmp_path / "nope.jsonl")

    def test_csv_roundtrip_of_fields(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("id,text,label\n1,hello there,negative\n2,plain row,\n")
        corpus = load_corpus(path, format="csv")
        assert len(corpus) == 2
        assert corpus.documents[0].label == SentimentLabel.NEGATIVE
        assert corpus.documents[1].label is None

    def test_csv_requires_header(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(CorpusError, match="header"):
            load_corpus(path, format="csv")

    def test_unlabeled_documents_allowed(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id":"1","text":"a"}\n')
        corpus = load_corpus(path)
        assert corpus.documents[0].label is None


class TestSaveRoundtrip:
    def test_save_load_save_byte_identical(self, tiny_corpus_file, tmp_path):
        corpus = load_corpus(tiny_corpus_file)
        first = tmp_path / "first.jsonl"
        save_corpus(corpus, first)
        second = tmp_path / "second.jsonl"
        save_corpus(load_corpus(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_label_omitted_when_absent(self, tmp_path):
        corpus = LabeledCorpus(documents=[Document(id="1", text="hi")])
        out = tmp_path / "o.jsonl"
        save_corpus(corpus, out)
        row = json.loads(out.read_text())
        assert "label" not in row


def _labeled_corpus(per_class):
    docs = []
    for c, count in enumerate(per_class):
        for i in range(count):
            docs.append(Document(id=f"{c}-{i}", text="t", label=SentimentLabel(c)))
    return LabeledCorpus(documents=docs)


class TestSplit:
    def test_deterministic_per_seed(self):
        corpus = _labeled_corpus([4, 3, 3])
        a = split_corpus(corpus, (0.8, 0.1, 0.1), seed=7)
        b = split_corpus(corpus, (0.8, 0.1, 0.1), seed=7)
        for left, right in zip(a, b):
            assert [d.id for d in left] == [d.id for d in right]

    def test_degenerate_all_train(self):
        corpus = _labeled_corpus([4, 3, 3])
        train, val, test = split_corpus(corpus, (1.0, 0.0, 0.0), seed=1)
        assert len(train) == 10 and len(val) == 0 and len(test) == 0

    def test_stratified_within_one_document(self):
        corpus = _labeled_corpus([34, 33, 33])
        train, val, test = split_corpus(corpus, (0.8, 0.1, 0.1), seed=3)
        for split, ratio in zip((train, val, test), (0.8, 0.1, 0.1)):
            counts = split.label_counts()
            for c, n_class in enumerate([34, 33, 33]):
                got = counts.get(SentimentLabel(c).to_string(), 0)
                assert abs(got - n_class * ratio) <= 1.0

    def test_partition_exact(self):
        corpus = _labeled_corpus([10, 7, 5])
        parts = split_corpus(corpus, (0.6, 0.2, 0.2), seed=9)
        ids = [d.id for split in parts for d in split]
        assert sorted(ids) == sorted(d.id for d in corpus)
        assert len(set(ids)) == len(ids)

    def test_class_smaller_than_splits_errors_with_hint(self):
        corpus = _labeled_corpus([5, 5, 2])
        with pytest.raises(CorpusError, match="no-stratify"):
            split_corpus(corpus, (0.8, 0.1, 0.1), seed=1)
        train, val, test = split_corpus(corpus, (0.8, 0.1, 0.1), seed=1, stratify=False)
        assert len(train) + len(val) + len(test) == 12

    def test_invalid_ratios(self):
        corpus = _labeled_corpus([3, 3, 3])
        with pytest.raises(ConfigError):
            split_corpus(corpus, (0.5, 0.2, 0.2), seed=1)
        with pytest.raises(ConfigError):
            split_corpus(corpus, (1.2, -0.1, -0.1), seed=1)

    def test_empty_corpus(self):
        with pytest.raises(CorpusError, match="empty"):
            split_corpus(LabeledCorpus(documents=[]), (0.8, 0.1, 0.1), seed=1)

    @given(
        labels=st.lists(st.integers(min_value=0, max_value=2), min_size=9, max_size=60),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, labels, seed):
        parts = split_indices(labels, (0.6, 0.2, 0.2), seed, stratify=False)
        merged = sorted(i for part in parts for i in part)
        assert merged == list(range(len(labels)))


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(num_topics=0).validate()
        with pytest.raises(ConfigError):
            RunConfig(lda_alpha=0.0).validate()
        with pytest.raises(ConfigError):
            RunConfig(d_model=10, n_heads=4).validate()
        with pytest.raises(ConfigError):
            RunConfig(dropout=1.0).validate()
        with pytest.raises(ConfigError):
            RunConfig(neutral_band=-0.5).validate()
        with pytest.raises(ConfigError):
            RunConfig(log_base="base2").validate()

    def test_from_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\nseed=13\nnum_topics=4\ndropout=0.2\nresiduals=false\n")
        cfg = RunConfig.from_file(path)
        assert cfg.seed == 13 and cfg.num_topics == 4
        assert cfg.dropout == 0.2 and cfg.residuals is False
        cfg.apply_override("epochs", "3")
        assert cfg.epochs == 3
        with pytest.raises(ConfigError, match="unknown config key"):
            cfg.apply_override("bogus", "1")
        with pytest.raises(ConfigError, match="expected integer"):
            cfg.apply_override("epochs", "many")

    def test_malformed_file_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed 13\n")
        with pytest.raises(ConfigError, match="key=value"):
            RunConfig.from_file(path)
