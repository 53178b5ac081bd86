"""Acceptance suite: one test per shipping criterion, each printing a
PASS/FAIL line with its elapsed time (run with ``pytest -s`` to see them
inline).  Budgets are wall-clock seconds on one CPU core.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from poultrylex import autodiff as ad
from poultrylex import model as mdl
from poultrylex import topics
from poultrylex.autodiff import Tensor
from poultrylex.cli import main as cli_main
from poultrylex.ingest import RunConfig
from poultrylex.lexicon import SentimentLexicon, polarity_pc
from poultrylex.preprocess import (
    NEGATION_CUES,
    TokenSequence,
    Vocabulary,
    negation_transform,
    tfidf,
)
from poultrylex.train_eval import (
    confusion,
    encode_pairs,
    metrics,
    predict_proba,
    roc_curve_binary,
    train,
)

from conftest import separable_pairs, tiny_model


class _Criterion:
    def __init__(self, name, budget=None):
        self.name = name
        self.budget = budget

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        budget = f" (budget {self.budget:.0f}s)" if self.budget else ""
        print(f"ACCEPTANCE {self.name}: {status} in {elapsed:.1f}s{budget}")
        if exc_type is None and self.budget is not None:
            assert elapsed < self.budget, (
                f"{self.name} exceeded its {self.budget}s budget: {elapsed:.1f}s"
            )
        return False


def _rand(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=True)


def _projected(op):
    def fn(*tensors):
        out = op(*tensors)
        r = Tensor(np.random.default_rng(999).normal(size=out.shape))
        return ad.tsum(ad.mul(out, r))
    return fn


ALL_OPS = {
    "matmul": (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    "add": (lambda a, b: ad.add(a, b), [(2, 3, 4), (4,)]),
    "sub": (lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)]),
    "mul": (lambda a, b: ad.mul(a, b), [(2, 3, 4), (2, 3, 1)]),
    "scalar_mul": (lambda a: ad.scalar_mul(a, 0.37), [(3, 4)]),
    "transpose": (lambda a: ad.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), [(3, 2), (3, 4)]),
    "slice": (lambda a: ad.slice_axis(a, 1, 1, 3), [(3, 4)]),
    "relu": (lambda a: ad.relu(a), [(3, 4)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 4)]),
    "softmax": (lambda a: ad.softmax(a), [(3, 4)]),
    "mean": (lambda a: ad.mean(a, axis=1), [(3, 4)]),
    "sum": (lambda a: ad.tsum(a, axis=0), [(3, 4)]),
    "amax": (lambda a: ad.amax(a, axis=1), [(3, 4)]),
}


class TestAcceptance:
    def test_gradient_correctness(self):
        """Every op and the fully composed classifier pass gradcheck < 1e-4."""
        with _Criterion("gradient-correctness", budget=5.0):
            for name, (op, shapes) in ALL_OPS.items():
                tensors = [_rand(s, 10 + i) for i, s in enumerate(shapes)]
                report = ad.gradcheck(_projected(op), tensors)
                assert report.max_rel_err < 1e-4, (name, report.max_rel_err)

            table = _rand((6, 3), 20)
            ids = np.random.default_rng(21).integers(0, 6, size=(2, 4))
            report = ad.gradcheck(_projected(lambda t: ad.embedding_lookup(t, ids)), [table])
            assert report.max_rel_err < 1e-4, ("embedding_lookup", report.max_rel_err)

            logits = _rand((4, 3), 22)
            targets = np.random.default_rng(23).integers(0, 3, size=4)
            report = ad.gradcheck(lambda l: ad.cross_entropy(l, targets), [logits])
            assert report.max_rel_err < 1e-4, ("cross_entropy", report.max_rel_err)

            x = _rand((4, 5), 24)
            report = ad.gradcheck(
                _projected(lambda a: ad.dropout(a, 0.4, np.random.default_rng(7), train=True)),
                [x],
            )
            assert report.max_rel_err < 1e-4, ("dropout", report.max_rel_err)

            # fully composed model at d=8, L=4, B=2
            params = tiny_model(ffn_mult=2)
            batch_ids = np.array([[2, 3, 4, 1], [5, 6, 7, 1]])
            batch_signs = np.array([[1, 2, 0, 1], [1, 1, 2, 1]])
            batch_targets = np.array([0, 2])

            def model_loss(*tensors):
                trace = mdl.forward(params, batch_ids, batch_signs)
                return ad.cross_entropy(trace.logits, batch_targets)

            report = ad.gradcheck(model_loss, list(params.tensors.values()))
            assert report.max_rel_err < 1e-4, ("full-model", report.max_rel_err)

    def test_architecture_invariants(self):
        """Attention normalization, gate range and limits, stream collapse,
        head-count reduction, padding invariance."""
        with _Criterion("architecture-invariants"):
            ids = np.array([[2, 3, 4, 1], [5, 6, 1, 1]])
            signs = np.array([[1, 2, 0, 1], [1, 1, 1, 1]])

            params = tiny_model()
            trace = mdl.forward(params, ids, signs)
            for weights in trace.attn_g2l + trace.attn_l2g:
                np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-9)
            assert (trace.alpha.data > 0).all() and (trace.alpha.data < 1).all()

            # zero gate weights: exact 0.5/0.5 blend
            params["gate_w"].data[:] = 0.0
            params["gate_b"].data[:] = 0.0
            trace = mdl.forward(params, ids, signs)
            np.testing.assert_array_equal(trace.alpha.data, 0.5)

            # one fusion head reduces the head sum to the plain gated blend
            single = tiny_model(n_fusion_heads=1)
            e = mdl.embed(single, ids, signs)
            h_g = mdl.global_stream(single, e, ids)
            h_l = mdl.local_stream(single, e, ids)
            fused, alpha, _, _, lam = mdl.gated_cross_fusion(single, h_g, h_l, ids)
            assert lam.tolist() == [1.0]
            key_mask = mdl.self_attention_masks(ids)[:, 0]
            a1, _ = mdl.attention(
                ad.matmul(h_g, single["fusion.0.wq"]), ad.matmul(h_l, single["fusion.0.wk"]),
                ad.matmul(h_l, single["fusion.0.wv"]), key_mask, scale=math.sqrt(8),
            )
            a2, _ = mdl.attention(
                ad.matmul(h_l, single["fusion.0.wq_rev"]), ad.matmul(h_g, single["fusion.0.wk_rev"]),
                ad.matmul(h_g, single["fusion.0.wv_rev"]), key_mask, scale=math.sqrt(8),
            )
            expected = alpha.data * a1.data + (1 - alpha.data) * a2.data
            np.testing.assert_allclose(fused.data, expected, atol=1e-12)

            # covering window plus shared weights collapses local onto global
            shared = tiny_model(window=3)
            for layer in range(shared.config.n_layers):
                for w in ("wq", "wk", "wv", "wo", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
                    shared[f"local.{layer}.{w}"].data = shared[f"global.{layer}.{w}"].data.copy()
            e = mdl.embed(shared, ids, signs)
            np.testing.assert_allclose(
                mdl.local_stream(shared, e, ids).data,
                mdl.global_stream(shared, e, ids).data,
                atol=1e-12,
            )

            # padding beyond the real length never moves the output
            p8 = tiny_model(max_len=8)
            p12 = tiny_model(max_len=12)
            for name in p8.tensors:
                p12[name].data = p8[name].data.copy()
            y8 = mdl.forward(p8, np.array([[2, 3, 4] + [1] * 5]),
                             np.array([[1, 2, 0] + [1] * 5])).y.data
            y12 = mdl.forward(p12, np.array([[2, 3, 4] + [1] * 9]),
                              np.array([[1, 2, 0] + [1] * 9])).y.data
            assert np.abs(y8 - y12).max() <= 1e-9

    def test_learning_sanity(self):
        """Both classifiers reach 95% train accuracy on the separable corpus."""
        with _Criterion("learning-sanity", budget=60.0):
            pairs = separable_pairs(n=32)
            lex = SentimentLexicon()
            cfg = RunConfig(seed=9, d_model=16, n_heads=2, n_fusion_heads=2,
                            n_layers=1, window=1, max_len=8, dropout=0.0,
                            learning_rate=0.01, epochs=60, batch_size=8)
            assert cfg.epochs <= 200
            for kind in ("poultrylex", "cnn"):
                result = train(kind, pairs, [], cfg, lex)
                ids, signs, y, _ = encode_pairs(pairs, result.vocab, lex, cfg.max_len)
                probs = predict_proba(result.params, ids, signs)
                acc = (mdl.predict_classes(probs) == y).mean()
                assert acc >= 0.95, (kind, acc)

    def test_lda_recovery(self):
        """Planted 3-topic corpus is recovered; counts recount exactly."""
        with _Criterion("lda-recovery", budget=30.0):
            rng = np.random.default_rng(2)
            words = [[f"w{t}_{i}" for i in range(10)] for t in range(3)]
            seqs = []
            for d in range(200):
                t = d % 3
                toks = []
                for _ in range(25):
                    pool = words[t] if rng.random() >= 0.1 else words[(t + 1) % 3]
                    toks.append(pool[rng.integers(10)])
                seqs.append(TokenSequence(tokens=toks, source_id=str(d)))
            vocab = Vocabulary.build(seqs)

            state = topics.gibbs_init(seqs, vocab, 3, 0.1, 0.01, seed=19)
            for sweep in range(1, 501):
                topics.gibbs_sweep(state)
                if sweep % 100 == 0:
                    assert state.counts_consistent(), f"counts drifted at sweep {sweep}"

            report = topics.estimate(state, top_k=5)
            fitted = [set(t for t, _ in terms) for terms in report.top_terms]
            best = None
            for perm in itertools.permutations(range(3)):
                overlaps = [len(fitted[i] & set(words[perm[i]])) for i in range(3)]
                if best is None or min(overlaps) > min(best):
                    best = overlaps
            assert min(best) >= 4, best

    def test_oracle_equivalence(self):
        """Three independently computed oracles agree with the implementations."""
        with _Criterion("oracle-equivalence"):
            # binary-presence TF-IDF vs a two-pass brute force
            rng = np.random.default_rng(17)
            alphabet = list("abcdefghij")
            for _ in range(25):
                n_docs = int(rng.integers(1, 21))
                lists = [
                    [alphabet[k] for k in rng.integers(0, 10, rng.integers(0, 9))]
                    for _ in range(n_docs)
                ]
                seqs = [TokenSequence(tokens=t, source_id=str(i)) for i, t in enumerate(lists)]
                vocab = Vocabulary.build(seqs)
                expected = np.zeros((n_docs, len(vocab)))
                for j, term in enumerate(vocab.itos):
                    df = sum(1 for toks in lists if term in toks)
                    if df == 0:
                        continue
                    for i, toks in enumerate(lists):
                        if term in toks:
                            expected[i, j] = math.log(n_docs / df)
                np.testing.assert_allclose(tfidf(seqs, vocab), expected, atol=1e-12)

            # trapezoidal AUC vs pair counting, ties counted half
            rng = np.random.default_rng(31)
            checked = 0
            while checked < 100:
                n = int(rng.integers(2, 201))
                scores = np.round(rng.random(n), 2)
                positives = rng.random(n) < 0.4
                if positives.all() or not positives.any():
                    continue
                auc, _ = roc_curve_binary(scores, positives)
                pos, neg = scores[positives], scores[~positives]
                wins = sum(
                    1.0 if p > q else 0.5 if p == q else 0.0
                    for p in pos for q in neg
                )
                assert abs(auc - wins / (len(pos) * len(neg))) < 1e-9
                checked += 1

            # confusion-matrix rates vs hand evaluation
            cm = confusion([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0])
            np.testing.assert_array_equal(cm, [[1, 1, 0], [0, 2, 0], [1, 0, 1]])
            report = metrics(np.array([[40, 5], [5, 50]]))
            assert report.accuracy == pytest.approx(0.90, abs=1e-12)
            assert report.per_class[1]["precision"] == pytest.approx(50 / 55, abs=1e-12)
            assert report.per_class[1]["recall"] == pytest.approx(50 / 55, abs=1e-12)
            f1 = 2 * (50 / 55) * (50 / 55) / (50 / 55 + 50 / 55)
            assert report.per_class[1]["f1"] == pytest.approx(f1, abs=1e-12)
            assert report.per_class[1]["tn"] == 40 and report.per_class[1]["fp"] == 5
            perfect = metrics(np.diag([10, 10, 10]))
            assert perfect.accuracy == 1.0 and perfect.macro["f1"] == 1.0

    def test_formula_fidelity(self):
        """Polarity stays in [-1, 1] on 1e5 random pairs; the negation
        transform matches an independent oracle on 1e3 random token lists."""
        with _Criterion("formula-fidelity"):
            rng = np.random.default_rng(12)
            pos = rng.uniform(0, 1e9, size=100_000)
            neg = rng.uniform(0, 1e9, size=100_000)
            values = np.array([polarity_pc(p, n)[0] for p, n in zip(pos, neg)])
            assert (values >= -1.0).all() and (values <= 1.0).all()

            alphabet = ["not", "no", "never", "good", "bad", "feed", "hen"]
            for _ in range(1000):
                tokens = [alphabet[k] for k in rng.integers(0, len(alphabet), rng.integers(0, 12))]
                expected = []
                pending = 0
                for tok in tokens:
                    if tok in NEGATION_CUES:
                        pending += 1
                    else:
                        expected.append("not_" * pending + tok)
                        pending = 0
                assert negation_transform(tokens) == expected

    def test_pipeline_determinism(self, tmp_path):
        """run-all twice with one seed produces byte-identical artifacts."""
        with _Criterion("pipeline-determinism", budget=120.0):
            outs = []
            for sub in ("run1", "run2"):
                out = tmp_path / sub
                assert cli_main(["run-all", "--out", str(out), "--seed", "7"]) == 0
                outs.append(out)
            files1 = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
            files2 = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
            assert files1 == files2 and files1
            for rel in files1:
                assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
