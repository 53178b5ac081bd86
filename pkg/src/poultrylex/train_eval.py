"""Training loop, confusion-matrix metrics, and one-vs-rest ROC-AUC.

Training is Adam on cross-entropy with fixed epochs; everything is
deterministic per seed (init, shuffling and dropout use separate seeded
streams).  The best-validation-accuracy parameters are retained.

Metric rates come from per-class one-vs-rest counts; macro averages are
unweighted class means (micro and support-weighted variants are emitted
alongside so any averaging can be audited).  ROC curves sweep distinct
score thresholds; the trapezoidal area equals pair-counting AUC with ties
counted half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .autodiff import Tape, Tensor, checkpoint_load, checkpoint_save
from .errors import ConfigError, CorpusError, NumericalError, ShapeError
from .ingest import RunConfig, SentimentLabel
from .lexicon import SentimentLexicon, token_polarity_signs
from .model import CnnConfig, ModelConfig, ModelParams
from .preprocess import TokenSequence, Vocabulary

MODEL_KINDS = ("poultrylex", "cnn")


class Adam:
    """Classic Adam over named parameter tensors; clears grads after a step."""

    def __init__(self, tensors: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in tensors.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in tensors.items()}

    def step(self) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name, p in self.tensors.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


def encode_pairs(
    pairs: list[tuple[TokenSequence, SentimentLabel]],
    vocab: Vocabulary,
    lex: SentimentLexicon,
    max_len: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Encode (sequence, label) pairs to padded id/sign/label arrays.

    Sequences with no tokens cannot be classified and are skipped;
    returns (ids, signs, labels, skipped_count).
    """
    ids_rows, sign_rows, labels = [], [], []
    skipped = 0
    for seq, label in pairs:
        if not seq.tokens:
            skipped += 1
            continue
        ids, real = vocab.encode(seq.tokens, max_len)
        signs = token_polarity_signs(seq.tokens[:max_len], lex)
        signs = np.asarray(signs + [1] * (max_len - real), dtype=np.int64)
        ids_rows.append(ids)
        sign_rows.append(signs)
        labels.append(int(label))
    if not ids_rows:
        return (
            np.zeros((0, max_len), dtype=np.int64),
            np.zeros((0, max_len), dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            skipped,
        )
    return np.stack(ids_rows), np.stack(sign_rows), np.asarray(labels, dtype=np.int64), skipped


def _logits(params: ModelParams, ids: np.ndarray, signs: np.ndarray,
            train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    if params.kind == "poultrylex":
        return mdl.forward(params, ids, signs, train=train, rng=rng).logits
    return mdl.cnn_logits(params, ids)


def predict_proba(params: ModelParams, ids: np.ndarray, signs: np.ndarray,
                  batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities, batched; rows sum to 1."""
    out = []
    for lo in range(0, ids.shape[0], batch_size):
        logits = _logits(params, ids[lo : lo + batch_size], signs[lo : lo + batch_size])
        out.append(ad.softmax(logits).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, mdl.N_CLASSES))


def build_model(model_kind: str, cfg: RunConfig, vocab_size: int, seed: int) -> ModelParams:
    if model_kind == "poultrylex":
        mcfg = ModelConfig(
            vocab_size=vocab_size,
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            window=cfg.window,
            max_len=cfg.max_len,
            n_fusion_heads=cfg.n_fusion_heads,
            dropout=cfg.dropout,
            residuals=cfg.residuals,
        )
        return mdl.init_poultrylex(mcfg, seed)
    if model_kind == "cnn":
        ccfg = CnnConfig(vocab_size=vocab_size, d_model=cfg.d_model, max_len=cfg.max_len)
        return mdl.init_cnn(ccfg, seed)
    raise ConfigError(f"unsupported model kind: {model_kind!r} (expected poultrylex or cnn)")


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    vocab: Vocabulary
    skipped_train: int = 0
    skipped_val: int = 0


def train(
    model_kind: str,
    train_pairs: list[tuple[TokenSequence, SentimentLabel]],
    val_pairs: list[tuple[TokenSequence, SentimentLabel]],
    cfg: RunConfig,
    lex: SentimentLexicon,
    vocab: Vocabulary | None = None,
) -> TrainResult:
    """Adam + cross-entropy for cfg.epochs; keeps the best-val-accuracy params.

    The vocabulary is built from the training split unless supplied.  An
    empty validation split falls back to the training split for the
    per-epoch metrics.
    """
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unsupported model kind: {model_kind!r} (expected poultrylex or cnn)")
    if not train_pairs:
        raise CorpusError("training split is empty")
    if vocab is None:
        vocab = Vocabulary.build([seq for seq, _ in train_pairs])

    ids_tr, signs_tr, y_tr, skipped_tr = encode_pairs(train_pairs, vocab, lex, cfg.max_len)
    if ids_tr.shape[0] == 0:
        raise CorpusError("training split has no documents with tokens")
    if val_pairs:
        ids_va, signs_va, y_va, skipped_va = encode_pairs(val_pairs, vocab, lex, cfg.max_len)
        if ids_va.shape[0] == 0:
            ids_va, signs_va, y_va = ids_tr, signs_tr, y_tr
    else:
        ids_va, signs_va, y_va, skipped_va = ids_tr, signs_tr, y_tr, 0

    params = build_model(model_kind, cfg, len(vocab), seed=cfg.seed)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    opt = Adam(params.tensors, lr=cfg.learning_rate)

    n = ids_tr.shape[0]
    history: list[dict] = []
    best_acc = -1.0
    best = params.snapshot()
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            with Tape() as tape:
                logits = _logits(params, ids_tr[idx], signs_tr[idx], train=True, rng=dropout_rng)
                loss = ad.cross_entropy(logits, y_tr[idx])
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericalError(
                        f"non-finite training loss ({value}) at epoch {epoch}; "
                        f"reduce the learning rate or inspect the data"
                    )
                tape.backward(loss)
            opt.step()
            loss_sum += value * len(idx)

        probs = predict_proba(params, ids_va, signs_va)
        pred = mdl.predict_classes(probs)
        cm = confusion(y_va, pred)
        report = metrics(cm)
        val_acc = report.accuracy
        history.append(
            {
                "epoch": epoch,
                "train_loss": loss_sum / n,
                "val_acc": val_acc,
                "val_f1": report.macro["f1"],
            }
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best = params.snapshot()

    params.load_snapshot(best)
    return TrainResult(
        params=params, history=history, vocab=vocab,
        skipped_train=skipped_tr, skipped_val=skipped_va,
    )


# ------------------------------------------------------------------ metrics


def confusion(true: np.ndarray, pred: np.ndarray, n_classes: int = mdl.N_CLASSES) -> np.ndarray:
    """Exact counts; rows are true classes, columns predicted."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ShapeError(f"confusion: length mismatch {true.shape} vs {pred.shape}")
    if true.size and (true.min() < 0 or true.max() >= n_classes
                      or pred.min() < 0 or pred.max() >= n_classes):
        raise ShapeError(f"confusion: labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


@dataclass
class EvalReport:
    confusion: np.ndarray
    accuracy: float
    per_class: list[dict]
    macro: dict
    micro: dict
    weighted: dict
    notes: list[str] = field(default_factory=list)
    auc_per_class: list[float | None] | None = None
    macro_auc: float | None = None
    roc_curves: list[list[tuple[float, float, float | None]]] | None = None

    def to_json_dict(self) -> dict:
        out = {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "macro": self.macro,
            "micro": self.micro,
            "weighted": self.weighted,
            "notes": self.notes,
        }
        if self.auc_per_class is not None:
            out["auc_per_class"] = self.auc_per_class
            out["macro_auc"] = self.macro_auc
            out["roc_curves"] = [
                [{"fpr": p[0], "tpr": p[1], "threshold": p[2]} for p in curve]
                if curve is not None else None
                for curve in self.roc_curves
            ]
        return out


def metrics(cm: np.ndarray) -> EvalReport:
    """One-vs-rest precision/recall/F1 per class plus macro/micro/weighted."""
    cm = np.asarray(cm, dtype=np.int64)
    n_classes = cm.shape[0]
    total = int(cm.sum())
    if total <= 0:
        raise ShapeError("metrics: confusion matrix is empty")

    notes: list[str] = []
    per_class = []
    for c in range(n_classes):
        tp = int(cm[c, c])
        fn = int(cm[c].sum() - tp)
        fp = int(cm[:, c].sum() - tp)
        tn = total - tp - fn - fp
        precision, p_flag = _safe_div(tp, tp + fp)
        recall, r_flag = _safe_div(tp, tp + fn)
        f1, f_flag = _safe_div(2 * precision * recall, precision + recall)
        if p_flag:
            notes.append(f"class {c}: precision has zero denominator, reported 0")
        if r_flag:
            notes.append(f"class {c}: recall has zero denominator, reported 0")
        if f_flag and not (p_flag and r_flag):
            notes.append(f"class {c}: F1 has zero denominator, reported 0")
        per_class.append(
            {
                "class": c,
                "support": tp + fn,
                "tp": tp,
                "fp": fp,
                "fn": fn,
                "tn": tn,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "accuracy_ovr": (tp + tn) / total,
            }
        )

    def _mean(key):
        return sum(pc[key] for pc in per_class) / n_classes

    supports = np.array([pc["support"] for pc in per_class], dtype=np.float64)
    weights = supports / supports.sum() if supports.sum() > 0 else np.full(n_classes, 1.0 / n_classes)

    tp_all = sum(pc["tp"] for pc in per_class)
    fp_all = sum(pc["fp"] for pc in per_class)
    fn_all = sum(pc["fn"] for pc in per_class)
    micro_p, _ = _safe_div(tp_all, tp_all + fp_all)
    micro_r, _ = _safe_div(tp_all, tp_all + fn_all)
    micro_f1, _ = _safe_div(2 * micro_p * micro_r, micro_p + micro_r)

    return EvalReport(
        confusion=cm,
        accuracy=float(np.trace(cm)) / total,
        per_class=per_class,
        macro={"precision": _mean("precision"), "recall": _mean("recall"), "f1": _mean("f1")},
        micro={"precision": micro_p, "recall": micro_r, "f1": micro_f1},
        weighted={
            key: float(sum(w * pc[key] for w, pc in zip(weights, per_class)))
            for key in ("precision", "recall", "f1")
        },
        notes=notes,
    )


def roc_curve_binary(
    scores: np.ndarray, positives: np.ndarray
) -> tuple[float, list[tuple[float, float, float | None]]] | None:
    """Threshold-sweep ROC over distinct scores; None when one class is absent.

    Trapezoidal area over the tie-grouped points equals the probability a
    random positive outscores a random negative, ties counted half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = positives[order]
    points: list[tuple[float, float, float | None]] = [(0.0, 0.0, None)]
    auc = 0.0
    tp = fp = 0
    prev_fpr = prev_tpr = 0.0
    i = 0
    while i < s.size:
        j = i
        while j < s.size and s[j] == s[i]:
            j += 1
        hits = int(y[i:j].sum())
        tp += hits
        fp += (j - i) - hits
        fpr = fp / n_neg
        tpr = tp / n_pos
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        points.append((fpr, tpr, float(s[i])))
        prev_fpr, prev_tpr = fpr, tpr
        i = j
    return auc, points


def roc_auc_ovr(
    scores: np.ndarray, true: np.ndarray, n_classes: int = mdl.N_CLASSES
) -> tuple[list[float | None], list[list[tuple[float, float, float | None]] | None]]:
    """Per-class one-vs-rest AUC and ROC points.

    A class with no positives or no negatives has no defined curve and is
    reported as None (absent), never 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != true.shape[0] or scores.shape[1] != n_classes:
        raise ShapeError(f"roc_auc_ovr: scores {scores.shape} vs labels {true.shape}")
    if scores.size and np.abs(scores.sum(axis=1) - 1.0).max() > 1e-6:
        raise ShapeError("roc_auc_ovr: score rows must sum to 1 within 1e-6")
    aucs: list[float | None] = []
    curves: list[list[tuple[float, float, float | None]] | None] = []
    for c in range(n_classes):
        result = roc_curve_binary(scores[:, c], true == c)
        if result is None:
            aucs.append(None)
            curves.append(None)
        else:
            aucs.append(result[0])
            curves.append(result[1])
    return aucs, curves


def evaluate(
    params: ModelParams,
    pairs: list[tuple[TokenSequence, SentimentLabel]],
    vocab: Vocabulary,
    lex: SentimentLexicon,
) -> EvalReport:
    """Eval-mode predictions -> confusion -> rates -> one-vs-rest ROC-AUC."""
    ids, signs, y_true, skipped = encode_pairs(pairs, vocab, lex, params.config.max_len)
    if ids.shape[0] == 0:
        raise CorpusError("nothing to evaluate: no labeled documents with tokens")
    probs = predict_proba(params, ids, signs)
    pred = mdl.predict_classes(probs)
    report = metrics(confusion(y_true, pred))
    aucs, curves = roc_auc_ovr(probs, y_true)
    report.auc_per_class = aucs
    defined = [a for a in aucs if a is not None]
    report.macro_auc = sum(defined) / len(defined) if defined else None
    report.roc_curves = curves
    if skipped:
        report.notes.append(f"skipped {skipped} documents with no tokens")
    for c, a in enumerate(aucs):
        if a is None:
            report.notes.append(f"class {c}: AUC undefined (no positives or no negatives)")
    return report


# -------------------------------------------------------------- checkpoints


def save_model(
    path: str | Path,
    params: ModelParams,
    vocab: Vocabulary,
    lex: SentimentLexicon,
    run_config: RunConfig | None = None,
) -> None:
    meta = {
        "kind": params.kind,
        "model_config": params.config.to_dict(),
        "vocab": vocab.itos,
        "lexicon": lex.to_rows(),
        "run_config": run_config.to_dict() if run_config is not None else None,
    }
    checkpoint_save(path, params.named_arrays(), meta)


def load_model(path: str | Path) -> tuple[ModelParams, Vocabulary, SentimentLexicon, dict]:
    arrays, meta = checkpoint_load(path)
    kind = meta["kind"]
    cfg_dict = dict(meta["model_config"])
    if kind == "poultrylex":
        params = mdl.init_poultrylex(ModelConfig(**cfg_dict), seed=0)
    elif kind == "cnn":
        cfg_dict["filter_widths"] = tuple(cfg_dict["filter_widths"])
        params = mdl.init_cnn(CnnConfig(**cfg_dict), seed=0)
    else:
        raise ConfigError(f"checkpoint has unknown model kind {kind!r}")
    params.load_snapshot(arrays)
    vocab = Vocabulary(itos=list(meta["vocab"]))
    lex = SentimentLexicon.from_rows(meta["lexicon"])
    return params, vocab, lex, meta
