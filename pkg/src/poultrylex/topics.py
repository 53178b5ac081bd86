"""Topic modeling by collapsed Gibbs sampling over a bag-of-words corpus.

Each token position carries a latent topic assignment; one sweep resamples
every position from its collapsed conditional

    p(z = k | rest)  propto  (n_dk + alpha) * (n_kw + beta) / (n_k + V*beta)

with the current token's own count excluded.  Documents are scanned in a
canonical content order with per-document random streams, so permuting the
input corpus permutes the per-document mixture rows and changes nothing
else.

Point estimates are prior-smoothed:
    topic-word   phi[k, w]  = (n_kw + beta)  / (n_k  + V*beta)
    doc-topic    theta[d, k] = (n_dk + alpha) / (N_d + K*alpha)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln

from .errors import CorpusError
from .preprocess import TokenSequence, Vocabulary

_RESERVED = 2  # UNK and PAD occupy vocabulary slots 0 and 1


@njit(cache=False)
def _sweep_kernel(doc_of, word_of, z, n_dk, n_kw, n_k, alpha, beta, uniforms, cum):
    v = n_kw.shape[1]
    k_total = n_k.shape[0]
    vbeta = v * beta
    for t in range(doc_of.shape[0]):
        d = doc_of[t]
        w = word_of[t]
        old = z[t]
        n_dk[d, old] -= 1
        n_kw[old, w] -= 1
        n_k[old] -= 1
        acc = 0.0
        for k in range(k_total):
            acc += (n_dk[d, k] + alpha) * (n_kw[k, w] + beta) / (n_k[k] + vbeta)
            cum[k] = acc
        u = uniforms[t] * acc
        new = 0
        while new < k_total - 1 and cum[new] <= u:
            new += 1
        z[t] = new
        n_dk[d, new] += 1
        n_kw[new, w] += 1
        n_k[new] += 1


@dataclass
class TopicModelState:
    k: int
    alpha: float
    beta: float
    seed: int
    vocab: Vocabulary
    doc_order: list[int]        # canonical rank -> presentation index
    offsets: np.ndarray         # (M+1,) token span per canonical doc
    doc_of: np.ndarray          # (T,) canonical doc rank per token
    word_of: np.ndarray         # (T,) vocabulary id per token
    z: np.ndarray               # (T,) topic assignment per token
    n_dk: np.ndarray            # (M, K)
    n_kw: np.ndarray            # (K, V)
    n_k: np.ndarray             # (K,)
    rngs: list[np.random.Generator]
    sweeps_done: int = 0

    @property
    def num_docs(self) -> int:
        return len(self.doc_order)

    @property
    def num_tokens(self) -> int:
        return self.doc_of.shape[0]

    def doc_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def recount(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rebuild all count matrices from z; the stored ones must match."""
        n_dk = np.zeros_like(self.n_dk)
        n_kw = np.zeros_like(self.n_kw)
        n_k = np.zeros_like(self.n_k)
        np.add.at(n_dk, (self.doc_of, self.z), 1)
        np.add.at(n_kw, (self.z, self.word_of), 1)
        np.add.at(n_k, self.z, 1)
        return n_dk, n_kw, n_k

    def counts_consistent(self) -> bool:
        n_dk, n_kw, n_k = self.recount()
        return (
            np.array_equal(n_dk, self.n_dk)
            and np.array_equal(n_kw, self.n_kw)
            and np.array_equal(n_k, self.n_k)
        )


def _map_documents(
    corpus_tokens: list[TokenSequence], vocab: Vocabulary
) -> list[np.ndarray]:
    docs = []
    for seq in corpus_tokens:
        ids = [vocab.stoi[t] for t in seq.tokens if t in vocab.stoi]
        docs.append(np.asarray(ids, dtype=np.int64))
    return docs


def gibbs_init(
    corpus_tokens: list[TokenSequence],
    vocab: Vocabulary,
    k: int,
    alpha: float,
    beta: float,
    seed: int,
) -> TopicModelState:
    """Assign every token position a uniformly random topic; seed-deterministic."""
    if k < 1:
        raise CorpusError(f"topic count must be >= 1, got {k}")
    if len(vocab) <= _RESERVED:
        raise CorpusError("vocabulary is empty (only reserved entries)")
    if not corpus_tokens:
        raise CorpusError("cannot fit topics on an empty corpus")

    docs = _map_documents(corpus_tokens, vocab)
    total = sum(len(d) for d in docs)
    if total == 0:
        raise CorpusError("corpus has no in-vocabulary tokens")

    # canonical scan order: by token-id content, presentation index breaking ties
    order = sorted(range(len(docs)), key=lambda i: (tuple(docs[i]), i))
    offsets = np.zeros(len(docs) + 1, dtype=np.int64)
    doc_of = np.empty(total, dtype=np.int64)
    word_of = np.empty(total, dtype=np.int64)
    pos = 0
    for rank, pres_idx in enumerate(order):
        ids = docs[pres_idx]
        offsets[rank + 1] = offsets[rank] + len(ids)
        doc_of[pos : pos + len(ids)] = rank
        word_of[pos : pos + len(ids)] = ids
        pos += len(ids)

    # one random stream per document, keyed by canonical rank
    rngs = [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, rank])))
        for rank in range(len(docs))
    ]
    z = np.empty(total, dtype=np.int64)
    for rank in range(len(docs)):
        span = slice(offsets[rank], offsets[rank + 1])
        z[span] = rngs[rank].integers(0, k, offsets[rank + 1] - offsets[rank])

    state = TopicModelState(
        k=k,
        alpha=alpha,
        beta=beta,
        seed=seed,
        vocab=vocab,
        doc_order=order,
        offsets=offsets,
        doc_of=doc_of,
        word_of=word_of,
        z=z,
        n_dk=np.zeros((len(docs), k), dtype=np.int64),
        n_kw=np.zeros((k, len(vocab)), dtype=np.int64),
        n_k=np.zeros(k, dtype=np.int64),
        rngs=rngs,
    )
    state.n_dk, state.n_kw, state.n_k = state.recount()
    return state


def conditional_distribution(state: TopicModelState, t: int) -> np.ndarray:
    """Collapsed conditional over topics for flat position t, current token excluded."""
    d = state.doc_of[t]
    w = state.word_of[t]
    old = state.z[t]
    n_dk = state.n_dk[d].astype(np.float64).copy()
    n_kw = state.n_kw[:, w].astype(np.float64).copy()
    n_k = state.n_k.astype(np.float64).copy()
    n_dk[old] -= 1
    n_kw[old] -= 1
    n_k[old] -= 1
    v = state.n_kw.shape[1]
    weights = (n_dk + state.alpha) * (n_kw + state.beta) / (n_k + v * state.beta)
    return weights / weights.sum()


def gibbs_sweep(state: TopicModelState) -> TopicModelState:
    """One full resampling pass over all token positions (in-place)."""
    uniforms = np.empty(state.num_tokens, dtype=np.float64)
    for rank in range(state.num_docs):
        lo, hi = state.offsets[rank], state.offsets[rank + 1]
        if hi > lo:
            uniforms[lo:hi] = state.rngs[rank].random(hi - lo)
    cum = np.empty(state.k, dtype=np.float64)
    _sweep_kernel(
        state.doc_of,
        state.word_of,
        state.z,
        state.n_dk,
        state.n_kw,
        state.n_k,
        state.alpha,
        state.beta,
        uniforms,
        cum,
    )
    state.sweeps_done += 1
    return state


def log_likelihood(state: TopicModelState) -> float:
    """Collapsed joint log p(words, assignments | priors).

    The exact marginal over assignments is intractable; this is the
    standard tractable surrogate, comparable across sweeps of one fit.
    """
    a, b = state.alpha, state.beta
    k, v = state.k, state.n_kw.shape[1]
    n_d = state.doc_lengths()
    doc_part = (
        state.num_docs * (gammaln(k * a) - k * gammaln(a))
        + gammaln(state.n_dk + a).sum()
        - gammaln(n_d + k * a).sum()
    )
    topic_part = (
        k * (gammaln(v * b) - v * gammaln(b))
        + gammaln(state.n_kw + b).sum()
        - gammaln(state.n_k + v * b).sum()
    )
    return float(doc_part + topic_part)


@dataclass
class TopicReport:
    phi: np.ndarray                  # (K, V), rows sum to 1
    theta: np.ndarray                # (M, K) in presentation order, rows sum to 1
    top_terms: list[list[tuple[str, float]]]

    def to_json_dict(self) -> dict:
        return {
            "topics": [
                {
                    "id": k,
                    "top_terms": [{"term": t, "prob": p} for t, p in terms],
                }
                for k, terms in enumerate(self.top_terms)
            ],
            "doc_topics": [[float(x) for x in row] for row in self.theta],
        }


def estimate(state: TopicModelState, top_k: int = 10) -> TopicReport:
    """Smoothed point estimates plus ranked top terms per topic."""
    a, b = state.alpha, state.beta
    v = state.n_kw.shape[1]
    phi = (state.n_kw + b) / (state.n_k + v * b)[:, None]
    theta_canonical = (state.n_dk + a) / (state.doc_lengths() + state.k * a)[:, None]
    theta = np.empty_like(theta_canonical)
    for rank, pres_idx in enumerate(state.doc_order):
        theta[pres_idx] = theta_canonical[rank]

    terms = state.vocab.itos
    top_terms = []
    for k in range(state.k):
        ranked = sorted(range(v), key=lambda w: (-phi[k, w], terms[w]))[:top_k]
        top_terms.append([(terms[w], float(phi[k, w])) for w in ranked])
    return TopicReport(phi=phi, theta=theta, top_terms=top_terms)


def fit(
    corpus_tokens: list[TokenSequence],
    vocab: Vocabulary,
    k: int,
    alpha: float,
    beta: float,
    seed: int,
    sweeps: int,
    ll_every: int = 0,
) -> tuple[TopicModelState, list[tuple[int, float]]]:
    """Init plus ``sweeps`` full passes; optionally trace log-likelihood."""
    state = gibbs_init(corpus_tokens, vocab, k, alpha, beta, seed)
    history: list[tuple[int, float]] = []
    for s in range(1, sweeps + 1):
        gibbs_sweep(state)
        if ll_every and (s % ll_every == 0 or s == sweeps):
            history.append((s, log_likelihood(state)))
    return state, history
