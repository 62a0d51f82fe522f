"""Sentence-extraction policy: word convolutions, Bi-GRU context, MLP head.

Word features come from linear convolution kernels over the embedded
sentence (no activation on this stage), sentence vectors are means over the
true token count, a bidirectional GRU supplies per-sentence context, and a
sigmoid MLP over [context; selection history; document vector] yields the
per-sentence extraction probability. Supervised pretraining teacher-forces
the selection history with the oracle labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import numeric as nm
from ._util import map_ordered
from .corpus import Document, ExtractionLabels
from .numeric import ParamStore, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractorConfig:
    vocab_size: int
    embed_dim: int = 128
    word_kernels: tuple[int, ...] = (3, 5, 7)
    word_filters: tuple[int, ...] = (128, 256, 256)
    gru_hidden: int = 256
    doc_dim: int = 512
    mlp_hidden: tuple[int, int] = (512, 256)
    max_tokens: int = 50
    max_sentences: int = 80
    lr: float = 0.1
    batch_size: int = 64
    epochs: int = 5

    def __post_init__(self):
        if len(self.word_kernels) != len(self.word_filters):
            raise ValueError(
                f"word_kernels {self.word_kernels} and word_filters {self.word_filters} differ in length"
            )

    @property
    def word_dim(self) -> int:
        return sum(self.word_filters)

    @property
    def context_dim(self) -> int:
        return 2 * self.gru_hidden

    @property
    def select_dim(self) -> int:
        # selection-history vector lives in the same space as the context
        return self.context_dim


_GRU_GATES = ("z", "r", "h")


def init_extractor_params(config: ExtractorConfig, rng: np.random.Generator) -> ParamStore:
    """Fresh parameters: uniform [-0.08, 0.08] weights, zero biases."""
    params = ParamStore()
    params.init_uniform("embed", (config.vocab_size, config.embed_dim), rng)
    for k, f in zip(config.word_kernels, config.word_filters):
        params.init_uniform(f"conv{k}_w", (k * config.embed_dim, f), rng)
        params.init_zeros(f"conv{k}_b", (f,))
    for direction in ("fwd", "bwd"):
        for gate in _GRU_GATES:
            params.init_uniform(f"gru_{direction}_{gate}_w", (config.word_dim, config.gru_hidden), rng)
            params.init_uniform(f"gru_{direction}_{gate}_v", (config.gru_hidden, config.gru_hidden), rng)
            params.init_zeros(f"gru_{direction}_{gate}_b", (config.gru_hidden,))
    params.init_uniform("doc_w", (config.context_dim, config.doc_dim), rng)
    params.init_zeros("doc_b", (config.doc_dim,))
    params.init_uniform("select_w", (config.context_dim, config.select_dim), rng)
    mlp_in = config.context_dim + config.select_dim + config.doc_dim
    m1, m2 = config.mlp_hidden
    params.init_uniform("mlp_w1", (mlp_in, m1), rng)
    params.init_zeros("mlp_b1", (m1,))
    params.init_uniform("mlp_w2", (m1, m2), rng)
    params.init_zeros("mlp_b2", (m2,))
    params.init_uniform("mlp_w3", (m2, 1), rng)
    params.init_zeros("mlp_b3", (1,))
    return params


@lru_cache(maxsize=None)
def _window_indices(rows: int, kernel: int, width: int) -> np.ndarray:
    """Flat indices of kernel-length row windows in a [rows+kernel-1, width] matrix."""
    starts = np.arange(rows)[:, None] + np.arange(kernel)[None, :]
    idx = starts[:, :, None] * width + np.arange(width)[None, None, :]
    return idx.reshape(rows, kernel * width)


def word_features(sentence, params: ParamStore, config: ExtractorConfig) -> tuple[Tensor, Tensor]:
    """Per-word convolution features [m, word_dim] and their mean vector.

    Windows beyond the encoded length are zero-padded so every one of the
    m real positions owns a window; the mean runs over m, not max_tokens.
    """
    if sentence.length == 0:
        raise ValueError("cannot featurize an empty sentence")
    if sentence.ids is None:
        raise ValueError("sentence has no ids; encode the corpus with a vocabulary first")
    m = min(sentence.length, config.max_tokens)
    embedded = nm.gather_rows(params["embed"], sentence.ids)
    per_kernel = []
    for k in config.word_kernels:
        padded = nm.concat([embedded, Tensor(np.zeros((k - 1, config.embed_dim)))], axis=0)
        windows = nm.gather_flat(padded, _window_indices(m, k, config.embed_dim))
        per_kernel.append(nm.linear(windows, params[f"conv{k}_w"], params[f"conv{k}_b"]))
    features = nm.concat(per_kernel, axis=1)
    return features, features.mean(axis=0)


def gru_cell(x: Tensor, h_prev: Tensor, params: ParamStore, direction: str) -> Tensor:
    """One gated-recurrent step; h stays in (-1, 1) when h_prev does."""
    p = lambda gate, kind: params[f"gru_{direction}_{gate}_{kind}"]
    z = nm.sigmoid(nm.linear(x, p("z", "w"), p("z", "b")) + h_prev @ p("z", "v"))
    r = nm.sigmoid(nm.linear(x, p("r", "w"), p("r", "b")) + h_prev @ p("r", "v"))
    h_hat = nm.tanh(nm.linear(x, p("h", "w"), p("h", "b")) + (r * h_prev) @ p("h", "v"))
    return (1.0 - z) * h_hat + z * h_prev


@dataclass
class DocumentEncoding:
    """Bi-GRU context vectors per sentence plus the pooled document vector."""

    contexts: list[Tensor]
    doc: Tensor


def encode_document(doc: Document, params: ParamStore, config: ExtractorConfig) -> DocumentEncoding:
    """Run both GRU directions from zero states and pool into the doc vector."""
    if doc.n_sentences == 0:
        raise ValueError(f"document {doc.id!r} has no sentences")
    sent_vecs = [word_features(s, params, config)[1] for s in doc.sentences]
    n = len(sent_vecs)
    zero = Tensor(np.zeros(config.gru_hidden))

    forward: list[Tensor] = []
    h = zero
    for vec in sent_vecs:
        h = gru_cell(vec, h, params, "fwd")
        forward.append(h)
    backward: list[Tensor] = [None] * n
    h = zero
    for t in range(n - 1, -1, -1):
        h = gru_cell(sent_vecs[t], h, params, "bwd")
        backward[t] = h

    contexts = [nm.concat([forward[t], backward[t]]) for t in range(n)]
    total = contexts[0]
    for ctx in contexts[1:]:
        total = total + ctx
    doc_vec = nm.tanh(nm.linear(total / n, params["doc_w"], params["doc_b"]))
    return DocumentEncoding(contexts=contexts, doc=doc_vec)


def extraction_logit(h_t: Tensor, g_prev: Tensor, d: Tensor, params: ParamStore) -> Tensor:
    """Pre-sigmoid extraction score; feed to log_sigmoid for stable losses."""
    x = nm.concat([h_t, g_prev, d])
    a1 = nm.tanh(nm.linear(x, params["mlp_w1"], params["mlp_b1"]))
    a2 = nm.tanh(nm.linear(a1, params["mlp_w2"], params["mlp_b2"]))
    return nm.linear(a2, params["mlp_w3"], params["mlp_b3"])


def extraction_probability(h_t: Tensor, g_prev: Tensor, d: Tensor, params: ParamStore) -> Tensor:
    """Probability of extracting the current sentence, strictly inside (0, 1)."""
    return nm.sigmoid(extraction_logit(h_t, g_prev, d, params))


def initial_selection(config: ExtractorConfig) -> Tensor:
    return Tensor(np.zeros(config.select_dim))


def selection_update(g_prev: Tensor, h_t: Tensor, y_t: int, params: ParamStore) -> Tensor:
    """g_t = g_{t-1} + y_t * tanh(W_g h_t); unchanged object when y_t = 0."""
    if y_t == 0:
        return g_prev
    return g_prev + nm.tanh(h_t @ params["select_w"])


def pretrain_loss(
    doc: Document,
    labels: ExtractionLabels,
    params: ParamStore,
    config: ExtractorConfig,
    encoding: DocumentEncoding | None = None,
) -> Tensor:
    """Teacher-forced negative log-likelihood of the oracle labels."""
    if len(labels.labels) != doc.n_sentences:
        raise ValueError(
            f"document {doc.id!r}: {len(labels.labels)} labels for {doc.n_sentences} sentences"
        )
    enc = encoding or encode_document(doc, params, config)
    g = initial_selection(config)
    loss = None
    for t, y in enumerate(labels.labels):
        z = extraction_logit(enc.contexts[t], g, enc.doc, params)
        step = -nm.log_sigmoid(z) if y == 1 else -nm.log_sigmoid(-z)
        loss = step if loss is None else loss + step
        g = selection_update(g, enc.contexts[t], y, params)
    return loss


def teacher_forced_probabilities(
    doc: Document, labels: ExtractionLabels, params: ParamStore, config: ExtractorConfig
) -> list[float]:
    """p_t conditioned on the ground-truth selection history, as plain floats."""
    enc = encode_document(doc, params, config)
    g = initial_selection(config)
    probs = []
    for t, y in enumerate(labels.labels):
        probs.append(extraction_probability(enc.contexts[t], g, enc.doc, params).item())
        g = selection_update(g, enc.contexts[t], y, params)
    return probs


def pretrain(
    labeled_docs: list[tuple[Document, ExtractionLabels]],
    config: ExtractorConfig,
    rng: np.random.Generator,
    params: ParamStore | None = None,
    epoch_losses: list[float] | None = None,
    workers: int = 1,
) -> ParamStore:
    """Minimize the mean teacher-forced NLL with plain SGD.

    Batch gradients are means over per-document gradients; document order is
    reshuffled every epoch from the supplied generator.
    """
    if not labeled_docs:
        raise ValueError("pretraining needs a non-empty labeled corpus")
    if params is None:
        params = init_extractor_params(config, rng)
    for epoch in range(config.epochs):
        order = rng.permutation(len(labeled_docs))
        epoch_total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [labeled_docs[i] for i in order[start : start + config.batch_size]]
            losses = map_ordered(
                lambda pair: pretrain_loss(pair[0], pair[1], params, config), batch, workers
            )
            batch_loss = losses[0]
            for term in losses[1:]:
                batch_loss = batch_loss + term
            batch_loss = batch_loss / len(losses)
            grads = nm.gradients(batch_loss, params)
            nm.sgd_step(params, grads, config.lr)
            epoch_total += batch_loss.item() * len(losses)
            seen += len(losses)
        if epoch_losses is not None:
            epoch_losses.append(epoch_total / seen)
        log.info("pretrain epoch %d: mean loss %.6f", epoch + 1, epoch_total / seen)
    return params
