"""Corpus loading, tokenization, vocabulary, oracle labels, triplet sampling.

Corpus files are JSON Lines: one record per line with fields `id` (string),
`sentences` (array of sentence strings) and `highlights` (array of strings).
The vocabulary file is one token per line behind a three-line header for the
PAD / UNK / BOUNDARY specials, so line number equals id.
"""

from __future__ import annotations

import json
import string
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .rouge import combined_rouge

PAD_ID = 0
UNK_ID = 1
BOUNDARY_ID = 2
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
BOUNDARY_TOKEN = "<BOUNDARY>"
_SPECIALS = (PAD_TOKEN, UNK_TOKEN, BOUNDARY_TOKEN)

DEFAULT_MAX_TOKENS = 50  # fixed encoded sentence length
DEFAULT_MAX_SENTENCES = 80  # documents truncated to this many sentences


class CorpusFormatError(ValueError):
    """A corpus or vocabulary file violates the expected record layout."""


_PUNCT = set(string.punctuation)


def _is_punct(ch: str) -> bool:
    return ch in _PUNCT or unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into own tokens."""
    out: list[str] = []
    for chunk in text.lower().split():
        buf = ""
        for ch in chunk:
            if _is_punct(ch):
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(ch)
            else:
                buf += ch
        if buf:
            out.append(buf)
    return out


class Vocabulary:
    """Token/id bijection with reserved PAD=0, UNK=1, BOUNDARY=2."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = list(_SPECIALS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(_SPECIALS)}
        for token in tokens:
            if token in self.token_to_id:
                raise ValueError(f"duplicate vocabulary token {token!r}")
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def decode_ids(self, ids: Iterable[int]) -> list[str]:
        """Tokens for the given ids, dropping PAD fill."""
        return [self.id_to_token[i] for i in ids if i != PAD_ID]


def build_vocab(documents: Iterable["Document"], max_size: int) -> Vocabulary:
    """Keep the (max_size - 3) most frequent tokens; ties break lexicographically."""
    if max_size < 4:
        raise ValueError(f"max_size must be >= 4 to fit the specials, got {max_size}")
    counts: Counter[str] = Counter()
    for doc in documents:
        for sent in list(doc.sentences) + list(doc.highlights):
            counts.update(sent.tokens)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(token for token, _ in ranked[: max_size - 3])


def encode_sentence(tokens: list[str], vocab: Vocabulary, max_tokens: int) -> np.ndarray:
    """Fixed-length id vector: truncate past max_tokens, PAD-fill the tail."""
    ids = np.full(max_tokens, PAD_ID, dtype=np.int64)
    for i, token in enumerate(tokens[:max_tokens]):
        ids[i] = vocab.lookup(token)
    return ids


@dataclass
class Sentence:
    """One sentence: raw text, its tokens, and (once encoded) fixed-length ids."""

    text: str
    tokens: list[str]
    ids: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.tokens)

    def encode(self, vocab: Vocabulary, max_tokens: int) -> "Sentence":
        return Sentence(self.text, self.tokens, encode_sentence(self.tokens, vocab, max_tokens))


def make_sentence(text: str, vocab: Vocabulary | None = None,
                  max_tokens: int = DEFAULT_MAX_TOKENS) -> Sentence:
    sent = Sentence(text=text, tokens=tokenize(text))
    return sent.encode(vocab, max_tokens) if vocab is not None else sent


def placeholder_sentence(max_tokens: int = DEFAULT_MAX_TOKENS) -> Sentence:
    """The synthetic start sentence used before anything has been extracted."""
    ids = np.full(max_tokens, PAD_ID, dtype=np.int64)
    ids[0] = BOUNDARY_ID
    return Sentence(text=BOUNDARY_TOKEN, tokens=[BOUNDARY_TOKEN], ids=ids)


@dataclass
class Document:
    """Ordered sentences plus the reference highlights."""

    id: str
    sentences: list[Sentence]
    highlights: list[Sentence] = field(default_factory=list)

    @property
    def n_sentences(self) -> int:
        return len(self.sentences)

    def highlight_tokens(self) -> list[str]:
        out: list[str] = []
        for sent in self.highlights:
            out.extend(sent.tokens)
        return out


def make_document(
    doc_id: str,
    sentences: list[str],
    highlights: list[str] = (),
    vocab: Vocabulary | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    max_sentences: int = DEFAULT_MAX_SENTENCES,
) -> Document:
    """Tokenize, drop empty sentences, truncate, and optionally encode."""
    sents = [make_sentence(s, vocab, max_tokens) for s in sentences]
    sents = [s for s in sents if s.tokens][:max_sentences]
    if not sents:
        raise CorpusFormatError(f"document {doc_id!r} has no non-empty sentences")
    highs = [make_sentence(h, vocab, max_tokens) for h in highlights]
    highs = [h for h in highs if h.tokens]
    return Document(id=doc_id, sentences=sents, highlights=highs)


def load_corpus(
    path,
    vocab: Vocabulary | None = None,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    max_sentences: int = DEFAULT_MAX_SENTENCES,
) -> Iterator[Document]:
    """Yield documents in file order; ids stay unencoded when vocab is None."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusFormatError(f"{path}: line {lineno}: record is not an object")
            for key in ("id", "sentences", "highlights"):
                if key not in record:
                    raise CorpusFormatError(f"{path}: line {lineno}: missing field {key!r}")
            try:
                yield make_document(
                    str(record["id"]),
                    list(record["sentences"]),
                    list(record["highlights"]),
                    vocab=vocab,
                    max_tokens=max_tokens,
                    max_sentences=max_sentences,
                )
            except (TypeError, CorpusFormatError) as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc


def write_corpus(documents: Iterable[Document], path) -> None:
    """Inverse of load_corpus (modulo truncation already applied)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            record = {
                "id": doc.id,
                "sentences": [s.text for s in doc.sentences],
                "highlights": [h.text for h in doc.highlights],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token in vocab.id_to_token:
            fh.write(token + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if tuple(lines[:3]) != _SPECIALS:
        raise CorpusFormatError(
            f"{path}: expected header lines {_SPECIALS}, got {tuple(lines[:3])}"
        )
    return Vocabulary(lines[3:])


@dataclass
class CoherenceTriplet:
    """(anchor, its true successor, an in-document distractor)."""

    anchor: Sentence
    positive: Sentence
    negative: Sentence
    positions: tuple[int, int, int]


# negatives must come from within this window around the true successor
NEGATIVE_WINDOW = 9


def sample_coherence_triplet(doc: Document, rng: np.random.Generator) -> CoherenceTriplet | None:
    """Anchor uniform among sentences with a successor, then a uniform negative.

    The negative is a different sentence of the same document fewer than
    NEGATIVE_WINDOW positions away from the positive. Returns None when the
    document is too short to produce one.
    """
    n = doc.n_sentences
    if n < 3:
        return None
    anchor_pos = int(rng.integers(0, n - 1))
    positive_pos = anchor_pos + 1
    candidates = [
        p for p in range(n)
        if p != positive_pos and abs(p - positive_pos) < NEGATIVE_WINDOW
    ]
    if not candidates:
        return None
    negative_pos = candidates[int(rng.integers(0, len(candidates)))]
    return CoherenceTriplet(
        anchor=doc.sentences[anchor_pos],
        positive=doc.sentences[positive_pos],
        negative=doc.sentences[negative_pos],
        positions=(anchor_pos, positive_pos, negative_pos),
    )


@dataclass
class ExtractionLabels:
    """Per-sentence binary targets for supervised pretraining."""

    labels: list[int]


def generate_oracle_labels(
    doc: Document,
    rouge_fn: Callable[[list[str], list[str]], float] = combined_rouge,
    max_selected: int = 4,
) -> ExtractionLabels:
    """Greedy labels: repeatedly add the sentence that most improves the score.

    Stops when no addition strictly increases the score against the
    highlights, or after max_selected sentences.
    """
    if not doc.highlights:
        raise ValueError(f"document {doc.id!r} has no highlights to label against")
    reference = doc.highlight_tokens()
    selected: set[int] = set()
    best_score = rouge_fn([], reference)
    while len(selected) < max_selected:
        best_gain, best_idx, best_total = 0.0, None, best_score
        for i in range(doc.n_sentences):
            if i in selected:
                continue
            candidate: list[str] = []
            for j in range(doc.n_sentences):
                if j in selected or j == i:
                    candidate.extend(doc.sentences[j].tokens)
            score = rouge_fn(candidate, reference)
            if score - best_score > best_gain:
                best_gain, best_idx, best_total = score - best_score, i, score
        if best_idx is None:
            break
        selected.add(best_idx)
        best_score = best_total
    return ExtractionLabels(labels=[1 if i in selected else 0 for i in range(doc.n_sentences)])
