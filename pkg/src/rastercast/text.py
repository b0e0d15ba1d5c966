"""Short-text preprocessing, n-grams and TFIDF vectors.

The preprocessing chain is fixed: URLs and @-mentions are dropped, camelCase
is split, text is lowercased and split on whitespace, ASCII emoticons are
pulled out as tokens, punctuation is stripped, stop words are dropped and
the remaining words are Porter-stemmed. Emoticons skip the stemmer.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer

from .errors import ContractError, EmptyVocabularyError

_URL = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION = re.compile(r"@\w+")
_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])|(?<=[A-Za-z])(?=[0-9])")

# lowercase forms: emoticons are matched after the lowercasing step
EMOTICONS = (
    ":-)", ":)", ":-(", ":(", ":-d", ":d", ";-)", ";)", ":-p", ":p", ";p",
    ":'(", ":-/", ":/", ":-o", ":o", ":|", ":-*", ":*", ":]", ":[",
    "=)", "=(", "=d", "<3", "</3", "^_^", "^^", "-_-", "o_o",
)
_EMOTICON = re.compile(
    "(" + "|".join(re.escape(e) for e in sorted(EMOTICONS, key=len, reverse=True)) + r")(?![a-z0-9])"
)
_APOSTROPHES = re.compile(r"['’]")
_NON_WORD = re.compile(r"[\W_]+")

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


@lru_cache(maxsize=1)
def stop_words() -> frozenset:
    text = resources.files("rastercast").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


@lru_cache(maxsize=200_000)
def stem(word: str) -> str:
    """Porter stem of a lowercase word (original 1980 rule set)."""
    return _stemmer.stem(word, to_lowercase=False)


def split_camel_case(text: str) -> str:
    """Insert spaces at lower-to-upper and letter-to-digit boundaries.

    Runs of capitals stay together, so ``"NASAData"`` is left alone while
    ``"HurricaneHarvey"`` becomes ``"Hurricane Harvey"``.
    """
    return _CAMEL.sub(" ", text)


def _split_emoticons(token: str) -> list[tuple[str, bool]]:
    """Split a token into ``(piece, is_emoticon)`` parts."""
    parts = _EMOTICON.split(token)
    out = []
    for i, piece in enumerate(parts):
        if piece:
            out.append((piece, i % 2 == 1))
    return out


def preprocess(text: str) -> list[str]:
    text = _MENTION.sub(" ", _URL.sub(" ", text))
    text = split_camel_case(text).lower()
    stops = stop_words()
    tokens = []
    for raw in text.split():
        for piece, is_emoticon in _split_emoticons(raw):
            if is_emoticon:
                tokens.append(piece)
                continue
            # apostrophes join ("don't" -> "dont"); other punctuation separates
            for word in _NON_WORD.split(_APOSTROPHES.sub("", piece)):
                if word and word not in stops:
                    stemmed = stem(word)
                    # a lone "s" stems to nothing
                    if stemmed:
                        tokens.append(stemmed)
    return tokens


def ngrams(tokens: Sequence[str], max_n: int = 2) -> list[str]:
    """Unigrams in order followed by space-joined contiguous bigrams."""
    if max_n not in (1, 2):
        raise ContractError(f"max_n must be 1 or 2, got {max_n}")
    out = list(tokens)
    if max_n == 2:
        out.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return out


def idf_value(n_docs: int, doc_freq) -> np.ndarray:
    """Smoothed inverse document frequency ``ln(1+N) - ln(1+N_v) + 1``."""
    return np.log1p(n_docs) - np.log1p(np.asarray(doc_freq, dtype=np.float64)) + 1.0


@dataclass(frozen=True, eq=False)
class Vocabulary:
    phrases: tuple[str, ...]
    doc_freq: np.ndarray
    idf: np.ndarray
    n_docs: int
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {p: i for i, p in enumerate(self.phrases)})

    def __len__(self):
        return len(self.phrases)


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sparse real vector with strictly increasing indices and no stored zeros."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), dim)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        idx = np.flatnonzero(dense)
        return cls(idx.astype(np.int64), dense[idx], dense.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @cached_property
    def pairs(self) -> list:
        """``(index, value)`` tuples as Python scalars."""
        return list(zip(self.indices.tolist(), self.values.tolist()))

    @property
    def nnz(self) -> int:
        return self.indices.size

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))


def build_vocabulary(docs: Sequence[Sequence[str]], prune_threshold: int = 10) -> Vocabulary:
    """Count document frequencies and keep phrases with ``N_v > prune_threshold``.

    Retained phrases keep the order of their first appearance in ``docs``.
    """
    if len(docs) == 0:
        raise ContractError("cannot build a vocabulary from zero documents")
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    order = {}
    for doc in docs:
        for phrase in doc:
            if phrase not in order and df[phrase] > prune_threshold:
                order[phrase] = None
    if not order:
        raise EmptyVocabularyError(
            f"all {len(df)} phrases have document frequency <= {prune_threshold}"
        )
    phrases = tuple(order)
    doc_freq = np.array([df[p] for p in phrases], dtype=np.int64)
    return Vocabulary(phrases, doc_freq, idf_value(len(docs), doc_freq), len(docs))


def tfidf_vector(doc: Sequence[str], vocab: Vocabulary) -> SparseVector:
    """Raw-count tf times idf over in-vocabulary phrases, scaled to unit L2 norm."""
    counts = Counter(vocab.index[p] for p in doc if p in vocab.index)
    if not counts:
        return SparseVector.zeros(len(vocab))
    idx = np.array(sorted(counts), dtype=np.int64)
    tf = np.array([counts[i] for i in idx], dtype=np.float64)
    values = tf * vocab.idf[idx]
    return SparseVector(idx, values / np.sqrt(np.dot(values, values)), len(vocab))


def parse_query(text: str) -> frozenset:
    """Turn a comma-separated keyword list into preprocessed query phrases."""
    phrases = set()
    for item in text.split(","):
        tokens = preprocess(item)
        if tokens:
            phrases.add(" ".join(tokens))
    return frozenset(phrases)


def query_match(doc: Sequence[str], query: Iterable[str]) -> int:
    """1 if any query phrase occurs in ``doc``, else 0.

    Multi-word phrases must appear as contiguous tokens.
    """
    query = list(query)
    if not query:
        raise ContractError("query must contain at least one phrase")
    doc = list(doc)
    present = set(doc)
    for phrase in query:
        if phrase in present:
            return 1
        parts = phrase.split(" ")
        k = len(parts)
        if k > 1 and any(doc[i:i + k] == parts for i in range(len(doc) - k + 1)):
            return 1
    return 0


def write_vocabulary(vocab: Vocabulary, path) -> None:
    """One ``index<TAB>phrase<TAB>N_v<TAB>idf`` line per phrase after an ``n_docs`` comment."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_docs={vocab.n_docs}\n")
        for i, (p, n, v) in enumerate(zip(vocab.phrases, vocab.doc_freq, vocab.idf)):
            fh.write(f"{i}\t{p}\t{n}\t{v:.9g}\n")


def load_vocabulary(path) -> Vocabulary:
    phrases, dfs, n_docs = [], [], None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# n_docs="):
                n_docs = int(line.split("=", 1)[1])
                continue
            if not line:
                continue
            idx, phrase, n_v, _ = line.split("\t")
            if int(idx) != len(phrases):
                raise ValueError(f"vocabulary index {idx} out of order")
            phrases.append(phrase)
            dfs.append(int(n_v))
    if n_docs is None:
        raise ValueError("vocabulary file lacks the '# n_docs=' header")
    doc_freq = np.array(dfs, dtype=np.int64)
    return Vocabulary(tuple(phrases), doc_freq, idf_value(n_docs, doc_freq), n_docs)
