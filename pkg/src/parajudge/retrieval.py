"""BM25 retrieval over an in-memory inverted index.

Tokenization needs no external segmenter: runs of CJK codepoints emit
overlapping character bigrams (a lone CJK character emits a unigram), and
everything else is lowercased and split on whitespace/punctuation.

Scores follow the classic formula with k1=1.5, b=0.75 and
IDF(t) = ln((N - df + 0.5) / (df + 0.5) + 1); the +1 keeps IDF positive so
scores are nonnegative. Each query token instance adds its term score, so a
token repeated in the query counts twice.

Index snapshot layout (all integers little-endian):

    magic b"PLIX" | u32 version=1
    | u32 n_docs | per doc: u16 id_len, id bytes (UTF-8), u32 token_count
    | u32 n_terms (sorted) | per term: u16 term_len, term bytes,
        u32 n_postings, then per posting: u32 doc_index, u32 term_frequency

doc_count, avg_doc_length and doc_frequency are recomputed on load.
"""

from __future__ import annotations

import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .corpus import CaseDocument, CorpusStore, StatuteRef
from .errors import EmptyCorpus, EmptyGold, FormatError, RetrievalEmpty, UnknownDoc, VersionMismatch

_SNAPSHOT_MAGIC = b"PLIX"
_SNAPSHOT_VERSION = 1

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# Main CJK unified ideograph blocks; enough for desk-scale legal text.
_CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2A6DF),
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


@dataclass(frozen=True)
class TokenizedText:
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(text: str) -> TokenizedText:
    """Deterministic mixed-script tokenization (CJK bigrams + word tokens)."""
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if _is_cjk(text[i]):
            j = i
            while j < n and _is_cjk(text[j]):
                j += 1
            run = text[i:j]
            if len(run) == 1:
                tokens.append(run)
            else:
                tokens.extend(run[k : k + 2] for k in range(len(run) - 1))
            i = j
        else:
            j = i
            while j < n and not _is_cjk(text[j]):
                j += 1
            tokens.extend(m.group(0) for m in _WORD_RE.finditer(text[i:j].lower()))
            i = j
    return TokenizedText(tuple(tokens))


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    doc_count: int
    avg_doc_length: float
    doc_frequency: dict[str, int]


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: str
    score: float


def build_index(
    store: CorpusStore,
    field_selector: Callable[[CaseDocument], str] | None = None,
) -> InvertedIndex:
    """Index the selected field of every document (default: full raw text)."""
    if len(store) == 0:
        raise EmptyCorpus("cannot index an empty store")
    select = field_selector or (lambda doc: doc.raw_text)
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in store:
        toks = tokenize(select(doc)).tokens
        doc_lengths[doc.id] = len(toks)
        for term, tf in Counter(toks).items():
            postings.setdefault(term, []).append((doc.id, tf))
    for plist in postings.values():
        plist.sort(key=lambda entry: entry[0])
    doc_count = len(doc_lengths)
    avg = sum(doc_lengths.values()) / doc_count
    doc_frequency = {term: len(plist) for term, plist in postings.items()}
    return InvertedIndex(postings, doc_lengths, doc_count, avg, doc_frequency)


def _idf(index: InvertedIndex, term: str) -> float:
    df = index.doc_frequency.get(term, 0)
    return math.log((index.doc_count - df + 0.5) / (df + 0.5) + 1.0)


def _length_norm(index: InvertedIndex, doc_id: str, k1: float, b: float) -> float:
    return k1 * (1.0 - b + b * index.doc_lengths[doc_id] / index.avg_doc_length)


def bm25_score(
    query: TokenizedText,
    doc_id: str,
    index: InvertedIndex,
    k1: float = 1.5,
    b: float = 0.75,
) -> float:
    """Score one document against a tokenized query."""
    if doc_id not in index.doc_lengths:
        raise UnknownDoc(doc_id)
    norm = _length_norm(index, doc_id, k1, b)
    score = 0.0
    for term in query.tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        tf = 0
        for pid, freq in plist:
            if pid == doc_id:
                tf = freq
                break
        if tf == 0:
            continue
        score += _idf(index, term) * tf * (k1 + 1.0) / (tf + norm)
    return score


def retrieve_topk(
    query: str,
    index: InvertedIndex,
    k: int,
    k1: float = 1.5,
    b: float = 0.75,
) -> list[RetrievalResult]:
    """Top-k documents by BM25, ties broken by ascending doc id.

    Accumulates term-at-a-time in query order, which reproduces the per-doc
    summation of :func:`bm25_score` bit for bit.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index.doc_count == 0:
        raise EmptyCorpus("index contains no documents")
    scores: dict[str, float] = {doc_id: 0.0 for doc_id in index.doc_lengths}
    norms: dict[str, float] = {}
    for term in tokenize(query).tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = _idf(index, term)
        for doc_id, tf in plist:
            norm = norms.get(doc_id)
            if norm is None:
                norm = _length_norm(index, doc_id, k1, b)
                norms[doc_id] = norm
            scores[doc_id] += idf * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [RetrievalResult(doc_id, score) for doc_id, score in ranked[:k]]


def extract_statutes_topk(
    results: Sequence[RetrievalResult],
    store: CorpusStore,
    n: int = 5,
) -> frozenset[StatuteRef]:
    """Union of the statute citations of the first min(n, len) results."""
    if not results:
        raise RetrievalEmpty("no retrieval results to extract statutes from")
    out: set[StatuteRef] = set()
    for res in results[: min(n, len(results))]:
        out |= store.get(res.doc_id).articles
    return frozenset(out)


def recall_at_k(
    query_gold_articles: frozenset[StatuteRef] | set[StatuteRef],
    results: Sequence[RetrievalResult],
    store: CorpusStore,
    k: int,
) -> float:
    """Fraction of gold articles covered by the union over the top-k results."""
    if not query_gold_articles:
        raise EmptyGold("gold article set is empty")
    covered: set[StatuteRef] = set()
    for res in results[:k]:
        covered |= store.get(res.doc_id).articles
    return len(set(query_gold_articles) & covered) / len(query_gold_articles)


# --- snapshot persistence ----------------------------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc_ids = list(index.doc_lengths)
    doc_pos = {doc_id: i for i, doc_id in enumerate(doc_ids)}
    buf = bytearray()
    buf += _SNAPSHOT_MAGIC
    buf += struct.pack("<I", _SNAPSHOT_VERSION)
    buf += struct.pack("<I", len(doc_ids))
    for doc_id in doc_ids:
        raw = doc_id.encode("utf-8")
        buf += struct.pack("<H", len(raw)) + raw + struct.pack("<I", index.doc_lengths[doc_id])
    terms = sorted(index.postings)
    buf += struct.pack("<I", len(terms))
    for term in terms:
        raw = term.encode("utf-8")
        plist = index.postings[term]
        buf += struct.pack("<H", len(raw)) + raw + struct.pack("<I", len(plist))
        for doc_id, tf in plist:
            buf += struct.pack("<II", doc_pos[doc_id], tf)
    path.write_bytes(bytes(buf))
    return path


def load_index(path: str | Path) -> InvertedIndex:
    path = Path(path)
    data = path.read_bytes()
    view = memoryview(data)
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise FormatError("truncated index snapshot", path=str(path))
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    def take_str(length: int) -> str:
        nonlocal pos
        if pos + length > len(data):
            raise FormatError("truncated index snapshot", path=str(path))
        out = bytes(view[pos : pos + length]).decode("utf-8")
        pos += length
        return out

    if bytes(view[:4]) != _SNAPSHOT_MAGIC:
        raise FormatError("bad index snapshot magic", path=str(path))
    pos = 4
    (version,) = take("<I")
    if version != _SNAPSHOT_VERSION:
        raise VersionMismatch(f"unsupported index snapshot version {version}")
    (n_docs,) = take("<I")
    doc_ids: list[str] = []
    doc_lengths: dict[str, int] = {}
    for _ in range(n_docs):
        (id_len,) = take("<H")
        doc_id = take_str(id_len)
        (tok_count,) = take("<I")
        doc_ids.append(doc_id)
        doc_lengths[doc_id] = tok_count
    (n_terms,) = take("<I")
    postings: dict[str, list[tuple[str, int]]] = {}
    for _ in range(n_terms):
        (term_len,) = take("<H")
        term = take_str(term_len)
        (n_post,) = take("<I")
        plist: list[tuple[str, int]] = []
        for _ in range(n_post):
            doc_idx, tf = take("<II")
            if doc_idx >= len(doc_ids):
                raise FormatError("posting references unknown document", path=str(path))
            plist.append((doc_ids[doc_idx], tf))
        postings[term] = plist
    doc_count = len(doc_lengths)
    if doc_count == 0:
        raise EmptyCorpus("snapshot contains no documents")
    avg = sum(doc_lengths.values()) / doc_count
    doc_frequency = {term: len(plist) for term, plist in postings.items()}
    return InvertedIndex(postings, doc_lengths, doc_count, avg, doc_frequency)
