"""Legal case ingestion: segmentation, filtering, and JSONL persistence.

Judgment documents arrive as unstructured plain text. A configurable marker
table (:class:`SegmentationRules`) carves each document into sections (case
facts, dispute focus, reasoning, judgment outcome, statute citations) plus
optional metadata headers. Marker sets differ per jurisdiction, so the rules
are data, not code: they load from a JSON file and ship with defaults for the
synthetic fixture language used by the tests.

Stores persist as JSONL: one JSON object per line, UTF-8, fields exactly as
:class:`CaseDocument`. The store ``kind`` is not part of a document record and
must be supplied on load.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from .errors import EmptyInput, FormatError, MissingSection

DOMAINS = ("criminal", "civil", "administrative")
STORE_KINDS = ("offline", "online", "test")

# Chinese numerals in both positional ("二百六十四") and digit-by-digit
# ("二〇二一") styles.
_CN_DIGITS = {"零": 0, "〇": 0, "一": 1, "二": 2, "三": 3, "四": 4,
              "五": 5, "六": 6, "七": 7, "八": 8, "九": 9}
_CN_UNITS = {"十": 10, "百": 100, "千": 1000}


def localized_int(token: str) -> int:
    """Parse an article number written with Arabic digits or Chinese numerals."""
    token = token.strip()
    if not token:
        raise ValueError("empty numeral")
    if token.isdigit():
        return int(token)
    if all(ch in _CN_DIGITS for ch in token):
        value = 0
        for ch in token:
            value = value * 10 + _CN_DIGITS[ch]
        return value
    value, current = 0, 0
    for ch in token:
        if ch in _CN_DIGITS:
            current = _CN_DIGITS[ch]
        elif ch in _CN_UNITS:
            value += (current or 1) * _CN_UNITS[ch]
            current = 0
        else:
            raise ValueError(f"cannot parse numeral {token!r}")
    return value + current


@dataclass(frozen=True)
class StatuteRef:
    """A citation of one article of one law.

    Equality and hashing use only (law_name, article_number); the raw
    citation text is carried along for display and augmentation.
    """

    law_name: str
    article_number: int
    raw_citation: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.article_number < 1:
            raise ValueError(f"article_number must be >= 1, got {self.article_number}")

    @property
    def canonical(self) -> str:
        return f"{self.law_name}#{self.article_number}"

    def display(self) -> str:
        return self.raw_citation or f"{self.law_name} Article {self.article_number}"


# Citation syntaxes recognized by default: "Penal Code Article 264" and
# "《刑法》第二百六十四条" (positional or digit-style numerals). The English
# law name is the leftmost run of TitleCase words ending in Law/Code/Act, so
# an adjacent TitleCase word joins the name; corpora must write citations
# after lowercase context or punctuation for exact extraction.
DEFAULT_CITATION_PATTERNS: tuple[re.Pattern, ...] = (
    re.compile(r"(?P<law>(?:[A-Z][a-z]+ )*(?:Law|Code|Act))\s+Article\s+(?P<num>[0-9]+)"),
    re.compile(r"《(?P<law>[^》]+)》\s*第(?P<num>[0-9零〇一二三四五六七八九十百千]+)条"),
)


def parse_citations(text: str, patterns: Sequence[re.Pattern] | None = None) -> list[StatuteRef]:
    """Extract statute citations from free text, in order of appearance."""
    patterns = DEFAULT_CITATION_PATTERNS if patterns is None else tuple(patterns)
    hits: list[tuple[int, StatuteRef]] = []
    for pat in patterns:
        for m in pat.finditer(text):
            ref = StatuteRef(
                law_name=m.group("law").strip(),
                article_number=localized_int(m.group("num")),
                raw_citation=m.group(0).strip(),
            )
            hits.append((m.start(), ref))
    hits.sort(key=lambda pair: pair[0])
    seen: set[str] = set()
    out: list[StatuteRef] = []
    for _, ref in hits:
        if ref.canonical not in seen:
            seen.add(ref.canonical)
            out.append(ref)
    return out


@dataclass
class CaseDocument:
    """One segmented legal case.

    ``char_count`` always equals ``len(fact)`` (Unicode scalar values); pass
    the sentinel -1 to have it derived. ``focus`` is optional: documents for
    the retrieval knowledge base may omit it.
    """

    id: str
    domain: str
    cause_of_action: str
    fact: str
    focus: str | None
    reason: str
    judgment: str
    articles: frozenset[StatuteRef]
    raw_text: str
    published_date: date
    char_count: int = -1

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.char_count < 0:
            self.char_count = len(self.fact)
        if not isinstance(self.articles, frozenset):
            self.articles = frozenset(self.articles)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "cause_of_action": self.cause_of_action,
            "fact": self.fact,
            "focus": self.focus,
            "reason": self.reason,
            "judgment": self.judgment,
            "articles": [
                {"law_name": a.law_name, "article_number": a.article_number, "raw_citation": a.raw_citation}
                for a in sorted(self.articles, key=lambda a: (a.law_name, a.article_number))
            ],
            "raw_text": self.raw_text,
            "published_date": self.published_date.isoformat(),
            "char_count": self.char_count,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CaseDocument":
        return cls(
            id=rec["id"],
            domain=rec["domain"],
            cause_of_action=rec["cause_of_action"],
            fact=rec["fact"],
            focus=rec["focus"],
            reason=rec["reason"],
            judgment=rec["judgment"],
            articles=frozenset(
                StatuteRef(a["law_name"], a["article_number"], a.get("raw_citation", ""))
                for a in rec["articles"]
            ),
            raw_text=rec["raw_text"],
            published_date=date.fromisoformat(rec["published_date"]),
            char_count=rec["char_count"],
        )


@dataclass
class CorpusStore:
    """An ordered, immutable-by-convention collection of cases."""

    documents: list[CaseDocument]
    kind: str = "online"

    def __post_init__(self) -> None:
        if self.kind not in STORE_KINDS:
            raise ValueError(f"unknown store kind {self.kind!r}")
        ids = [d.id for d in self.documents]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate document ids: {dupes}")
        self._by_id = {d.id: d for d in self.documents}

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[CaseDocument]:
        return iter(self.documents)

    def get(self, doc_id: str) -> CaseDocument:
        try:
            return self._by_id[doc_id]
        except KeyError:
            from .errors import UnknownDoc

            raise UnknownDoc(doc_id) from None

    def ids(self) -> list[str]:
        return [d.id for d in self.documents]


# --- segmentation -----------------------------------------------------------

SECTION_NAMES = ("fact", "focus", "reason", "judgment", "articles")
METADATA_NAMES = ("id", "domain", "cause_of_action", "published_date")


@dataclass
class SegmentationRules:
    """Marker-phrase table driving judgment segmentation.

    ``sections`` and ``metadata`` map a field name to the list of trigger
    strings that may open it; the first trigger found in the text wins. The
    span of a section runs from the end of its marker to the start of the
    next marker (any field), or end of text.
    """

    sections: dict[str, list[str]]
    metadata: dict[str, list[str]]
    citation_patterns: tuple[re.Pattern, ...] = DEFAULT_CITATION_PATTERNS

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SegmentationRules":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        patterns = tuple(re.compile(p) for p in raw.get("citation_patterns", [])) or DEFAULT_CITATION_PATTERNS
        return cls(
            sections={k: list(v) for k, v in raw["sections"].items()},
            metadata={k: list(v) for k, v in raw.get("metadata", {}).items()},
            citation_patterns=patterns,
        )


DEFAULT_RULES = SegmentationRules(
    sections={
        "fact": ["FACTS:"],
        "focus": ["FOCUS:"],
        "reason": ["REASONING:"],
        "judgment": ["JUDGMENT:"],
        "articles": ["ARTICLES:"],
    },
    metadata={
        "id": ["CASE-ID:"],
        "domain": ["DOMAIN:"],
        "cause_of_action": ["CAUSE:"],
        "published_date": ["DATE:"],
    },
)


def _find_markers(raw_text: str, rules: SegmentationRules) -> list[tuple[int, int, str]]:
    """Locate the first occurrence of each field marker: (start, end, field)."""
    found: list[tuple[int, int, str]] = []
    for name, triggers in list(rules.sections.items()) + list(rules.metadata.items()):
        best: tuple[int, int] | None = None
        for trig in triggers:
            pos = raw_text.find(trig)
            if pos >= 0 and (best is None or pos < best[0]):
                best = (pos, pos + len(trig))
        if best is not None:
            found.append((best[0], best[1], name))
    found.sort()
    return found


def segment_text(raw_text: str, rules: SegmentationRules = DEFAULT_RULES) -> dict[str, str]:
    """Split text into the spans between configured markers (stripped)."""
    markers = _find_markers(raw_text, rules)
    spans: dict[str, str] = {}
    for i, (_, end, name) in enumerate(markers):
        stop = markers[i + 1][0] if i + 1 < len(markers) else len(raw_text)
        spans[name] = raw_text[end:stop].strip()
    return spans


def parse_judgment(raw_text: str, rules: SegmentationRules = DEFAULT_RULES) -> CaseDocument:
    """Parse one raw judgment into a structured case.

    Raises EmptyInput on empty text and MissingSection when the fact,
    reasoning, or judgment span cannot be found (focus and articles are
    optional). Metadata headers default when absent: the id is derived from a
    content digest, the domain falls back to ``criminal``.
    """
    if not raw_text or not raw_text.strip():
        raise EmptyInput("raw judgment text is empty")
    spans = segment_text(raw_text, rules)
    for required in ("fact", "reason", "judgment"):
        if not spans.get(required):
            raise MissingSection(required)
    focus = spans.get("focus") or None
    articles = frozenset(parse_citations(spans.get("articles", ""), rules.citation_patterns))
    doc_id = spans.get("id") or "case-" + hashlib.blake2b(raw_text.encode("utf-8"), digest_size=6).hexdigest()
    domain = spans.get("domain") or "criminal"
    cause = spans.get("cause_of_action") or "unspecified"
    published = date.fromisoformat(spans["published_date"]) if spans.get("published_date") else date(2020, 1, 1)
    return CaseDocument(
        id=doc_id,
        domain=domain,
        cause_of_action=cause,
        fact=spans["fact"],
        focus=focus,
        reason=spans["reason"],
        judgment=spans["judgment"],
        articles=articles,
        raw_text=raw_text,
        published_date=published,
    )


def parse_raw_file(
    path: str | Path,
    rules: SegmentationRules = DEFAULT_RULES,
    delimiter: str = "=====",
) -> list[CaseDocument]:
    """Parse a multi-document raw file; documents are separated by delimiter lines."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    docs: list[CaseDocument] = []
    chunk_lines: list[str] = []
    chunk_start = 1
    lines = text.split("\n")

    def flush(start_line: int) -> None:
        chunk = "\n".join(chunk_lines).strip()
        if not chunk:
            return
        try:
            docs.append(parse_judgment(chunk, rules))
        except (EmptyInput, MissingSection, ValueError) as exc:
            raise FormatError(str(exc), path=str(path), line=start_line) from exc

    for lineno, line in enumerate(lines, start=1):
        if line.strip().startswith(delimiter):
            flush(chunk_start)
            chunk_lines = []
            chunk_start = lineno + 1
        else:
            chunk_lines.append(line)
    flush(chunk_start)
    return docs


# --- filtering --------------------------------------------------------------


def filter_corpus(store: CorpusStore, min_chars: int = 150, max_per_cause: int = 10) -> CorpusStore:
    """Apply the knowledge-base quality rules.

    Documents whose fact has fewer than ``min_chars`` characters are dropped,
    and at most ``max_per_cause`` documents are kept per cause of action
    (earliest in input order win). Output order is stable; the operation is
    idempotent.
    """
    kept: list[CaseDocument] = []
    per_cause: dict[str, int] = {}
    for doc in store.documents:
        if doc.char_count < min_chars:
            continue
        n = per_cause.get(doc.cause_of_action, 0)
        if n >= max_per_cause:
            continue
        per_cause[doc.cause_of_action] = n + 1
        kept.append(doc)
    return CorpusStore(documents=kept, kind=store.kind)


DEFAULT_CLAIM_PATTERNS: tuple[re.Pattern, ...] = (
    re.compile(r"The prosecution (?:recommends|requests|seeks)[^.]*\.\s*"),
    re.compile(r"公诉机关(?:建议|请求|指控)[^。]*。"),
)


def strip_prosecution_claims(fact: str, patterns: Sequence[re.Pattern] | None = None) -> str:
    """Delete every span matching a configured prosecution-claim pattern."""
    patterns = DEFAULT_CLAIM_PATTERNS if patterns is None else tuple(patterns)
    out = fact
    for pat in patterns:
        out = pat.sub("", out)
    return out


def load_claim_patterns(path: str | Path) -> tuple[re.Pattern, ...]:
    """Load a prosecution-claim pattern table (JSON list of regex strings)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return tuple(re.compile(p) for p in raw)


# --- persistence ------------------------------------------------------------


def save_store(store: CorpusStore, path: str | Path) -> Path:
    """Write the store as JSONL (one document per line, UTF-8)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc in store.documents:
            fh.write(json.dumps(doc.to_record(), ensure_ascii=False))
            fh.write("\n")
    return path

def load_store(path: str | Path, kind: str) -> CorpusStore:
    """Read a JSONL store. The kind is not persisted and must be given.

    Raises FormatError (with the line number) on any malformed line.
    """
    path = Path(path)
    docs: list[CaseDocument] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                docs.append(CaseDocument.from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise FormatError(f"bad document record: {exc}", path=str(path), line=lineno) from exc
    return CorpusStore(documents=docs, kind=kind)


def field_selector(*names: str) -> Callable[[CaseDocument], str]:
    """Build a selector returning the concatenation of the named sections."""
    valid = {"fact", "focus", "reason", "judgment", "raw_text"}
    unknown = set(names) - valid
    if unknown:
        raise ValueError(f"unknown fields: {sorted(unknown)}")

    def select(doc: CaseDocument) -> str:
        parts: list[str] = []
        for name in names:
            value = getattr(doc, name)
            if value:
                parts.append(value)
        return "\n".join(parts)

    return select
