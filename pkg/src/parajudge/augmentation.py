"""Constrained case rewriting and QA-pair expansion for adapter training.

Every present section of a case is expanded to four variants (the original
plus three rewrites), and QA pairs are formed by pairing the fact variant
with the same-index variant of each other section: an offline case (five
sections) yields 16 pairs, an online case (four sections, no dispute focus)
yields 12.

Rewrites are constrained: every maximal digit run and every statute citation
of the original must survive into the variant (:func:`validate_rewrite`). A
variant that fails validation is retried twice and then replaced by the
original text, so no case is ever dropped.

Two rewriter backends are provided. The built-in paraphraser is fully
deterministic given a seed (synonym-table substitution plus sentence
rotation) so tests and offline runs need no network. The HTTP rewriter
speaks an OpenAI-compatible chat-completions protocol with retries, backoff
and a token-bucket rate limit.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import requests

from .corpus import CaseDocument, DEFAULT_CITATION_PATTERNS, parse_citations
from .errors import EmptyInput, MissingSection, RewriterUnavailable


class SectionKind(Enum):
    FACT = "fact"
    REASON = "reason"
    FOCUS = "focus"
    ARTICLE = "article"
    JUDGMENT = "judgment"


# Expansion order for answers; the fact is always the query side.
ANSWER_KINDS = (SectionKind.REASON, SectionKind.FOCUS, SectionKind.ARTICLE, SectionKind.JUDGMENT)
VARIANTS_PER_SECTION = 4


def _mix_seed(*parts: object) -> int:
    """Derive a 63-bit seed from arbitrary labels, stably across runs."""
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big") & (2**63 - 1)


@dataclass(frozen=True)
class RewriteCheck:
    ok: bool
    missing: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


_DIGIT_RUN_RE = re.compile(r"\d+")


def validate_rewrite(
    original: str,
    variant: str,
    citation_patterns: Sequence[re.Pattern] | None = None,
) -> RewriteCheck:
    """Check that core legal entities survived a rewrite.

    Passes iff every maximal digit run and every canonical statute citation
    extracted from the original also occurs in the variant.
    """
    missing: list[str] = []
    want_runs = []
    seen: set[str] = set()
    for run in _DIGIT_RUN_RE.findall(original):
        if run not in seen:
            seen.add(run)
            want_runs.append(run)
    have_runs = set(_DIGIT_RUN_RE.findall(variant))
    missing.extend(run for run in want_runs if run not in have_runs)
    patterns = DEFAULT_CITATION_PATTERNS if citation_patterns is None else citation_patterns
    have_refs = {ref.canonical for ref in parse_citations(variant, patterns)}
    for ref in parse_citations(original, patterns):
        if ref.canonical not in have_refs:
            missing.append(ref.canonical)
    return RewriteCheck(ok=not missing, missing=tuple(missing))


class Rewriter(Protocol):
    def rewrite(self, text: str, kind: SectionKind, variant_seed: int) -> str: ...


# Substitution keys deliberately avoid the trigger words the evaluation
# extractor matches on (guilty, imprisonment, probation, fine, sentenced,
# claim, upheld, dismissed, revoked) and anything that can appear inside a
# statute citation.
DEFAULT_SYNONYMS: dict[str, tuple[str, ...]] = {
    "defendant": ("accused", "respondent"),
    "court": ("tribunal", "bench"),
    "stole": ("unlawfully took", "misappropriated"),
    "took": ("seized", "removed"),
    "property": ("goods", "belongings"),
    "money": ("funds", "cash"),
    "holds": ("finds", "concludes"),
    "held": ("found", "concluded"),
    "conduct": ("behaviour", "actions"),
    "constitutes": ("amounts to", "meets the elements of"),
    "whether": ("if",),
    "dispute": ("controversy", "disagreement"),
    "evidence": ("proof", "supporting material"),
    "victim": ("injured party", "complainant"),
    "contract": ("agreement",),
    "payment": ("remittance",),
    "damage": ("harm", "loss"),
    "decision": ("ruling", "determination"),
    "provides": ("stipulates", "prescribes"),
    "shall": ("must", "is required to"),
    "pay": ("remit", "hand over"),
}

_ALPHA_WORD_RE = re.compile(r"[A-Za-z]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.;。；])\s+")


def _match_case(replacement: str, template: str) -> str:
    if template.isupper():
        return replacement.upper()
    if template[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


class BuiltinParaphraser:
    """Seeded synonym substitution plus sentence rotation.

    Digit runs are untouchable by construction (only alphabetic words are
    substituted) and statute citation spans are masked out before
    substitution, so validation always passes on well-formed input.
    """

    def __init__(
        self,
        synonyms: Mapping[str, Sequence[str]] | None = None,
        citation_patterns: Sequence[re.Pattern] = DEFAULT_CITATION_PATTERNS,
        swap_probability: float = 0.7,
    ):
        table = DEFAULT_SYNONYMS if synonyms is None else synonyms
        self.synonyms = {k.lower(): tuple(v) for k, v in table.items()}
        self.citation_patterns = tuple(citation_patterns)
        self.swap_probability = swap_probability

    def rewrite(self, text: str, kind: SectionKind, variant_seed: int) -> str:
        rng = random.Random(_mix_seed(variant_seed, kind.value, text))
        sentences = _SENTENCE_SPLIT_RE.split(text)
        if len(sentences) > 1:
            offset = 1 + rng.randrange(len(sentences) - 1)
            sentences = sentences[offset:] + sentences[:offset]
        rewritten = [self._substitute(s, rng) for s in sentences]
        return " ".join(rewritten)

    def _protected_spans(self, sentence: str) -> list[tuple[int, int]]:
        spans = []
        for pat in self.citation_patterns:
            spans.extend(m.span() for m in pat.finditer(sentence))
        return spans

    def _substitute(self, sentence: str, rng) -> str:
        protected = self._protected_spans(sentence)

        def swap(m: re.Match) -> str:
            if any(start <= m.start() < end for start, end in protected):
                return m.group(0)
            options = self.synonyms.get(m.group(0).lower())
            if not options or rng.random() > self.swap_probability:
                return m.group(0)
            return _match_case(options[rng.randrange(len(options))], m.group(0))

        return _ALPHA_WORD_RE.sub(swap, sentence)


def rewrite_section(
    text: str,
    kind: SectionKind,
    rewriter: Rewriter,
    n: int = 3,
    base_seed: int = 0,
    citation_patterns: Sequence[re.Pattern] | None = None,
) -> list[str]:
    """Produce n validated rewrites of a section.

    Each candidate failing entity validation is retried up to 2 times; if all
    attempts fail, the original text stands in for that variant.
    """
    if not text:
        raise EmptyInput("cannot rewrite an empty section")
    variants: list[str] = []
    for i in range(n):
        chosen = text
        for attempt in range(3):
            candidate = rewriter.rewrite(text, kind, _mix_seed(base_seed, kind.value, i, attempt))
            if validate_rewrite(text, candidate, citation_patterns):
                chosen = candidate
                break
        variants.append(chosen)
    return variants


@dataclass
class AugmentedCase:
    """All section variants of one case: index 0 is the original text."""

    doc_id: str
    variants: dict[SectionKind, tuple[str, ...]]

    def __post_init__(self) -> None:
        for kind, texts in self.variants.items():
            if len(texts) != VARIANTS_PER_SECTION:
                raise ValueError(f"section {kind.value} has {len(texts)} variants, expected {VARIANTS_PER_SECTION}")

    @property
    def answer_kinds(self) -> tuple[SectionKind, ...]:
        return tuple(k for k in ANSWER_KINDS if k in self.variants)


@dataclass(frozen=True)
class QAPair:
    query_text: str
    answer_text: str
    doc_id: str
    answer_kind: SectionKind
    variant_index: int

    def __post_init__(self) -> None:
        if self.answer_kind == SectionKind.FACT:
            raise ValueError("the fact section is the query side, never the answer")

    def to_record(self) -> dict:
        return {
            "query_text": self.query_text,
            "answer_text": self.answer_text,
            "doc_id": self.doc_id,
            "answer_kind": self.answer_kind.value,
            "variant_index": self.variant_index,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "QAPair":
        return cls(
            query_text=rec["query_text"],
            answer_text=rec["answer_text"],
            doc_id=rec["doc_id"],
            answer_kind=SectionKind(rec["answer_kind"]),
            variant_index=rec["variant_index"],
        )


def article_section_text(case: CaseDocument) -> str:
    """Render the statute section of a case as rewritable text."""
    refs = sorted(case.articles, key=lambda a: (a.law_name, a.article_number))
    return "; ".join(ref.display() for ref in refs)


def section_texts(case: CaseDocument) -> dict[SectionKind, str]:
    """Collect the non-empty rewritable sections present on a case."""
    out: dict[SectionKind, str] = {}
    if case.fact:
        out[SectionKind.FACT] = case.fact
    if case.reason:
        out[SectionKind.REASON] = case.reason
    if case.focus:
        out[SectionKind.FOCUS] = case.focus
    if case.articles:
        out[SectionKind.ARTICLE] = article_section_text(case)
    if case.judgment:
        out[SectionKind.JUDGMENT] = case.judgment
    return out


def augment_case(
    case: CaseDocument,
    rewriter: Rewriter,
    base_seed: int = 0,
    require_focus: bool | None = None,
) -> AugmentedCase:
    """Expand every present section of a case to 4 variants.

    ``require_focus`` defaults to inferring the case shape: documents curated
    for offline encoding carry a dispute focus and need all five sections;
    knowledge-base documents carry four.
    """
    texts = section_texts(case)
    if require_focus is None:
        require_focus = case.focus is not None
    required = [SectionKind.FACT, SectionKind.REASON, SectionKind.JUDGMENT, SectionKind.ARTICLE]
    if require_focus:
        required.append(SectionKind.FOCUS)
    for kind in required:
        if kind not in texts:
            raise MissingSection(kind.value)
    variants: dict[SectionKind, tuple[str, ...]] = {}
    for kind in SectionKind:
        if kind not in texts:
            continue
        original = texts[kind]
        rewrites = rewrite_section(original, kind, rewriter, n=VARIANTS_PER_SECTION - 1,
                                   base_seed=_mix_seed(base_seed, case.id))
        variants[kind] = (original, *rewrites)
    return AugmentedCase(doc_id=case.id, variants=variants)


def expand_qa(aug: AugmentedCase) -> list[QAPair]:
    """Pair each fact variant with the same-index variant of every answer section.

    Pure function of its input: repeated calls give identical lists in
    identical order (answer kinds in declaration order, then variant index).
    """
    fact_variants = aug.variants.get(SectionKind.FACT)
    if fact_variants is None:
        raise MissingSection("fact")
    pairs: list[QAPair] = []
    for kind in aug.answer_kinds:
        answers = aug.variants[kind]
        for v in range(VARIANTS_PER_SECTION):
            pairs.append(
                QAPair(
                    query_text=fact_variants[v],
                    answer_text=answers[v],
                    doc_id=aug.doc_id,
                    answer_kind=kind,
                    variant_index=v,
                )
            )
    return pairs


def save_pairs(pairs: Iterable[QAPair], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_record(), ensure_ascii=False))
            fh.write("\n")
    return path


def load_pairs(path: str | Path) -> list[QAPair]:
    out: list[QAPair] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QAPair.from_record(json.loads(line)))
    return out


# --- external rewriting service ----------------------------------------------


class TokenBucket:
    """Blocking rate limiter: ``rate`` permits per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._last = clock()
        self._clock = clock
        self._sleep = sleep

    def acquire(self) -> None:
        while True:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
            self._last = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return
            self._sleep((1.0 - self._tokens) / self.rate)


@dataclass
class HttpRewriterConfig:
    base_url: str
    model: str
    temperature: float = 0.7
    api_key_env: str = "REWRITER_API_KEY"
    max_retries: int = 3
    backoff_seconds: float = 1.0
    requests_per_second: float = 2.0
    timeout_seconds: float = 30.0


_SYSTEM_INSTRUCTION = (
    "You rewrite excerpts of legal documents. Respond with the rewritten text "
    "only: no preamble, no quotes, no commentary."
)

_KIND_INSTRUCTIONS: dict[SectionKind, str] = {
    SectionKind.FACT: (
        "Rewrite the case facts below using different legal wording. Keep every "
        "charge, sentence length, monetary amount, date, name, and place exactly "
        "as written."
    ),
    SectionKind.REASON: (
        "Rephrase the sentence structure of the legal reasoning below without "
        "changing its legal logic or any cited article numbers."
    ),
    SectionKind.FOCUS: (
        "Restate the dispute focus below using synonymous legal expressions, "
        "keeping its meaning identical."
    ),
    SectionKind.ARTICLE: (
        "Paraphrase the statutory provisions below with varied wording. Every "
        "law name and article number must appear unchanged."
    ),
    SectionKind.JUDGMENT: (
        "Vary the phrasing of the judgment below while keeping the outcome, all "
        "durations, and all amounts identical."
    ),
}


class ChatCompletionsRewriter:
    """Rewriter backed by an OpenAI-compatible chat-completions endpoint.

    The API key is read from the environment (never from config files). A
    request failing after ``max_retries`` attempts with exponential backoff
    raises RewriterUnavailable.
    """

    def __init__(self, config: HttpRewriterConfig, session: requests.Session | None = None,
                 sleep=time.sleep):
        self.config = config
        self.session = session or requests.Session()
        self._sleep = sleep
        self._bucket = TokenBucket(config.requests_per_second)

    def rewrite(self, text: str, kind: SectionKind, variant_seed: int) -> str:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "seed": variant_seed,
            "messages": [
                {"role": "system", "content": _SYSTEM_INSTRUCTION},
                {"role": "user", "content": f"{_KIND_INSTRUCTIONS[kind]}\n\n{text}"},
            ],
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries):
            self._bucket.acquire()
            try:
                resp = self.session.post(url, json=payload, headers=headers,
                                         timeout=self.config.timeout_seconds)
                if resp.status_code == 200:
                    body = resp.json()
                    return body["choices"][0]["message"]["content"].strip()
                last_error = RewriterUnavailable(f"HTTP {resp.status_code} from rewriting service")
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
            self._sleep(self.config.backoff_seconds * (2**attempt))
        raise RewriterUnavailable(f"rewriting service unreachable: {last_error}")
