"""Scoring for the three downstream tasks and report aggregation.

Judgment prediction compares extracted fields (charge, imprisonment,
probation, fine, civil/administrative outcomes). Numeric fields use the
bounded difference score

    d(r, h) = 1 - 1 / (1 + exp(-|r - h| / (|r| + |h| + eps)))

which equals 0.5 exactly when r = h and decreases toward
1 - 1/(1 + e^-1) ~= 0.26894 as the relative gap grows; it is reported as-is,
with an optional, clearly labeled 2x rescale available at report time.

Statute generation is set precision/recall/F1 over canonical article
references. Document generation uses token-multiset overlap (shared
tokenizer with retrieval) plus cosine similarity under a pluggable scorer:
the built-in scorer embeds character n-gram term frequencies; an external
HTTP embedding endpoint can substitute.

Missing-hypothesis policy: when the generation lacks a field a metric needs,
the case scores 0 for that metric rather than being skipped, so averages are
not inflated.
"""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import requests

from .corpus import StatuteRef
from .errors import EmptyGold, EmptyReference, MissingGold, SchemaMismatch, ScorerUnavailable
from .retrieval import tokenize


def numeric_diff_metric(reference: float, hypothesis: float, epsilon: float = 1e-6) -> float:
    """Bounded difference score between a reference and a hypothesis number."""
    if not (math.isfinite(reference) and math.isfinite(hypothesis)):
        raise ValueError("reference and hypothesis must be finite")
    gap = abs(reference - hypothesis)
    denom = abs(reference) + abs(hypothesis) + epsilon
    return 1.0 - 1.0 / (1.0 + math.exp(-gap / denom))


def set_prf(predicted: Iterable, gold: Iterable) -> tuple[float, float, float]:
    """Set precision/recall/F1; empty prediction scores zero, empty gold raises."""
    pred = set(predicted)
    gold = set(gold)
    if not gold:
        raise EmptyGold("gold set is empty")
    inter = len(pred & gold)
    precision = inter / len(pred) if pred else 0.0
    recall = inter / len(gold)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


_NORM_STRIP_RE = re.compile(r"[\s!-/:-@\[-`{-~]+")


def _normalize_label(text: str) -> str:
    text = unicodedata.normalize("NFKC", text)
    return _NORM_STRIP_RE.sub("", text).casefold()


def charge_accuracy(predicted_charge: str | None, gold_charge: str | None) -> int:
    """1 iff the charges match after whitespace/punctuation normalization."""
    if not gold_charge:
        raise MissingGold("gold charge is absent")
    if not predicted_charge:
        return 0
    return int(_normalize_label(predicted_charge) == _normalize_label(gold_charge))


# --- field extraction -----------------------------------------------------------


@dataclass
class JudgmentExtraction:
    """Fields recovered from a judgment text; absent means absent, never zero."""

    charge: str | None = None
    imprisonment_months: float | None = None
    probation_months: float | None = None
    fine_amount: float | None = None
    civil_admin_outcome: frozenset[str] | None = None


# Each entry: field -> list of regexes. Duration patterns expose named groups
# ``num`` and optionally ``unit`` (years are normalized to months); amounts
# expose ``num`` (base currency units); outcome patterns expose ``outcome``.
DEFAULT_EXTRACTION_PATTERNS: dict[str, list[str]] = {
    "charge": [r"guilty of (?P<charge>[A-Za-z][A-Za-z ]*?)(?=[.,;]|$)"],
    "imprisonment": [
        r"imprisonment (?:of|for a term of) (?P<num>\d+) (?P<unit>years?|months?)",
    ],
    "probation": [r"probation of (?P<num>\d+) (?P<unit>years?|months?)"],
    "fine": [r"fine of (?P<num>\d+)"],
    "outcome": [
        r"claim is (?P<outcome>upheld|dismissed)",
        r"administrative decision is (?P<outcome>revoked|sustained)",
        r"respondent shall pay compensation",
    ],
}


def _compile_table(table: Mapping[str, Sequence[str]]) -> dict[str, list[re.Pattern]]:
    return {name: [re.compile(p) for p in pats] for name, pats in table.items()}


def load_extraction_patterns(path: str | Path) -> dict[str, list[str]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _months(match: re.Match) -> float:
    value = float(match.group("num"))
    unit = (match.groupdict().get("unit") or "months").lower()
    return value * 12.0 if unit.startswith("year") else value


def extract_fields(
    generated: str,
    pattern_table: Mapping[str, Sequence[str]] | None = None,
) -> JudgmentExtraction:
    """Pull judgment fields out of text; first match per field wins."""
    table = _compile_table(pattern_table or DEFAULT_EXTRACTION_PATTERNS)
    out = JudgmentExtraction()
    for pat in table.get("charge", []):
        m = pat.search(generated)
        if m:
            out.charge = m.group("charge").strip()
            break
    for pat in table.get("imprisonment", []):
        m = pat.search(generated)
        if m:
            out.imprisonment_months = _months(m)
            break
    for pat in table.get("probation", []):
        m = pat.search(generated)
        if m:
            out.probation_months = _months(m)
            break
    for pat in table.get("fine", []):
        m = pat.search(generated)
        if m:
            out.fine_amount = float(m.group("num"))
            break
    outcomes: set[str] = set()
    for pat in table.get("outcome", []):
        for m in pat.finditer(generated):
            groups = m.groupdict()
            token = groups.get("outcome")
            outcomes.add(token.lower() if token else "compensation")
    if outcomes:
        out.civil_admin_outcome = frozenset(outcomes)
    return out


# --- text overlap ----------------------------------------------------------------


def token_prf(generated: str, reference: str) -> tuple[float, float, float]:
    """Multiset token overlap precision/recall/F1 (shared tokenizer)."""
    ref_tokens = tokenize(reference).tokens
    if not ref_tokens:
        raise EmptyReference("reference text has no tokens")
    gen_tokens = tokenize(generated).tokens
    overlap = sum((Counter(gen_tokens) & Counter(ref_tokens)).values())
    precision = overlap / len(gen_tokens) if gen_tokens else 0.0
    recall = overlap / len(ref_tokens)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


class Scorer(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class CharNgramScorer:
    """Character n-gram term-frequency embedding (order-insensitive vocabulary)."""

    def __init__(self, n: int = 2):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self._vocab: dict[str, int] = {}

    def _grams(self, text: str) -> Counter:
        if len(text) < self.n:
            return Counter([text] if text else [])
        return Counter(text[i : i + self.n] for i in range(len(text) - self.n + 1))

    def embed(self, text: str) -> np.ndarray:
        grams = self._grams(text)
        for g in grams:
            if g not in self._vocab:
                self._vocab[g] = len(self._vocab)
        vec = np.zeros(len(self._vocab), dtype=np.float64)
        for g, count in grams.items():
            vec[self._vocab[g]] = count
        return vec


class HttpEmbeddingScorer:
    """Scorer backed by an HTTP endpoint: POST {"text": ...} -> {"embedding": [...]}."""

    def __init__(self, url: str, timeout_seconds: float = 30.0, session: requests.Session | None = None):
        self.url = url
        self.timeout_seconds = timeout_seconds
        self.session = session or requests.Session()

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = self.session.post(self.url, json={"text": text}, timeout=self.timeout_seconds)
            if resp.status_code != 200:
                raise ScorerUnavailable(f"HTTP {resp.status_code} from embedding service")
            return np.asarray(resp.json()["embedding"], dtype=np.float64)
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise ScorerUnavailable(f"embedding service unreachable: {exc}") from exc


def semantic_similarity(generated: str, reference: str, scorer: Scorer | None = None) -> float:
    """Cosine similarity of scorer embeddings, 0.0 when either side is empty."""
    scorer = scorer or CharNgramScorer()
    a = scorer.embed(generated)
    b = scorer.embed(reference)
    size = max(a.shape[0], b.shape[0])
    if size == 0:
        return 0.0
    a = np.pad(a, (0, size - a.shape[0]))
    b = np.pad(b, (0, size - b.shape[0]))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


# --- reports ----------------------------------------------------------------------


@dataclass
class CaseRecord:
    """All metric values for one case; non-applicable metrics hold None."""

    case_id: str
    mode: str
    seed: int
    metrics: dict[str, float | None]
    warnings: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "mode": self.mode,
            "seed": self.seed,
            "metrics": self.metrics,
            "warnings": self.warnings,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CaseRecord":
        return cls(
            case_id=rec["case_id"],
            mode=rec["mode"],
            seed=rec["seed"],
            metrics=dict(rec["metrics"]),
            warnings=list(rec.get("warnings", [])),
        )


@dataclass
class EvalReport:
    records: list[CaseRecord]
    aggregates: dict[str, float]
    counts: dict[str, int]

    def to_summary(self, rescaled: bool = False) -> dict:
        summary: dict = {
            "n_cases": len(self.records),
            "aggregates": dict(self.aggregates),
            "counts": dict(self.counts),
        }
        if rescaled:
            summary["aggregates_diff_x2"] = {
                name: 2.0 * value
                for name, value in self.aggregates.items()
                if name.endswith("_diff")
            }
        return summary


def aggregate(records: Sequence[CaseRecord]) -> EvalReport:
    """Mean of every metric over the records where it applies.

    All records must share one metric schema (the same key set); ordering of
    the output is deterministic (records by case id, metrics by name).
    """
    records = sorted(records, key=lambda r: r.case_id)
    if records:
        schema = set(records[0].metrics)
        for rec in records[1:]:
            if set(rec.metrics) != schema:
                raise SchemaMismatch(
                    f"record {rec.case_id} metric keys differ from {records[0].case_id}"
                )
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for rec in records:
        for name in sorted(rec.metrics):
            value = rec.metrics[name]
            if value is None:
                continue
            sums[name] = sums.get(name, 0.0) + value
            counts[name] = counts.get(name, 0) + 1
    aggregates = {name: sums[name] / counts[name] for name in sorted(sums)}
    return EvalReport(records=list(records), aggregates=aggregates, counts={k: counts[k] for k in sorted(counts)})


def save_records(records: Iterable[CaseRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), ensure_ascii=False))
            fh.write("\n")
    return path


def load_records(path: str | Path) -> list[CaseRecord]:
    out: list[CaseRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(CaseRecord.from_record(json.loads(line)))
    return out
