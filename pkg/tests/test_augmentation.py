from __future__ import annotations

import dataclasses
import json

import pytest

from parajudge.augmentation import (
    AugmentedCase,
    BuiltinParaphraser,
    ChatCompletionsRewriter,
    HttpRewriterConfig,
    QAPair,
    SectionKind,
    TokenBucket,
    augment_case,
    expand_qa,
    load_pairs,
    rewrite_section,
    save_pairs,
    validate_rewrite,
)
from parajudge.errors import EmptyInput, MissingSection, RewriterUnavailable
from parajudge.synth import synth_store


# --- validation ---------------------------------------------------------------


def test_validate_identity_passes():
    text = "sentenced to 36 months under Penal Code Article 264"
    assert validate_rewrite(text, text)


def test_validate_catches_rewritten_number():
    check = validate_rewrite("a term of 36 months", "a term of 3 years")
    assert not check
    assert "36" in check.missing


# hand-labeled pairs: (original, variant, should_pass)
HAND_LABELED = [
    ("fine of 3000 under Penal Code Article 264", "a 3000 fine per Penal Code Article 264", True),
    ("fine of 3000 under Penal Code Article 264", "a fine per Penal Code Article 264", False),
    ("Penal Code Article 264 applies", "Civil Code Article 264 applies", False),
    ("repay 12000 by 2021", "must repay 12000 before 2021 ends", True),
    ("counts 7 and 9 merged", "counts 7 and 9 were consolidated", True),
    ("sentence of 24 months", "sentence of 240 months", False),
]


@pytest.mark.parametrize("original,variant,should_pass", HAND_LABELED)
def test_validate_matches_hand_labels(original, variant, should_pass):
    assert bool(validate_rewrite(original, variant)) == should_pass


# --- builtin paraphraser ---------------------------------------------------------


def test_builtin_rewrite_deterministic(paraphraser):
    text = "The defendant took property worth 3000 in Northgate."
    a = paraphraser.rewrite(text, SectionKind.FACT, 99)
    b = paraphraser.rewrite(text, SectionKind.FACT, 99)
    assert a == b
    c = paraphraser.rewrite(text, SectionKind.FACT, 100)
    # a different seed is allowed to produce different text but never required
    assert isinstance(c, str)


def test_builtin_preserves_digits_and_citations(paraphraser):
    text = "第264条 applies; the fine is 3000. The court holds the charge proven under Penal Code Article 264."
    for seed in range(6):
        variant = paraphraser.rewrite(text, SectionKind.REASON, seed)
        assert "264" in variant
        assert "3000" in variant
        assert validate_rewrite(text, variant)


def test_rewrite_section_counts_and_validates(paraphraser):
    text = "The defendant took property worth 3000. The court holds the conduct constitutes theft."
    variants = rewrite_section(text, SectionKind.FACT, paraphraser, n=3, base_seed=1)
    assert len(variants) == 3
    for v in variants:
        assert validate_rewrite(text, v)


def test_rewrite_section_rejects_empty(paraphraser):
    with pytest.raises(EmptyInput):
        rewrite_section("", SectionKind.FACT, paraphraser)


class AlwaysBadRewriter:
    def rewrite(self, text, kind, variant_seed):
        return "no numbers survive here"


def test_rewrite_section_falls_back_to_original():
    text = "a term of 36 months"
    variants = rewrite_section(text, SectionKind.JUDGMENT, AlwaysBadRewriter(), n=3)
    assert variants == [text, text, text]


class CountingRewriter:
    """Fails validation once, then echoes the original."""

    def __init__(self):
        self.calls = 0

    def rewrite(self, text, kind, variant_seed):
        self.calls += 1
        if self.calls == 1:
            return "dropped everything"
        return text


def test_rewrite_section_retries_then_succeeds():
    rewriter = CountingRewriter()
    variants = rewrite_section("pay 500 now", SectionKind.JUDGMENT, rewriter, n=1)
    assert variants == ["pay 500 now"]
    assert rewriter.calls == 2


# --- case augmentation ------------------------------------------------------------


def test_augment_offline_case_yields_five_sections(offline_store, paraphraser):
    doc = offline_store.documents[0]
    aug = augment_case(doc, paraphraser, base_seed=3)
    assert set(aug.variants) == set(SectionKind)
    assert sum(len(v) for v in aug.variants.values()) == 20
    for kind, variants in aug.variants.items():
        assert variants[0] == (doc.fact if kind == SectionKind.FACT else variants[0])
        assert len(variants) == 4


def test_augment_online_case_yields_four_sections(online_store, paraphraser):
    doc = online_store.documents[0]
    assert doc.focus is None
    aug = augment_case(doc, paraphraser, base_seed=3)
    assert set(aug.variants) == {SectionKind.FACT, SectionKind.REASON, SectionKind.ARTICLE, SectionKind.JUDGMENT}
    assert sum(len(v) for v in aug.variants.values()) == 16


def test_augment_missing_reason_fails(offline_store, paraphraser):
    doc = dataclasses.replace(offline_store.documents[0], reason="")
    with pytest.raises(MissingSection):
        augment_case(doc, paraphraser)


def test_augment_requires_focus_for_offline_shape(online_store, paraphraser):
    doc = online_store.documents[0]
    with pytest.raises(MissingSection):
        augment_case(doc, paraphraser, require_focus=True)


def test_all_variants_pass_validation_oracle(offline_store, paraphraser):
    # 10 sections drawn from two offline cases -> 30 rewrites, all validated
    count = 0
    for doc in offline_store.documents[:2]:
        aug = augment_case(doc, paraphraser, base_seed=11)
        for kind, variants in aug.variants.items():
            original = variants[0]
            for v in variants[1:]:
                assert validate_rewrite(original, v), (doc.id, kind)
                count += 1
    assert count == 30


# --- QA expansion ---------------------------------------------------------------


def test_expand_offline_yields_sixteen(offline_store, paraphraser):
    aug = augment_case(offline_store.documents[0], paraphraser, base_seed=5)
    pairs = expand_qa(aug)
    assert len(pairs) == 16
    assert all(p.answer_kind != SectionKind.FACT for p in pairs)


def test_expand_online_yields_twelve(online_store, paraphraser):
    aug = augment_case(online_store.documents[0], paraphraser, base_seed=5)
    pairs = expand_qa(aug)
    assert len(pairs) == 12


def test_expand_variant_index_alignment(offline_store, paraphraser):
    aug = augment_case(offline_store.documents[1], paraphraser, base_seed=6)
    pairs = expand_qa(aug)
    from collections import Counter

    index_counts = Counter(p.variant_index for p in pairs)
    assert index_counts == {0: 4, 1: 4, 2: 4, 3: 4}
    for p in pairs:
        assert p.query_text == aug.variants[SectionKind.FACT][p.variant_index]
        assert p.answer_text == aug.variants[p.answer_kind][p.variant_index]


def test_expand_is_pure(offline_store, paraphraser):
    aug = augment_case(offline_store.documents[2], paraphraser, base_seed=7)
    assert expand_qa(aug) == expand_qa(aug)


def test_qa_pair_rejects_fact_answer():
    with pytest.raises(ValueError):
        QAPair(query_text="q", answer_text="a", doc_id="d", answer_kind=SectionKind.FACT, variant_index=0)


def test_pairs_round_trip(tmp_path, offline_store, paraphraser):
    aug = augment_case(offline_store.documents[0], paraphraser, base_seed=8)
    pairs = expand_qa(aug)
    path = tmp_path / "pairs.jsonl"
    save_pairs(pairs, path)
    assert load_pairs(path) == pairs


def test_augmented_case_enforces_variant_count():
    with pytest.raises(ValueError):
        AugmentedCase(doc_id="d", variants={SectionKind.FACT: ("just one",)})


# --- HTTP rewriter -----------------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code: int, body: dict | None = None):
        self.status_code = status_code
        self._body = body or {}

    def json(self):
        return self._body


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _http_rewriter(outcomes) -> tuple[ChatCompletionsRewriter, FakeSession]:
    session = FakeSession(outcomes)
    config = HttpRewriterConfig(base_url="http://svc.example/v1", model="re-writer",
                                backoff_seconds=0.0, requests_per_second=1e9)
    rewriter = ChatCompletionsRewriter(config, session=session, sleep=lambda _: None)
    return rewriter, session


def test_http_rewriter_success():
    body = {"choices": [{"message": {"content": "  rewritten text 42  "}}]}
    rewriter, session = _http_rewriter([FakeResponse(200, body)])
    out = rewriter.rewrite("original 42", SectionKind.FACT, variant_seed=5)
    assert out == "rewritten text 42"
    req = session.requests[0]
    assert req["url"] == "http://svc.example/v1/chat/completions"
    assert req["json"]["model"] == "re-writer"
    assert req["json"]["seed"] == 5
    assert "original 42" in req["json"]["messages"][1]["content"]


def test_http_rewriter_retries_then_succeeds():
    import requests as rq

    body = {"choices": [{"message": {"content": "ok 7"}}]}
    rewriter, session = _http_rewriter([rq.ConnectionError("down"), FakeResponse(500), FakeResponse(200, body)])
    assert rewriter.rewrite("in 7", SectionKind.REASON, 1) == "ok 7"
    assert len(session.requests) == 3


def test_http_rewriter_gives_up_after_retries():
    rewriter, session = _http_rewriter([FakeResponse(503), FakeResponse(503), FakeResponse(503)])
    with pytest.raises(RewriterUnavailable):
        rewriter.rewrite("x 1", SectionKind.FOCUS, 2)
    assert len(session.requests) == 3


def test_http_rewriter_sends_api_key_from_env(monkeypatch):
    monkeypatch.setenv("REWRITER_API_KEY", "sekrit")
    body = {"choices": [{"message": {"content": "y 3"}}]}
    rewriter, session = _http_rewriter([FakeResponse(200, body)])
    rewriter.rewrite("x 3", SectionKind.JUDGMENT, 4)
    assert session.requests[0]["headers"]["Authorization"] == "Bearer sekrit"


def test_token_bucket_blocks_until_refill():
    now = {"t": 0.0}
    sleeps = []

    def clock():
        return now["t"]

    def sleep(dt):
        sleeps.append(dt)
        now["t"] += dt

    bucket = TokenBucket(rate=2.0, capacity=1.0, clock=clock, sleep=sleep)
    bucket.acquire()  # consumes the initial token
    bucket.acquire()  # must wait ~0.5 s for a refill
    assert sleeps and abs(sum(sleeps) - 0.5) < 1e-9
