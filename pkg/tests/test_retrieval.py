from __future__ import annotations

import math
from collections import Counter
from datetime import date

import pytest

from parajudge.corpus import CaseDocument, CorpusStore, StatuteRef, field_selector
from parajudge.errors import EmptyCorpus, EmptyGold, FormatError, RetrievalEmpty, UnknownDoc
from parajudge.retrieval import (
    InvertedIndex,
    bm25_score,
    build_index,
    extract_statutes_topk,
    load_index,
    recall_at_k,
    retrieve_topk,
    save_index,
    tokenize,
)
from parajudge.synth import synth_store


def text_doc(doc_id: str, text: str, articles=frozenset()) -> CaseDocument:
    return CaseDocument(
        id=doc_id,
        domain="criminal",
        cause_of_action="misc",
        fact=text,
        focus=None,
        reason="r",
        judgment="j",
        articles=frozenset(articles),
        raw_text=text,
        published_date=date(2020, 1, 1),
    )


def store_of(texts: dict[str, str]) -> CorpusStore:
    return CorpusStore(documents=[text_doc(i, t) for i, t in texts.items()], kind="online")


# --- tokenization ----------------------------------------------------------------


def test_tokenize_empty():
    assert tokenize("").tokens == ()


def test_tokenize_latin_lowercases_and_splits():
    assert tokenize("AB cd").tokens == ("ab", "cd")
    assert tokenize("Hello, world!").tokens == ("hello", "world")


def test_tokenize_cjk_bigrams():
    assert tokenize("盗窃案件").tokens == ("盗窃", "窃案", "案件")
    assert tokenize("法").tokens == ("法",)


def test_tokenize_mixed_scripts():
    assert tokenize("Article 264条文text").tokens == ("article", "264", "条文", "text")


def test_tokenize_deterministic():
    text = "The 被告人 stole 3000 yuan"
    assert tokenize(text) == tokenize(text)


# --- index construction -------------------------------------------------------------


def test_build_index_single_doc_statistics():
    index = build_index(store_of({"d1": "one two three four five"}))
    assert index.doc_count == 1
    assert index.avg_doc_length == 5.0
    assert index.doc_lengths["d1"] == 5


def test_build_index_shared_token_doc_frequency():
    index = build_index(store_of({"d1": "alpha beta", "d2": "alpha gamma"}))
    assert index.doc_frequency["alpha"] == 2
    assert index.doc_frequency["beta"] == 1
    assert index.postings["alpha"] == [("d1", 1), ("d2", 1)]


def test_build_index_empty_store():
    with pytest.raises(EmptyCorpus):
        build_index(CorpusStore(documents=[], kind="online"))


def test_build_index_statistics_match_naive_recount():
    store = synth_store(50, seed=11, kind="online")
    index = build_index(store)
    # independent linear-scan recount
    lengths = {}
    df = Counter()
    postings = {}
    for doc in store:
        toks = tokenize(doc.raw_text).tokens
        lengths[doc.id] = len(toks)
        counts = Counter(toks)
        for term, tf in counts.items():
            df[term] += 1
            postings.setdefault(term, {})[doc.id] = tf
    assert index.doc_lengths == lengths
    assert index.doc_count == 50
    assert index.avg_doc_length == sum(lengths.values()) / 50
    assert index.doc_frequency == dict(df)
    for term, plist in index.postings.items():
        assert plist == sorted(postings[term].items())


def test_field_selector_limits_indexed_text():
    doc = text_doc("d1", "rawtext")
    doc.fact = "factonly"
    index = build_index(CorpusStore(documents=[doc], kind="online"), field_selector("fact"))
    assert "factonly" in index.postings
    assert "rawtext" not in index.postings


# --- scoring -------------------------------------------------------------------------


def test_bm25_zero_when_no_query_term_matches():
    index = build_index(store_of({"d1": "alpha beta", "d2": "gamma delta"}))
    assert bm25_score(tokenize("epsilon zeta"), "d1", index) == 0.0


def test_bm25_single_doc_matches_hand_evaluated_formula():
    # one document, 4 tokens, query repeats a term that appears twice
    index = build_index(store_of({"d1": "alpha beta alpha gamma"}))
    k1, b = 1.5, 0.75
    # hand evaluation: N=1, df(alpha)=1 -> idf = ln((1-1+0.5)/(1+0.5)+1) = ln(4/3)
    idf = math.log((1 - 1 + 0.5) / (1 + 0.5) + 1.0)
    tf = 2
    dl = avgdl = 4
    term = idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
    expected = term  # query "alpha" once
    assert bm25_score(tokenize("alpha"), "d1", index) == pytest.approx(expected, abs=1e-12)
    # each query token instance adds its term score
    assert bm25_score(tokenize("alpha alpha"), "d1", index) == pytest.approx(2 * expected, abs=1e-12)


def test_bm25_unknown_doc():
    index = build_index(store_of({"d1": "alpha"}))
    with pytest.raises(UnknownDoc):
        bm25_score(tokenize("alpha"), "nope", index)


def test_bm25_invariant_under_corpus_permutation():
    texts = {f"d{i}": f"alpha beta{i % 3} gamma{i % 5} delta" for i in range(12)}
    forward_store = store_of(texts)
    reversed_store = CorpusStore(documents=list(reversed(forward_store.documents)), kind="online")
    i1 = build_index(forward_store)
    i2 = build_index(reversed_store)
    q = tokenize("alpha beta0 gamma1")
    for doc_id in texts:
        assert bm25_score(q, doc_id, i1) == bm25_score(q, doc_id, i2)


# --- top-k ---------------------------------------------------------------------------


def brute_force_topk(query: str, index: InvertedIndex, k: int):
    scored = [(doc_id, bm25_score(tokenize(query), doc_id, index)) for doc_id in index.doc_lengths]
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return scored[:k]


def test_topk_matches_brute_force_on_synth_corpus():
    store = synth_store(50, seed=12, kind="online")
    index = build_index(store)
    queries = [doc.fact for doc in synth_store(20, seed=13, kind="test")]
    for query in queries:
        got = retrieve_topk(query, index, k=10)
        want = brute_force_topk(query, index, 10)
        assert [r.doc_id for r in got] == [d for d, _ in want]
        for r, (_, s) in zip(got, want):
            assert r.score == pytest.approx(s, abs=1e-9)


def test_topk_larger_than_corpus_returns_all():
    index = build_index(store_of({"d1": "alpha", "d2": "beta"}))
    results = retrieve_topk("alpha", index, k=10)
    assert len(results) == 2


def test_topk_ties_break_by_ascending_doc_id():
    index = build_index(store_of({"b": "alpha beta", "a": "alpha beta", "c": "other thing"}))
    results = retrieve_topk("alpha", index, k=3)
    assert [r.doc_id for r in results] == ["a", "b", "c"]
    assert results[0].score == results[1].score


def test_topk_rejects_bad_k():
    index = build_index(store_of({"d1": "alpha"}))
    with pytest.raises(ValueError):
        retrieve_topk("alpha", index, k=0)


def test_disjoint_document_changes_scores_only_through_statistics():
    texts = {f"d{i}": f"alpha beta{i} gamma" for i in range(6)}
    base_index = build_index(store_of(texts))
    extended = dict(texts)
    extended["zz"] = "unrelated vocabulary entirely"
    ext_index = build_index(store_of(extended))
    # rescoring the extended index equals its own brute-force oracle
    got = retrieve_topk("alpha beta1", ext_index, k=7)
    want = brute_force_topk("alpha beta1", ext_index, 7)
    assert [(r.doc_id, r.score) for r in got] == pytest.approx(want)
    # and the ordering of the original documents is unchanged
    orig_order = [r.doc_id for r in retrieve_topk("alpha beta1", base_index, k=6)]
    ext_order = [r.doc_id for r in got if r.doc_id != "zz"]
    assert orig_order == ext_order


# --- statutes and recall ------------------------------------------------------------


def _statute_store():
    refs = {
        "d1": {StatuteRef("Penal Code", 1), StatuteRef("Penal Code", 2)},
        "d2": {StatuteRef("Penal Code", 3)},
        "d3": {StatuteRef("Civil Code", 9)},
        "d4": set(),
        "d5": {StatuteRef("Penal Code", 99)},
        "d6": {StatuteRef("Penal Code", 1)},
    }
    docs = [text_doc(i, f"text {i}", articles=a) for i, a in refs.items()]
    return CorpusStore(documents=docs, kind="online")


def test_extract_statutes_unions_top_n():
    store = _statute_store()
    results = retrieve_topk("text", build_index(store), k=6)
    top5_ids = [r.doc_id for r in results[:5]]
    got = extract_statutes_topk(results, store, n=5)
    want = set()
    for doc_id in top5_ids:
        want |= store.get(doc_id).articles
    assert got == frozenset(want)
    assert len(got) == 5  # 2 + 1 + 1 + 0 + 1 disjoint articles


def test_extract_statutes_dedupes():
    store = _statute_store()
    index = build_index(store)
    results = [r for r in retrieve_topk("text", index, k=6) if r.doc_id in ("d1", "d6")]
    got = extract_statutes_topk(results, store, n=5)
    assert got == frozenset({StatuteRef("Penal Code", 1), StatuteRef("Penal Code", 2)})


def test_extract_statutes_empty_results():
    with pytest.raises(RetrievalEmpty):
        extract_statutes_topk([], _statute_store(), n=5)


def test_extract_statutes_unknown_doc():
    store = _statute_store()
    index = build_index(store)
    results = retrieve_topk("text", index, k=1)
    small = CorpusStore(documents=[store.documents[1]], kind="online")
    with pytest.raises(UnknownDoc):
        extract_statutes_topk(results, small, n=5)


def test_recall_at_k_basics():
    store = _statute_store()
    index = build_index(store)
    results = retrieve_topk("text", index, k=6)
    gold_all = frozenset({StatuteRef("Penal Code", 1), StatuteRef("Penal Code", 2)})
    assert recall_at_k(gold_all, results, store, k=6) == 1.0
    gold_half = frozenset({StatuteRef("Penal Code", 1), StatuteRef("Other Law", 77)})
    assert recall_at_k(gold_half, results, store, k=6) == 0.5
    with pytest.raises(EmptyGold):
        recall_at_k(frozenset(), results, store, k=3)


def test_recall_monotone_in_k_on_synth_fixture():
    store = synth_store(200, seed=21, kind="online")
    index = build_index(store)
    queries = synth_store(20, seed=22, kind="test")
    for q in queries:
        if not q.articles:
            continue
        results = retrieve_topk(q.fact, index, k=100)
        r5 = recall_at_k(q.articles, results, store, k=5)
        r20 = recall_at_k(q.articles, results, store, k=20)
        r100 = recall_at_k(q.articles, results, store, k=100)
        assert r5 <= r20 <= r100


# --- snapshot ---------------------------------------------------------------------


def test_snapshot_round_trip(tmp_path):
    store = synth_store(25, seed=30, kind="online")
    index = build_index(store)
    path = tmp_path / "index.plix"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded == index


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "bad.plix"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError):
        load_index(path)


def test_snapshot_truncated(tmp_path):
    store = synth_store(5, seed=31, kind="online")
    path = tmp_path / "trunc.plix"
    save_index(build_index(store), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_index(path)
