"""End-to-end orchestration: ingest, index, pretrain, adapter training,
generation under the four operating modes, evaluation, and the paired
comparison runs.

Mode semantics
    base         generate from the case fact alone, no deltas, no context.
    vanilla_rag  top-k retrieved documents go into the prompt context
                 (plain concatenation or labeled structured blocks).
    p_rag        the corpus-wide composed delta plus a per-query adapter
                 trained on the top-1 retrieved case (with the statutes of
                 the top-5) are merged into the FFN weights; the prompt is
                 the fact alone.
    combine      p_rag injection plus vanilla_rag context.

Every record carries full provenance (adapter doc ids, context doc ids) and
all randomness descends from the master seed, so a rerun with the same config
is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .. import adapters as ad
from .. import corpus as cp
from .. import evaluation as ev
from .. import retrieval as rt
from ..augmentation import (
    BuiltinParaphraser,
    ChatCompletionsRewriter,
    HttpRewriterConfig,
    Rewriter,
    augment_case,
    expand_qa,
    save_pairs,
)
from ..errors import RetrievalEmpty
from ..model import BaseModel, ByteTokenizer, ModelConfig, load_checkpoint, pretrain_base, save_checkpoint
from .config import MODES, ConfigError, RunConfig
from .seeds import stage_seed


def log_event(event: str, **fields) -> None:
    """Line-oriented JSON logging on stderr."""
    print(json.dumps({"event": event, **fields}, ensure_ascii=False, sort_keys=True), file=sys.stderr)


# --- ingest -------------------------------------------------------------------


def cmd_ingest(
    raw_paths: dict[str, str | Path],
    out_dir: str | Path,
    rules: cp.SegmentationRules = cp.DEFAULT_RULES,
    min_chars: int = 150,
    max_per_cause: int = 10,
    strip_claims_from_test: bool = True,
) -> dict[str, Path]:
    """Parse raw judgment files into per-kind JSONL stores.

    The online store passes through the knowledge-base quality filter; test
    facts lose their prosecution-claim sentences so generation cannot copy
    the recommended sentence.
    """
    out_dir = Path(out_dir)
    written: dict[str, Path] = {}
    for kind, raw in raw_paths.items():
        if kind not in cp.STORE_KINDS:
            raise ConfigError(f"unknown store kind {kind!r}")
        docs = cp.parse_raw_file(raw, rules)
        store = cp.CorpusStore(documents=docs, kind=kind)
        if kind == "online":
            store = cp.filter_corpus(store, min_chars=min_chars, max_per_cause=max_per_cause)
        if kind == "test" and strip_claims_from_test:
            store = cp.CorpusStore(
                documents=[
                    dataclasses.replace(doc, fact=cp.strip_prosecution_claims(doc.fact).strip(), char_count=-1)
                    for doc in store
                ],
                kind="test",
            )
        path = out_dir / f"{kind}.jsonl"
        cp.save_store(store, path)
        written[kind] = path
        log_event("ingest", kind=kind, documents=len(store), path=str(path))
    return written


def load_stores(config: RunConfig) -> dict[str, cp.CorpusStore]:
    return {
        "offline": cp.load_store(config.paths.offline_store, "offline"),
        "online": cp.load_store(config.paths.online_store, "online"),
        "test": cp.load_store(config.paths.test_store, "test"),
    }


# --- index / pretrain -----------------------------------------------------------


def cmd_index(config: RunConfig) -> rt.InvertedIndex:
    store = cp.load_store(config.paths.online_store, "online")
    index = rt.build_index(store)
    if config.paths.index_snapshot:
        rt.save_index(index, config.paths.index_snapshot)
        log_event("index", documents=index.doc_count, snapshot=config.paths.index_snapshot)
    else:
        log_event("index", documents=index.doc_count)
    return index


def cmd_pretrain(config: RunConfig) -> Path:
    """Pretrain the base on offline + online raw text and write its checkpoint."""
    stores = load_stores(config)
    docs = list(stores["offline"]) + [d for d in stores["online"] if d.id not in set(stores["offline"].ids())]
    union = cp.CorpusStore(documents=docs, kind="online")
    base = BaseModel.create(config.model)
    pretrain_base(
        base,
        union,
        steps=config.pretrain_steps,
        lr=config.pretrain_lr,
        seed=stage_seed(config.master_seed, "pretrain"),
        log=lambda **kw: log_event("pretrain", **kw),
    )
    path = save_checkpoint(base, config.paths.base_checkpoint)
    log_event("pretrain-done", steps=config.pretrain_steps, checkpoint=str(path))
    return path


def load_base(config: RunConfig) -> BaseModel:
    path = Path(config.paths.base_checkpoint)
    if not path.exists():
        raise ConfigError(f"base checkpoint missing: {path} (run the pretrain command first)")
    base = load_checkpoint(path)
    if base.config != config.model:
        raise ConfigError(
            f"checkpoint config {base.config} does not match run config model {config.model}"
        )
    if not base.frozen:
        base.freeze()
    return base


def make_rewriter(config: RunConfig) -> Rewriter:
    if config.rewriter.kind == "builtin":
        return BuiltinParaphraser()
    return ChatCompletionsRewriter(
        HttpRewriterConfig(
            base_url=config.rewriter.base_url,
            model=config.rewriter.model,
            temperature=config.rewriter.temperature,
            api_key_env=config.rewriter.api_key_env,
            requests_per_second=config.rewriter.requests_per_second,
        )
    )


# --- augmentation artifacts -------------------------------------------------------


def cmd_augment(config: RunConfig, kind: str = "offline", out_path: str | Path | None = None) -> Path:
    """Materialize QA pairs for a store as a JSONL artifact."""
    store = load_stores(config)[kind]
    rewriter = make_rewriter(config)
    pairs = []
    for doc in store:
        aug = augment_case(doc, rewriter, base_seed=stage_seed(config.master_seed, "paraphrase", doc.id))
        pairs.extend(expand_qa(aug))
    out = Path(out_path) if out_path else Path(config.paths.report_dir) / f"qa_pairs.{kind}.jsonl"
    save_pairs(pairs, out)
    log_event("augment", kind=kind, pairs=len(pairs), path=str(out))
    return out


# --- offline adapter training ------------------------------------------------------


def _train_config_for(config: RunConfig, doc_id: str, stage: str) -> ad.TrainConfig:
    return dataclasses.replace(config.training, seed=stage_seed(config.master_seed, stage, doc_id))


def _adapter_is_current(path: Path, config: RunConfig, expected_hyper: ad.TrainConfig) -> bool:
    if not path.exists():
        return False
    try:
        adapter = ad.load_adapter(path)
    except Exception:
        return False
    return (
        adapter.config_hash == config.model.config_hash()
        and adapter.hyper == expected_hyper.to_dict()
    )


def train_offline_adapter(config: RunConfig, base: BaseModel, doc: cp.CaseDocument,
                          rewriter: Rewriter) -> ad.LoraAdapter:
    aug = augment_case(doc, rewriter, base_seed=stage_seed(config.master_seed, "paraphrase", doc.id))
    pairs = expand_qa(aug)
    return ad.train_adapter(base, pairs, _train_config_for(config, doc.id, "adapter"), doc_id=doc.id)


def cmd_train_offline(config: RunConfig) -> Path:
    """Train one adapter per offline document, resumably, and write the
    manifest plus the composed corpus-wide delta."""
    base = load_base(config)
    store = cp.load_store(config.paths.offline_store, "offline")
    rewriter = make_rewriter(config)
    adapter_dir = Path(config.paths.adapter_dir)
    adapter_dir.mkdir(parents=True, exist_ok=True)

    def ensure(doc: cp.CaseDocument) -> tuple[str, str, bool]:
        path = adapter_dir / f"{doc.id}.plca"
        expected = _train_config_for(config, doc.id, "adapter")
        if _adapter_is_current(path, config, expected):
            return doc.id, path.name, False
        adapter = train_offline_adapter(config, base, doc, rewriter)
        ad.save_adapter(adapter, path)
        return doc.id, path.name, True

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(ensure, store.documents))
    else:
        results = [ensure(doc) for doc in store.documents]

    trained = sum(1 for _, _, fresh in results if fresh)
    manifest = {
        "config_hash": config.model.config_hash(),
        "training": config.training.to_dict(),
        "adapters": {doc_id: filename for doc_id, filename, _ in results},
    }
    manifest_path = adapter_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    loaded = [ad.load_adapter(adapter_dir / filename) for _, filename, _ in results]
    delta = ad.compose_deltas(loaded)
    ad.save_delta(delta, adapter_dir / "offline_delta.plcd")
    log_event("train-offline", adapters=len(results), retrained=trained, manifest=str(manifest_path))
    return manifest_path


def load_offline_delta(config: RunConfig) -> ad.ComposedDelta:
    path = Path(config.paths.adapter_dir) / "offline_delta.plcd"
    if not path.exists():
        raise ConfigError(f"composed offline delta missing: {path} (run train-offline first)")
    return ad.load_delta(path)


# --- online adapters ------------------------------------------------------------


class OnlineAdapterCache:
    """Per-query adapters keyed by (retrieved doc id, model config hash).

    Repeated test queries resolving to the same top case must not retrain;
    files live under ``<adapter_dir>/online`` and are reused when their
    config hash and hyperparameters match.
    """

    def __init__(self, config: RunConfig, base: BaseModel, online_store: cp.CorpusStore,
                 rewriter: Rewriter):
        self.config = config
        self.base = base
        self.online_store = online_store
        self.rewriter = rewriter
        self.dir = Path(config.paths.adapter_dir) / "online"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._live: dict[str, ad.LoraAdapter] = {}

    def get_or_train(self, doc_id: str, statutes: frozenset[cp.StatuteRef]) -> ad.LoraAdapter:
        if doc_id in self._live:
            return self._live[doc_id]
        path = self.dir / f"{doc_id}.plca"
        expected = _train_config_for(self.config, doc_id, "online-adapter")
        if _adapter_is_current(path, self.config, expected):
            adapter = ad.load_adapter(path)
        else:
            doc = self.online_store.get(doc_id)
            structured = dataclasses.replace(doc, focus=None, articles=frozenset(statutes))
            aug = augment_case(
                structured,
                self.rewriter,
                base_seed=stage_seed(self.config.master_seed, "paraphrase-online", doc_id),
                require_focus=False,
            )
            pairs = expand_qa(aug)
            adapter = ad.train_adapter(self.base, pairs, expected, doc_id=doc_id)
            ad.save_adapter(adapter, path)
        self._live[doc_id] = adapter
        return adapter


# --- generation -----------------------------------------------------------------


@dataclass
class GenerationRecord:
    case_id: str
    mode: str
    sample_seed: int
    output_text: str
    injected_offline_ids: list[str] = field(default_factory=list)
    injected_online_ids: list[str] = field(default_factory=list)
    context_doc_ids: list[str] = field(default_factory=list)
    context_truncated: bool = False

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "mode": self.mode,
            "sample_seed": self.sample_seed,
            "output_text": self.output_text,
            "injected_offline_ids": self.injected_offline_ids,
            "injected_online_ids": self.injected_online_ids,
            "context_doc_ids": self.context_doc_ids,
            "context_truncated": self.context_truncated,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GenerationRecord":
        return cls(**rec)


def format_context(docs: Sequence[cp.CaseDocument], style: str) -> str:
    """Plain concatenation of raw text, or labeled per-section blocks."""
    if style == "plain":
        return "\n\n".join(doc.raw_text for doc in docs)
    blocks = []
    for doc in docs:
        citations = "; ".join(
            ref.display() for ref in sorted(doc.articles, key=lambda a: (a.law_name, a.article_number))
        )
        blocks.append(
            f"FACT:\n{doc.fact}\n\nREASON:\n{doc.reason}\n\nJUDGMENT:\n{doc.judgment}\n\nARTICLES:\n{citations}"
        )
    return "\n\n".join(blocks)


def build_prompt(fact: str, context: str | None, config: RunConfig) -> tuple[str, bool]:
    """Assemble the generation prompt, truncating context before the fact.

    The query fact always stays intact; retrieved context is cut from its
    right edge until BOS + prompt + the sampling budget fit the context
    window. Returns (prompt, truncated?).
    """
    tok = ByteTokenizer()
    skeleton = f"FACTS: {fact}\nREASONING:"
    budget = config.model.context_len - 1 - config.max_new_tokens
    truncated = False
    if context:
        prompt = f"{context}\n\n{skeleton}"
        while context and len(tok.encode(prompt)) > budget:
            excess = len(tok.encode(prompt)) - budget
            context = context[:-excess] if excess < len(context) else ""
            truncated = True
            prompt = f"{context}\n\n{skeleton}" if context else skeleton
        return prompt, truncated
    return skeleton, truncated


def run_case(
    config: RunConfig,
    case: cp.CaseDocument,
    base: BaseModel,
    index: rt.InvertedIndex,
    online_store: cp.CorpusStore,
    offline_delta: ad.ComposedDelta | None,
    online_cache: OnlineAdapterCache | None,
) -> GenerationRecord:
    mode = config.mode
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    context_text: str | None = None
    context_ids: list[str] = []
    online_ids: list[str] = []
    offline_ids: list[str] = []
    online_delta: ad.ComposedDelta | None = None

    if mode in ("vanilla_rag", "combine"):
        results = rt.retrieve_topk(case.fact, index, k=config.retrieval.context_top_k,
                                   k1=config.retrieval.bm25_k1, b=config.retrieval.bm25_b)
        context_ids = [r.doc_id for r in results]
        context_text = format_context([online_store.get(i) for i in context_ids], config.context_format)

    if mode in ("p_rag", "combine"):
        depth = max(config.retrieval.k_cases, config.retrieval.k_statutes_from)
        results = rt.retrieve_topk(case.fact, index, k=depth,
                                   k1=config.retrieval.bm25_k1, b=config.retrieval.bm25_b)
        if not results:
            raise RetrievalEmpty(f"no documents retrieved for case {case.id}")
        statutes = rt.extract_statutes_topk(results, online_store, n=config.retrieval.k_statutes_from)
        per_query: list[ad.LoraAdapter] = []
        if config.use_online_delta and online_cache is not None:
            for res in results[: config.retrieval.k_cases]:
                per_query.append(online_cache.get_or_train(res.doc_id, statutes))
            online_ids = [a.doc_id for a in per_query]
        online_delta = ad.compose_deltas(per_query)
        if config.use_offline_delta and offline_delta is not None:
            offline_ids = list(offline_delta.doc_ids)
        else:
            offline_delta = None

    if mode in ("base", "vanilla_rag"):
        effective = ad.inject(base)
    else:
        effective = ad.inject(base, offline_delta, online_delta)

    prompt, truncated = build_prompt(case.fact, context_text, config)
    sample_seed = stage_seed(config.master_seed, "sample", mode, case.id)
    output = effective.generate(
        prompt,
        max_tokens=config.max_new_tokens,
        temperature=config.sampling_temperature,
        seed=sample_seed,
    )
    return GenerationRecord(
        case_id=case.id,
        mode=mode,
        sample_seed=sample_seed,
        output_text=output,
        injected_offline_ids=offline_ids,
        injected_online_ids=online_ids,
        context_doc_ids=context_ids,
        context_truncated=truncated,
    )


def cmd_run(config: RunConfig) -> Path:
    """Generate for every test case under the configured mode."""
    config.validate(require_stores=True)
    stores = load_stores(config)
    base = load_base(config)
    index = rt.build_index(stores["online"])
    offline_delta = None
    online_cache = None
    if config.mode in ("p_rag", "combine"):
        if config.use_offline_delta:
            offline_delta = load_offline_delta(config)
            if offline_delta.config_hash is not None and offline_delta.config_hash != config.model.config_hash():
                raise ConfigError("offline delta was composed for a different model config")
        if config.use_online_delta:
            online_cache = OnlineAdapterCache(config, base, stores["online"], make_rewriter(config))
    records = []
    for case in stores["test"]:
        record = run_case(config, case, base, index, stores["online"], offline_delta, online_cache)
        records.append(record)
        log_event("generate", case_id=case.id, mode=config.mode,
                  context_docs=len(record.context_doc_ids),
                  online_adapters=len(record.injected_online_ids))
    out = Path(config.paths.report_dir) / f"generations.{config.mode}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_record(), ensure_ascii=False))
            fh.write("\n")
    log_event("run-done", mode=config.mode, cases=len(records), path=str(out))
    return out


def load_generation_records(path: str | Path) -> list[GenerationRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(GenerationRecord.from_record(json.loads(line)))
    return out


# --- evaluation -----------------------------------------------------------------


_METRIC_KEYS = (
    "charge_acc",
    "imprison_diff",
    "probation_diff",
    "fine_diff",
    "outcome_p", "outcome_r", "outcome_f1",
    "statute_p", "statute_r", "statute_f1",
    "judgment_p", "judgment_r", "judgment_f1",
    "reason_p", "reason_r", "reason_f1",
    "doc_sim",
)


def evaluate_case(
    record: GenerationRecord,
    gold: cp.CaseDocument,
    rules: cp.SegmentationRules = cp.DEFAULT_RULES,
    pattern_table: dict | None = None,
    scorer: ev.Scorer | None = None,
) -> ev.CaseRecord:
    """Score one generation against its gold case.

    The continuation is re-segmented with the shared marker rules; a field
    the generation failed to produce scores 0 where gold demands it.
    """
    metrics: dict[str, float | None] = {k: None for k in _METRIC_KEYS}
    spans = cp.segment_text("REASONING:" + record.output_text, rules)
    gen_reason = spans.get("reason", "")
    gen_judgment = spans.get("judgment", "")
    gen_articles = cp.parse_citations(spans.get("articles", ""), rules.citation_patterns)

    pred = ev.extract_fields(record.output_text, pattern_table)
    gold_fields = ev.extract_fields(gold.judgment, pattern_table)

    if gold.domain == "criminal":
        if gold_fields.charge:
            metrics["charge_acc"] = float(ev.charge_accuracy(pred.charge, gold_fields.charge))
        for key, gold_val, pred_val in (
            ("imprison_diff", gold_fields.imprisonment_months, pred.imprisonment_months),
            ("probation_diff", gold_fields.probation_months, pred.probation_months),
            ("fine_diff", gold_fields.fine_amount, pred.fine_amount),
        ):
            if gold_val is not None:
                metrics[key] = ev.numeric_diff_metric(gold_val, pred_val) if pred_val is not None else 0.0
    else:
        if gold_fields.civil_admin_outcome:
            p, r, f1 = ev.set_prf(pred.civil_admin_outcome or frozenset(), gold_fields.civil_admin_outcome)
            metrics["outcome_p"], metrics["outcome_r"], metrics["outcome_f1"] = p, r, f1

    if gold.articles:
        p, r, f1 = ev.set_prf(frozenset(gen_articles), gold.articles)
        metrics["statute_p"], metrics["statute_r"], metrics["statute_f1"] = p, r, f1

    p, r, f1 = ev.token_prf(gen_judgment, gold.judgment)
    metrics["judgment_p"], metrics["judgment_r"], metrics["judgment_f1"] = p, r, f1
    p, r, f1 = ev.token_prf(gen_reason, gold.reason)
    metrics["reason_p"], metrics["reason_r"], metrics["reason_f1"] = p, r, f1
    metrics["doc_sim"] = ev.semantic_similarity(
        record.output_text, gold.reason + "\n" + gold.judgment, scorer
    )
    return ev.CaseRecord(case_id=record.case_id, mode=record.mode, seed=record.sample_seed, metrics=metrics)


def cmd_evaluate(
    config: RunConfig,
    records_path: str | Path | None = None,
    rescaled: bool = False,
) -> ev.EvalReport:
    """Score persisted generations against the gold test store."""
    records_path = Path(records_path) if records_path else (
        Path(config.paths.report_dir) / f"generations.{config.mode}.jsonl"
    )
    if not records_path.exists():
        raise ConfigError(f"generation records missing: {records_path} (run the run command first)")
    gold_store = cp.load_store(config.paths.test_store, "test")
    generations = load_generation_records(records_path)
    case_records: list[ev.CaseRecord] = []
    warnings: list[str] = []
    gold_ids = set(gold_store.ids())
    for record in generations:
        if record.case_id not in gold_ids:
            warnings.append(f"no gold case for generated record {record.case_id}")
            continue
        case_records.append(evaluate_case(record, gold_store.get(record.case_id)))
    for missing in sorted(gold_ids - {r.case_id for r in generations}):
        warnings.append(f"no generation for gold case {missing}")
    report = ev.aggregate(case_records)
    report_dir = Path(config.paths.report_dir)
    ev.save_records(report.records, report_dir / f"evaluation.{config.mode}.jsonl")
    summary = report.to_summary(rescaled=rescaled)
    if warnings:
        summary["warnings"] = warnings
    (report_dir / f"summary.{config.mode}.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    log_event("evaluate", mode=config.mode, cases=len(case_records), warnings=len(warnings))
    return report


def cmd_report(config: RunConfig, mode: str | None = None) -> dict:
    """Recompute aggregates from persisted per-case records (idempotent)."""
    mode = mode or config.mode
    report_dir = Path(config.paths.report_dir)
    records = ev.load_records(report_dir / f"evaluation.{mode}.jsonl")
    report = ev.aggregate(records)
    summary = report.to_summary()
    log_event("report", mode=mode, cases=len(records))
    return summary


# --- paired comparison runs --------------------------------------------------------


def _run_arm(label: str, arm: RunConfig) -> dict:
    cmd_run(arm)
    report = cmd_evaluate(arm)
    return {"label": label, "config": arm.to_dict(), "aggregates": report.aggregates}


def cmd_ablate(config: RunConfig, which: str, alt_model: ModelConfig | None = None) -> Path:
    """Run one paired comparison: context structure, stage isolation, or model scale."""
    base_report_dir = Path(config.paths.report_dir)
    arms: list[dict] = []
    if which == "structure":
        mode = config.mode if config.mode in ("vanilla_rag", "combine") else "vanilla_rag"
        for style in ("plain", "structured"):
            arm = dataclasses.replace(
                config, mode=mode, context_format=style,
                paths=dataclasses.replace(config.paths, report_dir=str(base_report_dir / f"ablate-structure-{style}")),
            )
            arms.append(_run_arm(style, arm))
    elif which == "stage":
        for label, use_off, use_on in (("offline_only", True, False), ("online_only", False, True)):
            arm = dataclasses.replace(
                config, mode="p_rag", use_offline_delta=use_off, use_online_delta=use_on,
                paths=dataclasses.replace(config.paths, report_dir=str(base_report_dir / f"ablate-stage-{label}")),
            )
            arms.append(_run_arm(label, arm))
    elif which == "scale":
        if alt_model is None:
            m = config.model
            alt_model = ModelConfig(
                n_layers=max(1, m.n_layers // 2),
                d_model=max(2 * m.n_heads, m.d_model // 2),
                n_heads=max(1, m.n_heads // 2),
                d_ffn=max(8, m.d_ffn // 2),
                context_len=m.context_len,
                vocab_size=m.vocab_size,
                seed=m.seed,
            )
        arms.append(_run_arm("full", dataclasses.replace(
            config,
            paths=dataclasses.replace(config.paths, report_dir=str(base_report_dir / "ablate-scale-full")),
        )))
        alt_paths = dataclasses.replace(
            config.paths,
            base_checkpoint=str(Path(config.paths.base_checkpoint).with_suffix(".alt.plcm")),
            adapter_dir=str(Path(config.paths.adapter_dir) / "alt"),
            report_dir=str(base_report_dir / "ablate-scale-alt"),
        )
        alt = dataclasses.replace(config, model=alt_model, paths=alt_paths)
        if not Path(alt_paths.base_checkpoint).exists():
            cmd_pretrain(alt)
        if alt.mode in ("p_rag", "combine") and alt.use_offline_delta:
            cmd_train_offline(alt)
        arms.append(_run_arm("alt", alt))
    else:
        raise ConfigError(f"unknown comparison {which!r}; expected structure|stage|scale")

    out = base_report_dir / f"ablation.{which}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"which": which, "arms": arms}, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    log_event("ablate", which=which, arms=[a["label"] for a in arms], path=str(out))
    return out
