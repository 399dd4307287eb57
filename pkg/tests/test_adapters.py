from __future__ import annotations

import numpy as np
import pytest

from parajudge.adapters import (
    ComposedDelta,
    LoraAdapter,
    TrainConfig,
    compose_deltas,
    init_adapter,
    inject,
    load_adapter,
    load_delta,
    mean_nll,
    qa_arrays,
    save_adapter,
    save_delta,
    train_adapter,
)
from parajudge.augmentation import QAPair, SectionKind
from parajudge.errors import BadRank, ChecksumFailure, ConfigMismatch, EmptyTrainingSet, VersionMismatch
from parajudge.model import BaseModel, ModelConfig, SEP_ID, forward

from conftest import GRADCHECK_CONFIG, TINY_CONFIG


def small_pairs(doc_id="doc-a"):
    return [
        QAPair("facts about 3000", "reasoning on 3000", doc_id, SectionKind.REASON, 0),
        QAPair("facts about 3000", "fine of 3000", doc_id, SectionKind.JUDGMENT, 0),
    ]


# --- init -------------------------------------------------------------------------


def test_init_shapes_follow_host_matrices():
    cfg = ModelConfig(n_layers=4, d_model=128, n_heads=4, d_ffn=512, context_len=512, seed=0)
    adapter = init_adapter("d", cfg, rank=2, alpha=32.0, seed=1)
    a, b = adapter.factors["layers.0.ffn.w1"]
    assert a.shape == (512, 2) and b.shape == (128, 2)
    a2, b2 = adapter.factors["layers.0.ffn.w2"]
    assert a2.shape == (128, 2) and b2.shape == (512, 2)
    assert adapter.delta("layers.0.ffn.w1").shape == (512, 128)
    assert len(adapter.factors) == 8


def test_init_rejects_bad_rank():
    with pytest.raises(BadRank):
        init_adapter("d", GRADCHECK_CONFIG, rank=0)
    with pytest.raises(BadRank):
        init_adapter("d", GRADCHECK_CONFIG, rank=GRADCHECK_CONFIG.d_model)


def test_init_deterministic_per_seed():
    a1 = init_adapter("d", GRADCHECK_CONFIG, seed=9)
    a2 = init_adapter("d", GRADCHECK_CONFIG, seed=9)
    for name in a1.factors:
        assert np.array_equal(a1.factors[name][0], a2.factors[name][0])
    a3 = init_adapter("d", GRADCHECK_CONFIG, seed=10)
    assert not np.array_equal(a1.factors["layers.0.ffn.w1"][0], a3.factors["layers.0.ffn.w1"][0])


def test_fresh_adapter_is_zero_delta(random_frozen_base):
    adapter = init_adapter("d", GRADCHECK_CONFIG, seed=4)
    rng = np.random.default_rng(0)
    toks = rng.integers(0, 260, size=30)
    plain = forward(toks, random_frozen_base)
    with_delta = forward(toks, random_frozen_base, deltas=adapter.deltas())
    assert np.array_equal(plain, with_delta)


def test_w1_only_targets():
    adapter = init_adapter("d", GRADCHECK_CONFIG, targets=("w1",))
    assert set(adapter.factors) == {"layers.0.ffn.w1", "layers.1.ffn.w1"}


# --- qa arrays --------------------------------------------------------------------


def test_qa_arrays_mask_covers_answer_span():
    pair = small_pairs()[0]
    inputs, targets, mask = qa_arrays(pair, context_len=256)
    ids = list(inputs) + [int(targets[-1])]
    sep_pos = ids.index(SEP_ID)
    assert not mask[: sep_pos].any()
    assert mask[sep_pos:].all()


def test_qa_arrays_full_sequence_mode():
    pair = small_pairs()[0]
    _, _, mask = qa_arrays(pair, context_len=256, answer_only=False)
    assert mask.all()


def test_qa_arrays_truncates_left():
    pair = QAPair("q" * 500, "a" * 100, "d", SectionKind.REASON, 0)
    inputs, targets, mask = qa_arrays(pair, context_len=128)
    assert inputs.shape[0] == 128


# --- training ---------------------------------------------------------------------


def test_train_requires_pairs_and_frozen_base(tiny_base):
    with pytest.raises(EmptyTrainingSet):
        train_adapter(tiny_base, [])
    thawed = BaseModel.create(GRADCHECK_CONFIG)
    with pytest.raises(ValueError, match="frozen"):
        train_adapter(thawed, small_pairs())


def test_train_lr_zero_keeps_factors(tiny_base):
    cfg = TrainConfig(lr=0.0, seed=5)
    adapter = train_adapter(tiny_base, small_pairs(), cfg)
    fresh = init_adapter(adapter.doc_id, tiny_base.config, rank=cfg.rank, alpha=cfg.alpha,
                         seed=cfg.seed, targets=cfg.targets)
    for name in adapter.factors:
        assert np.array_equal(adapter.factors[name][0], fresh.factors[name][0])
        assert np.array_equal(adapter.factors[name][1], fresh.factors[name][1])


def test_train_decreases_nll_and_preserves_base(tiny_base, qa_pairs_by_doc):
    doc_id, pairs = next(iter(qa_pairs_by_doc.items()))
    before_sum = tiny_base.checksum()
    before = mean_nll(tiny_base, pairs)
    adapter = train_adapter(tiny_base, pairs, TrainConfig(lr=1e-3, seed=2))
    after = mean_nll(tiny_base, pairs, adapter.deltas())
    assert after < before
    assert tiny_base.checksum() == before_sum
    assert adapter.final_loss == pytest.approx(after)
    assert adapter.doc_id == doc_id


def test_train_deterministic(tiny_base):
    a1 = train_adapter(tiny_base, small_pairs(), TrainConfig(seed=3))
    a2 = train_adapter(tiny_base, small_pairs(), TrainConfig(seed=3))
    for name in a1.factors:
        assert np.array_equal(a1.factors[name][0], a2.factors[name][0])
        assert np.array_equal(a1.factors[name][1], a2.factors[name][1])


# --- composition -------------------------------------------------------------------


def _trained_pair(tiny_base):
    a = train_adapter(tiny_base, small_pairs("doc-a"), TrainConfig(seed=1), doc_id="doc-a")
    b = train_adapter(tiny_base, small_pairs("doc-b"), TrainConfig(seed=2), doc_id="doc-b")
    return a, b


def test_compose_empty_is_zero_delta(tiny_base):
    delta = compose_deltas([])
    assert delta.empty
    rng = np.random.default_rng(1)
    toks = rng.integers(0, 260, size=16)
    assert np.array_equal(
        forward(toks, tiny_base),
        inject(tiny_base, delta).forward(toks),
    )


def test_compose_single_equals_adapter_delta(tiny_base):
    adapter, _ = _trained_pair(tiny_base)
    delta = compose_deltas([adapter])
    for name, arr in adapter.deltas().items():
        assert np.array_equal(delta.deltas[name], arr)
    assert delta.doc_ids == ("doc-a",)


def test_compose_input_order_invariant_bitwise(tiny_base):
    a, b = _trained_pair(tiny_base)
    d1 = compose_deltas([a, b])
    d2 = compose_deltas([b, a])
    assert d1.doc_ids == d2.doc_ids == ("doc-a", "doc-b")
    for name in d1.deltas:
        assert np.array_equal(d1.deltas[name], d2.deltas[name])


def test_compose_rejects_config_mismatch(tiny_base):
    a, _ = _trained_pair(tiny_base)
    other = init_adapter("doc-z", GRADCHECK_CONFIG, seed=1)
    with pytest.raises(ConfigMismatch):
        compose_deltas([a, other])


def test_sequential_injection_equals_composed(tiny_base):
    a, b = _trained_pair(tiny_base)
    seq = inject(tiny_base, compose_deltas([a]), compose_deltas([b]))
    together = inject(tiny_base, compose_deltas([a, b]))
    for name in together.combined:
        assert np.array_equal(seq.combined[name], together.combined[name])
    rng = np.random.default_rng(2)
    toks = rng.integers(0, 260, size=20)
    assert np.array_equal(seq.forward(toks), together.forward(toks))


def test_inject_none_behaves_like_base(tiny_base):
    handle = inject(tiny_base)
    rng = np.random.default_rng(3)
    toks = rng.integers(0, 260, size=10)
    assert np.array_equal(handle.forward(toks), forward(toks, tiny_base))
    assert handle.generate("abc", max_tokens=5, temperature=0.0, seed=0) == \
        handle.generate("abc", max_tokens=5, temperature=0.0, seed=9)


def test_inject_rejects_config_mismatch(tiny_base):
    foreign = init_adapter("doc-x", GRADCHECK_CONFIG, seed=0)
    delta = compose_deltas([foreign])
    with pytest.raises(ConfigMismatch):
        inject(tiny_base, delta)


def test_scaling_contract():
    # delta scales linearly with alpha and inversely with rank at fixed factors
    base_adapter = init_adapter("d", GRADCHECK_CONFIG, rank=2, alpha=32.0, seed=8)
    rng = np.random.default_rng(12)
    for name in base_adapter.factors:
        a, b = base_adapter.factors[name]
        b[...] = rng.normal(0, 0.02, b.shape).astype(np.float32)
    doubled = LoraAdapter(
        doc_id="d", rank=2, alpha=64.0, config_hash=base_adapter.config_hash,
        seed=8, targets=base_adapter.targets, factors=base_adapter.factors,
    )
    halved_rank = LoraAdapter(
        doc_id="d", rank=1, alpha=32.0, config_hash=base_adapter.config_hash,
        seed=8, targets=base_adapter.targets, factors=base_adapter.factors,
    )
    for name in base_adapter.factors:
        d0 = base_adapter.delta(name)
        assert np.linalg.norm(doubled.delta(name) - 2.0 * d0) < 1e-6
        assert np.linalg.norm(halved_rank.delta(name) - 2.0 * d0) < 1e-6


# --- persistence --------------------------------------------------------------------


def test_adapter_round_trip_bit_exact(tiny_base, tmp_path):
    adapter = train_adapter(tiny_base, small_pairs(), TrainConfig(seed=6))
    path = tmp_path / "doc-a.plca"
    save_adapter(adapter, path)
    loaded = load_adapter(path)
    assert loaded.doc_id == adapter.doc_id
    assert loaded.rank == adapter.rank
    assert loaded.alpha == adapter.alpha
    assert loaded.seed == adapter.seed
    assert loaded.config_hash == adapter.config_hash
    assert loaded.targets == adapter.targets
    assert loaded.hyper == adapter.hyper
    assert loaded.final_loss == adapter.final_loss
    for name in adapter.factors:
        assert np.array_equal(loaded.factors[name][0], adapter.factors[name][0])
        assert np.array_equal(loaded.factors[name][1], adapter.factors[name][1])


def test_adapter_corruption_detected(tiny_base, tmp_path):
    adapter = init_adapter("doc-c", tiny_base.config, seed=0)
    path = tmp_path / "c.plca"
    save_adapter(adapter, path)
    data = bytearray(path.read_bytes())
    data[-20] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumFailure):
        load_adapter(path)


def test_adapter_version_mismatch(tiny_base, tmp_path):
    import hashlib
    import struct

    adapter = init_adapter("doc-v", tiny_base.config, seed=0)
    path = tmp_path / "v.plca"
    save_adapter(adapter, path)
    data = bytearray(path.read_bytes())
    struct.pack_into("<I", data, 4, 99)  # bump version, then re-sign
    body = bytes(data[:-8])
    digest = int.from_bytes(hashlib.blake2b(body, digest_size=8).digest(), "little")
    struct.pack_into("<Q", data, len(data) - 8, digest)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        load_adapter(path)


def test_composed_delta_round_trip(tiny_base, tmp_path):
    a, b = _trained_pair(tiny_base)
    delta = compose_deltas([a, b])
    path = tmp_path / "offline.plcd"
    save_delta(delta, path)
    loaded = load_delta(path)
    assert loaded.doc_ids == delta.doc_ids
    assert loaded.config_hash == delta.config_hash
    for name in delta.deltas:
        assert np.array_equal(loaded.deltas[name], delta.deltas[name])
