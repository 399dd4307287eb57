"""Shared fixtures.

The pretrained tiny base is expensive (~10 s), so it is built once per
session and treated as read-only by every test that borrows it.
"""

from __future__ import annotations

import pytest

from parajudge.augmentation import BuiltinParaphraser, augment_case, expand_qa
from parajudge.model import BaseModel, ModelConfig, pretrain_base
from parajudge.synth import related_test_store, synth_store

TINY_CONFIG = ModelConfig(n_layers=2, d_model=64, n_heads=4, d_ffn=128, context_len=256, seed=0)
GRADCHECK_CONFIG = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ffn=64, context_len=64, seed=3)


@pytest.fixture(scope="session")
def offline_store():
    return synth_store(10, seed=42, kind="offline")


@pytest.fixture(scope="session")
def online_store():
    return synth_store(20, seed=43, kind="online")


@pytest.fixture(scope="session")
def test_store(online_store):
    return related_test_store(online_store, 5, seed=44)


@pytest.fixture(scope="session")
def paraphraser():
    return BuiltinParaphraser()


@pytest.fixture(scope="session")
def tiny_base(offline_store) -> BaseModel:
    base = BaseModel.create(TINY_CONFIG)
    return pretrain_base(base, offline_store, steps=300, lr=1e-3, seed=1)


@pytest.fixture(scope="session")
def random_frozen_base() -> BaseModel:
    return BaseModel.create(GRADCHECK_CONFIG).freeze()


@pytest.fixture(scope="session")
def qa_pairs_by_doc(offline_store, paraphraser):
    out = {}
    for doc in offline_store:
        aug = augment_case(doc, paraphraser, base_seed=7)
        out[doc.id] = expand_qa(aug)
    return out
