"""Per-document low-rank adapters: create, train, compose, inject, persist.

Each document is encoded as a pair of thin factors per host FFN matrix:
A (out_dim, r) drawn from a seeded normal, B (in_dim, r) all zero, so a fresh
adapter contributes exactly nothing (``delta = (alpha/r) * A @ B.T = 0``) and
the injected model is bit-identical to the base. Training the factors on the
document's QA pairs (query and answer concatenated around a SEP token, mean
next-token loss over the answer span by default) turns the adapter into the
parametric representation of that document.

Adapters attach to both FFN matrices of every layer by default; pass
``targets=("w1",)`` for the narrow variant. Composition sums scaled factor
products per host matrix in ascending doc-id order, which makes the result
independent of input order, bit for bit.

Adapter file layout (integers little-endian):

    magic b"PLCA" | u32 version=1
    | u32 meta_len | metadata JSON (doc_id, rank, alpha, seed, config_hash,
        targets, hyper, final_loss)
    | u32 n_hosts | per host: u16 name_len, name bytes,
        u32 a_rows, u32 a_cols, u32 b_rows, u32 b_cols
    | raw little-endian float32 data, row-major, A then B per host in table order
    | u64 trailing checksum (BLAKE2b-8 of every preceding byte)

Composed deltas persist analogously under magic b"PLCD", with float64 payload
(one dense matrix per host) and the provenance doc-id list in the metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augmentation import QAPair
from .errors import (
    BadRank,
    ChecksumFailure,
    ConfigMismatch,
    EmptyTrainingSet,
    FormatError,
    VersionMismatch,
)
from .model import (
    Adam,
    BOS_ID,
    BaseModel,
    ByteTokenizer,
    EOS_ID,
    SEP_ID,
    backward_lora,
    ffn_host_names,
    forward,
    generate,
    host_shape,
    nll_loss,
    nll_loss_and_grad,
)

_MAGIC = b"PLCA"
_DELTA_MAGIC = b"PLCD"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Adapter training hyperparameters.

    The desk-scale default lr is 1e-3: plain low-rank training at 1e-5 makes
    no visible progress on a small freshly pretrained base within one epoch.
    ``CONSERVATIVE_TRAIN_CONFIG`` keeps the 1e-5 setting for use with larger,
    better-pretrained bases.
    """

    lr: float = 1e-3
    epochs: int = 1
    rank: int = 2
    alpha: float = 32.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    answer_only_loss: bool = True
    targets: tuple[str, ...] = ("w1", "w2")
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


CONSERVATIVE_TRAIN_CONFIG = TrainConfig(lr=1e-5)


@dataclass
class LoraAdapter:
    """Low-rank delta factors for one document, plus creation metadata."""

    doc_id: str
    rank: int
    alpha: float
    config_hash: str
    seed: int
    targets: tuple[str, ...]
    factors: dict[str, tuple[np.ndarray, np.ndarray]]
    hyper: dict = field(default_factory=dict)
    final_loss: float | None = None

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def delta(self, name: str) -> np.ndarray:
        a, b = self.factors[name]
        return self.scale * (a.astype(np.float64) @ b.astype(np.float64).T)

    def deltas(self) -> dict[str, np.ndarray]:
        return {name: self.delta(name) for name in self.factors}

    def factor_specs(self) -> dict[str, tuple[np.ndarray, np.ndarray, float]]:
        return {
            name: (a.astype(np.float64), b.astype(np.float64), self.scale)
            for name, (a, b) in self.factors.items()
        }


def init_adapter(
    doc_id: str,
    config,
    rank: int = 2,
    alpha: float = 32.0,
    seed: int = 0,
    targets: Sequence[str] = ("w1", "w2"),
) -> LoraAdapter:
    """Fresh adapter: A ~ N(0, 0.02), B = 0, so the initial delta is zero."""
    if rank < 1 or rank >= min(config.d_model, config.d_ffn):
        raise BadRank(
            f"rank {rank} invalid for d_model={config.d_model}, d_ffn={config.d_ffn}"
        )
    rng = np.random.default_rng(seed)
    factors: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name in ffn_host_names(config, targets):
        out_dim, in_dim = host_shape(config, name)
        a = rng.normal(0.0, 0.02, size=(out_dim, rank)).astype(np.float32)
        b = np.zeros((in_dim, rank), dtype=np.float32)
        factors[name] = (a, b)
    return LoraAdapter(
        doc_id=doc_id,
        rank=rank,
        alpha=float(alpha),
        config_hash=config.config_hash(),
        seed=seed,
        targets=tuple(targets),
        factors=factors,
    )


# --- QA sequences --------------------------------------------------------------


def qa_token_ids(pair: QAPair) -> list[int]:
    tok = ByteTokenizer()
    return [BOS_ID] + tok.encode(pair.query_text) + [SEP_ID] + tok.encode(pair.answer_text) + [EOS_ID]


def qa_arrays(pair: QAPair, context_len: int, answer_only: bool = True):
    """Input/target/mask arrays for one pair, truncated left to the context."""
    ids = qa_token_ids(pair)
    if len(ids) > context_len + 1:
        ids = ids[-(context_len + 1) :]
    arr = np.asarray(ids, dtype=np.int64)
    inputs, targets = arr[:-1], arr[1:]
    if answer_only and SEP_ID in ids:
        sep_pos = ids.index(SEP_ID)
        mask = np.arange(targets.shape[0]) >= sep_pos
    else:
        mask = np.ones(targets.shape[0], dtype=bool)
    return inputs, targets, mask


def mean_nll(
    base: BaseModel,
    qa_pairs: Sequence[QAPair],
    deltas: Mapping[str, np.ndarray] | None = None,
    answer_only: bool = True,
) -> float:
    """Mean per-pair NLL of the QA pairs under base (+ optional deltas)."""
    if not qa_pairs:
        raise EmptyTrainingSet("no QA pairs to evaluate")
    total = 0.0
    for pair in qa_pairs:
        inputs, targets, mask = qa_arrays(pair, base.config.context_len, answer_only)
        logits = forward(inputs, base, deltas=deltas)
        total += nll_loss(logits, targets, mask)
    return total / len(qa_pairs)


def train_adapter(
    base: BaseModel,
    qa_pairs: Sequence[QAPair],
    train_cfg: TrainConfig = TrainConfig(),
    doc_id: str | None = None,
) -> LoraAdapter:
    """Train a fresh adapter on a document's QA pairs; the base never changes.

    Pairs are visited in list order for the configured number of epochs, one
    optimizer step per pair. The returned adapter records its hyperparameters
    and the post-training mean NLL over its pairs.
    """
    if not qa_pairs:
        raise EmptyTrainingSet("adapter training requires at least one QA pair")
    if not base.frozen:
        raise ValueError("base model must be frozen before adapter training")
    doc_id = doc_id if doc_id is not None else qa_pairs[0].doc_id
    adapter = init_adapter(
        doc_id,
        base.config,
        rank=train_cfg.rank,
        alpha=train_cfg.alpha,
        seed=train_cfg.seed,
        targets=train_cfg.targets,
    )
    opt = Adam(beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    flat_params: dict[str, np.ndarray] = {}
    for name, (a, b) in adapter.factors.items():
        flat_params[name + ".A"] = a
        flat_params[name + ".B"] = b
    for _ in range(train_cfg.epochs):
        for pair in qa_pairs:
            inputs, targets, mask = qa_arrays(pair, base.config.context_len, train_cfg.answer_only_loss)
            logits, trace = forward(inputs, base, deltas=adapter.deltas(), record=True)
            _, dlogits = nll_loss_and_grad(logits, targets, mask)
            fgrads = backward_lora(trace, dlogits, adapter.factor_specs())
            flat_grads: dict[str, np.ndarray] = {}
            for name, (da, db) in fgrads.items():
                flat_grads[name + ".A"] = da
                flat_grads[name + ".B"] = db
            opt.step(flat_params, flat_grads, train_cfg.lr)
    adapter.hyper = train_cfg.to_dict()
    adapter.final_loss = mean_nll(base, qa_pairs, adapter.deltas(), train_cfg.answer_only_loss)
    return adapter


# --- composition and injection ---------------------------------------------------


@dataclass
class ComposedDelta:
    """Per-matrix sum of adapter deltas with provenance."""

    deltas: dict[str, np.ndarray]
    doc_ids: tuple[str, ...]
    config_hash: str | None

    @property
    def empty(self) -> bool:
        return not self.deltas


def compose_deltas(adapters: Sequence[LoraAdapter]) -> ComposedDelta:
    """Sum adapter deltas in ascending doc-id order (input-order invariant)."""
    if not adapters:
        return ComposedDelta(deltas={}, doc_ids=(), config_hash=None)
    hashes = {a.config_hash for a in adapters}
    if len(hashes) != 1:
        raise ConfigMismatch(f"adapters built for different configs: {sorted(hashes)}")
    ordered = sorted(adapters, key=lambda a: a.doc_id)
    out: dict[str, np.ndarray] = {}
    for adapter in ordered:
        for name, delta in adapter.deltas().items():
            if name in out:
                out[name] = out[name] + delta
            else:
                out[name] = delta
    return ComposedDelta(deltas=out, doc_ids=tuple(a.doc_id for a in ordered), config_hash=hashes.pop())


class EffectiveModel:
    """A read-only view of the base with composed deltas applied to the FFNs.

    Deltas are combined in the order given (corpus-wide first, per-query
    second); the base parameters are never touched.
    """

    def __init__(self, base: BaseModel, *deltas: ComposedDelta | None):
        self.base = base
        self.provenance: list[tuple[str, ...]] = []
        combined: dict[str, np.ndarray] = {}
        for delta in deltas:
            if delta is None or delta.empty:
                self.provenance.append(() if delta is None else delta.doc_ids)
                continue
            if delta.config_hash is not None and delta.config_hash != base.config.config_hash():
                raise ConfigMismatch(
                    f"delta built for config {delta.config_hash}, base is {base.config.config_hash()}"
                )
            for name, arr in delta.deltas.items():
                combined[name] = combined[name] + arr if name in combined else arr.copy()
            self.provenance.append(delta.doc_ids)
        self.combined: dict[str, np.ndarray] | None = combined or None

    def forward(self, tokens, record: bool = False):
        return forward(tokens, self.base, deltas=self.combined, record=record)

    def generate(self, prompt: str, max_tokens: int, temperature: float = 0.7, seed: int = 0) -> str:
        return generate(self.base, self.combined, prompt, max_tokens, temperature, seed)

    def mean_nll(self, qa_pairs: Sequence[QAPair], answer_only: bool = True) -> float:
        return mean_nll(self.base, qa_pairs, self.combined, answer_only)


def inject(
    base: BaseModel,
    offline_delta: ComposedDelta | None = None,
    online_delta: ComposedDelta | None = None,
) -> EffectiveModel:
    """Merge corpus-wide and per-query deltas into an evaluable handle."""
    return EffectiveModel(base, offline_delta, online_delta)


# --- persistence ----------------------------------------------------------------


def _digest64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def save_adapter(adapter: LoraAdapter, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "doc_id": adapter.doc_id,
        "rank": adapter.rank,
        "alpha": adapter.alpha,
        "seed": adapter.seed,
        "config_hash": adapter.config_hash,
        "targets": list(adapter.targets),
        "hyper": adapter.hyper,
        "final_loss": adapter.final_loss,
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<I", _VERSION)
    buf += struct.pack("<I", len(meta_raw)) + meta_raw
    names = list(adapter.factors)
    buf += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        a, b = adapter.factors[name]
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<IIII", a.shape[0], a.shape[1], b.shape[0], b.shape[1])
    for name in names:
        a, b = adapter.factors[name]
        buf += a.astype("<f4").tobytes(order="C")
        buf += b.astype("<f4").tobytes(order="C")
    buf += struct.pack("<Q", _digest64(bytes(buf)))
    path.write_bytes(bytes(buf))
    return path


def load_adapter(path: str | Path) -> LoraAdapter:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise FormatError("bad adapter magic", path=str(path))
    (stored_sum,) = struct.unpack_from("<Q", data, len(data) - 8)
    if _digest64(data[:-8]) != stored_sum:
        raise ChecksumFailure(f"adapter {path} failed its integrity check")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != _VERSION:
        raise VersionMismatch(f"unsupported adapter version {version}")
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_hosts,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table: list[tuple[str, tuple[int, int], tuple[int, int]]] = []
    for _ in range(n_hosts):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        a_r, a_c, b_r, b_c = struct.unpack_from("<IIII", data, pos)
        pos += 16
        table.append((name, (a_r, a_c), (b_r, b_c)))
    factors: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name, a_shape, b_shape in table:
        a_count = a_shape[0] * a_shape[1]
        b_count = b_shape[0] * b_shape[1]
        a = np.frombuffer(data, dtype="<f4", count=a_count, offset=pos).reshape(a_shape).copy()
        pos += 4 * a_count
        b = np.frombuffer(data, dtype="<f4", count=b_count, offset=pos).reshape(b_shape).copy()
        pos += 4 * b_count
        factors[name] = (a, b)
    if pos != len(data) - 8:
        raise FormatError("adapter payload length mismatch", path=str(path))
    return LoraAdapter(
        doc_id=meta["doc_id"],
        rank=meta["rank"],
        alpha=meta["alpha"],
        config_hash=meta["config_hash"],
        seed=meta["seed"],
        targets=tuple(meta["targets"]),
        factors=factors,
        hyper=meta.get("hyper", {}),
        final_loss=meta.get("final_loss"),
    )


def save_delta(delta: ComposedDelta, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"doc_ids": list(delta.doc_ids), "config_hash": delta.config_hash}
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += _DELTA_MAGIC
    buf += struct.pack("<I", _VERSION)
    buf += struct.pack("<I", len(meta_raw)) + meta_raw
    names = list(delta.deltas)
    buf += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        arr = delta.deltas[name]
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<II", arr.shape[0], arr.shape[1])
    for name in names:
        buf += delta.deltas[name].astype("<f8").tobytes(order="C")
    buf += struct.pack("<Q", _digest64(bytes(buf)))
    path.write_bytes(bytes(buf))
    return path


def load_delta(path: str | Path) -> ComposedDelta:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _DELTA_MAGIC:
        raise FormatError("bad composed-delta magic", path=str(path))
    (stored_sum,) = struct.unpack_from("<Q", data, len(data) - 8)
    if _digest64(data[:-8]) != stored_sum:
        raise ChecksumFailure(f"composed delta {path} failed its integrity check")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != _VERSION:
        raise VersionMismatch(f"unsupported composed-delta version {version}")
    (meta_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    meta = json.loads(data[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_hosts,) = struct.unpack_from("<I", data, pos)
    pos += 4
    table: list[tuple[str, tuple[int, int]]] = []
    for _ in range(n_hosts):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        table.append((name, (rows, cols)))
    deltas: dict[str, np.ndarray] = {}
    for name, shape in table:
        count = shape[0] * shape[1]
        deltas[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(data) - 8:
        raise FormatError("composed-delta payload length mismatch", path=str(path))
    return ComposedDelta(deltas=deltas, doc_ids=tuple(meta["doc_ids"]), config_hash=meta["config_hash"])
