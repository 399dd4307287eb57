"""A small decoder-only transformer with a hand-written backward pass.

Architecture: learned token + position embeddings, pre-norm blocks
(multi-head causal self-attention, then a GELU feed-forward), a final
layer norm, and an untied output projection. Weights are stored
(out_dim, in_dim), so a linear layer computes ``y = x @ W.T`` and a low-rank
update with factors A (out_dim, r) and B (in_dim, r) lands on the host shape
as ``scale * A @ B.T``. The activation must stay smooth: finite-difference
gradient checks step across kinks otherwise.

Numerics: parameters live in float32; every forward/backward computation is
carried out in float64 (cast on entry). That is what lets analytic gradients
match central finite differences to < 1e-4 relative error.

The backward pass propagates activation gradients through the whole stack
but only materializes parameter gradients on request: all base parameters
(pretraining) or just the low-rank factors attached to the FFN matrices
(adapter training). The frozen base is never mutated by adapter work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import hashlib

import numpy as np

from ..corpus import CorpusStore
from ..errors import AllMasked, ContextOverflow, EmptyCorpus, NoTrace
from .config import ModelConfig
from .optim import Adam
from .tokenizer import BOS_ID, EOS_ID, ByteTokenizer

_LN_EPS = 1e-5


def _matrix_names(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    """All parameter names with shapes, in canonical construction order."""
    d, f, v, ctx = config.d_model, config.d_ffn, config.vocab_size, config.context_len
    names: list[tuple[str, tuple[int, int]]] = [("tok_emb", (v, d)), ("pos_emb", (ctx, d))]
    for i in range(config.n_layers):
        p = f"layers.{i}."
        names += [
            (p + "ln1.g", (d,)),  # type: ignore[list-item]
            (p + "ln1.b", (d,)),  # type: ignore[list-item]
            (p + "attn.wq", (d, d)),
            (p + "attn.wk", (d, d)),
            (p + "attn.wv", (d, d)),
            (p + "attn.wo", (d, d)),
            (p + "ln2.g", (d,)),  # type: ignore[list-item]
            (p + "ln2.b", (d,)),  # type: ignore[list-item]
            (p + "ffn.w1", (f, d)),
            (p + "ffn.w2", (d, f)),
        ]
    names += [("ln_f.g", (d,)), ("ln_f.b", (d,)), ("head.w", (v, d))]  # type: ignore[list-item]
    return names


def ffn_host_names(config: ModelConfig, targets: Sequence[str] = ("w1", "w2")) -> list[str]:
    """The FFN matrices adapters may attach to, in layer order."""
    out = []
    for i in range(config.n_layers):
        for t in targets:
            if t not in ("w1", "w2"):
                raise ValueError(f"unknown adapter target {t!r}")
            out.append(f"layers.{i}.ffn.{t}")
    return out


def host_shape(config: ModelConfig, name: str) -> tuple[int, int]:
    if name.endswith("ffn.w1"):
        return (config.d_ffn, config.d_model)
    if name.endswith("ffn.w2"):
        return (config.d_model, config.d_ffn)
    raise ValueError(f"{name} is not an adapter host matrix")


class BaseModel:
    """Frozen-able container of the transformer parameters."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], frozen: bool = False):
        self.config = config
        self.params = params
        self._frozen = frozen
        self._f64: dict[str, np.ndarray] | None = None

    @classmethod
    def create(cls, config: ModelConfig) -> "BaseModel":
        rng = np.random.default_rng(config.seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in _matrix_names(config):
            if name.endswith(".g"):
                params[name] = np.ones(shape, dtype=np.float32)
            elif name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=np.float32)
            else:
                params[name] = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        return cls(config, params, frozen=False)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "BaseModel":
        self._frozen = True
        self._f64 = None
        return self

    def f64_params(self) -> dict[str, np.ndarray]:
        if self._frozen:
            if self._f64 is None:
                self._f64 = {k: v.astype(np.float64) for k, v in self.params.items()}
            return self._f64
        return {k: v.astype(np.float64) for k, v in self.params.items()}

    def checksum(self) -> str:
        """Digest over all parameter bytes; invariant under adapter operations."""
        h = hashlib.blake2b(digest_size=16)
        for name in sorted(self.params):
            h.update(name.encode("utf-8"))
            h.update(self.params[name].astype("<f4").tobytes())
        return h.hexdigest()


@dataclass
class LayerTrace:
    xhat1: np.ndarray
    inv1: np.ndarray
    n1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    xhat2: np.ndarray
    inv2: np.ndarray
    n2: np.ndarray
    h_pre: np.ndarray
    w1_eff: np.ndarray
    w2_eff: np.ndarray


@dataclass
class Trace:
    tokens: np.ndarray
    params: dict[str, np.ndarray]
    layers: list[LayerTrace] = field(default_factory=list)
    xhat_f: np.ndarray | None = None
    inv_f: np.ndarray | None = None
    n_f: np.ndarray | None = None


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_K = 0.044715


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_K * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_K * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_C * (1.0 + 3.0 * _GELU_K * x**2)


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, xhat, inv


def _layernorm_backward(dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray, g: np.ndarray):
    dxhat = dy * g
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, hd = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * hd)


def forward(
    tokens: Sequence[int] | np.ndarray,
    base: BaseModel,
    deltas: Mapping[str, np.ndarray] | None = None,
    record: bool = False,
):
    """Run the model over a token sequence; returns (T, vocab) logits.

    ``deltas`` maps FFN parameter names to additive float64 updates (the
    composed low-rank deltas). With ``record=True`` the return value is
    ``(logits, trace)`` for a subsequent backward pass.
    """
    cfg = base.config
    toks = np.asarray(tokens, dtype=np.int64)
    if toks.ndim != 1 or toks.size == 0:
        raise ValueError("tokens must be a non-empty 1-D sequence")
    t = toks.shape[0]
    if t > cfg.context_len:
        raise ContextOverflow(f"sequence of {t} tokens exceeds context_len {cfg.context_len}")
    p = base.f64_params()
    trace = Trace(tokens=toks, params=p) if record else None

    x = p["tok_emb"][toks] + p["pos_emb"][:t]
    scale = 1.0 / np.sqrt(cfg.head_dim)
    causal = np.tril(np.ones((t, t), dtype=bool))

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        n1, xhat1, inv1 = _layernorm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = _split_heads(n1 @ p[pre + "attn.wq"].T, cfg.n_heads)
        k = _split_heads(n1 @ p[pre + "attn.wk"].T, cfg.n_heads)
        v = _split_heads(n1 @ p[pre + "attn.wv"].T, cfg.n_heads)
        scores = np.matmul(q, k.transpose(0, 2, 1)) * scale
        scores = np.where(causal, scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        expo = np.exp(scores)
        probs = expo / expo.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(np.matmul(probs, v))
        x = x + ctx @ p[pre + "attn.wo"].T

        n2, xhat2, inv2 = _layernorm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        w1_eff = p[pre + "ffn.w1"]
        w2_eff = p[pre + "ffn.w2"]
        if deltas:
            d1 = deltas.get(pre + "ffn.w1")
            d2 = deltas.get(pre + "ffn.w2")
            if d1 is not None:
                w1_eff = w1_eff + d1
            if d2 is not None:
                w2_eff = w2_eff + d2
        h_pre = n2 @ w1_eff.T
        h_act = _gelu(h_pre)
        x = x + h_act @ w2_eff.T

        if trace is not None:
            trace.layers.append(
                LayerTrace(
                    xhat1=xhat1, inv1=inv1, n1=n1, q=q, k=k, v=v, probs=probs, ctx=ctx,
                    xhat2=xhat2, inv2=inv2, n2=n2, h_pre=h_pre, w1_eff=w1_eff, w2_eff=w2_eff,
                )
            )

    n_f, xhat_f, inv_f = _layernorm(x, p["ln_f.g"], p["ln_f.b"])
    logits = n_f @ p["head.w"].T
    if trace is not None:
        trace.xhat_f, trace.inv_f, trace.n_f = xhat_f, inv_f, n_f
        return logits, trace
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _resolve_mask(loss_mask, t: int) -> np.ndarray:
    if loss_mask is None:
        return np.ones(t, dtype=bool)
    mask = np.asarray(loss_mask, dtype=bool)
    if mask.shape != (t,):
        raise ValueError(f"loss_mask shape {mask.shape} does not match {t} positions")
    return mask


def nll_loss(logits: np.ndarray, target_tokens, loss_mask=None) -> float:
    """Mean negative log-likelihood over unmasked positions."""
    targets = np.asarray(target_tokens, dtype=np.int64)
    if logits.shape[0] != targets.shape[0]:
        raise ValueError("logits and targets disagree on sequence length")
    mask = _resolve_mask(loss_mask, targets.shape[0])
    n = int(mask.sum())
    if n == 0:
        raise AllMasked("every position is masked out of the loss")
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    picked = logp[np.arange(targets.shape[0]), targets]
    return float(-picked[mask].mean())


def nll_loss_and_grad(logits: np.ndarray, target_tokens, loss_mask=None):
    """Loss plus its gradient w.r.t. the logits (zero on masked positions)."""
    targets = np.asarray(target_tokens, dtype=np.int64)
    mask = _resolve_mask(loss_mask, targets.shape[0])
    n = int(mask.sum())
    if n == 0:
        raise AllMasked("every position is masked out of the loss")
    logits64 = np.asarray(logits, dtype=np.float64)
    logp = _log_softmax(logits64)
    picked = logp[np.arange(targets.shape[0]), targets]
    loss = float(-picked[mask].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(targets.shape[0]), targets] -= 1.0
    dlogits[~mask] = 0.0
    dlogits /= n
    return loss, dlogits


@dataclass
class BackwardResult:
    factor_grads: dict[str, tuple[np.ndarray, np.ndarray]]
    base_grads: dict[str, np.ndarray]


def backward(
    trace: Trace | None,
    dlogits: np.ndarray,
    factor_specs: Mapping[str, tuple[np.ndarray, np.ndarray, float]] | None = None,
    with_base: bool = False,
) -> BackwardResult:
    """Backpropagate from logits.

    ``factor_specs`` maps an FFN host name to ``(A, B, scale)``; gradients
    come back as ``(dA, dB)`` per host. With ``with_base=True`` every base
    parameter gradient is produced as well (pretraining).
    """
    if trace is None or trace.n_f is None:
        raise NoTrace("forward must be run with record=True before backward")
    p = trace.params
    cfg_layers = len(trace.layers)
    t = trace.tokens.shape[0]
    factor_specs = factor_specs or {}
    fgrads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    bgrads: dict[str, np.ndarray] = {}

    dlogits = np.asarray(dlogits, dtype=np.float64)
    dn_f = dlogits @ p["head.w"]
    if with_base:
        bgrads["head.w"] = dlogits.T @ trace.n_f
    dx, dg, db = _layernorm_backward(dn_f, trace.xhat_f, trace.inv_f, p["ln_f.g"])
    if with_base:
        bgrads["ln_f.g"] = dg
        bgrads["ln_f.b"] = db

    for i in reversed(range(cfg_layers)):
        pre = f"layers.{i}."
        lt = trace.layers[i]
        # FFN block: x_out = x_in + gelu(n2 @ W1e.T) @ W2e.T
        d_ffn_out = dx
        h_act = _gelu(lt.h_pre)
        if with_base:
            bgrads[pre + "ffn.w2"] = d_ffn_out.T @ h_act
        spec = factor_specs.get(pre + "ffn.w2")
        if spec is not None:
            a, b, scale = spec
            fgrads[pre + "ffn.w2"] = (
                scale * (d_ffn_out.T @ (h_act @ b)),
                scale * (h_act.T @ (d_ffn_out @ a)),
            )
        dh_act = d_ffn_out @ lt.w2_eff
        dh_pre = dh_act * _gelu_grad(lt.h_pre)
        if with_base:
            bgrads[pre + "ffn.w1"] = dh_pre.T @ lt.n2
        spec = factor_specs.get(pre + "ffn.w1")
        if spec is not None:
            a, b, scale = spec
            fgrads[pre + "ffn.w1"] = (
                scale * (dh_pre.T @ (lt.n2 @ b)),
                scale * (lt.n2.T @ (dh_pre @ a)),
            )
        dn2 = dh_pre @ lt.w1_eff
        dx_ln2, dg, db = _layernorm_backward(dn2, lt.xhat2, lt.inv2, p[pre + "ln2.g"])
        if with_base:
            bgrads[pre + "ln2.g"] = dg
            bgrads[pre + "ln2.b"] = db
        dx = dx + dx_ln2

        # Attention block: x_mid = x_in + merge(probs @ v) @ Wo.T
        d_attn_out = dx
        dctx = d_attn_out @ p[pre + "attn.wo"]
        if with_base:
            bgrads[pre + "attn.wo"] = d_attn_out.T @ lt.ctx
        dctx_h = _split_heads(dctx, lt.q.shape[0])
        dprobs = np.matmul(dctx_h, lt.v.transpose(0, 2, 1))
        dv = np.matmul(lt.probs.transpose(0, 2, 1), dctx_h)
        row = (dprobs * lt.probs).sum(axis=-1, keepdims=True)
        dscores = lt.probs * (dprobs - row)
        scale = 1.0 / np.sqrt(lt.q.shape[-1])
        dq = np.matmul(dscores, lt.k) * scale
        dk = np.matmul(dscores.transpose(0, 2, 1), lt.q) * scale
        dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        dn1 = dq_m @ p[pre + "attn.wq"] + dk_m @ p[pre + "attn.wk"] + dv_m @ p[pre + "attn.wv"]
        if with_base:
            bgrads[pre + "attn.wq"] = dq_m.T @ lt.n1
            bgrads[pre + "attn.wk"] = dk_m.T @ lt.n1
            bgrads[pre + "attn.wv"] = dv_m.T @ lt.n1
        dx_ln1, dg, db = _layernorm_backward(dn1, lt.xhat1, lt.inv1, p[pre + "ln1.g"])
        if with_base:
            bgrads[pre + "ln1.g"] = dg
            bgrads[pre + "ln1.b"] = db
        dx = dx + dx_ln1

    if with_base:
        dtok = np.zeros_like(p["tok_emb"])
        np.add.at(dtok, trace.tokens, dx)
        bgrads["tok_emb"] = dtok
        dpos = np.zeros_like(p["pos_emb"])
        dpos[:t] = dx
        bgrads["pos_emb"] = dpos

    return BackwardResult(factor_grads=fgrads, base_grads=bgrads)


def backward_lora(
    trace: Trace | None,
    dlogits: np.ndarray,
    factor_specs: Mapping[str, tuple[np.ndarray, np.ndarray, float]],
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Gradients for the low-rank factors only; the base receives none."""
    return backward(trace, dlogits, factor_specs=factor_specs, with_base=False).factor_grads


# --- base pretraining ---------------------------------------------------------


def pretrain_base(
    base: BaseModel,
    store: CorpusStore,
    steps: int,
    lr: float,
    seed: int = 0,
    log_every: int = 50,
    log=None,
) -> BaseModel:
    """Next-token pretraining over the corpus raw text; freezes the base after.

    Gives the randomly initialized model minimal competence on the corpus
    format before any adapter is trained.
    """
    if base.frozen:
        raise ValueError("base model is frozen; create a fresh one to pretrain")
    if len(store) == 0:
        raise EmptyCorpus("cannot pretrain on an empty store")
    tok = ByteTokenizer()
    seqs = []
    for doc in store:
        ids = [BOS_ID] + tok.encode(doc.raw_text) + [EOS_ID]
        if len(ids) >= 2:
            seqs.append(np.asarray(ids, dtype=np.int64))
    if not seqs:
        raise EmptyCorpus("no trainable sequences in store")
    rng = np.random.default_rng(seed)
    opt = Adam()
    ctx = base.config.context_len
    losses: list[float] = []
    for step in range(steps):
        seq = seqs[int(rng.integers(len(seqs)))]
        if seq.shape[0] > ctx + 1:
            start = int(rng.integers(seq.shape[0] - ctx - 1 + 1))
            window = seq[start : start + ctx + 1]
        else:
            window = seq
        inputs, targets = window[:-1], window[1:]
        logits, trace = forward(inputs, base, record=True)
        loss, dlogits = nll_loss_and_grad(logits, targets)
        grads = backward(trace, dlogits, with_base=True).base_grads
        opt.step(base.params, grads, lr)
        losses.append(loss)
        if log is not None and ((step + 1) % log_every == 0 or step == 0):
            log(step=step + 1, loss=loss)
    base.freeze()
    return base


# --- sampling -----------------------------------------------------------------


def generate(
    base: BaseModel,
    deltas: Mapping[str, np.ndarray] | None,
    prompt: str,
    max_tokens: int,
    temperature: float = 0.7,
    seed: int = 0,
) -> str:
    """Autoregressive sampling with temperature-scaled softmax.

    The window slides (truncate-left) when prompt plus continuation exceed
    the context. Temperatures below 1e-6 switch to greedy argmax. Stops at
    EOS or after ``max_tokens``.
    """
    tok = ByteTokenizer()
    ids = [BOS_ID] + tok.encode(prompt)
    ctx = base.config.context_len
    rng = np.random.default_rng(seed)
    out: list[int] = []
    for _ in range(max_tokens):
        window = ids[-ctx:]
        logits = forward(window, base, deltas=deltas)[-1]
        if temperature < 1e-6:
            next_id = int(np.argmax(logits))
        else:
            scaled = logits / temperature
            scaled -= scaled.max()
            probs = np.exp(scaled)
            probs /= probs.sum()
            next_id = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
            next_id = min(next_id, base.config.vocab_size - 1)
        if next_id == EOS_ID:
            break
        ids.append(next_id)
        out.append(next_id)
    return tok.decode(out)
