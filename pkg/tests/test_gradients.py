"""Finite-difference verification of the adapter-factor backward pass.

Relative error uses the usual gradcheck guard: the denominator is floored so
coordinates whose true gradient sits at the truncation-noise level do not
blow up the ratio. With step 1e-3 and the alpha/rank = 16 delta scaling, the
central-difference truncation on this loss is ~2e-7 absolute, so the floor is
set a safe two decades above typical gradient noise while the strict absolute
cap (1e-6) still catches any systematic error on small coordinates.
"""

from __future__ import annotations

import numpy as np
import pytest

from parajudge.model import BaseModel, backward, forward, nll_loss, nll_loss_and_grad
from parajudge.model.transformer import ffn_host_names, host_shape

from conftest import GRADCHECK_CONFIG

FD_STEP = 1e-3
REL_TOL = 1e-4
ABS_CAP = 1e-6
GRAD_FLOOR = 1e-2


def random_factors(config, rng, rank=2, zero_b=False):
    factors = {}
    for name in ffn_host_names(config):
        out_dim, in_dim = host_shape(config, name)
        a = rng.normal(0.0, 0.02, size=(out_dim, rank))
        b = np.zeros((in_dim, rank)) if zero_b else rng.normal(0.0, 0.02, size=(in_dim, rank))
        factors[name] = (a, b)
    return factors


def make_problem(seed=7, zero_b=False, alpha=32.0, rank=2):
    base = BaseModel.create(GRADCHECK_CONFIG).freeze()
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 260, size=24)
    targets = rng.integers(0, 260, size=24)
    mask = np.ones(24, dtype=bool)
    mask[:8] = False
    factors = random_factors(GRADCHECK_CONFIG, rng, rank=rank, zero_b=zero_b)
    scale = alpha / rank

    def deltas():
        return {n: scale * (a @ b.T) for n, (a, b) in factors.items()}

    def loss():
        return nll_loss(forward(toks, base, deltas=deltas()), targets, mask)

    def grads():
        logits, trace = forward(toks, base, deltas=deltas(), record=True)
        _, dlogits = nll_loss_and_grad(logits, targets, mask)
        specs = {n: (a, b, scale) for n, (a, b) in factors.items()}
        return backward(trace, dlogits, factor_specs=specs).factor_grads

    return base, factors, loss, grads


def central_difference(loss, mat, i, j, h=FD_STEP):
    orig = mat[i, j]
    mat[i, j] = orig + h
    plus = loss()
    mat[i, j] = orig - h
    minus = loss()
    mat[i, j] = orig
    return (plus - minus) / (2.0 * h)


def test_factor_gradients_match_finite_differences():
    _, factors, loss, grads = make_problem()
    analytic = grads()
    rng = np.random.default_rng(101)
    checked = 0
    for name, (da, db) in analytic.items():
        a, b = factors[name]
        for mat, grad in ((a, da), (b, db)):
            for _ in range(20):
                i = int(rng.integers(mat.shape[0]))
                j = int(rng.integers(mat.shape[1]))
                fd = central_difference(loss, mat, i, j)
                g = grad[i, j]
                rel = abs(g - fd) / max(abs(g), abs(fd), GRAD_FLOOR)
                assert rel < REL_TOL, (name, i, j, g, fd)
                assert abs(g - fd) < ABS_CAP, (name, i, j, g, fd)
                checked += 1
    assert checked == 20 * 2 * len(analytic)


def test_zero_partner_factor_receives_zero_gradient():
    # B starts all-zero, so the loss is locally flat in A: dA must be exactly 0
    # while dB carries signal through the random A.
    _, _, _, grads = make_problem(zero_b=True)
    analytic = grads()
    some_db_nonzero = False
    for name, (da, db) in analytic.items():
        assert np.all(da == 0.0), name
        some_db_nonzero = some_db_nonzero or np.any(db != 0.0)
    assert some_db_nonzero


def test_doubling_alpha_doubles_first_step_gradients():
    # with B = 0 the delta is 0 regardless of alpha, so the forward pass is
    # identical and dB scales exactly linearly with alpha
    _, _, _, grads16 = make_problem(zero_b=True, alpha=16.0)
    _, _, _, grads32 = make_problem(zero_b=True, alpha=32.0)
    g16 = grads16()
    g32 = grads32()
    for name in g16:
        _, db16 = g16[name]
        _, db32 = g32[name]
        assert np.allclose(db32, 2.0 * db16, rtol=1e-12, atol=0.0)


def test_base_parameters_receive_no_gradient_in_factor_mode():
    _, factors, _, _ = make_problem()
    base = BaseModel.create(GRADCHECK_CONFIG).freeze()
    rng = np.random.default_rng(3)
    toks = rng.integers(0, 260, size=12)
    targets = rng.integers(0, 260, size=12)
    scale = 16.0
    deltas = {n: scale * (a @ b.T) for n, (a, b) in factors.items()}
    logits, trace = forward(toks, base, deltas=deltas, record=True)
    _, dlogits = nll_loss_and_grad(logits, targets)
    specs = {n: (a, b, scale) for n, (a, b) in factors.items()}
    result = backward(trace, dlogits, factor_specs=specs, with_base=False)
    assert result.base_grads == {}
    assert set(result.factor_grads) == set(specs)


def test_base_gradients_match_finite_differences_spot_check():
    base = BaseModel.create(GRADCHECK_CONFIG).freeze()
    rng = np.random.default_rng(17)
    toks = rng.integers(0, 260, size=16)
    targets = rng.integers(0, 260, size=16)

    def loss():
        base._f64 = None  # params were mutated in place by the probe
        return nll_loss(forward(toks, base), targets)

    logits, trace = forward(toks, base, record=True)
    _, dlogits = nll_loss_and_grad(logits, targets)
    grads = backward(trace, dlogits, with_base=True).base_grads
    for name in ("head.w", "layers.0.attn.wq", "layers.1.ffn.w1", "ln_f.g"):
        p = base.params[name]
        g = grads[name]
        for _ in range(5):
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            orig = p[idx]
            p[idx] = orig + 1e-3
            plus = loss()
            p[idx] = orig - 1e-3
            minus = loss()
            p[idx] = orig
            base._f64 = None
            fd = (plus - minus) / 2e-3
            rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), GRAD_FLOOR)
            assert rel < 5e-3, (name, idx, g[idx], fd)
