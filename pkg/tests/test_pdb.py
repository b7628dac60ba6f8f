import numpy as np
import pytest

from times2d import autodiff as ad
from times2d.autodiff import Tensor
from times2d.params import ParamStore
from times2d.pdb import (
    AttentionParams,
    BranchOutput,
    ConfigError,
    FfnParams,
    PeriodicDecompositionBlock,
    branch_merge,
    ffn,
    merge_weights,
    mhsa,
    positional_encoding,
)
from times2d.spectral import PeriodEntry, PeriodSet, period_for

from conftest import param_fd_errors


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def attn_params(rng, d):
    w = lambda: t64(rng.normal(size=(d, d)) / np.sqrt(d))
    b = lambda: t64(rng.normal(size=d) * 0.1)
    return AttentionParams(w(), b(), w(), w(), b(), w(), b())


def test_positional_encoding_row_zero():
    pe = positional_encoding(5, 8)
    assert pe[0].tolist() == [0, 1, 0, 1, 0, 1, 0, 1]


def test_positional_encoding_range():
    pe = positional_encoding(200, 33)
    assert pe.shape == (200, 33)
    assert np.all(np.abs(pe) <= 1.0)


def test_single_token_attention_is_value_projection(rng):
    p = attn_params(rng, 8)
    x = t64(rng.normal(size=(3, 1, 8)))
    out = mhsa(x, p, heads=2).data
    v = x.data @ p.v_w.data + p.v_b.data
    np.testing.assert_allclose(out, v @ p.o_w.data + p.o_b.data, atol=1e-12)


def test_attention_is_permutation_equivariant(rng):
    p = attn_params(rng, 8)
    x = rng.normal(size=(2, 5, 8))
    perm = rng.permutation(5)
    a = mhsa(t64(x), p, heads=4).data
    b = mhsa(t64(x[:, perm]), p, heads=4).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_attention_indivisible_heads(rng):
    with pytest.raises(ConfigError):
        mhsa(t64(np.zeros((1, 2, 6))), attn_params(rng, 6), heads=4)


def test_attention_matches_reference(rng):
    d, h = 8, 2
    p = attn_params(rng, d)
    x = rng.normal(size=(1, 4, d))
    q = x[0] @ p.q_w.data + p.q_b.data
    k = x[0] @ p.k_w.data
    v = x[0] @ p.v_w.data + p.v_b.data
    heads = []
    for i in range(h):
        s = slice(i * 4, (i + 1) * 4)
        sc = q[:, s] @ k[:, s].T / 2.0
        w = np.exp(sc - sc.max(axis=1, keepdims=True))
        heads.append((w / w.sum(axis=1, keepdims=True)) @ v[:, s])
    ref = np.concatenate(heads, axis=1) @ p.o_w.data + p.o_b.data
    np.testing.assert_allclose(mhsa(t64(x), p, h).data[0], ref, atol=1e-12)


def test_ffn_zero_weights():
    z = FfnParams(t64(np.zeros((4, 6))), t64(np.zeros(6)), t64(np.zeros((6, 4))), t64(np.zeros(4)))
    assert np.array_equal(ffn(t64(np.ones((2, 3, 4))), z).data, np.zeros((2, 3, 4)))


def test_ffn_identity_reduces_to_gelu(rng):
    eye = FfnParams(t64(np.eye(4)), t64(np.zeros(4)), t64(np.eye(4)), t64(np.zeros(4)))
    x = t64(rng.normal(size=(2, 3, 4)))
    assert np.array_equal(ffn(x, eye).data, ad.gelu(x).data)


def test_merge_single_branch_identity(rng):
    pred = t64(rng.normal(size=(2, 3, 1)))
    assert branch_merge([BranchOutput(pred, 7.0)]) is pred


def test_merge_equal_amplitudes_is_mean(rng):
    a, b = rng.normal(size=(2, 3, 1)), rng.normal(size=(2, 3, 1))
    out = branch_merge([BranchOutput(t64(a), 2.0), BranchOutput(t64(b), 2.0)]).data
    np.testing.assert_allclose(out, (a + b) / 2, atol=1e-15)


def test_merge_weights_sum_to_one_and_shift_invariant(rng):
    amps = rng.normal(size=5) * 10
    w = merge_weights(amps)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(merge_weights(amps + 123.4), w, atol=1e-14)


def test_merge_empty():
    with pytest.raises(ad.ContractError):
        branch_merge([])


def _block(N=2, P=4, seed=0, **kw):
    ps = ParamStore(seed, np.float64)
    opts = dict(d_model=8, d_ff=16, heads=2, c_mid=4, dropout=0.0)
    opts.update(kw)
    return ps, PeriodicDecompositionBlock(ps, N, P, **opts)


def _entry(S, f, amp=1.0):
    return PeriodEntry(f, period_for(S, f), amp)


def test_zero_input_gives_zero_without_positional_encoding():
    _, blk = _block(use_pos_enc=False)
    out = blk.branch_forward(t64(np.zeros((2, 12, 2))), _entry(12, 3)).prediction
    assert np.array_equal(out.data, np.zeros((2, 4, 2)))


@pytest.mark.parametrize("seed", range(12))
def test_branch_shape_sweep(seed):
    r = np.random.default_rng(seed)
    B, N = (int(v) for v in r.integers(1, 4, size=2))
    S, P = int(r.integers(4, 40)), int(r.integers(1, 20))
    f = int(r.integers(1, S // 2 + 1))
    _, blk = _block(N=N, P=P, seed=seed)
    out = blk.branch_forward(t64(r.normal(size=(B, S, N))), _entry(S, f))
    assert out.prediction.shape == (B, P, N)


def test_forward_shape_and_determinism(rng):
    x = rng.normal(size=(3, 16, 2))
    periods = PeriodSet((_entry(16, 2, 3.0), _entry(16, 4, 1.0)), 16)
    outs = []
    for _ in range(2):
        _, blk = _block(seed=5)
        outs.append(blk.forward(t64(x), periods).data)
    assert outs[0].shape == (3, 4, 2)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_shape_parameters_created_lazily():
    ps, blk = _block()
    assert not ps.named("pdb.shape.")
    blk.branch_forward(t64(np.ones((1, 12, 2))), _entry(12, 3))
    assert sorted(ps.named("pdb.shape.")) == [
        "pdb.shape.p4_f3.embed.bias",
        "pdb.shape.p4_f3.embed.weight",
        "pdb.shape.p4_f3.head.bias",
        "pdb.shape.p4_f3.head.weight",
    ]


def test_dropout_only_in_training(rng):
    _, blk = _block(dropout=0.5)
    x = t64(rng.normal(size=(2, 12, 2)))
    e = _entry(12, 3)
    a = blk.branch_forward(x, e, np.random.default_rng(0), training=False).prediction.data
    b = blk.branch_forward(x, e, np.random.default_rng(1), training=False).prediction.data
    c = blk.branch_forward(x, e, np.random.default_rng(0), training=True).prediction.data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_block_gradients(rng):
    ps, blk = _block(depth=2)
    x = t64(rng.normal(size=(1, 12, 2)))
    periods = PeriodSet((_entry(12, 3, 2.0), _entry(12, 2, 1.0)), 12)
    blk.forward(x, periods)
    for name, p in ps.items():
        if name.endswith(("bias", "beta")):
            p.data[:] = rng.normal(size=p.shape) * 0.1
    probe = t64(rng.normal(size=(1, 4, 2)))
    errs = param_fd_errors(ps, lambda: ad.sum_(ad.mul(blk.forward(x, periods), probe)))
    assert max(errs.values()) < 1e-4, {k: v for k, v in errs.items() if v >= 1e-4}
