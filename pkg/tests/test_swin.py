import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from humusnet.autograd import DimensionError, Linear, finite_diff_check
from humusnet.swin import (
    MUST,
    RSTB,
    MustConfig,
    PatchExpand,
    PatchMerge,
    RSTBDown,
    RSTBUp,
    SwinLayer,
    TokenMix,
    WindowAttention,
    effective_window,
    image_to_tokens,
    patch_embed,
    patch_unembed,
    shifted_window_mask,
    tokens_to_image,
    window_partition,
    window_reverse,
)


def _split_qkv(attn):
    w = attn.qkv.weight.detach().double().numpy()
    bq = attn.q_bias.detach().double().numpy()
    bv = attn.v_bias.detach().double().numpy()
    d = attn.dim
    return w[:, :d], w[:, d : 2 * d], w[:, 2 * d :], bq, np.zeros(d), bv


def _randomize(module, gen):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_full_window_equals_global_attention(seed):
    gen = torch.Generator().manual_seed(seed)
    attn = WindowAttention(8, 2, 4).double()
    _randomize(attn, gen)
    with torch.no_grad():
        attn.bias_table.zero_()
    x = torch.randn(1, 16, 8, generator=gen, dtype=torch.float64)
    got = attn.attend(x, (4, 4), shift=0)[0].detach().numpy()
    ref = oracles.global_attention(x[0].numpy(), *_split_qkv(attn), heads=2)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def _group(i, shift, ws):
    return (i - shift) // ws


def _shifted_oracle(attn, x, h, w, ws, shift):
    """Token-by-token attention over the shifted partition, in original coordinates."""
    wq, wk, wv, bq, bk, bv = _split_qkv(attn)
    table = attn.bias_table.detach().double().numpy()
    tws = attn.window_size
    heads, d = attn.heads, attn.dim
    hd = d // heads
    q, k, v = x @ wq + bq, x @ wk + bk, x @ wv + bv
    out = np.zeros_like(x)
    for p in range(h * w):
        pi, pj = divmod(p, w)
        peers = [
            r for r in range(h * w)
            if _group(r // w, shift, ws) == _group(pi, shift, ws) and _group(r % w, shift, ws) == _group(pj, shift, ws)
        ]
        for hh in range(heads):
            sl = slice(hh * hd, (hh + 1) * hd)
            logits = []
            for r in peers:
                ri, rj = divmod(r, w)
                idx = (pi - ri + tws - 1) * (2 * tws - 1) + (pj - rj + tws - 1)
                logits.append(q[p, sl] @ k[r, sl] / np.sqrt(hd) + table[idx, hh])
            e = np.exp(np.array(logits) - max(logits))
            e /= e.sum()
            out[p, sl] = sum(wt * v[r, sl] for wt, r in zip(e, peers))
    return out


@pytest.mark.parametrize("shift", [0, 2])
def test_shifted_windows_match_token_oracle(shift):
    gen = torch.Generator().manual_seed(11)
    attn = WindowAttention(6, 3, 4).double()
    _randomize(attn, gen)
    x = torch.randn(1, 64, 6, generator=gen, dtype=torch.float64)
    got = attn.attend(x, (8, 8), shift=shift)[0].detach().numpy()
    np.testing.assert_allclose(got, _shifted_oracle(attn, x[0].numpy(), 8, 8, 4, shift), atol=1e-10)


def test_attention_rows_are_distributions():
    attn = WindowAttention(6, 3, 4)
    x = torch.randn(2, 64, 6)
    _, weights = attn.attend(x, (8, 8), shift=2, return_weights=True)
    torch.testing.assert_close(weights.sum(-1), torch.ones(weights.shape[:-1]))


def test_shift_mask_blocks_only_seam_pairs():
    m = shifted_window_mask(8, 8, 4, 2)
    assert m.shape == (4, 16, 16)
    assert not m[0].any()  # interior window never straddles a seam
    assert m[-1].any()
    assert not m.diagonal(dim1=1, dim2=2).any()


def test_window_partition_roundtrip():
    x = torch.randn(2, 8, 12, 5)
    assert torch.equal(window_reverse(window_partition(x, 4), 4, 8, 12), x)


def test_small_grid_clamps_window():
    assert effective_window((2, 2), 4, 2) == (2, 0)
    assert effective_window((8, 8), 4, 2) == (4, 2)
    attn = WindowAttention(6, 3, 4)
    out = attn(torch.randn(1, 4, 6), (2, 2), shift=2)
    assert out.shape == (1, 4, 6)


def test_indivisible_grid_rejected():
    with pytest.raises(DimensionError):
        WindowAttention(6, 3, 4)(torch.randn(1, 36, 6), (6, 6))
    with pytest.raises(DimensionError):
        WindowAttention(6, 4, 4)


def test_tokens_image_roundtrip():
    img = torch.randn(2, 5, 4, 6)
    t = image_to_tokens(img)
    assert t.shape == (2, 24, 5)
    assert torch.equal(tokens_to_image(t, (4, 6)), img)


@pytest.mark.parametrize("p", [1, 2])
def test_patch_embed_identity_projection(p):
    c = 3
    eye = Linear(p * p * c, p * p * c, bias=False)
    with torch.no_grad():
        eye.weight.copy_(torch.eye(p * p * c))
    x = torch.randn(2, c, 8, 8)
    tokens, grid = patch_embed(x, p, eye)
    assert grid == (8 // p, 8 // p)
    assert torch.equal(patch_unembed(tokens, grid, p, eye), x)


def test_patch_merge_order():
    merge = PatchMerge(1)
    x = torch.arange(16.0).reshape(1, 16, 1)
    v = x.reshape(1, 4, 4, 1)
    groups = torch.cat([v[:, 0::2, 0::2], v[:, 1::2, 0::2], v[:, 0::2, 1::2], v[:, 1::2, 1::2]], dim=-1)
    assert groups[0, 0, 0].tolist() == [0, 4, 1, 5]
    out, grid = merge(x, (4, 4))
    assert grid == (2, 2) and out.shape == (1, 4, 2)


@settings(max_examples=20, deadline=None)
@given(
    h=st.integers(1, 4).map(lambda n: 2 * n),
    w=st.integers(1, 4).map(lambda n: 2 * n),
    d=st.sampled_from([2, 4, 6, 8]),
)
def test_merge_expand_shape_laws(h, w, d):
    x = torch.randn(1, h * w, d)
    merged, g = PatchMerge(d)(x, (h, w))
    assert g == (h // 2, w // 2) and merged.shape == (1, h * w // 4, 2 * d)
    expanded, g2 = PatchExpand(d)(x, (h, w))
    assert g2 == (2 * h, 2 * w) and expanded.shape == (1, 4 * h * w, d // 2)


def test_patch_expand_layout():
    pe = PatchExpand(4)
    with torch.no_grad():
        pe.expand.weight.copy_(torch.eye(4).repeat(1, 2))
        pe.norm.gamma.fill_(1)
    x = torch.randn(1, 1, 4)
    out, _ = pe(x, (1, 1))
    # token (r, c) of the 2x2 block takes channels [(2r + c) * 2, +2) of the 8-wide projection
    y = torch.cat([x, x], -1)[0, 0]
    for r in range(2):
        for c in range(2):
            chunk = y[(2 * r + c) * 2 : (2 * r + c) * 2 + 2]
            ref = (chunk - chunk.mean()) / torch.sqrt(chunk.var(unbiased=False) + 1e-5)
            torch.testing.assert_close(out[0, 2 * r + c], ref)


def test_token_mix_checks_paths():
    with pytest.raises(DimensionError):
        TokenMix(4)(torch.randn(1, 4, 4), torch.randn(1, 8, 4))


def test_zero_conv_rstb_is_identity():
    blk = RSTB(6, 2, 3, 4)
    blk.conv.zero_()
    x = torch.randn(2, 64, 6)
    assert torch.equal(blk(x, (8, 8)), x)


def test_all_zero_rstb_is_identity():
    blk = RSTB(6, 2, 3, 4)
    with torch.no_grad():
        for p in blk.parameters():
            p.zero_()
    x = torch.randn(2, 64, 6)
    assert torch.equal(blk(x, (8, 8)), x)


@settings(max_examples=15, deadline=None)
@given(
    mult=st.tuples(st.integers(1, 3), st.integers(1, 3)),
    dim=st.sampled_from([6, 12]),
)
def test_rstb_down_up_laws(mult, dim):
    h, w = 4 * mult[0], 4 * mult[1]
    x = torch.randn(1, h * w, dim)
    down = RSTBDown(dim, 2, 3, 2)
    merged, grid, skip = down(x, (h, w))
    assert grid == (h // 2, w // 2)
    assert merged.shape == (1, (h // 2) * (w // 2), 2 * dim)
    assert skip.shape == x.shape
    up = RSTBUp(2 * dim, 2, 3, 2)
    y, g = up(merged, grid, skip)
    assert g == (h, w) and y.shape == x.shape


@settings(max_examples=10, deadline=None)
@given(
    k=st.tuples(st.integers(1, 2), st.integers(1, 2)),
    chans=st.sampled_from([6, 12]),
    ws=st.sampled_from([2, 4]),
)
def test_must_preserves_shape(k, chans, ws):
    cfg = MustConfig(dim=chans, window_size=ws)
    h, w = 8 * k[0] * (ws // 2), 8 * k[1] * (ws // 2)
    x = torch.randn(1, chans, h, w)
    assert MUST(chans, cfg)(x).shape == x.shape


def test_must_rejects_bad_sizes():
    cfg = MustConfig()
    with pytest.raises(DimensionError, match="multiple of 8"):
        MUST(12, cfg)(torch.randn(1, 12, 12, 12))
    with pytest.raises(DimensionError):
        MustConfig(dim=10).validate(16, 16)


def test_swin_layer_gradients():
    # weights well away from the 0.02 init so that no gradient sits at the 1e-8 floor
    layer = SwinLayer(4, 2, 2, shift=1).double()
    with torch.no_grad():
        for p in layer.parameters():
            p.add_(torch.randn_like(p) * 0.1)
    x = torch.randn(1, 16, 4, dtype=torch.float64)
    params = list(layer.parameters())
    err = finite_diff_check(lambda x, *_: layer(x, (4, 4)).pow(2).mean(), [x, *params], max_per_tensor=6)
    assert err <= 1e-4
