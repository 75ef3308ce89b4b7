import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from humusnet.mri import (
    InfeasibleMaskError,
    UnsupportedSizeError,
    adjoint_model,
    apply_mask,
    center_count,
    expand,
    fft2c,
    forward_model,
    ifft2c,
    make_mask,
    normalize_maps,
    reduce,
    rss,
)


def crandn(*shape, dtype=torch.complex64, gen=None):
    return torch.randn(*shape, dtype=dtype, generator=gen)


@pytest.mark.parametrize("shape", [(8, 8), (4, 16), (2, 3, 16, 8)])
def test_fft_matches_naive_dft(shape):
    x = crandn(*shape, dtype=torch.complex128)
    ref = oracles.dft2c(x.numpy())
    np.testing.assert_allclose(fft2c(x).numpy(), ref, atol=1e-10)
    np.testing.assert_allclose(ifft2c(x).numpy(), oracles.dft2c(x.numpy(), inverse=True), atol=1e-10)


def test_fft_dc_at_center():
    x = torch.ones(8, 8, dtype=torch.complex64)
    k = fft2c(x)
    assert abs(complex(k[4, 4]) - 8) < 1e-5
    assert float(k.abs().sum()) == pytest.approx(8, abs=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([4, 8, 16, 32]), st.sampled_from([4, 8, 16]), st.integers(0, 999))
def test_fft_roundtrip_and_parseval(h, w, seed):
    gen = torch.Generator().manual_seed(seed)
    x = crandn(h, w, gen=gen)
    k = fft2c(x)
    assert torch.allclose(ifft2c(k), x, atol=1e-5)
    assert float(k.abs().pow(2).sum()) == pytest.approx(float(x.abs().pow(2).sum()), rel=1e-5)


def test_non_power_of_two_rejected():
    with pytest.raises(UnsupportedSizeError):
        fft2c(torch.zeros(6, 8, dtype=torch.complex64))


@settings(max_examples=40, deadline=None)
@given(
    width=st.sampled_from([16, 32, 64, 128]),
    acc=st.sampled_from([2.0, 4.0, 8.0]),
    seed=st.integers(0, 2**31),
)
def test_mask_center_block_and_determinism(width, acc, seed):
    cf = 0.08
    m = make_mask(width, acc, cf, seed)
    nc = center_count(width, cf)
    acs = m.acs_columns()
    assert len(acs) >= nc
    assert m.columns[width // 2]
    again = make_mask(width, acc, cf, seed)
    assert np.array_equal(m.columns, again.columns)


def test_mask_rate_close_to_target():
    rates = [make_mask(64, 4.0, 0.08, s).columns.mean() for s in range(400)]
    assert np.mean(rates) == pytest.approx(0.25, abs=0.01)


def test_mask_infeasible():
    with pytest.raises(InfeasibleMaskError):
        make_mask(64, 16.0, 0.25, 0)
    with pytest.raises(InfeasibleMaskError):
        make_mask(4, 2.0, 0.08, 0)


def test_mask_full_sampling():
    assert make_mask(32, 1.0, 0.08, 0).columns.all()


def test_apply_mask_zeroes_columns():
    k = crandn(2, 8, 8)
    m = torch.zeros(8)
    m[3] = 1
    out = apply_mask(k, m)
    assert torch.all(out[..., 3] == k[..., 3])
    assert torch.all(out[..., :3] == 0)


def _random_maps(n, h, w, gen):
    return normalize_maps(crandn(n, h, w, gen=gen))


def test_maps_normalized():
    gen = torch.Generator().manual_seed(0)
    maps = _random_maps(4, 8, 8, gen)
    np.testing.assert_allclose(maps.abs().pow(2).sum(0).numpy(), 1, atol=1e-5)


def test_reduce_inverts_expand_for_unit_maps():
    gen = torch.Generator().manual_seed(1)
    maps = _random_maps(4, 8, 8, gen)
    x = crandn(8, 8, gen=gen)
    assert torch.allclose(reduce(expand(x, maps), maps), x, atol=1e-5)


def test_adjoint_identity_double():
    gen = torch.Generator().manual_seed(2)
    maps = _random_maps(3, 16, 16, gen).to(torch.complex128)
    mask = make_mask(16, 4, 0.125, 0).tensor()
    x = crandn(16, 16, dtype=torch.complex128, gen=gen)
    y = crandn(3, 16, 16, dtype=torch.complex128, gen=gen)
    lhs = torch.vdot(forward_model(x, maps, mask).flatten(), y.flatten())
    rhs = torch.vdot(x.flatten(), adjoint_model(y, maps, mask).flatten())
    assert abs(complex(lhs - rhs)) < 1e-12 * float(y.abs().sum())


def test_rss_of_zeros_is_zero_and_finite_grad():
    z = torch.zeros(3, 4, 4, dtype=torch.complex64, requires_grad=True)
    r = rss(z)
    assert torch.all(r == 0) or float(r.max()) < 1e-18
    r.sum().backward()
    assert torch.isfinite(z.grad).all()


def test_rss_matches_formula():
    c = crandn(4, 8, 8)
    ref = np.sqrt((np.abs(c.numpy()) ** 2).sum(0))
    np.testing.assert_allclose(rss(c).numpy(), ref, rtol=1e-5)
