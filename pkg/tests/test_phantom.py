import json

import numpy as np
import pytest
import torch

from humusnet.mri import fft2c, ifft2c, make_mask
from humusnet.phantom import (
    ChecksumError,
    DatasetError,
    TruncatedFileError,
    VersionError,
    decode_volume,
    encode_volume,
    generate_coil_maps,
    generate_phantom,
    generate_volume,
    read_dataset,
    read_manifest,
    simulate_acquisition,
    write_dataset,
)


def test_phantom_deterministic_and_in_range():
    a = generate_phantom(7, 32, 32, 4)
    b = generate_phantom(7, 32, 32, 4)
    assert torch.equal(a, b)
    mag = a.abs()
    assert float(mag.min()) >= 0 and float(mag.max()) <= 1 + 1e-6
    assert not torch.equal(a, generate_phantom(8, 32, 32, 4))


def _corr(a, b):
    return np.corrcoef(a.ravel(), b.ravel())[0, 1]


def test_adjacent_slices_more_correlated_than_distant():
    near, far = [], []
    for seed in range(20):
        mag = generate_phantom(seed, 32, 32, 8).abs().numpy()
        near.append(np.mean([_corr(mag[i], mag[i + 1]) for i in range(7)]))
        far.append(np.mean([_corr(mag[i], mag[i + 3]) for i in range(5)]))
    assert np.mean(near) > np.mean(far)


def test_coil_maps_normalized():
    maps = generate_coil_maps(3, 4, 32, 32)
    np.testing.assert_allclose(maps.abs().pow(2).sum(0).numpy(), 1, atol=1e-5)
    single = generate_coil_maps(3, 1, 16, 16)
    np.testing.assert_allclose(single.abs().numpy(), 1, atol=1e-6)


def test_coil_maps_smooth():
    # neighbouring pixels of a smooth map differ far less than its dynamic range
    for seed in range(10):
        maps = generate_coil_maps(seed, 4, 64, 64)
        dy = (maps[:, 1:] - maps[:, :-1]).abs().max()
        dx = (maps[:, :, 1:] - maps[:, :, :-1]).abs().max()
        assert max(float(dx), float(dy)) < 0.25


def test_noiseless_full_acquisition_inverts():
    x = generate_phantom(1, 16, 16, 2)
    maps = torch.ones(1, 16, 16, dtype=torch.complex64)
    full = torch.ones(16)
    k = simulate_acquisition(x, maps, full, 0.0, 0)
    assert torch.allclose(ifft2c(k)[:, 0], x, atol=1e-5)


def test_masked_columns_exactly_zero():
    x = generate_phantom(1, 32, 32, 2)
    maps = generate_coil_maps(1, 3, 32, 32)
    mask = make_mask(32, 4, 0.08, 5)
    k = simulate_acquisition(x, maps, mask, 0.005, 0)
    assert torch.all(k[..., ~torch.from_numpy(mask.columns)] == 0)


def test_noise_level():
    x = generate_phantom(2, 64, 64, 8)
    maps = generate_coil_maps(2, 4, 64, 64)
    sigma = 0.05
    noisy = simulate_acquisition(x, maps, torch.ones(64), sigma, 11)
    clean = fft2c(maps[None] * x[:, None])
    rms = float(clean.abs().pow(2).mean().sqrt())
    sd = float((noisy - clean).abs().pow(2).mean().sqrt())
    assert sd == pytest.approx(sigma * rms, rel=0.05)


@pytest.fixture
def small_volume():
    return generate_volume(0, 3, 16, 16, 3, 2, 4.0, 0.125)


def test_encode_decode_bit_identical(small_volume):
    raw = encode_volume(small_volume)
    shape, arrays = decode_volume(raw)
    assert shape == small_volume.shape
    assert np.array_equal(arrays["kspace"], small_volume.kspace.numpy())
    assert np.array_equal(arrays["slices"], small_volume.slices.numpy())
    assert np.array_equal(arrays["mask"], small_volume.mask.columns)
    assert encode_volume(generate_volume(0, 3, 16, 16, 3, 2, 4.0, 0.125)) == raw


def test_corruption_detected(small_volume):
    raw = bytearray(encode_volume(small_volume))
    raw[100] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_volume(bytes(raw))
    with pytest.raises(TruncatedFileError):
        decode_volume(bytes(raw[:-10]))
    with pytest.raises(VersionError):
        decode_volume(b"HUMUSDS0" + bytes(raw[8:]))


def test_dataset_roundtrip(tmp_path, small_volume):
    vols = [small_volume, generate_volume(1, 4, 16, 16, 3, 2, 4.0, 0.125)]
    manifest = write_dataset(vols, tmp_path)
    assert manifest["volume_count"] == 2 == len(list(tmp_path.glob("*.bin")))
    back = read_dataset(tmp_path)
    for a, b in zip(vols, back):
        assert torch.equal(a.kspace, b.kspace)
        assert np.array_equal(a.mask.columns, b.mask.columns)
        assert b.noise_sigma == a.noise_sigma


def test_manifest_errors(tmp_path, small_volume):
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)
    write_dataset([small_volume], tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["volume_count"] = 3
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetError):
        read_manifest(tmp_path)
    m["version"] = "OTHER"
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(VersionError):
        read_manifest(tmp_path)
