import numpy as np
import pytest

from dsage.latent import DecoderParams, decode


def test_decoder_reproducible_from_seed():
    a = DecoderParams.from_seed(42)
    b = DecoderParams.from_seed(42)
    assert np.array_equal(a.weight, b.weight)
    assert np.array_equal(a.bias, b.bias)
    c = DecoderParams.from_seed(43)
    assert not np.array_equal(a.weight, c.weight)


def test_decode_zero_latent_is_bias_threshold():
    params = DecoderParams.from_seed(0)
    bitmap = decode(np.zeros(32), params)
    assert np.array_equal(bitmap, (params.bias > 0).astype(np.int8))


def test_decode_deterministic_and_binary():
    params = DecoderParams.from_seed(1)
    rng = np.random.default_rng(0)
    z = rng.standard_normal(32)
    a, b = decode(z, params), decode(z, params)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0, 1}
    assert a.shape == (256,)


def test_decode_validates_input():
    params = DecoderParams.from_seed(2)
    with pytest.raises(ValueError):
        decode(np.zeros(16), params)
    z = np.zeros(32)
    z[0] = np.inf
    with pytest.raises(ValueError):
        decode(z, params)


def test_decoded_wall_counts_are_diverse():
    params = DecoderParams.from_seed(42)
    rng = np.random.default_rng(7)
    counts = {int(decode(rng.standard_normal(32), params).sum()) for _ in range(1000)}
    assert len(counts) >= 50


def test_small_perturbations_flip_few_cells():
    params = DecoderParams.from_seed(42)
    rng = np.random.default_rng(3)
    flips_small, flips_large = [], []
    for _ in range(200):
        z = rng.standard_normal(32)
        base = decode(z, params)
        dz = np.zeros(32)
        dz[rng.integers(32)] = 1e-4
        flips_small.append(int(np.sum(base != decode(z + dz, params))))
        flips_large.append(int(np.sum(base != decode(z + rng.standard_normal(32), params))))
    assert np.median(flips_small) == 0
    assert np.mean(flips_small) < 1.0
    assert np.mean(flips_large) > 10  # genuinely different z decode differently
