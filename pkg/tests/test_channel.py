import math

import numpy as np
import pytest
import torch

from semcom.channel import (
    Channel,
    ChannelSpec,
    SymbolFrame,
    noise_to_torch,
    normalize_power,
    normalize_power_torch,
    sigma_from_snr,
)
from semcom.errors import NonFiniteSnr, ZeroVector


def test_normalize_power_fixed_point(rng):
    x = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    x = x / np.sqrt(np.mean(np.abs(x) ** 2))  # already at average power 1
    frame = normalize_power(x, 1.0)
    np.testing.assert_allclose(frame.symbols, x, atol=1e-12)


def test_normalize_power_unit_example():
    frame = normalize_power(np.array([3.0 + 4.0j]), 1.0)
    np.testing.assert_allclose(frame.symbols, [0.6 + 0.8j], atol=1e-12)


def test_normalize_power_exact_measurement(rng):
    x = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    frame = normalize_power(x, 2.0)
    assert abs(frame.power - 2.0) < 1e-9
    assert abs(np.mean(np.abs(frame.symbols) ** 2) - 2.0) < 1e-9


def test_normalize_power_zero_vector():
    with pytest.raises(ZeroVector):
        normalize_power(np.zeros(8, dtype=complex), 1.0)


def test_sigma_from_snr_definition():
    assert sigma_from_snr(0.0, 1.0) == pytest.approx(1.0)
    assert sigma_from_snr(10.0, 1.0) == pytest.approx(0.1)
    assert sigma_from_snr(-5.0, 1.0) == pytest.approx(3.16228, abs=1e-4)
    with pytest.raises(NonFiniteSnr):
        sigma_from_snr(float("nan"), 1.0)


def test_noiseless_transmit_bit_exact(rng):
    spec = ChannelSpec(family="noiseless", snr_test_db=0.0, seed=5)
    frame = normalize_power(rng.standard_normal(64) + 1j * rng.standard_normal(64))
    received = Channel(spec).transmit(frame)
    np.testing.assert_array_equal(received, frame.symbols)


@pytest.mark.parametrize("snr_db", [-5.0, 0.0, 10.0])
def test_awgn_empirical_variance(snr_db, rng):
    k = 1_000_000
    spec = ChannelSpec(family="awgn", snr_test_db=snr_db, power=1.0, seed=42)
    frame = normalize_power(np.exp(1j * rng.uniform(0, 2 * np.pi, k)), 1.0)
    received = Channel(spec).transmit(frame)
    noise = received - frame.symbols
    sigma2 = sigma_from_snr(snr_db, 1.0)
    assert abs(np.mean(np.abs(noise) ** 2) - sigma2) < 0.01 * sigma2
    # zero mean within the 5 sigma / sqrt(k) statistical bound
    assert abs(np.mean(noise)) < 5 * math.sqrt(sigma2) / math.sqrt(k)


def test_received_power_is_signal_plus_noise():
    k = 1_000_000
    rng = np.random.default_rng(7)
    spec = ChannelSpec(family="awgn", snr_test_db=0.0, power=1.0, seed=3)
    frame = normalize_power(rng.standard_normal(k) + 1j * rng.standard_normal(k), 1.0)
    received = Channel(spec).transmit(frame)
    sigma2 = sigma_from_snr(0.0, 1.0)
    measured = np.mean(np.abs(received) ** 2)
    assert abs(measured - (1.0 + sigma2)) < 0.02 * (1.0 + sigma2)


def test_same_seed_same_noise(rng):
    spec = ChannelSpec(family="awgn", snr_test_db=5.0, seed=11)
    frame = normalize_power(rng.standard_normal(128) + 1j * rng.standard_normal(128))
    a = Channel(spec).transmit(frame)
    b = Channel(spec).transmit(frame)
    np.testing.assert_array_equal(a, b)


def test_transmit_identity_jacobian(rng):
    # Under a fixed seed the noise is an additive constant, so a symbol
    # perturbation passes through unchanged.
    spec = ChannelSpec(family="awgn", snr_test_db=0.0, seed=21)
    x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    delta = np.zeros(64, dtype=complex)
    delta[10] = 1e-5
    base = Channel(spec).transmit(SymbolFrame(x, 1.0))
    bumped = Channel(spec).transmit(SymbolFrame(x + delta, 1.0))
    np.testing.assert_allclose(bumped - base, delta, atol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        ChannelSpec(family="rayleigh")
    with pytest.raises(ValueError):
        ChannelSpec(power=0.0)
    with pytest.raises(NonFiniteSnr):
        ChannelSpec(snr_test_db=float("inf"))
    spec = ChannelSpec(snr_test_db=7.0)
    assert spec.estimated_snr_db == 7.0
    assert ChannelSpec(snr_test_db=7.0, snr_est_db=1.0).estimated_snr_db == 1.0


def test_normalize_power_torch_matches_numpy(rng):
    x = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    expected = normalize_power(x, 1.5).symbols
    pairs = torch.from_numpy(np.stack([x.real, x.imag], axis=-1)[None]).double()
    out = normalize_power_torch(pairs, 1.5)[0].numpy()
    np.testing.assert_allclose(out[:, 0] + 1j * out[:, 1], expected, atol=1e-12)


def test_normalize_power_torch_gradients_flow():
    x = torch.randn(2, 16, 2, dtype=torch.float64, requires_grad=True)
    y = normalize_power_torch(x, 1.0)
    y.sum().backward()
    assert torch.isfinite(x.grad).all()
    assert x.grad.abs().sum() > 0


def test_noise_to_torch_layout(rng):
    z = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    t = noise_to_torch(z, dtype=torch.float64)
    assert t.shape == (1, 5, 2)
    np.testing.assert_allclose(t[0, :, 0].numpy(), z.real)
    np.testing.assert_allclose(t[0, :, 1].numpy(), z.imag)
