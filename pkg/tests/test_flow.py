import math

import numpy as np
import pytest
import torch

from semcom.data_io import make_synthetic_clip
from semcom.errors import NonFiniteCorrelation, ShapeMismatch
from semcom.flow import (
    DenseFeatures,
    FeatureExtractor,
    FeatureNetConfig,
    bidirectional_flow,
    bidirectional_flow_batched,
    correlation_volume,
    extract_features,
    match_and_flow,
    pixel_grid,
)

SHARP = FeatureNetConfig(dim=32, padding_mode="circular", center=True,
                         normalize=True, scale=16.0)


def wrapped_shift_flow(h, w, dx, dy):
    """Ground-truth bidirectional flow of a circular shift by (dx, dy)."""
    fwd = np.zeros((h, w, 2))
    bwd = np.zeros((h, w, 2))
    for i in range(h):
        for j in range(w):
            fwd[i, j] = (((j + dx) % w) - j, ((i + dy) % h) - i)
            bwd[i, j] = (((j - dx) % w) - j, ((i - dy) % h) - i)
    return torch.from_numpy(fwd), torch.from_numpy(bwd)


def sharp_features_for_shift(dx, dy, h=16, w=16, seed=5):
    torch.manual_seed(0)
    net = FeatureExtractor(SHARP).double()
    frame = make_synthetic_clip("noise", h, w, 2, seed=seed).frames[0].copy()
    shifted = np.roll(frame, (dy, dx), axis=(0, 1))
    return extract_features(frame, shifted, net)


# --- feature extraction ---


def test_identical_frames_identical_features():
    torch.manual_seed(1)
    net = FeatureExtractor(FeatureNetConfig(dim=8)).double()
    frame = make_synthetic_clip("noise", 8, 8, 2, seed=0).frames[0].copy()
    feats = extract_features(frame, frame, net)
    np.testing.assert_array_equal(feats.f1.detach().numpy(), feats.f2.detach().numpy())


def test_mismatched_frames_rejected():
    net = FeatureExtractor()
    with pytest.raises(ShapeMismatch):
        extract_features(np.zeros((8, 8, 3)), np.zeros((8, 16, 3)), net)


def test_circular_padding_is_shift_equivariant():
    torch.manual_seed(2)
    net = FeatureExtractor(FeatureNetConfig(dim=16, padding_mode="circular")).double()
    clip = make_synthetic_clip("translate", 16, 16, 2, shift=(3, 0), seed=1)
    feats = extract_features(clip.frames[0].copy(), clip.frames[1].copy(), net)
    rolled = torch.roll(feats.f1, shifts=3, dims=1)
    np.testing.assert_allclose(feats.f2.detach().numpy(), rolled.detach().numpy(),
                               atol=1e-5)


def test_dense_features_validation():
    with pytest.raises(ShapeMismatch):
        DenseFeatures(torch.zeros(4, 4, 8), torch.zeros(4, 5, 8))
    with pytest.raises(ShapeMismatch):
        DenseFeatures(torch.full((2, 2, 2), float("nan")), torch.zeros(2, 2, 2))


# --- correlation volume ---


def test_correlation_orthogonal_identity_features():
    d = 16  # 4x4 grid, one orthogonal direction per pixel, norm sqrt(D)
    eye = math.sqrt(d) * torch.eye(d, dtype=torch.float64)
    feats = DenseFeatures(eye.reshape(4, 4, d), eye.reshape(4, 4, d))
    corr = correlation_volume(feats)
    np.testing.assert_allclose(corr.numpy(), math.sqrt(d) * np.eye(d), atol=1e-12)


def test_correlation_single_pixel():
    feats = DenseFeatures(torch.tensor([[[2.5]]], dtype=torch.float64),
                          torch.tensor([[[-1.5]]], dtype=torch.float64))
    corr = correlation_volume(feats)
    assert corr.shape == (1, 1)
    assert corr.item() == pytest.approx(2.5 * -1.5, abs=1e-12)


def test_correlation_matches_brute_force(rng):
    f1 = torch.from_numpy(rng.standard_normal((4, 4, 8)))
    f2 = torch.from_numpy(rng.standard_normal((4, 4, 8)))
    corr = correlation_volume(DenseFeatures(f1, f2)).numpy()
    a = f1.reshape(16, 8).numpy()
    b = f2.reshape(16, 8).numpy()
    reference = np.empty((16, 16))
    for p in range(16):
        for q in range(16):
            reference[p, q] = sum(a[p, k] * b[q, k] for k in range(8)) / math.sqrt(8)
    np.testing.assert_allclose(corr, reference, atol=1e-6)


def test_correlation_transpose_symmetry(rng):
    f1 = torch.from_numpy(rng.standard_normal((3, 5, 4)))
    f2 = torch.from_numpy(rng.standard_normal((3, 5, 4)))
    ab = correlation_volume(DenseFeatures(f1, f2))
    ba = correlation_volume(DenseFeatures(f2, f1))
    np.testing.assert_allclose(ab.T.numpy(), ba.numpy(), atol=1e-12)


def test_correlation_scales_quadratically(rng):
    f1 = torch.from_numpy(rng.standard_normal((2, 2, 4)))
    f2 = torch.from_numpy(rng.standard_normal((2, 2, 4)))
    base = correlation_volume(DenseFeatures(f1, f2))
    scaled = correlation_volume(DenseFeatures(3.0 * f1, 3.0 * f2))
    np.testing.assert_allclose(scaled.numpy(), 9.0 * base.numpy(), atol=1e-10)


def test_correlation_position_cap():
    big = torch.zeros(65, 65, 2)
    with pytest.raises(ShapeMismatch):
        correlation_volume(DenseFeatures(big, big))


# --- softmax matching ---


def test_sharp_self_correlation_gives_zero_flow():
    grid = pixel_grid(3, 3)
    corr = 1000.0 * torch.eye(9, dtype=torch.float64)
    flow = match_and_flow(corr, grid)
    np.testing.assert_allclose(flow.numpy(), np.zeros((3, 3, 2)), atol=1e-9)


def test_uniform_correlation_matches_centroid():
    grid = pixel_grid(3, 5)
    corr = torch.full((15, 15), 0.7, dtype=torch.float64)
    flow = match_and_flow(corr, grid)
    centroid = grid.reshape(15, 2).mean(dim=0)
    expected = (centroid - grid.reshape(15, 2)).reshape(3, 5, 2)
    np.testing.assert_allclose(flow.numpy(), expected.numpy(), atol=1e-9)


def test_softmax_rows_sum_to_one(rng):
    corr = torch.from_numpy(rng.standard_normal((16, 16)))
    rows = torch.softmax(corr, dim=-1).sum(dim=-1)
    np.testing.assert_allclose(rows.numpy(), np.ones(16), atol=1e-6)


def test_flow_invariant_to_row_shift(rng):
    grid = pixel_grid(4, 4)
    corr = torch.from_numpy(rng.standard_normal((16, 16)))
    base = match_and_flow(corr, grid)
    shifted = corr.clone()
    shifted[5, :] += 11.0  # softmax is shift invariant per row
    np.testing.assert_allclose(match_and_flow(shifted, grid).numpy(),
                               base.numpy(), atol=1e-12)


def test_non_finite_correlation_rejected():
    corr = torch.full((4, 4), float("inf"))
    with pytest.raises(NonFiniteCorrelation):
        match_and_flow(corr, pixel_grid(2, 2))


# --- shift recovery with engineered sharp features ---


def test_forward_flow_recovers_shift():
    feats = sharp_features_for_shift(3, 0)
    corr = correlation_volume(feats)
    grid = pixel_grid(16, 16)
    flow = match_and_flow(corr, grid)
    # Hard argmax matching over the same correlation volume as the oracle.
    argmax = corr.argmax(dim=1)
    points = grid.reshape(-1, 2)
    hard = (points[argmax] - points).reshape(16, 16, 2)
    epe = (flow - hard).norm(dim=-1).mean().item()
    assert epe < 0.1
    gt_fwd, _ = wrapped_shift_flow(16, 16, 3, 0)
    assert (flow - gt_fwd).norm(dim=-1).mean().item() < 0.1


def test_bidirectional_flow_recovers_both_directions():
    feats = sharp_features_for_shift(3, 2)
    field = bidirectional_flow(feats)
    assert field.v.shape == (16, 16, 4)
    gt_fwd, gt_bwd = wrapped_shift_flow(16, 16, 3, 2)
    assert (field.forward - gt_fwd).norm(dim=-1).mean().item() < 0.1
    assert (field.backward - gt_bwd).norm(dim=-1).mean().item() < 0.1
    # Away from the wrap-around band the flow is literally (dx, dy).
    interior = field.forward[:13, :12]
    assert (interior - torch.tensor([3.0, 2.0], dtype=torch.float64)
            ).norm(dim=-1).max().item() < 0.1


def test_identical_frames_zero_bidirectional_flow():
    torch.manual_seed(0)
    net = FeatureExtractor(SHARP).double()
    frame = make_synthetic_clip("noise", 12, 12, 2, seed=3).frames[0].copy()
    field = bidirectional_flow(extract_features(frame, frame, net))
    assert field.v.abs().max().item() < 0.05


def test_flow_within_grid_bounds():
    feats = sharp_features_for_shift(5, 4, h=12, w=12)
    field = bidirectional_flow(feats)
    assert field.v[..., 0::2].abs().max().item() <= 11.0
    assert field.v[..., 1::2].abs().max().item() <= 11.0


def test_bidirectional_consistency_on_shift():
    feats = sharp_features_for_shift(4, 1)
    field = bidirectional_flow(feats)
    fwd = field.forward
    bwd = field.backward
    h, w = 16, 16
    worst = 0.0
    for i in range(h):
        for j in range(w):
            ti = int(round(i + fwd[i, j, 1].item())) % h
            tj = int(round(j + fwd[i, j, 0].item())) % w
            residual = (fwd[i, j] + bwd[ti, tj]).norm().item()
            worst = max(worst, residual)
    assert worst < 0.2


# --- gradients and batching ---


def test_matching_gradient_against_finite_differences(rng):
    f1 = torch.from_numpy(rng.standard_normal((3, 3, 4))).requires_grad_(True)
    f2 = torch.from_numpy(rng.standard_normal((3, 3, 4))).requires_grad_(True)
    w = torch.from_numpy(rng.standard_normal((3, 3, 2)))
    grid = pixel_grid(3, 3)

    def loss_value(a, b):
        corr = correlation_volume(DenseFeatures(a, b))
        return (match_and_flow(corr, grid) * w).sum()

    loss_value(f1, f2).backward()

    eps = 1e-5
    for tensor, grad in ((f1, f1.grad), (f2, f2.grad)):
        numeric = torch.zeros_like(tensor)
        flat = tensor.data.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = loss_value(f1.detach(), f2.detach()).item()
            flat[i] = orig - eps
            lo = loss_value(f1.detach(), f2.detach()).item()
            flat[i] = orig
            out[i] = (hi - lo) / (2 * eps)
        rel = (grad - numeric).norm().item() / max(numeric.norm().item(), 1e-12)
        assert rel < 1e-4


def test_batched_flow_matches_unbatched():
    feats = sharp_features_for_shift(2, 1)
    field = bidirectional_flow(feats)
    f1 = feats.f1.permute(2, 0, 1).unsqueeze(0)
    f2 = feats.f2.permute(2, 0, 1).unsqueeze(0)
    batched = bidirectional_flow_batched(f1, f2)[0].permute(1, 2, 0)
    np.testing.assert_allclose(batched.detach().numpy(), field.v.detach().numpy(),
                               atol=1e-10)
