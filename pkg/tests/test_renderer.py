"""
Tests for ray sampling, the aggregation and ray transformers, NeuS opacity,
compositing and frame rendering.
"""

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import UsageError
from app.geometry.camera import RayBatch, generate_rays, pixel_grid
from app.models.network import ReconNetwork, render_view
from app.models.renderer import (
    AnalyticSDF,
    RayTransformer,
    SampleBatch,
    ViewAggregator,
    blend_colors,
    composite,
    masked_softmax,
    positional_encoding,
    render_analytic,
    sample_pdf,
    sample_ray,
    sdf_to_alpha,
)
from app.schemas.scene import RigSpec
from app.schemas.train import ModelConfig
from app.services.synthlab import ring_cameras
from app.tensor import ops
from app.tensor.array import DenseArray, Graph
from app.tensor.gradcheck import check_gradients
from tests.conftest import make_camera

TINY = ModelConfig(channels=(8, 8, 8), hypotheses=[4, 4], attention_blocks=2, heads=2, volume_channels=2,
                   groups=2, token_dim=8, token_heads=2, aggregator_blocks=1, ray_blocks=1,
                   coarse_samples=6, fine_samples=4, pe_octaves=2, sdf_hidden=8)


def _rays(near, far, count=1):
    origins = np.zeros((count, 3))
    directions = np.tile([0.0, 0.0, 1.0], (count, 1))
    return RayBatch(origins, directions, np.zeros((count, 2)), np.full(count, near), np.full(count, far))


def _sample_batch(rng, rays=2, samples=3, views=4, channels=5, volume=4, groups=2, valid=None):
    B = rays * samples
    if valid is None:
        valid = np.ones((B, views), dtype=bool)
    t = np.sort(rng.uniform(2, 5, size=(rays, samples)), axis=1)
    return SampleBatch(
        t=t, points=rng.normal(size=(rays, samples, 3)), z=t, z_d=t.mean(axis=1),
        view_feats=DenseArray(rng.normal(size=(B, views, channels))),
        colors=DenseArray(rng.uniform(size=(B, views, 3))),
        valid=valid, f_v=DenseArray(rng.normal(size=(B, volume))),
        f_s=DenseArray(rng.uniform(-1, 1, size=(B, groups))), depth_range=3.0,
    )


def _permute_views(batch, perm):
    return SampleBatch(batch.t, batch.points, batch.z, batch.z_d,
                       DenseArray(batch.view_feats.numpy()[:, perm]), DenseArray(batch.colors.numpy()[:, perm]),
                       batch.valid[:, perm], batch.f_v, batch.f_s, batch.depth_range)


# ==================== SAMPLING TESTS ====================

def test_evaluation_samples_are_bin_midpoints():
    """Test four deterministic samples on [1, 2] sit at the bin centers."""
    t = sample_ray(_rays(1.0, 2.0), coarse=4)
    np.testing.assert_allclose(t[0], [1.125, 1.375, 1.625, 1.875], atol=1e-8)


def test_training_samples_are_jittered_within_bins(rng):
    """Test stratified jitter keeps one sample per bin."""
    t = sample_ray(_rays(1.0, 2.0, count=50), coarse=4, rng=rng)
    bins = np.floor((t - 1.0) * 4).astype(int)
    assert np.all(bins == np.arange(4))


def test_fine_samples_stay_in_range_and_increase(rng):
    """Test merged samples lie in [near, far] and strictly increase."""
    rays = _rays(1.0, 3.0, count=8)
    t = sample_ray(rays, 8, 16, weights_fn=lambda tc: rng.uniform(size=tc.shape), rng=rng)
    assert t.shape == (8, 24)
    assert np.all(t >= 1.0) and np.all(t <= 3.0 + 1e-6)
    assert np.all(np.diff(t, axis=1) > 0)


def test_fine_samples_concentrate_on_peaked_weights(rng):
    """Test inverse-CDF samples land mostly in the heavy bin and its neighbors."""
    edges = np.linspace(0.0, 16.0, 17)[None]
    weights = np.full((1, 16), 0.001)
    weights[0, 9] = 1.0
    samples = sample_pdf(edges, weights, 500, rng)
    near_peak = (samples >= 8.0) & (samples < 11.0)
    assert near_peak.mean() > 0.8


def test_fine_sampling_needs_weights():
    """Test requesting fine samples without a weights function fails."""
    with pytest.raises(UsageError):
        sample_ray(_rays(1.0, 2.0), 4, 4)


def test_too_few_coarse_samples():
    """Test a single coarse sample is refused."""
    with pytest.raises(UsageError):
        sample_ray(_rays(1.0, 2.0), 1)


# ==================== AGGREGATION TESTS ====================

def test_aggregator_is_view_permutation_invariant(double, rng):
    """Test f_p ignores the order of the view tokens and logits follow it."""
    agg = ViewAggregator(5, 4, 2, 8, 2, 2, np.random.default_rng(0))
    batch = _sample_batch(rng)
    perm = np.array([2, 0, 3, 1])
    f_a, logits_a = agg(batch)
    f_b, logits_b = agg(_permute_views(batch, perm))
    np.testing.assert_allclose(f_a.numpy(), f_b.numpy(), atol=1e-5)
    np.testing.assert_allclose(logits_a.numpy()[:, perm], logits_b.numpy(), atol=1e-5)


def test_aggregator_is_deterministic(double, rng):
    """Test fixed weights give identical outputs."""
    agg = ViewAggregator(5, 4, 2, 8, 2, 1, np.random.default_rng(0))
    batch = _sample_batch(rng)
    np.testing.assert_array_equal(agg(batch)[0].numpy(), agg(batch)[0].numpy())


def test_single_valid_view_takes_all_weight(double):
    """Test masked softmax puts weight 1 on the only valid view."""
    logits = DenseArray([[0.3, 5.0, -2.0], [1.0, 1.0, 1.0]])
    mask = np.array([[True, False, False], [False, False, False]])
    weights = masked_softmax(logits, mask).numpy()
    np.testing.assert_allclose(weights[0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(weights[1], 0.0)


def test_blend_colors_ignores_invalid_views(double):
    """Test blending uses only valid source colors."""
    colors = DenseArray([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    out = blend_colors(DenseArray([[0.0, 9.0]]), colors, np.array([[True, False]]))
    np.testing.assert_allclose(out.numpy(), [[1.0, 0.0, 0.0]])


# ==================== RAY TRANSFORMER TESTS ====================

def test_zero_offset_encoding():
    """Test a zero offset encodes as sines 0 and cosines 1."""
    np.testing.assert_array_equal(positional_encoding(np.zeros(1), 3, 2.0), [[0, 0, 0, 1, 1, 1]])


def test_shifting_depths_leaves_sdf_unchanged(double, rng):
    """Test only the offset z - z_d reaches the ray transformer."""
    rt = RayTransformer(8, 3, 2, 1, 8, np.random.default_rng(0))
    f_p = DenseArray(rng.normal(size=(6, 8)))
    z = np.sort(rng.uniform(2, 4, size=(2, 3)), axis=1)
    z_d = np.array([2.5, 3.1])
    a = rt(f_p, z, z_d, 2.0)
    b = rt(f_p, z + 0.7, z_d + 0.7, 2.0)
    np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-9)


def test_gradients_reach_aggregated_features(double, rng):
    """Test d(sdf)/d(f_p) against central differences."""
    rt = RayTransformer(8, 2, 2, 1, 8, np.random.default_rng(0))
    z = np.sort(rng.uniform(2, 4, size=(2, 3)), axis=1)
    z_d = np.array([2.5, 3.1])
    weights = rng.normal(size=(2, 3))

    def fn(f_p):
        return ops.sum(rt(f_p, z, z_d, 2.0) * weights)

    assert check_gradients(fn, [rng.normal(size=(6, 8))], kind="ray-transformer").passed


# ==================== OPACITY TESTS ====================

def test_constant_sdf_is_transparent(double):
    """Test a flat SDF along a ray gives zero opacity."""
    alpha = sdf_to_alpha(DenseArray(np.full((2, 5), 0.3)), 50.0)
    np.testing.assert_array_equal(alpha.numpy(), 0.0)


def test_sign_change_with_large_sharpness_is_opaque(double):
    """Test crossing from +a to -a saturates opacity at the crossing."""
    alpha = sdf_to_alpha(DenseArray([[0.5, 0.5, -0.5, -0.5]]), 1000.0).numpy()[0]
    assert alpha[1] == pytest.approx(1.0)
    assert alpha[0] == pytest.approx(0.0, abs=1e-12)


def test_alpha_matches_clamped_formula(double, rng):
    """Test random SDF sequences against an independent evaluation."""
    sdf = rng.normal(scale=0.2, size=(30, 12))
    s = 20.0
    alpha = sdf_to_alpha(DenseArray(sdf), s).numpy()
    phi = 1.0 / (1.0 + np.exp(-s * sdf))
    expected = np.zeros_like(sdf)
    expected[:, :-1] = np.clip((phi[:, :-1] - phi[:, 1:]) / phi[:, :-1], 0.0, 1.0)
    np.testing.assert_allclose(alpha, expected, atol=1e-12)
    assert np.all((alpha >= 0) & (alpha <= 1))


# ==================== COMPOSITING TESTS ====================

def test_single_opaque_sample(double):
    """Test one fully opaque sample takes its color with weight 1."""
    weights, color, depth, opacity = composite(DenseArray([[1.0]]), DenseArray([[[0.2, 0.4, 0.6]]]),
                                               np.array([[3.0]]), np.array([5.0]))
    np.testing.assert_allclose(weights.numpy(), [[1.0]])
    np.testing.assert_allclose(color.numpy(), [[0.2, 0.4, 0.6]])
    np.testing.assert_allclose(depth.numpy(), [3.0])


def test_two_sample_hand_case(double):
    """Test alpha (0.5, 1.0) gives weights (0.5, 0.5) and the mean color."""
    c1, c2 = [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]
    weights, color, _, opacity = composite(DenseArray([[0.5, 1.0]]), DenseArray([[c1, c2]]),
                                           np.array([[1.0, 2.0]]), np.array([3.0]))
    np.testing.assert_array_equal(weights.numpy(), [[0.5, 0.5]])
    np.testing.assert_allclose(color.numpy(), [[0.5, 0.0, 0.5]])
    assert opacity.numpy()[0] == 1.0


def test_transparent_ray_is_black_at_far(double):
    """Test all-zero opacity renders black with depth at far."""
    weights, color, depth, opacity = composite(DenseArray(np.zeros((1, 4))), DenseArray(np.ones((1, 4, 3))),
                                               np.array([[1.0, 2.0, 3.0, 4.0]]), np.array([6.0]))
    np.testing.assert_array_equal(weights.numpy(), 0.0)
    np.testing.assert_array_equal(color.numpy(), 0.0)
    assert opacity.numpy()[0] == 0.0
    assert depth.numpy()[0] == 6.0


def test_weights_sum_to_at_most_one(double, rng):
    """Test compositing random SDF sequences keeps every weight and their sum in [0, 1]."""
    for scale, sharpness in ((0.05, 10.0), (0.5, 64.0), (2.0, 500.0)):
        sdf = rng.normal(scale=scale, size=(40, 16))
        t = np.sort(rng.uniform(2.0, 6.0, size=(40, 16)), axis=1)
        alpha = sdf_to_alpha(DenseArray(sdf), sharpness)
        weights, _, depth, opacity = composite(alpha, DenseArray(rng.uniform(size=(40, 16, 3))), t,
                                               np.full(40, 6.0))
        total = weights.numpy().sum(axis=1)
        assert np.all(weights.numpy() >= 0.0)
        assert np.all((total >= 0.0) & (total <= 1.0 + 1e-12))
        np.testing.assert_allclose(opacity.numpy(), total, atol=1e-12)
        assert np.all((depth.numpy() >= 2.0 - 1e-9) & (depth.numpy() <= 6.0 + 1e-9))


# ==================== ANALYTIC BYPASS TESTS ====================

def test_analytic_sphere_depth_within_one_interval(double):
    """Test rendered depth lands within one sampling interval of the ray-sphere hit."""
    cam = make_camera(width=65, height=65, f=60.0, depth_min=2.0, depth_max=6.0)
    rays = generate_rays(cam, pixel_grid(65, 65))
    coarse = 64
    out = render_analytic(rays, AnalyticSDF("sphere", size=1.0), coarse=coarse, fine=32, target_cam=cam)

    oc = rays.origins
    b = np.einsum("ij,ij->i", rays.directions, oc)
    disc = b * b - (np.einsum("ij,ij->i", oc, oc) - 1.0)
    hits = disc > 0
    t_hit = -b[hits] - np.sqrt(disc[hits])
    interval = ((rays.far - rays.near) / coarse)[hits]
    close = np.abs(out.depth.numpy()[hits] - t_hit) <= interval
    assert hits.sum() > 500
    assert close.mean() >= 0.99

    total = out.weights.numpy().sum(axis=1)
    assert np.all((total >= -1e-12) & (total <= 1.0 + 1e-12))


def test_analytic_box_and_plane_signs():
    """Test closed-form SDFs are negative inside and positive outside."""
    box = AnalyticSDF("box", size=1.0)
    np.testing.assert_allclose(box(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])), [-1.0, 1.0])
    plane = AnalyticSDF("plane", center=(0.0, 0.0, 1.0), normal=(0.0, 0.0, 2.0))
    np.testing.assert_allclose(plane(np.array([[5.0, 5.0, 0.0], [0.0, 0.0, 3.0]])), [-1.0, 2.0])


# ==================== FRAME RENDERING TESTS ====================

@pytest.fixture(scope="module")
def tiny_rig():
    cams = ring_cameras(RigSpec(count=3, radius=4.0, elevation=15.0, azimuths=[0.0, 20.0, 40.0]),
                        (0.0, 0.0, 0.0), 16, 16, 1.0)
    images = np.random.default_rng(5).uniform(size=(2, 16, 16, 3))
    return images, [cams[0], cams[2]], cams[1]


def test_render_view_matches_target_size(tiny_rig):
    """Test the rendered frame has the target camera's dimensions."""
    images, sources, target = tiny_rig
    model = ReconNetwork(TINY, seed=0).eval()
    color, depth, mask = render_view(model, images, sources, target)
    assert color.shape == (16, 16, 3)
    assert depth.shape == (16, 16)
    assert mask.shape == (16, 16) and mask.dtype == bool
    assert np.all((color >= 0) & (color <= 1))


def test_render_view_is_deterministic(tiny_rig):
    """Test evaluation renders repeat exactly, regardless of chunking."""
    images, sources, target = tiny_rig
    model = ReconNetwork(TINY, seed=0).eval()
    first = render_view(model, images, sources, target)
    settings.RAY_CHUNK = 37
    settings.THREADS = 3
    second = render_view(model, images, sources, target)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


@pytest.fixture(scope="module")
def five_ring():
    cams = ring_cameras(RigSpec(count=5, radius=4.0, elevation=15.0, azimuths=[0.0, 12.0, 24.0, 36.0, 48.0]),
                        (0.0, 0.0, 0.0), 16, 16, 1.0)
    images = np.random.default_rng(9).uniform(size=(4, 16, 16, 3))
    return images, [cams[0], cams[1], cams[3], cams[4]], cams[2]


@pytest.mark.parametrize("views, order", [
    ([1, 2], [1, 0]),
    ([0, 1, 2], [2, 0, 1]),
    ([0, 1, 2, 3], [3, 1, 0, 2]),
])
def test_source_order_does_not_change_render(double, five_ring, views, order):
    """Test reordering the source views leaves rendered color and depth unchanged."""
    images, cams, target = five_ring
    model = ReconNetwork(TINY, seed=0).eval()
    rays = generate_rays(target, pixel_grid(16, 16)[::5])
    with Graph.suspend():
        base = model.render_rays(model.encode(images[views], [cams[v] for v in views]), rays, target)
        permuted_views = [views[i] for i in order]
        permuted = model.render_rays(model.encode(images[permuted_views], [cams[v] for v in permuted_views]),
                                     rays, target)
    np.testing.assert_allclose(permuted.color.numpy(), base.color.numpy(), atol=1e-6)
    np.testing.assert_allclose(permuted.depth.numpy(), base.depth.numpy(), atol=1e-6)
    np.testing.assert_array_equal(permuted.ray_valid, base.ray_valid)
