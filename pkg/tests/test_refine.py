"""Optimizer loop pieces: smoothing operator, AdamW, losses, ensembling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthrelight.errors import (NumericError, ParameterError, ShapeError)
from depthrelight.grids import RgbGrid, ScalarGrid
from depthrelight.guidance import EchoScorer, GuidanceConfig, NoiseSchedule, Scorer
from depthrelight.phantoms import gaussian_bump_disparity, textured_image
from depthrelight.refine import (AdamW, Parameterization, RefineConfig,
                                 binomial_matrix, config_from_mapping,
                                 ensemble, refine, refine_ensemble,
                                 refine_run, run_seeds, smoothness_loss)


def test_binomial_matrix_interior_row_and_row_sums():
    a = binomial_matrix(7)
    np.testing.assert_allclose(a.sum(axis=1), 1.0)
    np.testing.assert_allclose(a[3, 1:6],
                               np.array([1, 4, 6, 4, 1]) / 16.0)
    assert (a[3, :1] == 0).all() and (a[3, 6:] == 0).all()
    with pytest.raises(ShapeError):
        binomial_matrix(1)


def test_binomial_matrix_preserves_constants_and_contracts():
    a = binomial_matrix(9)
    np.testing.assert_allclose(a @ np.ones(9), 1.0)
    rng = np.random.default_rng(0)
    x = rng.random(9)
    assert np.var(a @ x) <= np.var(x)


def test_smoothed_decode_adjoint_is_transpose():
    rng = np.random.default_rng(1)
    p = Parameterization("smoothed", rng.random((6, 5)))
    x = p.latent
    y = rng.random((6, 5))
    lhs = float(np.sum(p.decode() * y))
    rhs = float(np.sum(x * p.decode_adjoint(y)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_direct_decode_is_identity():
    rng = np.random.default_rng(2)
    x = rng.random((4, 4))
    p = Parameterization("direct", x)
    np.testing.assert_array_equal(p.decode(), x)
    np.testing.assert_array_equal(p.decode_adjoint(x), x)


def test_smoothed_decode_keeps_unit_interval():
    rng = np.random.default_rng(3)
    p = Parameterization("smoothed", rng.random((8, 8)))
    out = p.decode()
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_adamw_matches_reference_implementation():
    rng = np.random.default_rng(4)
    param = rng.random(5)
    opt = AdamW(lr=0.01, weight_decay=0.1)

    ref_p = param.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 6):
        grad = rng.standard_normal(5)
        param = opt.step(param, grad)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        update = (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        ref_p = ref_p - 0.01 * (update + 0.1 * ref_p)
        np.testing.assert_allclose(param, ref_p, rtol=1e-14)


def test_adamw_first_step_is_signlike():
    opt = AdamW(lr=0.5)
    param = np.array([1.0, -1.0, 0.0])
    grad = np.array([3.0, -0.2, 0.0])
    out = opt.step(param, grad)
    np.testing.assert_allclose(out[:2], param[:2] - 0.5 * np.sign(grad[:2]),
                               atol=1e-6)
    assert out[2] == 0.0


def test_smoothness_hand_values():
    grid = ScalarGrid(np.array([[0.0, 1.0], [0.0, 1.0]]))
    value, _ = smoothness_loss(grid, 1.0)
    assert value == pytest.approx(0.5)
    bigger = ScalarGrid(np.array([[0.0, 2.0], [0.0, 2.0]]))
    v_sq, _ = smoothness_loss(bigger, 1.0, "squared")
    v_l1, _ = smoothness_loss(bigger, 1.0, "l1")
    assert v_sq == pytest.approx(2.0)
    assert v_l1 == pytest.approx(1.0)
    v_scaled, _ = smoothness_loss(grid, 3.0)
    assert v_scaled == pytest.approx(1.5)
    with pytest.raises(ParameterError):
        smoothness_loss(grid, 1.0, "tv")


@pytest.mark.parametrize("kind", ["squared", "l1"])
def test_smoothness_gradient_matches_fd(kind):
    from depthrelight.autodiff import fd_gradient
    rng = np.random.default_rng(5)
    x = rng.random((5, 6))
    if kind == "l1":
        # keep FD away from the |.| kink: make every forward difference
        # at least 0.6 in magnitude along both axes
        x = np.add.outer(np.arange(5.0), np.arange(6.0)) + 0.2 * x

    def f(a):
        return smoothness_loss(ScalarGrid(a), 2.5, kind)[0]

    _, grad = smoothness_loss(ScalarGrid(x), 2.5, kind)
    fd = fd_gradient(f, x.copy())
    # the l1 objective is larger in magnitude, so central differences carry
    # more cancellation noise at its exact-zero interior entries
    atol = 1e-10 if kind == "squared" else 1e-8
    np.testing.assert_allclose(grad.values, fd, rtol=1e-6, atol=atol)


def test_constant_grid_has_zero_smoothness():
    grid = ScalarGrid(np.full((4, 4), 0.7))
    value, grad = smoothness_loss(grid, 1.0)
    assert value == 0.0
    np.testing.assert_array_equal(grad.values, 0.0)


def test_refine_zero_iterations_returns_init_verbatim():
    img = textured_image(6, 6)
    init = gaussian_bump_disparity(6, 6)
    cfg = RefineConfig(iterations=0)
    res = refine_run(img, init, cfg, None)
    np.testing.assert_array_equal(res.disparity.values, init.values)
    assert res.smoothness_trace == ()
    assert res.timesteps == ()


def test_refine_config_validation():
    with pytest.raises(ParameterError):
        RefineConfig(iterations=-1)
    with pytest.raises(ParameterError):
        RefineConfig(lr_disparity=0.0)
    with pytest.raises(ParameterError):
        RefineConfig(lambda1=-0.5)
    with pytest.raises(ParameterError):
        RefineConfig(ensemble_runs=0)
    with pytest.raises(ParameterError):
        RefineConfig(parameterization="fourier")
    with pytest.raises(ParameterError):
        RefineConfig(smoothness="huber")


def test_refine_rejects_out_of_range_init():
    img = textured_image(4, 4)
    bad = ScalarGrid(np.full((4, 4), 1.5))
    with pytest.raises(ParameterError):
        refine(img, bad, RefineConfig(iterations=1), None)


def test_refine_rejects_shape_mismatch():
    img = textured_image(4, 5)
    init = gaussian_bump_disparity(4, 4)
    with pytest.raises(ShapeError):
        refine(img, init, RefineConfig(iterations=1), None)


def test_refine_is_seed_deterministic_and_stays_in_range():
    img = textured_image(8, 8)
    init = gaussian_bump_disparity(8, 8)
    cfg = RefineConfig(iterations=8, seed=11, optimize_camera=False)
    a = refine_run(img, init, cfg, EchoScorer())
    b = refine_run(img, init, cfg, EchoScorer())
    np.testing.assert_array_equal(a.disparity.values, b.disparity.values)
    assert a.timesteps == b.timesteps
    assert len(a.timesteps) == 8
    assert len(a.smoothness_trace) == 8
    assert a.disparity.values.min() >= 0.0
    assert a.disparity.values.max() <= 1.0


def test_refine_without_scorer_records_no_timesteps():
    img = textured_image(6, 6)
    init = gaussian_bump_disparity(6, 6)
    res = refine_run(img, init, RefineConfig(iterations=3), None)
    assert res.timesteps == ()
    assert len(res.smoothness_trace) == 3


def test_refine_camera_updates_only_when_enabled():
    img = textured_image(8, 8)
    init = gaussian_bump_disparity(8, 8)
    frozen = refine_run(img, init,
                        RefineConfig(iterations=4, optimize_camera=False),
                        EchoScorer())
    assert frozen.camera.scale_or_focal == \
        RefineConfig().initial_camera().scale_or_focal
    # echo guidance has zero gradient, so even the free camera cannot move
    free = refine_run(img, init, RefineConfig(iterations=4), EchoScorer())
    assert free.camera.scale_or_focal == frozen.camera.scale_or_focal


def test_non_finite_guidance_raises_numeric_error():
    # A near-f64-max noise prediction is still finite, but pulling it back
    # through the gamma slope of a very dark image overflows the gradient,
    # which must surface with the run seed and iteration attached.
    class Hot(Scorer):
        def predict_noise(self, noisy, t, noise, prompt):
            return noise + 1e307

    img = RgbGrid(np.full((6, 6, 3), 0.02))
    init = ScalarGrid(np.full((6, 6), 0.5))
    cfg = RefineConfig(iterations=2, seed=13, optimize_camera=False)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError) as info:
            refine(img, init, cfg, Hot())
    assert "seed 13" in str(info.value)
    assert "iteration 0" in str(info.value)


def test_ensemble_identity_and_bounds():
    rng = np.random.default_rng(6)
    maps = [ScalarGrid(rng.random((5, 5))) for _ in range(4)]
    same = ensemble([maps[0]] * 3)
    np.testing.assert_array_equal(same.values, maps[0].values)
    mean = ensemble(maps)
    stack = np.stack([m.values for m in maps])
    assert (mean.values >= stack.min(axis=0) - 1e-15).all()
    assert (mean.values <= stack.max(axis=0) + 1e-15).all()
    np.testing.assert_allclose(mean.values, stack.mean(axis=0))


def test_ensemble_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        ensemble([])
    with pytest.raises(ShapeError):
        ensemble([ScalarGrid(np.zeros((2, 2))), ScalarGrid(np.zeros((2, 3)))])


def test_run_seeds_prefix_stability():
    # the first child seed is the same regardless of how many are drawn,
    # so a 1-run ensemble reproduces run 0 of a larger one
    three = run_seeds(123, 3)
    one = run_seeds(123, 1)
    assert three[0].entropy == one[0].entropy
    assert three[0].spawn_key == one[0].spawn_key
    g_three = np.random.default_rng(three[0]).random(4)
    g_one = np.random.default_rng(one[0]).random(4)
    np.testing.assert_array_equal(g_three, g_one)


def test_refine_ensemble_matches_manual_mean_and_threading():
    img = textured_image(8, 8)
    init = gaussian_bump_disparity(8, 8)
    cfg = RefineConfig(iterations=5, ensemble_runs=3, seed=21,
                       optimize_camera=False)
    mean_a, runs_a = refine_ensemble(img, init, cfg, lambda: EchoScorer())
    np.testing.assert_array_equal(
        mean_a.values, ensemble([r.disparity for r in runs_a]).values)
    mean_b, _ = refine_ensemble(img, init, cfg, lambda: EchoScorer(), jobs=3)
    np.testing.assert_array_equal(mean_a.values, mean_b.values)
    assert [r.seed for r in runs_a] == [0, 1, 2]


def test_export_dir_writes_per_step_gradients(tmp_path):
    from depthrelight.fileio import load_raw_grid
    img = textured_image(6, 6)
    init = gaussian_bump_disparity(6, 6)
    out = tmp_path / "grads"
    out.mkdir()
    cfg = RefineConfig(iterations=3, export_dir=str(out),
                       optimize_camera=False)
    refine(img, init, cfg, EchoScorer())
    files = sorted(out.glob("grad_*.rdgr"))
    assert [f.name for f in files] == \
        ["grad_00000.rdgr", "grad_00001.rdgr", "grad_00002.rdgr"]
    g = load_raw_grid(files[0])
    assert g.shape == (6, 6)


def test_config_from_mapping_splits_guidance_keys():
    cfg = config_from_mapping({
        "iterations": 12,
        "lr_disparity": 0.005,
        "t_min": 100,
        "t_max": 200,
        "weighting": "constant",
        "scorer_timeout": 5.0,
        "prompt": "a photo",
    })
    assert cfg.iterations == 12
    assert cfg.lr_disparity == 0.005
    assert cfg.prompt == "a photo"
    assert (cfg.guidance.t_min, cfg.guidance.t_max) == (100, 200)
    assert cfg.guidance.weighting == "constant"
    assert not hasattr(cfg, "scorer_timeout")


def test_config_from_mapping_defaults():
    cfg = config_from_mapping({})
    assert cfg.iterations == RefineConfig().iterations == 1000
    assert cfg.lambda1 == 1.0
    assert (cfg.guidance.t_min, cfg.guidance.t_max) == (20, 980)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=4, max_size=4))
def test_ensemble_of_constant_grids_is_their_mean(fills):
    maps = [ScalarGrid(np.full((3, 3), f)) for f in fills]
    out = ensemble(maps)
    np.testing.assert_allclose(out.values, np.mean(fills), atol=1e-15)
