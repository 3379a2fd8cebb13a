"""Noise schedule numbers and the guidance-signal identities."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthrelight.errors import GuidanceError, ParameterError, ShapeError
from depthrelight.guidance import (EchoScorer, GuidanceConfig, NoiseSchedule,
                                   OracleScorer, Scorer,
                                   ShadedReferenceScorer, sds_signal)
from depthrelight.shading import LightingSample


def test_schedule_endpoint_values():
    s = NoiseSchedule()
    assert s.timesteps == 1000
    # frozen cumulative products of the stock linear schedule
    assert s.alpha_bar(0) == pytest.approx(0.9999, abs=1e-12)
    assert s.alpha_bar(499) == pytest.approx(0.07858724288177824, rel=1e-12)
    assert s.alpha_bar(999) == pytest.approx(4.035829765375676e-05, rel=1e-12)
    bars = s.alpha_bars
    assert (np.diff(bars) < 0).all()
    assert bars.min() > 0 and bars.max() < 1


def test_schedule_validation_and_bounds():
    with pytest.raises(ParameterError):
        NoiseSchedule(timesteps=0)
    with pytest.raises(ParameterError):
        NoiseSchedule(beta_start=0.0)
    with pytest.raises(ParameterError):
        NoiseSchedule(beta_start=0.3, beta_end=0.2)
    s = NoiseSchedule()
    with pytest.raises(ParameterError):
        s.alpha_bar(-1)
    with pytest.raises(ParameterError):
        s.alpha_bar(1000)


def test_add_noise_formula():
    s = NoiseSchedule()
    x = np.full((2, 2, 3), 0.5)
    eps = np.ones((2, 2, 3))
    t = 300
    ab = s.alpha_bar(t)
    np.testing.assert_allclose(s.add_noise(x, eps, t),
                               np.sqrt(ab) * 0.5 + np.sqrt(1 - ab))
    with pytest.raises(ShapeError):
        s.add_noise(x, np.ones((2, 2)), t)


def test_guidance_config_default_timestep_range():
    cfg = GuidanceConfig()
    assert (cfg.t_min, cfg.t_max) == (20, 980)
    pinned = GuidanceConfig(t_min=300, t_max=300)
    assert (pinned.t_min, pinned.t_max) == (300, 300)
    with pytest.raises(ParameterError):
        GuidanceConfig(t_min=500, t_max=400)
    with pytest.raises(ParameterError):
        GuidanceConfig(t_max=1000)
    with pytest.raises(ParameterError):
        GuidanceConfig(weighting="linear")


def test_weighting_choices():
    sched = NoiseSchedule()
    cfg = GuidanceConfig()
    assert cfg.weight(sched, 123) == pytest.approx(1 - sched.alpha_bar(123))
    flat = GuidanceConfig(weighting="constant")
    assert flat.weight(sched, 123) == 1.0
    assert flat.weight(sched, 900) == 1.0


def test_echo_scorer_gives_bitwise_zero_signal():
    rng = np.random.default_rng(0)
    rendered = rng.random((6, 6, 3))
    cfg = GuidanceConfig()
    sig, t = sds_signal(rendered, EchoScorer(), cfg.schedule(), cfg, rng)
    assert cfg.t_min <= t <= cfg.t_max
    assert (sig == 0.0).all()


def test_oracle_scorer_matches_closed_form():
    rng = np.random.default_rng(1)
    rendered = rng.random((5, 7, 3))
    reference = rng.random((5, 7, 3))
    cfg = GuidanceConfig(t_min=300, t_max=300)
    sched = cfg.schedule()
    sig, t = sds_signal(rendered, OracleScorer(sched, reference), sched,
                        cfg, rng)
    assert t == 300
    ab = sched.alpha_bar(300)
    coeff = (1 - ab) * np.sqrt(ab) / np.sqrt(1 - ab)
    np.testing.assert_allclose(sig, coeff * (rendered - reference),
                               atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 999))
def test_oracle_identity_holds_at_every_timestep(t):
    rng = np.random.default_rng(t)
    rendered = rng.random((4, 4, 3))
    reference = rng.random((4, 4, 3))
    cfg = GuidanceConfig(t_min=t, t_max=t)
    sched = cfg.schedule()
    sig, _ = sds_signal(rendered, OracleScorer(sched, reference), sched,
                        cfg, rng)
    ab = sched.alpha_bar(t)
    coeff = (1 - ab) * np.sqrt(ab) / np.sqrt(1 - ab)
    np.testing.assert_allclose(sig, coeff * (rendered - reference), atol=1e-10)


def test_shaded_reference_scorer_requires_begin_step():
    calls = []

    def reference_fn(light):
        calls.append(light)
        return np.full((3, 3, 3), 0.25)

    cfg = GuidanceConfig(t_min=100, t_max=100)
    scorer = ShadedReferenceScorer(cfg.schedule(), reference_fn)
    rng = np.random.default_rng(2)
    rendered = rng.random((3, 3, 3))
    with pytest.raises(GuidanceError):
        sds_signal(rendered, scorer, cfg.schedule(), cfg, rng)

    light = LightingSample(np.array([0.1, 0.2, 1.0]), 0.5, 0.5, 16.0)
    scorer.begin_step(light)
    sig, _ = sds_signal(rendered, scorer, cfg.schedule(), cfg, rng)
    assert len(calls) == 1 and calls[0] is light
    assert np.isfinite(sig).all()


def test_sds_signal_rejects_bad_scorer_output():
    class WrongShape(Scorer):
        def predict_noise(self, noisy, t, noise, prompt):
            return noise[:2]

    class NotFinite(Scorer):
        def predict_noise(self, noisy, t, noise, prompt):
            out = np.array(noise)
            out[0, 0, 0] = np.nan
            return out

    rng = np.random.default_rng(3)
    rendered = rng.random((4, 4, 3))
    cfg = GuidanceConfig()
    with pytest.raises(GuidanceError):
        sds_signal(rendered, WrongShape(), cfg.schedule(), cfg, rng)
    with pytest.raises(GuidanceError):
        sds_signal(rendered, NotFinite(), cfg.schedule(), cfg, rng)


def test_signal_weight_scales_linearly():
    # Same rng stream, same timestep: constant weighting divides out the
    # one-minus-alpha-bar factor exactly.
    rendered = np.full((3, 3, 3), 0.6)
    reference = np.full((3, 3, 3), 0.2)
    t = 512
    a = GuidanceConfig(t_min=t, t_max=t)
    b = GuidanceConfig(t_min=t, t_max=t, weighting="constant")
    sched = a.schedule()
    sig_a, _ = sds_signal(rendered, OracleScorer(sched, reference), sched, a,
                          np.random.default_rng(9))
    sig_b, _ = sds_signal(rendered, OracleScorer(sched, reference), sched, b,
                          np.random.default_rng(9))
    np.testing.assert_allclose(sig_a, (1 - sched.alpha_bar(t)) * sig_b,
                               rtol=1e-12)
