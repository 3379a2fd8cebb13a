"""Score-distillation guidance: noise schedule, scorer interface, signal.

The guidance signal for one step is w(t) * (eps_hat - eps), used directly as
the cotangent of the rendered image. The scorer output is treated as a
constant; no derivative flows through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GuidanceError, ParameterError, ShapeError
from .shading import LightingSample

WEIGHT_ONE_MINUS_ALPHA_BAR = "one_minus_alpha_bar"
WEIGHT_CONSTANT = "constant"


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta diffusion schedule with cumulative signal fractions."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.timesteps < 1:
            raise ParameterError("schedule needs at least one timestep")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ParameterError("betas must satisfy 0 < start <= end < 1")
        betas = np.linspace(self.beta_start, self.beta_end, self.timesteps)
        bars = np.cumprod(1.0 - betas)
        bars.setflags(write=False)
        object.__setattr__(self, "alpha_bars", bars)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t < self.timesteps:
            raise ParameterError(f"timestep {t} outside [0, {self.timesteps})")
        return float(self.alpha_bars[t])

    def add_noise(self, x: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
        if x.shape != eps.shape:
            raise ShapeError("noise shape must match the input")
        ab = self.alpha_bar(t)
        return np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps


@dataclass(frozen=True)
class GuidanceConfig:
    """Timestep sampling range and weighting choice for the signal."""

    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    t_min: int | None = None
    t_max: int | None = None
    weighting: str = WEIGHT_ONE_MINUS_ALPHA_BAR

    def __post_init__(self):
        if self.weighting not in (WEIGHT_ONE_MINUS_ALPHA_BAR, WEIGHT_CONSTANT):
            raise ParameterError(f"unknown weighting {self.weighting!r}")
        lo = self.t_min if self.t_min is not None else \
            int(np.ceil(0.02 * self.timesteps))
        hi = self.t_max if self.t_max is not None else \
            int(np.floor(0.98 * self.timesteps))
        if not 0 <= lo <= hi < self.timesteps:
            raise ParameterError(f"timestep range [{lo}, {hi}] is invalid")
        object.__setattr__(self, "t_min", lo)
        object.__setattr__(self, "t_max", hi)

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.timesteps, self.beta_start, self.beta_end)

    def weight(self, schedule: NoiseSchedule, t: int) -> float:
        if self.weighting == WEIGHT_CONSTANT:
            return 1.0
        return 1.0 - schedule.alpha_bar(t)


class Scorer:
    """Noise predictor interface.

    predict_noise receives the noised rendering, the timestep, the noise that
    was mixed in, and the text prompt; it returns the predicted noise field.
    prepare_noise lets transports with narrower precision quantize the noise
    before it is used, so self-consistency identities stay exact end to end.
    """

    def begin_step(self, light: LightingSample) -> None:
        pass

    def prepare_noise(self, noise: np.ndarray) -> np.ndarray:
        return noise

    def predict_noise(self, noisy: np.ndarray, t: int, noise: np.ndarray,
                      prompt: str) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        pass


class EchoScorer(Scorer):
    """Returns the injected noise verbatim, so the signal vanishes."""

    def predict_noise(self, noisy, t, noise, prompt):
        return noise.copy()


class OracleScorer(Scorer):
    """Closed-form predictor built from a fixed clean reference image.

    With x_t = sqrt(ab) x + sqrt(1 - ab) eps, predicting
    (x_t - sqrt(ab) ref) / sqrt(1 - ab) makes the signal

        w(t) sqrt(ab) / sqrt(1 - ab) * (x - ref)

    with the sampled noise cancelling exactly.
    """

    def __init__(self, schedule: NoiseSchedule, reference: np.ndarray):
        self.schedule = schedule
        self.reference = np.asarray(reference, dtype=np.float64)

    def predict_noise(self, noisy, t, noise, prompt):
        if noisy.shape != self.reference.shape:
            raise ShapeError("reference shape does not match the rendering")
        ab = self.schedule.alpha_bar(t)
        return (noisy - np.sqrt(ab) * self.reference) / np.sqrt(1.0 - ab)


class ShadedReferenceScorer(Scorer):
    """Oracle whose reference is re-shaded for each lighting sample.

    reference_fn maps a LightingSample to the clean target rendering; it is
    invoked from begin_step so the target tracks the per-step lighting.
    """

    def __init__(self, schedule: NoiseSchedule, reference_fn):
        self.schedule = schedule
        self.reference_fn = reference_fn
        self._oracle: OracleScorer | None = None

    def begin_step(self, light: LightingSample) -> None:
        self._oracle = OracleScorer(self.schedule, self.reference_fn(light))

    def predict_noise(self, noisy, t, noise, prompt):
        if self._oracle is None:
            raise GuidanceError("begin_step was never called with a lighting")
        return self._oracle.predict_noise(noisy, t, noise, prompt)


def sds_signal(rendered: np.ndarray, scorer: Scorer, schedule: NoiseSchedule,
               cfg: GuidanceConfig, rng: np.random.Generator,
               prompt: str = "") -> tuple[np.ndarray, int]:
    """One guidance sample: returns the image-space cotangent and the t used."""
    t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
    eps = scorer.prepare_noise(rng.standard_normal(rendered.shape))
    noisy = schedule.add_noise(rendered, eps, t)
    eps_hat = np.asarray(scorer.predict_noise(noisy, t, eps, prompt),
                         dtype=np.float64)
    if eps_hat.shape != rendered.shape:
        raise GuidanceError(
            f"scorer returned shape {eps_hat.shape}, expected {rendered.shape}")
    if not np.isfinite(eps_hat).all():
        raise GuidanceError("scorer returned non-finite values")
    return cfg.weight(schedule, t) * (eps_hat - eps), t
