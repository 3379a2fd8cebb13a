"""Test-time refinement loop: per-step lighting, guidance pullback, AdamW.

Each step samples a lighting condition, renders the current disparity,
obtains a guidance cotangent on the rendering, pulls it back to the latent
together with the smoothness gradient, and applies decoupled adaptive-moment
updates per parameter group. Ensembling averages independently seeded runs.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import CLAMP_LITERAL, CLAMP_STRAIGHT_THROUGH, render_forward, \
    render_pullback
from .errors import NumericError, ParameterError, ShapeError
from .geometry import ORTHOGRAPHIC, PERSPECTIVE, CameraModel, \
    DisparityToDepthParams
from .grids import RgbGrid, ScalarGrid
from .guidance import GuidanceConfig, Scorer, sds_signal
from .shading import sample_lighting

PARAM_DIRECT = "direct"
PARAM_SMOOTHED = "smoothed"

SMOOTHNESS_SQUARED = "squared"
SMOOTHNESS_L1 = "l1"

# 5-tap binomial low-pass used by the smoothed parameterization.
_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

_PARAM_FLOOR = 1e-6


@dataclass(frozen=True)
class RefineConfig:
    """Loop hyperparameters; defaults follow the reference protocol."""

    iterations: int = 1000
    lr_disparity: float = 1e-3
    lr_camera: float = 2e-6
    lambda1: float = 1.0
    ensemble_runs: int = 10
    seed: int = 0
    parameterization: str = PARAM_DIRECT
    smoothness: str = SMOOTHNESS_SQUARED
    clamp_gradient: str = CLAMP_LITERAL
    camera: str = ORTHOGRAPHIC
    camera_param: float | None = None
    optimize_camera: bool = True
    b: float = 0.1
    optimize_b: bool = False
    prompt: str = ""
    export_dir: str | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ParameterError("iterations must be nonnegative")
        if self.lr_disparity <= 0 or self.lr_camera <= 0:
            raise ParameterError("learning rates must be positive")
        if self.lambda1 < 0:
            raise ParameterError("lambda1 must be nonnegative")
        if self.ensemble_runs < 1:
            raise ParameterError("ensemble needs at least one run")
        if self.parameterization not in (PARAM_DIRECT, PARAM_SMOOTHED):
            raise ParameterError(
                f"unknown parameterization {self.parameterization!r}")
        if self.smoothness not in (SMOOTHNESS_SQUARED, SMOOTHNESS_L1):
            raise ParameterError(f"unknown smoothness {self.smoothness!r}")
        if self.clamp_gradient not in (CLAMP_LITERAL, CLAMP_STRAIGHT_THROUGH):
            raise ParameterError(
                f"unknown clamp gradient {self.clamp_gradient!r}")
        if self.camera not in (ORTHOGRAPHIC, PERSPECTIVE):
            raise ParameterError(f"unknown camera {self.camera!r}")
        if self.camera_param is not None and self.camera_param <= 0:
            raise ParameterError("camera parameter must be positive")
        if self.b <= 0:
            raise ParameterError("offset b must be positive")

    def initial_camera(self) -> CameraModel:
        if self.camera_param is not None:
            return CameraModel(self.camera, self.camera_param,
                               self.optimize_camera)
        return CameraModel.default(self.camera, self.optimize_camera)


def _reflect_index(j: int, n: int) -> int:
    while j < 0 or j >= n:
        j = -j if j < 0 else 2 * n - 2 - j
    return j


def binomial_matrix(n: int) -> np.ndarray:
    """Dense 1-D smoothing operator with mirror-reflected borders.

    Rows sum to one, so smoothing a grid valued in [0, 1] stays in [0, 1];
    the explicit matrix makes the decode adjoint an exact transpose.
    """
    if n < 2:
        raise ShapeError("smoothing needs at least 2 samples")
    a = np.zeros((n, n))
    for i in range(n):
        for off in range(-2, 3):
            a[i, _reflect_index(i + off, n)] += _BINOMIAL[off + 2]
    return a


class Parameterization:
    """Latent grid with a decode into disparity space."""

    def __init__(self, kind: str, latent: np.ndarray):
        self.kind = kind
        self.latent = np.array(latent, dtype=np.float64)
        if kind == PARAM_SMOOTHED:
            h, w = self.latent.shape
            self._rows = binomial_matrix(h)
            self._cols = binomial_matrix(w)

    def decode(self) -> np.ndarray:
        if self.kind == PARAM_DIRECT:
            return self.latent
        return self._rows @ self.latent @ self._cols.T

    def decode_adjoint(self, cot: np.ndarray) -> np.ndarray:
        if self.kind == PARAM_DIRECT:
            return cot
        return self._rows.T @ cot @ self._cols


class AdamW:
    """Decoupled-weight-decay adaptive moments for one parameter group."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        update = m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            update = update + self.weight_decay * param
        return param - self.lr * update


def smoothness_loss(disp: ScalarGrid, lambda1: float,
                    kind: str = SMOOTHNESS_SQUARED) -> tuple[float, ScalarGrid]:
    value, grad = _smoothness_raw(disp.values, lambda1, kind)
    return value, ScalarGrid(grad)


def _smoothness_raw(disp: np.ndarray, lambda1: float,
                    kind: str) -> tuple[float, np.ndarray]:
    h, w = disp.shape
    du = disp[:, 1:] - disp[:, :-1]
    dv = disp[1:, :] - disp[:-1, :]
    scale = lambda1 / (h * w)
    grad = np.zeros_like(disp)
    if kind == SMOOTHNESS_SQUARED:
        value = scale * (np.sum(du * du) + np.sum(dv * dv))
        grad[:, 1:] += 2.0 * scale * du
        grad[:, :-1] -= 2.0 * scale * du
        grad[1:, :] += 2.0 * scale * dv
        grad[:-1, :] -= 2.0 * scale * dv
    elif kind == SMOOTHNESS_L1:
        value = scale * (np.sum(np.abs(du)) + np.sum(np.abs(dv)))
        su, sv = np.sign(du), np.sign(dv)
        grad[:, 1:] += scale * su
        grad[:, :-1] -= scale * su
        grad[1:, :] += scale * sv
        grad[:-1, :] -= scale * sv
    else:
        raise ParameterError(f"unknown smoothness {kind!r}")
    return float(value), grad


@dataclass(frozen=True)
class ParamGradients:
    """Per-step gradients in latent space plus the scalar groups."""

    latent: np.ndarray
    camera: float
    b: float


@dataclass
class RefineState:
    """Mutable optimization state for one run."""

    param: Parameterization
    camera: CameraModel
    dparams: DisparityToDepthParams
    opt_latent: AdamW
    opt_camera: AdamW
    opt_b: AdamW
    iteration: int = 0
    smoothness_trace: list = field(default_factory=list)
    timesteps: list = field(default_factory=list)


def _init_state(init_disp: np.ndarray, cfg: RefineConfig) -> RefineState:
    if init_disp.min() < 0 or init_disp.max() > 1:
        raise ParameterError("initial disparity must lie in [0, 1]")
    return RefineState(
        param=Parameterization(cfg.parameterization, init_disp),
        camera=cfg.initial_camera(),
        dparams=DisparityToDepthParams(b=cfg.b, optimizable_b=cfg.optimize_b),
        opt_latent=AdamW(cfg.lr_disparity),
        opt_camera=AdamW(cfg.lr_camera),
        opt_b=AdamW(cfg.lr_camera),
    )


def refine_step(state: RefineState, image: np.ndarray, scorer: Scorer | None,
                rng: np.random.Generator, cfg: RefineConfig,
                seed_note: int | None = None) -> None:
    """One in-place optimization step on the run state."""
    light = sample_lighting(rng)
    disp = state.param.decode()
    tape = render_forward(disp, image, light, state.camera, state.dparams,
                          cfg.clamp_gradient)

    if scorer is not None:
        scorer.begin_step(light)
        schedule = cfg.guidance.schedule()
        cot, t = sds_signal(tape.rendered, scorer, schedule, cfg.guidance,
                            rng, cfg.prompt)
        grads = render_pullback(tape, cot)
        state.timesteps.append(t)
        disp_grad = grads.disparity
        cam_grad, b_grad = grads.camera, grads.b
    else:
        disp_grad = np.zeros_like(disp)
        cam_grad = b_grad = 0.0

    sm_value, sm_grad = _smoothness_raw(disp, cfg.lambda1, cfg.smoothness)
    state.smoothness_trace.append(sm_value)

    latent_grad = state.param.decode_adjoint(disp_grad + sm_grad)
    if not (np.isfinite(latent_grad).all() and np.isfinite(cam_grad)
            and np.isfinite(b_grad)):
        seed = cfg.seed if seed_note is None else seed_note
        raise NumericError(
            f"non-finite gradient at iteration {state.iteration} "
            f"(seed {seed})")

    if cfg.export_dir is not None:
        export_gradients(ParamGradients(latent_grad, cam_grad, b_grad),
                         f"{cfg.export_dir}/grad_{state.iteration:05d}.rdgr")

    new_latent = state.opt_latent.step(state.param.latent, latent_grad)
    state.param.latent = np.clip(new_latent, 0.0, 1.0)

    if state.camera.optimizable:
        raw = state.opt_camera.step(
            np.float64(state.camera.scale_or_focal), np.float64(cam_grad))
        state.camera = replace(state.camera,
                               scale_or_focal=max(float(raw), _PARAM_FLOOR))
    if state.dparams.optimizable_b:
        raw = state.opt_b.step(np.float64(state.dparams.b),
                               np.float64(b_grad))
        state.dparams = replace(state.dparams,
                                b=max(float(raw), _PARAM_FLOOR))
    state.iteration += 1


@dataclass(frozen=True)
class RefineResult:
    """Final decoded disparity plus diagnostics from one run."""

    disparity: ScalarGrid
    camera: CameraModel
    dparams: DisparityToDepthParams
    smoothness_trace: tuple
    timesteps: tuple
    seed: int


def refine_run(image: RgbGrid, init_disp: ScalarGrid, cfg: RefineConfig,
               scorer: Scorer | None,
               rng: np.random.Generator | None = None,
               seed_note: int | None = None) -> RefineResult:
    if image.shape[:2] != init_disp.shape:
        raise ShapeError("image and disparity shapes do not match")
    if cfg.iterations == 0:
        return RefineResult(init_disp, cfg.initial_camera(),
                            DisparityToDepthParams(b=cfg.b), (), (),
                            cfg.seed if seed_note is None else seed_note)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    state = _init_state(init_disp.values, cfg)
    img = image.values
    for _ in range(cfg.iterations):
        refine_step(state, img, scorer, rng, cfg, seed_note)
    final = np.clip(state.param.decode(), 0.0, 1.0)
    return RefineResult(ScalarGrid(final), state.camera, state.dparams,
                        tuple(state.smoothness_trace), tuple(state.timesteps),
                        cfg.seed if seed_note is None else seed_note)


def refine(image: RgbGrid, init_disp: ScalarGrid, cfg: RefineConfig,
           scorer: Scorer | None) -> ScalarGrid:
    """Single-run refinement returning only the decoded disparity."""
    return refine_run(image, init_disp, cfg, scorer).disparity


def ensemble(maps: list[ScalarGrid]) -> ScalarGrid:
    """Per-pixel arithmetic mean of equally shaped disparity maps.

    Identical inputs return the shared map bitwise, keeping the mean an
    exact identity instead of accumulating n*x/n rounding.
    """
    if not maps:
        raise ParameterError("ensemble needs at least one map")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ShapeError("ensemble inputs must share a shape")
    first = maps[0].values
    if all(np.array_equal(m.values, first) for m in maps[1:]):
        return maps[0]
    return ScalarGrid(np.mean([m.values for m in maps], axis=0))


def run_seeds(seed: int, runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(runs)


def refine_ensemble(image: RgbGrid, init_disp: ScalarGrid, cfg: RefineConfig,
                    scorer_factory, jobs: int = 1
                    ) -> tuple[ScalarGrid, list[RefineResult]]:
    """Independently seeded runs reduced by a per-pixel mean.

    scorer_factory() builds one scorer per run (or returns None for
    guidance-free smoothing); each run owns its seed stream and connection,
    so results do not depend on the number of worker threads.
    """
    seqs = run_seeds(cfg.seed, cfg.ensemble_runs)

    def one_run(index: int) -> RefineResult:
        scorer = scorer_factory()
        try:
            rng = np.random.default_rng(seqs[index])
            return refine_run(image, init_disp, cfg, scorer, rng,
                              seed_note=index)
        finally:
            if scorer is not None:
                scorer.close()

    if jobs > 1 and cfg.ensemble_runs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one_run, range(cfg.ensemble_runs)))
    else:
        results = [one_run(i) for i in range(cfg.ensemble_runs)]
    mean = ensemble([r.disparity for r in results])
    return mean, results


def export_gradients(grads: ParamGradients, path: str) -> None:
    """Write the latent gradient grid in the raw-grid file format."""
    from .fileio import save_raw_grid
    save_raw_grid(ScalarGrid(grads.latent), path)


_GUIDANCE_KEYS = ("timesteps", "beta_start", "beta_end", "t_min", "t_max",
                  "weighting")
_NON_REFINE_KEYS = ("scorer_timeout", "depth_cap", "eval_resize")


def config_from_mapping(mapping: dict) -> RefineConfig:
    """RefineConfig from a flat run-config mapping; absent keys keep defaults.

    Transport and evaluation keys that share the config file are skipped
    here; the command layer reads them directly.
    """
    guidance = {k: mapping[k] for k in _GUIDANCE_KEYS if k in mapping}
    rest = {k: v for k, v in mapping.items()
            if k not in _GUIDANCE_KEYS and k not in _NON_REFINE_KEYS}
    return RefineConfig(guidance=GuidanceConfig(**guidance), **rest)
