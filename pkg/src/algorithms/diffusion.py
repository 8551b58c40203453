"""
Prior-drift diffusion on the residual channel

Forward process, v-parameterization, recovery, the clean-label estimate and
the reverse-step building blocks. All functions work on plain arrays; the
state always carries the prior it drifts toward, and the residual
r_t = s_t - pi is what the denoiser sees noise on.
"""
import threading
from typing import Optional, Protocol, Sequence, Tuple, Union

import logging
import numpy as np

from src.algorithms.schedule import Schedule, posterior_coeffs
from src.models.domain import DiffusionState, ForwardForm, PosteriorMode, SamplerType
from src.models.errors import ShapeError

logger = logging.getLogger(__name__)

Steps = Union[int, Sequence[int], np.ndarray]


class Denoiser(Protocol):
    """Anything that predicts v on the residual channel"""

    def predict_v(self, s_t: np.ndarray, image: np.ndarray, prior: np.ndarray, t: Steps) -> np.ndarray:
        ...


class PriorInjectionCounter:
    """Counts prior terms added by reverse-step means (thread-safe)"""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def tick(self) -> None:
        with self._lock:
            self.count += 1


def _same_shape(op: str, *arrays: np.ndarray) -> None:
    first = arrays[0].shape
    if any(a.shape != first for a in arrays[1:]):
        raise ShapeError(op, [a.shape for a in arrays])


def _per_item(coef: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Broadcast a scalar or [B] coefficient over [B,C,H,W]"""
    coef = np.asarray(coef, dtype=np.float64)
    if coef.ndim == 0:
        return coef
    return coef.reshape((-1,) + (1,) * (like.ndim - 1))


def _steps(sch: Schedule, t: Steps, allow_zero: bool = True) -> np.ndarray:
    steps = np.asarray(t, dtype=np.int64)
    lo = 0 if allow_zero else 1
    if np.any(steps < lo) or np.any(steps > sch.T):
        raise ValueError(f"step(s) {steps.tolist()} outside [{lo}, {sch.T}]")
    return steps


# ---------------------------------------------------------------------------
# forward process

def q_sample(y_star: np.ndarray, prior: np.ndarray, t: Steps, eps: np.ndarray, sch: Schedule) -> DiffusionState:
    """
    Sample s_t from the closed-form marginal

    s_t = sqrt(rho_bar_t) y* + (1 - sqrt(rho_bar_t)) pi + sigma_bar_t eps,
    i.e. r_t = sqrt(rho_bar_t) r0 + sigma_bar_t eps.

    Args:
        y_star: One-hot target [B,C,H,W]
        prior: Prior probabilities [B,C,H,W]
        t: Step for the whole batch or one per item, in [0, T]
        eps: Standard normal noise [B,C,H,W]
        sch: Schedule

    Returns:
        DiffusionState at t (t stored as int when scalar)
    """
    _same_shape("q_sample", y_star, prior, eps)
    steps = _steps(sch, t)
    a = _per_item(np.sqrt(sch.rho_bar[steps]), y_star)
    b = _per_item(sch.sigma_bar[steps], y_star)
    s = a * y_star + (1.0 - a) * prior + b * eps
    return DiffusionState(s=s, t=int(steps) if steps.ndim == 0 else steps, prior=prior)


def q_step(
    s_prev: Union[DiffusionState, np.ndarray],
    prior: np.ndarray,
    t: int,
    eps: np.ndarray,
    sch: Schedule,
    form: Union[ForwardForm, str] = ForwardForm.CORRECTED,
) -> DiffusionState:
    """
    One forward transition s_{t-1} -> s_t

    corrected: s_t = sqrt(rho_t) s_{t-1} + (1 - sqrt(rho_t)) pi + sqrt(1 - rho_t) eps
               (composes exactly to the q_sample marginal)
    literal:   s_t = rho_t s_{t-1} + (1 - rho_t) pi + sqrt(1 - rho_t) eps
    """
    t = sch.check_step(t, allow_zero=False)
    s = s_prev.s if isinstance(s_prev, DiffusionState) else s_prev
    _same_shape("q_step", s, prior, eps)
    rho = sch.rho[t]
    keep = np.sqrt(rho) if ForwardForm(form) is ForwardForm.CORRECTED else rho
    s_t = keep * s + (1.0 - keep) * prior + np.sqrt(1.0 - rho) * eps
    return DiffusionState(s=s_t, t=t, prior=prior)


# ---------------------------------------------------------------------------
# v-parameterization

def v_target(r0: np.ndarray, eps: np.ndarray, t: Steps, sch: Schedule) -> np.ndarray:
    """v_t = sqrt(rho_bar_t) eps - sigma_bar_t r0"""
    _same_shape("v_target", r0, eps)
    steps = _steps(sch, t)
    a = _per_item(np.sqrt(sch.rho_bar[steps]), r0)
    b = _per_item(sch.sigma_bar[steps], r0)
    return a * eps - b * r0


def recover(r_t: np.ndarray, v: np.ndarray, t: Steps, sch: Schedule) -> Tuple[np.ndarray, np.ndarray]:
    """
    Invert the rotation: (r_t, v_t) -> (r0, eps)

    r0 = sqrt(rho_bar_t) r_t - sigma_bar_t v; eps = sigma_bar_t r_t + sqrt(rho_bar_t) v
    """
    _same_shape("recover", r_t, v)
    steps = _steps(sch, t)
    a = _per_item(np.sqrt(sch.rho_bar[steps]), r_t)
    b = _per_item(sch.sigma_bar[steps], r_t)
    return a * r_t - b * v, b * r_t + a * v


def predict_eps_y0(
    net: Denoiser, state: DiffusionState, image: np.ndarray, sch: Schedule
) -> Tuple[np.ndarray, np.ndarray]:
    """(y0_hat, eps_hat) from one denoiser call"""
    v_hat = net.predict_v(state.s, image, state.prior, state.t)
    r0_hat, eps_hat = recover(state.residual, v_hat, state.t, sch)
    return state.prior + r0_hat, eps_hat


def predict_y0(net: Denoiser, state: DiffusionState, image: np.ndarray, sch: Schedule) -> np.ndarray:
    """Clean estimate y0_hat = pi + r0_hat with r0_hat recovered from f_theta's v_hat"""
    y0_hat, _ = predict_eps_y0(net, state, image, sch)
    return y0_hat


# ---------------------------------------------------------------------------
# reverse process

def posterior_mean(
    s_t: np.ndarray,
    y0_hat: np.ndarray,
    prior: np.ndarray,
    t: int,
    sch: Schedule,
    mode: Union[PosteriorMode, str] = PosteriorMode.CENTERED,
    t_prev: Optional[int] = None,
    counter: Optional[PriorInjectionCounter] = None,
) -> np.ndarray:
    """
    Posterior mean of s_{t_prev} given s_t and y0_hat

    centered: mu = pi + c_y0 (y0_hat - pi) + c_st (s_t - pi)
    literal:  mu = c_y0 y0_hat + c_st s_t
    """
    _same_shape("posterior_mean", s_t, y0_hat, prior)
    c = posterior_coeffs(sch, t, t_prev)
    if PosteriorMode(mode) is PosteriorMode.LITERAL:
        # no explicit prior term here, so literal trajectories report 0 injections
        return c.c_y0 * y0_hat + c.c_st * s_t
    if counter is not None:
        counter.tick()
    return prior + c.c_y0 * (y0_hat - prior) + c.c_st * (s_t - prior)


def ddim_mean(
    y0_hat: np.ndarray,
    eps_hat: np.ndarray,
    prior: np.ndarray,
    t_prev: int,
    sch: Schedule,
    counter: Optional[PriorInjectionCounter] = None,
) -> np.ndarray:
    """Deterministic jump: pi + sqrt(rho_bar_t') r0_hat + sigma_bar_t' eps_hat"""
    _same_shape("ddim_mean", y0_hat, eps_hat, prior)
    t_prev = sch.check_step(t_prev)
    if counter is not None:
        counter.tick()
    return prior + np.sqrt(sch.rho_bar[t_prev]) * (y0_hat - prior) + sch.sigma_bar[t_prev] * eps_hat


def step_variance(sch: Schedule, t: int, t_prev: int, sampler: Union[SamplerType, str]) -> float:
    """sigma^2 for the jump t -> t_prev under the chosen sampler"""
    sampler = SamplerType(sampler)
    if sampler is SamplerType.DDIM:
        return 0.0
    c = posterior_coeffs(sch, t, t_prev)
    return c.var_fixed if sampler is SamplerType.DDPM_FIXED else c.var_tilde


def reverse_step(
    state: DiffusionState,
    mu: np.ndarray,
    sch: Schedule,
    sampler: Union[SamplerType, str],
    rng: Optional[np.random.Generator] = None,
    t_prev: Optional[int] = None,
) -> DiffusionState:
    """
    s_{t_prev} = mu + sigma z

    ddpm-fixed / ddpm-tilde add noise with the chosen variance; ddim adds
    nothing. t_prev defaults to t - 1; samplers over a subset pass the
    previous subset step.
    """
    t = int(state.t)
    if t < 1:
        raise ValueError("reverse_step: step list exhausted (already at t = 0)")
    t_prev = t - 1 if t_prev is None else int(t_prev)
    _same_shape("reverse_step", state.s, mu)
    var = step_variance(sch, t, t_prev, sampler)
    s_prev = mu
    if var > 0.0:
        if rng is None:
            raise ValueError(f"{SamplerType(sampler).value} needs a random stream")
        s_prev = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
    return DiffusionState(s=s_prev, t=t_prev, prior=state.prior)
