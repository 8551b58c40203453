"""
Cosine noise schedule and every coefficient derived from it

Index convention: t = 0 is clean data (rho_bar_0 = 1, sigma_bar_0 = 0);
the chain runs 1..T.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import logging
import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorCoeffs:
    """Coefficients of q(s_{t'} | s_t, y0) for a jump t -> t'"""
    c_y0: float
    c_st: float
    var_fixed: float
    var_tilde: float


@dataclass(frozen=True, eq=False)
class Schedule:
    """
    Time-indexed coefficients of a T-step chain

    All arrays have length T + 1 and are indexed by step.
    """
    T: int
    s: float
    clip: float
    beta: np.ndarray
    rho: np.ndarray
    rho_bar: np.ndarray
    sigma_bar: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {"type": "cosine", "T": self.T, "s": self.s, "clip": self.clip}

    def check_step(self, t: int, allow_zero: bool = True) -> int:
        t = int(t)
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise ValueError(f"step {t} outside [{lo}, {self.T}]")
        return t

    def sqrt_rho_bar(self, t) -> np.ndarray:
        return np.sqrt(self.rho_bar[t])


def make_cosine(T: int, s: float = 0.008, clip: float = 0.999) -> Schedule:
    """
    Squared-cosine schedule

    rho_bar_t = f(t) / f(0), f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2);
    beta_t = 1 - rho_bar_t / rho_bar_{t-1}, clipped at `clip`. rho_bar is then
    recomputed as the running product of (1 - beta) so that it agrees with
    the stored betas exactly.

    Args:
        T: Number of forward steps (>= 2)
        s: Cosine offset
        clip: Ceiling for beta

    Returns:
        Schedule
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < clip < 1.0:
        raise ValueError(f"clip must lie in (0, 1), got {clip}")

    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1 + s)) * np.pi / 2) ** 2
    alpha_bar = f / f[0]

    beta = np.zeros(T + 1)
    beta[1:] = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 0.0, clip)
    rho = 1.0 - beta
    rho_bar = np.cumprod(rho)        # rho[0] = 1 so rho_bar[0] = 1
    sigma_bar = np.sqrt(1.0 - rho_bar)

    if not np.all(beta[1:] > 0):
        raise ValueError("cosine schedule produced a non-positive beta")

    for array in (beta, rho, rho_bar, sigma_bar):
        array.flags.writeable = False

    logger.debug(f"cosine schedule T={T}: rho_bar_T={rho_bar[-1]:.3e}, beta_max={beta.max():.4f}")
    return Schedule(T=T, s=s, clip=clip, beta=beta, rho=rho, rho_bar=rho_bar, sigma_bar=sigma_bar)


def posterior_coeffs(sch: Schedule, t: int, t_prev: Optional[int] = None) -> PosteriorCoeffs:
    """
    Posterior coefficients for the jump t -> t_prev (default t - 1)

    For a jump across several steps the per-jump retention is
    rho_bar_t / rho_bar_{t_prev}; with t_prev = t - 1 this is rho_t.

    Args:
        sch: Schedule
        t: Current step (>= 1)
        t_prev: Target step, 0 <= t_prev < t

    Returns:
        PosteriorCoeffs
    """
    t = sch.check_step(t, allow_zero=False)
    t_prev = t - 1 if t_prev is None else int(t_prev)
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must satisfy 0 <= t_prev < t, got t={t}, t_prev={t_prev}")

    rb_t = sch.rho_bar[t]
    rb_prev = sch.rho_bar[t_prev]
    rho_jump = rb_t / rb_prev
    one_minus = 1.0 - rb_t

    return PosteriorCoeffs(
        c_y0=float(np.sqrt(rb_prev) * (1.0 - rho_jump) / one_minus),
        c_st=float(np.sqrt(rho_jump) * (1.0 - rb_prev) / one_minus),
        var_fixed=float(1.0 - rho_jump),
        var_tilde=float((1.0 - rho_jump) * (1.0 - rb_prev) / one_minus),
    )


def uniform_subset(T: int, S: int) -> List[int]:
    """
    S uniformly spaced steps in [1, T], always ending at T

    Step i (1-based) is ceil(i * T / S); gaps differ by at most one.
    """
    if not 1 <= S <= T:
        raise ValueError(f"need 1 <= S <= T, got S={S}, T={T}")
    return [-(-i * T // S) for i in range(1, S + 1)]


def dds_default_steps(T: int) -> List[int]:
    """The three steps nearest T/4, T/2, 3T/4"""
    return sorted({max(1, min(T, int(round(T * q)))) for q in (0.25, 0.5, 0.75)})
