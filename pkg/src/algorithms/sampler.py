"""
Reverse-process sampling with prior injection at every step, and
aggregation of the samples into a predictive distribution
"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Union

import logging
import numpy as np
from scipy.special import softmax

from src.algorithms.diffusion import (
    Denoiser,
    PriorInjectionCounter,
    ddim_mean,
    posterior_mean,
    predict_eps_y0,
    reverse_step,
)
from src.algorithms.schedule import Schedule
from src.models.domain import (
    DiffusionState,
    PosteriorMode,
    PredictiveDistribution,
    SampleSet,
    SamplerType,
)
from src.models.errors import CheckpointError
from src.ndgrad.checkpoint import ContainerError, decode_container, encode_container
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)

SAMPLES_MAGIC = b"PGRDSMPL"


def _check_steps(steps: Sequence[int], T: int) -> List[int]:
    steps = [int(s) for s in steps]
    if not steps:
        raise ValueError("empty step list")
    if any(b <= a for a, b in zip(steps, steps[1:])) or steps[0] < 1 or steps[-1] > T:
        raise ValueError(f"steps must be strictly increasing within [1, {T}]")
    return steps


def run_trajectory(
    denoiser: Denoiser,
    image: np.ndarray,
    prior: np.ndarray,
    steps: Sequence[int],
    sch: Schedule,
    sampler: Union[SamplerType, str],
    streams: RngStreams,
    index: int,
    posterior: Union[PosteriorMode, str] = PosteriorMode.CENTERED,
) -> tuple:
    """
    One reverse trajectory from pi + noise down to t = 0

    Returns:
        (y0 sample [B,C,H,W], number of prior injections)
    """
    sampler = SamplerType(sampler)
    counter = PriorInjectionCounter()
    s_init = prior + streams.normal(prior.shape, "trajectory", index, "init")
    state = DiffusionState(s=s_init, t=steps[-1], prior=prior)
    schedule_back = list(reversed(steps))

    for k, t in enumerate(schedule_back):
        t_prev = schedule_back[k + 1] if k + 1 < len(schedule_back) else 0
        y0_hat, eps_hat = predict_eps_y0(denoiser, state, image, sch)
        if sampler is SamplerType.DDIM:
            mu = ddim_mean(y0_hat, eps_hat, prior, t_prev, sch, counter=counter)
            rng = None
        else:
            mu = posterior_mean(state.s, y0_hat, prior, t, sch, mode=posterior, t_prev=t_prev, counter=counter)
            rng = streams.stream("trajectory", index, "noise", t)
        state = reverse_step(state, mu, sch, sampler, rng=rng, t_prev=t_prev)

    return state.s, counter.count


def sample(
    prior_net,
    denoiser: Denoiser,
    image: np.ndarray,
    M: int,
    steps: Sequence[int],
    sch: Schedule,
    sampler: Union[SamplerType, str] = SamplerType.DDIM,
    seed: int = 0,
    posterior: Union[PosteriorMode, str] = PosteriorMode.CENTERED,
    max_workers: int = 1,
) -> SampleSet:
    """
    Draw M independent samples of y0 for a batch of images

    pi is computed once and injected in every reverse step. Trajectory m
    draws only from the substreams "trajectory/m/...", so results do not
    depend on worker count or execution order.

    Args:
        prior_net: Frozen prior (PriorNet or UniformPrior)
        denoiser: DenoiserNet (or any Denoiser)
        image: [B,Cx,H,W]
        M: Number of samples (>= 1)
        steps: Increasing step list ending at T (see uniform_subset)
        sch: Schedule
        sampler: ddim | ddpm-fixed | ddpm-tilde
        seed: Root seed
        posterior: centered | literal (ddpm samplers)
        max_workers: Thread count for trajectories

    Returns:
        SampleSet with samples [M,B,C,H,W]
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if not getattr(prior_net, "frozen", False):
        raise ValueError("sampling requires a frozen prior")
    steps = _check_steps(steps, sch.T)
    sampler = SamplerType(sampler)
    prior = np.asarray(prior_net.predict(image), dtype=np.float64)
    streams = RngStreams(seed)

    def one(m: int):
        return run_trajectory(denoiser, image, prior, steps, sch, sampler, streams, m, posterior)

    if max_workers > 1 and M > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one, range(M)))
    else:
        results = [one(m) for m in range(M)]

    samples = np.stack([r[0] for r in results]).astype(np.float32)
    injections = [r[1] for r in results]
    logger.debug(f"sampled M={M} S={len(steps)} sampler={sampler.value} seed={seed}")
    return SampleSet(samples=samples, steps=steps, sampler=sampler, seed=seed, injections=injections)


def aggregate(sample_set: SampleSet, tau_out: float = 1.0) -> PredictiveDistribution:
    """
    Mean probability p_bar = (1/M) sum_m softmax(y0^(m) / tau_out) and its argmax

    Ties in the argmax go to the lowest class index.
    """
    if tau_out <= 0:
        raise ValueError(f"tau_out must be positive, got {tau_out}")
    logits = sample_set.samples.astype(np.float64) / tau_out
    probs = softmax(logits, axis=2).mean(axis=0)
    return PredictiveDistribution(probs=probs, mask=probs.argmax(axis=1))


# ---------------------------------------------------------------------------
# archive

def save_samples(path: Union[str, Path], sample_set: SampleSet, extra: Optional[dict] = None) -> Path:
    """JSON header (M, S, sampler, seed, shapes) + little-endian payload of all samples"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = sample_set.metadata()
    meta["shape"] = list(sample_set.samples.shape)
    if extra:
        meta.update(extra)
    path.write_bytes(encode_container(SAMPLES_MAGIC, {"samples": sample_set.samples}, meta))
    return path


def load_samples(path: Union[str, Path]) -> SampleSet:
    try:
        arrays, meta = decode_container(SAMPLES_MAGIC, Path(path).read_bytes())
    except ContainerError as exc:
        raise CheckpointError(f"{path}: {exc.message}", tensor=exc.tensor) from exc
    return SampleSet(
        samples=arrays["samples"],
        steps=meta["steps"],
        sampler=SamplerType(meta["sampler"]),
        seed=meta["seed"],
        injections=meta.get("injections", []),
    )
