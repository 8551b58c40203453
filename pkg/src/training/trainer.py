"""
Two-stage training: the prior first, then the denoiser against the frozen prior
"""
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import logging
import numpy as np
import pandas as pd
from scipy.special import softmax

from src.algorithms.diffusion import q_sample, recover, v_target
from src.algorithms.schedule import Schedule, make_cosine
from src.models.config import TrainConfig
from src.models.domain import SegmentationCase, one_hot
from src.models.errors import ConfigError, NumericalError
from src.nets.denoiser_net import DenoiserArch, DenoiserNet
from src.nets.layers import Module
from src.nets.prior_net import PriorNet, UniformPrior
from src.ndgrad.gradcheck import GradCheckReport, grad_check
from src.ndgrad.graph import Graph, backward
from src.ndgrad.tensor import Precision, Tensor
from src.training.loader import BatchLoader
from src.training.losses import loss_dds, loss_total, loss_vel
from src.training.optimizer import Adam
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)

PRIOR_COLUMNS = ("step", "l_ce")
PGRD_COLUMNS = ("step", "l_vel", "l_dds", "l_total")
NO_DDS_COLUMNS = ("step", "l_vel", "l_total")


@dataclass
class LossTrace:
    """Per-step losses of one stage"""
    columns: Sequence[str]
    rows: List[Dict[str, float]] = field(default_factory=list)

    def append(self, **values: float) -> None:
        self.rows.append({c: values[c] for c in self.columns})

    def values(self, column: str) -> np.ndarray:
        return np.array([row[column] for row in self.rows], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(self.columns))

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


@dataclass
class TrainResult:
    """Outcome of one training stage"""
    stage: str
    net: Module
    trace: LossTrace
    steps_run: int
    plateaued: bool = False
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        final = self.trace.rows[-1] if self.trace.rows else {}
        return {
            "stage": self.stage,
            "steps_run": self.steps_run,
            "plateaued": self.plateaued,
            "elapsed_s": round(self.elapsed, 3),
            "parameters": self.net.parameter_count(),
            "final": final,
        }


def smoothed(losses: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first values average what is available"""
    return pd.Series(np.asarray(losses, dtype=np.float64)).rolling(window, min_periods=1).mean().to_numpy()


def plateau_reached(losses: Sequence[float], smoothing: int, window: int, tol: float) -> bool:
    """
    True when the smoothed loss improved by less than `tol` (relative) over
    the last `window` steps
    """
    if len(losses) < smoothing + window:
        return False
    smooth = smoothed(losses[-(smoothing + window):], smoothing)
    before, now = smooth[smoothing - 1], smooth[-1]
    if before <= 0:
        return True
    return (before - now) / abs(before) < tol


def _named_grads(graph: Graph, grads: Dict[int, np.ndarray]) -> Dict[str, np.ndarray]:
    return {n.name: grads[n.id] for n in graph.leaves(requires_grad=True) if n.id in grads}


def _finite_params(net: Module) -> bool:
    return all(np.all(np.isfinite(v)) for v in net.params.values())


def _abort(net: Module, last_good: Dict[str, np.ndarray], step: int, reason: str,
           checkpoint_dir: Optional[Path]) -> NumericalError:
    net.params = dict(last_good)
    message = f"{net.kind} training diverged: {reason}"
    if checkpoint_dir is not None:
        path = net.save(Path(checkpoint_dir) / f"{net.kind}.last_good.ckpt")
        message += f"; last good parameters saved to {path}"
    logger.error(message)
    return NumericalError(message, step=step)


def train_prior(
    net: PriorNet,
    cases: Sequence[SegmentationCase],
    cfg: TrainConfig,
    seed: int = 0,
    checkpoint_dir: Optional[Path] = None,
    log_every: int = 50,
) -> TrainResult:
    """
    Stage 1: cross-entropy training of the prior on single rater labels

    Runs at most cfg.prior_steps updates and stops early once the smoothed
    loss plateaus.

    Raises:
        NumericalError: Non-finite loss or parameters; the module is rolled
            back to its last finite state first
    """
    if net.frozen:
        raise ValueError("prior is already frozen")
    loader = BatchLoader(cases, net.num_classes, cfg.batch_size, seed, purpose="prior", prefetch=cfg.prefetch)
    opt = Adam(net, lr=cfg.lr, betas=cfg.betas)
    trace = LossTrace(PRIOR_COLUMNS)
    last_good = dict(net.params)
    plateaued = False
    start = time.time()

    logger.info(f"Prior stage: up to {cfg.prior_steps} steps, batch {cfg.batch_size}, lr {cfg.lr}")
    for step, batch in enumerate(loader.batches(cfg.prior_steps), start=1):
        try:
            graph = Graph(Precision.TRAIN)
            logits = net.logits(graph, graph.leaf(batch.images))
            loss = graph.cross_entropy(logits, graph.leaf(batch.targets))
            grads = backward(graph, loss)
        except NumericalError as exc:
            raise _abort(net, last_good, step, str(exc), checkpoint_dir) from exc

        opt.step(_named_grads(graph, grads))
        if not _finite_params(net):
            raise _abort(net, last_good, step, "non-finite parameters after update", checkpoint_dir)
        last_good = dict(net.params)

        trace.append(step=step, l_ce=loss.item())
        if step % log_every == 0:
            logger.info(f"  prior step {step}: CE {loss.item():.4f}")
        if plateau_reached(trace.values("l_ce"), cfg.smoothing, cfg.plateau_window, cfg.plateau_tol):
            plateaued = True
            logger.info(f"  prior loss plateaued at step {step}")
            break

    return TrainResult("prior", net, trace, len(trace), plateaued, time.time() - start)


def pgrd_loss_graph(
    denoiser: DenoiserNet,
    s_t: np.ndarray,
    images: np.ndarray,
    pi: np.ndarray,
    t: np.ndarray,
    v: np.ndarray,
    y_star: np.ndarray,
    dds_steps: Sequence[int],
    cfg: TrainConfig,
    precision: Precision = Precision.TRAIN,
) -> Tuple[Graph, Tensor, Tensor, Optional[Tensor], Tensor]:
    """
    Record one training forward: denoiser, L_vel, L_DDS (when a head fires) and L_total

    Returns:
        (graph, v_hat, l_vel, l_dds or None, l_total)
    """
    graph = Graph(precision)
    v_hat, aux = denoiser.forward(graph, graph.leaf(s_t), graph.leaf(images), graph.leaf(pi), t)
    l_vel = loss_vel(graph, v_hat, graph.leaf(v))
    l_dds = None
    if dds_steps and aux:
        l_dds = loss_dds(graph, aux, graph.leaf(y_star), denoiser.arch.tau, dds_steps)
    return graph, v_hat, l_vel, l_dds, loss_total(graph, l_vel, l_dds, cfg.dds_weight)


def check_loss_gradients(tolerance: float = 1e-4, seed: int = 0, coords_per_leaf: Optional[int] = 6) -> GradCheckReport:
    """
    Finite-difference check of L_total w.r.t. every denoiser parameter on a
    miniature network and batch, with a DDS head guaranteed to fire
    """
    T = 20
    arch = DenoiserArch(num_classes=2, widths=(2, 3, 4), time_dim=4, T=T, dds_steps=(5,), dds_window=T)
    denoiser = DenoiserNet(arch, seed=seed)
    # the zero-initialized main head would leave upstream gradients at exactly zero
    rng = RngStreams(seed).stream("gradcheck", "batch")
    denoiser.params["out.w"] = (0.1 * rng.standard_normal(denoiser.params["out.w"].shape)).astype(np.float32)

    sch = make_cosine(T)
    images = rng.standard_normal((2, 1, 4, 4))
    pi = softmax(rng.standard_normal((2, 2, 4, 4)), axis=1)
    y_star = one_hot(rng.integers(0, 2, size=(2, 4, 4)), 2).astype(np.float64)
    t = np.array([5, 13])
    eps = rng.standard_normal(pi.shape)
    state = q_sample(y_star, pi, t, eps, sch)
    v = v_target(y_star - pi, eps, t, sch)
    cfg = TrainConfig(dds_steps=[5])

    graph, _, _, _, total = pgrd_loss_graph(
        denoiser, state.s, images, pi, t, v, y_star, [5], cfg, precision=Precision.CHECK
    )
    return grad_check(graph, tolerance=tolerance, loss=total, coords_per_leaf=coords_per_leaf, seed=seed)


def _prior_digest(prior) -> str:
    if isinstance(prior, Module):
        return hashlib.sha256(prior.state_bytes()).hexdigest()
    return f"uniform:{prior.num_classes}"


def train_pgrd(
    denoiser: DenoiserNet,
    prior: Union[PriorNet, UniformPrior],
    cases: Sequence[SegmentationCase],
    cfg: TrainConfig,
    sch: Schedule,
    seed: int = 0,
    checkpoint_dir: Optional[Path] = None,
    log_every: int = 50,
) -> TrainResult:
    """
    Stage 2: train the denoiser on v targets with the prior frozen

    Every step draws one rater label per case, a step t uniform in [1, T]
    per example and Gaussian noise, builds s_t with q_sample and regresses
    v. DDS heads add lambda * L_DDS whenever an example's t hits a DDS
    step. t and the noise come from the purpose-named streams
    "train/t/<step>" and "train/noise/<step>", so switching DDS off changes
    no draw of the main path.

    Args:
        denoiser: Network to optimize
        prior: Frozen PriorNet, or UniformPrior (forced when cfg.no_pgr)
        cases: Training cases
        cfg: Training configuration
        sch: Schedule (its T bounds the step draws)
        seed: Root seed
        checkpoint_dir: Where the last-good denoiser goes on divergence
        log_every: Progress logging interval

    Returns:
        TrainResult with columns step, l_vel, l_dds, l_total (no l_dds
        column when DDS is off)
    """
    if cfg.no_pgr and not isinstance(prior, UniformPrior):
        prior = UniformPrior(denoiser.num_classes)
    if not getattr(prior, "frozen", False):
        raise ValueError("the prior must be frozen before the PGRD stage")
    if denoiser.arch.T != sch.T:
        raise ConfigError(f"denoiser built for T={denoiser.arch.T}, schedule has T={sch.T}")
    dds_steps = cfg.resolved_dds_steps(sch.T)
    if dds_steps and list(denoiser.arch.dds_steps) != dds_steps:
        raise ConfigError(f"denoiser DDS heads {list(denoiser.arch.dds_steps)} differ from configured {dds_steps}")
    if dds_steps and denoiser.arch.tau != cfg.dds_tau:
        raise ConfigError(f"denoiser DDS temperature {denoiser.arch.tau} differs from configured {cfg.dds_tau}")

    C = denoiser.num_classes
    loader = BatchLoader(cases, C, cfg.batch_size, seed, purpose="pgrd", prefetch=cfg.prefetch)
    streams = RngStreams(seed)
    opt = Adam(denoiser, lr=cfg.lr, betas=cfg.betas)
    trace = LossTrace(PGRD_COLUMNS if dds_steps else NO_DDS_COLUMNS)
    prior_before = _prior_digest(prior)
    last_good = dict(denoiser.params)
    start = time.time()

    logger.info(
        f"PGRD stage ({'uniform prior' if isinstance(prior, UniformPrior) else 'learned prior'}): "
        f"{cfg.pgrd_steps} steps, DDS steps {dds_steps or 'off'}, lambda {cfg.dds_weight}"
    )
    for step, batch in enumerate(loader.batches(cfg.pgrd_steps), start=1):
        B = batch.images.shape[0]
        pi = np.asarray(prior.predict(batch.images), dtype=np.float64)
        t = streams.stream("train", "t", step).integers(1, sch.T + 1, size=B)
        eps = streams.normal(pi.shape, "train", "noise", step)
        y_star = batch.targets.astype(np.float64)
        state = q_sample(y_star, pi, t, eps, sch)
        v = v_target(y_star - pi, eps, t, sch)

        try:
            losses = pgrd_loss_graph(denoiser, state.s, batch.images, pi, t, v, y_star, dds_steps, cfg)
            graph, v_hat, l_vel, l_dds, total = losses
            grads = backward(graph, total)
        except NumericalError as exc:
            raise _abort(denoiser, last_good, step, str(exc), checkpoint_dir) from exc

        opt.step(_named_grads(graph, grads))
        if not _finite_params(denoiser):
            raise _abort(denoiser, last_good, step, "non-finite parameters after update", checkpoint_dir)
        last_good = dict(denoiser.params)

        trace.append(
            step=step,
            l_vel=l_vel.item(),
            l_dds=l_dds.item() if l_dds is not None else 0.0,
            l_total=total.item(),
        )
        if step % log_every == 0:
            r0_hat, _ = recover(state.residual, np.asarray(v_hat.data, dtype=np.float64), t, sch)
            drift = float(np.abs((pi + r0_hat).sum(axis=1) - 1.0).mean())
            logger.info(
                f"  pgrd step {step}: L_vel {l_vel.item():.4f} L_total {total.item():.4f} "
                f"|sum_c y0_hat - 1| {drift:.3f}"
            )

    if _prior_digest(prior) != prior_before:
        raise RuntimeError("frozen prior parameters changed during PGRD training")
    return TrainResult("pgrd", denoiser, trace, len(trace), False, time.time() - start)
