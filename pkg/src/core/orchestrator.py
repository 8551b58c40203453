"""
Experiment Orchestrator
Runs the experiment lifecycle: data generation, two-stage training,
sampling, evaluation, step benchmarking and gradient checks. Every stage
writes a manifest (RunConfig + content hashes of inputs and outputs) so it
can be replayed bit-exactly.
"""
import json
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import logging
import numpy as np

from src import __version__
from src.algorithms.sampler import aggregate, sample, save_samples
from src.algorithms.schedule import Schedule, make_cosine, uniform_subset
from src.data.dataset_io import checksum, read_dataset, write_dataset
from src.data.generator import generate_cases, train_test_split
from src.export.report_exporter import ReportExporter
from src.metrics.evaluation import evaluate_case, pool_reliability
from src.metrics.segmentation import foreground_dice, majority_vote
from src.metrics.statistics import SUMMARY_METRICS, paired_t_test, summarize
from src.models.config import RunConfig
from src.models.domain import CaseResult, SampleSet, SegmentationCase, StageResult, StageStatus
from src.models.errors import CheckpointError, ConfigError
from src.nets.denoiser_net import DenoiserArch, DenoiserNet
from src.nets.prior_net import PriorArch, PriorNet, UniformPrior
from src.ndgrad.gradcheck import check_all_ops
from src.training.trainer import check_loss_gradients, train_pgrd, train_prior
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
R = TypeVar("R")

DATASET_FILE = "dataset.pgrd"
RUN_CONFIG_FILE = "run_config.json"
PRIOR_FILE = "prior.ckpt"
DENOISER_FILE = "denoiser.ckpt"


class LoadedRun:
    """A trained run read back from its output directory"""

    def __init__(self, name: str, run_dir: Path, config: RunConfig, prior, denoiser: DenoiserNet):
        self.name = name
        self.run_dir = run_dir
        self.config = config
        self.prior = prior
        self.denoiser = denoiser
        self.schedule: Schedule = make_cosine(config.schedule.T, config.schedule.s, config.schedule.clip)

    @property
    def num_classes(self) -> int:
        return self.denoiser.num_classes


class ExperimentOrchestrator:
    """
    Experiment orchestrator - coordinates generator, trainer, sampler and metrics

    Stages:
    1. generate: synthetic dataset file
    2. train: prior (stage 1, frozen afterwards) then denoiser (stage 2)
    3. sample / evaluate / bench_steps: per-case sampling with per-case seeds
    4. gradcheck: finite-difference verification of every op and the loss

    Sampling knobs (S, M, sampler, tau_out) come from this orchestrator's
    config; network and schedule come from each trained run's saved config.
    """

    def __init__(self, config: RunConfig, max_workers: int = 1, log_every: int = 50):
        """
        Args:
            config: Run configuration
            max_workers: Threads for per-case work (never changes outputs)
            log_every: Training progress logging interval
        """
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.max_workers = max(1, max_workers)
        self.log_every = log_every
        self.schedule = make_cosine(config.schedule.T, config.schedule.s, config.schedule.clip)
        self.logger = logging.getLogger(__name__)

    # =========================================================================
    # helpers
    # =========================================================================

    def _map(self, fn: Callable[..., R], items: Sequence) -> List[R]:
        """Order-preserving map, threaded when max_workers > 1"""
        if self.max_workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def write_manifest(self, command: str, inputs: Mapping[str, PathLike], outputs: Mapping[str, PathLike]) -> str:
        """manifest_<command>.json with the RunConfig and sha256 of every input and output file"""

        def describe(files: Mapping[str, PathLike]) -> Dict[str, Dict[str, str]]:
            return {
                name: {"path": str(path), "sha256": checksum(path)}
                for name, path in sorted(files.items())
                if Path(path).is_file()
            }

        manifest = {
            "command": command,
            "version": __version__,
            "config": json.loads(self.config.to_json()),
            "inputs": describe(inputs),
            "outputs": describe(outputs),
        }
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / f"manifest_{command}.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return str(path)

    def load_dataset(self, dataset_path: PathLike) -> Tuple[List[SegmentationCase], dict]:
        cases, meta = read_dataset(dataset_path)
        if meta["C"] != self.config.data.classes:
            raise ConfigError(
                f"dataset {dataset_path} has C={meta['C']} classes, config expects {self.config.data.classes}"
            )
        return cases, meta

    def split(self, cases: List[SegmentationCase], split: str) -> List[SegmentationCase]:
        train, test = train_test_split(cases, self.config.data.test_fraction)
        if split == "train":
            return train
        if split == "test":
            return test
        if split == "all":
            return cases
        raise ConfigError(f"unknown split '{split}' (train | test | all)")

    def build_prior(self, num_classes: int, image_channels: int) -> PriorNet:
        net = self.config.network
        arch = PriorArch(image_channels, num_classes, width=net.prior_width, depth=net.prior_depth)
        return PriorNet(arch, seed=self.config.seed)

    def build_denoiser(self, num_classes: int, image_channels: int) -> DenoiserNet:
        cfg = self.config
        arch = DenoiserArch(
            num_classes=num_classes,
            image_channels=image_channels,
            widths=cfg.network.denoiser_widths,
            time_dim=cfg.network.time_dim,
            T=cfg.schedule.T,
            dds_steps=tuple(cfg.train.resolved_dds_steps(cfg.schedule.T)),
            dds_window=cfg.network.dds_window,
            tau=cfg.train.dds_tau,
        )
        return DenoiserNet(arch, seed=cfg.seed)

    def case_seed(self, case_id: int) -> int:
        """Sampling seed of one case; shared by every run and every S"""
        return RngStreams(self.config.seed).child("sample", case_id).seed

    # =========================================================================
    # STAGE 1: data
    # =========================================================================

    def generate(self, path: Optional[PathLike] = None) -> StageResult:
        """Generate the synthetic benchmark and write it as a PGRDDATA file"""
        data = self.config.data
        path = Path(path) if path else self.output_dir / DATASET_FILE
        self.logger.info(f"Generating {data.cases} cases (seed {self.config.seed})")
        cases = generate_cases(
            data.cases,
            seed=self.config.seed,
            size=data.size,
            num_classes=data.classes,
            ambiguity=data.ambiguity,
            raters=data.raters,
            noise=data.noise,
            max_workers=self.max_workers,
        )
        write_dataset(cases, path, data.classes)
        digest = checksum(path)
        manifest = self.write_manifest("gen", {}, {"dataset": path})
        return StageResult(
            status=StageStatus.SUCCESS,
            message=f"{len(cases)} cases written",
            data={"count": len(cases), "checksum": digest, "path": str(path)},
            outputs={"dataset": str(path), "manifest": manifest},
        )

    # =========================================================================
    # STAGE 2: training
    # =========================================================================

    def train(self, dataset_path: PathLike) -> StageResult:
        """
        Two-stage training on the train split

        Stage 1 trains and freezes the prior (skipped under no_pgr, which
        uses the uniform prior). Stage 2 trains the denoiser. Checkpoints,
        loss CSVs and run_config.json go to the output directory.
        """
        cfg = self.config
        cases, meta = self.load_dataset(dataset_path)
        train_cases = self.split(cases, "train")
        C, Cx = meta["C"], meta.get("image_channels", 1)
        out = self.output_dir
        out.mkdir(parents=True, exist_ok=True)
        outputs: Dict[str, str] = {}
        data: Dict[str, object] = {"ablation": cfg.ablation, "train_cases": len(train_cases)}

        self.logger.info(f"Training run '{cfg.ablation}' on {len(train_cases)} cases -> {out}")
        if cfg.train.no_pgr:
            prior = UniformPrior(C)
            data["prior"] = "uniform"
        else:
            prior = self.build_prior(C, Cx)
            stage1 = train_prior(prior, train_cases, cfg.train, seed=cfg.seed, checkpoint_dir=out,
                                 log_every=self.log_every)
            prior.freeze()
            outputs["prior"] = str(prior.save(out / PRIOR_FILE))
            outputs["prior_loss"] = str(stage1.trace.to_csv(out / "prior_loss.csv"))
            data["prior"] = stage1.to_dict()

        denoiser = self.build_denoiser(C, Cx)
        stage2 = train_pgrd(denoiser, prior, train_cases, cfg.train, self.schedule, seed=cfg.seed,
                            checkpoint_dir=out, log_every=self.log_every)
        outputs["denoiser"] = str(denoiser.save(out / DENOISER_FILE))
        outputs["pgrd_loss"] = str(stage2.trace.to_csv(out / "pgrd_loss.csv"))
        data["pgrd"] = stage2.to_dict()
        data["denoiser_sha256"] = checksum(outputs["denoiser"])

        config_path = out / RUN_CONFIG_FILE
        config_path.write_text(cfg.to_json(), encoding="utf-8")
        outputs["run_config"] = str(config_path)
        outputs["manifest"] = self.write_manifest("train", {"dataset": dataset_path}, outputs)
        return StageResult(StageStatus.SUCCESS, f"run '{cfg.ablation}' trained", data=data, outputs=outputs)

    def load_run(self, run_dir: PathLike, name: Optional[str] = None) -> LoadedRun:
        """Read run_config.json and checkpoints of a trained run"""
        run_dir = Path(run_dir)
        config_path = run_dir / RUN_CONFIG_FILE
        if not config_path.exists():
            raise FileNotFoundError(f"no {RUN_CONFIG_FILE} in {run_dir}")
        run_cfg = RunConfig.from_file(config_path)
        denoiser = DenoiserNet.load(run_dir / DENOISER_FILE)
        if (run_dir / PRIOR_FILE).exists():
            prior = PriorNet.load(run_dir / PRIOR_FILE)
            if not prior.frozen:
                raise CheckpointError(f"{run_dir / PRIOR_FILE}: prior checkpoint is not frozen")
            if prior.num_classes != denoiser.num_classes:
                raise ConfigError(f"{run_dir}: prior and denoiser disagree on the class count")
        else:
            prior = UniformPrior(denoiser.num_classes)
        return LoadedRun(name or run_dir.name, run_dir, run_cfg, prior, denoiser)

    # =========================================================================
    # STAGE 3: sampling and evaluation
    # =========================================================================

    def _steps(self, run: LoadedRun, S: Optional[int] = None) -> List[int]:
        S = S or self.config.sampler.S
        if not 1 <= S <= run.schedule.T:
            raise ConfigError(f"S={S} must lie in [1, T={run.schedule.T}]")
        return uniform_subset(run.schedule.T, S)

    def _check_classes(self, run: LoadedRun, meta: dict) -> None:
        if run.num_classes != meta["C"]:
            raise ConfigError(f"run '{run.name}' has C={run.num_classes}, dataset has C={meta['C']}")

    def sample_case(self, run: LoadedRun, case: SegmentationCase, steps: Sequence[int], M: Optional[int] = None) -> SampleSet:
        sampler = self.config.sampler
        return sample(
            run.prior,
            run.denoiser,
            case.image[None],
            M=M or sampler.M,
            steps=steps,
            sch=run.schedule,
            sampler=sampler.type,
            seed=self.case_seed(case.case_id),
            posterior=sampler.posterior,
        )

    def sample(self, run_dir: PathLike, dataset_path: PathLike, split: str = "test") -> StageResult:
        """Draw M samples per case of a split and write one sample archive"""
        cases, meta = self.load_dataset(dataset_path)
        run = self.load_run(run_dir)
        self._check_classes(run, meta)
        chosen = self.split(cases, split)
        steps = self._steps(run)
        sets = self._map(lambda case: self.sample_case(run, case, steps), chosen)

        combined = SampleSet(
            samples=np.concatenate([s.samples for s in sets], axis=1),
            steps=steps,
            sampler=sets[0].sampler,
            seed=self.config.seed,
            injections=list(sets[0].injections),
        )
        path = self.output_dir / f"samples_{split}.pgrdsmpl"
        save_samples(path, combined, extra={
            "case_ids": [c.case_id for c in chosen],
            "case_seeds": [self.case_seed(c.case_id) for c in chosen],
            "run": run.name,
        })
        manifest = self.write_manifest("sample", {"dataset": dataset_path, "denoiser": run.run_dir / DENOISER_FILE},
                                       {"samples": path})
        return StageResult(
            StageStatus.SUCCESS,
            f"{combined.M} samples x {len(chosen)} cases",
            data={**combined.metadata(), "cases": len(chosen)},
            outputs={"samples": str(path), "manifest": manifest},
        )

    def evaluate_run(self, run: LoadedRun, cases: Sequence[SegmentationCase], bins: int = 10) -> Tuple[List[CaseResult], List[dict]]:
        steps = self._steps(run)
        tau_out = self.config.sampler.tau_out

        def one(case: SegmentationCase):
            dist = aggregate(self.sample_case(run, case, steps), tau_out=tau_out)
            return evaluate_case(case.case_id, dist.probs[0], case.raters, self.config.sampler.M, bins=bins)

        self.logger.info(f"Evaluating '{run.name}' on {len(cases)} cases (S={len(steps)}, M={self.config.sampler.M})")
        scored = self._map(one, list(cases))
        return [r for r, _ in scored], pool_reliability([rows for _, rows in scored])

    def evaluate(
        self,
        runs: Mapping[str, PathLike],
        dataset_path: PathLike,
        split: str = "test",
        bins: int = 10,
        percent: bool = False,
        case_limit: Optional[int] = None,
    ) -> StageResult:
        """
        Score every named run on the same cases with the same sampling seeds
        and run paired t-tests between every pair of runs

        Args:
            runs: name -> trained run directory
            dataset_path: PGRDDATA file
            split: train | test | all
            bins: ECE bins
            percent: x100 display in the text table
            case_limit: Evaluate only the first N cases
        """
        if not runs:
            raise ConfigError("evaluate needs at least one run")
        cases, meta = self.load_dataset(dataset_path)
        chosen = self.split(cases, split)[:case_limit] if case_limit else self.split(cases, split)
        exporter = ReportExporter(self.output_dir, percent=percent)

        results: Dict[str, List[CaseResult]] = {}
        summaries: Dict[str, Dict[str, Dict[str, float]]] = {}
        outputs: Dict[str, str] = {}
        inputs: Dict[str, PathLike] = {"dataset": dataset_path}
        for name in sorted(runs):
            run = self.load_run(runs[name], name=name)
            self._check_classes(run, meta)
            inputs[f"{name}.denoiser"] = run.run_dir / DENOISER_FILE
            results[name], reliability = self.evaluate_run(run, chosen, bins=bins)
            summaries[name] = summarize(results[name])
            outputs[f"cases_{name}"] = exporter.export_cases(results[name], name)
            outputs[f"reliability_{name}"] = exporter.export_reliability(reliability, name)

        tests: Dict[str, Dict[str, Dict[str, float]]] = {}
        if len(chosen) >= 2:
            for a, b in combinations(sorted(results), 2):
                per_metric = {}
                for metric in SUMMARY_METRICS:
                    t, p = paired_t_test(
                        [getattr(r, metric) for r in results[a]],
                        [getattr(r, metric) for r in results[b]],
                    )
                    per_metric[metric] = {"t": t, "p": p}
                tests[f"{a} vs {b}"] = per_metric

        sampler = self.config.sampler
        report = {
            "split": split,
            "cases": len(chosen),
            "sampler": {"type": sampler.type.value, "S": sampler.S, "M": sampler.M, "tau_out": sampler.tau_out},
            "runs": summaries,
            "paired_tests": tests,
        }
        outputs["report"] = exporter.export_json(report)
        outputs["table"] = exporter.export_text(summaries, tests)
        outputs["manifest"] = self.write_manifest("eval", inputs, outputs)
        return StageResult(StageStatus.SUCCESS, f"evaluated {len(runs)} run(s) on {len(chosen)} cases",
                           data=report, outputs=outputs)

    def bench_steps(
        self,
        runs: Mapping[str, PathLike],
        dataset_path: PathLike,
        S_values: Sequence[int],
        split: str = "test",
        case_limit: Optional[int] = None,
    ) -> StageResult:
        """
        Mean foreground DSC versus number of sampling steps

        Every (model, S) pair reuses the same per-case seeds, so the curve is
        a paired comparison across S.
        """
        if not S_values:
            raise ConfigError("bench-steps needs at least one S value")
        T = self.config.schedule.T
        bad = [S for S in S_values if not 1 <= S <= T]
        if bad:
            raise ConfigError(f"S values {bad} outside [1, T={T}]")
        cases, meta = self.load_dataset(dataset_path)
        chosen = self.split(cases, split)[:case_limit] if case_limit else self.split(cases, split)
        tau_out = self.config.sampler.tau_out

        rows: List[Dict[str, object]] = []
        inputs: Dict[str, PathLike] = {"dataset": dataset_path}
        for name in sorted(runs):
            run = self.load_run(runs[name], name=name)
            self._check_classes(run, meta)
            inputs[f"{name}.denoiser"] = run.run_dir / DENOISER_FILE
            for S in sorted(S_values):
                steps = self._steps(run, S)

                def one(case: SegmentationCase) -> float:
                    dist = aggregate(self.sample_case(run, case, steps), tau_out=tau_out)
                    truth = evaluate_truth(case, run.num_classes)
                    return foreground_dice(dist.mask[0], truth, run.num_classes)

                scores = np.array(self._map(one, list(chosen)))
                std = float(scores.std(ddof=1)) if scores.size > 1 else 0.0
                rows.append({"model": name, "S": S, "dsc_mean": float(scores.mean()), "dsc_std": std})
                self.logger.info(f"  {name} S={S}: DSC {scores.mean():.4f} +- {std:.4f}")

        path = ReportExporter(self.output_dir).export_bench(rows)
        manifest = self.write_manifest("bench-steps", inputs, {"bench": path})
        return StageResult(StageStatus.SUCCESS, f"{len(rows)} (model, S) rows",
                           data={"rows": rows}, outputs={"bench": path, "manifest": manifest})

    # =========================================================================
    # STAGE 4: gradient integrity
    # =========================================================================

    def gradcheck(self, tolerance: float = 1e-4) -> StageResult:
        """Gradient-check every registered op and the full training loss"""
        reports = check_all_ops(tolerance=tolerance, seed=self.config.seed)
        reports["loss_total"] = check_loss_gradients(tolerance=tolerance, seed=self.config.seed)
        rows = [
            {"probe": name, "max_rel_error": r.max_rel_error, "passed": r.passed}
            for name, r in reports.items()
        ]
        failed = [row["probe"] for row in rows if not row["passed"]]
        exporter = ReportExporter(self.output_dir)
        path = exporter.export_json({"tolerance": tolerance, "probes": rows}, name="gradcheck.json")
        status = StageStatus.FAILURE if failed else StageStatus.SUCCESS
        message = f"gradient check failed for {failed}" if failed else f"all {len(rows)} probes passed"
        return StageResult(status, message, data={"probes": rows}, outputs={"report": path},
                           error=message if failed else None)


def evaluate_truth(case: SegmentationCase, num_classes: int) -> np.ndarray:
    """Reference mask of a case: per-pixel majority over raters"""
    return majority_vote(case.raters, num_classes)
