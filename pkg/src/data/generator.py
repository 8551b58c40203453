"""
Synthetic ambiguous segmentation benchmark

Generates a smooth blob image and several rater label maps whose
boundaries disagree inside a band of configurable width. Ambiguity is put
on the labels, not the image, so the conditional label distribution is
known by construction.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import logging
import numpy as np
from scipy import ndimage

from src.models.domain import SegmentationCase
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CaseSpec:
    """Everything a single case depends on"""
    seed: int = 0
    size: int = 32
    num_classes: int = 2
    ambiguity: float = 3.0      # width w of the stochastic boundary band, pixels
    raters: int = 4
    noise: float = 0.15         # std of Gaussian pixel noise

    def __post_init__(self):
        if self.raters < 1:
            raise ValueError("raters must be >= 1")
        if self.ambiguity < 0:
            raise ValueError("ambiguity width must be >= 0")
        if self.num_classes not in (2, 3):
            raise ValueError("num_classes must be 2 or 3")
        if self.size < 8:
            raise ValueError("size must be >= 8")


def signed_distance(mask: np.ndarray) -> np.ndarray:
    """Negative inside, positive outside, |value| >= 1 on both sides of the boundary"""
    return ndimage.distance_transform_edt(~mask) - ndimage.distance_transform_edt(mask)


def _smooth_field(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    """Low-frequency random field scaled to [-1, 1]"""
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


class CaseGenerator:
    """
    Procedural case generator

    Each case is a rotated ellipse with a wobbly outline (and, for three
    classes, an inner core). Raters move the outline by up to `ambiguity`
    pixels along a rater-specific smooth offset field.
    """

    def __init__(self, spec: CaseSpec):
        self.spec = spec
        self.logger = logging.getLogger(__name__)

    def _base_masks(self, streams: RngStreams) -> Tuple[np.ndarray, np.ndarray]:
        n = self.spec.size
        shape_rng = streams.stream("shape")
        cy, cx = shape_rng.uniform(0.38, 0.62, size=2) * n
        a, b = shape_rng.uniform(0.18, 0.30, size=2) * n
        angle = shape_rng.uniform(0.0, np.pi)
        wobble = 0.25 * _smooth_field(streams.stream("wobble"), n, sigma=n / 6)

        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(angle) + dy * np.sin(angle)
        v = -dx * np.sin(angle) + dy * np.cos(angle)
        level = (u / a) ** 2 + (v / b) ** 2 + wobble

        outer = level < 1.0
        core = level < 0.35
        return outer, core

    def _rater_mask(self, sd: np.ndarray, offset: np.ndarray) -> np.ndarray:
        mask = sd < offset
        # image frame stays background
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
        return mask

    def generate(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            (image [1,H,W] float32, rater labels [R,H,W] uint8)
        """
        spec = self.spec
        streams = RngStreams(spec.seed)
        outer, core = self._base_masks(streams)
        sd_outer = signed_distance(outer)
        sd_core = signed_distance(core)

        labels = np.zeros((spec.raters, spec.size, spec.size), dtype=np.uint8)
        for r in range(spec.raters):
            offset = spec.ambiguity * _smooth_field(streams.stream("rater", r), spec.size, sigma=spec.size / 8)
            fg = self._rater_mask(sd_outer, offset)
            labels[r][fg] = 1
            if spec.num_classes == 3:
                labels[r][fg & (sd_core < 0.5 * offset)] = 2

        intensity = outer.astype(np.float64)
        if spec.num_classes == 3:
            intensity += 0.6 * core
        image = ndimage.gaussian_filter(intensity, sigma=1.0)
        image += 0.2 * _smooth_field(streams.stream("background"), spec.size, sigma=spec.size / 4)
        image += spec.noise * streams.normal(image.shape, "pixel_noise")
        return image[None].astype(np.float32), labels


def generate_case(spec: CaseSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(image X [1,H,W], rater labels [R,H,W]) for one spec"""
    return CaseGenerator(spec).generate()


def case_seed(seed: int, index: int) -> int:
    """Seed of case `index` in a dataset generated from `seed`"""
    return RngStreams(seed).child("case", index).seed


def generate_cases(
    count: int,
    seed: int = 0,
    size: int = 32,
    num_classes: int = 2,
    ambiguity: float = 3.0,
    raters: int = 4,
    noise: float = 0.15,
    max_workers: int = 1,
) -> List[SegmentationCase]:
    """
    Generate `count` independent cases

    Case i depends only on (seed, i); the worker count never changes output.
    """
    if count < 1:
        raise ValueError("count must be >= 1")

    def one(index: int) -> SegmentationCase:
        spec = CaseSpec(case_seed(seed, index), size, num_classes, ambiguity, raters, noise)
        image, labels = generate_case(spec)
        return SegmentationCase(case_id=index, image=image, raters=labels)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            cases = list(pool.map(one, range(count)))
    else:
        cases = [one(i) for i in range(count)]
    logger.info(f"Generated {count} cases ({size}x{size}, C={num_classes}, R={raters}, w={ambiguity})")
    return cases


def two_mode_fixture(size: int = 32, raters: int = 8, noise: float = 0.05, seed: int = 0) -> SegmentationCase:
    """
    A case whose raters split evenly between two hypotheses

    The image shows a bright disc inside a faint ring. Half of the raters
    label only the disc, the other half disc plus ring; the two outlines
    never touch.
    """
    if raters < 2 or raters % 2:
        raise ValueError("two_mode_fixture needs an even number of raters >= 2")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    radius = np.hypot(yy - (size - 1) / 2, xx - (size - 1) / 2)
    inner = radius <= size * 0.18
    outer = radius <= size * 0.32

    image = 1.0 * inner + 0.5 * (outer & ~inner)
    image = ndimage.gaussian_filter(image, sigma=0.8)
    image += noise * RngStreams(seed).normal(image.shape, "two_mode", "noise")

    labels = np.zeros((raters, size, size), dtype=np.uint8)
    labels[: raters // 2][:, inner] = 1
    labels[raters // 2:][:, outer] = 1
    return SegmentationCase(case_id=0, image=image[None].astype(np.float32), raters=labels)


def train_test_split(cases: List[SegmentationCase], test_fraction: float = 0.2):
    """Deterministic split by index: the last `test_fraction` of cases is the test set"""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = max(1, int(round(len(cases) * test_fraction)))
    if n_test >= len(cases):
        raise ValueError(f"cannot split {len(cases)} cases with test_fraction={test_fraction}")
    return cases[:-n_test], cases[-n_test:]
