"""
Deterministic batch loader

Each epoch visits every case once in a seeded order and picks one rater
label per case, uniformly. The batch sequence depends only on the seed;
an optional producer thread prefetches into a bounded queue without
changing it.
"""
import queue
import threading
from dataclasses import dataclass
from typing import Iterator, List, Sequence

import logging
import numpy as np

from src.models.domain import SegmentationCase, one_hot
from src.utils.rng import RngStreams

logger = logging.getLogger(__name__)


@dataclass
class Batch:
    """Images, one-hot targets and where they came from"""
    images: np.ndarray      # [B,Cx,H,W] float32
    targets: np.ndarray     # [B,C,H,W] float32 one-hot
    case_ids: List[int]
    raters: List[int]


class BatchLoader:
    """Seeded, epoch-based batches of (X, y*)"""

    def __init__(
        self,
        cases: Sequence[SegmentationCase],
        num_classes: int,
        batch_size: int = 2,
        seed: int = 0,
        purpose: str = "train",
        prefetch: int = 0,
    ):
        if not cases:
            raise ValueError("BatchLoader needs at least one case")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.cases = list(cases)
        self.num_classes = num_classes
        self.batch_size = batch_size
        self.streams = RngStreams(seed)
        self.purpose = purpose
        self.prefetch = prefetch

    def _epoch(self, epoch: int) -> Iterator[tuple]:
        order = self.streams.stream("loader", self.purpose, "order", epoch).permutation(len(self.cases))
        rater_rng = self.streams.stream("loader", self.purpose, "raters", epoch)
        picks = [int(rater_rng.integers(self.cases[i].num_raters)) for i in order]
        for i, r in zip(order, picks):
            yield int(i), r

    def _stream(self, n_batches: int) -> Iterator[Batch]:
        epoch = 0
        pending: List[tuple] = []
        produced = 0
        while produced < n_batches:
            for item in self._epoch(epoch):
                pending.append(item)
                if len(pending) == self.batch_size:
                    yield self._collate(pending)
                    pending = []
                    produced += 1
                    if produced >= n_batches:
                        return
            epoch += 1

    def _collate(self, items: List[tuple]) -> Batch:
        images = np.stack([self.cases[i].image for i, _ in items]).astype(np.float32)
        labels = np.stack([self.cases[i].raters[r] for i, r in items])
        return Batch(
            images=images,
            targets=one_hot(labels, self.num_classes),
            case_ids=[self.cases[i].case_id for i, _ in items],
            raters=[r for _, r in items],
        )

    def batches(self, n_batches: int) -> Iterator[Batch]:
        """The first n_batches of the seeded batch sequence"""
        if self.prefetch <= 0:
            yield from self._stream(n_batches)
            return

        buffer: "queue.Queue" = queue.Queue(maxsize=self.prefetch)
        done = object()
        stop = threading.Event()
        failures: List[Exception] = []

        def offer(item) -> bool:
            while not stop.is_set():
                try:
                    buffer.put(item, timeout=0.1)
                    return True
                except queue.Full:
                    continue
            return False

        def produce():
            try:
                for batch in self._stream(n_batches):
                    if not offer(batch):
                        return
            except Exception as exc:
                failures.append(exc)
            finally:
                offer(done)

        worker = threading.Thread(target=produce, name=f"loader-{self.purpose}", daemon=True)
        worker.start()
        try:
            while True:
                item = buffer.get()
                if item is done:
                    break
                yield item
            if failures:
                raise failures[0]
        finally:
            stop.set()
            worker.join(timeout=1.0)
