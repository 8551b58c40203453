"""
Named, counter-based random streams

Every consumer asks for a stream by purpose name ("trajectory/3/init",
"train/noise/120"). A stream is a Philox generator keyed from a hash of
(seed, name), so draws do not depend on the order in which other streams
were used and any run can be replayed from the seed alone.
"""
import hashlib
from typing import Union

import numpy as np

NamePart = Union[str, int]


def stream_key(seed: int, name: str) -> np.ndarray:
    """128-bit Philox key for (seed, name)"""
    digest = hashlib.sha256(f"pgrd:{int(seed)}:{name}".encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").astype(np.uint64)


class RngStreams:
    """Factory of independent generators addressed by name"""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, *parts: NamePart) -> np.random.Generator:
        """Fresh generator positioned at counter 0 of the named substream"""
        if not parts:
            raise ValueError("stream name must not be empty")
        name = "/".join(str(p) for p in parts)
        return np.random.Generator(np.random.Philox(key=stream_key(self.seed, name)))

    def normal(self, shape, *parts: NamePart, dtype=np.float64) -> np.ndarray:
        """Standard normal draws from the named substream"""
        return self.stream(*parts).standard_normal(shape).astype(dtype, copy=False)

    def child(self, *parts: NamePart) -> "RngStreams":
        """Streams namespace derived from this one (e.g. per case)"""
        name = "/".join(str(p) for p in parts)
        sub_seed = int(stream_key(self.seed, f"child:{name}")[0] & np.uint64(0x7FFFFFFFFFFFFFFF))
        return RngStreams(sub_seed)
