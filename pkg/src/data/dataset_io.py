"""
PGRDDATA dataset files

Magic "PGRDDATA", little-endian uint64 header length, JSON header
(count, H, W, C, R, dtype, offsets), then the payload: images as <f4
[N,Cx,H,W] followed by labels as u1 [N,R,H,W].
"""
import hashlib
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import logging
import numpy as np

from src.models.domain import SegmentationCase
from src.models.errors import DatasetFormatError
from src.ndgrad.checkpoint import ContainerError, decode_container, encode_container

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"PGRDDATA"
HEADER_OFFSET = 16


def encode_dataset(cases: Sequence[SegmentationCase], num_classes: int) -> bytes:
    if not cases:
        raise ValueError("cannot write an empty dataset")
    images = np.stack([c.image for c in cases]).astype("<f4")
    labels = np.stack([c.raters for c in cases]).astype("u1")
    if labels.max(initial=0) >= num_classes:
        raise ValueError(f"labels exceed num_classes={num_classes}")
    n, cx, h, w = images.shape
    meta = {
        "count": n,
        "H": h,
        "W": w,
        "C": num_classes,
        "R": labels.shape[1],
        "image_channels": cx,
        "dtype": {"images": "<f4", "labels": "u1"},
        "case_ids": [int(c.case_id) for c in cases],
    }
    return encode_container(DATASET_MAGIC, {"images": images, "labels": labels}, meta)


def write_dataset(cases: Sequence[SegmentationCase], path: Union[str, Path], num_classes: int) -> Path:
    """Write cases to a PGRDDATA file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_dataset(cases, num_classes))
    logger.info(f"Wrote {len(cases)} cases to {path}")
    return path


def decode_dataset(blob: bytes) -> Tuple[List[SegmentationCase], Dict[str, Any]]:
    try:
        arrays, meta = decode_container(DATASET_MAGIC, blob)
    except ContainerError as exc:
        raise DatasetFormatError(exc.message, offset=exc.offset) from exc

    for key in ("count", "H", "W", "C", "R"):
        if key not in meta:
            raise DatasetFormatError(f"header lacks '{key}'", offset=HEADER_OFFSET)
    if "images" not in arrays or "labels" not in arrays:
        raise DatasetFormatError("payload lacks images or labels", offset=HEADER_OFFSET)

    images, labels = arrays["images"], arrays["labels"]
    n, h, w, r = meta["count"], meta["H"], meta["W"], meta["R"]
    if images.ndim != 4 or images.shape[0] != n or images.shape[2:] != (h, w):
        raise DatasetFormatError(
            f"header says {n} images of {h}x{w}, payload holds {images.shape}", offset=HEADER_OFFSET
        )
    if labels.shape != (n, r, h, w):
        raise DatasetFormatError(
            f"header says labels {(n, r, h, w)}, payload holds {labels.shape}", offset=HEADER_OFFSET
        )
    if labels.max(initial=0) >= meta["C"]:
        raise DatasetFormatError(f"label value outside [0, {meta['C']})", offset=HEADER_OFFSET)

    case_ids = meta.get("case_ids") or list(range(n))
    cases = [
        SegmentationCase(case_id=int(case_ids[i]), image=images[i].astype(np.float32), raters=labels[i].astype(np.uint8))
        for i in range(n)
    ]
    return cases, meta


def read_dataset(path: Union[str, Path]) -> Tuple[List[SegmentationCase], Dict[str, Any]]:
    """
    Read a PGRDDATA file

    Returns:
        (cases, header metadata)

    Raises:
        FileNotFoundError: Missing file
        DatasetFormatError: Bad magic, truncation or header/payload mismatch
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    return decode_dataset(path.read_bytes())


def checksum(path: Union[str, Path]) -> str:
    """sha256 of a file's bytes"""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
