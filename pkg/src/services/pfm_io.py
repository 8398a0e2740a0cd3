"""
Grayscale PFM (portable float map) reader and writer.

Layout: "Pf" line, "<width> <height>" line, scale line whose sign gives the byte order
(negative = little-endian), then float32 rows stored bottom-to-top.
"""

from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from src.services.depth_estimator import DepthMap, UncertaintyMap
from src.services.errors import ParseError
from src.services.geometry import DTYPE

LOGGER = logging.getLogger(__name__)

GRAYSCALE_MAGIC = b"Pf"


def _as_array(map_: DepthMap | UncertaintyMap | torch.Tensor) -> np.ndarray:
    data = map_.data if isinstance(map_, (DepthMap, UncertaintyMap)) else map_
    array = torch.as_tensor(data).detach().cpu().numpy()
    if array.ndim != 2:
        raise ValueError(f"PFM export needs a 2-D map, got shape {array.shape}")
    return array


def encode_pfm(map_: DepthMap | UncertaintyMap | torch.Tensor) -> bytes:
    array = _as_array(map_)
    if not np.all(np.isfinite(array)):
        raise ValueError("refusing to export a map with non-finite values")
    height, width = array.shape
    header = b"Pf\n" + f"{width} {height}\n".encode("ascii") + b"-1.0\n"
    payload = np.flipud(array).astype("<f4").tobytes()
    return header + payload


def export_pfm(map_: DepthMap | UncertaintyMap | torch.Tensor, path: Path) -> None:
    blob = encode_pfm(map_)
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("wb", delete=False, dir=path.parent) as handle:
        handle.write(blob)
        temp_name = handle.name
    os.replace(temp_name, path)


def _read_line(blob: bytes, offset: int) -> tuple[bytes, int]:
    end = blob.find(b"\n", offset)
    if end < 0:
        raise ParseError("unterminated header line", offset)
    return blob[offset:end].strip(), end + 1


def decode_pfm(blob: bytes) -> torch.Tensor:
    magic, offset = _read_line(blob, 0)
    if magic != GRAYSCALE_MAGIC:
        raise ParseError(f"unsupported PFM identifier {magic!r}, only 'Pf' is accepted", 0)

    dims_offset = offset
    dims, offset = _read_line(blob, offset)
    parts = dims.split()
    if len(parts) != 2:
        raise ParseError(f"malformed dimensions line {dims!r}", dims_offset)
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ParseError(f"malformed dimensions line {dims!r}", dims_offset) from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"non-positive dimensions {width}x{height}", dims_offset)

    scale_offset = offset
    scale_line, offset = _read_line(blob, offset)
    try:
        scale = float(scale_line)
    except ValueError as exc:
        raise ParseError(f"malformed scale line {scale_line!r}", scale_offset) from exc
    if scale == 0.0:
        raise ParseError("scale must be non-zero", scale_offset)

    expected = width * height * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise ParseError(f"expected {expected} payload bytes, found {len(payload)}", offset)
    dtype = "<f4" if scale < 0 else ">f4"
    array = np.flipud(np.frombuffer(payload, dtype=dtype).reshape(height, width))
    return torch.from_numpy(array.astype(np.float64)).to(DTYPE)


def import_pfm(path: Path) -> torch.Tensor:
    return decode_pfm(path.read_bytes())
