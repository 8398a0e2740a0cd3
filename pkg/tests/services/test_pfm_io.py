from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

from src.services import pfm_io
from src.services.depth_estimator import DepthMap, UncertaintyMap
from src.services.errors import ParseError
from src.services.geometry import DTYPE


def test_small_map_layout(tmp_path: Path) -> None:
    data = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=DTYPE)
    blob = pfm_io.encode_pfm(DepthMap(data, resolution="full", kind="mvs"))
    header, dims, scale, payload = blob.split(b"\n", 3)
    assert (header, dims, scale) == (b"Pf", b"2 2", b"-1.0")
    assert len(payload) == 16
    # Rows are stored bottom-to-top.
    assert np.frombuffer(payload, dtype="<f4").tolist() == [3.0, 4.0, 1.0, 2.0]

    path = tmp_path / "map.pfm"
    pfm_io.export_pfm(data, path)
    assert torch.equal(pfm_io.import_pfm(path), data)


def test_round_trip_is_bit_exact(tmp_path: Path) -> None:
    generator = torch.Generator().manual_seed(11)
    for index in range(100):
        height = int(torch.randint(1, 9, (1,), generator=generator).item())
        width = int(torch.randint(1, 9, (1,), generator=generator).item())
        values = (torch.rand(height, width, generator=generator) * 80.0).to(torch.float32).to(DTYPE)
        path = tmp_path / f"map_{index}.pfm"
        pfm_io.export_pfm(values, path)
        restored = pfm_io.import_pfm(path)
        assert restored.numpy().tobytes() == values.numpy().tobytes()


def test_uncertainty_maps_are_exported(tmp_path: Path) -> None:
    path = tmp_path / "u.pfm"
    pfm_io.export_pfm(UncertaintyMap(torch.tensor([[0.0, 0.5]], dtype=DTYPE)), path)
    assert pfm_io.import_pfm(path).tolist() == [[0.0, 0.5]]


def test_big_endian_payload_is_decoded() -> None:
    payload = np.array([[5.0, 6.0]], dtype=">f4").tobytes()
    decoded = pfm_io.decode_pfm(b"Pf\n2 1\n1.0\n" + payload)
    assert decoded.tolist() == [[5.0, 6.0]]


def test_color_header_is_rejected() -> None:
    with pytest.raises(ParseError) as excinfo:
        pfm_io.decode_pfm(b"PF\n1 1\n-1.0\n" + bytes(12))
    assert excinfo.value.offset == 0


def test_malformed_dimensions_report_offset() -> None:
    with pytest.raises(ParseError) as excinfo:
        pfm_io.decode_pfm(b"Pf\ntwo 1\n-1.0\n" + bytes(8))
    assert excinfo.value.offset == 3
    assert "byte offset 3" in str(excinfo.value)


def test_truncated_payload_is_rejected() -> None:
    with pytest.raises(ParseError) as excinfo:
        pfm_io.decode_pfm(b"Pf\n2 2\n-1.0\n" + bytes(8))
    assert excinfo.value.offset == len(b"Pf\n2 2\n-1.0\n")


def test_non_finite_maps_are_refused(tmp_path: Path) -> None:
    with pytest.raises(ValueError):
        pfm_io.export_pfm(torch.tensor([[1.0, float("nan")]]), tmp_path / "bad.pfm")
    assert not (tmp_path / "bad.pfm").exists()
