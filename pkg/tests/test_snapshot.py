import numpy as np
import pytest

from sqg_lab.snapshot import SnapshotFormatError, dump_field, load_field
from sqg_lab.spectral import Field

from conftest import random_band_limited


def test_round_trip_bit_exact(grid64, tmp_path):
    f = random_band_limited(grid64, seed=40)
    p = tmp_path / "state.sqgf"
    dump_field(f, 1.25, p)
    g, t = load_field(p)
    assert t == 1.25
    assert g.grid == f.grid
    assert np.array_equal(g.physical, f.physical)


def test_rejects_bad_magic(grid64, tmp_path):
    f = random_band_limited(grid64, seed=41)
    p = tmp_path / "state.sqgf"
    dump_field(f, 0.0, p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(SnapshotFormatError):
        load_field(p)


def test_rejects_unknown_version(grid64, tmp_path):
    f = random_band_limited(grid64, seed=42)
    p = tmp_path / "state.sqgf"
    dump_field(f, 0.0, p)
    raw = bytearray(p.read_bytes())
    raw[4] = 99
    p.write_bytes(bytes(raw))
    with pytest.raises(SnapshotFormatError):
        load_field(p)


def test_rejects_truncated_payload(grid64, tmp_path):
    f = random_band_limited(grid64, seed=43)
    p = tmp_path / "state.sqgf"
    dump_field(f, 0.0, p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(SnapshotFormatError):
        load_field(p)


def test_rejects_empty_file(tmp_path):
    p = tmp_path / "empty.sqgf"
    p.write_bytes(b"")
    with pytest.raises(SnapshotFormatError):
        load_field(p)


def test_preserves_time_and_box(grid64, tmp_path):
    samples = np.zeros((64, 64))
    samples[3, 7] = 2.5
    f = Field.from_physical(grid64, samples)
    p = tmp_path / "state.sqgf"
    dump_field(f, 3.5e-3, p)
    g, t = load_field(p)
    assert t == 3.5e-3
    assert g.grid.L == f.grid.L
    assert g.physical[3, 7] == 2.5
