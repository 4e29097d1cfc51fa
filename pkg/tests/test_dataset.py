"""Binary dataset format round-trip and corruption tests."""

import csv
import struct

import numpy as np
import pytest

from lamopt.dataset import (
    DATASET_MAGIC,
    Dataset,
    DatasetEntry,
    DatasetFormatError,
    DatasetVersionError,
    append_entry,
    read_dataset,
    stack_etas,
    stack_thetas,
    write_dataset,
    write_manifest_csv,
)


def synthetic_dataset(nx=6, ny=3, count=3, seed=0):
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(count):
        entries.append(
            DatasetEntry(
                entry_id=i,
                eta1=rng.uniform(0.0, 0.6),
                eta2=float(rng.integers(0, 60)),
                boundary=("bottom", "right", "top")[i % 3],
                compliance=rng.uniform(0.1, 1.0),
                volume=rng.uniform(0.3, 0.5),
                n_iterations=int(rng.integers(1, 100)),
                theta=rng.uniform(0.0, 1.0, size=nx * ny),
            )
        )
    return Dataset(nx=nx, ny=ny, entries=entries)


class TestRoundTrip:
    def test_bitwise_lossless(self, tmp_path):
        ds = synthetic_dataset()
        path = tmp_path / "ds.bin"
        write_dataset(path, ds)
        back = read_dataset(path)
        assert (back.nx, back.ny) == (ds.nx, ds.ny)
        assert len(back.entries) == len(ds.entries)
        for a, b in zip(ds.entries, back.entries):
            assert a.entry_id == b.entry_id
            assert a.eta1 == b.eta1 and a.eta2 == b.eta2
            assert a.boundary == b.boundary
            assert a.compliance == b.compliance and a.volume == b.volume
            assert a.n_iterations == b.n_iterations
            np.testing.assert_array_equal(a.theta, b.theta)

    def test_write_read_write_identical_bytes(self, tmp_path):
        ds = synthetic_dataset(seed=3)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        write_dataset(p1, ds)
        write_dataset(p2, read_dataset(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_dataset_is_valid(self, tmp_path):
        path = tmp_path / "empty.bin"
        write_dataset(path, Dataset(nx=4, ny=2))
        back = read_dataset(path)
        assert back.entries == [] and back.n_cells == 8

    def test_append_matches_bulk_write(self, tmp_path):
        ds = synthetic_dataset(count=4, seed=9)
        bulk, grown = tmp_path / "bulk.bin", tmp_path / "grown.bin"
        write_dataset(bulk, ds)
        write_dataset(grown, Dataset(nx=ds.nx, ny=ds.ny))
        for entry in ds.entries:
            append_entry(grown, entry)
        assert bulk.read_bytes() == grown.read_bytes()


class TestCorruption:
    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        ds = synthetic_dataset(count=1)
        write_dataset(path, ds)
        blob = bytearray(path.read_bytes())
        blob[:8] = b"NOTMYFMT"
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "ver.bin"
        write_dataset(path, synthetic_dataset(count=1))
        blob = bytearray(path.read_bytes())
        blob[8:12] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(DatasetVersionError):
            read_dataset(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "cut.bin"
        write_dataset(path, synthetic_dataset(count=2))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 16])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "head.bin"
        path.write_bytes(DATASET_MAGIC[:4])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_wrong_theta_length_rejected_on_write(self, tmp_path):
        entry = DatasetEntry(0, 0.1, 2.0, "bottom", 1.0, 0.4, 5, np.zeros(7))
        with pytest.raises(ValueError):
            write_dataset(tmp_path / "x.bin", Dataset(nx=4, ny=2, entries=[entry]))


class TestSidecars:
    def test_manifest_csv_round_trips_scalars(self, tmp_path):
        ds = synthetic_dataset(seed=4)
        path = tmp_path / "manifest.csv"
        write_manifest_csv(path, ds)
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == len(ds.entries)
        for row, entry in zip(rows, ds.entries):
            assert int(row["id"]) == entry.entry_id
            assert float(row["eta1"]) == entry.eta1
            assert float(row["J_opt"]) == entry.compliance
            assert row["boundary"] == entry.boundary

    def test_stack_helpers(self):
        ds = synthetic_dataset(count=5)
        thetas = stack_thetas(ds)
        etas = stack_etas(ds)
        assert thetas.shape == (5, ds.n_cells)
        assert etas.shape == (5, 2)
        np.testing.assert_array_equal(thetas[2], ds.entries[2].theta)
