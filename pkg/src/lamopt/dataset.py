"""Binary persistence for collections of optimised densities.

File layout (little-endian throughout):

    magic   8 bytes  b"LAMOPTDS"
    version u32      1
    nx, ny  u32 each grid dimensions
    count   u32      number of entries
    entry   repeated count times:
        id        u32
        eta1      f64
        eta2      f64
        boundary  u8   0 = bottom, 1 = right, 2 = top
        J         f64  final compliance
        V         f64  final volume fraction
        n_iter    u32
        theta     nx*ny f64 cell densities

The count field sits at a fixed offset so completed entries can be
appended in place without rewriting the payload.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"LAMOPTDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<8sIIII")
_ENTRY_HEAD = struct.Struct("<IddBddI")
_COUNT_OFFSET = _HEADER.size - 4

BOUNDARY_CODES = {"bottom": 0, "right": 1, "top": 2}
BOUNDARY_NAMES = {code: name for name, code in BOUNDARY_CODES.items()}


class DatasetFormatError(ValueError):
    """Raised on bad magic, truncation, or malformed payloads."""


class DatasetVersionError(DatasetFormatError):
    """Raised when the file version is not the supported one."""


@dataclass
class DatasetEntry:
    """One optimised topology with its provenance scalars."""

    entry_id: int
    eta1: float
    eta2: float
    boundary: str
    compliance: float
    volume: float
    n_iterations: int
    theta: np.ndarray

    def __post_init__(self):
        if self.boundary not in BOUNDARY_CODES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)


@dataclass
class Dataset:
    """A grid size plus the entries computed on it."""

    nx: int
    ny: int
    entries: list[DatasetEntry] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def ids(self) -> set[int]:
        return {entry.entry_id for entry in self.entries}


def _pack_entry(entry: DatasetEntry, n_cells: int) -> bytes:
    if entry.theta.shape != (n_cells,):
        raise ValueError(
            f"entry {entry.entry_id}: expected {n_cells} densities, "
            f"got {entry.theta.shape}"
        )
    head = _ENTRY_HEAD.pack(
        entry.entry_id,
        entry.eta1,
        entry.eta2,
        BOUNDARY_CODES[entry.boundary],
        entry.compliance,
        entry.volume,
        entry.n_iterations,
    )
    return head + entry.theta.astype("<f8").tobytes()


def write_dataset(path, dataset: Dataset) -> None:
    path = Path(path)
    blob = bytearray(
        _HEADER.pack(
            DATASET_MAGIC, DATASET_VERSION, dataset.nx, dataset.ny, len(dataset.entries)
        )
    )
    for entry in dataset.entries:
        blob += _pack_entry(entry, dataset.n_cells)
    path.write_bytes(bytes(blob))


def append_entry(path, entry: DatasetEntry) -> None:
    """Add one entry to an existing file, patching the count in place."""
    path = Path(path)
    existing = read_dataset(path)
    with open(path, "r+b") as handle:
        handle.seek(0, 2)
        handle.write(_pack_entry(entry, existing.n_cells))
        handle.seek(_COUNT_OFFSET)
        handle.write(struct.pack("<I", len(existing.entries) + 1))


def read_dataset(path) -> Dataset:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, nx, ny, count = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DatasetVersionError(
            f"{path}: version {version}, supported {DATASET_VERSION}"
        )
    n_cells = nx * ny
    entries = []
    offset = _HEADER.size
    payload = n_cells * 8
    for _ in range(count):
        if offset + _ENTRY_HEAD.size + payload > len(blob):
            raise DatasetFormatError(f"{path}: truncated payload")
        entry_id, eta1, eta2, code, comp, vol, n_iter = _ENTRY_HEAD.unpack_from(
            blob, offset
        )
        offset += _ENTRY_HEAD.size
        if code not in BOUNDARY_NAMES:
            raise DatasetFormatError(f"{path}: unknown boundary code {code}")
        theta = np.frombuffer(blob, dtype="<f8", count=n_cells, offset=offset).copy()
        offset += payload
        entries.append(
            DatasetEntry(entry_id, eta1, eta2, BOUNDARY_NAMES[code], comp, vol, n_iter, theta)
        )
    return Dataset(nx=nx, ny=ny, entries=entries)


def write_manifest_csv(path, dataset: Dataset) -> None:
    """Human-readable sidecar listing the scalar columns."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", "eta1", "eta2", "boundary", "J_opt", "V_opt", "n_iter"])
        for entry in dataset.entries:
            writer.writerow(
                [
                    entry.entry_id,
                    repr(entry.eta1),
                    repr(entry.eta2),
                    entry.boundary,
                    repr(entry.compliance),
                    repr(entry.volume),
                    entry.n_iterations,
                ]
            )


def stack_thetas(dataset: Dataset) -> np.ndarray:
    """Entry densities as an (n_entries, n_cells) matrix."""
    return np.stack([entry.theta for entry in dataset.entries])


def stack_etas(dataset: Dataset) -> np.ndarray:
    """Entry parameters as an (n_entries, 2) matrix."""
    return np.array([[entry.eta1, entry.eta2] for entry in dataset.entries])
