"""Artifact writers: density images, loss histories, run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

# Densities below this are rendered as plain void.
VOID_THRESHOLD = 1e-2


def density_to_grey(theta, threshold: float = VOID_THRESHOLD) -> np.ndarray:
    """Map densities to 8-bit grey: solid is black, void is white."""
    theta = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(theta < 0.0) or np.any(theta > 1.0):
        raise ValueError("densities must be finite and inside [0, 1]")
    grey = np.rint(255.0 * (1.0 - theta)).astype(np.uint8)
    grey[theta < threshold] = 255
    return grey


def write_pgm(path, theta_quads, nx: int, ny: int, threshold: float = VOID_THRESHOLD) -> None:
    """Binary greymap of a cell-density field.

    ``theta_quads`` is row-major from the bottom of the domain; image
    rows scan top to bottom, so rows are flipped on output.
    """
    theta_quads = np.asarray(theta_quads, dtype=float)
    if theta_quads.shape != (nx * ny,):
        raise ValueError(f"expected {nx * ny} cell densities, got {theta_quads.shape}")
    grey = density_to_grey(theta_quads, threshold).reshape(ny, nx)[::-1]
    with open(path, "wb") as handle:
        handle.write(f"P5\n{nx} {ny}\n255\n".encode())
        handle.write(grey.tobytes())


def read_pgm(path) -> np.ndarray:
    """Parse a binary greymap back into a (rows, cols) uint8 array."""
    blob = Path(path).read_bytes()
    fields: list[bytes] = []
    offset = 0
    while len(fields) < 4:
        while offset < len(blob) and blob[offset : offset + 1].isspace():
            offset += 1
        if blob[offset : offset + 1] == b"#":
            while offset < len(blob) and blob[offset] != 0x0A:
                offset += 1
            continue
        start = offset
        while offset < len(blob) and not blob[offset : offset + 1].isspace():
            offset += 1
        fields.append(blob[start:offset])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary greymap")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    offset += 1
    pixels = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=offset)
    return pixels.reshape(height, width).copy()


def write_history_csv(path, records) -> None:
    """Per-epoch losses of a training run."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["stage", "epoch", "train_loss", "val_loss"])
        for r in records:
            writer.writerow([r.stage, r.epoch, repr(r.train_loss), repr(r.val_loss)])


def write_density_csv(path, theta_quads, nx: int, ny: int) -> None:
    """Cell densities with their centre coordinates on [-1,1] x [0,1]."""
    theta_quads = np.asarray(theta_quads, dtype=float)
    if theta_quads.shape != (nx * ny,):
        raise ValueError(f"expected {nx * ny} cell densities, got {theta_quads.shape}")
    hx, hy = 2.0 / nx, 1.0 / ny
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["x", "y", "theta"])
        for iy in range(ny):
            for ix in range(nx):
                writer.writerow(
                    [
                        repr(-1.0 + (ix + 0.5) * hx),
                        repr((iy + 0.5) * hy),
                        repr(float(theta_quads[iy * nx + ix])),
                    ]
                )


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command: str, seed, config: dict, artifacts: dict) -> None:
    """JSON sidecar recording what a run produced and from what inputs.

    ``artifacts`` maps labels to file paths; each entry is stored with
    its size and content digest so results can be audited later.
    """
    listed = {}
    for label, artifact in artifacts.items():
        artifact = Path(artifact)
        listed[label] = {
            "path": str(artifact),
            "bytes": artifact.stat().st_size,
            "sha256": file_digest(artifact),
        }
    payload = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "config": config,
        "artifacts": listed,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
