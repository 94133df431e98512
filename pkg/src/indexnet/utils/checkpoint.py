"""
Checkpoint container.

Layout: one ASCII line ``indexnet-checkpoint <version> <header bytes>``, a
JSON header of exactly that many bytes (format version, configuration digest,
metadata and a tensor manifest with names, shapes and byte offsets), then the
tensor payloads as little-endian float64 in manifest order. Identical state
always serializes to identical bytes.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..core.errors import CheckpointError
from ..core.tensor import Tensor
from .logger import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1
MAGIC = "indexnet-checkpoint"
PAYLOAD_DTYPE = "<f8"


@dataclass
class Checkpoint:
    """
    Everything needed to continue or evaluate a run.

    Attributes:
        digest: Digest of the network and loss configuration
        config: Resolved run configuration
        arrays: Named float64 tensors (model parameters, batch-norm running
            statistics, optimizer accumulators, centering mean)
        meta: JSON-safe scalars (epoch, learning rate, step count, batch-norm
            counters, generator states)
        version: Container format version
    """

    digest: str
    config: Dict[str, Any]
    arrays: Dict[str, Tensor] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def group(self, prefix: str) -> Dict[str, Tensor]:
        """Arrays under ``prefix.`` with the prefix stripped."""
        start = len(prefix) + 1
        marker = prefix + "."
        return {k[start:]: v for k, v in self.arrays.items() if k.startswith(marker)}

    def manifest(self) -> List[Dict[str, Any]]:
        rows = []
        offset = 0
        for name, value in self.arrays.items():
            nbytes = int(value.size) * 8
            rows.append(
                {
                    "name": name,
                    "shape": list(value.shape),
                    "offset": offset,
                    "bytes": nbytes,
                }
            )
            offset += nbytes
        return rows


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Serialize ``checkpoint`` to ``path``."""
    header = {
        "version": checkpoint.version,
        "digest": checkpoint.digest,
        "config": checkpoint.config,
        "meta": checkpoint.meta,
        "manifest": checkpoint.manifest(),
    }
    header_bytes = json.dumps(
        header, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(f"{MAGIC} {checkpoint.version} {len(header_bytes)}\n".encode("ascii"))
        f.write(header_bytes)
        for value in checkpoint.arrays.values():
            f.write(np.ascontiguousarray(value, dtype=PAYLOAD_DTYPE).tobytes())
    logger.info("Saved checkpoint with %d tensors to %s", len(checkpoint.arrays), out)
    return out


def _parse_preamble(blob: bytes, path: Path) -> tuple[int, int, int]:
    end = blob.find(b"\n")
    if end < 0:
        raise CheckpointError(f"{path}: missing checkpoint preamble")
    parts = blob[:end].decode("ascii", errors="replace").split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not an indexnet checkpoint")
    try:
        version, size = int(parts[1]), int(parts[2])
    except ValueError as e:
        raise CheckpointError(f"{path}: malformed preamble") from e
    return version, size, end + 1


def load_checkpoint(
    path: Union[str, Path], expected_digest: Optional[str] = None
) -> Checkpoint:
    """
    Read a checkpoint.

    Args:
        path: Checkpoint file
        expected_digest: Refuse the file unless its digest matches

    Raises:
        CheckpointError: Unknown version, digest mismatch, or a header or
            payload shorter than declared. Nothing is returned on failure.
    """
    src = Path(path)
    blob = src.read_bytes()
    version, size, start = _parse_preamble(blob, src)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{src}: format version {version}, expected {FORMAT_VERSION}"
        )
    if len(blob) < start + size:
        raise CheckpointError(
            f"{src}: header truncated, expected {size} bytes, found {len(blob) - start}"
        )
    try:
        header = json.loads(blob[start : start + size].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{src}: unreadable header: {e}") from e
    if expected_digest is not None and header["digest"] != expected_digest:
        raise CheckpointError(
            f"{src}: configuration digest {header['digest'][:12]} does not match "
            f"{expected_digest[:12]}"
        )
    payload = blob[start + size :]
    manifest = header["manifest"]
    needed = sum(int(row["bytes"]) for row in manifest)
    if len(payload) != needed:
        raise CheckpointError(
            f"{src}: payload holds {len(payload)} bytes, manifest declares {needed}"
        )
    arrays: Dict[str, Tensor] = {}
    for row in manifest:
        raw = payload[row["offset"] : row["offset"] + row["bytes"]]
        values = np.frombuffer(raw, dtype=PAYLOAD_DTYPE).astype(np.float64)
        arrays[row["name"]] = values.reshape(row["shape"])
    logger.debug("Loaded checkpoint %s with %d tensors", src, len(arrays))
    return Checkpoint(
        digest=header["digest"],
        config=header["config"],
        arrays=arrays,
        meta=header["meta"],
        version=version,
    )
