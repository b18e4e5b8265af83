"""
D3RCKPT checkpoint container

Layout (little endian): magic, version u32, descriptor length u32, descriptor
JSON, tensor count u32, then per tensor: name length u16, UTF-8 name, rank u8,
dims u32 each, float32 data. Adam accumulators are stored as adam.m.<name>
and adam.v.<name>.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .autoencoder import LayerSpec, ModelParams, OptimState
from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"D3RCKPT"
VERSION = 1
_ADAM_M = "adam.m."
_ADAM_V = "adam.v."


@dataclass(frozen=True)
class CheckpointMeta:
    epochs_completed: int
    step: int
    dtype: str
    extra: dict[str, Any]


def _pack_tensor(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    header = struct.pack("<H", len(encoded)) + encoded + struct.pack("<B", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def save_checkpoint(params: ModelParams, optim_state: Optional[OptimState], path: Path,
                    epochs_completed: int = 0, extra: Optional[dict[str, Any]] = None) -> Path:
    """
    Writes params and optimizer state to a D3RCKPT file

    Args:
        params: Model tensors (stored as float32)
        optim_state: Adam state, or None for an inference-only checkpoint
        path: Destination file
        epochs_completed: Epochs finished when the checkpoint was taken
        extra: Additional JSON-serializable descriptor fields

    Returns:
        The written path
    """
    descriptor = {
        "layers": [layer.to_dict() for layer in params.architecture],
        "epochs_completed": int(epochs_completed),
        "step": int(optim_state.step) if optim_state is not None else 0,
        "dtype": "float32",
        "extra": extra or {},
    }
    desc_bytes = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")

    tensors = list(params.tensors.items())
    if optim_state is not None:
        tensors += [(_ADAM_M + n, a) for n, a in optim_state.m.items()]
        tensors += [(_ADAM_V + n, a) for n, a in optim_state.v.items()]

    chunks = [MAGIC, struct.pack("<II", VERSION, len(desc_bytes)), desc_bytes, struct.pack("<I", len(tensors))]
    chunks += [_pack_tensor(name, array) for name, array in tensors]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.debug("Saved checkpoint %s (%d tensors, %d epochs)", path, len(tensors), epochs_completed)
    return path


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated", f"{self.path} ends after {len(self.data)} bytes, expected more")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Path) -> tuple[ModelParams, Optional[OptimState], CheckpointMeta]:
    """
    Reads a D3RCKPT file; the whole file is parsed before anything is returned

    Raises:
        CheckpointError: missing file, bad magic, version mismatch, truncation
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError("missing_checkpoint", f"No checkpoint at {path}")
    reader = _Reader(path.read_bytes(), path)

    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad_magic", f"{path} is not a D3RCKPT checkpoint")
    version, desc_len = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError("version_mismatch", f"{path} has format version {version}, this build reads {VERSION}")
    try:
        descriptor = json.loads(reader.take(desc_len).decode("utf-8"))
        architecture = tuple(LayerSpec.from_dict(d) for d in descriptor["layers"])
    except (ValueError, KeyError) as e:
        raise CheckpointError("bad_descriptor", f"{path} has an unreadable descriptor: {e}") from e

    (count,) = reader.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I")
        n_bytes = 4 * int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(n_bytes), dtype="<f4").reshape(shape).astype(np.float32)
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing_bytes", f"{path} has {len(reader.data) - reader.pos} unexpected trailing bytes")

    model = {n: a for n, a in tensors.items() if not n.startswith((_ADAM_M, _ADAM_V))}
    m = {n[len(_ADAM_M):]: a for n, a in tensors.items() if n.startswith(_ADAM_M)}
    v = {n[len(_ADAM_V):]: a for n, a in tensors.items() if n.startswith(_ADAM_V)}
    params = ModelParams(architecture, model)
    optim_state = OptimState(m=m, v=v, step=int(descriptor.get("step", 0))) if m else None

    meta = CheckpointMeta(
        epochs_completed=int(descriptor.get("epochs_completed", 0)),
        step=int(descriptor.get("step", 0)),
        dtype=str(descriptor.get("dtype", "float32")),
        extra=dict(descriptor.get("extra", {})),
    )
    return params, optim_state, meta
