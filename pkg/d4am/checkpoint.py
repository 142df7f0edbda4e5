"""
Checkpoints de θ en un binario little-endian documentado.

Layout (todas las cabeceras little-endian):

    offset  size  campo
    0       8     magic  b"D4AMCKPT"
    8       2     version (uint16, actualmente 1)
    10      2     reservado (0)
    12      8     P, número de parámetros (uint64)
    20      32    sha256 del payload
    52      8*P   payload float64 '<f8'

La escritura es atómica (fichero temporal + os.replace).
"""

import hashlib
import logging
import os
import struct
from pathlib import Path

import numpy as np

from d4am.errors import CheckpointError
from d4am.netcore import ParamVector

logger = logging.getLogger("d4am.checkpoint")

MAGIC = b"D4AMCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sHHQ32s")


def sha256(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def save_checkpoint(theta: ParamVector, path: Path) -> Path:
    path = Path(path)
    values = np.ascontiguousarray(theta, dtype="<f8")
    if values.ndim != 1:
        raise CheckpointError(f"Solo se guardan vectores 1-D, forma {values.shape}")
    payload = values.tobytes()
    header = _HEADER.pack(MAGIC, VERSION, 0, values.shape[0], sha256(payload))
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path.write_bytes(header + payload)
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f"No se pudo escribir el checkpoint {path}: {e}") from e
    logger.debug("checkpoint %s: %d parámetros", path, values.shape[0])
    return path


def load_checkpoint(path: Path) -> ParamVector:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"No se pudo leer el checkpoint {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"Checkpoint truncado (cabecera incompleta): {path}")
    magic, version, _reserved, count, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"Magic inválido en {path}: {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"Versión de checkpoint no soportada en {path}: {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != 8 * count:
        raise CheckpointError(
            f"Checkpoint truncado: {len(payload)} bytes de payload, se esperaban {8 * count} ({path})"
        )
    if sha256(payload) != digest:
        raise CheckpointError(f"Checksum no coincide, checkpoint corrupto: {path}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)
