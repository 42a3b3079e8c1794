# normunit/numcore/checkpoint.py
"""
Self-describing binary checkpoints.

Layout: magic ``NUCK``, uint16 version, uint32 tensor count, then per tensor
a uint16 name length, the UTF-8 name, uint8 rank, uint32 extents and the
values as little-endian float32.
"""
import io
import logging
import struct
from pathlib import Path

import numpy as np

from normunit.utils.errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b'NUCK'
VERSION = 1


def dumps(state):
    """Serialize a name -> array mapping to bytes (names in sorted order)."""
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack('<HI', VERSION, len(state)))
    for name in sorted(state):
        array = np.asarray(state[name])
        encoded = name.encode('utf-8')
        buffer.write(struct.pack('<H', len(encoded)))
        buffer.write(encoded)
        buffer.write(struct.pack('<B', array.ndim))
        buffer.write(struct.pack(f'<{array.ndim}I', *array.shape))
        buffer.write(array.astype('<f4').tobytes())
    return buffer.getvalue()


def loads(payload):
    """
    Parse checkpoint bytes.

    Raises:
        DataError: On a bad magic, unknown version or truncated payload
    """
    if payload[:4] != MAGIC:
        raise DataError("Not a checkpoint: bad magic bytes")
    try:
        version, count = struct.unpack_from('<HI', payload, 4)
        if version != VERSION:
            raise DataError(f"Unsupported checkpoint version {version}")
        offset = 10
        state = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from('<H', payload, offset)
            offset += 2
            name = payload[offset:offset + name_length].decode('utf-8')
            offset += name_length
            (ndim,) = struct.unpack_from('<B', payload, offset)
            offset += 1
            shape = struct.unpack_from(f'<{ndim}I', payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(payload, dtype='<f4', count=size, offset=offset)
            offset += 4 * size
            state[name] = values.astype(np.float64).reshape(shape)
    except struct.error as e:
        raise DataError(f"Truncated checkpoint: {str(e)}")
    except ValueError as e:
        raise DataError(f"Truncated checkpoint: {str(e)}")
    return state


def save(module, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(module.state_dict()))
    logger.info(f"Saved checkpoint with {module.num_parameters()} values to {path}")


def load(module, path):
    module.load_state_dict(loads(Path(path).read_bytes()))
    return module
