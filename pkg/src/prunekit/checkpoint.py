"""Binary ``PKT1`` checkpoint format.

Layout (all integers little-endian u32 unless noted)::

    b"PKT1" | version=1 | layer count
    per layer: N C H W | N*C*H*W f32 kernels | N f32 bias | u8 activation
    u8 residual flag

Activation codes: 0 = identity, 1 = relu.
"""
import io
import struct

import numpy as np

from .exceptions import CheckpointFormatError
from .network import ConvLayer, Network

MAGIC = b"PKT1"
VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_F32 = np.dtype("<f4")


def dumps(net):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(net.layers)))
    for layer in net.layers:
        buf.write(struct.pack("<4I", *layer.kernels.shape))
        buf.write(np.ascontiguousarray(layer.kernels, dtype=_F32).tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype=_F32).tobytes())
        buf.write(struct.pack("<B", _ACT_CODES[layer.activation]))
    buf.write(struct.pack("<B", int(bool(net.residual))))
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data):
    reader = _Reader(data)
    if bytes(reader.take(4)) != MAGIC:
        raise CheckpointFormatError("bad magic bytes, not a PKT1 checkpoint")
    version, n_layers = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        n, c, h, w = reader.unpack("<4I")
        kernels = np.frombuffer(reader.take(4 * n * c * h * w), dtype=_F32)
        bias = np.frombuffer(reader.take(4 * n), dtype=_F32)
        (code,) = reader.unpack("<B")
        if code not in _ACT_NAMES:
            raise CheckpointFormatError(f"unknown activation code {code}")
        layers.append(
            ConvLayer(
                kernels.reshape(n, c, h, w).astype(np.float32),
                bias.astype(np.float32),
                _ACT_NAMES[code],
            )
        )
    (flag,) = reader.unpack("<B")
    if reader.pos != len(reader.data):
        raise CheckpointFormatError("trailing bytes after checkpoint payload")
    if flag not in (0, 1):
        raise CheckpointFormatError(f"bad residual flag {flag}")
    try:
        return Network(layers, residual=bool(flag))
    except ValueError as exc:
        raise CheckpointFormatError(str(exc)) from exc


def save(net, path):
    with open(path, "wb") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def is_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == MAGIC
    except OSError:
        return False
