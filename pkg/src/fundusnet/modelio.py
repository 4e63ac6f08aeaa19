"""Binary model files.

Layout (all integers little-endian):

    magic   4 bytes  "FSEG"
    version u32      (currently 1)
    payload          one record per parameter-bearing layer
    crc     u32      CRC-32 of the payload bytes

Each record: kind tag u32 (1 = conv block, 2 = fully connected), then the
weight array (ndim u32, dims u32 each, samples f64) followed by the bias
array in the same encoding. The LReLU slope and input size travel in a
leading meta record (kind 0) so a load reconstructs the exact network.
Round trips are bit-exact.
"""

import struct
import zlib

import numpy as np

from .errors import CorruptModelError
from .network import Cnn, CnnGeometry

MAGIC = b"FSEG"
VERSION = 1

_KIND_META = 0
_KIND_CONV = 1
_KIND_FC = 2

_LAYER_ORDER = (
    ("conv1", _KIND_CONV),
    ("conv2", _KIND_CONV),
    ("fc1", _KIND_FC),
    ("fc2", _KIND_FC),
)


def _pack_array(arr):
    dims = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return dims + np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptModelError("model file truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def array(self, name):
        ndim = self.u32()
        if ndim > 8:
            raise CorruptModelError(f"implausible rank {ndim} for {name}")
        dims = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(self.take(8 * count), dtype="<f8")
        return data.reshape(dims).astype(np.float64)


def save_model(net, path):
    """Write a Cnn to `path` in the FSEG format."""
    g = net.geometry
    payload = struct.pack("<I", _KIND_META)
    meta = np.array(
        [g.input_size, g.channels, g.kernel, g.maps1, g.maps2, g.hidden,
         g.classes, net.slope],
        dtype=np.float64,
    )
    payload += _pack_array(meta)
    for name, kind in _LAYER_ORDER:
        payload += struct.pack("<I", kind)
        payload += _pack_array(net.params[f"{name}_w"])
        payload += _pack_array(net.params[f"{name}_b"])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_model(path):
    """Read a Cnn back; raises CorruptModelError on any inconsistency."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptModelError("bad magic bytes")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CorruptModelError(f"unsupported format version {version}")
    payload, crc = blob[8:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) != crc:
        raise CorruptModelError("payload checksum mismatch")

    rd = _Reader(payload)
    if rd.u32() != _KIND_META:
        raise CorruptModelError("missing meta record")
    meta = rd.array("meta")
    if meta.shape != (8,):
        raise CorruptModelError("malformed meta record")
    geometry = CnnGeometry(
        input_size=int(meta[0]), channels=int(meta[1]), kernel=int(meta[2]),
        maps1=int(meta[3]), maps2=int(meta[4]), hidden=int(meta[5]),
        classes=int(meta[6]),
    )
    net = Cnn(geometry, slope=float(meta[7]))
    for name, kind in _LAYER_ORDER:
        if rd.u32() != kind:
            raise CorruptModelError(f"unexpected record kind at layer {name}")
        w = rd.array(f"{name} weights")
        b = rd.array(f"{name} biases")
        if w.shape != net.params[f"{name}_w"].shape:
            raise CorruptModelError(
                f"layer {name}: declared weight shape {w.shape} does not match "
                f"expected {net.params[f'{name}_w'].shape}"
            )
        if b.shape != net.params[f"{name}_b"].shape:
            raise CorruptModelError(
                f"layer {name}: declared bias shape {b.shape} does not match "
                f"expected {net.params[f'{name}_b'].shape}"
            )
        net.params[f"{name}_w"] = w
        net.params[f"{name}_b"] = b
    if rd.pos != len(payload):
        raise CorruptModelError("trailing bytes after final layer")
    return net
