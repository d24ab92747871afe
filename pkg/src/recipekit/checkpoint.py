"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes   b"RCPKCKPT"
    version    u32       FORMAT_VERSION
    digest     32 bytes  SHA-256 of the resolved run config (zeros if none)
    count      u32       number of tensor records
    records    count x { name_len u16, name utf-8, dtype u8, ndim u8,
                         dims u64 x ndim, nbytes u64, raw little-endian data }
    crc32      u32       CRC-32 of every preceding byte

Model parameters use their own names (``conv1.w`` ...), optimizer velocities
are stored as ``velocity/<name>`` and the epoch counter as the int64 scalar
``meta/epoch``.  Momentum and weight decay travel as float64 scalars
``meta/momentum`` and ``meta/weight_decay``.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .model import TinyBackbone
from .optim import SgdState

MAGIC = b"RCPKCKPT"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt or version-mismatched checkpoint files."""


@dataclass
class Checkpoint:
    model: TinyBackbone
    state: SgdState
    epoch: int
    config_digest: bytes


def _record(name, arr):
    arr = np.asarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    code = _CODES.get(le.dtype.str)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = np.ascontiguousarray(le).tobytes()
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + struct.pack("<Q", len(raw)) + raw


def encode(model, state, epoch, config_digest=b""):
    digest = (config_digest or b"").ljust(32, b"\0")[:32]
    tensors = list(model.params.items())
    if state is not None:
        tensors += [(f"velocity/{k}", v) for k, v in state.velocity.items()]
        tensors += [("meta/momentum", np.float64(state.momentum)),
                    ("meta/weight_decay", np.float64(state.weight_decay))]
    tensors.append(("meta/epoch", np.int64(epoch)))
    tensors.append(("meta/input_size", np.int64(model.input_size)))
    body = MAGIC + struct.pack("<I", FORMAT_VERSION) + digest + struct.pack("<I", len(tensors))
    body += b"".join(_record(name, arr) for name, arr in tensors)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model, state=None, epoch=0, config_digest=b""):
    data = encode(model, state, epoch, config_digest)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data):
    if len(data) < len(MAGIC) + 4 + 32 + 4 + 4:
        raise CheckpointError("checkpoint is truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)")
    digest = r.take(32)
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}Q")
        (nbytes,) = r.unpack("<Q")
        dt = _DTYPES[code]
        if nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CheckpointError(f"record {name}: size does not match shape {shape}")
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last record")
    return tensors, digest


def load_checkpoint(path):
    """Read a checkpoint into a model, optimizer state and epoch counter."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    tensors, digest = decode(data)
    params = {k: v for k, v in tensors.items() if "/" not in k}
    missing = {"conv1.w", "embed.w", "fc.w"} - set(params)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {sorted(missing)}")
    input_size = int(tensors.get("meta/input_size", 32))
    model = TinyBackbone(params, input_size)
    velocity = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("velocity/")}
    momentum = float(tensors.get("meta/momentum", 0.9))
    weight_decay = float(tensors.get("meta/weight_decay", 1e-4))
    state = SgdState(momentum, weight_decay, velocity)
    epoch = int(tensors.get("meta/epoch", 0))
    return Checkpoint(model, state, epoch, digest)
