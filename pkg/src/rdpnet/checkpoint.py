"""Versioned binary checkpoints.

Model file layout (all integers little-endian):

    magic   b"RDPN"
    version u32
    config  8 x u32: patch_size, embed_dim, depth, out_ch, dw_kernel,
                     in_channels, num_classes, dtype tag (0=float32, 1=float64)
    records repeated until EOF:
            u32 name length, UTF-8 name bytes,
            u8 dtype tag, u8 rank, rank x u32 extents,
            raw little-endian scalar payload

Records cover every learnable parameter and every running statistic, so a
save/load round trip is bitwise exact. Trainer-state files wrap a model
checkpoint with a JSON metadata block and optimizer-moment records under
magic b"RDPT" (see rdpnet.trainer).
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

from .errors import CheckpointError
from .model import RdpNet, RdpNetConfig

MODEL_MAGIC = b"RDPN"
MODEL_VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CONFIG_FIELDS = (
    "patch_size",
    "embed_dim",
    "depth",
    "out_ch",
    "dw_kernel",
    "in_channels",
    "num_classes",
)


def write_record(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    data = np.ascontiguousarray(arr)
    tag = _DTYPE_TAGS[np.dtype(data.dtype)]
    name_bytes = name.encode("utf-8")
    f.write(struct.pack("<I", len(name_bytes)))
    f.write(name_bytes)
    f.write(struct.pack("<BB", tag, data.ndim))
    f.write(struct.pack(f"<{data.ndim}I", *data.shape))
    f.write(data.astype(_TAG_DTYPES[tag], copy=False).tobytes(order="C"))


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what} at offset {f.tell()}")
    return buf


def read_records(f: BinaryIO) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    while True:
        head = f.read(4)
        if not head:
            return out
        if len(head) != 4:
            raise CheckpointError(f"truncated record header at offset {f.tell()}")
        (name_len,) = struct.unpack("<I", head)
        name = _read_exact(f, name_len, "record name").decode("utf-8")
        tag, rank = struct.unpack("<BB", _read_exact(f, 2, f"record {name!r} dtype/rank"))
        if tag not in _TAG_DTYPES:
            raise CheckpointError(f"record {name!r} has unknown dtype tag {tag}")
        shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"record {name!r} extents"))
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = _read_exact(f, count * dtype.itemsize, f"record {name!r} payload")
        if name in out:
            raise CheckpointError(f"duplicate record {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return out


def _write_header(f: BinaryIO, config: RdpNetConfig) -> None:
    f.write(MODEL_MAGIC)
    f.write(struct.pack("<I", MODEL_VERSION))
    values = [getattr(config, name) for name in _CONFIG_FIELDS]
    values.append(0 if config.dtype == "float32" else 1)
    f.write(struct.pack("<8I", *values))


def _read_header(f: BinaryIO) -> RdpNetConfig:
    magic = _read_exact(f, 4, "magic")
    if magic != MODEL_MAGIC:
        raise CheckpointError(
            f"bad magic {magic!r} at offset 0 (expected {MODEL_MAGIC!r})"
        )
    (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
    if version != MODEL_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")
    raw = struct.unpack("<8I", _read_exact(f, 32, "config block"))
    kwargs = dict(zip(_CONFIG_FIELDS, (int(v) for v in raw[:7])))
    kwargs["dtype"] = "float32" if raw[7] == 0 else "float64"
    return RdpNetConfig(**kwargs)


def save_model_bytes(net: RdpNet) -> bytes:
    buf = io.BytesIO()
    _write_header(buf, net.config)
    for name, t in net.registry.items():
        write_record(buf, name, t.data)
    for name, arr in net.registry.buffers.items():
        write_record(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(net: RdpNet, path) -> None:
    with open(path, "wb") as f:
        f.write(save_model_bytes(net))


def load_model_stream(f: BinaryIO) -> RdpNet:
    config = _read_header(f)
    records = read_records(f)
    net = RdpNet.build(config, rng=None)
    for name, t in net.registry.items():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        arr = records.pop(name)
        if arr.shape != t.shape:
            raise CheckpointError(
                f"parameter {name!r} shape {arr.shape} does not match config shape {t.shape}"
            )
        t._set_data(arr.astype(net.config.np_dtype, copy=False))
    for name, buf_arr in net.registry.buffers.items():
        if name not in records:
            raise CheckpointError(f"checkpoint is missing buffer {name!r}")
        arr = records.pop(name)
        if arr.shape != buf_arr.shape:
            raise CheckpointError(
                f"buffer {name!r} shape {arr.shape} does not match config shape {buf_arr.shape}"
            )
        buf_arr[...] = arr
    if records:
        extra = sorted(records)[0]
        raise CheckpointError(f"checkpoint carries unknown record {extra!r}")
    return net


def load_checkpoint(path) -> RdpNet:
    with open(path, "rb") as f:
        return load_model_stream(f)
