"""Binary checkpoint format.

All integers and floats are little-endian::

    magic        4 bytes  b"MDCS"
    version      u32      FORMAT_VERSION
    mode         u32      index into MODE_CODES
    seed         u64
    input_size   u32
    transform    u32      index into TRANSFORM_CODES
    n_blocks     u32
    n_blocks times:
        name_len u32, name (utf-8), ndim u32, dims u32 x ndim,
        values   f64 x prod(dims), row-major

Blocks come in this order: the four normalization arrays
(norm.spatial.mean, norm.spatial.std, norm.frequency.mean,
norm.frequency.std; a branch the mode does not use is still written),
then model parameters in ``DualBranchModel.parameters()`` order, which
ends with the stitch alphas (``stitch<k>.alpha``, four values ordered
rr, rd, dr, dd).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import DualBranchModel, StitchMode, build_model
from .spectral import Branch, BranchStats, Transform
from .training import Normalization

MAGIC = b"MDCS"
FORMAT_VERSION = 1
MODE_CODES = (StitchMode.RGB_ONLY, StitchMode.FREQ_ONLY, StitchMode.NO_STITCH,
              StitchMode.ONE_STITCH, StitchMode.ALL_STITCHES)
TRANSFORM_CODES = (Transform.DCT, Transform.FFT_AMPLITUDE, Transform.DWT_HAAR)
NORM_BLOCKS = ("norm.spatial.mean", "norm.spatial.std", "norm.frequency.mean", "norm.frequency.std")


class CheckpointError(Exception):
    pass


def _block(name: str, values: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(values, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack(f"<I{len(raw)}sI{arr.ndim}I", len(raw), raw, arr.ndim, *arr.shape)
    return head + arr.tobytes()


def dumps(model: DualBranchModel, norm: Normalization) -> bytes:
    blocks = [
        ("norm.spatial.mean", norm.spatial.mean),
        ("norm.spatial.std", norm.spatial.std),
        ("norm.frequency.mean", norm.frequency.mean),
        ("norm.frequency.std", norm.frequency.std),
    ]
    blocks += [(name, p.data) for name, p in model.parameters().items()]
    header = MAGIC + struct.pack(
        "<IIQIII",
        FORMAT_VERSION,
        MODE_CODES.index(model.mode),
        model.seed,
        model.input_size,
        TRANSFORM_CODES.index(norm.transform),
        len(blocks),
    )
    return header + b"".join(_block(n, v) for n, v in blocks)


def save(path: Path | str, model: DualBranchModel, norm: Normalization) -> None:
    Path(path).write_bytes(dumps(model, norm))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def loads(data: bytes) -> tuple[DualBranchModel, Normalization]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    r = _Reader(data)
    r.raw(4)
    version, mode_code, seed, size, transform_code, n_blocks = r.take("<IIQIII")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    try:
        mode = MODE_CODES[mode_code]
        transform = TRANSFORM_CODES[transform_code]
    except IndexError:
        raise CheckpointError(f"unknown mode/transform code {mode_code}/{transform_code}") from None
    blocks: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = r.take("<I")
        name = r.raw(name_len).decode("utf-8")
        (ndim,) = r.take("<I")
        shape = r.take(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        blocks[name] = np.frombuffer(r.raw(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes")

    model = build_model(mode, size, seed)
    params = model.parameters()
    expected = list(NORM_BLOCKS) + list(params)
    if list(blocks) != expected:
        raise CheckpointError("block names do not match the model layout for this mode")
    for name, p in params.items():
        if blocks[name].shape != p.shape:
            raise CheckpointError(f"{name}: shape {blocks[name].shape}, model expects {p.shape}")
        p.data[...] = blocks[name]
    norm = Normalization(
        spatial=BranchStats(blocks["norm.spatial.mean"], blocks["norm.spatial.std"], Branch.SPATIAL),
        frequency=BranchStats(blocks["norm.frequency.mean"], blocks["norm.frequency.std"], Branch.FREQUENCY),
        transform=transform,
    )
    return model, norm


def load(path: Path | str) -> tuple[DualBranchModel, Normalization]:
    return loads(Path(path).read_bytes())


def block_names(data: bytes) -> list[str]:
    """Names of the blocks in a serialized checkpoint, in file order."""
    r = _Reader(data)
    r.raw(4)
    *_, n_blocks = r.take("<IIQIII")
    names = []
    for _ in range(n_blocks):
        (name_len,) = r.take("<I")
        names.append(r.raw(name_len).decode("utf-8"))
        (ndim,) = r.take("<I")
        shape = r.take(f"<{ndim}I")
        r.raw(8 * int(np.prod(shape)))
    return names
