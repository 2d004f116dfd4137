"""Binary checkpoint format.

Layout (all integers little-endian):

    b"SSIT"  u32 version  u32 record count
    record*: u32 name length, name (UTF-8), u32 rank, u32 extent * rank, float32 payload
    u32 3, b"rng", u64 seed, u64 step, u64 generator Adam count, u64 discriminator Adam count
    u32 config length, config echo (UTF-8 JSON)
"""

import logging
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Dict

import numpy as np

from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"SSIT"
FORMAT_VERSION = 1
RNG_RECORD = b"rng"

PARAM_PREFIX = "param/"
GEN_OPT_PREFIX = "adam_g/"
DIS_OPT_PREFIX = "adam_d/"


@dataclass
class Checkpoint:
    """Parameters, optimizer state, RNG position and the config that produced them."""
    step: int
    seed: int
    params: Dict[str, np.ndarray]
    gen_opt: Dict[str, np.ndarray] = field(default_factory=dict)
    dis_opt: Dict[str, np.ndarray] = field(default_factory=dict)
    gen_opt_t: int = 0
    dis_opt_t: int = 0
    config_echo: str = "{}"
    version: int = FORMAT_VERSION

    def records(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        out.update((PARAM_PREFIX + k, v) for k, v in self.params.items())
        out.update((GEN_OPT_PREFIX + k, v) for k, v in self.gen_opt.items())
        out.update((DIS_OPT_PREFIX + k, v) for k, v in self.dis_opt.items())
        return out


def _write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def _write_bytes(f: BinaryIO, data: bytes) -> None:
    _write_u32(f, len(data))
    f.write(data)


def save_checkpoint(path: str, ckpt: Checkpoint) -> str:
    """Write `ckpt` to `path`, replacing any existing file atomically."""
    records = ckpt.records()
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            _write_u32(f, ckpt.version)
            _write_u32(f, len(records))
            for name, array in records.items():
                _write_bytes(f, name.encode("utf-8"))
                _write_u32(f, array.ndim)
                for extent in array.shape:
                    _write_u32(f, extent)
                f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
            _write_bytes(f, RNG_RECORD)
            f.write(struct.pack("<QQQQ", ckpt.seed, ckpt.step, ckpt.gen_opt_t, ckpt.dis_opt_t))
            _write_bytes(f, ckpt.config_echo.encode("utf-8"))
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"could not write checkpoint {path}: {e}") from e
    logger.info("Saved checkpoint at step %d to %s", ckpt.step, path)
    return path


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{self.path}: invalid UTF-8 at byte {self.pos}") from e


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise OSError(f"could not read checkpoint {path}: {e}") from e
    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")

    params: Dict[str, np.ndarray] = {}
    gen_opt: Dict[str, np.ndarray] = {}
    dis_opt: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.text()
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        for prefix, target in ((PARAM_PREFIX, params), (GEN_OPT_PREFIX, gen_opt), (DIS_OPT_PREFIX, dis_opt)):
            if name.startswith(prefix):
                target[name[len(prefix):]] = array
                break
        else:
            raise CheckpointError(f"{path}: unknown record {name!r}")

    if reader.text().encode("utf-8") != RNG_RECORD:
        raise CheckpointError(f"{path}: missing rng record")
    seed, step, gen_t, dis_t = struct.unpack("<QQQQ", reader.take(32))
    config_echo = reader.text()
    if reader.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - reader.pos} trailing bytes")
    return Checkpoint(
        step=step, seed=seed, params=params, gen_opt=gen_opt, dis_opt=dis_opt,
        gen_opt_t=gen_t, dis_opt_t=dis_t, config_echo=config_echo, version=version,
    )
