"""Binary checkpoint format and content hashing.

Layout (all integers little-endian):

    magic  "DAUN" (4 bytes)
    u32    format version
    u32    header length, then that many bytes of JSON (config echo, epoch,
           metrics snapshot, optimizer step count)
    u32    tensor count
    per tensor:
        u32  name length, name bytes (utf-8)
        u32  rank
        u64  dims[rank]
        f64  data (row-major, little-endian)

Tensors cover parameters, batchnorm running stats, and (optionally) Adam
moments under adam.m. / adam.v. prefixes. The JSON header is serialized with
sorted keys so identical state produces identical bytes.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

MAGIC = b"DAUN"
VERSION = 1


class CheckpointError(ValueError):
    """Structured checkpoint failure: bad magic/version, truncation, shape drift."""


@dataclass
class Checkpoint:
    header: dict
    tensors: dict = field(default_factory=dict)  # name -> float64 ndarray

    @property
    def version(self):
        return self.header["version"]


def gather_state(model, adam=None, epoch=0, metrics=None):
    """Collect a model's (and optionally optimizer's) state into a Checkpoint."""
    header = {
        "version": VERSION,
        "model_config": asdict(model.cfg),
        "epoch": int(epoch),
        "metrics": metrics or {},
        "adam_t": None if adam is None else int(adam.t),
    }
    tensors = {}
    for name, p in model.named_parameters():
        tensors[name] = p.data.copy()
    for name, b in model.named_buffers():
        tensors[name] = np.asarray(b, dtype=np.float64).copy()
    if adam is not None:
        for name, m in adam.m.items():
            tensors["adam.m." + name] = m.copy()
        for name, v in adam.v.items():
            tensors["adam.v." + name] = v.copy()
    return Checkpoint(header=header, tensors=tensors)


def checkpoint_bytes(ckpt):
    header_json = json.dumps(ckpt.header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header_json)), header_json,
           struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        nb = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8", order="C")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(ckpt, path):
    data = checkpoint_bytes(ckpt)
    with open(path, "wb") as f:
        f.write(data)
    return path


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, str(path))
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}, expected {VERSION}")
    header_len = r.u32("header length")
    try:
        header = json.loads(r.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt JSON header: {e}") from e
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        name_len = r.u32(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8")
        rank = r.u32(f"tensor {name} rank")
        if rank > 4:
            raise CheckpointError(f"{path}: tensor {name} has rank {rank} > 4")
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank, f"tensor {name} dims"))
        n_elem = int(np.prod(dims)) if rank else 1
        raw = r.take(8 * n_elem, f"tensor {name} data")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes after tensor data")
    return Checkpoint(header=header, tensors=tensors)


def restore_model(ckpt, model, strict_config=True):
    """Copy checkpoint tensors into a built model, validating names and shapes."""
    if strict_config:
        want = asdict(model.cfg)
        got = ckpt.header.get("model_config")
        if got != want:
            raise CheckpointError(
                f"checkpoint model_config {got} does not match target model {want}")
    for name, p in model.named_parameters():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint missing parameter {name}")
        arr = ckpt.tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for parameter {name}: checkpoint {arr.shape}, model {p.data.shape}")
        p.data[...] = arr
    for name, b in model.named_buffers():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint missing buffer {name}")
        arr = ckpt.tensors[name]
        if arr.shape != b.shape:
            raise CheckpointError(
                f"shape mismatch for buffer {name}: checkpoint {arr.shape}, model {b.shape}")
        b[...] = arr
    return model


def restore_adam(ckpt, adam):
    """Copy adam.m./adam.v. tensors and the step count into an Adam instance."""
    if ckpt.header.get("adam_t") is None:
        raise CheckpointError("checkpoint holds no optimizer state")
    adam.t = int(ckpt.header["adam_t"])
    for name in adam.m:
        mk, vk = "adam.m." + name, "adam.v." + name
        if mk not in ckpt.tensors or vk not in ckpt.tensors:
            raise CheckpointError(f"checkpoint missing optimizer state for {name}")
        adam.m[name][...] = ckpt.tensors[mk]
        adam.v[name][...] = ckpt.tensors[vk]
    return adam


def blob_sha1(data):
    """Git-style content hash: sha1 of 'blob <len>\\0' + bytes."""
    h = hashlib.sha1()
    h.update(f"blob {len(data)}\0".encode("ascii"))
    h.update(data)
    return h.hexdigest()


def checkpoint_file_hash(path):
    with open(path, "rb") as f:
        return blob_sha1(f.read())
