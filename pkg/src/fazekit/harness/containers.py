"""Binary model and dataset containers (little-endian, versioned).

Model file (``FAZEKIT1``)::

    magic     8s      b"FAZEKIT1"
    version   u32
    hash_len  u16, config hash (utf-8)
    seed      i64
    meta_len  u32, metadata (utf-8 JSON)
    n_tensors u32
    per tensor:
        name_len u16, name (utf-8)
        ndim     u8, dims u32 * ndim
        payload  f32 * prod(dims)

Dataset file (``FAZEDAT1``)::

    magic      8s     b"FAZEDAT1"
    version    u32
    width      u32, height u32
    n_records  u32
    table_len  u32, person table (utf-8 JSON list)
    records    n_records * (person_id u32, gaze f64 * 2, head f64 * 2, pixels f32 * width*height)
"""

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, VersionError

MODEL_MAGIC = b"FAZEKIT1"
DATASET_MAGIC = b"FAZEDAT1"
MODEL_VERSION = 1
DATASET_VERSION = 1


@dataclass
class ModelContainer:
    tensors: dict  # name -> np.ndarray (stored as float32)
    config_hash: str = ""
    seed: int = 0
    metadata: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", offset=self.pos, path=self.path)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def text(self, fmt, what):
        (n,) = self.unpack(fmt, f"{what} length")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid utf-8", offset=start, path=self.path) from None

    def header(self, magic, version, what):
        if self.take(8, "magic") != magic:
            raise FormatError(f"bad magic: not a {what} file", offset=0, path=self.path)
        (v,) = self.unpack("<I", "version")
        if v != version:
            raise VersionError(f"{what} format version {v} is not supported (reader is version {version})",
                               offset=8, path=self.path)

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", offset=self.pos, path=self.path)


def _text(fmt, s):
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _atomic_write(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def model_bytes(container, version=MODEL_VERSION):
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", version))
    buf.write(_text("<H", container.config_hash))
    buf.write(struct.pack("<q", int(container.seed)))
    buf.write(_text("<I", _json(container.metadata)))
    buf.write(struct.pack("<I", len(container.tensors)))
    for name in container.tensors:
        arr = np.asarray(container.tensors[name], dtype="<f4", order="C")  # keeps 0-d shape
        buf.write(_text("<H", name))
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def write_model(path, container):
    _atomic_write(path, model_bytes(container))


def read_model(path):
    r = _Reader(Path(path).read_bytes(), path)
    r.header(MODEL_MAGIC, MODEL_VERSION, "model")
    config_hash = r.text("<H", "config hash")
    (seed,) = r.unpack("<q", "seed")
    meta_start = r.pos
    try:
        metadata = json.loads(r.text("<I", "metadata"))
    except json.JSONDecodeError:
        raise FormatError("metadata is not valid JSON", offset=meta_start, path=path) from None
    (n,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(n):
        name = r.text("<H", "tensor name")
        (ndim,) = r.unpack("<B", "tensor rank")
        shape = r.unpack(f"<{ndim}I", "tensor shape")
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * count, f"tensor '{name}'")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    r.finish()
    return ModelContainer(tensors, config_hash, seed, metadata)


def _record_dtype(width, height):
    return np.dtype([("person", "<u4"), ("gaze", "<f8", (2,)), ("head", "<f8", (2,)),
                     ("pixels", "<f4", (height, width))])


def dataset_bytes(ds, version=DATASET_VERSION):
    from ..synthdata import SyntheticPerson

    n, height, width = ds.images.shape
    if np.any(ds.images < 0) or np.any(ds.images > 1):
        raise FormatError("dataset pixels must lie in [0, 1]")
    table = [p.to_dict() if isinstance(p, SyntheticPerson) else dict(p) for p in ds.persons]
    rec = np.zeros(n, dtype=_record_dtype(width, height))
    rec["person"] = ds.person_ids
    rec["gaze"] = ds.gaze
    rec["head"] = ds.head
    rec["pixels"] = ds.images
    header = DATASET_MAGIC + struct.pack("<IIII", version, width, height, n) + _text("<I", _json(table))
    return header + rec.tobytes()


def write_dataset(path, ds):
    _atomic_write(path, dataset_bytes(ds))


def read_dataset(path):
    from ..synthdata import Dataset, SyntheticPerson

    r = _Reader(Path(path).read_bytes(), path)
    r.header(DATASET_MAGIC, DATASET_VERSION, "dataset")
    width, height, n = r.unpack("<III", "dimensions")
    table_start = r.pos
    try:
        table = json.loads(r.text("<I", "person table"))
    except json.JSONDecodeError:
        raise FormatError("person table is not valid JSON", offset=table_start, path=path) from None
    dtype = _record_dtype(width, height)
    expected = n * dtype.itemsize
    available = len(r.data) - r.pos
    if available != expected:
        raise FormatError(f"header declares {n} records ({expected} bytes) but {available} bytes follow",
                          offset=r.pos, path=path)
    rec = np.frombuffer(r.take(expected, "records"), dtype=dtype)
    images = rec["pixels"].copy()
    if np.any(images < 0) or np.any(images > 1):
        raise FormatError("pixel values outside [0, 1]", offset=r.pos - expected, path=path)
    persons = []
    for p in table:
        try:
            persons.append(SyntheticPerson.from_dict(p))
        except TypeError:
            persons.append(p)
    return Dataset(images, rec["gaze"].copy(), rec["head"].copy(), rec["person"].astype(np.int64), persons)
