"""Binary weight/gradient formats, dataset CSV, run configuration and reports.

WTS1 layout (all integers u32 little-endian, floats f64 little-endian)::

    b"WTS1" | count | { name_len | name (utf-8) | ndims | dims[ndims] | payload }*

GRD1 layout::

    b"GRD1" | K | N | K*N floats, row-major
"""

from __future__ import annotations

import csv
import dataclasses
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

WTS_MAGIC = b"WTS1"
GRD_MAGIC = b"GRD1"

_U32 = struct.Struct("<I")
_F64 = np.dtype("<f8")

METHODS = ("mp", "wfs", "cbs-s", "cbs")
LOSS_EVAL_MODES = ("surrogate", "network")
REPORT_HEADER = ("method", "sparsity", "seed", "surrogate_loss", "accuracy", "runtime_s")


@dataclass
class Tensor:
    name: str
    shape: tuple[int, ...]
    data: np.ndarray  # flat, float64, row-major

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


class WeightStore:
    """Ordered named tensors with a canonical flattening into one vector.

    Global index ``i`` enumerates tensors in store order and elements
    row-major within each tensor.
    """

    def __init__(self, tensors):
        tensors = [
            Tensor(name, tuple(int(d) for d in shape), np.ascontiguousarray(data, dtype=np.float64).reshape(-1))
            for name, shape, data in (
                (t.name, t.shape, t.data) if isinstance(t, Tensor) else t for t in tensors
            )
        ]
        if not tensors:
            raise FormatError("no tensors")
        names = set()
        for t in tensors:
            if any(d <= 0 for d in t.shape):
                raise FormatError(f"tensor {t.name!r} has a non-positive dimension {t.shape}")
            if t.data.size != t.size:
                raise FormatError(f"tensor {t.name!r}: {t.data.size} values for shape {t.shape}")
            if not np.all(np.isfinite(t.data)):
                raise FormatError(f"tensor {t.name!r} contains non-finite values")
            if t.name in names:
                raise FormatError(f"duplicate tensor name {t.name!r}")
            names.add(t.name)
        self.tensors = tensors
        sizes = [t.size for t in tensors]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self._by_name = {t.name: k for k, t in enumerate(tensors)}

    @property
    def n(self) -> int:
        return int(self.offsets[-1])

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def __len__(self):
        return len(self.tensors)

    def __getitem__(self, name) -> np.ndarray:
        t = self.tensors[self._by_name[name]]
        return t.data.reshape(t.shape)

    def __eq__(self, other):
        if not isinstance(other, WeightStore) or len(self) != len(other):
            return NotImplemented if not isinstance(other, WeightStore) else False
        return all(
            a.name == b.name and a.shape == b.shape and np.array_equal(a.data, b.data)
            for a, b in zip(self.tensors, other.tensors)
        )

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data for t in self.tensors])

    def unflatten(self, vector) -> "WeightStore":
        """New store with the same layout holding ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {vector.shape}")
        return WeightStore(
            [(t.name, t.shape, vector[a:b].copy()) for t, a, b in zip(self.tensors, self.offsets[:-1], self.offsets[1:])]
        )

    def global_index(self, name: str, index=0) -> int:
        """Flat index of element ``index`` (int offset or multi-index) of tensor ``name``."""
        k = self._by_name[name]
        t = self.tensors[k]
        offset = index if isinstance(index, (int, np.integer)) else int(np.ravel_multi_index(tuple(index), t.shape))
        if not 0 <= offset < t.size:
            raise IndexError(f"offset {offset} out of range for tensor {name!r}")
        return int(self.offsets[k] + offset)

    def locate(self, i: int) -> tuple[str, int]:
        """Inverse of :meth:`global_index`: ``(tensor name, offset)``."""
        if not 0 <= i < self.n:
            raise IndexError(f"global index {i} out of range [0, {self.n})")
        k = int(np.searchsorted(self.offsets, i, side="right") - 1)
        return self.tensors[k].name, int(i - self.offsets[k])

    def tensor_ranges(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def layer_ranges(self) -> list[tuple[int, int]]:
        """Flat ranges grouping consecutive tensors that share a name prefix (``fc1.weight``, ``fc1.bias``)."""
        ranges, prev = [], None
        for t, (a, b) in zip(self.tensors, self.tensor_ranges()):
            prefix = t.name.rsplit(".", 1)[0] if "." in t.name else None
            if ranges and prefix is not None and prefix == prev:
                ranges[-1] = (ranges[-1][0], b)
            else:
                ranges.append((a, b))
            prev = prefix
        return ranges

    def with_zeros(self, indices) -> "WeightStore":
        w = self.flatten()
        w[np.asarray(indices, dtype=np.intp)] = 0.0
        return self.unflatten(w)


def save_weight_store(store: WeightStore, path) -> None:
    chunks = [WTS_MAGIC, _U32.pack(len(store.tensors))]
    for t in store.tensors:
        name = t.name.encode("utf-8")
        chunks.append(_U32.pack(len(name)))
        chunks.append(name)
        chunks.append(_U32.pack(len(t.shape)))
        chunks.extend(_U32.pack(d) for d in t.shape)
        chunks.append(t.data.astype(_F64, copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated payload reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def floats(self, count: int, what: str) -> np.ndarray:
        start = self.pos
        values = np.frombuffer(self.take(8 * count, what), dtype=_F64).astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise FormatError(f"non-finite value in {what}", start + 8 * int(bad[0]))
        return values


def load_weight_store(path) -> WeightStore:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != WTS_MAGIC:
        raise FormatError("bad magic, expected WTS1", 0)
    count = r.u32("tensor count")
    if count == 0:
        raise FormatError("no tensors", 4)
    tensors = []
    for _ in range(count):
        at = r.pos
        name_len = r.u32("name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not valid utf-8", at + 4) from exc
        ndims = r.u32("ndims")
        dims_at = r.pos
        dims = [r.u32("dims") for _ in range(ndims)]
        if ndims == 0 or any(d == 0 for d in dims):
            raise FormatError(f"tensor {name!r} has empty shape {dims}", dims_at)
        data = r.floats(math.prod(dims), f"payload of tensor {name!r}")
        tensors.append((name, dims, data))
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after last tensor", r.pos)
    return WeightStore(tensors)


@dataclass
class GradientMatrix:
    """K per-sample flattened loss gradients, one per row."""

    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise FormatError(f"gradient matrix must be 2-D, got shape {self.rows.shape}")
        if self.rows.shape[0] < 1:
            raise FormatError("no samples")
        if not np.all(np.isfinite(self.rows)):
            raise FormatError("gradient matrix contains non-finite entries")

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]


def save_gradient_matrix(grads: GradientMatrix, path) -> None:
    header = GRD_MAGIC + _U32.pack(grads.k) + _U32.pack(grads.n)
    Path(path).write_bytes(header + grads.rows.astype(_F64, copy=False).tobytes())


def load_gradient_matrix(path, expected_n: int | None = None) -> GradientMatrix:
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != GRD_MAGIC:
        raise FormatError("bad magic, expected GRD1", 0)
    k = r.u32("K")
    n = r.u32("N")
    if k == 0:
        raise FormatError("no samples", 4)
    if n == 0:
        raise FormatError("zero-length gradient rows", 8)
    if expected_n is not None and n != expected_n:
        raise FormatError(f"gradient rows have length {n}, expected {expected_n}", 8)
    data = r.floats(k * n, "gradient payload")
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after gradient payload", r.pos)
    return GradientMatrix(data.reshape(k, n))


# --- datasets ---------------------------------------------------------------

def save_dataset_csv(inputs, labels, path) -> None:
    inputs = np.asarray(inputs, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{c}" for c in range(inputs.shape[1])] + ["label"])
        for row, label in zip(inputs, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read feature columns followed by an integer label column.

    A header row is optional and detected by a non-numeric first cell.
    """
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise FormatError(f"{path}: non-numeric value on line {lineno}") from None
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    width = {len(r) for r in rows}
    if len(width) != 1 or width.pop() < 2:
        raise FormatError(f"{path}: rows must all have at least 2 and the same number of columns")
    table = np.asarray(rows)
    labels = table[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise FormatError(f"{path}: label column must hold non-negative integers")
    return table[:, :-1], labels.astype(np.int64)


# --- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    sparsity: float = 0.5
    method: str = "cbs-s"
    seed: int = 0
    # local search
    epsilon: float = 1e-4
    tau: int = 20
    rho: int = 10
    steps_max: int = 50
    noimp_max: int = 5
    # constructive
    buckets: int = 64
    samples: int = 16
    # fisher
    k: int = 200
    damping: float = 1e-4
    block_size: int = 0
    loss_eval: str = "surrogate"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.sparsity <= 1.0:
            raise ValueError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.loss_eval not in LOSS_EVAL_MODES:
            raise ValueError(f"unknown loss-eval mode {self.loss_eval!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.damping > 0:
            raise ValueError("damping must be positive")
        for name in ("tau", "rho", "steps_max", "noimp_max", "buckets", "samples", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        if self.block_size < 0:
            raise ValueError("block_size must be >= 0 (0 = one block per layer)")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict, base: "RunConfig | None" = None) -> "RunConfig":
        """Overlay ``values`` (strings or typed) on ``base``; unknown keys raise."""
        base = base or cls()
        fields = {f.name: f for f in dataclasses.fields(cls)}
        changes = {}
        for key, value in values.items():
            name = key.strip().replace("-", "_")
            if name not in fields:
                raise ValueError(f"unknown configuration key {key!r}")
            if value is None:
                continue
            kind = type(getattr(base, name))
            changes[name] = kind(value) if not isinstance(value, str) or kind is str else _parse_scalar(value, kind)
        return dataclasses.replace(base, **changes)


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is int:
        return int(float(text)) if "e" in text.lower() else int(text)
    return kind(text)


def read_config_file(path) -> dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


# --- reports ----------------------------------------------------------------

@dataclass(order=True)
class ComparisonRecord:
    method: str
    sparsity: float
    seed: int
    surrogate_loss: float = field(compare=False)
    accuracy: float = field(compare=False)
    runtime_s: float = field(compare=False)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.surrogate_loss < -1e-10:
            raise ValueError(f"negative surrogate loss {self.surrogate_loss}")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_report(records, path, summary_rows=()) -> None:
    """Write records sorted by (method, sparsity, seed), then any summary rows verbatim."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for rec in sorted(records):
            writer.writerow([_fmt(getattr(rec, col)) for col in REPORT_HEADER])
        for row in summary_rows:
            writer.writerow([_fmt(v) for v in row])
