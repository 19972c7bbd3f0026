"""Class-wise FIFO feature banks.

Each in-distribution class owns a fixed-capacity queue of prototype
features. Pushing into a full queue evicts the oldest prototype, so after
``n >= L`` pushes the queue holds exactly the last ``L`` features in
insertion order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, FormatError, UnknownClassError, ValidationError

FLOAT = np.float32
SNAPSHOT_MAGIC = "cfb"
SNAPSHOT_VERSION = "v1"


def as_feature(values, dimension: int | None = None) -> np.ndarray:
    """Validate one feature vector and return it as a float32 array.

    Raises :class:`ValidationError` on wrong dimension, non-finite entries
    or zero norm.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"feature must be 1-D, got shape {arr.shape}")
    if dimension is not None and arr.shape[0] != dimension:
        raise ValidationError(f"feature has dimension {arr.shape[0]}, expected {dimension}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature contains non-finite values")
    out = arr.astype(FLOAT)
    if not np.any(out):
        raise ValidationError("feature has zero norm")
    return out


def format_float(value) -> str:
    """Shortest decimal string that parses back to the same float32."""
    return str(FLOAT(value))


class ClassFeatureBank:
    """Fixed-capacity FIFO queue of prototypes for a single class.

    Storage is a ring buffer; :meth:`as_array` returns the prototypes
    oldest-first, which is also the index order used for k-NN tie-breaking.
    """

    def __init__(self, class_id: int, capacity: int, dimension: int):
        if capacity < 1 or dimension < 1:
            raise ConfigurationError("capacity and dimension must be >= 1")
        self.class_id = int(class_id)
        self.capacity = int(capacity)
        self.dimension = int(dimension)
        self._buf = np.zeros((self.capacity, self.dimension), dtype=FLOAT)
        self._start = 0
        self._len = 0
        self.insert_counter = 0
        self._view = None
        self._view_counter = -1

    def __len__(self):
        return self._len

    @property
    def is_full(self) -> bool:
        return self._len == self.capacity

    def push(self, feature) -> None:
        f = as_feature(feature, self.dimension)
        self._push_valid(f)

    def _push_valid(self, f: np.ndarray) -> None:
        # enqueue then conditional dequeue, done as one step
        if self._len < self.capacity:
            self._buf[(self._start + self._len) % self.capacity] = f
            self._len += 1
        else:
            self._buf[self._start] = f
            self._start = (self._start + 1) % self.capacity
        self.insert_counter += 1

    def as_array(self) -> np.ndarray:
        """Prototypes oldest-first as a read-only ``(n, D)`` float32 array."""
        if self._view_counter != self.insert_counter:
            idx = (self._start + np.arange(self._len)) % self.capacity
            view = self._buf[idx]
            view.setflags(write=False)
            self._view = view
            self._view_counter = self.insert_counter
        return self._view

    def prototypes(self) -> list[np.ndarray]:
        return [row.copy() for row in self.as_array()]

    def copy(self) -> "ClassFeatureBank":
        other = ClassFeatureBank(self.class_id, self.capacity, self.dimension)
        other._buf = self._buf.copy()
        other._start = self._start
        other._len = self._len
        other.insert_counter = self.insert_counter
        return other

    def __repr__(self):
        return (
            f"ClassFeatureBank(class_id={self.class_id}, len={self._len}, "
            f"capacity={self.capacity}, pushes={self.insert_counter})"
        )


class FeatureBankSet:
    """One :class:`ClassFeatureBank` per declared in-distribution class.

    Parameters
    ----------
    num_classes : int
        Number of ID classes. Class ids are ``0 .. num_classes - 1`` unless
        ``class_ids`` is given.
    capacity : int
        Queue length ``L`` shared by all classes.
    dimension : int
        Feature dimension ``D``.
    class_ids : sequence of int, optional
        Explicit, unique class ids.
    """

    def __init__(self, num_classes: int, capacity: int, dimension: int, class_ids: Sequence[int] | None = None):
        if num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")
        if capacity < 1:
            raise ConfigurationError(f"capacity must be >= 1, got {capacity}")
        if dimension < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {dimension}")
        if class_ids is None:
            class_ids = range(num_classes)
        class_ids = [int(c) for c in class_ids]
        if len(class_ids) != num_classes or len(set(class_ids)) != num_classes:
            raise ConfigurationError("class_ids must be unique and match num_classes")
        self.capacity = int(capacity)
        self.dimension = int(dimension)
        self.banks = {c: ClassFeatureBank(c, capacity, dimension) for c in class_ids}

    @property
    def class_ids(self) -> list[int]:
        return list(self.banks)

    @property
    def num_classes(self) -> int:
        return len(self.banks)

    def bank(self, class_id) -> ClassFeatureBank:
        try:
            return self.banks[int(class_id)]
        except (KeyError, TypeError, ValueError):
            raise UnknownClassError(f"unknown class id {class_id!r}") from None

    def push(self, class_id, feature) -> None:
        self.bank(class_id).push(feature)

    def push_many(self, class_ids: Iterable[int], features) -> None:
        """Push rows of ``features`` in order; validates everything first."""
        class_ids = list(class_ids)
        rows = [as_feature(f, self.dimension) for f in features]
        if len(rows) != len(class_ids):
            raise ValidationError("class_ids and features differ in length")
        banks = [self.bank(c) for c in class_ids]
        for b, f in zip(banks, rows):
            b._push_valid(f)

    def is_warm(self) -> bool:
        return all(b.is_full for b in self.banks.values())

    def cold_classes(self) -> list[int]:
        return [c for c, b in self.banks.items() if not b.is_full]

    def prototypes(self, class_id) -> list[np.ndarray]:
        return self.bank(class_id).prototypes()

    def state_key(self) -> tuple:
        """Changes whenever any bank is mutated."""
        return tuple(b.insert_counter for b in self.banks.values())

    def copy(self) -> "FeatureBankSet":
        other = FeatureBankSet.__new__(FeatureBankSet)
        other.capacity = self.capacity
        other.dimension = self.dimension
        other.banks = {c: b.copy() for c, b in self.banks.items()}
        return other

    def snapshot(self) -> "BankSnapshot":
        return BankSnapshot.from_bank_set(self)

    def __repr__(self):
        lens = {c: len(b) for c, b in self.banks.items()}
        return f"FeatureBankSet(capacity={self.capacity}, dimension={self.dimension}, lengths={lens})"


def new_bank_set(num_classes: int, capacity: int, dimension: int) -> FeatureBankSet:
    return FeatureBankSet(num_classes, capacity, dimension)


@dataclass(frozen=True)
class BankSnapshot:
    """Immutable copy of a bank set's full state."""

    capacity: int
    dimension: int
    classes: tuple  # of (class_id, pushes, (n, D) float32 array)

    @classmethod
    def from_bank_set(cls, bank_set: FeatureBankSet) -> "BankSnapshot":
        classes = tuple(
            (c, b.insert_counter, np.array(b.as_array(), copy=True)) for c, b in bank_set.banks.items()
        )
        return cls(bank_set.capacity, bank_set.dimension, classes)

    def restore(self) -> FeatureBankSet:
        ids = [c for c, _, _ in self.classes]
        bank_set = FeatureBankSet(len(ids), self.capacity, self.dimension, class_ids=ids)
        for c, pushes, arr in self.classes:
            bank = bank_set.banks[c]
            for row in arr:
                bank._push_valid(as_feature(row, self.dimension))
            bank.insert_counter = pushes
        return bank_set

    def to_text(self) -> str:
        lines = [
            f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} dim={self.dimension} "
            f"capacity={self.capacity} classes={len(self.classes)}"
        ]
        for c, pushes, arr in self.classes:
            lines.append(f"class {c} len={len(arr)} pushes={pushes}")
            for row in arr:
                lines.append(",".join(format_float(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> "BankSnapshot":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise FormatError("empty snapshot", path=path)
        head = _parse_header(lines[0], SNAPSHOT_MAGIC, ("dim", "capacity", "classes"), 1, path)
        dim, capacity, n_classes = head["dim"], head["capacity"], head["classes"]
        if dim < 1 or capacity < 1 or n_classes < 1:
            raise FormatError("non-positive size in header", line=1, path=path)
        pos = 1
        classes = []
        seen = set()
        for _ in range(n_classes):
            if pos >= len(lines):
                raise FormatError("truncated snapshot: missing class block", line=pos + 1, path=path)
            parts = lines[pos].split()
            if len(parts) not in (3, 4) or parts[0] != "class":
                raise FormatError(f"expected 'class <id> len=<n>', got {lines[pos]!r}", line=pos + 1, path=path)
            try:
                cid = int(parts[1])
                kv = dict(p.split("=", 1) for p in parts[2:])
                n = int(kv.pop("len"))
                pushes = int(kv.pop("pushes", n))
            except (ValueError, KeyError):
                raise FormatError(f"bad class line {lines[pos]!r}", line=pos + 1, path=path) from None
            if kv or cid in seen or not 0 <= n <= capacity or pushes < n:
                raise FormatError(f"inconsistent class line {lines[pos]!r}", line=pos + 1, path=path)
            seen.add(cid)
            pos += 1
            if pos + n > len(lines):
                raise FormatError(f"truncated snapshot: class {cid} expects {n} rows", line=len(lines), path=path)
            rows = np.empty((n, dim), dtype=FLOAT)
            for i in range(n):
                rows[i] = _parse_float_row(lines[pos], dim, pos + 1, path)
                pos += 1
            classes.append((cid, pushes, rows))
        if pos != len(lines):
            raise FormatError("trailing data after last class block", line=pos + 1, path=path)
        return cls(capacity, dim, tuple(classes))

    def save(self, path) -> None:
        atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path) -> "BankSnapshot":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        return cls.from_text(text, path=path)


def snapshot(bank_set: FeatureBankSet) -> BankSnapshot:
    return BankSnapshot.from_bank_set(bank_set)


def restore(snap: BankSnapshot) -> FeatureBankSet:
    return snap.restore()


def _parse_header(line, magic, keys, lineno, path):
    parts = line.split()
    if len(parts) != 2 + len(keys) or parts[0] != magic:
        raise FormatError(f"bad header {line!r}", line=lineno, path=path)
    if parts[1] != SNAPSHOT_VERSION:
        raise FormatError(f"unsupported version {parts[1]!r}", line=lineno, path=path)
    out = {}
    for part, key in zip(parts[2:], keys):
        name, _, val = part.partition("=")
        if name != key:
            raise FormatError(f"expected {key}=..., got {part!r}", line=lineno, path=path)
        try:
            out[key] = int(val)
        except ValueError:
            raise FormatError(f"bad integer in {part!r}", line=lineno, path=path) from None
    return out


def _parse_float_row(line, dim, lineno, path):
    fields = line.split(",")
    if len(fields) != dim:
        raise FormatError(f"expected {dim} values, got {len(fields)}", line=lineno, path=path)
    try:
        row = np.array([float(x) for x in fields], dtype=np.float64)
    except ValueError:
        raise FormatError("bad float value", line=lineno, path=path) from None
    if not np.all(np.isfinite(row)):
        raise FormatError("non-finite value", line=lineno, path=path)
    row = row.astype(FLOAT)
    if not np.any(row):
        raise FormatError("zero-norm feature", line=lineno, path=path)
    return row


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it in place."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
