"""Embedding record files (ERF).

Text format, UTF-8::

    erf v1 dim=<D>
    <record_id>,<role>,<class_id>,<confidence>,<gt_ood>,<f_1>,...,<f_D>

``role`` is ``labeled`` or ``pseudo``; ``class_id`` is the true class for
labeled rows and the predicted class (or -1 if none) for pseudo rows;
``gt_ood`` is 0 (ID), 1 (OOD) or -1 (unknown). Feature values are written
as the shortest decimal that round-trips a float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bank import FLOAT, atomic_write_text, format_float
from .exceptions import FormatError
from .filtering import PseudoPrediction

ROLES = ("labeled", "pseudo")
GT_CODES = {0: "id", 1: "ood", -1: "unknown"}
N_META = 5


@dataclass
class ErfRecord:
    record_id: str
    role: str
    class_id: int
    confidence: float
    gt_ood: int
    feature: np.ndarray = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, ErfRecord):
            return NotImplemented
        return (
            (self.record_id, self.role, self.class_id, self.confidence, self.gt_ood)
            == (other.record_id, other.role, other.class_id, other.confidence, other.gt_ood)
            and np.array_equal(self.feature, other.feature)
        )


@dataclass
class ErfDataset:
    dimension: int
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def labeled(self) -> list[ErfRecord]:
        return [r for r in self.records if r.role == "labeled"]

    def pseudo(self) -> list[ErfRecord]:
        return [r for r in self.records if r.role == "pseudo"]

    def features(self, records=None) -> np.ndarray:
        records = self.records if records is None else records
        if not records:
            return np.zeros((0, self.dimension), dtype=FLOAT)
        return np.stack([r.feature for r in records])

    def predictions(self) -> list[PseudoPrediction]:
        return [
            PseudoPrediction(r.record_id, r.feature, r.class_id, r.confidence, gt_ood=GT_CODES[r.gt_ood])
            for r in self.pseudo()
        ]


def format_record(r: ErfRecord) -> str:
    meta = [r.record_id, r.role, str(r.class_id), repr(float(r.confidence)), str(r.gt_ood)]
    return ",".join(meta + [format_float(v) for v in r.feature])


def dumps(ds: ErfDataset) -> str:
    return "".join([f"erf v1 dim={ds.dimension}\n"] + [format_record(r) + "\n" for r in ds.records])


def write_erf(path, ds: ErfDataset) -> None:
    atomic_write_text(path, dumps(ds))


def loads(text: str, path=None) -> ErfDataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file, expected 'erf v1 dim=<D>' header", line=1, path=path)
    head = lines[0].split()
    if len(head) != 3 or head[0] != "erf" or head[1] != "v1" or not head[2].startswith("dim="):
        raise FormatError(f"bad header {lines[0]!r}, expected 'erf v1 dim=<D>'", line=1, path=path)
    try:
        dim = int(head[2][4:])
    except ValueError:
        raise FormatError("dimension is not an integer", line=1, column=3, path=path) from None
    if dim < 1:
        raise FormatError("dimension must be >= 1", line=1, column=3, path=path)
    ds = ErfDataset(dim)
    seen = set()
    for n, line in enumerate(lines[1:], start=2):
        ds.records.append(_parse_row(line, dim, n, path, seen))
    return ds


def _parse_row(line, dim, n, path, seen):
    fields = line.split(",")
    if len(fields) != N_META + dim:
        raise FormatError(f"expected {N_META + dim} fields ({dim} feature values), got {len(fields)}", line=n, path=path)
    rid, role, cls, conf, gt = fields[:N_META]
    if not rid or any(ch.isspace() for ch in rid):
        raise FormatError(f"bad record id {rid!r}", line=n, column=1, path=path)
    if rid in seen:
        raise FormatError(f"duplicate record id {rid!r}", line=n, column=1, path=path)
    seen.add(rid)
    if role not in ROLES:
        raise FormatError(f"role must be one of {ROLES}, got {role!r}", line=n, column=2, path=path)
    try:
        class_id = int(cls)
    except ValueError:
        raise FormatError(f"class id {cls!r} is not an integer", line=n, column=3, path=path) from None
    if class_id < -1:
        raise FormatError(f"class id must be >= -1, got {class_id}", line=n, column=3, path=path)
    try:
        confidence = float(conf)
    except ValueError:
        raise FormatError(f"confidence {conf!r} is not a number", line=n, column=4, path=path) from None
    if not (math.isfinite(confidence) and 0.0 <= confidence <= 1.0):
        raise FormatError(f"confidence must lie in [0, 1], got {conf}", line=n, column=4, path=path)
    try:
        gt_ood = int(gt)
    except ValueError:
        gt_ood = None
    if gt_ood not in GT_CODES:
        raise FormatError(f"gt_ood must be 0, 1 or -1, got {gt!r}", line=n, column=5, path=path)
    if role == "labeled" and (class_id < 0 or gt_ood != 0):
        raise FormatError("labeled rows need class_id >= 0 and gt_ood = 0", line=n, path=path)
    values = np.empty(dim)
    for j, raw in enumerate(fields[N_META:]):
        try:
            values[j] = float(raw)
        except ValueError:
            raise FormatError(f"bad float {raw!r}", line=n, column=N_META + j + 1, path=path) from None
        if not math.isfinite(values[j]):
            raise FormatError(f"non-finite value {raw!r}", line=n, column=N_META + j + 1, path=path)
    feature = values.astype(FLOAT)
    if not np.any(feature):
        raise FormatError("zero-norm feature", line=n, path=path)
    return ErfRecord(rid, role, class_id, confidence, gt_ood, feature)


def parse_erf(path) -> ErfDataset:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), path=path)


def from_stream(stream, roles=("labeled",), epoch=None) -> ErfDataset:
    """Convert generated stream records to an ERF dataset.

    Labeled and stream records become ``labeled`` rows; unlabeled records
    become ``pseudo`` rows with class -1 and confidence 0 (no prediction yet)
    and their ground-truth OOD flag.
    """
    ds = ErfDataset(stream.config.dimension)
    for i, rid in enumerate(stream.record_ids):
        role = stream.roles[i]
        if role not in roles or (epoch is not None and stream.epochs[i] != epoch):
            continue
        if role in ("labeled", "stream", "test"):
            ds.records.append(ErfRecord(rid, "labeled", int(stream.class_id[i]), 1.0, 0, stream.features[i]))
        else:
            gt = 1 if stream.class_id[i] < 0 else 0
            ds.records.append(ErfRecord(rid, "pseudo", -1, 0.0, gt, stream.features[i]))
    return ds
