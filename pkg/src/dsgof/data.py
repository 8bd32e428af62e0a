"""Study tables: CSV ingestion, bundled datasets, serialization."""
from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .families import Family, InvalidObservation, Observation, family_of

DATA_ENV = "DSGOF_DATA_DIR"

# default family for each known dataset name
KNOWN_DATASETS = {
    "shipyard": Family.BINOMIAL,
    "rat": Family.BINOMIAL,
    "terbinafine": Family.BINOMIAL,
    "tacks": Family.BINOMIAL,
    "surgical": Family.BINOMIAL,
    "insurance": Family.POISSON,
    "butterfly": Family.POISSON,
    "child_illness": Family.POISSON,
    "norberg": Family.POISSON,
    "arsenic": Family.NORMAL,
    "arsenic_printed": Family.NORMAL,
    "ulcer": Family.NORMAL,
    "galaxy": Family.NORMAL,
}

_SIZE_NAMES = {
    Family.BINOMIAL: ("n", "trials", "size"),
    Family.NORMAL: ("se", "s", "sd", "sigma", "uncertainty"),
    Family.POISSON: ("exposure", "e"),
    Family.EXPONENTIAL: (),
}


class IngestError(ValueError):
    """Malformed or invalid input table."""


@dataclass(frozen=True)
class StudyTable:
    """Observed panel for one family.

    ``size`` is n (binomial), s (normal) or exposure E (poisson); it is
    ``None`` for the exponential family.
    """

    family: Family
    y: np.ndarray
    size: Optional[np.ndarray] = None
    name: Optional[str] = None
    size_label: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "y", y)
        kern = family_of(fam)
        if fam is Family.EXPONENTIAL:
            if self.size is not None:
                raise InvalidObservation("exponential tables take no size column")
        else:
            size = kern.default_size(y) if self.size is None else np.asarray(self.size, dtype=float).reshape(-1)
            if size.shape != y.shape:
                raise InvalidObservation("y and size lengths differ")
            object.__setattr__(self, "size", size)
        if y.size < 1:
            raise InvalidObservation("a study table needs at least one row")
        kern.validate(y, self.sizes)

    @property
    def k(self) -> int:
        return self.y.size

    @property
    def sizes(self) -> np.ndarray:
        return np.ones_like(self.y) if self.size is None else self.size

    def __len__(self) -> int:
        return self.k

    def rows(self) -> list[Observation]:
        if self.size is None:
            return [Observation(float(v)) for v in self.y]
        return [Observation(float(a), float(b)) for a, b in zip(self.y, self.size)]

    def collapse(self):
        """Distinct (y, size) pairs with multiplicities and the row -> pair index."""
        pairs = np.stack([self.y, self.sizes], axis=1)
        uniq, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
        return uniq[:, 0], uniq[:, 1], counts.astype(float), inverse.reshape(-1)

    def with_y(self, y) -> "StudyTable":
        return StudyTable(self.family, y, self.size, self.name, self.size_label)

    def subset(self, idx) -> "StudyTable":
        size = None if self.size is None else self.size[idx]
        return StudyTable(self.family, self.y[idx], size, self.name, self.size_label)

    # serialization --------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        label = self.size_label or _default_size_label(self.family)
        if self.size is None:
            w.writerow(["y"])
            w.writerows([[repr(float(v))] for v in self.y])
        else:
            w.writerow(["y", label])
            w.writerows([[repr(float(a)), repr(float(b))] for a, b in zip(self.y, self.size)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.family.value.encode())
        h.update(self.y.tobytes())
        h.update(self.sizes.tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "name": self.name,
            "y": self.y.tolist(),
            "size": None if self.size is None else self.size.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyTable":
        return cls(d["family"], d["y"], d.get("size"), d.get("name"))


def _default_size_label(family: Family) -> Optional[str]:
    return {Family.BINOMIAL: "n", Family.NORMAL: "se", Family.POISSON: "exposure"}.get(family)


def _num(value: str, col: str, lineno: int) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise IngestError(f"line {lineno}: column {col!r} is not numeric: {value!r}") from None


def ingest(source, family, columns: Optional[dict] = None, exposure_col: Optional[str] = None,
           name: Optional[str] = None) -> StudyTable:
    """Read a CSV file (path or text stream) into a validated StudyTable.

    ``columns`` maps roles ``y``, ``size`` and ``count`` to header names.
    A ``count`` column turns histogram rows ``(y, count)`` into ``count``
    repeated rows.  Headers are matched case-insensitively.
    """
    fam = Family.parse(family)
    columns = dict(columns or {})
    if exposure_col:
        columns["size"] = exposure_col
    if hasattr(source, "read"):
        text = source.read()
        label = name
    else:
        p = Path(source)
        text = p.read_text()
        label = name or p.stem
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input") from None
    norm = [h.strip().lower() for h in header]

    def find(role, candidates, required):
        if role in columns:
            want = columns[role].strip().lower()
            if want not in norm:
                raise IngestError(f"missing column {columns[role]!r} (header: {header})")
            return norm.index(want)
        for c in candidates:
            if c in norm:
                return norm.index(c)
        if required:
            raise IngestError(f"missing {role} column; expected one of {list(candidates)} (header: {header})")
        return None

    iy = find("y", ("y", "x", "claims"), True)
    isz = find("size", _SIZE_NAMES[fam], fam in (Family.BINOMIAL, Family.NORMAL))
    if fam is Family.EXPONENTIAL and isz is not None:
        raise IngestError("exponential family takes no size column")
    icount = find("count", ("count", "freq", "frequency"), False)

    ys, sizes = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        y = _num(row[iy], header[iy], lineno)
        s = _num(row[isz], header[isz], lineno) if isz is not None else None
        reps = 1
        if icount is not None:
            c = _num(row[icount], header[icount], lineno)
            if c < 0 or c != int(c):
                raise IngestError(f"line {lineno}: count must be a non-negative integer")
            reps = int(c)
        try:
            family_of(fam).validate(np.array([y]), np.array([1.0 if s is None else s]))
        except InvalidObservation as exc:
            raise IngestError(f"line {lineno}: {str(exc).split(': ', 1)[-1]}") from None
        ys.extend([y] * reps)
        sizes.extend([s] * reps)
    if not ys:
        raise IngestError("no data rows")
    size = None if isz is None else np.array(sizes)
    if fam is Family.POISSON and size is None:
        size = np.ones(len(ys))
    size_label = header[isz].strip().lower() if isz is not None else None
    return StudyTable(fam, np.array(ys), size, label, size_label)


def dataset_path(name: str) -> Path:
    """Locate ``<name>.csv``: ``$DSGOF_DATA_DIR`` first, then bundled files."""
    fname = f"{name}.csv"
    env = os.environ.get(DATA_ENV)
    if env:
        p = Path(env) / fname
        if p.is_file():
            return p
    bundled = resources.files("dsgof") / "datasets" / fname
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(
        f"dataset {name!r} is not bundled; put {fname} in a directory named by ${DATA_ENV}"
    )


def load_dataset(name: str, family=None) -> StudyTable:
    fam = Family.parse(family) if family is not None else KNOWN_DATASETS.get(name)
    if fam is None:
        raise ValueError(f"unknown dataset {name!r}; pass a family")
    return ingest(dataset_path(name), fam, name=name)


def bundled_datasets() -> list[str]:
    root = resources.files("dsgof") / "datasets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".csv"))
