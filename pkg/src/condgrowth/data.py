"""Longitudinal measurement containers and their CSV form."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

__all__ = [
    "Measurement",
    "Subject",
    "LongitudinalDataset",
    "DataFormatError",
    "CSV_HEADER",
    "read_longitudinal_csv",
    "write_longitudinal_csv",
    "format_number",
    "atomic_write_text",
    "csv_text",
]

CSV_HEADER = ("subject", "t", "w", "h")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Measurement:
    t: float
    w: float
    h: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t >= 0):
            raise ValueError(f"age must be a finite non-negative number, got {self.t}")
        if not (math.isfinite(self.w) and self.w > 0):
            raise ValueError(f"weight must be positive, got {self.w}")
        if self.h is not None and not (math.isfinite(self.h) and self.h > 0):
            raise ValueError(f"height must be positive when present, got {self.h}")


@dataclass(frozen=True)
class Subject:
    id: str
    measurements: tuple[Measurement, ...]

    def __post_init__(self):
        ms = tuple(self.measurements)
        for j in range(1, len(ms)):
            if not ms[j].t > ms[j - 1].t:
                raise ValueError(
                    f"subject {self.id!r}: ages must be strictly increasing "
                    f"(visit {j}: {ms[j].t} after {ms[j - 1].t})"
                )
        object.__setattr__(self, "measurements", ms)

    def __len__(self) -> int:
        return len(self.measurements)


@dataclass(frozen=True)
class LongitudinalDataset:
    subjects: tuple[Subject, ...] = ()

    def __post_init__(self):
        subjects = tuple(self.subjects)
        ids = [s.id for s in subjects]
        if len(set(ids)) != len(ids):
            raise ValueError("subject ids must be unique")
        object.__setattr__(self, "subjects", subjects)

    def __iter__(self) -> Iterator[Subject]:
        return iter(self.subjects)

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def n_measurements(self) -> int:
        return sum(len(s) for s in self.subjects)

    def ages(self) -> list[float]:
        return [m.t for s in self.subjects for m in s.measurements]

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, float, float, float | None]]):
        """Group ``(subject, t, w, h)`` records; subjects keep first-seen order."""
        groups: dict[str, list[Measurement]] = {}
        for sid, t, w, h in records:
            groups.setdefault(str(sid), []).append(Measurement(t, w, h))
        return cls(
            tuple(Subject(sid, tuple(sorted(ms, key=lambda m: m.t))) for sid, ms in groups.items())
        )


def format_number(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return f"{x:.17g}"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_longitudinal_csv(path) -> LongitudinalDataset:
    """Read a ``subject,t,w,h`` file (``h`` may be blank).

    Rows are grouped by subject and sorted by age. Duplicate ages within a
    subject, non-numeric fields, and a wrong header raise
    :class:`DataFormatError` naming the offending line.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(c.strip() for c in header) != CSV_HEADER:
            raise DataFormatError(f"{path}: header must be exactly {','.join(CSV_HEADER)}")
        groups: dict[str, dict[float, Measurement]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sid, t_s, w_s, h_s = (c.strip() for c in row)
            if not sid:
                raise DataFormatError(f"{path}:{lineno}: empty subject id")
            try:
                t = float(t_s)
                w = float(w_s)
                h = float(h_s) if h_s else None
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            try:
                m = Measurement(t, w, h)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            visits = groups.setdefault(sid, {})
            if t in visits:
                raise DataFormatError(
                    f"{path}:{lineno}: duplicate age {t_s} for subject {sid!r}"
                )
            visits[t] = m
    return LongitudinalDataset(
        tuple(
            Subject(sid, tuple(visits[t] for t in sorted(visits)))
            for sid, visits in groups.items()
        )
    )


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def longitudinal_csv_text(data: LongitudinalDataset) -> str:
    rows = (
        (s.id, format_number(m.t), format_number(m.w), "" if m.h is None else format_number(m.h))
        for s in data
        for m in s.measurements
    )
    return csv_text(CSV_HEADER, rows)


def write_longitudinal_csv(data: LongitudinalDataset, path) -> None:
    atomic_write_text(path, longitudinal_csv_text(data))
