"""Dataset containers and their delimited file formats.

All datasets are CSV with a one-line header.  Floats are written with
shortest round-trip formatting so regenerated files are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfigError


def _fmt(value):
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _read_rows(path, expected_width):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidConfigError(f"{path}: empty file") from None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected_width:
                raise InvalidConfigError(
                    f"{path}: line {lineno}: expected {expected_width} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InvalidConfigError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise InvalidConfigError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _write_csv(path, header, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class LogisticData:
    y: np.ndarray
    x: np.ndarray

    def header(self):
        return ["y"] + [f"x{j + 1}" for j in range(self.x.shape[1])]

    def save(self, path):
        _write_csv(path, self.header(), np.column_stack([self.y, self.x]))

    @classmethod
    def load(cls, path):
        header, rows = _read_rows_any_width(path)
        if header[0] != "y" or rows.shape[1] < 2:
            raise InvalidConfigError(f"{path}: expected columns y,x1,...")
        return cls(y=rows[:, 0], x=rows[:, 1:])


@dataclass
class ARData:
    y: np.ndarray

    def save(self, path):
        _write_csv(path, ["y"], self.y[:, None])

    @classmethod
    def load(cls, path):
        header, rows = _read_rows(path, 1)
        return cls(y=rows[:, 0])


@dataclass
class SurvivalData:
    """Long-format panels: one row per subject-period."""

    subject: np.ndarray
    period: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray
    y: np.ndarray
    x: np.ndarray

    def header(self):
        return (["subject", "period", "t_start", "t_end", "y"]
                + [f"x{j + 1}" for j in range(self.x.shape[1])])

    def save(self, path):
        rows = np.column_stack([self.subject, self.period, self.t_start,
                                self.t_end, self.y, self.x])
        _write_csv(path, self.header(), rows)

    @classmethod
    def load(cls, path):
        header, rows = _read_rows_any_width(path)
        if header[:5] != ["subject", "period", "t_start", "t_end", "y"] or rows.shape[1] < 6:
            raise InvalidConfigError(
                f"{path}: expected columns subject,period,t_start,t_end,y,x1,...")
        return cls(
            subject=rows[:, 0].astype(np.int64),
            period=rows[:, 1].astype(np.int64),
            t_start=rows[:, 2],
            t_end=rows[:, 3],
            y=rows[:, 4],
            x=rows[:, 5:],
        )


def _read_rows_any_width(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidConfigError(f"{path}: empty file") from None
        width = len(header)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise InvalidConfigError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InvalidConfigError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise InvalidConfigError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def load_dataset(kind, path):
    loaders = {"logistic": LogisticData, "ar1": ARData, "weibull": SurvivalData,
               "normal": ARData}
    if kind not in loaders:
        raise InvalidConfigError(f"unknown model kind {kind!r}")
    return loaders[kind].load(path)
