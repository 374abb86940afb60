"""Weighted survey samples: loading, validation and overlap detection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

ROLES = ("recipient", "donor")


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(0, 0)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampleFrame:
    """One survey file.

    ``x`` holds the matching variables shared by both samples and ``extra``
    the sample-specific block (y for the recipient, z for the donor).
    Categorical columns appear one-hot expanded; ``categories`` records the
    level order of every expanded source column.
    """

    ids: tuple[str, ...]
    x: np.ndarray
    extra: np.ndarray
    weights: np.ndarray
    role: str = "recipient"
    x_names: tuple[str, ...] = ()
    extra_names: tuple[str, ...] = ()
    x_columns: tuple[str, ...] = ()
    extra_columns: tuple[str, ...] = ()
    categories: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(str(i).strip() for i in self.ids)
        n = len(ids)
        x = _frozen(self.x, 2)
        if x.size == 0:
            x = _frozen(np.zeros((n, 0)), 2)
        extra = _frozen(self.extra, 2)
        if extra.size == 0:
            extra = _frozen(np.zeros((n, 0)), 2)
        w = _frozen(self.weights, 1)

        if self.role not in ROLES:
            raise ConfigurationError(f"role must be one of {ROLES}, got {self.role!r}")
        if x.shape[0] != n or extra.shape[0] != n or w.shape != (n,):
            raise ConfigurationError(
                f"inconsistent row counts: ids={n}, x={x.shape[0]}, "
                f"extra={extra.shape[0]}, weights={w.shape}"
            )
        if len(set(ids)) != n:
            seen = set()
            for r, i in enumerate(ids, start=1):
                if i in seen:
                    raise DataError(f"row {r}: duplicate id {i!r}")
                seen.add(i)
        for r, wk in enumerate(w, start=1):
            if not math.isfinite(wk):
                raise DataError(f"row {r}: weight must be finite")
            if wk <= 0:
                raise DataError(f"row {r}: weight must be > 0")
        if not np.all(np.isfinite(x)):
            r = int(np.nonzero(~np.isfinite(x).all(axis=1))[0][0]) + 1
            raise DataError(f"row {r}: matching variables must be finite")
        if not np.all(np.isfinite(extra)):
            r = int(np.nonzero(~np.isfinite(extra).all(axis=1))[0][0]) + 1
            raise DataError(f"row {r}: sample-specific variables must be finite")

        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        prefix = "y" if self.role == "recipient" else "z"
        extra_names = tuple(self.extra_names) or tuple(
            f"{prefix}{j + 1}" for j in range(extra.shape[1])
        )
        if len(x_names) != x.shape[1] or len(extra_names) != extra.shape[1]:
            raise ConfigurationError("column names do not match matrix widths")

        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "extra", extra)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "extra_names", extra_names)
        object.__setattr__(self, "x_columns", tuple(self.x_columns) or x_names)
        object.__setattr__(self, "extra_columns", tuple(self.extra_columns) or extra_names)
        object.__setattr__(
            self, "categories", {k: tuple(v) for k, v in dict(self.categories).items()}
        )

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def with_weights(self, weights) -> "SampleFrame":
        """Copy of the frame carrying new weights."""
        return SampleFrame(
            self.ids, self.x, self.extra, weights, self.role, self.x_names,
            self.extra_names, self.x_columns, self.extra_columns, self.categories,
        )

    def __eq__(self, other):
        if not isinstance(other, SampleFrame):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.role == other.role
            and self.x_names == other.x_names
            and self.extra_names == other.extra_names
            and dict(self.categories) == dict(other.categories)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.extra, other.extra)
            and np.array_equal(self.weights, other.weights)
        )

    __hash__ = None


@dataclass(frozen=True)
class OverlapInfo:
    """Units present in both samples, matched by identifier."""

    common_ids: tuple[str, ...]
    recipient_pos: np.ndarray
    donor_pos: np.ndarray

    @property
    def n12(self) -> int:
        return len(self.common_ids)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.recipient_pos.tolist(), self.donor_pos.tolist()))


def detect_overlap(recipient: SampleFrame, donor: SampleFrame) -> OverlapInfo:
    """Exact identifier join between the two frames, in recipient order."""
    if recipient.p != donor.p:
        raise ConfigurationError(
            f"matching dimension mismatch: recipient has p={recipient.p}, donor has p={donor.p}"
        )
    donor_index = {i: pos for pos, i in enumerate(donor.ids)}
    common, rpos, dpos = [], [], []
    for k, i in enumerate(recipient.ids):
        l = donor_index.get(i)
        if l is not None:
            common.append(i)
            rpos.append(k)
            dpos.append(l)
    return OverlapInfo(
        tuple(common), np.asarray(rpos, dtype=np.intp), np.asarray(dpos, dtype=np.intp)
    )


# --- CSV -------------------------------------------------------------------


def _parse_float(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def read_levels(path, columns: Sequence[str]) -> dict[str, set[str]]:
    """Distinct non-numeric-looking values of ``columns`` (used to share encodings)."""
    header, rows = _read_csv(path)
    out: dict[str, set[str]] = {}
    for c in columns:
        j = _col_index(header, c, path)
        vals = [r[j].strip() for r in rows]
        if any(v and _parse_float(v) is None for v in vals):
            out[c] = set(vals)
    return out


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
    return header, rows


def _col_index(header, name, path) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise ConfigurationError(f"{path}: missing column {name!r}") from None


def _encode(columns, header, rows, path, levels):
    names, blocks, cats = [], [], {}
    for c in columns:
        j = _col_index(header, c, path)
        raw = [r[j].strip() for r in rows]
        for r, v in enumerate(raw, start=1):
            if v == "":
                raise DataError(f"row {r}: missing value in column {c!r}")
        parsed = [_parse_float(v) for v in raw]
        if c in levels or any(v is None for v in parsed):
            lv = tuple(sorted(set(levels.get(c, ())) | set(raw)))
            pos = {v: i for i, v in enumerate(lv)}
            block = np.zeros((len(raw), len(lv)))
            block[np.arange(len(raw)), [pos[v] for v in raw]] = 1.0
            cats[c] = lv
            names.extend(f"{c}={v}" for v in lv)
            blocks.append(block)
        else:
            col = np.asarray(parsed, dtype=float)
            bad = ~np.isfinite(col)
            if bad.any():
                raise DataError(f"row {int(np.argmax(bad)) + 1}: non-finite value in column {c!r}")
            names.append(c)
            blocks.append(col.reshape(-1, 1))
    mat = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return mat, names, cats


def load_frame(
    path,
    *,
    id_col: str,
    x_cols: Sequence[str],
    extra_cols: Sequence[str] = (),
    weight_col: str,
    role: str = "recipient",
    levels: Mapping[str, Sequence[str]] | None = None,
) -> SampleFrame:
    """Read a CSV survey file into a validated :class:`SampleFrame`.

    Non-numeric columns (or any column listed in ``levels``) are one-hot
    expanded with lexicographically sorted levels. ``levels`` lets two
    frames share one encoding of a matching variable.
    """
    if role not in ROLES:
        raise ConfigurationError(f"role must be one of {ROLES}, got {role!r}")
    header, rows = _read_csv(path)
    levels = {k: tuple(v) for k, v in (levels or {}).items()}
    ids = [r[_col_index(header, id_col, path)].strip() for r in rows]
    wj = _col_index(header, weight_col, path)
    weights = []
    for r, row in enumerate(rows, start=1):
        w = _parse_float(row[wj].strip())
        if w is None:
            raise DataError(f"row {r}: weight {row[wj]!r} is not a number")
        weights.append(w)
    x, x_names, xcats = _encode(list(x_cols), header, rows, path, levels)
    extra, extra_names, ecats = _encode(list(extra_cols), header, rows, path, levels)
    return SampleFrame(
        ids=tuple(ids),
        x=x,
        extra=extra,
        weights=np.asarray(weights, dtype=float),
        role=role,
        x_names=tuple(x_names),
        extra_names=tuple(extra_names),
        x_columns=tuple(x_cols),
        extra_columns=tuple(extra_cols),
        categories={**xcats, **ecats},
    )


def fmt(v: float) -> str:
    """Shortest round-trip decimal."""
    return repr(float(v))


def _decode(frame: SampleFrame, columns, names, mat):
    """Collapse one-hot blocks back into level strings, column by column."""
    out, j = {}, 0
    for c in columns:
        if c in frame.categories:
            lv = frame.categories[c]
            block = mat[:, j:j + len(lv)]
            out[c] = [lv[int(i)] for i in np.argmax(block, axis=1)]
            j += len(lv)
        else:
            out[c] = [fmt(v) for v in mat[:, j]]
            j += 1
    return out


def write_frame(frame: SampleFrame, path, *, id_col="id", weight_col="weight") -> None:
    """Write ``frame`` as CSV such that :func:`load_frame` reads it back unchanged."""
    xs = _decode(frame, frame.x_columns, frame.x_names, frame.x)
    es = _decode(frame, frame.extra_columns, frame.extra_names, frame.extra)
    header = [id_col, *frame.x_columns, *frame.extra_columns, weight_col]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for k in range(frame.n):
            wr.writerow(
                [frame.ids[k]]
                + [xs[c][k] for c in frame.x_columns]
                + [es[c][k] for c in frame.extra_columns]
                + [fmt(frame.weights[k])]
            )
