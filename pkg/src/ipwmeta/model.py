"""Study records, registry datasets, and CSV ingestion.

A dataset mixes published studies, for which the effect estimate and its
standard error are known, with registry-identified unpublished studies for
which only the planned total sample size is available.  That published /
unpublished distinction is structural: presence of ``effect``/``se`` must
agree with the ``published`` flag, and loaders map blank CSV cells to absent
values rather than sentinel numbers.

Two CSV schemas are accepted (header row required, UTF-8):

    summary    id,effect,se,n_total,published
    raw-count  id,events_trt,total_trt,events_ctl,total_ctl,n_total,published

``published`` is 0/1; effect/se (or the four count cells) are empty exactly
when published=0.  In the raw-count schema a published row's n_total may be
left blank (it is then total_trt+total_ctl); when given it must equal that
sum.  All types here are immutable after construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Invalid registry data: malformed rows, broken invariants, N < 2."""


@dataclass(frozen=True)
class TwoByTwoCounts:
    """Raw counts of a two-arm trial with a dichotomous outcome."""

    events_trt: int
    total_trt: int
    events_ctl: int
    total_ctl: int

    def __post_init__(self):
        for name in ("events_trt", "total_trt", "events_ctl", "total_ctl"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise DatasetError(f"{name} must be a nonnegative integer, got {v!r}")
        if self.total_trt < 1 or self.total_ctl < 1:
            raise DatasetError("arm totals must be >= 1")
        if self.events_trt > self.total_trt or self.events_ctl > self.total_ctl:
            raise DatasetError("events cannot exceed the arm total")

    @property
    def n_total(self) -> int:
        return self.total_trt + self.total_ctl


def effect_from_counts(c: TwoByTwoCounts):
    """Empirical log odds ratio and its standard error from a 2x2 table.

    If any cell of the events/non-events table is zero, 0.5 is added to all
    four cells first (the continuity correction the bundled registry data
    is consistent with).

    Returns
    -------
    (effect, se) : tuple of float
    """
    a = float(c.events_trt)
    b = float(c.total_trt - c.events_trt)
    cc = float(c.events_ctl)
    d = float(c.total_ctl - c.events_ctl)
    if min(a, b, cc, d) == 0.0:
        a, b, cc, d = a + 0.5, b + 0.5, cc + 0.5, d + 0.5
    if min(a, b, cc, d) <= 0.0:  # a whole row/column of the table is zero
        raise DatasetError("log odds ratio undefined for this table")
    effect = math.log(a * d / (b * cc))
    se = math.sqrt(1.0 / a + 1.0 / b + 1.0 / cc + 1.0 / d)
    return effect, se


@dataclass(frozen=True)
class StudyRecord:
    """One trial: (effect, se) when published, registry sample size always."""

    id: str
    effect: float | None
    se: float | None
    n_total: int
    published: bool

    def __post_init__(self):
        if self.published:
            if self.effect is None or self.se is None:
                raise DatasetError(f"published study {self.id!r} must carry effect and se")
            if not (math.isfinite(self.effect) and math.isfinite(self.se)):
                raise DatasetError(f"study {self.id!r} has non-finite effect or se")
            if self.se <= 0:
                raise DatasetError(f"study {self.id!r} has se <= 0")
        else:
            if self.effect is not None or self.se is not None:
                raise DatasetError(f"unpublished study {self.id!r} cannot carry effect or se")
        if not isinstance(self.n_total, (int, np.integer)) or self.n_total < 1:
            raise DatasetError(f"study {self.id!r} needs integer n_total >= 1")


@dataclass(frozen=True)
class MetaDataset:
    """Validated, ordered collection of study records."""

    studies: tuple[StudyRecord, ...]

    def __post_init__(self):
        studies = tuple(self.studies)
        object.__setattr__(self, "studies", studies)
        ids = [s.id for s in studies]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetError(f"duplicate study ids: {dup}")
        if sum(s.published for s in studies) < 2:
            raise DatasetError("need at least two published studies")

    @property
    def n_published(self) -> int:
        return sum(s.published for s in self.studies)

    @property
    def n_unpublished(self) -> int:
        return len(self.studies) - self.n_published

    @property
    def s_total(self) -> int:
        return len(self.studies)

    def arrays(self):
        """Numpy views used by the estimators, in dataset order.

        Returns
        -------
        dict with keys ``effect``, ``se``, ``n_pub`` (published studies),
        ``n_all`` (every study) and ``published`` (bool mask).
        """
        pub = [s for s in self.studies if s.published]
        return {
            "effect": np.array([s.effect for s in pub], dtype=np.float64),
            "se": np.array([s.se for s in pub], dtype=np.float64),
            "n_pub": np.array([s.n_total for s in pub], dtype=np.float64),
            "n_all": np.array([s.n_total for s in self.studies], dtype=np.float64),
            "published": np.array([s.published for s in self.studies], dtype=bool),
        }


_SUMMARY_HEADER = ["id", "effect", "se", "n_total", "published"]
_COUNT_HEADER = ["id", "events_trt", "total_trt", "events_ctl", "total_ctl",
                 "n_total", "published"]


def _parse_published(raw: str, where: str) -> bool:
    if raw not in ("0", "1"):
        raise DatasetError(f"{where}: published must be 0 or 1, got {raw!r}")
    return raw == "1"


def _parse_int(raw: str, name: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise DatasetError(f"{where}: {name} must be an integer, got {raw!r}") from None


def _parse_float(raw: str, name: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise DatasetError(f"{where}: {name} must be a number, got {raw!r}") from None


def load_dataset(path, format: str = "csv") -> MetaDataset:
    """Load a registry dataset from a CSV file (either supported schema)."""
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if header == _SUMMARY_HEADER:
            records = _read_summary(reader, path)
        elif header == _COUNT_HEADER:
            records = _read_counts(reader, path)
        else:
            raise DatasetError(f"{path}: unrecognized header {header!r}")
    return MetaDataset(tuple(records))


def _read_summary(reader, path):
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{path}:{lineno}"
        if len(row) != 5:
            raise DatasetError(f"{where}: expected 5 fields, got {len(row)}")
        sid, effect, se, n_total, pub = (c.strip() for c in row)
        published = _parse_published(pub, where)
        if published:
            if effect == "" or se == "":
                raise DatasetError(f"{where}: published row missing effect/se")
            eff_v: float | None = _parse_float(effect, "effect", where)
            se_v: float | None = _parse_float(se, "se", where)
        else:
            if effect != "" or se != "":
                raise DatasetError(f"{where}: unpublished row carries effect/se")
            eff_v = se_v = None
        n = _parse_int(n_total, "n_total", where)
        try:
            records.append(StudyRecord(sid, eff_v, se_v, n, published))
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}") from None
    return records


def _read_counts(reader, path):
    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{path}:{lineno}"
        if len(row) != 7:
            raise DatasetError(f"{where}: expected 7 fields, got {len(row)}")
        sid, et, nt, ec, nc, n_total, pub = (c.strip() for c in row)
        published = _parse_published(pub, where)
        counts_given = [c for c in (et, nt, ec, nc) if c != ""]
        if published:
            if len(counts_given) != 4:
                raise DatasetError(f"{where}: published row missing count cells")
            counts = TwoByTwoCounts(
                _parse_int(et, "events_trt", where),
                _parse_int(nt, "total_trt", where),
                _parse_int(ec, "events_ctl", where),
                _parse_int(nc, "total_ctl", where),
            )
            n = counts.n_total if n_total == "" else _parse_int(n_total, "n_total", where)
            if n != counts.n_total:
                raise DatasetError(f"{where}: n_total={n} disagrees with "
                                   f"total_trt+total_ctl={counts.n_total}")
            effect, se = effect_from_counts(counts)
            records.append(StudyRecord(sid, effect, se, n, True))
        else:
            if counts_given:
                raise DatasetError(f"{where}: unpublished row carries count cells")
            if n_total == "":
                raise DatasetError(f"{where}: unpublished row needs n_total")
            n = _parse_int(n_total, "n_total", where)
            records.append(StudyRecord(sid, None, None, n, False))
    return records


def save_dataset(dataset: MetaDataset, path) -> None:
    """Write a dataset in the summary schema; load_dataset round-trips it."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SUMMARY_HEADER)
        for s in dataset.studies:
            writer.writerow([
                s.id,
                "" if s.effect is None else repr(float(s.effect)),
                "" if s.se is None else repr(float(s.se)),
                s.n_total,
                int(s.published),
            ])
