"""Longitudinal panel data model and its hard constraints.

A panel is a set of subject-weeks. Each week carries a composite pain level,
an activity frequency (sessions per week, top-coded at 8), the set of sports
played and, optionally, how many sessions each sport took. Any of those four
fields may be missing, encoded as ``None``.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MAX_FREQUENCY = 8
DEFAULT_SPORT_CODES = frozenset(range(1, 11))

VARIABLES = ("pain", "frequency", "sports", "counts")


class PainLevel(str, enum.Enum):
    NO_PAIN = "none"
    NEW_PAIN = "new"
    OLD_PAIN = "old"

    @property
    def is_pain(self) -> bool:
        return self is not PainLevel.NO_PAIN


PAIN_CODES = {None: -1, PainLevel.NO_PAIN: 0, PainLevel.NEW_PAIN: 1, PainLevel.OLD_PAIN: 2}


@dataclass(frozen=True)
class WeekRecord:
    subject_id: str
    school_class_id: str
    gender: str
    week_index: int
    pain: PainLevel | None = None
    frequency: int | None = None
    sports: frozenset[int] | None = None
    counts: Mapping[int, int] | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.subject_id, self.week_index)

    def missing_fields(self) -> list[str]:
        return [name for name in VARIABLES if getattr(self, name) is None]


@dataclass(frozen=True)
class Subject:
    subject_id: str
    school_class_id: str
    gender: str


@dataclass(frozen=True)
class Violation:
    code: str
    subject_id: str
    week_index: int
    detail: str = ""


@dataclass
class ValidationReport:
    """Violated-constraint entries; an empty report means the data is valid."""

    violations: list[Violation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __bool__(self) -> bool:
        return bool(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def extend(self, other: Iterable[Violation]) -> None:
        self.violations.extend(other)


def validate_record(
    record: WeekRecord, sport_codes: frozenset[int] = DEFAULT_SPORT_CODES
) -> ValidationReport:
    """Check one subject-week against the panel constraints.

    Missing fields only skip the constraints that reference them. Codes are
    ``range``, ``set-size-vs-frequency``, ``count-keys``, ``count-sum``,
    ``count-positivity`` and ``zero-frequency-empty-set``.
    """
    out: list[Violation] = []

    def flag(code: str, detail: str) -> None:
        out.append(Violation(code, record.subject_id, record.week_index, detail))

    freq, sports, counts = record.frequency, record.sports, record.counts
    if record.week_index < 0:
        flag("range", f"week_index={record.week_index}")
    if record.pain is not None and not isinstance(record.pain, PainLevel):
        flag("range", f"pain={record.pain!r}")
    if freq is not None and not (0 <= freq <= MAX_FREQUENCY):
        flag("range", f"frequency={freq}")
    if sports is not None:
        bad = sorted(s for s in sports if s not in sport_codes)
        if bad:
            flag("range", f"sport codes {bad} outside alphabet")
    if freq is not None and sports is not None:
        if len(sports) > freq:
            flag("set-size-vs-frequency", f"{len(sports)} sports > frequency {freq}")
        if freq == 0 and sports:
            flag("zero-frequency-empty-set", f"{len(sports)} sports at frequency 0")
        if freq > 0 and not sports:
            flag("count-sum", f"no sports to carry frequency {freq}")
    if counts is not None:
        if sports is not None and set(counts) != set(sports):
            flag("count-keys", f"count keys {sorted(counts)} != sports {sorted(sports)}")
        nonpos = sorted(s for s, c in counts.items() if c < 1)
        if nonpos:
            flag("count-positivity", f"non-positive counts for {nonpos}")
        if freq is not None and sum(counts.values()) != freq:
            flag("count-sum", f"counts sum {sum(counts.values())} != frequency {freq}")
    return ValidationReport(out)


class PanelDataset:
    """Immutable collection of subject-weeks plus the subject roster.

    Records are stored grouped by subject (roster order) and by increasing
    week within subject. Numeric column views used by the imputers are built
    lazily and cached.
    """

    def __init__(
        self,
        records: Iterable[WeekRecord],
        roster: Iterable[Subject] | None = None,
        sport_codes: Iterable[int] = DEFAULT_SPORT_CODES,
    ):
        records = list(records)
        if roster is None:
            seen: dict[str, Subject] = {}
            for r in records:
                seen.setdefault(r.subject_id, Subject(r.subject_id, r.school_class_id, r.gender))
            roster = seen.values()
        self._roster: dict[str, Subject] = {}
        for s in roster:
            if s.subject_id in self._roster:
                raise ValueError(f"duplicate subject {s.subject_id!r} in roster")
            self._roster[s.subject_id] = s
        self.sport_codes = frozenset(sport_codes)

        order = {sid: i for i, sid in enumerate(self._roster)}
        for r in records:
            subj = self._roster.get(r.subject_id)
            if subj is None:
                raise ValueError(f"record for unknown subject {r.subject_id!r}")
            if (subj.school_class_id, subj.gender) != (r.school_class_id, r.gender):
                raise ValueError(f"record {r.key} disagrees with roster class/gender")
        records.sort(key=lambda r: (order[r.subject_id], r.week_index))
        self._records: tuple[WeekRecord, ...] = tuple(records)

        self._spans: dict[str, tuple[int, int]] = {}
        start = 0
        for i in range(1, len(records) + 1):
            if i == len(records) or records[i].subject_id != records[start].subject_id:
                sid = records[start].subject_id
                weeks = [r.week_index for r in records[start:i]]
                if len(set(weeks)) != len(weeks):
                    raise ValueError(f"duplicate week for subject {sid!r}")
                self._spans[sid] = (start, i)
                start = i
        self._index = {r.key: i for i, r in enumerate(self._records)}

    # -- basic access -----------------------------------------------------
    @property
    def records(self) -> tuple[WeekRecord, ...]:
        return self._records

    @property
    def roster(self) -> Mapping[str, Subject]:
        return self._roster

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[WeekRecord]:
        return iter(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanelDataset):
            return NotImplemented
        return (
            self._records == other._records
            and list(self._roster.values()) == list(other._roster.values())
            and self.sport_codes == other.sport_codes
        )

    __hash__ = None  # type: ignore[assignment]

    def subject_span(self, subject_id: str) -> tuple[int, int]:
        if subject_id not in self._roster:
            raise KeyError(subject_id)
        return self._spans.get(subject_id, (0, 0))

    def subject_records(self, subject_id: str) -> Sequence[WeekRecord]:
        lo, hi = self.subject_span(subject_id)
        return self._records[lo:hi]

    def position(self, subject_id: str, week_index: int) -> int:
        return self._index[(subject_id, week_index)]

    def get(self, subject_id: str, week_index: int) -> WeekRecord | None:
        i = self._index.get((subject_id, week_index))
        return None if i is None else self._records[i]

    def replace_records(self, updates: Mapping[int, WeekRecord]) -> "PanelDataset":
        """Return a new dataset with the records at the given positions swapped."""
        recs = list(self._records)
        for pos, rec in updates.items():
            if recs[pos].key != rec.key:
                raise ValueError("replacement must keep subject and week")
            recs[pos] = rec
        return PanelDataset(recs, self._roster.values(), self.sport_codes)

    # -- column views -----------------------------------------------------
    @cached_property
    def subject_index(self) -> np.ndarray:
        order = {sid: i for i, sid in enumerate(self._roster)}
        return np.fromiter((order[r.subject_id] for r in self._records), dtype=np.int64, count=len(self))

    @cached_property
    def weeks(self) -> np.ndarray:
        return np.fromiter((r.week_index for r in self._records), dtype=np.int64, count=len(self))

    @cached_property
    def pain_codes(self) -> np.ndarray:
        return np.fromiter((PAIN_CODES[r.pain] for r in self._records), dtype=np.int64, count=len(self))

    @cached_property
    def frequencies(self) -> np.ndarray:
        """Frequency column with -1 for missing."""
        return np.fromiter(
            (-1 if r.frequency is None else r.frequency for r in self._records),
            dtype=np.int64,
            count=len(self),
        )

    @cached_property
    def has_sports(self) -> np.ndarray:
        """True where the sport set is observed and non-empty."""
        return np.fromiter((bool(r.sports) for r in self._records), dtype=bool, count=len(self))


def validate_completed(dataset: PanelDataset) -> ValidationReport:
    """Gate for imputed output: every record valid and no field missing."""
    report = ValidationReport()
    for rec in dataset:
        report.extend(validate_record(rec, dataset.sport_codes))
        for name in rec.missing_fields():
            report.violations.append(
                Violation("missing-field", rec.subject_id, rec.week_index, name)
            )
    return report


@dataclass(frozen=True)
class MissingnessProfile:
    n_records: int
    missing: dict[str, int]
    rates: dict[str, float]
    per_subject: dict[str, dict[str, int]]
    overall_rate: float

    def table(self) -> list[tuple[str, int, float]]:
        return [(v, self.missing[v], self.rates[v]) for v in VARIABLES]


def missingness_profile(dataset: PanelDataset) -> MissingnessProfile:
    n = len(dataset)
    totals: Counter[str] = Counter({v: 0 for v in VARIABLES})
    per_subject: dict[str, dict[str, int]] = {}
    for sid in dataset.roster:
        c = Counter({v: 0 for v in VARIABLES})
        for rec in dataset.subject_records(sid):
            c.update(rec.missing_fields())
        per_subject[sid] = dict(c)
        totals.update(c)
    rates = {v: (totals[v] / n if n else 0.0) for v in VARIABLES}
    cells = n * len(VARIABLES)
    overall = sum(totals.values()) / cells if cells else 0.0
    return MissingnessProfile(n, dict(totals), rates, per_subject, overall)
