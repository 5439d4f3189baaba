"""Activity-frequency imputation by sampled residual from the peer median.

The peer median is the median observed frequency among subjects of the same
school class and gender in a given week. A donor week contributes its
residual (own frequency minus that week's peer median); the imputed value is
the target week's peer median plus the residual, rounded to the nearest
integer (exact halves to the even neighbour) and clamped to the valid range.
The ``direct`` method copies the donor's frequency instead.
"""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .donors import DonorPool, MatchLadder, abb_resample, build_pool, pick_index
from .panel import MAX_FREQUENCY, PanelDataset, WeekRecord

log = logging.getLogger(__name__)


class FrequencyMethod(str, enum.Enum):
    RESIDUAL = "residual"
    DIRECT = "direct"


def round_half_even(x: Fraction) -> int:
    """Round to nearest integer, ties to even.

    Peer medians are often half-integers; always rounding ties upward adds a
    systematic +0.5 to a large share of imputations.
    """
    return round(Fraction(x))


def clamp_frequency(x: int) -> int:
    return max(0, min(MAX_FREQUENCY, x))


def _median(values: list[int]) -> Fraction | None:
    if not values:
        return None
    v = sorted(values)
    mid = len(v) // 2
    if len(v) % 2:
        return Fraction(v[mid])
    return Fraction(v[mid - 1] + v[mid], 2)


class MedianTable:
    """Observed frequencies grouped by (school class, gender, week).

    With ``exclude_self`` the median for a subject's own week leaves that
    subject's value out.
    """

    def __init__(self, dataset: PanelDataset, exclude_self: bool = False):
        self.exclude_self = exclude_self
        self._groups: dict[tuple[str, str, int], dict[str, int]] = defaultdict(dict)
        for r in dataset:
            if r.frequency is not None:
                self._groups[(r.school_class_id, r.gender, r.week_index)][r.subject_id] = r.frequency
        self._cache: dict[tuple[str, str, int, str | None], Fraction | None] = {}

    def median(
        self, school_class: str, gender: str, week: int, subject: str | None = None
    ) -> Fraction | None:
        skip = subject if self.exclude_self else None
        key = (school_class, gender, week, skip)
        if key not in self._cache:
            group = self._groups.get((school_class, gender, week), {})
            self._cache[key] = _median([f for s, f in group.items() if s != skip])
        return self._cache[key]

    def for_record(self, record: WeekRecord) -> Fraction | None:
        return self.median(record.school_class_id, record.gender, record.week_index, record.subject_id)


def median_class_frequency(
    dataset: PanelDataset,
    school_class: str,
    gender: str,
    week: int,
    exclude_subject: str | None = None,
) -> Fraction | None:
    """Median observed frequency of the class-gender peers in ``week``.

    Returns ``None`` when no peer frequency is observed that week.
    """
    values = [
        r.frequency
        for r in dataset
        if r.frequency is not None
        and r.week_index == week
        and r.school_class_id == school_class
        and r.gender == gender
        and r.subject_id != exclude_subject
    ]
    return _median(values)


@dataclass(frozen=True)
class FrequencyDraw:
    target: tuple[str, int]
    donor_week: int
    donor_frequency: int
    donor_median: Fraction | None
    target_median: Fraction | None
    residual: Fraction | None
    imputed: int
    method: FrequencyMethod
    rung_used: int
    fallback: str | None = None


def draw_from_donor(
    target: WeekRecord,
    donor: WeekRecord,
    medians: MedianTable,
    method: FrequencyMethod,
    rung_used: int = 0,
) -> FrequencyDraw:
    """Impute ``target`` from a chosen donor week (deterministic)."""
    f = donor.frequency
    if f is None:
        raise ValueError("donor frequency must be observed")
    tm = medians.for_record(target)
    dm = medians.for_record(donor)
    if method is FrequencyMethod.DIRECT:
        return FrequencyDraw(target.key, donor.week_index, f, dm, tm, None, f, method, rung_used)
    if tm is None or dm is None:
        log.info("peer median unavailable for %s; sampling frequency directly", target.key)
        return FrequencyDraw(
            target.key, donor.week_index, f, dm, tm, None, f, FrequencyMethod.DIRECT,
            rung_used, fallback="median_unavailable",
        )
    residual = f - dm
    imputed = clamp_frequency(round_half_even(tm + residual))
    return FrequencyDraw(target.key, donor.week_index, f, dm, tm, residual, imputed, method, rung_used)


def impute_frequency(
    dataset: PanelDataset,
    target: WeekRecord,
    ladder: MatchLadder,
    rng,
    method: FrequencyMethod | str = FrequencyMethod.RESIDUAL,
    abb: bool = False,
    medians: MedianTable | None = None,
) -> FrequencyDraw:
    if target.frequency is not None:
        raise ValueError(f"frequency of {target.key} is not missing")
    method = FrequencyMethod(method)
    medians = medians or MedianTable(dataset)
    pool = build_pool(dataset, target, ladder)
    if abb:
        pool = abb_resample(pool, rng)
    donor = pool.records[pick_index(rng, len(pool))]
    return draw_from_donor(target, donor, medians, method, pool.rung_used)


def candidate_values(
    target: WeekRecord,
    pool: DonorPool,
    medians: MedianTable,
    method: FrequencyMethod,
) -> tuple[np.ndarray, str | None]:
    """Imputed value for every pool entry, plus the fallback flag if any.

    Medians are integers or half-integers, so the float arithmetic here is
    exact and agrees with :func:`draw_from_donor`.
    """
    freqs = np.array([r.frequency for r in pool.records], dtype=np.int64)
    if method is FrequencyMethod.DIRECT:
        return freqs, None
    tm = medians.for_record(target)
    if tm is None:
        return freqs, "median_unavailable"
    dms = np.array([np.nan if d is None else float(d) for d in map(medians.for_record, pool.records)])
    rounded = np.round(float(tm) + freqs - dms)  # ties to even, as round_half_even
    out = np.where(np.isnan(dms), freqs, np.clip(rounded, 0, MAX_FREQUENCY))
    return out.astype(np.int64), ("median_unavailable" if np.isnan(dms).any() else None)
