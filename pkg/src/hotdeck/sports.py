"""Sport-set imputation under the ``|sports| <= frequency`` constraint."""

from __future__ import annotations

import bisect
import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .donors import MatchLadder, abb_resample, build_pool, pick_index, window
from .panel import PanelDataset, WeekRecord

log = logging.getLogger(__name__)

PROPORTION_RADIUS = 7


class EmptyEvidence(Exception):
    """No evidence week mentions any sport of the requested support."""


def week_contributions(
    record: WeekRecord, counts: Mapping[int, int] | None = None
) -> dict[int, Fraction]:
    """Per-sport sessions credited to one week.

    Uses ``counts`` if given, else the record's own counts, else divides the
    week's frequency equally over its sports.
    """
    if not record.sports:
        return {}
    counts = counts if counts is not None else record.counts
    if counts is not None:
        return {s: Fraction(counts[s]) for s in record.sports}
    share = Fraction(record.frequency or 0, len(record.sports))
    return {s: share for s in record.sports}


@dataclass(frozen=True)
class SportProbabilityTable:
    entries: dict[int, Fraction]
    support: frozenset[int]
    totals: dict[int, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        if any(p < 0 for p in self.entries.values()):
            raise ValueError("negative probability")
        if set(self.entries) - self.support:
            raise ValueError("probability outside support")
        if self.entries and sum(self.entries.values()) != 1:
            raise ValueError("probabilities must sum to one")

    @classmethod
    def from_totals(cls, totals: Mapping[int, Fraction], support: Iterable[int]) -> "SportProbabilityTable":
        support = frozenset(support)
        total = sum((totals.get(s, Fraction(0)) for s in support), Fraction(0))
        if total == 0:
            raise EmptyEvidence(f"no evidence for sports {sorted(support)}")
        entries = {s: Fraction(totals.get(s, 0)) / total for s in sorted(support)}
        return cls(entries, support, {s: Fraction(totals.get(s, 0)) for s in sorted(support)})

    @classmethod
    def uniform(cls, support: Iterable[int]) -> "SportProbabilityTable":
        support = frozenset(support)
        return cls({s: Fraction(1, len(support)) for s in sorted(support)}, support)

    def probability(self, sport: int) -> Fraction:
        return self.entries.get(sport, Fraction(0))

    def draw(self, rng, k: int) -> list[int]:
        """``k`` sports with replacement, one ``rng.random()`` per draw."""
        codes = sorted(self.entries)
        cum, acc = [], Fraction(0)
        for c in codes:
            acc += self.entries[c]
            cum.append(float(acc))
        cum[-1] = 1.0
        out = []
        for _ in range(k):
            j = bisect.bisect_right(cum, rng.random())
            out.append(codes[min(j, len(codes) - 1)])
        return out


def sport_proportions(
    records: Iterable[WeekRecord],
    support: Iterable[int],
    counts_override: Mapping[int, Mapping[int, int]] | None = None,
) -> SportProbabilityTable:
    """Relative participation in each ``support`` sport over ``records``.

    ``counts_override`` maps week index to counts to use in place of the
    record's own (used when earlier imputed counts feed later targets).
    """
    support = frozenset(support)
    if not support:
        raise ValueError("support must be non-empty")
    override = counts_override or {}
    totals: Counter[int] = Counter()
    for rec in records:
        if rec.sports is None or rec.sports.isdisjoint(support):
            continue
        for s, c in week_contributions(rec, override.get(rec.week_index)).items():
            if s in support:
                totals[s] += c
    return SportProbabilityTable.from_totals(totals, support)


@dataclass(frozen=True)
class SportDraw:
    target: tuple[str, int]
    sports: frozenset[int]
    counts: dict[int, int] | None
    donor_week: int | None
    rung_used: int | None
    branch: str
    drawn: tuple[int, ...] = ()
    table: SportProbabilityTable | None = None
    fallback: str | None = None


def choose_sports(
    dataset: PanelDataset,
    target: WeekRecord,
    donor: WeekRecord,
    rng,
    rung_used: int | None = None,
    rung_radius: float | None = None,
    keep_multiplicity: bool = False,
    proportion_radius: float = PROPORTION_RADIUS,
) -> SportDraw:
    """Derive the target's sport set from an already chosen donor week."""
    f = target.frequency
    dsports = donor.sports or frozenset()
    if donor.frequency <= f or len(dsports) <= f:
        sports = frozenset(dsports)
        counts = {s: 1 for s in sports} if len(sports) == f else None
        return SportDraw(target.key, sports, counts, donor.week_index, rung_used, "copy")

    fallback = None
    near = window(dataset, target.subject_id, target.week_index, proportion_radius)
    try:
        table = sport_proportions(near, dsports)
    except EmptyEvidence:
        try:
            wide = window(dataset, target.subject_id, target.week_index, rung_radius or proportion_radius)
            table = sport_proportions(wide, dsports)
            fallback = "proportion_window_widened"
        except EmptyEvidence:
            table = SportProbabilityTable.uniform(dsports)
            fallback = "uniform_proportions"
        log.info("sport proportions for %s: %s", target.key, fallback)
    drawn = table.draw(rng, f)
    sports = frozenset(drawn)
    if keep_multiplicity:
        counts = dict(sorted(Counter(drawn).items()))
    else:
        counts = {s: 1 for s in sports} if len(sports) == f else None
    return SportDraw(
        target.key, sports, counts, donor.week_index, rung_used, "proportional",
        tuple(drawn), table, fallback,
    )


def impute_sports(
    dataset: PanelDataset,
    target: WeekRecord,
    ladder: MatchLadder,
    rng,
    abb: bool = False,
    keep_multiplicity: bool = False,
    proportion_radius: float = PROPORTION_RADIUS,
) -> SportDraw:
    """Impute a missing sport set; ``target.frequency`` must be known."""
    if target.sports is not None:
        raise ValueError(f"sports of {target.key} are not missing")
    if target.frequency is None:
        raise ValueError(f"frequency of {target.key} must be known before sports")
    if target.frequency == 0:
        return SportDraw(target.key, frozenset(), {}, None, None, "zero")
    pool = build_pool(dataset, target, ladder)
    if abb:
        pool = abb_resample(pool, rng)
    donor = pool.records[pick_index(rng, len(pool))]
    return choose_sports(
        dataset, target, donor, rng, pool.rung_used, pool.rung.radius,
        keep_multiplicity, proportion_radius,
    )

