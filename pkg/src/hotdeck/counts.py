"""Per-sport session counts for weeks whose frequency and sports are known.

Every played sport gets one session up front; the remaining
``frequency - len(sports)`` sessions are drawn with replacement, weighted by
how often each of the week's sports was played in nearby donor weeks.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .donors import DonorPool, MatchLadder, NoDonors, abb_resample, build_pool
from .panel import PanelDataset, WeekRecord
from .sports import EmptyEvidence, SportProbabilityTable, week_contributions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvidenceRow:
    week_index: int
    contributions: dict[int, Fraction]
    source: str  # "observed" | "imputed" | "average"


@dataclass(frozen=True)
class CountEvidence:
    rows: tuple[EvidenceRow, ...]

    def totals(self) -> dict[int, Fraction]:
        out: Counter = Counter()
        for row in self.rows:
            out.update(row.contributions)
        return dict(out)


def count_evidence(
    donors: Sequence[WeekRecord],
    sports: frozenset[int],
    imputed: Mapping[int, Mapping[int, int]] | None = None,
) -> CountEvidence:
    """Contributions of donor weeks to the given sports.

    Weeks with observed counts use them; weeks whose counts were imputed
    earlier in the same replicate use those (``imputed``, keyed by week);
    otherwise the week's frequency is split equally as a temporary average.
    Sports outside ``sports`` are ignored.
    """
    imputed = imputed or {}
    rows = []
    for rec in donors:
        if rec.counts is not None:
            source, counts = "observed", None
        elif rec.week_index in imputed:
            source, counts = "imputed", imputed[rec.week_index]
        else:
            source, counts = "average", None
        contrib = {
            s: c for s, c in week_contributions(rec, counts).items() if s in sports
        }
        rows.append(EvidenceRow(rec.week_index, contrib, source))
    return CountEvidence(tuple(rows))


@dataclass(frozen=True)
class CountDraw:
    target: tuple[str, int]
    counts: dict[int, int]
    table: SportProbabilityTable | None
    drawn: tuple[int, ...]
    rung_used: int | None
    donor_weeks: tuple[int, ...]
    fallback: str | None = None


def impute_counts(
    dataset: PanelDataset,
    target: WeekRecord,
    ladder: MatchLadder,
    rng,
    abb: bool = False,
    imputed: Mapping[int, Mapping[int, int]] | None = None,
) -> CountDraw:
    """Fill in the target's per-sport counts so they sum to its frequency.

    No random numbers are consumed when the frequency equals the number of
    sports or only one sport was played. When no donor week or no evidence exists the remaining sessions
    are spread with uniform probabilities.
    """
    sports, freq = target.sports, target.frequency
    if sports is None or freq is None:
        raise ValueError(f"{target.key} needs frequency and sports before counts")
    if not sports or len(sports) > freq:
        raise ValueError(f"{target.key}: need frequency >= number of sports >= 1")
    base = {s: 1 for s in sorted(sports)}
    remaining = freq - len(sports)
    if remaining == 0:
        return CountDraw(target.key, base, None, (), None, ())
    if len(sports) == 1:
        return CountDraw(target.key, {s: freq for s in sports}, None, (), None, ())

    pool = None
    try:
        pool = build_pool(dataset, target, ladder)
    except NoDonors:
        pass
    if pool is not None and abb:
        pool = abb_resample(pool, rng)
    return counts_from_pool(target, pool, rng, imputed)


def counts_from_pool(
    target: WeekRecord,
    pool: DonorPool | None,
    rng,
    imputed: Mapping[int, Mapping[int, int]] | None = None,
) -> CountDraw:
    """Draw the remaining sessions using evidence from ``pool``.

    ``pool=None`` means no donor week exists; probabilities are then uniform.
    """
    sports, freq = target.sports, target.frequency
    base = {s: 1 for s in sorted(sports)}
    remaining = freq - len(sports)
    if remaining == 0:
        return CountDraw(target.key, base, None, (), None, ())
    if len(sports) == 1:
        return CountDraw(target.key, {s: freq for s in sports}, None, (), None, ())
    rung_used, donor_weeks, fallback = None, (), None
    if pool is None:
        fallback = "uniform_no_donors"
        table = SportProbabilityTable.uniform(sports)
    else:
        rung_used, donor_weeks = pool.rung_used, pool.weeks
        evidence = count_evidence(pool.records, frozenset(sports), imputed)
        try:
            table = SportProbabilityTable.from_totals(evidence.totals(), sports)
        except EmptyEvidence:
            fallback = "uniform_no_evidence"
            table = SportProbabilityTable.uniform(sports)
    if fallback:
        log.info("count probabilities for %s: %s", target.key, fallback)
    drawn = table.draw(rng, remaining)
    for s in drawn:
        base[s] += 1
    return CountDraw(target.key, base, table, tuple(drawn), rung_used, donor_weeks, fallback)


def impute_counts_sequential(
    dataset: PanelDataset,
    subject: str,
    targets: Sequence[WeekRecord],
    ladder: MatchLadder,
    rng,
    abb: bool = False,
    chaining: bool = True,
) -> dict[int, CountDraw]:
    """Impute counts for one subject's targets in chronological order.

    With ``chaining`` the counts drawn for an earlier week are used as
    evidence for later weeks; the dataset itself is never modified.
    """
    weeks = [t.week_index for t in targets]
    if weeks != sorted(weeks):
        raise ValueError("targets must be in chronological order")
    if any(t.subject_id != subject for t in targets):
        raise ValueError("all targets must belong to the subject")
    done: dict[int, dict[int, int]] = {}
    out: dict[int, CountDraw] = {}
    for t in targets:
        draw = impute_counts(dataset, t, ladder, rng, abb, done if chaining else None)
        out[t.week_index] = draw
        done[t.week_index] = draw.counts
    return out
