"""Within-subject donor pools built from an ordered fallback ladder.

A ladder is a list of rungs, each a match predicate paired with a time-window
radius in weeks. The pool for a target is taken from the first rung that
yields at least one candidate; later rungs are never consulted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .panel import PAIN_CODES, PainLevel, PanelDataset, WeekRecord

UNBOUNDED = math.inf
DEFAULT_RADII = (7, 12, 25, UNBOUNDED)


class NoDonors(Exception):
    """Every rung of the ladder came up empty for these targets."""

    def __init__(self, targets: Sequence[tuple[str, int]], variable: str = ""):
        self.targets = list(targets)
        self.variable = variable
        shown = ", ".join(f"{s}@{w}" for s, w in self.targets[:20])
        more = "" if len(self.targets) <= 20 else f" (+{len(self.targets) - 20} more)"
        label = f" for {variable}" if variable else ""
        super().__init__(f"no donors{label}: {shown}{more}")


class PredicateKind(str, enum.Enum):
    EXACT_PAIN = "exact_pain"
    ANY_PAIN = "any_pain"
    ALL_ENTRIES = "all_entries"
    CLOSEST_FREQUENCY = "closest_frequency"
    CONTAINS_ANY_SPORT = "contains_any_sport"


@dataclass(frozen=True)
class MatchPredicate:
    """Donor filter. Parameters left as ``None`` are bound from the target."""

    kind: PredicateKind
    frequency: int | None = None
    sports: frozenset[int] | None = None
    match_pain: bool = False
    pain: PainLevel | None = None

    def bind(self, target: WeekRecord) -> "MatchPredicate":
        p = self
        if p.kind is PredicateKind.CLOSEST_FREQUENCY and p.frequency is None:
            if target.frequency is None:
                raise ValueError("closest-frequency match needs the target frequency")
            p = replace(p, frequency=target.frequency)
        if p.kind is PredicateKind.CONTAINS_ANY_SPORT and p.sports is None:
            if not target.sports:
                raise ValueError("sport match needs a non-empty target sport set")
            p = replace(p, sports=frozenset(target.sports))
        if p.kind in (PredicateKind.EXACT_PAIN,) or p.match_pain:
            if p.pain is None:
                p = replace(p, pain=target.pain)
        return p

    def describe(self) -> str:
        extra = ""
        if self.kind is PredicateKind.CLOSEST_FREQUENCY:
            extra = f"(f={self.frequency}{', pain' if self.match_pain else ''})"
        elif self.kind is PredicateKind.CONTAINS_ANY_SPORT and self.sports is not None:
            extra = "(" + ";".join(map(str, sorted(self.sports))) + ")"
        return self.kind.value + extra


@dataclass(frozen=True)
class Rung:
    predicate: MatchPredicate
    radius: float = UNBOUNDED

    def describe(self) -> str:
        r = "inf" if math.isinf(self.radius) else str(int(self.radius))
        return f"{self.predicate.describe()}x{r}"


@dataclass(frozen=True)
class MatchLadder:
    rungs: tuple[Rung, ...]

    def __post_init__(self):
        if not self.rungs:
            raise ValueError("ladder must have at least one rung")
        for a, b in zip(self.rungs, self.rungs[1:]):
            if a.radius <= 0 or b.radius <= 0:
                raise ValueError("rung radius must be positive")
            if a.predicate.kind is b.predicate.kind and b.radius < a.radius:
                raise ValueError("radii must be non-decreasing within a predicate group")

    def __len__(self) -> int:
        return len(self.rungs)

    def __iter__(self):
        return iter(self.rungs)

    @classmethod
    def from_groups(
        cls, groups: Sequence[tuple[MatchPredicate, Sequence[float]]]
    ) -> "MatchLadder":
        return cls(tuple(Rung(p, float(r)) for p, radii in groups for r in radii))


def frequency_ladder(radii: Sequence[float] = DEFAULT_RADII) -> MatchLadder:
    return MatchLadder.from_groups(
        [
            (MatchPredicate(PredicateKind.EXACT_PAIN), radii),
            (MatchPredicate(PredicateKind.ANY_PAIN), radii),
            (MatchPredicate(PredicateKind.ALL_ENTRIES), radii),
        ]
    )


def sport_ladder(radii: Sequence[float] = DEFAULT_RADII, match_pain: bool = False) -> MatchLadder:
    return MatchLadder.from_groups(
        [(MatchPredicate(PredicateKind.CLOSEST_FREQUENCY, match_pain=match_pain), radii)]
    )


def count_ladder(radii: Sequence[float] = DEFAULT_RADII) -> MatchLadder:
    return MatchLadder.from_groups([(MatchPredicate(PredicateKind.CONTAINS_ANY_SPORT), radii)])


@dataclass(frozen=True)
class DonorPool:
    """Candidate donor weeks for one target.

    ``positions`` index into the dataset the pool was built from; entries may
    repeat after a bootstrap resample. Selection is uniform over entries.
    """

    target: tuple[str, int]
    positions: tuple[int, ...]
    records: tuple[WeekRecord, ...]
    rung_used: int
    rung: Rung

    def __post_init__(self):
        if not self.positions:
            raise ValueError("donor pool cannot be empty")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def weeks(self) -> tuple[int, ...]:
        return tuple(r.week_index for r in self.records)

    @property
    def weights(self) -> np.ndarray:
        n = len(self.positions)
        return np.full(n, 1.0 / n)


def window(
    dataset: PanelDataset, subject: str, week: int, radius: float = UNBOUNDED
) -> list[WeekRecord]:
    """The subject's records with ``0 < |week_index - week| <= radius``."""
    lo, _ = dataset.subject_span(subject)
    return [dataset.records[lo + i] for i in _window_offsets(dataset, subject, week, radius)]


def _window_offsets(dataset: PanelDataset, subject: str, week: int, radius: float) -> np.ndarray:
    lo, hi = dataset.subject_span(subject)
    dist = np.abs(dataset.weeks[lo:hi] - week)
    return np.flatnonzero((dist > 0) & (dist <= radius))


def _candidates(
    dataset: PanelDataset, target: WeekRecord, pred: MatchPredicate, radius: float
) -> np.ndarray:
    """Global positions of window records satisfying the bound predicate."""
    lo, _ = dataset.subject_span(target.subject_id)
    offs = _window_offsets(dataset, target.subject_id, target.week_index, radius)
    if offs.size == 0:
        return offs
    pos = offs + lo
    freq = dataset.frequencies[pos]
    pain = dataset.pain_codes[pos]
    kind = pred.kind
    if kind is PredicateKind.EXACT_PAIN:
        if pred.pain is None:
            return pos[:0]
        return pos[(pain == PAIN_CODES[pred.pain]) & (freq >= 0)]
    if kind is PredicateKind.ANY_PAIN:
        if target.pain is None:
            return pos[:0]
        return pos[(pain > 0) & (freq >= 0)]
    if kind is PredicateKind.ALL_ENTRIES:
        return pos[freq >= 0]
    if kind is PredicateKind.CLOSEST_FREQUENCY:
        keep = (freq > 0) & dataset.has_sports[pos]
        if pred.match_pain:
            if pred.pain is None:
                return pos[:0]
            keep &= pain == PAIN_CODES[pred.pain]
        pos, freq = pos[keep], freq[keep]
        if pos.size == 0:
            return pos
        dist = np.abs(freq - pred.frequency)
        return pos[dist == dist.min()]
    if kind is PredicateKind.CONTAINS_ANY_SPORT:
        recs = dataset.records
        wanted = pred.sports or frozenset()
        return np.array(
            [p for p in pos if recs[p].sports is not None and not wanted.isdisjoint(recs[p].sports)],
            dtype=np.int64,
        )
    raise ValueError(f"unknown predicate {kind!r}")


def satisfies(dataset: PanelDataset, target: WeekRecord, rung: Rung, position: int) -> bool:
    """Whether the record at ``position`` is a valid donor under ``rung``."""
    pred = rung.predicate.bind(target)
    return position in set(_candidates(dataset, target, pred, rung.radius).tolist())


def build_pool(dataset: PanelDataset, target: WeekRecord, ladder: MatchLadder) -> DonorPool:
    """Search ``ladder`` in order and return the first non-empty pool."""
    for i, rung in enumerate(ladder.rungs):
        pos = _candidates(dataset, target, rung.predicate.bind(target), rung.radius)
        if pos.size:
            positions = tuple(int(p) for p in pos)
            return DonorPool(
                target.key,
                positions,
                tuple(dataset.records[p] for p in positions),
                i,
                rung,
            )
    raise NoDonors([target.key])


def pick_index(rng, n: int) -> int:
    """Uniform index in ``range(n)`` from a single ``rng.random()`` draw."""
    return min(int(rng.random() * n), n - 1)


def abb_resample(pool: DonorPool, rng) -> DonorPool:
    """Bootstrap the pool: ``len(pool)`` uniform draws with replacement."""
    n = len(pool)
    idx = np.minimum((rng.random(n) * n).astype(np.int64), n - 1)
    return DonorPool(
        pool.target,
        tuple(pool.positions[i] for i in idx),
        tuple(pool.records[i] for i in idx),
        pool.rung_used,
        pool.rung,
    )


def restrict_pool(pool: DonorPool, multiplicity: np.ndarray) -> DonorPool | None:
    """Repeat each donor by its bootstrap multiplicity; ``None`` if all are zero.

    ``multiplicity`` is indexed by dataset position.
    """
    positions, records = [], []
    for p, r in zip(pool.positions, pool.records):
        k = int(multiplicity[p])
        positions.extend([p] * k)
        records.extend([r] * k)
    if not positions:
        return None
    return DonorPool(pool.target, tuple(positions), tuple(records), pool.rung_used, pool.rung)


def subject_bootstrap(dataset: PanelDataset, rng, eligible: np.ndarray) -> np.ndarray:
    """Bootstrap multiplicities for each subject's eligible records.

    Each subject with ``n`` eligible records receives ``n`` uniform draws with
    replacement among them. Returns an integer array over dataset positions
    (zero for ineligible records). Subjects are processed in roster order.
    """
    pos = np.flatnonzero(eligible)
    mult = np.zeros(len(dataset), dtype=np.int64)
    if pos.size == 0:
        return mult
    subj = dataset.subject_index[pos]
    # pos is sorted by subject because records are stored grouped by subject
    starts = np.flatnonzero(np.r_[True, subj[1:] != subj[:-1]])
    sizes = np.diff(np.r_[starts, pos.size])
    owner_start = np.repeat(starts, sizes)
    owner_size = np.repeat(sizes, sizes)
    u = rng.random(pos.size)
    pick = owner_start + np.minimum((u * owner_size).astype(np.int64), owner_size - 1)
    np.add.at(mult, pos[pick], 1)
    return mult
