"""Multiple imputation driver, built-in analyses and pooling of estimates.

Each replicate imputes in a fixed stage order (frequency, then sports, then
counts). Donor pools are built from the originally observed data only, so
they are computed once per run and reused by every replicate; only the
random draws differ between replicates.

Random streams are keyed, not sequential: replicate ``m`` and stage ``s``
read from ``SeedSequence(master_seed, spawn_key=(m, s))``, and targets draw
from their stage stream in a fixed (roster, week) order. A replicate's output
therefore does not depend on which other replicates ran, or where.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .counts import counts_from_pool
from .donors import (
    DonorPool,
    MatchLadder,
    NoDonors,
    build_pool,
    count_ladder,
    frequency_ladder,
    pick_index,
    restrict_pool,
    sport_ladder,
    subject_bootstrap,
)
from .frequency import FrequencyMethod, MedianTable, candidate_values
from .panel import (
    PanelDataset,
    ValidationReport,
    Violation,
    WeekRecord,
    validate_completed,
    validate_record,
)
from .sports import PROPORTION_RADIUS, SportDraw, choose_sports

log = logging.getLogger(__name__)

STAGES = {"frequency": 0, "sports": 1, "counts": 2, "abb": 3}
DEFAULT_M = 20


class InsufficientReplicates(ValueError):
    pass


class UnknownAnalysis(ValueError):
    pass


class DataError(ValueError):
    """Input data violates the panel constraints."""

    def __init__(self, report: ValidationReport | str):
        self.report = report
        if isinstance(report, ValidationReport):
            lines = [f"{v.subject_id}@{v.week_index}: {v.code} ({v.detail})" for v in list(report)[:20]]
            msg = "invalid input data:\n  " + "\n  ".join(lines)
        else:
            msg = report
        super().__init__(msg)


@dataclass(frozen=True)
class RunConfig:
    M: int = DEFAULT_M
    master_seed: int = 0
    frequency_ladder: MatchLadder = field(default_factory=frequency_ladder)
    sport_ladder: MatchLadder = field(default_factory=sport_ladder)
    count_ladder: MatchLadder = field(default_factory=count_ladder)
    frequency_method: FrequencyMethod = FrequencyMethod.RESIDUAL
    abb: bool = False
    chaining: bool = True
    keep_multiplicity: bool = False
    median_exclude_self: bool = False
    proportion_radius: float = PROPORTION_RADIUS
    analyses: tuple[str, ...] = ("mean_frequency",)

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "frequency_method", FrequencyMethod(self.frequency_method))


def stage_rng(master_seed: int, replicate: int, stage: str) -> np.random.Generator:
    """Independent generator keyed by (seed, replicate, stage)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(replicate, STAGES[stage]))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class ProvenanceRow:
    replicate: int
    variable: str
    subject_id: str
    week_index: int
    value: str
    rung: int | None
    rung_label: str
    donor_weeks: tuple[int, ...]
    fallbacks: tuple[str, ...]
    seed_key: str


@dataclass
class ReplicateResult:
    m: int
    dataset: PanelDataset
    provenance: list[ProvenanceRow]


def check_input(dataset: PanelDataset) -> None:
    """Reject records breaking a hard constraint or the skip pattern."""
    report = ValidationReport()
    for rec in dataset:
        report.extend(validate_record(rec, dataset.sport_codes))
        if rec.counts is not None and rec.sports is None:
            report.violations.append(
                _violation(rec, "structural", "counts observed without sports")
            )
        if rec.sports is not None and rec.frequency is None:
            report.violations.append(
                _violation(rec, "structural", "sports observed without frequency")
            )
    if report:
        raise DataError(report)


def _violation(rec: WeekRecord, code: str, detail: str) -> Violation:
    return Violation(code, rec.subject_id, rec.week_index, detail)


# -- frequency stage --------------------------------------------------------

class FrequencyPlan:
    """Donor pools and candidate values for every missing frequency.

    Pools are stored flat (CSR style) so a whole replicate is drawn with a
    handful of vectorised operations.
    """

    def __init__(self, dataset: PanelDataset, config: RunConfig):
        self.dataset = dataset
        self.medians = MedianTable(dataset, exclude_self=config.median_exclude_self)
        self.targets = np.flatnonzero(dataset.frequencies < 0)
        self.pools: list[DonorPool] = []
        self.fallbacks: list[str | None] = []
        values, positions, sizes, failed = [], [], [], []
        for p in self.targets:
            rec = dataset.records[p]
            try:
                pool = build_pool(dataset, rec, config.frequency_ladder)
            except NoDonors:
                failed.append(rec.key)
                continue
            vals, fb = candidate_values(rec, pool, self.medians, config.frequency_method)
            if fb:
                log.info("frequency for %s: %s", rec.key, fb)
            self.pools.append(pool)
            self.fallbacks.append(fb)
            values.append(vals)
            positions.append(np.asarray(pool.positions, dtype=np.int64))
            sizes.append(len(pool))
        if failed:
            raise NoDonors(failed, "frequency")
        self.sizes = np.asarray(sizes, dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)
        self.flat_values = np.concatenate(values) if values else np.zeros(0, np.int64)
        self.flat_positions = np.concatenate(positions) if positions else np.zeros(0, np.int64)

    def __len__(self) -> int:
        return len(self.targets)

    def draw(self, rng, multiplicity: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Choose one donor entry per target.

        Returns (imputed values, chosen flat entry index, bootstrap-empty flags).
        With ``multiplicity`` each entry is weighted by its donor's bootstrap
        count; targets whose donors all have count zero fall back to uniform.
        """
        n = len(self.targets)
        empty = np.zeros(n, dtype=bool)
        if n == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), empty
        u = rng.random(n)
        plain = self.starts + np.minimum((u * self.sizes).astype(np.int64), self.sizes - 1)
        if multiplicity is None:
            return self.flat_values[plain], plain, empty
        w = multiplicity[self.flat_positions].astype(np.float64)
        cw = np.concatenate([[0.0], np.cumsum(w)])
        lo, hi = cw[self.starts], cw[self.starts + self.sizes]
        total = hi - lo
        empty = total <= 0
        idx = np.searchsorted(cw, lo + u * total, side="right") - 1
        idx = np.clip(idx, self.starts, self.starts + self.sizes - 1)
        chosen = np.where(empty, plain, idx)
        return self.flat_values[chosen], chosen, empty


# -- full replicate ---------------------------------------------------------

class ImputationRun:
    """Everything shared by the replicates of one run."""

    def __init__(
        self,
        dataset: PanelDataset,
        config: RunConfig,
        validate: bool = True,
        freq_plan: FrequencyPlan | None = None,
    ):
        if validate:
            check_input(dataset)
        self.dataset = dataset
        self.config = config
        self.freq_plan = freq_plan or FrequencyPlan(dataset, config)
        self._sport_pools: dict[tuple[int, int], DonorPool | None] = {}
        self._count_pools: dict[tuple[int, frozenset], DonorPool | None] = {}

    def bootstrap(self, m: int) -> np.ndarray | None:
        if not self.config.abb:
            return None
        rng = stage_rng(self.config.master_seed, m, "abb")
        return subject_bootstrap(self.dataset, rng, self.dataset.frequencies >= 0)

    def frequency_draws(self, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = stage_rng(self.config.master_seed, m, "frequency")
        return self.freq_plan.draw(rng, self.bootstrap(m))

    def _pool(self, cache: dict, key, target: WeekRecord, ladder: MatchLadder) -> DonorPool | None:
        if key not in cache:
            try:
                cache[key] = build_pool(self.dataset, target, ladder)
            except NoDonors:
                cache[key] = None
        return cache[key]

    def replicate(self, m: int) -> ReplicateResult:
        cfg, ds = self.config, self.dataset
        seed = cfg.master_seed
        mult = self.bootstrap(m)
        rows: list[ProvenanceRow] = []
        work: dict[int, WeekRecord] = {}

        def add_row(var, rec, value, pool, donors, fallbacks, stage):
            rows.append(
                ProvenanceRow(
                    m, var, rec.subject_id, rec.week_index, value,
                    None if pool is None else pool.rung_used,
                    "" if pool is None else pool.rung.describe(),
                    tuple(donors), tuple(f for f in fallbacks if f), f"{seed}/{m}/{stage}",
                )
            )

        def restrict(pool: DonorPool) -> tuple[DonorPool, str | None]:
            if mult is None:
                return pool, None
            sub = restrict_pool(pool, mult)
            return (pool, "abb_empty") if sub is None else (sub, None)

        # frequency
        values, chosen, empty = self.freq_plan.draw(
            stage_rng(seed, m, "frequency"), mult
        )
        plan = self.freq_plan
        for k, pos in enumerate(plan.targets):
            rec = ds.records[pos]
            work[pos] = replace(rec, frequency=int(values[k]))
            pool = plan.pools[k]
            donor_pos = int(plan.flat_positions[chosen[k]])
            add_row(
                "frequency", rec, str(int(values[k])), pool, [ds.records[donor_pos].week_index],
                [plan.fallbacks[k], "abb_empty" if empty[k] else None], "frequency",
            )

        # sports
        rng = stage_rng(seed, m, "sports")
        for pos, rec in enumerate(ds.records):
            if rec.sports is not None:
                continue
            cur = work.get(pos, rec)
            if cur.frequency == 0:
                work[pos] = replace(cur, sports=frozenset(), counts={})
                add_row("sports", rec, "", None, [], ["zero_frequency"], "sports")
                continue
            pool = self._pool(self._sport_pools, (pos, cur.frequency), cur, cfg.sport_ladder)
            if pool is None:
                raise NoDonors([rec.key], "sports")
            pool, fb = restrict(pool)
            donor = pool.records[pick_index(rng, len(pool))]
            draw: SportDraw = choose_sports(
                ds, cur, donor, rng, pool.rung_used, pool.rung.radius,
                cfg.keep_multiplicity, cfg.proportion_radius,
            )
            work[pos] = replace(cur, sports=draw.sports, counts=draw.counts)
            add_row(
                "sports", rec, _fmt_codes(draw.sports), pool, [draw.donor_week],
                [fb, draw.fallback, draw.branch if draw.branch != "copy" else None], "sports",
            )

        # counts, chronological within subject
        rng = stage_rng(seed, m, "counts")
        chain: dict[str, dict[int, dict[int, int]]] = {}
        for pos, rec in enumerate(ds.records):
            cur = work.get(pos, rec)
            if cur.counts is not None:
                continue
            if cur.frequency == len(cur.sports) or len(cur.sports) == 1:
                share = 1 if cur.frequency == len(cur.sports) else cur.frequency
                counts = {s: share for s in sorted(cur.sports)}
                work[pos] = replace(cur, counts=counts)
                add_row("counts", rec, _fmt_counts(counts), None, [], ["forced"], "counts")
                continue
            key = (pos, frozenset(cur.sports))
            pool = self._pool(self._count_pools, key, cur, cfg.count_ladder)
            fb = None
            if pool is not None:
                pool, fb = restrict(pool)
            done = chain.setdefault(rec.subject_id, {})
            draw = counts_from_pool(cur, pool, rng, done if cfg.chaining else None)
            if rec.sports is not None:
                done[rec.week_index] = draw.counts
            work[pos] = replace(cur, counts=draw.counts)
            add_row(
                "counts", rec, _fmt_counts(draw.counts), pool, sorted(set(draw.donor_weeks)),
                [fb, draw.fallback], "counts",
            )

        completed = ds.replace_records(work) if work else ds
        report = validate_completed(completed)
        if report:
            raise RuntimeError(f"replicate {m} failed validation: {report.codes()[:5]}")
        return ReplicateResult(m, completed, rows)


def _fmt_codes(codes: Iterable[int]) -> str:
    return ";".join(str(c) for c in sorted(codes))


def _fmt_counts(counts: dict[int, int]) -> str:
    return ";".join(f"{s}:{c}" for s, c in sorted(counts.items()))


def _run_one(args: tuple[ImputationRun, int]) -> ReplicateResult:
    run, m = args
    return run.replicate(m)


def run_imputations(
    dataset: PanelDataset, config: RunConfig, workers: int = 1
) -> list[ReplicateResult]:
    """Create ``config.M`` completed datasets (replicates numbered from 1)."""
    run = ImputationRun(dataset, config)
    ms = range(1, config.M + 1)
    if workers <= 1:
        return [run.replicate(m) for m in ms]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, [(run, m) for m in ms]))


# -- analyses ---------------------------------------------------------------

def cluster_mean(values: np.ndarray, clusters: np.ndarray) -> tuple[float, float]:
    """Mean and its cluster-robust (sandwich) variance."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n == 0:
        return math.nan, math.nan
    mean = float(values.mean())
    _, inv = np.unique(clusters, return_inverse=True)
    g = int(inv.max()) + 1
    if g < 2:
        var = float(values.var(ddof=1) / n) if n > 1 else 0.0
        return mean, var
    sums = np.bincount(inv, weights=values - mean, minlength=g)
    var = g / (g - 1) * float(np.sum(sums**2)) / n**2
    return mean, var


def _parse_analysis(spec: str) -> tuple[str, int | None]:
    name, _, arg = spec.partition(":")
    if name == "mean_frequency" and not arg:
        return name, None
    if name in ("sport_proportion", "mean_count") and arg.strip().isdigit():
        return name, int(arg)
    raise UnknownAnalysis(f"unknown analysis {spec!r}")


def analysis_values(dataset: PanelDataset, spec: str) -> np.ndarray:
    """Per subject-week outcome for an analysis (must be complete data)."""
    name, sport = _parse_analysis(spec)
    recs = dataset.records
    if name == "mean_frequency":
        if any(r.frequency is None for r in recs):
            raise ValueError("analysis requires observed frequencies")
        return dataset.frequencies.astype(np.float64)
    if any(r.sports is None or r.counts is None for r in recs):
        raise ValueError("analysis requires completed sports and counts")
    if name == "sport_proportion":
        return np.array([float(sport in r.sports) for r in recs])
    return np.array([float(r.counts.get(sport, 0)) for r in recs])


def analyze(dataset: PanelDataset, spec: str = "mean_frequency") -> tuple[float, float]:
    """Point estimate and sampling variance (clustered by subject).

    ``spec`` is ``mean_frequency``, ``sport_proportion:<code>`` or
    ``mean_count:<code>``.
    """
    return cluster_mean(analysis_values(dataset, spec), dataset.subject_index)


@dataclass(frozen=True)
class PooledEstimate:
    Q_bar: float
    W_bar: float
    B: float
    T: float
    df: float
    ci_95: tuple[float, float]
    M: int

    @property
    def se(self) -> float:
        return math.sqrt(self.T)


def pool_estimates(pairs: Sequence[tuple[float, float]]) -> PooledEstimate:
    """Combine per-replicate (estimate, variance) pairs with Rubin's rules."""
    if len(pairs) < 2:
        raise InsufficientReplicates(f"need at least 2 replicates, got {len(pairs)}")
    q = np.array([p[0] for p in pairs], dtype=np.float64)
    u = np.array([p[1] for p in pairs], dtype=np.float64)
    m = q.size
    q_bar = float(q.mean())
    w_bar = float(u.mean())
    b = float(q.var(ddof=1))
    if np.all(q == q[0]):
        b = 0.0
    t = w_bar + (1 + 1 / m) * b
    if b > 0:
        df = (m - 1) * (1 + w_bar / ((1 + 1 / m) * b)) ** 2
        crit = float(stats.t.ppf(0.975, df))
    else:
        df = math.inf
        crit = float(stats.norm.ppf(0.975))
    half = crit * math.sqrt(t)
    return PooledEstimate(q_bar, w_bar, b, t, df, (q_bar - half, q_bar + half), m)


def pool_results(results: Sequence[ReplicateResult], spec: str = "mean_frequency") -> PooledEstimate:
    return pool_estimates([analyze(r.dataset, spec) for r in results])

