"""Synthetic panels with known truth, missingness amputation and method evaluation.

Generator (all constants live in :class:`GeneratorConfig`):

* subject ``i`` sits in class ``i % n_classes``; gender alternates between
  consecutive blocks of ``n_classes`` subjects, so each class has both;
* pain is a three-state Markov chain started from its stationary law. Each
  week new pain occurs with probability ``pain_incidence``; otherwise a week
  following a pain week is old pain with probability ``pain_persistence``,
  else no pain;
* latent activity ``base_level + a_i + seasonal(class, gender, week)
  - penalty(pain) + e``, with ``a_i ~ N(0, propensity_spread^2)``,
  ``e ~ N(0, noise_sd^2)``, seasonal term
  ``seasonal_amplitude * sin(2*pi*(week/season_length + phase))`` where the
  phase is ``class/n_classes`` plus ``gender_phase`` for ``F``, and penalty
  ``pain_effect`` for new pain and ``old_pain_fraction * pain_effect`` for old;
* frequency is the latent value rounded half up and clamped to ``[0, 8]``;
* each subject has sport preferences ``~ Dirichlet(preference_concentration)``;
  a week's ``frequency`` sessions are multinomial over those preferences, the
  sport set is the sports with at least one session and the counts are the
  session tallies.

Because ``frequency >= k`` iff ``latent >= k - 1/2`` for ``1 <= k <= 8``, the
expected frequency given the latent mean ``mu`` and total sd ``s`` is
``sum_k Phi((mu - k + 1/2) / s)``, which gives the analytic truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .engine import (
    DEFAULT_M,
    FrequencyPlan,
    ImputationRun,
    RunConfig,
    analyze,
    cluster_mean,
    pool_estimates,
    run_imputations,
)
from .panel import MAX_FREQUENCY, PainLevel, PanelDataset, Subject, WeekRecord

METHODS = ("CompleteCase", "MeanImputation", "LOCF", "HotDeckMI", "HotDeckMI_ABB")
MI_METHODS = ("HotDeckMI", "HotDeckMI_ABB")
_PAIN = (PainLevel.NO_PAIN, PainLevel.NEW_PAIN, PainLevel.OLD_PAIN)


class RateUnachievable(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_subjects: int = 500
    n_weeks: int = 40
    n_classes: int = 20
    n_sports: int = 10
    base_level: float = 2.5
    seasonal_amplitude: float = 1.0
    season_length: float = 52.0
    gender_phase: float = 0.1
    propensity_spread: float = 1.0
    noise_sd: float = 1.0
    pain_incidence: float = 0.1
    pain_persistence: float = 0.6
    pain_effect: float = 1.5
    old_pain_fraction: float = 0.5
    preference_concentration: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("n_subjects", "n_weeks", "n_classes", "n_sports"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("pain_incidence", "pain_persistence", "old_pain_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.propensity_spread < 0 or self.noise_sd < 0 or self.preference_concentration <= 0:
            raise ValueError("spreads must be >= 0 and concentration > 0")


@dataclass
class SyntheticTruth:
    config: GeneratorConfig
    mean_frequency: float
    weekly_means: np.ndarray
    pain_stationary: tuple[float, float, float]
    propensities: np.ndarray
    preferences: np.ndarray
    complete_mean_frequency: float


def pain_stationary(incidence: float, persistence: float) -> tuple[float, float, float]:
    """Stationary probabilities of (no pain, new pain, old pain)."""
    new = incidence
    stay = (1 - incidence) * persistence
    old = incidence * stay / (1 - stay) if stay < 1 else 0.0
    return (1 - new - old, new, old)


def subject_layout(config: GeneratorConfig) -> list[Subject]:
    return [
        Subject(
            f"s{i:04d}",
            f"c{i % config.n_classes:02d}",
            "F" if (i // config.n_classes) % 2 == 0 else "M",
        )
        for i in range(config.n_subjects)
    ]


def _seasonal(config: GeneratorConfig, klass: np.ndarray, female: np.ndarray, weeks: np.ndarray) -> np.ndarray:
    phase = klass / config.n_classes + np.where(female, config.gender_phase, 0.0)
    return config.seasonal_amplitude * np.sin(2 * np.pi * (weeks / config.season_length + phase))


def expected_frequency(mu: np.ndarray, sd: float) -> np.ndarray:
    """E[clamp(round_half_up(N(mu, sd^2)), 0, 8)]."""
    mu = np.asarray(mu, dtype=np.float64)
    k = np.arange(1, MAX_FREQUENCY + 1)
    z = mu[..., None] - k + 0.5
    if sd == 0:
        return (z >= 0).sum(axis=-1).astype(np.float64)
    return stats.norm.cdf(z / sd).sum(axis=-1)


def analytic_weekly_means(config: GeneratorConfig) -> np.ndarray:
    subs = subject_layout(config)
    klass = np.array([int(s.school_class_id[1:]) for s in subs], dtype=np.float64)
    female = np.array([s.gender == "F" for s in subs])
    weeks = np.arange(config.n_weeks, dtype=np.float64)
    season = _seasonal(config, klass[:, None], female[:, None], weeks[None, :])
    sd = math.hypot(config.propensity_spread, config.noise_sd)
    pi = pain_stationary(config.pain_incidence, config.pain_persistence)
    penalties = (0.0, config.pain_effect, config.old_pain_fraction * config.pain_effect)
    mean = np.zeros_like(season)
    for p, pen in zip(pi, penalties):
        if p > 0:
            mean += p * expected_frequency(config.base_level + season - pen, sd)
    return mean.mean(axis=0)


def generate_synthetic(config: GeneratorConfig) -> tuple[PanelDataset, SyntheticTruth]:
    rng = np.random.default_rng(config.seed)
    n, t = config.n_subjects, config.n_weeks
    subs = subject_layout(config)
    klass = np.array([int(s.school_class_id[1:]) for s in subs], dtype=np.float64)
    female = np.array([s.gender == "F" for s in subs])

    pi = pain_stationary(config.pain_incidence, config.pain_persistence)
    pain = np.zeros((n, t), dtype=np.int64)
    pain[:, 0] = rng.choice(3, size=n, p=pi)
    for w in range(1, t):
        u_new, u_old = rng.random(n), rng.random(n)
        prev_pain = pain[:, w - 1] > 0
        pain[:, w] = np.where(
            u_new < config.pain_incidence, 1,
            np.where(prev_pain & (u_old < config.pain_persistence), 2, 0),
        )

    propensity = rng.normal(0.0, config.propensity_spread, size=n) if config.propensity_spread > 0 else np.zeros(n)
    noise = rng.normal(0.0, config.noise_sd, size=(n, t)) if config.noise_sd > 0 else np.zeros((n, t))
    weeks = np.arange(t, dtype=np.float64)
    penalty = np.select(
        [pain == 1, pain == 2],
        [config.pain_effect, config.old_pain_fraction * config.pain_effect],
        0.0,
    )
    latent = (
        config.base_level
        + propensity[:, None]
        + _seasonal(config, klass[:, None], female[:, None], weeks[None, :])
        - penalty
        + noise
    )
    freq = np.clip(np.floor(latent + 0.5), 0, MAX_FREQUENCY).astype(np.int64)

    prefs = rng.dirichlet(np.full(config.n_sports, config.preference_concentration), size=n)
    sessions = rng.multinomial(freq, prefs[:, None, :])  # (n, t, K)

    records = []
    for i, s in enumerate(subs):
        for w in range(t):
            row = sessions[i, w]
            nz = np.flatnonzero(row)
            counts = {int(k) + 1: int(row[k]) for k in nz}
            records.append(
                WeekRecord(
                    s.subject_id, s.school_class_id, s.gender, w, _PAIN[pain[i, w]],
                    int(freq[i, w]), frozenset(counts), counts,
                )
            )
    dataset = PanelDataset(records, subs, range(1, config.n_sports + 1))
    weekly = analytic_weekly_means(config)
    truth = SyntheticTruth(
        config, float(weekly.mean()), weekly, pi, propensity, prefs, float(freq.mean())
    )
    return dataset, truth


# -- amputation -------------------------------------------------------------

AMPUTABLE = ("frequency", "sports", "counts")


@dataclass(frozen=True)
class AmputationSpec:
    """Which cells to delete and how.

    Under MAR the deletion probability for an eligible cell is
    ``logistic(intercept + new_pain_weight*[new] + old_pain_weight*[old]
    + week_weight*(week/(n_weeks-1) - 1/2))`` with the intercept solved so
    the mean probability equals ``rate``. Each listed variable is amputed in
    turn among cells still observed; deleting a frequency also deletes the
    week's sports and counts, and deleting sports also deletes counts.
    """

    mechanism: str = "MCAR"
    variables: tuple[str, ...] = ("frequency",)
    rate: float = 0.2
    new_pain_weight: float = 1.5
    old_pain_weight: float = 1.0
    week_weight: float = 0.5

    def __post_init__(self):
        if self.mechanism not in ("MCAR", "MAR"):
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        bad = set(self.variables) - set(AMPUTABLE)
        if bad:
            raise ValueError(f"cannot ampute {sorted(bad)}")


@dataclass
class AmputationMask:
    frequency: np.ndarray
    sports: np.ndarray
    counts: np.ndarray

    def count(self) -> dict[str, int]:
        return {v: int(getattr(self, v).sum()) for v in AMPUTABLE}


def mar_probabilities(dataset: PanelDataset, spec: AmputationSpec, eligible: np.ndarray) -> np.ndarray:
    """Per-record deletion probabilities, zero where not eligible."""
    probs = np.zeros(len(dataset))
    n_el = int(eligible.sum())
    if spec.rate == 0 or n_el == 0:
        if spec.rate > 0:
            raise RateUnachievable("no eligible cells to delete")
        return probs
    if not 0 <= spec.rate <= 1:
        raise RateUnachievable(f"rate {spec.rate} outside [0, 1]")
    if spec.mechanism == "MCAR":
        probs[eligible] = spec.rate
        return probs
    if spec.rate == 1:
        probs[eligible] = 1.0
        return probs
    pain = dataset.pain_codes[eligible]
    if (pain < 0).any():
        raise RateUnachievable("MAR amputation needs observed pain")
    weeks = dataset.weeks[eligible].astype(np.float64)
    span = max(weeks.max() - weeks.min(), 1.0)
    lin = (
        spec.new_pain_weight * (pain == 1)
        + spec.old_pain_weight * (pain == 2)
        + spec.week_weight * ((weeks - weeks.min()) / span - 0.5)
    )

    def gap(a: float) -> float:
        return float(np.mean(1 / (1 + np.exp(-(a + lin))))) - spec.rate

    try:
        a = optimize.brentq(gap, -60.0, 60.0, xtol=1e-12)
    except ValueError as exc:
        raise RateUnachievable(f"cannot calibrate MAR rate {spec.rate}") from exc
    probs[eligible] = 1 / (1 + np.exp(-(a + lin)))
    return probs


def ampute(dataset: PanelDataset, spec: AmputationSpec, seed: int) -> tuple[PanelDataset, AmputationMask]:
    rng = np.random.default_rng(seed)
    n = len(dataset)
    recs = dataset.records
    drop = {v: np.zeros(n, dtype=bool) for v in AMPUTABLE}
    present = {
        "frequency": dataset.frequencies >= 0,
        "sports": np.array([r.sports is not None for r in recs], dtype=bool),
        "counts": np.array([r.counts is not None for r in recs], dtype=bool),
    }
    for var in AMPUTABLE:
        if var not in spec.variables:
            continue
        eligible = present[var] & ~drop[var]
        probs = mar_probabilities(dataset, spec, eligible)
        hit = rng.random(n) < probs
        chain = AMPUTABLE[AMPUTABLE.index(var):]
        for v in chain:
            drop[v] |= hit & present[v]
    if not any(d.any() for d in drop.values()):
        return dataset, AmputationMask(**drop)
    updates = {}
    for p in np.flatnonzero(drop["frequency"] | drop["sports"] | drop["counts"]):
        r = recs[p]
        updates[int(p)] = replace(
            r,
            frequency=None if drop["frequency"][p] else r.frequency,
            sports=None if drop["sports"][p] else r.sports,
            counts=None if drop["counts"][p] else r.counts,
        )
    return dataset.replace_records(updates), AmputationMask(**drop)


# -- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class MethodRun:
    sim: int
    method: str
    estimate: float
    variance: float
    lower: float
    upper: float
    truth: float
    between: float = math.nan
    within: float = math.nan

    @property
    def covered(self) -> bool:
        return self.lower <= self.truth <= self.upper


@dataclass(frozen=True)
class MethodSummary:
    method: str
    bias: float
    rmse: float
    coverage: float
    mean_width: float
    n: int
    mean_between: float = math.nan
    mean_within: float = math.nan


@dataclass
class EvaluationReport:
    summaries: dict[str, MethodSummary]
    runs: list[MethodRun]
    truths: list[float]
    estimand: str
    generator: GeneratorConfig
    amputation: AmputationSpec

    def __getitem__(self, method: str) -> MethodSummary:
        return self.summaries[method]

    def rows(self) -> list[list[str]]:
        head = ["method", "bias", "rmse", "coverage", "mean_width", "n_sim", "mean_B", "mean_W"]
        out = [head]
        for s in self.summaries.values():
            out.append(
                [s.method, f"{s.bias:.6f}", f"{s.rmse:.6f}", f"{s.coverage:.4f}",
                 f"{s.mean_width:.6f}", str(s.n), f"{s.mean_between:.6g}", f"{s.mean_within:.6g}"]
            )
        return out

    def to_delimited(self, sep: str = ",") -> str:
        return "\n".join(sep.join(r) for r in self.rows()) + "\n"

    def to_text(self) -> str:
        rows = self.rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [
            f"estimand={self.estimand} mechanism={self.amputation.mechanism} "
            f"rate={self.amputation.rate} n_subjects={self.generator.n_subjects} "
            f"n_weeks={self.generator.n_weeks}"
        ]
        for r in rows:
            lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
        return "\n".join(lines) + "\n"


def _normal_interval(est: float, var: float) -> tuple[float, float]:
    half = 1.959963984540054 * math.sqrt(max(var, 0.0))
    return est - half, est + half


def _locf(freq: np.ndarray, subject_index: np.ndarray, fill: float) -> np.ndarray:
    """Carry the last observed value forward within subject.

    Leading gaps take the next observation; subjects with nothing observed
    take ``fill``.
    """
    out = freq.astype(np.float64)
    out[freq < 0] = np.nan
    for lo, hi in _spans(subject_index):
        seg = out[lo:hi]
        obs = np.flatnonzero(~np.isnan(seg))
        if obs.size == 0:
            seg[:] = fill
            continue
        idx = np.where(~np.isnan(seg), np.arange(seg.size), -1)
        idx = np.maximum.accumulate(idx)
        idx[idx < 0] = obs[0]
        out[lo:hi] = seg[idx]
    return out


def _spans(subject_index: np.ndarray):
    edges = np.flatnonzero(np.r_[True, subject_index[1:] != subject_index[:-1], True])
    return zip(edges[:-1], edges[1:])


def _mean_frequency_runs(
    sim: int,
    amputed: PanelDataset,
    truth: float,
    methods: Sequence[str],
    run_config: RunConfig,
) -> list[MethodRun]:
    freq = amputed.frequencies
    subj = amputed.subject_index
    obs = freq >= 0
    out = []
    cc_est, cc_var = cluster_mean(freq[obs], subj[obs])
    plan = None
    for method in methods:
        if method == "CompleteCase":
            est, var = cc_est, cc_var
        elif method == "MeanImputation":
            filled = np.where(obs, freq, cc_est)
            est, var = cluster_mean(filled, subj)
        elif method == "LOCF":
            est, var = cluster_mean(_locf(freq, subj, cc_est), subj)
        elif method in MI_METHODS:
            cfg = replace(run_config, abb=(method == "HotDeckMI_ABB"))
            # pools do not depend on the ABB flag, so both MI methods share them
            plan = plan or FrequencyPlan(amputed, cfg)
            pooled = pool_estimates(mi_mean_frequency(amputed, cfg, plan))
            out.append(
                MethodRun(sim, method, pooled.Q_bar, pooled.T, *pooled.ci_95, truth, pooled.B, pooled.W_bar)
            )
            continue
        else:
            raise ValueError(f"unknown method {method!r}")
        out.append(MethodRun(sim, method, est, var, *_normal_interval(est, var), truth))
    return out


def mi_mean_frequency(
    amputed: PanelDataset, config: RunConfig, plan: FrequencyPlan | None = None
) -> list[tuple[float, float]]:
    """Per-replicate mean frequency and variance, running only the frequency stage.

    Frequency draws come first in every replicate and use their own stream,
    so these values equal those of a full :func:`run_imputations` run.
    """
    run = ImputationRun(amputed, config, validate=False, freq_plan=plan)
    base = amputed.frequencies
    subj = amputed.subject_index
    pairs = []
    for m in range(1, config.M + 1):
        values, _, _ = run.frequency_draws(m)
        filled = base.copy()
        filled[run.freq_plan.targets] = values
        pairs.append(cluster_mean(filled, subj))
    return pairs


def _generic_runs(
    sim: int,
    amputed: PanelDataset,
    complete: PanelDataset,
    methods: Sequence[str],
    run_config: RunConfig,
    estimand: str,
) -> list[MethodRun]:
    truth, _ = analyze(complete, estimand)
    out = []
    for method in methods:
        if method not in MI_METHODS:
            raise ValueError(f"method {method} only supports the mean_frequency estimand")
        cfg = replace(run_config, abb=(method == "HotDeckMI_ABB"))
        pooled = pool_estimates([analyze(r.dataset, estimand) for r in run_imputations(amputed, cfg)])
        out.append(MethodRun(sim, method, pooled.Q_bar, pooled.T, *pooled.ci_95, truth, pooled.B, pooled.W_bar))
    return out


def simulation_seeds(seed: int, sim: int) -> tuple[int, int, int]:
    """(generator, amputation, imputation) seeds for one simulation replicate."""
    words = np.random.SeedSequence(seed, spawn_key=(sim,)).generate_state(3, dtype=np.uint64)
    return tuple(int(w) for w in words)


def simulate_once(
    sim: int,
    generator: GeneratorConfig,
    amputation: AmputationSpec,
    methods: Sequence[str],
    estimand: str,
    run_config: RunConfig,
    seed: int,
) -> list[MethodRun]:
    g_seed, a_seed, i_seed = simulation_seeds(seed, sim)
    complete, truth = generate_synthetic(replace(generator, seed=g_seed))
    amputed, _ = ampute(complete, amputation, a_seed)
    cfg = replace(run_config, master_seed=i_seed)
    if estimand == "mean_frequency":
        return _mean_frequency_runs(sim, amputed, truth.mean_frequency, methods, cfg)
    return _generic_runs(sim, amputed, complete, methods, cfg, estimand)


def summarize(runs: Sequence[MethodRun], methods: Sequence[str]) -> dict[str, MethodSummary]:
    out = {}
    for method in methods:
        rs = [r for r in runs if r.method == method]
        err = np.array([r.estimate - r.truth for r in rs])
        out[method] = MethodSummary(
            method,
            float(err.mean()),
            float(np.sqrt(np.mean(err**2))),
            float(np.mean([r.covered for r in rs])),
            float(np.mean([r.upper - r.lower for r in rs])),
            len(rs),
            float(np.mean([r.between for r in rs])),
            float(np.mean([r.within for r in rs])),
        )
    return out


def evaluate(
    generator: GeneratorConfig,
    amputation: AmputationSpec,
    methods: Sequence[str] = METHODS,
    n_sim: int = 200,
    estimand: str = "mean_frequency",
    run_config: RunConfig | None = None,
    seed: int = 0,
    progress=None,
) -> EvaluationReport:
    """Monte Carlo comparison of imputation methods against known truth."""
    if not methods:
        raise ValueError("at least one method is required")
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    run_config = run_config or RunConfig(M=DEFAULT_M)
    runs: list[MethodRun] = []
    truths: list[float] = []
    for sim in range(n_sim):
        sim_runs = simulate_once(sim, generator, amputation, methods, estimand, run_config, seed)
        runs.extend(sim_runs)
        truths.append(sim_runs[0].truth)
        if progress:
            progress(sim)
    return EvaluationReport(summarize(runs, methods), runs, truths, estimand, generator, amputation)

