import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import BB, FB, SW, residual_panel, sport_draw_panel, ladder_fixture, panel, rec
from hotdeck.donors import (
    DEFAULT_RADII,
    MatchLadder,
    MatchPredicate,
    NoDonors,
    PredicateKind,
    Rung,
    abb_resample,
    build_pool,
    count_ladder,
    frequency_ladder,
    restrict_pool,
    satisfies,
    sport_ladder,
    subject_bootstrap,
    window,
)

LADDERS = {"frequency": frequency_ladder, "sports": sport_ladder, "counts": count_ladder}


def test_window_counts():
    ds = panel(*[rec(w, 1, [BB], 1) for w in range(1, 16)])
    assert len(window(ds, "s1", 8, 7)) == 14
    assert window(panel(rec(8, 1)), "s1", 8, 7) == []
    ds = panel(*[rec(w, 1, [BB], 1) for w in (1, 2, 3, 20)])
    assert [r.week_index for r in window(ds, "s1", 3, 7)] == [1, 2]


def test_window_is_symmetric_and_excludes_self():
    ds = panel(*[rec(w, 1, [BB], 1) for w in range(0, 30)])
    got = {r.week_index for r in window(ds, "s1", 15, 12)}
    assert got == set(range(3, 28)) - {15}
    assert len(window(ds, "s1", 15, math.inf)) == 29


def test_eight_same_pain_donors():
    ds = residual_panel()
    pool = build_pool(ds, ds.get("s1", 8), frequency_ladder())
    assert pool.weeks == (1, 3, 4, 6, 7, 9, 10, 12)
    assert pool.rung_used == 0
    assert np.allclose(pool.weights, 1 / 8)


def test_closest_frequency_pool():
    ds = sport_draw_panel()
    pool = build_pool(ds, ds.get("s1", 6), sport_ladder())
    assert pool.weeks == (1, 2)
    assert {r.frequency for r in pool.records} == {3}


def test_single_record_has_no_donors():
    ds = panel(rec(1, None))
    with pytest.raises(NoDonors) as exc:
        build_pool(ds, ds.records[0], frequency_ladder())
    assert exc.value.targets == [("s1", 1)]


def test_ladder_shapes():
    assert len(frequency_ladder()) == 12
    assert [r.describe() for r in frequency_ladder()][:5] == [
        "exact_painx7", "exact_painx12", "exact_painx25", "exact_painxinf", "any_painx7",
    ]
    assert len(sport_ladder()) == len(count_ladder()) == 4
    with pytest.raises(ValueError):
        MatchLadder(())
    with pytest.raises(ValueError):
        MatchLadder((Rung(MatchPredicate(PredicateKind.ALL_ENTRIES), 12.0),
                     Rung(MatchPredicate(PredicateKind.ALL_ENTRIES), 7.0)))


def hand_pool(ds, target, variable, k):
    """Independent trace of which rung first yields donors and which weeks."""
    radii = list(DEFAULT_RADII)
    recs = [r for r in ds.subject_records("s1") if r.week_index != target.week_index]

    def near(r, rad):
        return abs(r.week_index - target.week_index) <= rad

    if variable == "frequency":
        groups = [
            lambda r: target.pain is not None and r.pain == target.pain,
            lambda r: target.pain is not None and r.pain is not None and r.pain.value != "none",
            lambda r: True,
        ]
        for g, pred in enumerate(groups):
            for i, rad in enumerate(radii):
                hit = [r.week_index for r in recs if near(r, rad) and r.frequency is not None and pred(r)]
                if hit:
                    return g * 4 + i, set(hit)
    elif variable == "sports":
        for i, rad in enumerate(radii):
            cand = [r for r in recs if near(r, rad) and r.frequency and r.sports]
            if cand:
                best = min(abs(r.frequency - target.frequency) for r in cand)
                return i, {r.week_index for r in cand if abs(r.frequency - target.frequency) == best}
    else:
        for i, rad in enumerate(radii):
            hit = [r.week_index for r in recs if near(r, rad) and r.sports and r.sports & target.sports]
            if hit:
                return i, set(hit)
    return None, set()


@pytest.mark.parametrize("variable, k", [(v, k) for v in LADDERS for k in range(4)] + [
    ("frequency", k) for k in (4, 5, 6, 7, 8, 9, 10, 11)
])
def test_ladder_rung_fixtures(variable, k):
    ds, key, weeks = ladder_fixture(variable, k)
    target = ds.get(*key)
    pool = build_pool(ds, target, LADDERS[variable]())
    assert pool.rung_used == k
    assert set(pool.weeks) == weeks
    assert hand_pool(ds, target, variable, k) == (k, weeks)
    for p in pool.positions:
        assert satisfies(ds, target, pool.rung, p)


def test_contains_any_sport_predicate():
    ds = panel(rec(1, 3, [BB, FB]), rec(2, 2, [FB], 2), rec(3, 2, [SW], 2), rec(4, 0, [], {}))
    pool = build_pool(ds, ds.get("s1", 1), count_ladder())
    assert pool.weeks == (2,)


def test_closest_frequency_matching_pain():
    ds = panel(rec(1, 2, pain="new"), rec(2, 2, [BB], 2, pain="none"), rec(3, 3, [FB], 3, pain="new"))
    t = ds.get("s1", 1)
    assert build_pool(ds, t, sport_ladder()).weeks == (2,)
    assert build_pool(ds, t, sport_ladder(match_pain=True)).weeks == (3,)


def test_abb_singleton_and_determinism():
    ds = residual_panel()
    pool = build_pool(ds, ds.get("s1", 8), frequency_ladder())
    single = build_pool(panel(rec(1, None), rec(2, 1, [BB], 1)), rec(1, None), frequency_ladder())
    assert abb_resample(single, np.random.default_rng(1)).positions == single.positions
    a = abb_resample(pool, np.random.default_rng(7))
    b = abb_resample(pool, np.random.default_rng(7))
    assert a.positions == b.positions
    assert len(a) == len(pool)
    assert set(a.positions) <= set(pool.positions)


def test_abb_expected_multiplicity():
    ds = panel(*[rec(w, 1, [BB], 1) for w in range(1, 5)], rec(5, None))
    pool = build_pool(ds, ds.get("s1", 5), frequency_ladder())
    assert len(pool) == 4
    rng = np.random.default_rng(2024)
    tally = np.zeros(len(ds))
    reps = 10_000
    for _ in range(reps):
        for p in abb_resample(pool, rng).positions:
            tally[p] += 1
    mult = tally[list(pool.positions)] / reps
    assert np.all(np.abs(mult - 1.0) < 0.05)


def test_restrict_pool():
    ds = residual_panel()
    pool = build_pool(ds, ds.get("s1", 8), frequency_ladder())
    mult = np.zeros(len(ds), dtype=int)
    assert restrict_pool(pool, mult) is None
    mult[pool.positions[0]] = 2
    mult[pool.positions[3]] = 1
    sub = restrict_pool(pool, mult)
    assert sub.positions == (pool.positions[0],) * 2 + (pool.positions[3],)


def test_subject_bootstrap_preserves_subject_totals():
    ds = residual_panel()
    elig = ds.frequencies >= 0
    mult = subject_bootstrap(ds, np.random.default_rng(3), elig)
    for sid in ds.roster:
        lo, hi = ds.subject_span(sid)
        assert mult[lo:hi].sum() == elig[lo:hi].sum()
    assert np.all(mult[~elig] == 0)


@settings(max_examples=100, deadline=None)
@given(
    freqs=st.lists(st.one_of(st.none(), st.integers(0, 8)), min_size=2, max_size=40),
    pains=st.lists(st.sampled_from(["none", "new", "old", None]), min_size=40, max_size=40),
    t=st.integers(0, 39),
)
def test_pool_members_always_satisfy_their_rung(freqs, pains, t):
    t = t % len(freqs)
    rows = []
    for w, f in enumerate(freqs):
        if w == t:
            rows.append(rec(w, None, pain=pains[w]))
        elif f is None:
            rows.append(rec(w, None, pain=pains[w]))
        else:
            rows.append(rec(w, f, [BB] if f else [], {BB: f} if f else {}, pain=pains[w]))
    ds = panel(*rows)
    target = ds.get("s1", t)
    try:
        pool = build_pool(ds, target, frequency_ladder())
    except NoDonors:
        assert all(r.frequency is None for r in ds)
        return
    assert all(r.frequency is not None and r.week_index != t for r in pool.records)
    assert all(satisfies(ds, target, pool.rung, p) for p in pool.positions)
    for earlier in list(frequency_ladder())[: pool.rung_used]:
        assert not any(satisfies(ds, target, earlier, p) for p in range(len(ds)))
