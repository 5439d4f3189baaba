from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import BB, FB, SW, ScriptedRng, sport_draw_panel, panel, rec, uniform_for, uniform_for_table
from hotdeck.donors import sport_ladder, window
from hotdeck.sports import (
    EmptyEvidence,
    SportProbabilityTable,
    choose_sports,
    impute_sports,
    sport_proportions,
    week_contributions,
)

A, B = 4, 5


def test_worked_example_proportions():
    ds = sport_draw_panel()
    table = sport_proportions(window(ds, "s1", 6, 7), [BB, FB, SW])
    assert table.entries == {BB: Fraction(21, 38), FB: Fraction(15, 38), SW: Fraction(1, 19)}
    assert table.totals == {BB: Fraction(21, 2), FB: Fraction(15, 2), SW: 1}
    assert [round(float(p), 2) for p in table.entries.values()] == [0.55, 0.39, 0.05]


def test_single_sport_window():
    ds = panel(rec(1, 2, [A], 2), rec(2, 3, [A], 3))
    assert sport_proportions(ds.records, [A]).entries == {A: 1}


def test_equal_division_rule():
    ds = panel(rec(1, 4, [A, B]), rec(2, 2, [A], {A: 2}))
    t = sport_proportions(ds.records, [A, B])
    assert t.entries == {A: Fraction(4, 6), B: Fraction(2, 6)}


def tally(records, support):
    """Brute-force oracle: expand each week into its sessions."""
    got = Counter()
    for r in records:
        if not r.sports:
            continue
        if r.counts is not None:
            for s in r.sports:
                got[s] += Fraction(r.counts[s])
        else:
            for s in r.sports:
                got[s] += Fraction(r.frequency, len(r.sports))
    tot = sum(got[s] for s in support)
    return {s: got[s] / tot for s in sorted(support)}


week = st.integers(1, 8).flatmap(
    lambda f: st.tuples(
        st.just(f),
        st.frozensets(st.integers(1, 5), min_size=1, max_size=min(f, 5)),
        st.booleans(),
    )
)


@settings(max_examples=150, deadline=None)
@given(st.lists(week, min_size=1, max_size=10), st.frozensets(st.integers(1, 5), min_size=1))
def test_proportions_match_tally(weeks, support):
    rows = []
    for i, (f, s, known) in enumerate(weeks):
        counts = None
        if known:
            counts = {x: 1 for x in s}
            counts[min(s)] += f - len(s)
        rows.append(rec(i, f, s, counts))
    ds = panel(*rows)
    if not any(r.sports & support for r in ds):
        with pytest.raises(EmptyEvidence):
            sport_proportions(ds.records, support)
        return
    assert sport_proportions(ds.records, support).entries == tally(ds.records, support)


def test_week_contributions():
    assert week_contributions(rec(1, 3, [BB, FB])) == {BB: Fraction(3, 2), FB: Fraction(3, 2)}
    assert week_contributions(rec(1, 3, [BB, FB]), {BB: 2, FB: 1}) == {BB: 2, FB: 1}
    assert week_contributions(rec(1, 0, [], {})) == {}


def test_copy_branch():
    ds = panel(rec(1, 2, [BB, SW], 1), rec(2, 2, [FB], {FB: 2}), rec(3, 2), rec(4, 5, [SW], {SW: 5}))
    rng = ScriptedRng([uniform_for(1, 2)])
    d = impute_sports(ds, ds.get("s1", 3), sport_ladder(), rng)
    assert (d.branch, d.donor_week, d.sports) == ("copy", 2, frozenset({FB}))
    assert d.counts is None  # one sport, two sessions: left for the count stage
    d = impute_sports(ds, ds.get("s1", 3), sport_ladder(), ScriptedRng([uniform_for(0, 2)]))
    assert d.sports == {BB, SW} and d.counts == {BB: 1, SW: 1}


def test_proportional_branch_forced_draws():
    ds = sport_draw_panel()
    target = ds.get("s1", 6)
    table = sport_proportions(window(ds, "s1", 6, 7), [BB, FB, SW])
    rng = ScriptedRng([uniform_for(0, 2), uniform_for_table(table, BB), uniform_for_table(table, FB)])
    d = impute_sports(ds, target, sport_ladder(), rng)
    assert d.branch == "proportional" and d.donor_week == 1
    assert d.table.entries == table.entries
    assert d.drawn == (BB, FB)
    assert d.sports == {BB, FB} and d.counts == {BB: 1, FB: 1}


def test_duplicate_draw_leaves_counts_open():
    ds = sport_draw_panel()
    table = sport_proportions(window(ds, "s1", 6, 7), [BB, FB, SW])
    u = uniform_for_table(table, BB)
    d = choose_sports(ds, ds.get("s1", 6), ds.get("s1", 1), ScriptedRng([u, u]))
    assert d.sports == {BB} and d.counts is None
    d = choose_sports(ds, ds.get("s1", 6), ds.get("s1", 1), ScriptedRng([u, u]), keep_multiplicity=True)
    assert d.counts == {BB: 2}


def test_zero_frequency_target():
    ds = panel(rec(1, 0), rec(2, 3, [BB], 3))
    d = impute_sports(ds, ds.get("s1", 1), sport_ladder(), ScriptedRng([]))
    assert d.sports == frozenset() and d.counts == {}


def test_widened_and_uniform_fallbacks():
    # donor at distance 20 with sports nobody else in +-7 played
    ds = panel(rec(1, 1), rec(21, 3, [A, B, SW], 1))
    d = choose_sports(ds, ds.get("s1", 1), ds.get("s1", 21), ScriptedRng([0.1]), 2, 25)
    assert d.fallback == "proportion_window_widened"
    d = choose_sports(ds, ds.get("s1", 1), ds.get("s1", 21), ScriptedRng([0.1]), 0, 7)
    assert d.fallback == "uniform_proportions"
    assert d.table.entries == {A: Fraction(1, 3), B: Fraction(1, 3), SW: Fraction(1, 3)}


def test_table_draw_is_inverse_cdf():
    t = SportProbabilityTable.from_totals({1: 1, 2: 3}, [1, 2])
    assert t.draw(ScriptedRng([0.0, 0.2499, 0.25, 0.99]), 4) == [1, 1, 2, 2]
    with pytest.raises(EmptyEvidence):
        SportProbabilityTable.from_totals({1: 0}, [1, 2])
    with pytest.raises(ValueError):
        SportProbabilityTable({1: Fraction(1, 2)}, frozenset({1}))


@settings(max_examples=100, deadline=None)
@given(f=st.integers(1, 8), n_sports=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_imputed_sets_respect_frequency(f, n_sports, seed):
    sports = list(range(1, n_sports + 1))
    donor_f = max(f, n_sports)
    ds = panel(rec(1, f), rec(2, donor_f, sports, None))
    d = impute_sports(ds, ds.get("s1", 1), sport_ladder(), np.random.default_rng(seed))
    assert 1 <= len(d.sports) <= f
    assert d.sports <= set(sports)
    if d.counts is not None:
        assert sum(d.counts.values()) == f
