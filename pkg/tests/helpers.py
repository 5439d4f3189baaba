"""Shared builders for hand-made panels and scripted random streams."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from hotdeck.panel import PainLevel, PanelDataset, WeekRecord

BB, FB, SW = 1, 2, 3  # basketball, football, swimming

PAIN = {"none": PainLevel.NO_PAIN, "new": PainLevel.NEW_PAIN, "old": PainLevel.OLD_PAIN, None: None}

_MISSING = object()


def rec(week, freq=None, sports=_MISSING, counts=_MISSING, pain="none", sid="s1", klass="c1", gender="F"):
    """Build a record. ``sports``/``counts`` default to missing."""
    s = None if sports is _MISSING or sports is None else frozenset(sports)
    if counts is _MISSING or counts is None:
        c = None
    elif isinstance(counts, int):
        c = {x: counts for x in s}
    else:
        c = dict(counts)
    return WeekRecord(sid, klass, gender, week, PAIN[pain], freq, s, c)


def panel(*records):
    return PanelDataset(list(records))


class ScriptedRng:
    """Stand-in generator that replays fixed uniforms, then fails loudly."""

    def __init__(self, values):
        self.values = list(values)
        self.used = 0

    def random(self, size=None):
        if size is None:
            return self._next()
        return np.array([self._next() for _ in range(size)])

    def _next(self):
        if self.used >= len(self.values):
            raise AssertionError("scripted stream exhausted")
        v = self.values[self.used]
        self.used += 1
        return v


def uniform_for(index, n):
    """A uniform that ``pick_index`` maps to ``index`` out of ``n``."""
    return (index + 0.5) / n


def uniform_for_table(table, code):
    """A uniform that inverse-CDF sampling over ``table`` maps to ``code``."""
    acc = Fraction(0)
    for c in sorted(table.entries):
        lo = acc
        acc += table.entries[c]
        if c == code:
            return float((lo + acc) / 2)
    raise KeyError(code)


# -- worked examples --------------------------------------------------------

def residual_panel():
    """Subject s1 weeks 1..15, frequency missing in no-pain week 8.

    Peers s2 and s3 (same class and gender) fix the peer median: 2 in week 8,
    and in every donor week the median is s1's frequency minus one, so each
    no-pain donor carries a residual of +1. Weeks 2, 5, 11, 13, 14, 15 have
    pain, leaving 8 no-pain donors: 1, 3, 4, 6, 7, 9, 10, 12.
    """
    pains = {2: "new", 5: "old", 11: "new", 13: "old", 14: "old", 15: "new"}
    rows = []
    for w in range(1, 16):
        pain = pains.get(w, "none")
        if w == 8:
            rows += [rec(8, None, pain="none"), rec(8, 2, [BB, FB], 1, sid="s2"), rec(8, 2, [BB, FB], 1, sid="s3")]
            continue
        own = 3 + (w % 3)  # 3, 4 or 5
        peer = own - 1
        rows += [
            rec(w, own, [BB], {BB: own}, pain=pain),
            rec(w, peer, [FB], {FB: peer}, sid="s2"),
            rec(w, peer, [FB], {FB: peer}, sid="s3"),
        ]
    return panel(*rows)


def sport_draw_panel():
    """Target week 6 has frequency 2 and missing sports.

    Window evidence: basketball 1 + 3/2 + 4 + 4 = 21/2, football
    1 + 3/2 + 1 + 4 = 15/2, swimming 1; total 19. Closest frequency to 2 is 3,
    reached by weeks 1 and 2.
    """
    return panel(
        rec(1, 3, [BB, FB, SW], 1),
        rec(2, 3, [BB, FB]),
        rec(3, 4, [BB], {BB: 4}),
        rec(4, 5, [BB, FB], {BB: 4, FB: 1}),
        rec(5, 4, [FB], {FB: 4}),
        rec(6, 2),
    )


def count_panel():
    """Target week 4: frequency 3, basketball and football, counts missing.

    Evidence weeks hold basketball 4+3+2 = 9 and football 1+2+2 = 5; week 5
    (swimming only) is not a donor.
    """
    return panel(
        rec(1, 5, [BB, FB], {BB: 4, FB: 1}),
        rec(2, 5, [BB, FB], {BB: 3, FB: 2}),
        rec(3, 5, [BB, FB, SW], {BB: 2, FB: 2, SW: 1}),
        rec(4, 3, [BB, FB]),
        rec(5, 6, [SW], {SW: 6}),
    )


def chained_count_panel():
    """Two count-missing targets: week 3 (frequency 3) and week 5 (frequency 4).

    For week 3, week 5 is an average temporary (2 and 2), giving
    basketball 5+3+2 = 10 and football 2+3+2 = 7.
    """
    return panel(
        rec(1, 7, [BB, FB], {BB: 5, FB: 2}),
        rec(2, 6, [BB, FB], {BB: 3, FB: 3}),
        rec(3, 3, [BB, FB]),
        rec(5, 4, [BB, FB]),
    )


# -- ladder fixtures --------------------------------------------------------

RUNG_DISTANCES = (5, 10, 20, 60)  # first radius in 7, 12, 25, inf that reaches each


def ladder_fixture(variable, k):
    """Panel where rung ``k`` is the first non-empty rung for the target.

    The target is s1 week 100; donors sit at 100 +- d. Returns
    (dataset, target key, expected donor weeks). Frequency rungs 4..11 use
    the pain relaxations.
    """
    d = RUNG_DISTANCES[k % 4]
    weeks = (100 - d, 100 + d)
    decoy = [rec(101, None), rec(99, 0, [], {})]  # never donors
    if variable == "frequency":
        group = k // 4
        target_pain = ("new", "new", None)[group]
        donor_pain = ("new", "old", "none")[group]
        target = rec(100, None, pain=target_pain)
        donors = [rec(w, 2, [BB], {BB: 2}, pain=donor_pain) for w in weeks]
        decoy = [rec(101, None, pain=donor_pain)]
        if group == 0:
            decoy.append(rec(99, 1, [FB], 1, pain="old"))
    elif variable == "sports":
        target = rec(100, 2)
        donors = [rec(w, 3, [BB, FB], {BB: 2, FB: 1}) for w in weeks]
    elif variable == "counts":
        target = rec(100, 3, [BB, FB])
        donors = [rec(w, 2, [BB], {BB: 2}) for w in weeks]
        decoy = [rec(101, None), rec(99, 4, [SW], {SW: 4})]
    else:
        raise ValueError(variable)
    return panel(target, *donors, *decoy), ("s1", 100), set(weeks)
