"""Clebsch-Gordan coefficients and precomputed contraction index tables.

Coefficients come from the standard closed-form factorial expression,
evaluated in exact rational arithmetic so the only rounding is the final
square root.  For each coupled (tj, tj1, tj2) triple the contraction of the
two source blocks into the target block is flattened into parallel index
lists (iz, iu1, iu2, coeff) with presorted segment boundaries for each of
the three gather/scatter groupings.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .indexing import QuantumIndex, SnapIndexError


def _fact2(twice: int) -> int:
    """(twice/2)! for an even doubled integer; raises if half-integral."""
    if twice < 0 or twice % 2:
        raise SnapIndexError(f"factorial of non-integer or negative half-value {twice}/2")
    return math.factorial(twice // 2)


def clebsch_gordan(tj1: int, tm1: int, tj2: int, tm2: int, tj: int, tm: int) -> float:
    """C(j1 m1; j2 m2 | j m) with all arguments doubled (tj = 2j, tm = 2m)."""
    if tm1 + tm2 != tm:
        return 0.0
    if not (abs(tj1 - tj2) <= tj <= tj1 + tj2) or (tj1 + tj2 - tj) % 2:
        return 0.0
    if abs(tm1) > tj1 or abs(tm2) > tj2 or abs(tm) > tj:
        return 0.0
    if (tj1 + tm1) % 2 or (tj2 + tm2) % 2 or (tj + tm) % 2:
        return 0.0
    # prefactor: (2j+1) * triangle(j1 j2 j) * product of (j +/- m)! terms
    pref = Fraction(
        (tj + 1)
        * _fact2(tj1 + tj2 - tj) * _fact2(tj1 - tj2 + tj) * _fact2(-tj1 + tj2 + tj)
        * _fact2(tj1 + tm1) * _fact2(tj1 - tm1)
        * _fact2(tj2 + tm2) * _fact2(tj2 - tm2)
        * _fact2(tj + tm) * _fact2(tj - tm),
        _fact2(tj1 + tj2 + tj + 2),
    )
    # signed sum over k (k runs in whole integers; bounds from the factorials)
    k_lo = max(0, (tj2 - tj - tm1) // 2, (tj1 - tj + tm2) // 2)
    k_hi = min((tj1 + tj2 - tj) // 2, (tj1 - tm1) // 2, (tj2 + tm2) // 2)
    total = Fraction(0)
    for k in range(k_lo, k_hi + 1):
        tk = 2 * k
        denom = (
            math.factorial(k)
            * _fact2(tj1 + tj2 - tj - tk)
            * _fact2(tj1 - tm1 - tk)
            * _fact2(tj2 + tm2 - tk)
            * _fact2(tj - tj2 + tm1 + tk)
            * _fact2(tj - tj1 - tm2 + tk)
        )
        total += Fraction((-1) ** k, denom)
    if total == 0:
        return 0.0
    # single rounding: C^2 is exactly rational, carry the sign of the sum
    c2 = total * total * pref
    return math.copysign(math.sqrt(float(c2)), float(total))


class TripleTerms:
    """Flattened contraction terms for one (tj, tj1, tj2) triple.

    Each term couples U[iu1] * U[iu2] into slot iz of the target block with
    weight coeff = C(m1, m2) * C(m1', m2').  Three sorted orderings with
    reduceat boundaries support grouping by iz, by iu1, and by iu2.
    """

    def __init__(self, tj: int, tj1: int, tj2: int, iz, iu1, iu2, coeff):
        self.tj, self.tj1, self.tj2 = tj, tj1, tj2
        self.iz = np.asarray(iz, dtype=np.int64)
        self.iu1 = np.asarray(iu1, dtype=np.int64)
        self.iu2 = np.asarray(iu2, dtype=np.int64)
        self.coeff = np.asarray(coeff, dtype=np.float64)
        self.n_terms = len(self.coeff)
        for key in ("iz", "iu1", "iu2"):
            idx = getattr(self, key)
            order = np.argsort(idx, kind="stable")
            sorted_idx = idx[order]
            firsts = np.flatnonzero(np.concatenate([[True], sorted_idx[1:] != sorted_idx[:-1]]))
            setattr(self, f"order_{key}", order)
            setattr(self, f"starts_{key}", firsts)
            setattr(self, f"unique_{key}", sorted_idx[firsts])


class CouplingTables:
    """CG blocks and contraction terms for every coupled triple up to jmax."""

    def __init__(self, jmax):
        self.index = QuantumIndex(jmax)
        self.triples = self.index.triples()
        self.cg = {}      # (tj1, tj2, tj) -> array [p1, p2]
        self.terms = []   # TripleTerms, parallel to self.triples
        for (tj, tj1, tj2) in self.triples:
            self.cg[(tj1, tj2, tj)] = self._cg_block(tj1, tj2, tj)
            self.terms.append(self._build_terms(tj, tj1, tj2))

    def _cg_block(self, tj1: int, tj2: int, tj: int) -> np.ndarray:
        """cg[p1, p2] = C(j1, m1; j2, m2 | j, m1+m2) over both source blocks."""
        block = np.zeros((tj1 + 1, tj2 + 1))
        for p1 in range(tj1 + 1):
            tm1 = 2 * p1 - tj1
            for p2 in range(tj2 + 1):
                tm2 = 2 * p2 - tj2
                if abs(tm1 + tm2) <= tj:
                    block[p1, p2] = clebsch_gordan(tj1, tm1, tj2, tm2, tj, tm1 + tm2)
        return block

    def _build_terms(self, tj: int, tj1: int, tj2: int) -> TripleTerms:
        qi = self.index
        cg = self.cg[(tj1, tj2, tj)]
        shift = (tj1 + tj2 - tj) // 2
        p1, p2, q1, q2 = np.meshgrid(
            np.arange(tj1 + 1), np.arange(tj2 + 1),
            np.arange(tj1 + 1), np.arange(tj2 + 1), indexing="ij")
        p1, p2, q1, q2 = (v.ravel() for v in (p1, p2, q1, q2))
        p = p1 + p2 - shift
        q = q1 + q2 - shift
        coeff = cg[p1, p2] * cg[q1, q2]
        keep = (p >= 0) & (p <= tj) & (q >= 0) & (q <= tj) & (coeff != 0.0)
        p1, p2, q1, q2, p, q, coeff = (v[keep] for v in (p1, p2, q1, q2, p, q, coeff))
        iz = qi.block_offset[tj] + p * (tj + 1) + q
        iu1 = qi.block_offset[tj1] + p1 * (tj1 + 1) + q1
        iu2 = qi.block_offset[tj2] + p2 * (tj2 + 1) + q2
        return TripleTerms(tj, tj1, tj2, iz, iu1, iu2, coeff)


def make_coupling_tables(jmax) -> CouplingTables:
    return CouplingTables(jmax)
