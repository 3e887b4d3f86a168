"""Flattened quantum-number indexing for the descriptor pipeline.

Angular momenta are handled in doubled-integer form (tj = 2j) so half-integer
truncations stay exact.  The flat index packs (j, m, m') with j slowest and
m' fastest; each j block occupies a contiguous (tj+1)^2 span.
"""

from __future__ import annotations

import numpy as np


class SnapIndexError(ValueError):
    pass


def _twojmax(jmax) -> int:
    tj = float(2 * jmax)
    if tj < 0 or abs(tj - round(tj)) > 1e-12:
        raise SnapIndexError(f"2*jmax must be a non-negative integer, got jmax={jmax}")
    return int(round(tj))


class QuantumIndex:
    """Bijection (j, m, m') -> [0, sum_j (2j+1)^2) with per-j contiguous blocks."""

    def __init__(self, jmax):
        self.jmax = float(jmax)
        self.twojmax = _twojmax(jmax)
        sizes = [(tj + 1) ** 2 for tj in range(self.twojmax + 1)]
        self.block_offset = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.n_flat = int(self.block_offset[-1])

    def flat(self, tj: int, p: int, q: int) -> int:
        """Linear index of (j = tj/2, m = p - j, m' = q - j)."""
        if not (0 <= tj <= self.twojmax):
            raise SnapIndexError(f"tj {tj} out of range [0, {self.twojmax}]")
        if not (0 <= p <= tj and 0 <= q <= tj):
            raise SnapIndexError(f"(p, q) = ({p}, {q}) out of block range for tj {tj}")
        return int(self.block_offset[tj] + p * (tj + 1) + q)

    def block(self, tj: int) -> slice:
        """Flat-index span of the j = tj/2 block."""
        if not (0 <= tj <= self.twojmax):
            raise SnapIndexError(f"tj {tj} out of range [0, {self.twojmax}]")
        return slice(int(self.block_offset[tj]), int(self.block_offset[tj + 1]))

    def unflatten(self, idx: int) -> tuple[int, int, int]:
        """Inverse map: flat index -> (tj, p, q)."""
        if not (0 <= idx < self.n_flat):
            raise SnapIndexError(f"flat index {idx} out of range [0, {self.n_flat})")
        tj = int(np.searchsorted(self.block_offset, idx, side="right")) - 1
        rem = idx - int(self.block_offset[tj])
        return tj, rem // (tj + 1), rem % (tj + 1)

    def triples(self) -> list[tuple[int, int, int]]:
        """Coupled (tj, tj1, tj2) triples in flat (j slowest) storage order.

        Selection: 0 <= tj2 <= tj1 <= tj <= twojmax, the triangle rule
        tj <= tj1 + tj2, and integer total momentum (tj1 + tj2 - tj even).
        """
        out = []
        for tj in range(self.twojmax + 1):
            for tj1 in range(tj + 1):
                for tj2 in range(tj1 + 1):
                    if tj <= tj1 + tj2 and (tj1 + tj2 - tj) % 2 == 0:
                        out.append((tj, tj1, tj2))
        return out
