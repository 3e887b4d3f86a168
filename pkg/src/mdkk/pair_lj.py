"""Pairwise-potential engine with a pluggable two-body kernel.

The engine walks the directed pair entries of a neighbor list, evaluates the
kernel on squared distances, and accumulates forces through a scatter
accumulator.  Atom-parallel mode assigns whole atoms (rows) to logical
workers; neighbor-parallel mode splits each atom's neighbor range across
workers and reduces partial forces.  Energy bookkeeping uses the per-entry
weights provided by the list, so every list-style/newton combination reports
identical totals.
"""

from __future__ import annotations

import numpy as np

from .domain import RankedSystem
from .memspace import ScatterAccumulator, Serial
from .neighbor import NeighborList
from .parallel import chunk_ranges, worker_count


class PairError(RuntimeError):
    pass


_PAIR_SEGMENT = 1 << 17


class PairParams:
    """Lennard-Jones parameters: energy scale, length scale, cutoff."""

    def __init__(self, epsilon: float, sigma: float, r_c: float):
        if epsilon <= 0 or sigma <= 0 or r_c <= 0:
            raise PairError("epsilon, sigma, r_c must all be positive")
        if r_c <= sigma:
            raise PairError(f"cutoff {r_c} must exceed sigma {sigma}")
        self.epsilon = float(epsilon)
        self.sigma = float(sigma)
        self.r_c = float(r_c)


class PairResult:
    """Total energy, per-atom forces (global-id order), and the 6-component virial."""

    def __init__(self, energy: float, forces: np.ndarray, virial: np.ndarray):
        self.energy = energy
        self.forces = forces
        self.virial = virial  # (xx, yy, zz, xy, xz, yz)

    def pressure(self, volume: float) -> float:
        """Static (virial-only) pressure tr(W) / 3V."""
        return float(self.virial[:3].sum() / (3.0 * volume))


def u2_lj(r: float, params: PairParams) -> tuple[float, float]:
    """Two-body Lennard-Jones energy and central-force scalar at distance r.

    Returns ``(energy, fpair)`` with ``fpair = -(dU/dr)/r`` so the force on
    atom i from j is ``-fpair * (r_j - r_i)``.
    """
    if r == 0:
        raise PairError("coincident atoms (r = 0)")
    if not (0 < r < params.r_c):
        raise PairError(f"r = {r} outside (0, r_c = {params.r_c})")
    s2 = (params.sigma * params.sigma) / (r * r)
    s6 = s2 * s2 * s2
    energy = 4.0 * params.epsilon * (s6 * s6 - s6)
    fpair = 24.0 * params.epsilon * (2.0 * s6 * s6 - s6) / (r * r)
    return energy, fpair


class LJCut:
    """Truncated (not shifted) Lennard-Jones kernel."""

    name = "lj/cut"

    def __init__(self, params: PairParams):
        self.params = params
        self.r_c = params.r_c

    def pair_energy_force(self, r2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized energy and fpair on squared distances (all < r_c^2)."""
        if r2.size and r2.min() <= 0.0:
            raise PairError("coincident atoms (r = 0)")
        p = self.params
        s2 = (p.sigma * p.sigma) / r2
        s6 = s2 * s2 * s2
        s12 = s6 * s6
        e = 4.0 * p.epsilon * (s12 - s6)
        fp = 24.0 * p.epsilon * (2.0 * s12 - s6) / r2
        return e, fp


def _row_aligned_chunks(rows: np.ndarray, n_chunks: int) -> list[tuple[int, int]]:
    """Contiguous entry spans whose boundaries never split a row."""
    total = len(rows)
    spans = []
    raw = chunk_ranges(total, n_chunks)
    prev = 0
    for _, stop in raw:
        if stop >= total:
            stop_aligned = total
        else:
            # advance to the end of the row containing entry stop-1
            stop_aligned = int(np.searchsorted(rows, rows[stop - 1], side="right"))
        if stop_aligned > prev:
            spans.append((prev, stop_aligned))
            prev = stop_aligned
    if prev < total:
        spans.append((prev, total))
    return spans or [(0, 0)]


def compute_pair(kernel, system: RankedSystem, lists: list[NeighborList],
                 mode: str = "atom", strategy=None, n_workers: int | None = None,
                 zero_forces: bool = True) -> PairResult:
    """Evaluate a pair kernel over every rank's neighbor list.

    mode "atom" parallelizes over atoms (row-aligned chunks); mode "neighbor"
    splits neighbor ranges mid-row and reduces partials.  Each chunk's force
    contributions flow through a ScatterAccumulator built with ``strategy``.
    Full-style lists write owner rows only and need no deconfliction; half
    lists write partner rows too (ghost rows are folded back afterwards).
    """
    if mode not in ("atom", "neighbor"):
        raise PairError(f"unknown execution mode {mode!r}")
    strategy = strategy if strategy is not None else Serial()
    workers = worker_count(n_workers)
    r_c = kernel.r_c
    energy = 0.0
    virial = np.zeros(6)
    if zero_forces:
        system.zero_forces()
    wrote_ghosts = False
    for store, nlist in zip(system.stores, lists):
        nlist.check_current()
        pos = store.positions()
        rows, cols, weight, write_j = nlist.pairs()
        acc = ScatterAccumulator((store.n_total, 3), strategy)
        if mode == "atom":
            spans = _row_aligned_chunks(rows, workers)
        else:
            spans = chunk_ranges(len(rows), workers)
        for w_id, (lo, hi) in enumerate(spans):
            # bounded segments keep the staged per-pair arrays cache-sized
            for s_lo in range(lo, hi, _PAIR_SEGMENT):
                s_hi = min(s_lo + _PAIR_SEGMENT, hi)
                seg_rows, seg_cols = rows[s_lo:s_hi], cols[s_lo:s_hi]
                dr = pos[seg_cols] - pos[seg_rows]
                r2 = np.einsum("ij,ij->i", dr, dr)
                within = r2 < r_c * r_c
                seg_rows, seg_cols = seg_rows[within], seg_cols[within]
                dr, r2 = dr[within], r2[within]
                if not len(r2):
                    continue
                wgt = weight[s_lo:s_hi][within]
                wj = write_j[s_lo:s_hi][within]
                e, fp = kernel.pair_energy_force(r2)
                energy += float(np.dot(wgt, e))
                fvec = fp[:, None] * dr
                acc.add(seg_rows, -fvec, worker=w_id)
                if wj.any():
                    acc.add(seg_cols[wj], fvec[wj], worker=w_id)
                    if seg_cols[wj].size and seg_cols[wj].max() >= store.n_local:
                        wrote_ghosts = True
                wfp = wgt * fp
                virial[0] += float(np.dot(wfp, dr[:, 0] * dr[:, 0]))
                virial[1] += float(np.dot(wfp, dr[:, 1] * dr[:, 1]))
                virial[2] += float(np.dot(wfp, dr[:, 2] * dr[:, 2]))
                virial[3] += float(np.dot(wfp, dr[:, 0] * dr[:, 1]))
                virial[4] += float(np.dot(wfp, dr[:, 0] * dr[:, 2]))
                virial[5] += float(np.dot(wfp, dr[:, 1] * dr[:, 2]))
        contrib = acc.finalize()
        f = store.force.read("a")
        f[: store.n_total] += contrib
        store.force.mark_modified("a")
    if wrote_ghosts or any(s.n_ghost for s in system.stores):
        system.reverse_comm()
    return PairResult(energy, system.gather_forces(), virial)
