"""Bonded quads: count-then-fill compression and a convergent torsion kernel.

Bond detection feeds a 2-D over-allocated bond table (one row per atom, a
separate count column, grow-and-rebuild on overflow).  Quad enumeration runs
the classic two-pass pattern: a counting pass sizes exact per-atom spans,
then a fill pass writes each atom's quads contiguously.  The force kernel is
parallel over quads with scatter accumulation; a plain per-quad loop serves
as the serial reference.  A combined enumeration pass also emits bending
triples so three-body preprocessing shares the same traversal.
"""

from __future__ import annotations

import numpy as np

from .domain import Box, minimum_image


class TorsionError(RuntimeError):
    pass


class BondParams:
    """Bond-order model BO(r) = exp(-(r/r0)^p) with acceptance gates."""

    def __init__(self, r_bond: float, r0: float, p: float, bo_min: float = 0.0):
        if r_bond <= 0 or r0 <= 0 or p <= 0:
            raise TorsionError("r_bond, r0, p must be positive")
        self.r_bond = float(r_bond)
        self.r0 = float(r0)
        self.p = float(p)
        self.bo_min = float(bo_min)

    def bond_order(self, r):
        return np.exp(-((np.asarray(r, dtype=np.float64) / self.r0) ** self.p))


class BondTable:
    """2-D over-allocated bond storage: partners, bond orders, per-atom counts."""

    def __init__(self, bonds: np.ndarray, bond_order: np.ndarray, counts: np.ndarray):
        self.bonds = bonds          # int32 [n_local, max_bonds]
        self.bond_order = bond_order  # float64, same shape
        self.counts = counts        # int32 [n_local]

    @property
    def n_local(self) -> int:
        return self.bonds.shape[0]

    @property
    def max_bonds(self) -> int:
        return self.bonds.shape[1]

    def pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed (i, j, bo) triples for every stored bond."""
        cnt = self.counts.astype(np.int64)
        rows = np.repeat(np.arange(self.n_local, dtype=np.int64), cnt)
        csum = np.concatenate([[0], np.cumsum(cnt)])
        slot = np.arange(int(cnt.sum()), dtype=np.int64) - np.repeat(csum[:-1], cnt)
        return rows, self.bonds[rows, slot].astype(np.int64), self.bond_order[rows, slot]


def build_bonds(store, box: Box, nlist, params: BondParams,
                initial_capacity: int = 8) -> BondTable:
    """Detect bonds from a full neighbor list into a 2-D bond table.

    Partners are mapped to owning local indices and deduplicated, so each
    unordered bond appears exactly once per endpoint row.  Geometry uses
    minimum-image separations of the owned coordinates.
    """
    if nlist.style != "full":
        raise TorsionError("bond detection requires a full-style neighbor list")
    if params.r_bond > nlist.build_cutoff:
        raise TorsionError(
            f"r_bond {params.r_bond} exceeds neighbor build cutoff {nlist.build_cutoff}")
    n = store.n_local
    pos = store.positions()[:n]
    rows, cols, _, _ = nlist.pairs()
    cols = store.owner_index[cols].astype(np.int64)
    keep = rows != cols  # self-images through tiny periodic boxes
    rows, cols = rows[keep], cols[keep]
    directed = np.unique(rows * np.int64(n) + cols)
    rows = directed // n
    cols = directed % n
    dr = minimum_image(pos[cols] - pos[rows], box)
    r = np.sqrt(np.einsum("ij,ij->i", dr, dr))
    bo = params.bond_order(r)
    keep = (r < params.r_bond) & (bo > params.bo_min)
    rows, cols, bo = rows[keep], cols[keep], bo[keep]
    counts = np.bincount(rows, minlength=n).astype(np.int32)
    capacity = max(1, int(initial_capacity))
    while capacity < int(counts.max(initial=0)):  # grow-and-rebuild on overflow
        capacity = int(np.ceil(capacity * 1.5))
    bonds = np.zeros((n, capacity), dtype=np.int32)
    orders = np.zeros((n, capacity))
    csum = np.concatenate([[0], np.cumsum(counts.astype(np.int64))])
    slot = np.arange(len(rows), dtype=np.int64) - np.repeat(csum[:-1], counts)
    bonds[rows, slot] = cols.astype(np.int32)
    orders[rows, slot] = bo
    return BondTable(bonds, orders, counts)


class QuadTable:
    """Flat (i, j, k, l) records with contiguous per-atom spans."""

    def __init__(self, quads: np.ndarray, per_atom_start: np.ndarray, total: int,
                 triples: np.ndarray, candidates: int):
        self.quads = quads                  # int64 [total, 4]
        self.per_atom_start = per_atom_start  # int64 [n_local + 1]
        self.total = int(total)
        self.triples = triples              # int64 [n_triples, 3] as (j, i, k)
        self.candidates = int(candidates)

    @property
    def divergence(self) -> float:
        """Fraction of candidate quads that survived all constraints."""
        return self.total / self.candidates if self.candidates else 0.0


def _quad_candidates(table: BondTable):
    """Expand every central bond (i, j), i < j, against bonds of both pivots."""
    rows, cols, bo_c = table.pairs()
    central = rows < cols  # canonical orientation of the mirror pair
    ci, cj, cbo = rows[central], cols[central], bo_c[central]
    nk = table.counts[ci].astype(np.int64)
    nl = table.counts[cj].astype(np.int64)
    span = nk * nl
    total = int(span.sum())
    pair_of = np.repeat(np.arange(len(ci), dtype=np.int64), span)
    csum = np.concatenate([[0], np.cumsum(span)])
    within = np.arange(total, dtype=np.int64) - np.repeat(csum[:-1], span)
    nl_e = nl[pair_of]
    k_slot = within // nl_e
    l_slot = within - k_slot * nl_e
    i = ci[pair_of]
    j = cj[pair_of]
    k = table.bonds[i, k_slot].astype(np.int64)
    l = table.bonds[j, l_slot].astype(np.int64)
    prod = cbo[pair_of] * table.bond_order[i, k_slot] * table.bond_order[j, l_slot]
    return i, j, k, l, prod, total


def enumerate_quads(table: BondTable, bo_threshold: float) -> QuadTable:
    """Two-pass quad compression with a fused bending-triple emission.

    A quad (i, j, k, l) is stored iff (i, j), (i, k), (j, l) are all bonded,
    the four indices are distinct, and BO_ij * BO_ik * BO_jl exceeds the
    threshold.  Of the two mirror descriptions of each dihedral the one with
    i < j is kept.  Pass 1 counts survivors per pivot atom i; pass 2 fills
    each atom's contiguous span.
    """
    n = table.n_local
    # Pass 1: count survivors per atom (no quad storage).
    i, j, k, l, prod, candidates = _quad_candidates(table)
    keep = (k != j) & (k != l) & (l != i) & (prod > bo_threshold)
    counts = np.bincount(i[keep], minlength=n).astype(np.int64)
    per_atom_start = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=per_atom_start[1:])
    total = int(per_atom_start[-1])
    # Pass 2: re-enumerate and fill each span through a per-atom cursor.
    quads = np.empty((total, 4), dtype=np.int64)
    i, j, k, l = i[keep], j[keep], k[keep], l[keep]
    cursor = np.arange(total, dtype=np.int64) - np.repeat(per_atom_start[:-1], counts)
    at = per_atom_start[i] + cursor
    quads[at, 0] = i
    quads[at, 1] = j
    quads[at, 2] = k
    quads[at, 3] = l
    # Fused pass: bending triples (j, i, k) over distinct bond pairs of pivot i.
    rows, cols, _ = table.pairs()
    na = table.counts[rows].astype(np.int64)
    pair_of = np.repeat(np.arange(len(rows), dtype=np.int64), na)
    csum = np.concatenate([[0], np.cumsum(na)])
    slot = np.arange(int(na.sum()), dtype=np.int64) - np.repeat(csum[:-1], na)
    tj = cols[pair_of]
    ti = rows[pair_of]
    tk = table.bonds[ti, slot].astype(np.int64)
    tkeep = tj < tk  # unordered partner pairs once
    triples = np.stack([tj[tkeep], ti[tkeep], tk[tkeep]], axis=1)
    return QuadTable(quads, per_atom_start, total, triples, candidates)


def quads_brute_force(table: BondTable, bo_threshold: float) -> set[tuple]:
    """Triply-nested-loop oracle over the bond table; returns the quad set."""
    n = table.n_local
    bonded = {}
    for a in range(n):
        for s in range(int(table.counts[a])):
            bonded[(a, int(table.bonds[a, s]))] = float(table.bond_order[a, s])
    out = set()
    for (a, b), bo_ab in bonded.items():
        if a >= b:
            continue
        for s in range(int(table.counts[a])):
            c = int(table.bonds[a, s])
            for t in range(int(table.counts[b])):
                d = int(table.bonds[b, t])
                if len({a, b, c, d}) != 4:
                    continue
                if bo_ab * float(table.bond_order[a, s]) * float(table.bond_order[b, t]) \
                        > bo_threshold:
                    out.add((a, b, c, d))
    return out


def _dihedral_geometry(pos: np.ndarray, box: Box, quads: np.ndarray):
    """Bond vectors and normals for the k-i-j-l chains of each quad."""
    i, j, k, l = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    b1 = minimum_image(pos[i] - pos[k], box)
    b2 = minimum_image(pos[j] - pos[i], box)
    b3 = minimum_image(pos[l] - pos[j], box)
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    return b1, b2, b3, n1, n2


def compute_torsion(pos: np.ndarray, box: Box, quads: np.ndarray, k_t: float = 1.0
                    ) -> tuple[float, np.ndarray, int]:
    """Quad-parallel torsion: E = sum k_t (1 + cos phi) with analytic forces.

    Returns (energy, forces, n_degenerate).  Collinear chains make the
    dihedral undefined; those quads contribute nothing and are counted.
    """
    pos = np.asarray(pos, dtype=np.float64)
    forces = np.zeros_like(pos)
    quads = np.asarray(quads, dtype=np.int64)
    if quads.size == 0:
        return 0.0, forces, 0
    b1, b2, b3, n1, n2 = _dihedral_geometry(pos, box, quads)
    B = np.sqrt(np.einsum("ij,ij->i", n1, n1))
    C = np.sqrt(np.einsum("ij,ij->i", n2, n2))
    good = (B > 1e-12) & (C > 1e-12)
    n_degenerate = int((~good).sum())
    q = quads[good]
    b1, b2, b3, n1, n2 = b1[good], b2[good], b3[good], n1[good], n2[good]
    B, C = B[good], C[good]
    cosphi = np.einsum("ij,ij->i", n1, n2) / (B * C)
    energy = float(k_t * np.sum(1.0 + cosphi))
    g1 = n2 / (B * C)[:, None] - (cosphi / B**2)[:, None] * n1
    g2 = n1 / (B * C)[:, None] - (cosphi / C**2)[:, None] * n2
    gb1 = np.cross(b2, g1)
    gb2 = np.cross(g1, b1) + np.cross(b3, g2)
    gb3 = np.cross(g2, b2)
    np.add.at(forces, q[:, 2], k_t * gb1)           # F_k = -k_t * (-gb1)
    np.add.at(forces, q[:, 0], -k_t * (gb1 - gb2))
    np.add.at(forces, q[:, 1], -k_t * (gb2 - gb3))
    np.add.at(forces, q[:, 3], -k_t * gb3)
    return energy, forces, n_degenerate


def compute_torsion_serial(pos: np.ndarray, box: Box, quads: np.ndarray,
                           k_t: float = 1.0) -> tuple[float, np.ndarray, int]:
    """Per-quad Python loop reference; same math, serial accumulation."""
    pos = np.asarray(pos, dtype=np.float64)
    forces = np.zeros_like(pos)
    energy = 0.0
    n_degenerate = 0
    for rec in np.asarray(quads, dtype=np.int64):
        i, j, k, l = (int(v) for v in rec)
        b1 = minimum_image(pos[i] - pos[k], box)
        b2 = minimum_image(pos[j] - pos[i], box)
        b3 = minimum_image(pos[l] - pos[j], box)
        n1 = np.cross(b1, b2)
        n2 = np.cross(b2, b3)
        B = float(np.sqrt(n1 @ n1))
        C = float(np.sqrt(n2 @ n2))
        if B <= 1e-12 or C <= 1e-12:
            n_degenerate += 1
            continue
        cosphi = float(n1 @ n2) / (B * C)
        energy += k_t * (1.0 + cosphi)
        g1 = n2 / (B * C) - cosphi * n1 / B**2
        g2 = n1 / (B * C) - cosphi * n2 / C**2
        gb1 = np.cross(b2, g1)
        gb2 = np.cross(g1, b1) + np.cross(b3, g2)
        gb3 = np.cross(g2, b2)
        forces[k] += k_t * gb1
        forces[i] -= k_t * (gb1 - gb2)
        forces[j] -= k_t * (gb2 - gb3)
        forces[l] -= k_t * gb3
    return energy, forces, n_degenerate


def compute_bending(pos: np.ndarray, box: Box, triples: np.ndarray, k_b: float = 1.0
                    ) -> tuple[float, np.ndarray]:
    """Bending over (j, i, k) triples: E = sum k_b (1 + cos theta) at pivot i."""
    pos = np.asarray(pos, dtype=np.float64)
    forces = np.zeros_like(pos)
    triples = np.asarray(triples, dtype=np.int64)
    if triples.size == 0:
        return 0.0, forces
    j, i, k = triples[:, 0], triples[:, 1], triples[:, 2]
    u = minimum_image(pos[j] - pos[i], box)
    v = minimum_image(pos[k] - pos[i], box)
    lu = np.sqrt(np.einsum("ij,ij->i", u, u))
    lv = np.sqrt(np.einsum("ij,ij->i", v, v))
    cost = np.einsum("ij,ij->i", u, v) / (lu * lv)
    energy = float(k_b * np.sum(1.0 + cost))
    du = v / (lu * lv)[:, None] - (cost / lu**2)[:, None] * u
    dv = u / (lu * lv)[:, None] - (cost / lv**2)[:, None] * v
    np.add.at(forces, j, -k_b * du)
    np.add.at(forces, k, -k_b * dv)
    np.add.at(forces, i, k_b * (du + dv))
    return energy, forces
