"""Simulation box, periodic boundaries, and logical-rank domain decomposition.

Ranks are in-process bricks that exchange ghost atoms through explicit
pack/unpack buffers, mirroring a distributed halo exchange without MPI:
forward communication pushes owner positions (plus periodic shift) into ghost
rows, reverse communication folds ghost force contributions back onto owners.
"""

from __future__ import annotations

import itertools

import numpy as np

from .memspace import DualArray, create_dual


class DomainError(RuntimeError):
    """Invalid decomposition, box, or communication request."""


class Box:
    """Orthorhombic simulation box with per-axis periodic flags."""

    def __init__(self, lengths, periodic=(True, True, True)):
        self.lengths = np.asarray(lengths, dtype=np.float64)
        if self.lengths.shape != (3,) or np.any(self.lengths <= 0):
            raise DomainError(f"box lengths must be 3 positive reals, got {lengths}")
        self.periodic = tuple(bool(p) for p in periodic)
        if len(self.periodic) != 3:
            raise DomainError("periodic must have 3 flags")

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def min_periodic_length(self) -> float:
        ls = [self.lengths[d] for d in range(3) if self.periodic[d]]
        return min(ls) if ls else np.inf

    def __repr__(self):
        return f"Box(lengths={self.lengths.tolist()}, periodic={self.periodic})"


def minimum_image(dr, box: Box) -> np.ndarray:
    """Map displacement(s) into the primary image, each component in [-L/2, L/2)."""
    dr = np.array(dr, dtype=np.float64, copy=True)
    vec = dr.reshape(-1, 3)
    for d in range(3):
        if box.periodic[d]:
            L = box.lengths[d]
            vec[:, d] -= L * np.floor(vec[:, d] / L + 0.5)
    return vec.reshape(dr.shape)


def wrap_positions(pos, box: Box) -> np.ndarray:
    """Wrap positions into [0, L) on periodic axes."""
    pos = np.array(pos, dtype=np.float64, copy=True)
    for d in range(3):
        if box.periodic[d]:
            L = box.lengths[d]
            pos[:, d] -= L * np.floor(pos[:, d] / L)
    return pos


class RankSet:
    """Axis-aligned brick tiling of the box over n_ranks logical ranks."""

    def __init__(self, box: Box, grid):
        self.box = box
        self.grid = tuple(int(g) for g in grid)
        if any(g < 1 for g in self.grid):
            raise DomainError(f"invalid rank grid {grid}")
        self.n_ranks = self.grid[0] * self.grid[1] * self.grid[2]
        lo = np.zeros((self.n_ranks, 3))
        hi = np.zeros((self.n_ranks, 3))
        for r in range(self.n_ranks):
            c = self.coords(r)
            for d in range(3):
                lo[r, d] = box.lengths[d] * c[d] / self.grid[d]
                hi[r, d] = box.lengths[d] * (c[d] + 1) / self.grid[d]
        self.lo = lo
        self.hi = hi

    def coords(self, rank: int) -> tuple[int, int, int]:
        gx, gy, gz = self.grid
        return (rank // (gy * gz), (rank // gz) % gy, rank % gz)

    def rank_of(self, pos: np.ndarray) -> np.ndarray:
        """Owning rank of each (wrapped) position."""
        gx, gy, gz = self.grid
        grid = np.array(self.grid, dtype=np.float64)
        c = np.floor(pos / self.box.lengths * grid).astype(np.int64)
        c = np.clip(c, 0, np.array(self.grid) - 1)
        return c[:, 0] * (gy * gz) + c[:, 1] * gz + c[:, 2]


def decompose(box: Box, n_ranks: int) -> RankSet:
    """Brick decomposition minimizing brick surface, splitting long axes first.

    Ties between equal-surface factorizations are broken toward splitting the
    lowest axis index.
    """
    if n_ranks < 1:
        raise DomainError(f"n_ranks must be >= 1, got {n_ranks}")
    best = None
    for gx in range(1, n_ranks + 1):
        if n_ranks % gx:
            continue
        rem = n_ranks // gx
        for gy in range(1, rem + 1):
            if rem % gy:
                continue
            gz = rem // gy
            ex = box.lengths[0] / gx
            ey = box.lengths[1] / gy
            ez = box.lengths[2] / gz
            surface = 2.0 * (ex * ey + ex * ez + ey * ez)
            # Lexicographically larger grids split lower axes more.
            key = (surface, tuple(-g for g in (gx, gy, gz)))
            if best is None or key < best[0]:
                best = (key, (gx, gy, gz))
    return RankSet(box, best[1])


class AtomStore:
    """Per-rank atom arrays: n_local owned rows followed by n_ghost ghost rows.

    Positions and forces are dual-space arrays sized [n_local + n_ghost, 3];
    velocities exist for owned atoms only.  Ghost rows carry the owning rank,
    the owner's local row index, and the periodic shift applied to the copy.
    """

    def __init__(self, rank: int, positions: np.ndarray, velocities: np.ndarray,
                 global_ids: np.ndarray):
        n = len(positions)
        self.rank = int(rank)
        self.n_local = n
        self.n_ghost = 0
        if n == 0:
            positions = np.zeros((0, 3))
            velocities = np.zeros((0, 3))
            global_ids = np.zeros(0, dtype=np.int64)
        self.pos = create_dual((max(n, 1), 3))
        self.vel = create_dual((max(n, 1), 3))
        self.force = create_dual((max(n, 1), 3))
        if n:
            self.pos.view("a")[...] = positions
            self.vel.view("a")[...] = velocities
            self.pos.mark_modified("a")
            self.pos.sync("b")
            self.vel.mark_modified("a")
            self.vel.sync("b")
        self.global_ids = np.asarray(global_ids, dtype=np.int64).copy()
        self.owner_rank = np.full(n, self.rank, dtype=np.int32)
        self.owner_index = np.arange(n, dtype=np.int32)
        self.ghost_shift = np.zeros((n, 3))

    @property
    def n_total(self) -> int:
        return self.n_local + self.n_ghost

    def positions(self) -> np.ndarray:
        """Current logical positions (space a), valid rows only."""
        return self.pos.read("a")[: self.n_total]

    def velocities(self) -> np.ndarray:
        return self.vel.read("a")[: self.n_local]

    def forces(self) -> np.ndarray:
        return self.force.read("a")[: self.n_total]

    def set_ghosts(self, ghost_pos: np.ndarray, ghost_ids: np.ndarray,
                   ghost_owner_rank: np.ndarray, ghost_owner_index: np.ndarray,
                   ghost_shift: np.ndarray) -> None:
        """Replace ghost rows; reallocates position/force storage."""
        n_l, n_g = self.n_local, len(ghost_pos)
        local_pos = self.positions()[:n_l].copy()
        self.n_ghost = n_g
        n_tot = max(n_l + n_g, 1)
        self.pos = create_dual((n_tot, 3))
        self.force = create_dual((n_tot, 3))
        p = self.pos.view("a")
        p[:n_l] = local_pos
        if n_g:
            p[n_l:n_l + n_g] = ghost_pos
        self.pos.mark_modified("a")
        self.global_ids = np.concatenate([self.global_ids[:n_l], ghost_ids.astype(np.int64)])
        self.owner_rank = np.concatenate(
            [np.full(n_l, self.rank, dtype=np.int32), ghost_owner_rank.astype(np.int32)])
        self.owner_index = np.concatenate(
            [np.arange(n_l, dtype=np.int32), ghost_owner_index.astype(np.int32)])
        self.ghost_shift = np.concatenate([np.zeros((n_l, 3)), ghost_shift])


class _CommPlanEntry:
    """One pack/unpack lane: rows of ``src`` copied (with shift) into ghost rows of ``dst``."""

    __slots__ = ("src", "dst", "src_index", "shift", "dst_start", "count")

    def __init__(self, src, dst, src_index, shift, dst_start):
        self.src = src
        self.dst = dst
        self.src_index = src_index
        self.shift = shift
        self.dst_start = dst_start
        self.count = len(src_index)


class RankedSystem:
    """All logical ranks of one simulation plus their communication plan."""

    def __init__(self, box: Box, rankset: RankSet, stores: list[AtomStore]):
        self.box = box
        self.rankset = rankset
        self.stores = stores
        self.plan: list[_CommPlanEntry] = []
        self.halo = 0.0

    @classmethod
    def distribute(cls, box: Box, n_ranks: int, positions, velocities,
                   global_ids=None) -> "RankedSystem":
        positions = wrap_positions(np.asarray(positions, dtype=np.float64), box)
        velocities = np.asarray(velocities, dtype=np.float64)
        n = len(positions)
        if global_ids is None:
            global_ids = np.arange(n, dtype=np.int64)
        rankset = decompose(box, n_ranks)
        owner = rankset.rank_of(positions)
        stores = []
        for r in range(rankset.n_ranks):
            sel = np.flatnonzero(owner == r)
            stores.append(AtomStore(r, positions[sel], velocities[sel],
                                    np.asarray(global_ids)[sel]))
        return cls(box, rankset, stores)

    @property
    def n_ranks(self) -> int:
        return self.rankset.n_ranks

    def _shift_set(self):
        axes = [(-1, 0, 1) if self.box.periodic[d] else (0,) for d in range(3)]
        return [np.array(s, dtype=np.float64) * self.box.lengths
                for s in itertools.product(*axes)]

    def exchange_ghosts(self, halo: float) -> None:
        """Build ghost rows and the pack/unpack plan for the given halo width.

        Every atom (from any rank, under any periodic shift) whose shifted
        position falls within ``halo`` of a destination brick becomes a ghost
        row there.  Fails when the halo is ambiguous under periodicity.
        """
        if halo <= 0:
            raise DomainError(f"halo must be positive, got {halo}")
        if halo > 0.5 * self.box.min_periodic_length():
            raise DomainError(
                f"halo {halo} exceeds half the shortest periodic box length "
                f"{self.box.min_periodic_length()}; periodic image is ambiguous")
        self.halo = float(halo)
        shifts = self._shift_set()
        positions = [s.positions()[: s.n_local].copy() for s in self.stores]
        self.plan = []
        for dst in range(self.n_ranks):
            lo = self.rankset.lo[dst] - halo
            hi = self.rankset.hi[dst] + halo
            g_pos, g_ids, g_orank, g_oidx, g_shift = [], [], [], [], []
            dst_cursor = self.stores[dst].n_local
            for src in range(self.n_ranks):
                src_pos = positions[src]
                for shift in shifts:
                    if src == dst and not shift.any():
                        continue
                    shifted = src_pos + shift
                    mask = np.all((shifted >= lo) & (shifted < hi), axis=1)
                    idx = np.flatnonzero(mask)
                    if not len(idx):
                        continue
                    self.plan.append(_CommPlanEntry(src, dst, idx.astype(np.int64),
                                                    shift.copy(), dst_cursor))
                    dst_cursor += len(idx)
                    g_pos.append(shifted[idx])
                    g_ids.append(self.stores[src].global_ids[idx])
                    g_orank.append(np.full(len(idx), src, dtype=np.int32))
                    g_oidx.append(idx.astype(np.int32))
                    g_shift.append(np.broadcast_to(shift, (len(idx), 3)).copy())
            if g_pos:
                self.stores[dst].set_ghosts(np.concatenate(g_pos), np.concatenate(g_ids),
                                            np.concatenate(g_orank), np.concatenate(g_oidx),
                                            np.concatenate(g_shift))
            else:
                self.stores[dst].set_ghosts(np.zeros((0, 3)), np.zeros(0, dtype=np.int64),
                                            np.zeros(0, dtype=np.int32),
                                            np.zeros(0, dtype=np.int32), np.zeros((0, 3)))

    def forward_comm(self) -> None:
        """Push owner positions (plus shift) into ghost rows: pack, then unpack."""
        packed = []
        for entry in self.plan:
            src_pos = self.stores[entry.src].positions()
            packed.append(src_pos[entry.src_index] + entry.shift)
        for entry, buf in zip(self.plan, packed):
            store = self.stores[entry.dst]
            view = store.pos.read("a")
            view[entry.dst_start:entry.dst_start + entry.count] = buf
            store.pos.mark_modified("a")

    def reverse_comm(self) -> None:
        """Fold ghost-row forces back onto owner rows, then zero the ghost rows."""
        packed = []
        for entry in self.plan:
            f = self.stores[entry.dst].forces()
            packed.append(f[entry.dst_start:entry.dst_start + entry.count].copy())
        for entry, buf in zip(self.plan, packed):
            owner = self.stores[entry.src]
            fview = owner.force.read("a")
            np.add.at(fview, entry.src_index, buf)
            owner.force.mark_modified("a")
        for store in self.stores:
            if store.n_ghost:
                f = store.force.read("a")
                f[store.n_local:store.n_total] = 0.0
                store.force.mark_modified("a")

    def migrate(self, halo: float) -> None:
        """Wrap and reassign owned atoms to bricks, then rebuild ghosts."""
        pos, vel, gid = self.gather()
        wrapped = wrap_positions(pos, self.box)
        owner = self.rankset.rank_of(wrapped)
        stores = []
        for r in range(self.n_ranks):
            sel = np.flatnonzero(owner == r)
            stores.append(AtomStore(r, wrapped[sel], vel[sel], gid[sel]))
        self.stores = stores
        self.exchange_ghosts(halo)

    def gather(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Owned atoms of all ranks ordered by global id: (pos, vel, ids)."""
        pos = np.concatenate([s.positions()[: s.n_local] for s in self.stores])
        vel = np.concatenate([s.velocities() for s in self.stores])
        gid = np.concatenate([s.global_ids[: s.n_local] for s in self.stores])
        order = np.argsort(gid, kind="stable")
        return pos[order], vel[order], gid[order]

    def gather_forces(self) -> np.ndarray:
        """Owner-row forces of all ranks ordered by global id."""
        f = np.concatenate([s.forces()[: s.n_local] for s in self.stores])
        gid = np.concatenate([s.global_ids[: s.n_local] for s in self.stores])
        return f[np.argsort(gid, kind="stable")]

    def zero_forces(self) -> None:
        for store in self.stores:
            f = store.force.read("a")
            f[...] = 0.0
            store.force.mark_modified("a")
