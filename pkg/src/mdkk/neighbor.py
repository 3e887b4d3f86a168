"""Cell-list construction of full and half neighbor lists.

Lists are stored in a 2-D over-allocated table (one row per owned atom) kept
in a dual-space array so either storage layout can be consumed.  Directed
pair arrays carrying per-entry energy weights and write flags encode the
full/half × newton-on/off semantics so the pair engine stays branch-free:

* full: every in-range partner is listed on each owner's row; each entry
  carries half the pair energy and writes only its own row.
* half, newton off: owned pairs appear once (smaller global id) and write
  both rows; rank-boundary pairs are listed by each side with half energy,
  writing only the local row.
* half, newton on: every pair appears exactly once across all ranks (smaller
  global id for owned pairs, smaller owner rank for boundary pairs, with a
  z/y/x coordinate tie-break for same-rank periodic images); entries write
  both rows and ghost forces are folded back by reverse communication.
"""

from __future__ import annotations

import numpy as np

from .domain import AtomStore, Box, RankedSystem
from .memspace import create_dual

DEFAULT_CAPACITY = 16
_ATOM_CHUNK = 200_000


class NeighborError(RuntimeError):
    pass


class StaleListError(NeighborError):
    """A neighbor list was used after atoms moved beyond the skin criterion."""


class NeighborList:
    """Per-atom neighbor table plus flattened directed pair arrays."""

    def __init__(self, store: AtomStore, style: str, newton: bool, cutoff: float,
                 skin: float, capacity: int):
        self.store = store
        self.style = style
        self.newton = bool(newton)
        self.cutoff = float(cutoff)
        self.skin = float(skin)
        self.n_local = store.n_local
        self.max_neighbors = capacity
        self.table = None
        self.counts = np.zeros(self.n_local, dtype=np.int32)
        self.pair_i = np.zeros(0, dtype=np.int64)
        self.pair_j = np.zeros(0, dtype=np.int64)
        self.pair_weight = np.zeros(0)
        self.pair_write_j = np.zeros(0, dtype=bool)
        self.ref_positions = store.positions()[: store.n_local].copy()

    @property
    def build_cutoff(self) -> float:
        return self.cutoff + self.skin

    def pairs(self):
        """Directed entries as (rows, cols, energy weight, write-partner flag)."""
        return self.pair_i, self.pair_j, self.pair_weight, self.pair_write_j

    def max_displacement(self) -> float:
        """Largest distance any owned atom moved since the list was built."""
        if self.n_local == 0:
            return 0.0
        d = self.store.positions()[: self.n_local] - self.ref_positions
        return float(np.sqrt(np.einsum("ij,ij->i", d, d).max()))

    def needs_rebuild(self) -> bool:
        return self.max_displacement() > 0.5 * self.skin

    def check_current(self) -> None:
        if self.needs_rebuild():
            raise StaleListError(
                f"neighbor list stale: max displacement {self.max_displacement():.4g} "
                f"exceeds skin/2 = {0.5 * self.skin:.4g}")


def _candidate_pairs(pos: np.ndarray, n_local: int, build_cutoff: float):
    """All directed (owned row, partner) pairs with r < build_cutoff, via cell bins."""
    n_total = len(pos)
    if n_total == 0 or n_local == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    lo = pos.min(axis=0)
    span = np.maximum(pos.max(axis=0) - lo, 1e-12)
    nb = np.maximum(1, np.floor(span / build_cutoff).astype(np.int64))
    width = span / nb
    cell = np.minimum((np.maximum(pos - lo, 0.0) / width).astype(np.int64), nb - 1)
    cid = (cell[:, 0] * nb[1] + cell[:, 1]) * nb[2] + cell[:, 2]
    order = np.argsort(cid, kind="stable")
    counts_c = np.bincount(cid, minlength=int(nb.prod()))
    starts_c = np.concatenate([[0], np.cumsum(counts_c)])
    r2cut = build_cutoff * build_cutoff
    offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
    rows_out, cols_out = [], []
    for lo_i in range(0, n_local, _ATOM_CHUNK):
        hi_i = min(lo_i + _ATOM_CHUNK, n_local)
        li0 = np.arange(lo_i, hi_i, dtype=np.int64)
        ci = cell[lo_i:hi_i]
        for off in offsets:
            nc = ci + np.asarray(off, dtype=np.int64)
            valid = np.all((nc >= 0) & (nc < nb), axis=1)
            if not valid.any():
                continue
            li = li0[valid]
            ncid = (nc[valid, 0] * nb[1] + nc[valid, 1]) * nb[2] + nc[valid, 2]
            cnt = counts_c[ncid]
            nz = cnt > 0
            li, ncid, cnt = li[nz], ncid[nz], cnt[nz]
            if len(li) == 0:
                continue
            total = int(cnt.sum())
            rows = np.repeat(li, cnt)
            csum = np.concatenate([[0], np.cumsum(cnt)])
            within = np.arange(total, dtype=np.int64) - np.repeat(csum[:-1], cnt)
            cols = order[np.repeat(starts_c[ncid], cnt) + within]
            keep = rows != cols
            rows, cols = rows[keep], cols[keep]
            if not len(rows):
                continue
            dr = pos[cols] - pos[rows]
            keep = np.einsum("ij,ij->i", dr, dr) < r2cut
            rows_out.append(rows[keep])
            cols_out.append(cols[keep])
    if not rows_out:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows_out), np.concatenate(cols_out)


def _apply_style(store: AtomStore, rows, cols, style: str, newton: bool, pos: np.ndarray):
    """Select directed entries and assign energy weights / partner-write flags."""
    n_local = store.n_local
    gid = store.global_ids
    if style == "full":
        weight = np.full(len(rows), 0.5)
        write_j = np.zeros(len(rows), dtype=bool)
        return rows, cols, weight, write_j
    if style != "half":
        raise NeighborError(f"unknown list style {style!r}")
    col_local = cols < n_local
    keep = np.zeros(len(rows), dtype=bool)
    # Owned pairs: once, smaller global id keeps the entry.
    ll = col_local
    keep[ll] = gid[rows[ll]] < gid[cols[ll]]
    lg = ~col_local
    if newton:
        my_rank = store.rank
        orank = store.owner_rank[cols[lg]]
        lower = orank > my_rank
        higher = orank < my_rank
        same = orank == my_rank
        sub = np.zeros(lg.sum(), dtype=bool)
        sub[lower] = True
        sub[higher] = False
        if same.any():
            pi = pos[rows[lg][same]]
            pj = pos[cols[lg][same]]
            # Lexicographic z, then y, then x decides same-rank image pairs.
            zi, zj = pi[:, 2], pj[:, 2]
            yi, yj = pi[:, 1], pj[:, 1]
            xi, xj = pi[:, 0], pj[:, 0]
            win = (zi < zj) | ((zi == zj) & (yi < yj)) | ((zi == zj) & (yi == yj) & (xi < xj))
            sub[same] = win
        keep[lg] = sub
        rows, cols = rows[keep], cols[keep]
        weight = np.ones(len(rows))
        write_j = np.ones(len(rows), dtype=bool)
        return rows, cols, weight, write_j
    # newton off: boundary pairs listed by each side, half energy, own row only.
    keep[lg] = True
    rows, cols = rows[keep], cols[keep]
    col_local = cols < n_local
    weight = np.where(col_local, 1.0, 0.5)
    write_j = col_local.copy()
    return rows, cols, weight, write_j


def build(store: AtomStore, box: Box, cutoff: float, skin: float, style: str = "full",
          newton: bool = True, capacity: int = DEFAULT_CAPACITY) -> NeighborList:
    """Build one rank's neighbor list from its local + ghost positions."""
    build_cutoff = cutoff + skin
    if build_cutoff > 0.5 * box.min_periodic_length():
        raise NeighborError(
            f"cutoff+skin {build_cutoff} exceeds half the shortest periodic box length")
    pos = store.positions().copy()
    rows, cols = _candidate_pairs(pos, store.n_local, build_cutoff)
    rows, cols, weight, write_j = _apply_style(store, rows, cols, style, newton, pos)
    # Canonical per-row ordering: partner global id, then z, y, x.
    if len(rows):
        pc = pos[cols]
        perm = np.lexsort((pc[:, 0], pc[:, 1], pc[:, 2], store.global_ids[cols], rows))
        rows, cols = rows[perm], cols[perm]
        weight, write_j = weight[perm], write_j[perm]
    nlist = NeighborList(store, style, newton, cutoff, skin, capacity)
    counts = np.bincount(rows, minlength=store.n_local).astype(np.int32)
    needed = int(counts.max()) if store.n_local else 0
    cap = max(capacity, 1)
    while cap < needed:
        # Over-allocation growth: never truncate, grow and rebuild the table.
        cap = int(np.ceil(cap * 1.5))
    nlist.max_neighbors = cap
    nlist.counts = counts
    nlist.table = create_dual((max(store.n_local, 1), cap), dtype=np.int32)
    tbl = nlist.table.view("a")
    tbl.fill(-1)
    if len(rows):
        row_first = np.concatenate([[0], np.cumsum(counts)])[:-1]
        slot = np.arange(len(rows)) - row_first[rows]
        tbl[rows, slot] = cols
    nlist.table.mark_modified("a")
    nlist.pair_i = rows
    nlist.pair_j = cols
    nlist.pair_weight = weight
    nlist.pair_write_j = write_j
    return nlist


def build_all(system: RankedSystem, cutoff: float, skin: float, style: str = "full",
              newton: bool = True, capacity: int = DEFAULT_CAPACITY) -> list[NeighborList]:
    """Exchange ghosts and build per-rank neighbor lists."""
    system.exchange_ghosts(cutoff + skin)
    return [build(store, system.box, cutoff, skin, style, newton, capacity)
            for store in system.stores]


def any_needs_rebuild(lists: list[NeighborList]) -> bool:
    return any(nl.needs_rebuild() for nl in lists)


def brute_force_pairs(pos: np.ndarray, box: Box, cutoff: float) -> set[tuple[int, int]]:
    """O(N^2) minimum-image reference pair set (unordered index pairs)."""
    from .domain import minimum_image

    n = len(pos)
    pairs = set()
    for i in range(n):
        dr = minimum_image(pos[i + 1:] - pos[i], box)
        r2 = np.einsum("ij,ij->i", dr, dr)
        for k in np.flatnonzero(r2 < cutoff * cutoff):
            pairs.add((i, int(i + 1 + k)))
    return pairs
