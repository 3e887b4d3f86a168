"""Descriptor pipeline: hypersphere map, expansion recursion, and kernels.

Per-pair rotation matrices u_j grow level by level from the Cayley-Klein
seed via a linear four-term recursion; atoms accumulate switching-weighted
sums U_j.  The adjoint field Y collects every coupled product's sensitivity
to U so one pass over (atom, neighbor) pairs yields all three force
components.  Pair traversal is chunked so per-worker scratch stays bounded;
batch/tile knobs only rearrange scheduling and never change results beyond
last-ulp reassociation.
"""

from __future__ import annotations

import numpy as np

from ..memspace import DualArray, LayoutPolicy
from .coupling import CouplingTables
from .indexing import QuantumIndex

_CHUNK_BASE = 8192


class SnapError(RuntimeError):
    pass


def cutoff_switch(r, r_c: float):
    """C1 switching f_c(r) = (1 + cos(pi r / r_c)) / 2 and its derivative."""
    r = np.asarray(r, dtype=np.float64)
    fc = 0.5 * (1.0 + np.cos(np.pi * r / r_c))
    dfc = -np.pi / (2.0 * r_c) * np.sin(np.pi * r / r_c)
    return fc, dfc


def _base_params(dr, r, r_c: float):
    """Hypersphere parameters a, b plus switching values for one pair block."""
    y, z = dr[:, 1], dr[:, 2]
    c_theta = 0.99 * np.pi / r_c              # polar angle per unit distance
    theta0 = c_theta * r
    z0 = r / np.tan(theta0)
    r0 = np.sqrt(r * r + z0 * z0)
    a = (z0 - 1j * z) / r0
    b = (y - 1j * dr[:, 0]) / r0
    fc, dfc = cutoff_switch(r, r_c)
    return a, b, fc, dfc, z0, r0


def _deriv_params(dr, r, r_c: float, a, b, z0, r0):
    """dr-gradients of a and b; elementwise, so block size never matters."""
    c_theta = 0.99 * np.pi / r_c
    # chain pieces for d{a,b}/d(dr_d), d = x, y, z
    dz0_dr = z0 / r - c_theta * (r * r + z0 * z0) / r
    rhat = dr / r[:, None]
    dz0 = dz0_dr[:, None] * rhat                    # (n, 3)
    dr0 = (dr + z0[:, None] * dz0) / r0[:, None]    # (n, 3)
    unit = np.zeros((len(r), 3), dtype=np.complex128)
    unit[:, 2] = -1j                                # d(z0 - i z)/d(dr_z)
    da = (dz0 + unit) / r0[:, None] - a[:, None] * dr0 / r0[:, None]
    unit_b = np.zeros((len(r), 3), dtype=np.complex128)
    unit_b[:, 0] = -1j
    unit_b[:, 1] = 1.0
    db = unit_b / r0[:, None] - b[:, None] * dr0 / r0[:, None]
    return da, db


class NeighborMap:
    """Per-(atom, neighbor) Cayley-Klein parameters and switching values.

    Entries are sorted by (row, dz, dy, dx) so the accumulation order is a
    function of geometry alone, independent of list construction order and
    of atom labels.  Parameters are derived in bounded segments, and the
    bulky per-pair gradients are recomputed on demand per block instead of
    stored, so resident memory stays proportional to geometry alone.
    """

    _SEGMENT = 1 << 16

    def __init__(self, rows, cols, dr, r, r_c: float):
        order = np.lexsort((dr[:, 0], dr[:, 1], dr[:, 2], rows))
        self.rows = rows[order]
        self.cols = cols[order]
        self.dr = dr[order]
        self.r = r[order]
        self.r_c = float(r_c)
        self.n_pairs = len(self.rows)
        n = self.n_pairs
        self.a = np.empty(n, dtype=np.complex128)
        self.b = np.empty(n, dtype=np.complex128)
        self.fc = np.empty(n)
        self.dfc = np.empty(n)
        for lo in range(0, n, self._SEGMENT):
            hi = min(lo + self._SEGMENT, n)
            a, b, fc, dfc, _, _ = _base_params(
                self.dr[lo:hi], self.r[lo:hi], self.r_c)
            self.a[lo:hi], self.b[lo:hi] = a, b
            self.fc[lo:hi], self.dfc[lo:hi] = fc, dfc

    def deriv_params(self, sel: slice):
        """(da, db) for one pair block; values are independent of block size."""
        dr, r = self.dr[sel], self.r[sel]
        a, b, _, _, z0, r0 = _base_params(dr, r, self.r_c)
        return _deriv_params(dr, r, self.r_c, a, b, z0, r0)


def build_neighbor_map(store, nlist, r_c: float) -> NeighborMap:
    """Map in-range pairs of a full list onto hypersphere parameters."""
    if nlist.style != "full":
        raise SnapError("descriptor pipeline requires a full-style neighbor list")
    if r_c > nlist.build_cutoff:
        raise SnapError(f"cutoff {r_c} exceeds neighbor build cutoff {nlist.build_cutoff}")
    rows, cols, _, _ = nlist.pairs()
    pos = store.positions()
    dr = pos[cols] - pos[rows]
    r2 = np.einsum("ij,ij->i", dr, dr)
    within = r2 < r_c * r_c
    rows, cols, dr, r2 = rows[within], cols[within], dr[within], r2[within]
    if np.any(r2 <= 0.0):
        raise SnapError("neighbor at zero distance")
    return NeighborMap(rows, cols, dr, np.sqrt(r2), r_c)


_GRID_CACHE: dict[int, tuple] = {}


def _recursion_grids(tj: int):
    """sqrt-weight grids for the four-term level recursion at level tj."""
    if tj not in _GRID_CACHE:
        p = np.arange(1, tj + 1, dtype=np.float64)
        q0 = np.arange(tj, dtype=np.float64)
        c11 = np.sqrt(np.outer(p, q0 + 1.0)) / tj
        c10 = np.sqrt(np.outer(p, tj - q0)) / tj
        c01 = np.sqrt(np.outer(tj - p + 1.0, q0 + 1.0)) / tj
        c00 = np.sqrt(np.outer(tj - p + 1.0, tj - q0)) / tj
        _GRID_CACHE[tj] = (c11, c10, c01, c00)
    return _GRID_CACHE[tj]


def _next_level(prev: np.ndarray, tj: int, a, b):
    """u_tj from u_(tj-1): four shifted block products with sqrt weights."""
    c11, c10, c01, c00 = _recursion_grids(tj)
    n = prev.shape[0]
    new = np.zeros((n, tj + 1, tj + 1), dtype=np.complex128)
    new[:, 1:, 1:] += c11 * (prev * a[:, None, None])
    new[:, 1:, :-1] += c10 * (prev * b[:, None, None])
    new[:, :-1, 1:] += c01 * (prev * (-np.conj(b))[:, None, None])
    new[:, :-1, :-1] += c00 * (prev * np.conj(a)[:, None, None])
    return new


def _next_level_d(prev, dprev, tj: int, a, b, da, db):
    """Product-rule companion of _next_level for the (n, 3, tj, tj) stack."""
    c11, c10, c01, c00 = _recursion_grids(tj)
    n = prev.shape[0]
    dnew = np.zeros((n, 3, tj + 1, tj + 1), dtype=np.complex128)
    p4 = prev[:, None]
    dnew[:, :, 1:, 1:] += c11 * (dprev * a[:, None, None, None] + p4 * da[:, :, None, None])
    dnew[:, :, 1:, :-1] += c10 * (dprev * b[:, None, None, None] + p4 * db[:, :, None, None])
    dnew[:, :, :-1, 1:] += c01 * (dprev * (-np.conj(b))[:, None, None, None]
                                  + p4 * (-np.conj(db))[:, :, None, None])
    dnew[:, :, :-1, :-1] += c00 * (dprev * np.conj(a)[:, None, None, None]
                                   + p4 * np.conj(da)[:, :, None, None])
    return dnew


def pair_u_flat(a, b, twojmax: int) -> np.ndarray:
    """Unweighted u_j levels for each pair, flattened to (n, n_flat)."""
    a = np.atleast_1d(np.asarray(a, dtype=np.complex128))
    b = np.atleast_1d(np.asarray(b, dtype=np.complex128))
    n = len(a)
    qi = QuantumIndex(twojmax / 2.0)
    out = np.empty((n, qi.n_flat), dtype=np.complex128)
    level = np.ones((n, 1, 1), dtype=np.complex128)
    out[:, 0] = 1.0
    for tj in range(1, twojmax + 1):
        if tj == 1:
            level = np.empty((n, 2, 2), dtype=np.complex128)
            level[:, 0, 0] = np.conj(a)
            level[:, 0, 1] = -np.conj(b)
            level[:, 1, 0] = b
            level[:, 1, 1] = a
        else:
            level = _next_level(level, tj, a, b)
        out[:, qi.block_offset[tj]:qi.block_offset[tj + 1]] = level.reshape(n, -1)
    return out


def _pair_u_du_flat(nmap: NeighborMap, sel: slice, qi: QuantumIndex,
                    derivatives: bool = True):
    """Weighted (f_c u, d(f_c u)/d dr) for one pair chunk: (n, F), (n, 3, F).

    With derivatives=False the second return is None and the derivative
    recursion is skipped entirely.
    """
    twojmax = qi.twojmax
    a, b = nmap.a[sel], nmap.b[sel]
    n = len(a)
    u = np.empty((n, qi.n_flat), dtype=np.complex128)
    level = np.ones((n, 1, 1), dtype=np.complex128)
    u[:, 0] = 1.0
    if derivatives:
        da, db = nmap.deriv_params(sel)
        du = np.empty((n, 3, qi.n_flat), dtype=np.complex128)
        dlevel = np.zeros((n, 3, 1, 1), dtype=np.complex128)
        du[:, :, 0] = 0.0
    for tj in range(1, twojmax + 1):
        if tj == 1:
            nl = np.empty((n, 2, 2), dtype=np.complex128)
            nl[:, 0, 0] = np.conj(a)
            nl[:, 0, 1] = -np.conj(b)
            nl[:, 1, 0] = b
            nl[:, 1, 1] = a
            if derivatives:
                dl = np.empty((n, 3, 2, 2), dtype=np.complex128)
                dl[:, :, 0, 0] = np.conj(da)
                dl[:, :, 0, 1] = -np.conj(db)
                dl[:, :, 1, 0] = db
                dl[:, :, 1, 1] = da
        else:
            if derivatives:
                dl = _next_level_d(level, dlevel, tj, a, b, da, db)
            nl = _next_level(level, tj, a, b)
        level = nl
        sl = slice(int(qi.block_offset[tj]), int(qi.block_offset[tj + 1]))
        u[:, sl] = level.reshape(n, -1)
        if derivatives:
            dlevel = dl
            du[:, :, sl] = dlevel.reshape(n, 3, -1)
    fc = nmap.fc[sel]
    wu = fc[:, None] * u
    if not derivatives:
        return wu, None
    rhat = nmap.dr[sel] / nmap.r[sel][:, None]
    chain = nmap.dfc[sel][:, None] * rhat            # (n, 3) d f_c / d dr_d
    wdu = fc[:, None, None] * du + chain[:, :, None] * u[:, None, :]
    return wu, wdu


class SnapState:
    """Per-atom expansion (U) and adjoint (Y) fields plus tuning knobs.

    layout "a" stores quantum index fastest (row-major over (atom, flat));
    layout "b" stores atoms fastest (transposed).  batch_u scales the pair
    chunk in the expansion pass, batch_y groups coupled triples, tile_v
    tiles the atom axis of the contraction; all are scheduling-only.
    """

    def __init__(self, tables: CouplingTables, n_atoms: int, beta,
                 batch_u: int = 4, batch_y: int = 1, tile_v: int = 0,
                 layout: str = "a"):
        self.tables = tables
        self.index = tables.index
        self.n_atoms = int(n_atoms)
        self.beta = np.asarray(beta, dtype=np.float64)
        if self.beta.shape != (len(tables.triples),):
            raise SnapError(
                f"beta has {self.beta.shape} entries; expected {len(tables.triples)} "
                f"(one per coupled triple)")
        if layout not in ("a", "b"):
            raise SnapError(f"layout must be 'a' or 'b', got {layout!r}")
        self.layout = layout
        self.batch_u = max(1, int(batch_u))
        self.batch_y = max(1, int(batch_y))
        self.tile_v = int(tile_v)  # 0 disables atom tiling
        shape = (max(1, self.n_atoms), self.index.n_flat)
        row_major = LayoutPolicy.row_major(2)
        transposed = LayoutPolicy.transposed(2)
        self.U = DualArray(shape, layout_a=row_major, layout_b=transposed,
                           dtype=np.complex128)
        self.Y = DualArray(shape, layout_a=row_major, layout_b=transposed,
                           dtype=np.complex128)

    def u_view(self) -> np.ndarray:
        return self.U.read(self.layout)[: self.n_atoms]

    def y_view(self) -> np.ndarray:
        return self.Y.read(self.layout)[: self.n_atoms]


def compute_ui(nmap: NeighborMap, state: SnapState) -> None:
    """Accumulate switching-weighted pair expansions into per-atom U."""
    qi = state.index
    u = state.U.read(state.layout)
    u[:] = 0.0
    chunk = state.batch_u * _CHUNK_BASE
    for start in range(0, nmap.n_pairs, chunk):
        sel = slice(start, min(start + chunk, nmap.n_pairs))
        wu, _ = _pair_u_du_flat(nmap, sel, qi, derivatives=False)
        rows = nmap.rows[sel]
        firsts = np.flatnonzero(np.concatenate([[True], rows[1:] != rows[:-1]]))
        partial = np.add.reduceat(wu, firsts, axis=0)
        u[rows[firsts]] += partial
    state.U.mark_modified(state.layout)


def _atom_tiles(n_atoms: int, tile_v: int):
    if tile_v and tile_v > 0:
        for s in range(0, n_atoms, tile_v):
            yield slice(s, min(s + tile_v, n_atoms))
    else:
        yield slice(0, n_atoms)


def compute_yi(state: SnapState) -> None:
    """Adjoint accumulation: every coupled product's sensitivity to U.

    For each coupled triple with coefficient beta_t, the contraction
    Z[iz] = sum coeff * U[iu1] * U[iu2] feeds three slots:
      Y[iz]  += beta_t * coeff * U[iu1] * U[iu2]          (product value)
      Y[iu1] += beta_t * coeff * conj(U[iu2]) * U[iz]     (first factor)
      Y[iu2] += beta_t * coeff * conj(U[iu1]) * U[iz]     (second factor)
    which together make Y the complete adjoint of the scalar invariants
    with respect to conj(U).
    """
    u_full = state.u_view()
    y_full = state.y_view()
    y_full[:] = 0.0
    terms = state.tables.terms
    beta = state.beta
    for atoms in _atom_tiles(state.n_atoms, state.tile_v):
        u = u_full[atoms]
        y = y_full[atoms]
        for t0 in range(0, len(terms), state.batch_y):
            for it in range(t0, min(t0 + state.batch_y, len(terms))):
                tt = terms[it]
                bt = beta[it]
                if bt == 0.0:
                    continue
                u1 = u[:, tt.iu1]
                u2 = u[:, tt.iu2]
                uz = u[:, tt.iz]
                prod_z = (tt.coeff * u1) * u2
                seg = np.add.reduceat(prod_z[:, tt.order_iz], tt.starts_iz, axis=1)
                y[:, tt.unique_iz] += bt * seg
                prod_1 = (tt.coeff * np.conj(u2)) * uz
                seg = np.add.reduceat(prod_1[:, tt.order_iu1], tt.starts_iu1, axis=1)
                y[:, tt.unique_iu1] += bt * seg
                prod_2 = (tt.coeff * np.conj(u1)) * uz
                seg = np.add.reduceat(prod_2[:, tt.order_iu2], tt.starts_iu2, axis=1)
                y[:, tt.unique_iu2] += bt * seg
    state.Y.mark_modified(state.layout)


def compute_zi(state: SnapState, it: int) -> np.ndarray:
    """Dense Z block of one coupled triple, for every atom (oracle helper)."""
    tt = state.tables.terms[it]
    u = state.u_view()
    tj = tt.tj
    z = np.zeros((state.n_atoms, (tj + 1) * (tj + 1)), dtype=np.complex128)
    local = tt.iz - state.index.block_offset[tj]
    np.add.at(z.T, local, (tt.coeff * u[:, tt.iu1] * u[:, tt.iu2]).T)
    return z.reshape(state.n_atoms, tj + 1, tj + 1)


def compute_bi_complex(state: SnapState) -> np.ndarray:
    """Scalar invariants before dropping the imaginary residue: (atoms, triples)."""
    u_full = state.u_view()
    out = np.empty((state.n_atoms, len(state.tables.terms)), dtype=np.complex128)
    for atoms in _atom_tiles(state.n_atoms, state.tile_v):
        u = u_full[atoms]
        for it, tt in enumerate(state.tables.terms):
            prod = (tt.coeff * u[:, tt.iu1]) * u[:, tt.iu2] * np.conj(u[:, tt.iz])
            out[atoms, it] = prod.sum(axis=1)
    return out


def compute_bi(state: SnapState) -> np.ndarray:
    """Per-atom descriptor vector (real part of the scalar invariants)."""
    return compute_bi_complex(state).real


def compute_energy(state: SnapState) -> float:
    """E = sum over atoms of beta . B (descriptor route)."""
    if not state.n_atoms:
        return 0.0
    return float(np.sum(compute_bi(state) @ state.beta))


def energy_from_y(state: SnapState) -> float:
    """Adjoint-route energy: Re(sum Y : conj(U)) / 3.

    Each scalar invariant is trilinear in U, so the complete adjoint
    contracted against conj(U) recovers three times the invariant sum
    (one factor per slot); the division restores the energy scale.
    """
    u = state.u_view()
    y = state.y_view()
    return float(np.sum(y * np.conj(u)).real) / 3.0


def compute_fused_deidrj(nmap: NeighborMap, state: SnapState, n_total: int
                         ) -> np.ndarray:
    """All three force components in one chunked pass over pairs.

    Per chunk, the derivative recursion runs alongside the value recursion
    in a bounded workspace and is contracted against the owning atom's Y
    immediately; forces scatter with opposite signs to the two endpoints.
    """
    qi = state.index
    y = state.y_view()
    forces = np.zeros((n_total, 3))
    chunk = state.batch_u * _CHUNK_BASE
    for start in range(0, nmap.n_pairs, chunk):
        sel = slice(start, min(start + chunk, nmap.n_pairs))
        _, wdu = _pair_u_du_flat(nmap, sel, qi, derivatives=True)
        rows = nmap.rows[sel]
        t = np.einsum("pf,pdf->pd", y[rows], np.conj(wdu)).real
        np.add.at(forces, rows, t)
        np.subtract.at(forces, nmap.cols[sel], t)
    return forces


def compute_duidrj(nmap: NeighborMap, state: SnapState) -> np.ndarray:
    """Unfused stage: materialize d(f_c u)/d dr for every pair: (n, 3, F)."""
    qi = state.index
    out = np.empty((nmap.n_pairs, 3, qi.n_flat), dtype=np.complex128)
    chunk = state.batch_u * _CHUNK_BASE
    for start in range(0, nmap.n_pairs, chunk):
        sel = slice(start, min(start + chunk, nmap.n_pairs))
        _, wdu = _pair_u_du_flat(nmap, sel, qi, derivatives=True)
        out[sel] = wdu
    return out


def compute_deidrj(nmap: NeighborMap, state: SnapState, du: np.ndarray,
                   n_total: int) -> np.ndarray:
    """Unfused contraction of staged derivatives against the adjoint field."""
    y = state.y_view()
    forces = np.zeros((n_total, 3))
    chunk = state.batch_u * _CHUNK_BASE
    for start in range(0, nmap.n_pairs, chunk):
        sel = slice(start, min(start + chunk, nmap.n_pairs))
        rows = nmap.rows[sel]
        t = np.einsum("pf,pdf->pd", y[rows], np.conj(du[sel])).real
        np.add.at(forces, rows, t)
        np.subtract.at(forces, nmap.cols[sel], t)
    return forces


def read_coeff_file(path) -> tuple[float, np.ndarray]:
    """Coefficient text file: first token jmax, then one beta per triple.

    Triples are ordered j slowest, then j1, then j2 (the flat storage
    order).  '#' starts a comment; tokens are whitespace-separated.
    """
    tokens = []
    with open(path) as fh:
        for line in fh:
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
    if not tokens:
        raise SnapError(f"coefficient file {path} is empty")
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise SnapError(f"coefficient file {path}: {exc}") from None
    jmax = values[0]
    qi = QuantumIndex(jmax)
    need = len(qi.triples())
    beta = np.asarray(values[1:], dtype=np.float64)
    if len(beta) != need:
        raise SnapError(
            f"coefficient file {path}: expected {need} beta values for jmax {jmax}, "
            f"got {len(beta)}")
    return jmax, beta
