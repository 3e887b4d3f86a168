"""Charge equilibration: over-allocated CSR assembly, SpMV, and fused dual CG.

The interaction matrix is stored in an "over-allocated" CSR layout: row
offsets are an exclusive scan of per-row *capacities* (not nonzero counts),
so rows carry slack and a separate per-row nonzero count selects the active
prefix.  Offsets are 64-bit so the entry count may exceed 2^31 even though
column indices and row lengths stay 32-bit.  Both charge solves (H s = -chi,
H t = -1) run through one fused conjugate-gradient loop that shares each
iteration's matrix traversal while keeping per-system scalars independent,
so iterate trajectories are bit-identical to two sequential solves.
"""

from __future__ import annotations

import numpy as np

from .domain import AtomStore
from .neighbor import NeighborList


class QeqError(RuntimeError):
    pass


class QeqConfigError(QeqError):
    """Parameterization violates the positive-definiteness guarantee."""


class QeqParams:
    """Single-species charge-equilibration parameters."""

    def __init__(self, gamma: float, eta: float, chi: float, cutoff: float):
        if gamma <= 0 or eta <= 0 or cutoff <= 0:
            raise QeqError("gamma, eta, cutoff must be positive")
        self.gamma = float(gamma)
        self.eta = float(eta)
        self.chi = float(chi)
        self.cutoff = float(cutoff)


def scan_offsets_64(capacities) -> np.ndarray:
    """Exclusive 64-bit scan of per-row capacities; allocates no value storage."""
    caps = np.asarray(capacities, dtype=np.int64)
    offsets = np.zeros(len(caps) + 1, dtype=np.int64)
    np.cumsum(caps, out=offsets[1:])
    return offsets


class OverCSR:
    """Four-array over-allocated CSR matrix.

    ``row_offsets[r] .. row_offsets[r] + row_nnz[r]`` is the active span of
    row r; the remainder up to ``row_offsets[r+1]`` is slack.
    """

    def __init__(self, n_rows: int, n_cols: int, row_offsets: np.ndarray,
                 values: np.ndarray, columns: np.ndarray, row_nnz: np.ndarray):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.asarray(row_offsets, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.columns = np.asarray(columns, dtype=np.int32)
        self.row_nnz = np.asarray(row_nnz, dtype=np.int32)
        if len(self.row_offsets) != self.n_rows + 1:
            raise QeqError("row_offsets must have n_rows + 1 entries")
        caps = np.diff(self.row_offsets)
        if np.any(self.row_nnz > caps):
            raise QeqError("row_nnz exceeds row capacity")
        self._active_rows = None
        self._active_idx = None

    def _active(self):
        """Flat (row, storage-index) arrays covering every active entry."""
        if self._active_rows is None:
            nnz = self.row_nnz.astype(np.int64)
            rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), nnz)
            csum = np.concatenate([[0], np.cumsum(nnz)])
            within = np.arange(int(nnz.sum()), dtype=np.int64) - np.repeat(csum[:-1], nnz)
            self._active_idx = np.repeat(self.row_offsets[:-1], nnz) + within
            self._active_rows = rows
        return self._active_rows, self._active_idx

    def to_dense(self) -> np.ndarray:
        rows, idx = self._active()
        dense = np.zeros((self.n_rows, self.n_cols))
        np.add.at(dense, (rows, self.columns[idx].astype(np.int64)), self.values[idx])
        return dense


def build_matrix(store: AtomStore, nlist: NeighborList, params: QeqParams) -> OverCSR:
    """Assemble the shielded-interaction matrix from a full neighbor list.

    Row capacities come from the list's per-row counts plus the diagonal;
    offsets are the 64-bit exclusive scan of those capacities.  The diagonal
    holds eta; off-diagonals use the shielded kernel 1/(r^3 + gamma^-3)^(1/3)
    for pairs within the QEq cutoff.  Ghost partners map onto their owner's
    local column, so the matrix acts on owned atoms only.
    """
    if nlist.style != "full":
        raise QeqError("matrix assembly requires a full-style neighbor list")
    if params.cutoff > nlist.build_cutoff:
        raise QeqError(
            f"QEq cutoff {params.cutoff} exceeds neighbor build cutoff {nlist.build_cutoff}")
    n = store.n_local
    capacities = nlist.counts.astype(np.int64) + 1
    offsets = scan_offsets_64(capacities)
    total = int(offsets[-1])
    values = np.zeros(total)
    columns = np.zeros(total, dtype=np.int32)
    row_nnz = np.zeros(n, dtype=np.int32)
    pos = store.positions()
    rows, cols, _, _ = nlist.pairs()
    dr = pos[cols] - pos[rows]
    r2 = np.einsum("ij,ij->i", dr, dr)
    within = r2 < params.cutoff * params.cutoff
    rows_w, cols_w, r_w = rows[within], cols[within], np.sqrt(r2[within])
    # Diagonal first in every row, then neighbors in table order.
    diag_at = offsets[:-1]
    values[diag_at] = params.eta
    columns[diag_at] = np.arange(n, dtype=np.int32)
    row_nnz[:] = 1
    if len(rows_w):
        g3 = params.gamma ** -3.0
        vals = (r_w ** 3 + g3) ** (-1.0 / 3.0)
        # entries appear in table order per row (rows_w is sorted)
        cnt = np.bincount(rows_w, minlength=n)
        csum = np.concatenate([[0], np.cumsum(cnt)])
        within_row = np.arange(len(rows_w)) - np.repeat(csum[:-1], cnt)
        slot = offsets[rows_w] + 1 + within_row
        values[slot] = vals
        columns[slot] = store.owner_index[cols_w]
        row_nnz += cnt.astype(np.int32)
    return OverCSR(n, n, offsets, values, columns, row_nnz)


def spmv(H: OverCSR, x: np.ndarray) -> np.ndarray:
    """y = Hx over the active prefix of each row (slack ignored)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (H.n_cols,):
        raise QeqError(f"dimension mismatch: H is {H.n_rows}x{H.n_cols}, x has shape {x.shape}")
    rows, idx = H._active()
    contrib = H.values[idx] * x[H.columns[idx].astype(np.int64)]
    return np.bincount(rows, weights=contrib, minlength=H.n_rows)


def spmv_fused(H: OverCSR, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two products sharing one traversal; bit-identical to two spmv calls."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != (H.n_cols,) or x2.shape != (H.n_cols,):
        raise QeqError("dimension mismatch in fused spmv")
    rows, idx = H._active()
    vals = H.values[idx]
    cols = H.columns[idx].astype(np.int64)
    y1 = np.bincount(rows, weights=vals * x1[cols], minlength=H.n_rows)
    y2 = np.bincount(rows, weights=vals * x2[cols], minlength=H.n_rows)
    return y1, y2


def spmv_rowchunk(H: OverCSR, x: np.ndarray, n_chunks: int = 4) -> np.ndarray:
    """Row-parallel traversal: each row's active span split into local partial sums."""
    x = np.asarray(x, dtype=np.float64)
    nnz = H.row_nnz.astype(np.int64)
    y = np.zeros(H.n_rows)
    for c in range(max(1, n_chunks)):
        lo = (nnz * c) // n_chunks
        hi = (nnz * (c + 1)) // n_chunks
        span = hi - lo
        if not span.any():
            continue
        rows = np.repeat(np.arange(H.n_rows, dtype=np.int64), span)
        csum = np.concatenate([[0], np.cumsum(span)])
        within = np.arange(int(span.sum()), dtype=np.int64) - np.repeat(csum[:-1], span)
        idx = np.repeat(H.row_offsets[:-1] + lo, span) + within
        contrib = H.values[idx] * x[H.columns[idx].astype(np.int64)]
        y += np.bincount(rows, weights=contrib, minlength=H.n_rows)
    return y


def check_spd(H: OverCSR) -> None:
    """Gershgorin positive-definiteness guard: diag must dominate each row."""
    rows, idx = H._active()
    cols = H.columns[idx].astype(np.int64)
    vals = H.values[idx]
    on_diag = cols == rows
    diag = np.zeros(H.n_rows)
    np.add.at(diag, rows[on_diag], vals[on_diag])
    offsum = np.bincount(rows, weights=np.abs(vals) * (~on_diag), minlength=H.n_rows)
    bad = diag <= offsum
    if bad.any():
        r = int(np.flatnonzero(bad)[0])
        raise QeqConfigError(
            f"Gershgorin violation at row {r}: diagonal {diag[r]:.6g} <= off-diagonal "
            f"sum {offsum[r]:.6g}; raise eta or shrink the QEq cutoff")


def _cg_step(H_apply, x, r, p, rr):
    """One textbook CG update; shared verbatim by fused and sequential solvers."""
    Ap = H_apply(p)
    pAp = float(np.dot(p, Ap))
    alpha = rr / pAp
    x = x + alpha * p
    r = r - alpha * Ap
    rr_new = float(np.dot(r, r))
    beta = rr_new / rr
    p = r + beta * p
    return x, r, p, rr_new, Ap


def cg_solve(H: OverCSR, b: np.ndarray, tol: float = 1e-6, max_iter: int = 500,
             trajectory: list | None = None) -> tuple[np.ndarray, int]:
    """Sequential conjugate-gradient reference solve to relative residual tol."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(np.dot(r, r))
    bnorm2 = float(np.dot(b, b))
    if bnorm2 == 0.0:
        return x, 0
    it = 0
    while rr > tol * tol * bnorm2:
        if it >= max_iter:
            raise QeqError(f"CG failed to converge in {max_iter} iterations; "
                           f"relative residual {np.sqrt(rr / bnorm2):.3e}")
        x, r, p, rr, _ = _cg_step(lambda v: spmv(H, v), x, r, p, rr)
        it += 1
        if trajectory is not None:
            trajectory.append((it, x.copy(), r.copy()))
    return x, it


def cg_solve_fused(H: OverCSR, b1: np.ndarray, b2: np.ndarray, tol: float = 1e-6,
                   max_iter: int = 500, trajectories: tuple[list, list] | None = None
                   ) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Fused dual CG: one matrix traversal per iteration drives both systems.

    Each system keeps its own alpha/beta scalars and freezes once converged;
    per-system iterate trajectories match two independent solves bit-exactly.
    """
    state = []
    for b in (np.asarray(b1, dtype=np.float64), np.asarray(b2, dtype=np.float64)):
        x = np.zeros_like(b)
        r = b.copy()
        p = r.copy()
        rr = float(np.dot(r, r))
        bb = float(np.dot(b, b))
        state.append({"x": x, "r": r, "p": p, "rr": rr, "bb": bb, "it": 0,
                      "active": bb > 0.0 and rr > tol * tol * bb})
    outer = 0
    while state[0]["active"] or state[1]["active"]:
        if outer >= max_iter:
            res = [np.sqrt(s["rr"] / s["bb"]) if s["bb"] else 0.0 for s in state]
            raise QeqError(f"fused CG failed to converge in {max_iter} iterations; "
                           f"relative residuals {res[0]:.3e}, {res[1]:.3e}")
        y1, y2 = spmv_fused(H, state[0]["p"], state[1]["p"])
        for lane, (s, Ap) in enumerate(zip(state, (y1, y2))):
            if not s["active"]:
                continue
            pAp = float(np.dot(s["p"], Ap))
            alpha = s["rr"] / pAp
            s["x"] = s["x"] + alpha * s["p"]
            s["r"] = s["r"] - alpha * Ap
            rr_new = float(np.dot(s["r"], s["r"]))
            beta = rr_new / s["rr"]
            s["p"] = s["r"] + beta * s["p"]
            s["rr"] = rr_new
            s["it"] += 1
            if trajectories is not None:
                trajectories[lane].append((s["it"], s["x"].copy(), s["r"].copy()))
            if rr_new <= tol * tol * s["bb"]:
                s["active"] = False
        outer += 1
    return state[0]["x"], state[1]["x"], state[0]["it"], state[1]["it"]


class QeqSystem:
    """Interaction matrix plus electronegativity data for one charge solve."""

    def __init__(self, H: OverCSR, chi: np.ndarray, tol: float = 1e-6,
                 max_iter: int = 500, net_charge: float = 0.0):
        self.H = H
        self.chi = np.asarray(chi, dtype=np.float64)
        if self.chi.shape != (H.n_rows,):
            raise QeqError("chi length must match matrix rows")
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.net_charge = float(net_charge)
        self.q = None
        self.iterations = (0, 0)


def solve_qeq(system: QeqSystem) -> np.ndarray:
    """Charges minimizing the electrostatic energy at fixed total charge.

    Solves H s = -chi and H t = -1 with the fused CG, then assembles
    q = s + lambda t with lambda = (Q_net - sum s) / sum t.
    """
    check_spd(system.H)
    n = system.H.n_rows
    s, t, it_s, it_t = cg_solve_fused(system.H, -system.chi, -np.ones(n),
                                      tol=system.tol, max_iter=system.max_iter)
    lam = (system.net_charge - s.sum()) / t.sum()
    q = s + lam * t
    system.q = q
    system.iterations = (it_s, it_t)
    return q


def qeq_energy(system: QeqSystem) -> float:
    """Electrostatic energy chi.q + q.Hq/2 of the solved charges."""
    if system.q is None:
        raise QeqError("solve_qeq must run first")
    q = system.q
    return float(np.dot(system.chi, q) + 0.5 * np.dot(q, spmv(system.H, q)))
