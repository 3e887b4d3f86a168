"""Dual-space arrays, layout policies, and scatter accumulation.

This is the portability substrate the rest of the engine builds on: an
N-dimensional array replicated across two CPU-resident logical spaces with
staleness tracking (so a copy happens only when a reader is actually stale),
per-space storage layouts, and a write-deconfliction accumulator with
selectable strategy (sequential, data duplication, or atomic-style adds on
shared storage).
"""

from __future__ import annotations

import threading

import numpy as np

from .parallel import worker_count

SPACES = ("a", "b")


class MemspaceError(RuntimeError):
    """Protocol violation on a dual-space array or accumulator."""


class LayoutPolicy:
    """Permutation of dimension indices mapping logical to storage order.

    ``order`` lists logical dimensions from slowest-varying to fastest-varying
    in storage.  The identity permutation is row-major (last logical index
    fastest); the reversed permutation stores the first logical index fastest,
    i.e. the transposed layout.
    """

    __slots__ = ("order",)

    def __init__(self, order):
        order = tuple(int(d) for d in order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"order must be a permutation of 0..{len(order) - 1}, got {order}")
        self.order = order

    @classmethod
    def row_major(cls, ndim: int) -> "LayoutPolicy":
        return cls(range(ndim))

    @classmethod
    def transposed(cls, ndim: int) -> "LayoutPolicy":
        return cls(range(ndim - 1, -1, -1))

    def storage_shape(self, shape) -> tuple[int, ...]:
        return tuple(shape[d] for d in self.order)

    def flat_index(self, idx, shape) -> int:
        """Storage offset of the logical index tuple ``idx``."""
        if len(idx) != len(self.order):
            raise ValueError("index rank mismatch")
        off = 0
        for d in self.order:
            off = off * shape[d] + idx[d]
        return off

    def view(self, flat: np.ndarray, shape) -> np.ndarray:
        """Logical-order strided view of a flat storage buffer."""
        v = flat.reshape(self.storage_shape(shape))
        # Storage axis s holds logical dimension order[s]; invert that map.
        axes = tuple(self.order.index(d) for d in range(len(self.order)))
        return np.transpose(v, axes=axes)

    def __repr__(self):
        return f"LayoutPolicy(order={self.order})"

    def __eq__(self, other):
        return isinstance(other, LayoutPolicy) and self.order == other.order


class DualArray:
    """Array replicated across two logical memory spaces with staleness flags.

    The synchronization protocol is the point: writers declare modifications
    via :meth:`mark_modified`, readers call :meth:`sync` before reading, and
    ``transfer_count`` increments only when a copy physically occurs.  At most
    one space may be marked modified at a time (single-writer protocol).
    """

    def __init__(self, shape, layout_a: LayoutPolicy | None = None,
                 layout_b: LayoutPolicy | None = None, dtype=np.float64):
        shape = tuple(int(s) for s in shape)
        if len(shape) == 0:
            raise ValueError("shape must have at least one dimension")
        if any(s <= 0 for s in shape):
            raise ValueError(f"all extents must be > 0, got {shape}")
        n = 1
        for s in shape:
            n *= s
            if n > 2**62:
                raise ValueError(f"extent product overflows: {shape}")
        self.shape = shape
        self.layout_a = layout_a if layout_a is not None else LayoutPolicy.row_major(len(shape))
        self.layout_b = layout_b if layout_b is not None else LayoutPolicy.transposed(len(shape))
        if len(self.layout_a.order) != len(shape) or len(self.layout_b.order) != len(shape):
            raise ValueError("layout rank does not match shape rank")
        self.data_a = np.zeros(n, dtype=dtype)
        self.data_b = np.zeros(n, dtype=dtype)
        self.modified_a = False
        self.modified_b = False
        self.transfer_count = 0

    def _check_space(self, space: str) -> str:
        if space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {space!r}")
        return space

    def layout(self, space: str) -> LayoutPolicy:
        return self.layout_a if self._check_space(space) == "a" else self.layout_b

    def storage(self, space: str) -> np.ndarray:
        return self.data_a if self._check_space(space) == "a" else self.data_b

    def view(self, space: str) -> np.ndarray:
        """Logical-index view backed by the given space's storage."""
        return self.layout(space).view(self.storage(space), self.shape)

    def modified(self, space: str) -> bool:
        return self.modified_a if self._check_space(space) == "a" else self.modified_b

    def mark_modified(self, space: str) -> None:
        space = self._check_space(space)
        other = "b" if space == "a" else "a"
        if self.modified(other):
            raise MemspaceError(
                f"space {other!r} has unsynchronized modifications; sync before writing {space!r}"
            )
        if space == "a":
            self.modified_a = True
        else:
            self.modified_b = True

    def sync(self, space: str) -> "DualArray":
        """Make ``space`` current, copying from the other space only if stale."""
        space = self._check_space(space)
        other = "b" if space == "a" else "a"
        if self.modified(other):
            # A copy is required even when both layouts agree.
            self.view(space)[...] = self.view(other)
            self.transfer_count += 1
            if other == "a":
                self.modified_a = False
            else:
                self.modified_b = False
        return self

    def read(self, space: str) -> np.ndarray:
        """Sync then return the logical view of ``space``."""
        self.sync(space)
        return self.view(space)


def create_dual(shape, layout_a: LayoutPolicy | None = None,
                layout_b: LayoutPolicy | None = None, dtype=np.float64) -> DualArray:
    """Allocate a zero-filled dual-space array (neither space marked modified)."""
    return DualArray(shape, layout_a=layout_a, layout_b=layout_b, dtype=dtype)


class Serial:
    """Reference strategy: ordered sequential accumulation."""

    copies = 1

    def __repr__(self):
        return "Serial()"


class Duplicate:
    """Data-duplication strategy: per-worker staging buffers plus a combine pass."""

    def __init__(self, copies: int | None = None):
        self.copies = worker_count(copies)
        if self.copies < 1:
            raise ValueError("Duplicate requires at least one copy")

    def __repr__(self):
        return f"Duplicate(copies={self.copies})"


class Atomic:
    """Atomic-style strategy: conflict-free concurrent adds on shared storage."""

    copies = 1

    def __repr__(self):
        return "Atomic()"


Strategy = Serial | Duplicate | Atomic


class ScatterAccumulator:
    """Accumulates indexed contributions into a dense target array.

    Contributions index the first axis of ``target_shape``; values carry the
    remaining axes.  All strategies agree with the sequential reference up to
    floating-point reassociation.  ``finalize`` is a barrier: afterwards the
    accumulator no longer accepts contributions.
    """

    def __init__(self, target_shape, strategy: Strategy | None = None, dtype=np.float64):
        self.target_shape = tuple(int(s) for s in target_shape)
        if any(s < 0 for s in self.target_shape):
            raise ValueError(f"invalid target shape {self.target_shape}")
        self.strategy = strategy if strategy is not None else Serial()
        self._n = self.target_shape[0] if self.target_shape else 0
        if isinstance(self.strategy, Duplicate):
            self._staging = np.zeros((self.strategy.copies,) + self.target_shape, dtype=dtype)
            self._data = None
            self._locks = [threading.Lock() for _ in range(self.strategy.copies)]
        else:
            self._staging = None
            self._data = np.zeros(self.target_shape, dtype=dtype)
            self._locks = [threading.Lock()]
        self._finalized = False

    def _check_indices(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self._n):
            bad = idx[(idx < 0) | (idx >= self._n)][0]
            raise IndexError(f"scatter index {bad} out of range [0, {self._n})")
        return idx

    def add(self, indices, values, worker: int = 0) -> None:
        """Accumulate ``values`` at first-axis ``indices`` on behalf of ``worker``."""
        if self._finalized:
            raise MemspaceError("accumulator already finalized")
        idx = self._check_indices(indices)
        vals = np.asarray(values)
        if isinstance(self.strategy, Serial):
            np.add.at(self._data, idx, vals)
        elif isinstance(self.strategy, Atomic):
            with self._locks[0]:
                np.add.at(self._data, idx, vals)
        else:
            copy = worker % self.strategy.copies
            with self._locks[copy]:
                np.add.at(self._staging[copy], idx, vals)

    def finalize(self) -> np.ndarray:
        """Barrier: combine staged contributions and return the dense result."""
        if self._finalized:
            raise MemspaceError("accumulator already finalized")
        self._finalized = True
        if isinstance(self.strategy, Duplicate):
            self._data = np.add.reduce(self._staging, axis=0)
            self._staging = None
        return self._data


def scatter_accumulate(acc: ScatterAccumulator, contributions) -> np.ndarray:
    """Apply a list of ``(index, value)`` contributions and finalize.

    With a Duplicate strategy the contribution list is split into one
    contiguous chunk per copy; Serial and Atomic apply in the given order.
    """
    contributions = list(contributions)
    if contributions:
        idx = np.asarray([c[0] for c in contributions])
        vals = np.asarray([c[1] for c in contributions])
        copies = acc.strategy.copies
        if copies <= 1 or len(contributions) < copies:
            acc.add(idx, vals, worker=0)
        else:
            bounds = np.linspace(0, len(contributions), copies + 1).astype(int)
            for w in range(copies):
                lo, hi = bounds[w], bounds[w + 1]
                if hi > lo:
                    acc.add(idx[lo:hi], vals[lo:hi], worker=w)
    return acc.finalize()
