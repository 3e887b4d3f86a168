"""mdkk: a miniature single-node molecular-dynamics engine.

The package couples a performance-portability substrate (dual-space arrays,
scatter deconfliction, logical-rank domain decomposition, neighbor lists)
with three force-field pipelines: a truncated Lennard-Jones pair kernel,
charge equilibration on an over-allocated CSR matrix, and a bispectrum
descriptor potential, all driven by a small input-script language.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .domain import AtomStore, Box, DomainError, RankedSystem
from .memspace import (
    Atomic, DualArray, Duplicate, LayoutPolicy, MemspaceError,
    ScatterAccumulator, Serial,
)
from .neighbor import NeighborError, NeighborList, build_all
from .pair_lj import LJCut, PairError, PairParams, PairResult, compute_pair

__all__ = [
    "__version__",
    "AtomStore",
    "Box",
    "DomainError",
    "RankedSystem",
    "Atomic",
    "DualArray",
    "Duplicate",
    "LayoutPolicy",
    "MemspaceError",
    "ScatterAccumulator",
    "Serial",
    "NeighborError",
    "NeighborList",
    "build_all",
    "LJCut",
    "PairError",
    "PairParams",
    "PairResult",
    "compute_pair",
]
