"""Spectral descriptor potential: coupling tables, expansion, adjoint forces."""

from .indexing import QuantumIndex, SnapIndexError
from .coupling import CouplingTables, TripleTerms, clebsch_gordan, make_coupling_tables
from .compute import (
    NeighborMap,
    SnapError,
    SnapState,
    build_neighbor_map,
    compute_bi,
    compute_bi_complex,
    compute_deidrj,
    compute_duidrj,
    compute_energy,
    compute_fused_deidrj,
    compute_ui,
    compute_yi,
    compute_zi,
    cutoff_switch,
    energy_from_y,
    pair_u_flat,
    read_coeff_file,
)

__all__ = [
    "QuantumIndex",
    "SnapIndexError",
    "CouplingTables",
    "TripleTerms",
    "clebsch_gordan",
    "make_coupling_tables",
    "NeighborMap",
    "SnapError",
    "SnapState",
    "build_neighbor_map",
    "compute_bi",
    "compute_bi_complex",
    "compute_deidrj",
    "compute_duidrj",
    "compute_energy",
    "compute_fused_deidrj",
    "compute_ui",
    "compute_yi",
    "compute_zi",
    "cutoff_switch",
    "energy_from_y",
    "pair_u_flat",
    "read_coeff_file",
]
