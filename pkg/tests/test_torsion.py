"""Bond tables, quad compression, and dihedral/bending force kernels."""

from __future__ import annotations

import numpy as np
import pytest

from mdkk.domain import Box, RankedSystem
from mdkk.neighbor import build_all
from mdkk.torsion import (
    BondParams, QuadTable, build_bonds, compute_bending, compute_torsion,
    compute_torsion_serial, enumerate_quads, quads_brute_force,
)

PARAMS = BondParams(r_bond=1.35, r0=1.4, p=4.0, bo_min=0.25)


def _bond_setup(pos, box, params=PARAMS):
    pos = np.asarray(pos, dtype=np.float64)
    system = RankedSystem.distribute(box, 1, pos, np.zeros_like(pos))
    lists = build_all(system, params.r_bond, 0.3, style="full", newton=False)
    return build_bonds(system.stores[0], box, lists[0], params)


def _random_bonded(n, seed, rho=0.9):
    """Dense-ish random config so bonded chains actually form."""
    from conftest import random_config
    return random_config(n, rho, seed, min_sep=0.8)


# -------------------------------------------------------------------- bonds
def test_bond_order_frozen_value():
    assert PARAMS.bond_order(1.4) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert PARAMS.bond_order(0.7) == pytest.approx(np.exp(-0.5 ** 4), rel=1e-15)


def test_bonds_are_symmetric_and_within_range():
    pos, box = _random_bonded(80, 31)
    table = _bond_setup(pos, box)
    lengths = np.asarray(box.lengths)
    for a in range(table.n_local):
        for s in range(int(table.counts[a])):
            b = int(table.bonds[a, s])
            assert b != a
            assert a in table.bonds[b, : table.counts[b]]
            dr = pos[b] - pos[a]
            dr -= lengths * np.round(dr / lengths)
            r = np.linalg.norm(dr)
            assert r < PARAMS.r_bond
            assert PARAMS.bond_order(r) > PARAMS.bo_min
            got = table.bond_order[a, s]
            assert got == pytest.approx(PARAMS.bond_order(r), rel=1e-12)


def test_bond_capacity_grows_from_one():
    pos, box = _random_bonded(60, 77)
    small = _bond_setup(pos, box)
    # capacity growth must not lose bonds: rebuild with generous capacity
    system = RankedSystem.distribute(box, 1, pos, np.zeros_like(pos))
    lists = build_all(system, PARAMS.r_bond, 0.3, style="full", newton=False)
    big = build_bonds(system.stores[0], box, lists[0], PARAMS,
                      initial_capacity=64)
    assert np.array_equal(small.counts, big.counts)
    for a in range(small.n_local):
        c = int(small.counts[a])
        assert set(small.bonds[a, :c]) == set(big.bonds[a, :c])


# --------------------------------------------------------------------- quads
def _quad_set(qt: QuadTable) -> set:
    return {tuple(int(v) for v in row) for row in qt.quads[: qt.total]}


def test_known_four_site_chain():
    # k - i - j - l chain along x with unit-ish bonds
    pos = [[2.0, 2.0, 2.0], [3.1, 2.0, 2.0], [0.9, 2.0, 2.0], [4.2, 2.0, 2.0]]
    box = Box((12.0, 12.0, 12.0))
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.0)
    assert _quad_set(qt) == {(0, 1, 2, 3)}
    assert qt.total == 1
    assert qt.candidates >= 1
    assert 0 < qt.divergence <= 1.0


def test_quads_match_brute_force_on_random_systems():
    for seed in range(6):
        pos, box = _random_bonded(90, 100 + seed)
        table = _bond_setup(pos, box)
        qt = enumerate_quads(table, bo_threshold=0.05)
        assert _quad_set(qt) == quads_brute_force(table, 0.05)


def test_per_atom_starts_partition_the_quads():
    pos, box = _random_bonded(90, 41)
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.02)
    starts = qt.per_atom_start
    assert starts[0] == 0 and starts[-1] == qt.total
    assert np.all(np.diff(starts) >= 0)
    for i in range(table.n_local):
        rows = qt.quads[starts[i]: starts[i + 1]]
        assert np.all(rows[:, 0] == i)


def test_threshold_filters_quads():
    pos, box = _random_bonded(90, 51)
    table = _bond_setup(pos, box)
    loose = enumerate_quads(table, bo_threshold=0.0)
    tight = enumerate_quads(table, bo_threshold=0.2)
    assert tight.total <= loose.total
    assert _quad_set(tight) <= _quad_set(loose)


# ------------------------------------------------------------------- physics
def _chain(phi, box_l=20.0):
    """k-i-j-l chain with dihedral angle phi around the central bond."""
    k = np.array([1.0, 1.0, 0.0])
    i = np.array([1.0, 0.0, 0.0])
    j = np.array([2.0, 0.0, 0.0])
    l = j + np.array([0.0, np.cos(phi), np.sin(phi)])
    pos = np.stack([i, j, k, l]) + 5.0
    return pos, Box((box_l,) * 3)


def test_cis_and_trans_frozen_energies():
    quads = np.array([[0, 1, 2, 3]])
    pos, box = _chain(0.0)                     # cis: cos(phi) = 1
    e, f, nd = compute_torsion(pos, box, quads, k_t=1.5)
    assert e == pytest.approx(3.0, rel=1e-12)  # k_t (1 + 1)
    assert nd == 0
    pos, box = _chain(np.pi)                   # trans: cos(phi) = -1
    e, f, _ = compute_torsion(pos, box, quads, k_t=1.5)
    assert e == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.abs(f) < 1e-10)           # trans is the minimum


def test_right_angle_energy():
    quads = np.array([[0, 1, 2, 3]])
    pos, box = _chain(np.pi / 2)
    e, _, _ = compute_torsion(pos, box, quads, k_t=2.0)
    assert e == pytest.approx(2.0, rel=1e-12)  # cos = 0


def test_degenerate_quad_skipped_and_counted():
    # collinear k-i-j makes the first normal vanish
    pos = np.array([[1.0, 0, 0], [2.0, 0, 0], [0.0, 0, 0], [3.0, 1.0, 0]]) + 4
    box = Box((12.0,) * 3)
    e, f, nd = compute_torsion(pos, box, np.array([[0, 1, 2, 3]]), k_t=1.0)
    assert nd == 1
    assert e == 0.0
    assert np.all(f == 0.0)


def test_parallel_equals_serial():
    for seed in range(4):
        pos, box = _random_bonded(80, 200 + seed)
        table = _bond_setup(pos, box)
        qt = enumerate_quads(table, bo_threshold=0.02)
        ep, fp_, ndp = compute_torsion(pos, box, qt.quads, k_t=0.7)
        es, fs, nds = compute_torsion_serial(pos, box, qt.quads, k_t=0.7)
        assert ep == pytest.approx(es, rel=1e-12, abs=1e-12)
        assert ndp == nds
        assert np.allclose(fp_, fs, rtol=1e-10, atol=1e-10)


def _numeric_grad(pos, box, fn, h=1e-6):
    g = np.zeros_like(pos)
    for a in range(len(pos)):
        for d in range(3):
            pp = pos.copy(); pp[a, d] += h
            pm = pos.copy(); pm[a, d] -= h
            g[a, d] = (fn(pp) - fn(pm)) / (2 * h)
    return g


def test_torsion_forces_match_finite_differences():
    pos, box = _random_bonded(40, 300)
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.02)
    if qt.total == 0:
        pytest.skip("no quads formed")
    e, f, _ = compute_torsion(pos, box, qt.quads, k_t=0.9)
    g = _numeric_grad(pos, box,
                      lambda p: compute_torsion(p, box, qt.quads, k_t=0.9)[0])
    scale = max(1.0, np.abs(f).max())
    assert np.all(np.abs(f + g) / scale < 1e-6)


def test_torsion_forces_sum_to_zero_and_are_invariant():
    pos, box = _random_bonded(60, 310)
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.02)
    e0, f0, _ = compute_torsion(pos, box, qt.quads)
    assert np.all(np.abs(f0.sum(axis=0)) < 1e-10)
    # rigid translation: same energy (forces live in relative coordinates)
    e1, f1, _ = compute_torsion(pos + 0.37, box, qt.quads)
    assert e1 == pytest.approx(e0, rel=1e-10, abs=1e-12)
    assert np.allclose(f1, f0, rtol=1e-9, atol=1e-10)


# ------------------------------------------------------------------- bending
def test_bending_right_angle_and_straight():
    # j - i - k with a 90-degree angle at the pivot i
    pos = np.array([[1.0, 1.0, 1.0], [2.0, 1.0, 1.0], [1.0, 2.0, 1.0]])
    box = Box((8.0,) * 3)
    # triple layout is (j, i, k) with the pivot i in the middle slot
    e, f = compute_bending(pos, box, np.array([[1, 0, 2]]), k_b=2.0)
    assert e == pytest.approx(2.0, rel=1e-12)  # cos(90°) = 0 -> k_b
    # straight chain: cos = -1 -> zero energy minimum
    pos2 = np.array([[1.0, 1, 1], [2.0, 1, 1], [0.0, 1, 1]])
    e2, f2 = compute_bending(pos2, box, np.array([[1, 0, 2]]), k_b=2.0)
    assert e2 == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.abs(f2) < 1e-10)


def test_bending_forces_match_finite_differences():
    pos, box = _random_bonded(50, 400)
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.0)
    if len(qt.triples) == 0:
        pytest.skip("no bending triples formed")
    e, f = compute_bending(pos, box, qt.triples, k_b=0.8)
    g = _numeric_grad(pos, box,
                      lambda p: compute_bending(p, box, qt.triples, k_b=0.8)[0])
    scale = max(1.0, np.abs(f).max())
    assert np.all(np.abs(f + g) / scale < 1e-6)


def test_triples_are_ordered_neighbor_pairs():
    pos, box = _random_bonded(70, 410)
    table = _bond_setup(pos, box)
    qt = enumerate_quads(table, bo_threshold=0.0)
    bonded = set()
    for a in range(table.n_local):
        for s in range(int(table.counts[a])):
            bonded.add((a, int(table.bonds[a, s])))
    for (j, i, k) in qt.triples:
        assert j < k                          # canonical emission order
        assert (int(i), int(j)) in bonded and (int(i), int(k)) in bonded
