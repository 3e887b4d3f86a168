"""Shared helpers: random configurations and independent reference kernels.

Reference implementations here are deliberately written against the plain
O(N^2) definitions (double loops / dense algebra) so package results are
checked against independently derived numbers, not against themselves.
"""

from __future__ import annotations

import numpy as np
import pytest

from mdkk.domain import Box


def random_config(n: int, rho: float, seed: int, min_sep: float = 0.85):
    """Random positions in a cubic box with a minimum-separation floor.

    Particles are placed on a jittered cubic lattice so the configuration is
    disordered but never pathologically overlapping.
    """
    rng = np.random.default_rng(seed)
    cells = int(np.ceil(n ** (1.0 / 3.0)))
    a = (1.0 / rho) ** (1.0 / 3.0)
    lo = np.stack(np.meshgrid(*[np.arange(cells)] * 3, indexing="ij"),
                  axis=-1).reshape(-1, 3)
    order = rng.permutation(len(lo))[:n]
    jitter = rng.uniform(-0.5, 0.5, (n, 3)) * (a - min_sep)
    pos = (lo[order] + 0.5) * a + jitter
    box = Box((a * cells,) * 3)
    return pos, box


def minimum_image(dr: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    return dr - lengths * np.round(dr / lengths)


def lj_reference(pos: np.ndarray, box: Box, epsilon: float, sigma: float,
                 r_c: float):
    """O(N^2) minimum-image truncated Lennard-Jones energy/forces/virial."""
    n = len(pos)
    lengths = np.asarray(box.lengths)
    energy = 0.0
    forces = np.zeros((n, 3))
    virial = np.zeros(6)
    for i in range(n - 1):
        dr = minimum_image(pos[i + 1:] - pos[i], lengths)
        r2 = (dr * dr).sum(axis=1)
        mask = r2 < r_c * r_c
        dr, r2 = dr[mask], r2[mask]
        s6 = (sigma * sigma / r2) ** 3
        s12 = s6 * s6
        energy += float(np.sum(4.0 * epsilon * (s12 - s6)))
        fp = 24.0 * epsilon * (2.0 * s12 - s6) / r2
        fvec = fp[:, None] * dr
        forces[i] -= fvec.sum(axis=0)
        forces[i + 1:][mask] += fvec
        virial[0] += float(np.dot(fp, dr[:, 0] * dr[:, 0]))
        virial[1] += float(np.dot(fp, dr[:, 1] * dr[:, 1]))
        virial[2] += float(np.dot(fp, dr[:, 2] * dr[:, 2]))
        virial[3] += float(np.dot(fp, dr[:, 0] * dr[:, 1]))
        virial[4] += float(np.dot(fp, dr[:, 0] * dr[:, 2]))
        virial[5] += float(np.dot(fp, dr[:, 1] * dr[:, 2]))
    return energy, forces, virial


def pair_set_brute(pos: np.ndarray, box: Box, cutoff: float) -> set:
    """Unordered interacting pairs by direct minimum-image distance."""
    n = len(pos)
    lengths = np.asarray(box.lengths)
    out = set()
    for i in range(n - 1):
        dr = minimum_image(pos[i + 1:] - pos[i], lengths)
        r2 = (dr * dr).sum(axis=1)
        for j in np.flatnonzero(r2 < cutoff * cutoff):
            out.add((i, i + 1 + int(j)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20260825)
