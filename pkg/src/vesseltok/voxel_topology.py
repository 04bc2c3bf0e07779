"""Betti numbers of a binary volume seen as a union of closed unit cubes.

Foreground is 26-connected, background 6-connected. beta0 and the cavity count
come from connected-component labelling, the loop count from the Euler
characteristic of the cubical complex:  beta1 = beta0 + beta2 - chi.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import ndimage


class VoxelBetti(NamedTuple):
    beta0: int
    beta1: int
    beta2: int


def _dilate_count(m: np.ndarray, axes) -> int:
    """Number of lattice cells of the closed-cube complex of a given type.

    ``axes`` lists the axes along which a cell is shared by the two adjacent
    voxels; a cell exists when any of its 2**len(axes) voxels is set.
    """
    m = np.pad(m, 1)
    acc = m.copy()
    for ax in axes:
        shifted = np.zeros_like(acc)
        sl_dst = [slice(None)] * 3
        sl_src = [slice(None)] * 3
        sl_dst[ax] = slice(1, None)
        sl_src[ax] = slice(None, -1)
        shifted[tuple(sl_dst)] = acc[tuple(sl_src)]
        acc = acc | shifted
    return int(acc.sum())


def euler_characteristic(mask) -> int:
    """chi = V - E + F - C of the union of closed voxels."""
    m = np.asarray(mask, dtype=bool)
    cubes = int(m.sum())
    if cubes == 0:
        return 0
    faces = sum(_dilate_count(m, (ax,)) for ax in range(3))
    edges = sum(_dilate_count(m, axes) for axes in ((0, 1), (0, 2), (1, 2)))
    verts = _dilate_count(m, (0, 1, 2))
    return verts - edges + faces - cubes


def voxel_betti(mask) -> VoxelBetti:
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return VoxelBetti(0, 0, 0)
    _, b0 = ndimage.label(m, structure=np.ones((3, 3, 3), dtype=bool))
    bg = np.pad(~m, 1, constant_values=True)
    _, n_bg = ndimage.label(bg, structure=ndimage.generate_binary_structure(3, 1))
    b2 = n_bg - 1
    b1 = b0 + b2 - euler_characteristic(m)
    return VoxelBetti(int(b0), int(b1), int(b2))
