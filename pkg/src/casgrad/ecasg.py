"""Sample sets for arbitrary dimension by splitting the eigenbasis into cells.

The eigen-directions are grouped into cells whose sizes are the powers of two
in the binary expansion of ``d``. Each cell is solved independently and the
blocks are assembled into a block-diagonal difference matrix; the objective
of the assembled matrix is the sum of the per-cell objectives.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .casg import _solve_in_basis
from .errors import NonFiniteInput, NumericalError
from .simplex_core import CurvatureSpec, SampleSet, objective

__all__ = ["Partition", "cell_sizes", "subdivide", "assemble_blocks", "ecasg_sample_set"]


@dataclass(frozen=True)
class Partition:
    """Disjoint cells of eigen-indices (0-based, into the increasing ``D``)."""

    cells: tuple

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.cells]

    @property
    def order(self) -> np.ndarray:
        """Concatenation of the cells; column order of the block matrix."""
        return np.concatenate([np.asarray(c, dtype=int) for c in self.cells])


def cell_sizes(d: int) -> list[int]:
    """Powers of two in the binary expansion of ``d``, largest first."""
    if d < 1:
        raise ValueError("dimension must be positive")
    return [1 << b for b in range(d.bit_length() - 1, -1, -1) if d >> b & 1]


def subdivide(D) -> Partition:
    """Pair low with high curvature directions, round-robin over the cells.

    Cells are visited largest first. A cell of size >= 2 takes the current
    lowest and highest remaining index; the size-1 cell takes the lowest.
    """
    D = np.asarray(D, dtype=float).reshape(-1)
    d = D.size
    sizes = cell_sizes(d)
    cells = [[] for _ in sizes]
    pool = deque(range(d))
    i = 0
    while pool:
        cell, size = cells[i], sizes[i]
        if len(cell) < size:
            if size == 1:
                cell.append(pool.popleft())
            else:
                cell.append(pool.popleft())
                cell.append(pool.pop())
        i = (i + 1) % len(cells)
    return Partition(tuple(tuple(c) for c in cells))


def assemble_blocks(R, partition: Partition, blocks) -> np.ndarray:
    """``S = R B S_B`` for block-diagonal ``S_B`` with one block per cell."""
    d = R.shape[0]
    S = np.zeros((d, d))
    col = 0
    for cell, block in zip(partition.cells, blocks):
        n = len(cell)
        S[:, col:col + n] = R[:, list(cell)] @ block
        col += n
    return S


def ecasg_sample_set(spec: CurvatureSpec, x0):
    """Block-optimal sample set for any dimension.

    Returns the sample set and the summed cell objectives.
    """
    d = spec.dim
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != d:
        raise ValueError(f"x0 has dimension {x0.size}, spec has {d}")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteInput("x0 contains non-finite entries")
    if spec.sigma <= 0:
        raise ValueError("sigma must be positive")

    D = spec.D
    part = subdivide(D)
    blocks = []
    total = 0.0
    for ci, cell in enumerate(part.cells):
        cell = np.asarray(cell, dtype=int)
        Dc = D[cell]
        order = np.lexsort((cell, Dc))
        Rc = np.eye(cell.size)[:, order]
        try:
            block, *_ = _solve_in_basis(Rc, Dc[order], spec.sigma, spec.h)
        except NumericalError as exc:
            raise type(exc)(f"cell {ci}: {exc}") from exc
        blocks.append(block)
        total += objective(block, CurvatureSpec(np.diag(Dc), spec.sigma, spec.h))
    S = assemble_blocks(spec.R, part, blocks)
    return SampleSet.from_differences(x0, S), float(total)
