"""Time partitions and the concatenated cubature path tree.

The horizon [0, T] is divided by the power schedule
``t_i = T * (1 - (1 - i/k)**gamma)``; unit-interval formula paths are
Brownian-scaled onto each subinterval (space by sqrt(s), time by s) and
concatenated according to an index vector, one formula path per subinterval.
The full tree has q**k leaves with product weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Iterator

import numpy as np

from .errors import IndexOutOfRange, InvalidParameter, TreeTooLarge
from .formulas import CubatureFormula, PiecewisePath

IndexVector = tuple[int, ...]

MAX_LEAVES = 2**40


@dataclass(frozen=True)
class TimePartition:
    """Non-uniform grid 0 = t_0 < ... < t_k = T from the gamma-power schedule."""

    horizon: float
    k: int
    gamma: float
    knots: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        """Subinterval lengths s_i = t_i - t_{i-1}, shape (k,)."""
        return np.diff(self.knots)


def make_partition(T: float, k: int, gamma: float) -> TimePartition:
    if T <= 0:
        raise InvalidParameter(f"horizon must be positive, got {T}")
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    if gamma <= 0:
        raise InvalidParameter(f"gamma must be positive, got {gamma}")
    i = np.arange(k + 1, dtype=float)
    knots = T * (1.0 - (1.0 - i / k) ** gamma)
    knots[0] = 0.0
    knots[-1] = T
    if np.any(np.diff(knots) <= 0):
        raise InvalidParameter("partition knots are not strictly increasing")
    return TimePartition(horizon=float(T), k=k, gamma=float(gamma), knots=knots)


def scale_path(unit_path: PiecewisePath, s: float, offset: float = 0.0) -> PiecewisePath:
    """Brownian-scale a unit-interval path onto [offset, offset + s].

    Brownian components are multiplied by sqrt(s); the time component covers
    physical time, so its increment is s, not sqrt(s).
    """
    if s <= 0:
        raise InvalidParameter(f"segment length must be positive, got {s}")
    bp = offset + s * unit_path.breakpoints
    values = unit_path.values.copy()
    values[:, 1:] *= math.sqrt(s)
    values[:, 0] = bp
    return PiecewisePath(bp, values)


def concat_path(
    formula: CubatureFormula, partition: TimePartition, iv: IndexVector
) -> "CubaturePath":
    """Concatenate scaled formula paths per subinterval into one tree path.

    ``iv`` holds one 1-based formula path index per subinterval.  Each scaled
    segment is translated to start at the previous endpoint, so the result is
    continuous and starts at the origin.
    """
    if len(iv) != partition.k:
        raise IndexOutOfRange(
            f"index vector length {len(iv)} != number of subintervals {partition.k}"
        )
    for j in iv:
        if not 1 <= j <= formula.q:
            raise IndexOutOfRange(f"index {j} outside 1..{formula.q}")
    lengths = partition.lengths
    pieces_bp = [np.array([0.0])]
    pieces_vals = [np.zeros((1, formula.dim + 1))]
    current = np.zeros(formula.dim + 1)
    for i, j in enumerate(iv):
        seg = scale_path(formula.paths[j - 1], lengths[i], offset=partition.knots[i])
        vals = seg.values.copy()
        vals[:, 1:] += current[1:]
        pieces_bp.append(seg.breakpoints[1:])
        pieces_vals.append(vals[1:])
        current = vals[-1]
    breakpoints = np.concatenate(pieces_bp)
    values = np.vstack(pieces_vals)
    return CubaturePath(breakpoints, values, iv=tuple(iv))


class CubaturePath(PiecewisePath):
    """A tree path over [0, T] remembering the index vector that built it."""

    __slots__ = ("iv",)

    def __init__(self, breakpoints, values, iv: IndexVector):
        super().__init__(breakpoints, values)
        self.iv = tuple(iv)


@dataclass(frozen=True)
class WeightedLeaf:
    """A leaf of the cubature tree: index vector plus product weight."""

    iv: IndexVector
    weight: float


def leaf_count(formula: CubatureFormula, partition: TimePartition) -> int:
    return formula.q**partition.k


def enumerate_leaves(
    formula: CubatureFormula, partition: TimePartition
) -> Iterator[WeightedLeaf]:
    """Stream all q**k leaves in lexicographic index order with product weights."""
    n = leaf_count(formula, partition)
    if n > MAX_LEAVES:
        raise TreeTooLarge(f"{formula.q}**{partition.k} = {n} leaves exceeds 2**40")
    weights = formula.weights
    for iv in product(range(1, formula.q + 1), repeat=partition.k):
        weight = math.prod(weights[j - 1] for j in iv)
        yield WeightedLeaf(iv=iv, weight=weight)
