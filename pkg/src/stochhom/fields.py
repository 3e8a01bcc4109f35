"""Regular grids and nodal fields.

A field lives on the nodes of a box split into ``cells[k]`` equal intervals per
axis. Cell quantities (gradient, cell-centre value) are formed from the ``2**n``
corner nodes of each cell: the gradient component along axis ``k`` is the mean
of the ``2**(n-1)`` edge differences in that direction, which reduces to the
plain forward difference in 1D.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class InvalidInput(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        if not (len(lo) == len(hi) == len(cells)) or not 1 <= len(lo) <= 3:
            raise InvalidInput("grid needs matching lo/hi/cells of dimension 1, 2 or 3")
        if any(b <= a for a, b in zip(lo, hi)) or any(c < 1 for c in cells):
            raise InvalidInput(f"degenerate grid {lo}..{hi} with {cells} cells")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def cube(cls, center, side: float, cells_per_side: int) -> "Grid":
        center = np.atleast_1d(np.asarray(center, dtype=float))
        n = center.size
        return cls(tuple(center - side / 2), tuple(center + side / 2), (int(cells_per_side),) * n)

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.hi) - np.array(self.lo)) / np.array(self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(np.array(self.hi) - np.array(self.lo)))

    @property
    def node_shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, c + 1) for a, b, c in zip(self.lo, self.hi, self.cells)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(n, *node_shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def centers(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(n, *cells)``."""
        ax = [0.5 * (x[1:] + x[:-1]) for x in self.axes()]
        return np.stack(np.meshgrid(*ax, indexing="ij"))

    def boundary_nodes(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        for k in range(self.ndim):
            idx = [slice(None)] * self.ndim
            idx[k] = 0
            mask[tuple(idx)] = True
            idx[k] = -1
            mask[tuple(idx)] = True
        return mask

    def subgrid(self, start: Sequence[int], stop: Sequence[int]) -> "Grid":
        """Grid over the cell index range ``[start, stop)`` (aligned with this one)."""
        h = self.spacing
        lo = np.array(self.lo) + h * np.array(start)
        hi = np.array(self.lo) + h * np.array(stop)
        return Grid(tuple(lo), tuple(hi), tuple(int(b - a) for a, b in zip(start, stop)))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "cells": list(self.cells)}


def _corner_slices(ndim: int):
    for offs in itertools.product((0, 1), repeat=ndim):
        yield offs, tuple(slice(o, None if o else -1) for o in offs)


def cell_gradient(values: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    ndim = values.ndim
    out = np.zeros((ndim,) + tuple(s - 1 for s in values.shape))
    scale = 1.0 / 2 ** (ndim - 1)
    for offs, sl in _corner_slices(ndim):
        u = values[sl]
        for k in range(ndim):
            if offs[k]:
                out[k] += u
            else:
                out[k] -= u
    for k in range(ndim):
        out[k] *= scale / spacing[k]
    return out


def cell_gradient_adjoint(grad: np.ndarray, spacing: np.ndarray) -> np.ndarray:
    ndim = grad.shape[0]
    out = np.zeros(tuple(s + 1 for s in grad.shape[1:]))
    scale = 1.0 / 2 ** (ndim - 1)
    weighted = [grad[k] * (scale / spacing[k]) for k in range(ndim)]
    for offs, sl in _corner_slices(ndim):
        acc = np.zeros(grad.shape[1:])
        for k in range(ndim):
            if offs[k]:
                acc += weighted[k]
            else:
                acc -= weighted[k]
        out[sl] += acc
    return out


def cell_average(values: np.ndarray) -> np.ndarray:
    ndim = values.ndim
    out = np.zeros(tuple(s - 1 for s in values.shape))
    for _, sl in _corner_slices(ndim):
        out += values[sl]
    return out / 2**ndim


def cell_average_adjoint(cvals: np.ndarray) -> np.ndarray:
    ndim = cvals.ndim
    out = np.zeros(tuple(s + 1 for s in cvals.shape))
    for _, sl in _corner_slices(ndim):
        out[sl] += cvals
    return out / 2**ndim


def lumped_node_weights(cell_weights: np.ndarray) -> np.ndarray:
    """Each cell hands an equal share of its weight to its corners."""
    return cell_average_adjoint(cell_weights)


def gradient_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse operator with ``(G @ u.ravel()).reshape(n, *cells) == cell_gradient(u)``."""
    ndim = grid.ndim
    node_index = np.arange(grid.n_nodes).reshape(grid.node_shape)
    h = grid.spacing
    scale = 1.0 / 2 ** (ndim - 1)
    rows, cols, vals = [], [], []
    cell_ids = np.arange(grid.n_cells)
    for offs, sl in _corner_slices(ndim):
        nodes = node_index[sl].ravel()
        for k in range(ndim):
            rows.append(k * grid.n_cells + cell_ids)
            cols.append(nodes)
            vals.append(np.full(grid.n_cells, (1.0 if offs[k] else -1.0) * scale / h[k]))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndim * grid.n_cells, grid.n_nodes),
    )


@dataclass
class DiscreteField:
    grid: Grid
    values: np.ndarray
    cell_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.node_shape:
            raise InvalidInput(f"values shape {self.values.shape} != nodes {self.grid.node_shape}")
        if self.cell_mask is not None:
            self.cell_mask = np.asarray(self.cell_mask, dtype=bool)
            if self.cell_mask.shape != self.grid.cells:
                raise InvalidInput("cell mask shape does not match grid cells")

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[[np.ndarray], np.ndarray], **kw) -> "DiscreteField":
        return cls(grid, np.broadcast_to(func(grid.nodes()), grid.node_shape).copy(), **kw)

    @classmethod
    def affine(cls, grid: Grid, p, c: float = 0.0) -> "DiscreteField":
        p = np.atleast_1d(np.asarray(p, dtype=float))
        x = grid.nodes()
        return cls(grid, np.tensordot(p, x, axes=1) + c)

    @classmethod
    def zeros(cls, grid: Grid) -> "DiscreteField":
        return cls(grid, np.zeros(grid.node_shape))

    def with_values(self, values: np.ndarray) -> "DiscreteField":
        return DiscreteField(self.grid, values, self.cell_mask, dict(self.meta))

    def cell_values(self) -> np.ndarray:
        return cell_average(self.values)

    def gradient(self) -> np.ndarray:
        return cell_gradient(self.values, self.grid.spacing)

    def active_cells(self) -> np.ndarray:
        if self.cell_mask is None:
            return np.ones(self.grid.cells, dtype=bool)
        return self.cell_mask

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput("field contains non-finite values")


def write_field(path, values: np.ndarray, header: dict) -> None:
    """CSV with a one-line JSON header; rows run along the last axis, C order."""
    path = Path(path)
    arr = np.asarray(values, dtype=float)
    header = dict(header)
    header["shape"] = list(arr.shape)
    rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise InvalidInput(f"{path}: missing JSON header line")
        header = json.loads(first[2:])
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data.reshape(header["shape"]), header
