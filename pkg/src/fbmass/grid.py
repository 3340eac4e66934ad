"""Structured computational grids and second-order finite-difference stencils.

Every axis is uniform in its computational coordinate and is one of

* ``"bounded"``  -- end points are nodes; one-sided second-order stencils there,
* ``"periodic"`` -- wraps around, the last node is *not* a copy of the first,
* ``"pole"``     -- cell-centred at its lower end, the ghost node below the first
  one is the first node on the opposite meridian (partner axis shifted by half a
  period).  Upper end is bounded.

Derivative operators are returned as sparse matrices acting on C-ordered node
vectors, so any quasilinear operator can be assembled as a sum of
``diag(coef) @ D``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateStencil

BOUNDED, PERIODIC, POLE = "bounded", "periodic", "pole"


@dataclass(frozen=True)
class Axis:
    start: float
    step: float
    size: int
    kind: str = BOUNDED
    partner: int | None = None  # periodic axis used by a pole mirror

    @property
    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.size)

    @property
    def stop(self) -> float:
        return self.start + self.step * (self.size - 1)


def bounded_axis(a: float, b: float, size: int) -> Axis:
    if size < 4:
        raise DegenerateStencil("bounded axes need at least 4 nodes")
    return Axis(a, (b - a) / (size - 1), size, BOUNDED)


def periodic_axis(a: float, period: float, size: int) -> Axis:
    if size < 3:
        raise DegenerateStencil("periodic axes need at least 3 nodes")
    return Axis(a, period / size, size, PERIODIC)


def pole_axis(top: float, size: int, partner: int) -> Axis:
    """Polar angle axis on ``(0, top]`` with nodes at ``(j + 1/2) * step``."""
    step = top / (size - 0.5)
    return Axis(0.5 * step, step, size, POLE, partner)


class StructuredGrid:
    """Tensor-product grid of one or more :class:`Axis` objects."""

    def __init__(self, axes):
        self.axes = tuple(axes)
        for ax in self.axes:
            if ax.kind == POLE:
                partner = self.axes[ax.partner]
                if partner.kind != PERIODIC or partner.size % 2:
                    raise DegenerateStencil("pole partner must be periodic with an even node count")
        self.shape = tuple(ax.size for ax in self.axes)
        self.ndim = len(self.axes)
        self.size = int(np.prod(self.shape))

    @cached_property
    def index(self) -> np.ndarray:
        """Multi-indices of all nodes, shape ``(size, ndim)``."""
        return np.stack(np.unravel_index(np.arange(self.size), self.shape), axis=-1)

    @cached_property
    def coords(self) -> np.ndarray:
        """Computational coordinates of all nodes, shape ``(size, ndim)``."""
        out = np.empty((self.size, self.ndim))
        for a, ax in enumerate(self.axes):
            out[:, a] = ax.start + ax.step * self.index[:, a]
        return out

    def on_face(self, axis: int, side: str) -> np.ndarray:
        """Boolean mask of nodes on the ``low``/``high`` face of a bounded end."""
        i = self.index[:, axis]
        return i == 0 if side == "low" else i == self.shape[axis] - 1

    def spacing(self) -> float:
        return max(ax.step for ax in self.axes)

    # -- stencil assembly ---------------------------------------------------
    def _neighbor(self, axis: int, offset: np.ndarray, rows: np.ndarray):
        """Flat indices and parity factors of ``rows`` shifted along ``axis``."""
        idx = self.index[rows].copy()
        ax = self.axes[axis]
        j = idx[:, axis] + offset
        sign = np.ones(len(rows))
        if ax.kind == PERIODIC:
            j = np.mod(j, ax.size)
        elif ax.kind == POLE:
            below = j < 0
            if np.any(below):
                # ghost node -k-1 sits at the mirror image of node k
                j = np.where(below, -j - 1, j)
                p = ax.partner
                half = self.shape[p] // 2
                idx[below, p] = np.mod(idx[below, p] + half, self.shape[p])
                sign = np.where(below, -1.0, 1.0)
        idx[:, axis] = j
        if np.any(j < 0) or np.any(j >= ax.size):
            raise DegenerateStencil("stencil leaves the grid")
        return np.ravel_multi_index(idx.T, self.shape), sign

    def _assemble(self, axis: int, plans, parity: float) -> sp.csr_matrix:
        rows_all, cols_all, vals_all = [], [], []
        for rows, offsets, weights in plans:
            if len(rows) == 0:
                continue
            for off, w in zip(offsets, weights):
                cols, sign = self._neighbor(axis, np.full(len(rows), off), rows)
                factor = np.where(sign < 0, parity, 1.0)
                rows_all.append(rows)
                cols_all.append(cols)
                vals_all.append(w * factor)
        r = np.concatenate(rows_all)
        c = np.concatenate(cols_all)
        v = np.concatenate(vals_all)
        return sp.csr_matrix((v, (r, c)), shape=(self.size, self.size))

    def _plans(self, axis: int, order: int):
        ax = self.axes[axis]
        h = ax.step
        i = self.index[:, axis]
        nodes = np.arange(self.size)
        if order == 1:
            central = ([-1, 0, 1], np.array([-0.5, 0.0, 0.5]) / h)
            low = ([0, 1, 2], np.array([-1.5, 2.0, -0.5]) / h)
            high = ([0, -1, -2], np.array([1.5, -2.0, 0.5]) / h)
        else:
            central = ([-1, 0, 1], np.array([1.0, -2.0, 1.0]) / h**2)
            low = ([0, 1, 2, 3], np.array([2.0, -5.0, 4.0, -1.0]) / h**2)
            high = ([0, -1, -2, -3], np.array([2.0, -5.0, 4.0, -1.0]) / h**2)
        if ax.kind == PERIODIC:
            return [(nodes, *central)]
        top = i == ax.size - 1
        if ax.kind == POLE:
            return [(nodes[~top], *central), (nodes[top], *high)]
        bottom = i == 0
        mid = ~(top | bottom)
        return [(nodes[mid], *central), (nodes[bottom], *low), (nodes[top], *high)]

    def d1(self, axis: int, parity: float = 1.0) -> sp.csr_matrix:
        """First derivative along ``axis``; ``parity`` is the mirror sign of the field."""
        return self._cached(("d1", axis, parity), lambda: self._assemble(axis, self._plans(axis, 1), parity))

    def d2(self, axis: int, parity: float = 1.0) -> sp.csr_matrix:
        """Pure second derivative along ``axis``."""
        return self._cached(("d2", axis, parity), lambda: self._assemble(axis, self._plans(axis, 2), parity))

    def dd(self, a: int, b: int, parity: float = 1.0) -> sp.csr_matrix:
        """Second derivative operator, mixed when ``a != b``."""
        if a == b:
            return self.d2(a, parity)
        if self.axes[b].kind == POLE:
            a, b = b, a
        # the inner derivative never crosses the pole and keeps the mirror parity
        return self._cached(("dd", a, b, parity),
                            lambda: (self.d1(a, parity) @ self.d1(b, parity)).tocsr())

    def _cached(self, key, build):
        cache = self.__dict__.setdefault("_ops", {})
        if key not in cache:
            cache[key] = build()
        return cache[key]

    # -- array helpers ------------------------------------------------------
    def grad(self, values: np.ndarray, parity: float = 1.0) -> np.ndarray:
        """Derivatives of node values along every axis, shape ``(size, ndim, ...)``."""
        flat = values.reshape(self.size, -1)
        out = np.stack([self.d1(a, parity) @ flat for a in range(self.ndim)], axis=1)
        return out.reshape((self.size, self.ndim) + values.shape[1:])

    def hessian(self, values: np.ndarray, parity: float = 1.0) -> np.ndarray:
        """Second derivatives of node values, shape ``(size, ndim, ndim, ...)``."""
        flat = values.reshape(self.size, -1)
        out = np.empty((self.size, self.ndim, self.ndim, flat.shape[1]))
        for a in range(self.ndim):
            for b in range(a, self.ndim):
                out[:, a, b] = out[:, b, a] = self.dd(a, b, parity) @ flat
        return out.reshape((self.size, self.ndim, self.ndim) + values.shape[1:])

    def trapezoid_weights(self) -> np.ndarray:
        """Tensor trapezoid weights in computational coordinates."""
        w = np.ones(self.size)
        for a, ax in enumerate(self.axes):
            wa = np.full(ax.size, ax.step)
            if ax.kind == BOUNDED:
                wa[0] = wa[-1] = 0.5 * ax.step
            elif ax.kind == POLE:
                # nodes sit at cell centres from the pole; the top node owns half a cell
                wa[-1] = 0.5 * ax.step
            w *= wa[self.index[:, a]]
        return w


def fd_axis(values: np.ndarray, axis: int, step: float, order: int, periodic: bool) -> np.ndarray:
    """Second-order derivative of a sampled array along one axis.

    Central differences in the interior; periodic wrap or second-order one-sided
    stencils at the ends.
    """
    v = np.moveaxis(values, axis, 0)
    if periodic:
        if order == 1:
            out = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) / (2 * step)
        else:
            out = (np.roll(v, -1, 0) - 2 * v + np.roll(v, 1, 0)) / step**2
        return np.moveaxis(out, 0, axis)
    if v.shape[0] < 4:
        raise DegenerateStencil("need at least 4 samples along a bounded axis")
    out = np.empty_like(v)
    if order == 1:
        out[1:-1] = (v[2:] - v[:-2]) / (2 * step)
        out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * step)
        out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * step)
    else:
        out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / step**2
        out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / step**2
        out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / step**2
    return np.moveaxis(out, 0, axis)
