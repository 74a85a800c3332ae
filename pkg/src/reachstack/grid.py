"""Regular rectilinear N-D grids, multilinear interpolation and gradients.

Value tables are stored as dense row-major arrays over the grid nodes. Queries
outside the grid are clamped onto the boundary (periodic dimensions are
wrapped), which is conservative for the extents used by the reachability
tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Relative tolerance for snapping a query coordinate onto a grid node.
_NODE_SNAP = 1e-10


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    node_counts: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        counts = tuple(int(n) for n in self.node_counts)
        periodic = tuple(bool(p) for p in self.periodic) or (False,) * len(counts)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "node_counts", counts)
        object.__setattr__(self, "periodic", periodic)
        if not (len(lower) == len(upper) == len(counts) == len(periodic)):
            raise ValueError("grid bounds, node counts and periodic flags must have equal length")
        if not counts:
            raise ValueError("grid must have at least one dimension")
        for lo, hi, n in zip(lower, upper, counts):
            if not lo < hi:
                raise ValueError(f"grid lower bound {lo} must be below upper bound {hi}")
            if n < 2:
                raise ValueError(f"each dimension needs at least 2 nodes, got {n}")

    @property
    def dim_count(self) -> int:
        return len(self.node_counts)

    @property
    def spacing(self) -> np.ndarray:
        lo, hi, n = np.array(self.lower), np.array(self.upper), np.array(self.node_counts)
        return (hi - lo) / (n - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node_counts

    @property
    def size(self) -> int:
        return int(np.prod(self.node_counts))

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along dimension ``i``."""
        return self.lower[i] + np.arange(self.node_counts[i]) * self.spacing[i]

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim_count)]

    def mesh(self, i: int) -> np.ndarray:
        """Coordinates of dimension ``i`` shaped for broadcasting against the grid."""
        shape = [1] * self.dim_count
        shape[i] = self.node_counts[i]
        return self.axis(i).reshape(shape)

    def node(self, index: Sequence[int]) -> np.ndarray:
        return np.array([self.lower[i] + index[i] * self.spacing[i] for i in range(self.dim_count)])

    def sample(self, fn) -> np.ndarray:
        """Evaluate ``fn(*coords)`` on the full grid using broadcast meshes."""
        values = fn(*[self.mesh(i) for i in range(self.dim_count)])
        return np.broadcast_to(np.asarray(values, dtype=float), self.shape).copy()


def _central_differences(data: np.ndarray, spec: GridSpec) -> list[np.ndarray]:
    grads = []
    h = spec.spacing
    for i in range(spec.dim_count):
        if spec.periodic[i]:
            # last node duplicates the first; neighbours wrap past it
            n = spec.node_counts[i]
            inner = np.take(data, np.arange(n - 1), axis=i)
            d = (np.roll(inner, -1, axis=i) - np.roll(inner, 1, axis=i)) / (2.0 * h[i])
            d = np.concatenate([d, np.take(d, [0], axis=i)], axis=i)
        else:
            d = np.gradient(data, h[i], axis=i, edge_order=1)
        grads.append(np.ascontiguousarray(d))
    return grads


class ValueTable:
    """Gridded value function V(tau, x) with precomputed nodal gradients.

    The table is immutable after construction. ``data`` has the grid shape;
    ``data.ravel()`` is the row-major flat payload.
    """

    def __init__(self, spec: GridSpec, data: np.ndarray, horizon_tau: float = 0.0):
        data = np.asarray(data, dtype=np.float64)
        if data.size != spec.size:
            raise ValueError(f"table payload has {data.size} entries, grid needs {spec.size}")
        if not np.all(np.isfinite(data)):
            raise ValueError("value table contains non-finite entries")
        if horizon_tau < 0:
            raise ValueError("horizon must be nonnegative")
        self.spec = spec
        self.horizon_tau = float(horizon_tau)
        self.data = np.ascontiguousarray(data.reshape(spec.shape))
        self.data.setflags(write=False)
        self._grads: np.ndarray | None = None
        self._h = spec.spacing
        self._lo = np.array(spec.lower)
        self._hi = np.array(spec.upper)
        self._nm1 = np.array(spec.node_counts) - 1
        self._periodic = np.array(spec.periodic)
        strides = np.array(self.data.strides) // self.data.itemsize
        self._strides = strides.astype(np.int64)
        corners = np.array(np.meshgrid(*[[0, 1]] * spec.dim_count, indexing="ij")).reshape(spec.dim_count, -1).T
        self._corner_bits = corners.astype(bool)
        self._corner_offsets = corners @ self._strides

    @property
    def grads(self) -> np.ndarray:
        """Nodal central-difference gradients, shape ``(dim_count, *grid.shape)``."""
        if self._grads is None:
            g = np.stack(_central_differences(self.data, self.spec))
            g.setflags(write=False)
            self._grads = g
        return self._grads

    def lipschitz_bound(self) -> float:
        """Largest adjacent-node difference quotient over all dimensions."""
        worst = 0.0
        for i in range(self.spec.dim_count):
            worst = max(worst, float(np.max(np.abs(np.diff(self.data, axis=i)))) / self._h[i])
        return worst

    def _cells(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.spec.dim_count:
            raise ValueError(f"query has {x.shape[-1]} components, table has {self.spec.dim_count} dimensions")
        span = self._hi - self._lo
        x = np.where(self._periodic, self._lo + np.mod(x - self._lo, span), x)
        x = np.clip(x, self._lo, self._hi)
        r = (x - self._lo) / self._h
        nearest = np.rint(r)
        r = np.where(np.abs(r - nearest) <= _NODE_SNAP * np.maximum(1.0, nearest), nearest, r)
        idx = np.minimum(np.floor(r), self._nm1 - 1).astype(np.int64)
        frac = r - idx
        base = idx @ self._strides
        w = np.where(self._corner_bits[None, :, :], frac[:, None, :], 1.0 - frac[:, None, :]).prod(axis=2)
        flat = base[:, None] + self._corner_offsets[None, :]
        return flat, w

    def interpolate(self, x) -> float | np.ndarray:
        """Multilinear interpolation at one state (returns float) or a batch (M, D)."""
        single = np.ndim(x) == 1
        flat, w = self._cells(x)
        v = (self.data.ravel()[flat] * w).sum(axis=1)
        return float(v[0]) if single else v

    def gradient(self, x) -> np.ndarray:
        """Interpolated nodal gradient at one state (D,) or a batch (M, D)."""
        single = np.ndim(x) == 1
        flat, w = self._cells(x)
        g = self.grads.reshape(self.spec.dim_count, -1)
        out = np.einsum("dmk,mk->md", g[:, flat], w)
        return out[0] if single else out

    def value_and_gradient(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Batch query returning values (M,) and gradients (M, D) with one cell lookup."""
        flat, w = self._cells(x)
        v = (self.data.ravel()[flat] * w).sum(axis=1)
        g = self.grads.reshape(self.spec.dim_count, -1)
        return v, np.einsum("dmk,mk->md", g[:, flat], w)


def interpolate(table: ValueTable, x) -> float | np.ndarray:
    return table.interpolate(x)


def gradient(table: ValueTable, x) -> np.ndarray:
    return table.gradient(x)
