"""Discrete metric measure spaces: points, metrics, balls, masses and lip."""

from __future__ import annotations

import csv
import math
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

__all__ = [
    "Ball",
    "DiscreteSpace",
    "EmptyBallError",
    "IsolatedPointWarning",
    "ball_members",
    "discrete_lip",
    "distance",
    "doubling_ratio",
    "load_space_csv",
    "measure",
]

# relative slack when collecting neighbours within a radius; grid diagonals
# computed from coordinates can land one ulp above the nominal spacing
_RADIUS_SLACK = 1e-9


class EmptyBallError(ValueError):
    """Raised when a ball contains no sample point (resolution too coarse)."""


class IsolatedPointWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Ball:
    """A metric ball.

    ``center`` is either an ``int`` (index of a sample point) or a coordinate
    sequence / float for spaces that carry coordinates.
    """

    center: object
    radius: float
    closed: bool = False

    def __post_init__(self) -> None:
        radius = float(self.radius)
        if not (radius > 0.0 and math.isfinite(radius)):
            raise ValueError(f"ball radius must be positive and finite, got {self.radius!r}")
        object.__setattr__(self, "radius", radius)
        c = self.center
        if isinstance(c, (int, np.integer)) and not isinstance(c, bool):
            object.__setattr__(self, "center", int(c))
        else:
            coords = tuple(float(v) for v in np.atleast_1d(np.asarray(c, dtype=float)))
            object.__setattr__(self, "center", coords)

    @property
    def at_point(self) -> bool:
        return isinstance(self.center, int)

    def with_radius(self, radius: float, closed: bool | None = None) -> "Ball":
        return Ball(self.center, radius, self.closed if closed is None else closed)


class DiscreteSpace:
    """Finite point set with a metric oracle and strictly positive masses.

    Exactly one metric backend is active: coordinates (Euclidean), an explicit
    distance table, or shortest paths over weighted edges. Instances are
    treated as immutable; arrays are marked read-only.
    """

    def __init__(
        self,
        mass,
        coords=None,
        *,
        table=None,
        edges=None,
        mesh: float | None = None,
        ids: Sequence[Hashable] | None = None,
        shape: tuple[int, ...] | None = None,
        axes: Sequence[np.ndarray] | None = None,
    ) -> None:
        mass = np.array(mass, dtype=float).reshape(-1)
        if mass.size == 0:
            raise ValueError("space must contain at least one point")
        if not np.all(np.isfinite(mass)) or np.any(mass <= 0.0):
            raise ValueError("every mass must be strictly positive and finite")
        n = mass.size
        backends = sum(x is not None for x in (table, edges))
        if backends > 1:
            raise ValueError("give at most one of table= and edges=")
        if backends == 0 and coords is None:
            raise ValueError("a metric is required: coords, table or edges")

        if coords is not None:
            coords = np.array(coords, dtype=float)
            if coords.ndim == 1:
                coords = coords[:, None]
            if coords.shape[0] != n:
                raise ValueError("coords and mass have different lengths")
            if not np.all(np.isfinite(coords)):
                raise ValueError("coordinates must be finite")
            coords.setflags(write=False)

        self._table = None
        self._graph = None
        if table is not None:
            t = np.array(table, dtype=float)
            if t.shape != (n, n):
                raise ValueError("distance table must be n x n")
            if not np.allclose(t, t.T, rtol=0, atol=0) or np.any(np.diag(t) != 0) or np.any(t < 0):
                raise ValueError("distance table must be symmetric, nonnegative, zero on the diagonal")
            off = t[~np.eye(n, dtype=bool)]
            if np.any(off <= 0):
                raise ValueError("distinct points must have positive distance")
            t.setflags(write=False)
            self._table = t
            self.metric = "table"
        elif edges is not None:
            a, b, cost = (np.asarray(v) for v in edges)
            cost = np.asarray(cost, dtype=float)
            if np.any(~np.isfinite(cost)) or np.any(cost <= 0):
                raise ValueError("edge costs must be positive and finite")
            # duplicate edges: keep the cheapest
            self._graph = _symmetric_min(a.astype(np.int64), b.astype(np.int64), cost, n)
            self.metric = "graph"
        else:
            self.metric = "euclidean"

        self.coords = coords
        mass.setflags(write=False)
        self.mass = mass
        self.n = n
        self.shape = tuple(shape) if shape is not None else None
        self.axes = tuple(np.asarray(ax, dtype=float) for ax in axes) if axes is not None else None
        if ids is None:
            self.ids = tuple(range(n))
        else:
            self.ids = tuple(ids)
            if len(self.ids) != n or len(set(self.ids)) != n:
                raise ValueError("ids must be unique, one per point")
        self._index = {pid: i for i, pid in enumerate(self.ids)}
        self._sssp_cache: dict[int, np.ndarray] = {}
        self._pair_cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

        if mesh is None:
            mesh = self._estimate_mesh()
        mesh = float(mesh)
        if not (mesh > 0 and math.isfinite(mesh)):
            raise ValueError("mesh h must be positive and finite")
        self.mesh = mesh

    # -- construction helpers -------------------------------------------------

    def _estimate_mesh(self) -> float:
        if self.n == 1:
            raise ValueError("mesh must be given explicitly for a single-point space")
        if self.metric == "euclidean":
            d, _ = cKDTree(self.coords).query(self.coords, k=2)
            return float(d[:, 1].max()) / 2.0
        if self.metric == "table":
            t = self._table + np.diag(np.full(self.n, np.inf))
            return float(t.min(axis=1).max()) / 2.0
        g = self._graph.tocsr()
        nearest = np.full(self.n, np.inf)
        rows = np.repeat(np.arange(self.n), np.diff(g.indptr))
        np.minimum.at(nearest, rows, g.data)
        return float(nearest.max()) / 2.0

    def scaled(self, factor: float) -> "DiscreteSpace":
        """Same points and metric with every mass multiplied by ``factor``."""
        if not factor > 0:
            raise ValueError("mass scale factor must be positive")
        kw = dict(mesh=self.mesh, ids=self.ids, shape=self.shape, axes=self.axes)
        if self.metric == "table":
            return DiscreteSpace(self.mass * factor, self.coords, table=self._table, **kw)
        if self.metric == "graph":
            g = sparse.triu(self._graph, k=1).tocoo()
            return DiscreteSpace(self.mass * factor, self.coords, edges=(g.row, g.col, g.data), **kw)
        return DiscreteSpace(self.mass * factor, self.coords, **kw)

    # -- metric oracle ---------------------------------------------------------

    @property
    def dim(self) -> int | None:
        return None if self.coords is None else self.coords.shape[1]

    def index_of(self, pid: Hashable) -> int:
        try:
            return self._index[pid]
        except (KeyError, TypeError):
            raise KeyError(f"unknown point id {pid!r}") from None

    def _sssp(self, i: int) -> np.ndarray:
        with self._lock:
            cached = self._sssp_cache.get(i)
        if cached is None:
            cached = csgraph.dijkstra(self._graph, directed=False, indices=i)
            cached.setflags(write=False)
            with self._lock:
                self._sssp_cache[i] = cached
        return cached

    def center_distances(self, center) -> np.ndarray:
        """Distances from ``center`` (point index or coordinates) to every point."""
        if isinstance(center, Ball):
            center = center.center
        if isinstance(center, (int, np.integer)) and not isinstance(center, bool):
            i = int(center)
            if not 0 <= i < self.n:
                raise IndexError(f"point index {i} out of range")
            if self.metric == "euclidean":
                return np.linalg.norm(self.coords - self.coords[i], axis=1)
            if self.metric == "table":
                return self._table[i]
            return self._sssp(i)
        if self.metric != "euclidean":
            raise ValueError("coordinate centers need a coordinate (Euclidean) metric; pass a point index")
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if c.shape != (self.coords.shape[1],):
            raise ValueError(f"center has dimension {c.size}, space has {self.coords.shape[1]}")
        return np.linalg.norm(self.coords - c, axis=1)

    def pair_distance(self, i: int, j: int) -> float:
        if self.metric == "euclidean":
            return float(np.linalg.norm(self.coords[i] - self.coords[j]))
        if self.metric == "table":
            return float(self._table[i, j])
        return float(self._sssp(i)[j])

    def neighbor_pairs(self, radius: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All pairs ``i < j`` with ``0 < d(i, j) <= radius`` as ``(i, j, d)``."""
        key = float(radius)
        with self._lock:
            hit = self._pair_cache.get(key)
        if hit is not None:
            return hit
        r = key * (1.0 + _RADIUS_SLACK)
        if self.metric == "euclidean":
            pairs = cKDTree(self.coords).query_pairs(r, output_type="ndarray")
            if pairs.size == 0:
                pairs = np.empty((0, 2), dtype=np.int64)
            i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
            d = np.linalg.norm(self.coords[i] - self.coords[j], axis=1)
        elif self.metric == "table":
            iu = np.triu_indices(self.n, k=1)
            d_all = self._table[iu]
            keep = d_all <= r
            i, j, d = iu[0][keep], iu[1][keep], d_all[keep]
        else:
            full = csgraph.dijkstra(self._graph, directed=False, limit=r)
            iu = np.triu_indices(self.n, k=1)
            d_all = full[iu]
            keep = np.isfinite(d_all) & (d_all <= r)
            i, j, d = iu[0][keep], iu[1][keep], d_all[keep]
        keep = d > 0
        out = (i[keep], j[keep], d[keep])
        for arr in out:
            arr.setflags(write=False)
        with self._lock:
            self._pair_cache[key] = out
        return out

    def check_metric(self, triples: int = 200, seed: int = 0, rtol: float = 1e-12) -> bool:
        """Spot-check symmetry and the triangle inequality on random triples."""
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, self.n, size=(triples, 3))
        for a, b, c in idx:
            dab, dba = self.pair_distance(a, b), self.pair_distance(b, a)
            dbc, dac = self.pair_distance(b, c), self.pair_distance(a, c)
            if not math.isclose(dab, dba, rel_tol=rtol, abs_tol=0.0):
                return False
            if dac > (dab + dbc) * (1 + rtol):
                return False
            if (a == b) != (dab == 0.0):
                return False
        return True


def _symmetric_min(a: np.ndarray, b: np.ndarray, cost: np.ndarray, n: int) -> sparse.csr_matrix:
    if np.any(a == b):
        raise ValueError("self-loop edges are not allowed")
    if np.any((a < 0) | (a >= n) | (b < 0) | (b >= n)):
        raise ValueError("edge endpoint out of range")
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    order = np.lexsort((cost, hi, lo))
    lo, hi, cost = lo[order], hi[order], cost[order]
    first = np.ones(lo.size, dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    lo, hi, cost = lo[first], hi[first], cost[first]
    g = sparse.coo_matrix(
        (np.concatenate([cost, cost]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
        shape=(n, n),
    )
    return g.tocsr()


def distance(space: DiscreteSpace, a: Hashable, b: Hashable) -> float:
    """Distance between two points given by their ids."""
    return space.pair_distance(space.index_of(a), space.index_of(b))


def ball_members(space: DiscreteSpace, ball: Ball) -> np.ndarray:
    """Sorted indices of the sample points inside ``ball``."""
    d = space.center_distances(ball.center)
    inside = d <= ball.radius if ball.closed else d < ball.radius
    return np.flatnonzero(inside)


def measure(space: DiscreteSpace, ball: Ball) -> float:
    members = ball_members(space, ball)
    if members.size == 0:
        raise EmptyBallError("ball contains no sample points")
    return float(space.mass[members].sum())


def doubling_ratio(space: DiscreteSpace, center, R: float) -> float:
    """mu(B(y, 2R)) / mu(B(y, R)) for open balls."""
    inner = measure(space, Ball(center, R))
    return measure(space, Ball(center, 2.0 * R)) / inner


def lip_with_argmax(
    space: DiscreteSpace, u: np.ndarray, h_lip: float | None = None, rows: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-scale lip together with the neighbour attaining it.

    Returns ``(values, neighbour, dist)`` for each point (or for ``rows`` only);
    ``neighbour`` is -1 where no other point lies within ``h_lip``.
    """
    u = np.asarray(u, dtype=float)
    if h_lip is None:
        h_lip = 2.0 * space.mesh
    i, j, d = space.neighbor_pairs(h_lip)
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    dd = np.concatenate([d, d])
    if rows is not None:
        want = np.zeros(space.n, dtype=bool)
        want[rows] = True
        keep = want[src]
        src, dst, dd = src[keep], dst[keep], dd[keep]
    q = np.abs(u[src] - u[dst]) / dd
    values = np.zeros(space.n)
    neighbour = np.full(space.n, -1, dtype=np.int64)
    dist = np.zeros(space.n)
    if src.size:
        order = np.lexsort((q, src))
        s_sorted = src[order]
        last = np.ones(order.size, dtype=bool)
        last[:-1] = s_sorted[1:] != s_sorted[:-1]
        top = order[last]
        values[src[top]] = q[top]
        neighbour[src[top]] = dst[top]
        dist[src[top]] = dd[top]
    if rows is not None:
        return values[rows], neighbour[rows], dist[rows]
    return values, neighbour, dist


def discrete_lip(space: DiscreteSpace, u, h_lip: float | None = None, return_isolated: bool = False):
    """sup over 0 < d(x, y) <= h_lip of |u(x) - u(y)| / d(x, y), pointwise.

    ``h_lip`` defaults to twice the mesh. Points without a neighbour get 0 and
    trigger an :class:`IsolatedPointWarning`.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (space.n,):
        raise ValueError("function must have one value per point")
    if not np.all(np.isfinite(u)):
        raise ValueError("function values must be finite")
    if h_lip is None:
        h_lip = 2.0 * space.mesh
    if h_lip < space.mesh:
        raise ValueError("h_lip must be at least the mesh size")
    values, neighbour, _ = lip_with_argmax(space, u, h_lip)
    isolated = neighbour < 0
    if space.n > 1 and isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated point(s) within h_lip={h_lip}", IsolatedPointWarning, stacklevel=2)
    if return_isolated:
        return values, isolated
    return values


def load_space_csv(points_path: str | Path, edges_path: str | Path | None = None, mesh: float | None = None) -> DiscreteSpace:
    """Read a space from ``id,x[,y],mass`` rows and optional ``a,b,cost`` edges.

    With an edges file the metric is graph shortest path, otherwise Euclidean
    on the coordinates.
    """
    with open(points_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "id" not in fields or "mass" not in fields or "x" not in fields:
            raise ValueError(f"{points_path}: header must be id,x[,y],mass")
        axes = ["x", "y"] if "y" in fields else ["x"]
        ids, coords, mass = [], [], []
        for row in reader:
            ids.append(row["id"])
            coords.append([float(row[a]) for a in axes])
            mass.append(float(row["mass"]))
    if not ids:
        raise ValueError(f"{points_path}: no points")
    if edges_path is None:
        return DiscreteSpace(mass, coords, ids=ids, mesh=mesh)
    index = {pid: k for k, pid in enumerate(ids)}
    a, b, cost = [], [], []
    with open(edges_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if set(reader.fieldnames or []) < {"a", "b", "cost"}:
            raise ValueError(f"{edges_path}: header must be a,b,cost")
        for row in reader:
            try:
                a.append(index[row["a"]])
                b.append(index[row["b"]])
            except KeyError as exc:
                raise ValueError(f"{edges_path}: unknown point id {exc.args[0]!r}") from None
            cost.append(float(row["cost"]))
    return DiscreteSpace(mass, coords, edges=(np.array(a), np.array(b), np.array(cost)), ids=ids, mesh=mesh)
