"""Grid discretizations of weighted Euclidean measures dmu = w dx."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .space_core import DiscreteSpace

__all__ = ["WeightFamily", "analytic_ball_measure", "build_grid", "parse_family"]

KINDS = ("lebesgue", "power", "exponential", "gaussian", "table")
_ALIASES = {"exp": "exponential", "gauss": "gaussian", "pow": "power", "leb": "lebesgue"}


@dataclass(frozen=True)
class WeightFamily:
    """Density family w on R^dim.

    power: |x|^alpha; exponential: exp(rate * x_1); gaussian:
    exp(-|x|^2 / (2 scale^2)); table: interpolated samples read from ``path``.
    """

    kind: str
    dim: int = 1
    alpha: float = 0.0
    rate: float = 1.0
    scale: float = 1.0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight family {self.kind!r}")
        if self.dim not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.kind == "power" and not self.alpha > -self.dim:
            raise ValueError(f"power weight needs alpha > -{self.dim} for local integrability")
        if self.kind == "gaussian" and not self.scale > 0:
            raise ValueError("gaussian scale must be positive")
        if self.kind == "table" and not self.path:
            raise ValueError("table family needs a path")

    def weight(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, self.dim)
        if self.kind == "lebesgue":
            return np.ones(len(pts))
        if self.kind == "power":
            r = np.linalg.norm(pts, axis=1)
            with np.errstate(divide="ignore"):
                return r**self.alpha
        if self.kind == "exponential":
            with np.errstate(over="ignore"):
                return np.exp(self.rate * pts[:, 0])
        if self.kind == "gaussian":
            return np.exp(-np.sum(pts**2, axis=1) / (2.0 * self.scale**2))
        return _table_interpolator(self.path, self.dim)(pts)


def parse_family(spec: str, dim: int | None = None) -> WeightFamily:
    """Parse ``lebesgue``, ``power:alpha=1``, ``exp:rate=1``, ``gauss:s=1``, ``table:path=...``.

    An optional ``dim=2`` key selects the plane; the ``dim`` argument wins.
    """
    head, _, rest = spec.partition(":")
    kind = _ALIASES.get(head.strip(), head.strip())
    if kind not in KINDS:
        raise ValueError(f"unknown weight family {head!r}")
    kw: dict = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"malformed family parameter {item!r}")
        key = key.strip()
        if key == "alpha":
            kw["alpha"] = float(val)
        elif key in ("rate", "lambda"):
            kw["rate"] = float(val)
        elif key in ("s", "scale"):
            kw["scale"] = float(val)
        elif key == "path":
            kw["path"] = val
        elif key == "dim":
            kw["dim"] = int(val)
        else:
            raise ValueError(f"unknown family parameter {key!r}")
    if dim is not None:
        kw["dim"] = dim
    return WeightFamily(kind, **kw)


def _table_interpolator(path: str, dim: int):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"x", "weight"} if dim == 1 else {"x", "y", "weight"}
        if not need <= set(reader.fieldnames or []):
            raise ValueError(f"{path}: header must be {'x,weight' if dim == 1 else 'x,y,weight'}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty weight table")
    w = np.array([float(r["weight"]) for r in rows])
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError(f"{path}: table weights must be strictly positive")
    if dim == 1:
        x = np.array([float(r["x"]) for r in rows])
        order = np.argsort(x)
        x, w = x[order], w[order]
        return lambda pts: np.interp(pts[:, 0], x, w)
    x = np.array([float(r["x"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    xs, ys = np.unique(x), np.unique(y)
    if xs.size * ys.size != len(rows):
        raise ValueError(f"{path}: 2D weight table must be a full rectilinear grid")
    grid = np.empty((xs.size, ys.size))
    grid[np.searchsorted(xs, x), np.searchsorted(ys, y)] = w
    interp = RegularGridInterpolator((xs, ys), grid, bounds_error=False, fill_value=None)
    return lambda pts: np.maximum(interp(pts), np.min(w))


def _antiderivative_1d(family: WeightFamily):
    """Closed-form primitive of w in 1D, or None when midpoint masses are used."""
    if family.kind == "lebesgue":
        return lambda x: x
    if family.kind == "power":
        a1 = family.alpha + 1.0
        return lambda x: np.sign(x) * np.abs(x) ** a1 / a1
    if family.kind == "exponential":
        lam = family.rate
        if lam == 0:
            return lambda x: x
        return lambda x: np.exp(lam * x) / lam
    return None


def _dual_edges(axis: np.ndarray, lo: float, hi: float) -> np.ndarray:
    mids = 0.5 * (axis[1:] + axis[:-1])
    return np.concatenate([[lo], mids, [hi]])


def _power_rect_integral(alpha: float, a: float, b: float) -> float:
    """Integral of |x|^alpha over [0, a] x [0, b] in the plane (polar form)."""
    if a <= 0 or b <= 0:
        return 0.0
    e = alpha + 2.0
    theta0 = math.atan2(b, a)
    f1, _ = integrate.quad(lambda t: (a / math.cos(t)) ** e, 0.0, theta0)
    f2, _ = integrate.quad(lambda t: (b / math.sin(t)) ** e, theta0, math.pi / 2)
    return (f1 + f2) / e


def build_grid(domain, resolution, family: WeightFamily) -> DiscreteSpace:
    """Uniform node grid on an axis-aligned box carrying the measure ``w dx``.

    Each node owns its dual cell clipped to the box. In 1D the node mass is
    the exact integral of w over that cell when a primitive is known, and
    w(node) times the cell length otherwise. In 2D the mass is w(node) times
    the cell area, except that the cell containing the origin gets its exact
    integral for singular power weights.
    """
    dim = family.dim
    box = np.asarray(domain, dtype=float).reshape(dim, 2)
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("degenerate domain")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dim,))
    if np.any(res < 16):
        raise ValueError("resolution must be at least 16 points per axis")
    axes = [np.linspace(lo, hi, int(k)) for (lo, hi), k in zip(box, res)]
    edges = [_dual_edges(ax, lo, hi) for ax, (lo, hi) in zip(axes, box)]
    widths = [np.diff(e) for e in edges]
    spacing = np.array([ax[1] - ax[0] for ax in axes])
    mesh = float(np.linalg.norm(spacing)) / 2.0

    if dim == 1:
        coords = axes[0][:, None]
        prim = _antiderivative_1d(family)
        if prim is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                mass = np.diff(prim(edges[0]))
        else:
            mass = family.weight(coords) * widths[0]
        shape = (axes[0].size,)
    else:
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        coords = np.column_stack([X.ravel(), Y.ravel()])
        area = np.outer(widths[0], widths[1]).ravel()
        with np.errstate(over="ignore", invalid="ignore"):
            mass = family.weight(coords) * area
        if family.kind == "power" and family.alpha < 0:
            ix = np.searchsorted(edges[0], 0.0, side="right") - 1
            iy = np.searchsorted(edges[1], 0.0, side="right") - 1
            if 0 <= ix < axes[0].size and 0 <= iy < axes[1].size:
                x0, x1 = edges[0][ix], edges[0][ix + 1]
                y0, y1 = edges[1][iy], edges[1][iy + 1]
                total = sum(
                    _power_rect_integral(family.alpha, abs(xe), abs(ye))
                    for xe in (x0, x1)
                    for ye in (y0, y1)
                )
                mass[ix * axes[1].size + iy] = total
        shape = (axes[0].size, axes[1].size)

    bad = ~np.isfinite(mass) | (mass <= 0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-positive or non-finite node mass at {coords[k].tolist()} for {family.kind} weight")
    return DiscreteSpace(mass, coords, mesh=mesh, shape=shape, axes=axes)


def analytic_ball_measure(family: WeightFamily, center, R: float) -> float | None:
    """Exact mu(B(center, R)) for families with a closed form; ``None`` otherwise."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size != family.dim or not R > 0:
        return None
    centered = bool(np.all(c == 0.0))
    if family.kind == "lebesgue":
        return 2.0 * R if family.dim == 1 else math.pi * R * R
    if family.kind == "power" and centered:
        a = family.alpha
        if family.dim == 1:
            return 2.0 * R ** (a + 1.0) / (a + 1.0)
        return 2.0 * math.pi * R ** (a + 2.0) / (a + 2.0)
    if family.kind == "exponential" and family.dim == 1:
        lam, y = family.rate, float(c[0])
        if lam == 0:
            return 2.0 * R
        return math.exp(lam * y) * 2.0 * math.sinh(lam * R) / lam
    if family.kind == "gaussian" and centered:
        s = family.scale
        if family.dim == 1:
            return s * math.sqrt(2.0 * math.pi) * math.erf(R / (s * math.sqrt(2.0)))
        return 2.0 * math.pi * s * s * -math.expm1(-R * R / (2.0 * s * s))
    return None
