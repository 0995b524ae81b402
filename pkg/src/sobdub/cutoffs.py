"""Nested Lipschitz cutoffs psi_j with plateau radius r_{j+1} and support radius r_j."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .space_core import Ball, DiscreteSpace, discrete_lip

__all__ = [
    "CutoffFamily",
    "CutoffReport",
    "build_family",
    "default_J",
    "psi",
    "psi_values",
    "radius",
    "verify_cutoff_properties",
]

J_CAP = 40
# floating-point slack for the pairwise Lipschitz check; psi is a clipped
# affine function of d(., y) so the bound holds up to rounding only
_LIP_RTOL = 1e-12


def radius(j: int, R: float, nu: float = 0.5) -> float:
    """r_j = (nu + (1 - nu) 2**-j) R; for nu = 1/2 this is (2**(-j-1) + 1/2) R."""
    if j < 1:
        raise ValueError("cutoff index starts at 1")
    if not R > 0:
        raise ValueError("radius must be positive")
    return (nu + (1.0 - nu) * math.ldexp(1.0, -j)) * R


def slope(j: int, R: float, nu: float = 0.5) -> float:
    """1 / (r_j - r_{j+1}); equals 2**(j+2) / R for nu = 1/2."""
    return 1.0 / ((1.0 - nu) * math.ldexp(1.0, -j - 1) * R)


def psi_values(j: int, R: float, dist: np.ndarray, nu: float = 0.5) -> np.ndarray:
    rj, rj1 = radius(j, R, nu), radius(j + 1, R, nu)
    # the gap is rounded once and reused so that d <= r_{j+1} maps to exactly 1
    gap = rj - rj1
    return np.clip((rj - np.asarray(dist, dtype=float)) / gap, 0.0, 1.0)


def psi(j: int, ball: Ball, x, space: DiscreteSpace) -> float:
    """psi_j at a single point ``x`` (index or coordinates)."""
    if isinstance(x, (int, np.integer)):
        d = float(space.center_distances(ball.center)[int(x)])
    elif isinstance(ball.center, int):
        d = float(space.center_distances(ball.center)[_nearest(space, x)])
    else:
        d = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float)) - np.asarray(ball.center)))
    return float(psi_values(j, ball.radius, np.array([d]))[0])


def _nearest(space: DiscreteSpace, x) -> int:
    return int(np.argmin(np.linalg.norm(space.coords - np.atleast_1d(np.asarray(x, float)), axis=1)))


def default_J(ball: Ball, space: DiscreteSpace) -> int:
    """floor(log2(R / (8 h))) + 1 clamped to [1, 40]."""
    R, h = ball.radius, space.mesh
    if R <= 4.0 * h:
        raise ValueError(f"radius below resolution: R = {R:g} <= 4h = {4 * h:g}")
    return int(min(max(math.floor(math.log2(R / (8.0 * h))) + 1, 1), J_CAP))


@dataclass(frozen=True)
class CutoffFamily:
    ball: Ball
    radii: tuple[float, ...]  # r_1 .. r_{J_max + 1}
    functions: tuple[np.ndarray, ...]  # psi_1 .. psi_{J_max}
    nested_sets: tuple[np.ndarray, ...]  # closed B_1 .. B_{J_max + 1}
    J_max: int
    resolvable: int  # last index not flagged below resolution
    nu: float = 0.5

    def psi(self, j: int) -> np.ndarray:
        return self.functions[j - 1]

    def B(self, j: int) -> np.ndarray:
        return self.nested_sets[j - 1]


def build_family(space: DiscreteSpace, ball: Ball, J_max: int | None = None, nu: float = 0.5) -> CutoffFamily:
    dist = space.center_distances(ball.center)
    R = ball.radius
    try:
        resolvable = default_J(ball, space)
    except ValueError:
        resolvable = 0
    if J_max is None:
        if resolvable == 0:
            raise ValueError(f"radius below resolution: R = {R:g} <= 4h = {4 * space.mesh:g}")
        J_max = resolvable
    if J_max < 1:
        raise ValueError("J_max must be at least 1")
    radii = tuple(radius(j, R, nu) for j in range(1, J_max + 2))
    functions = tuple(psi_values(j, R, dist, nu) for j in range(1, J_max + 1))
    sets = tuple(np.flatnonzero(dist <= r) for r in radii)
    return CutoffFamily(ball, radii, functions, sets, J_max, min(resolvable, J_max), nu)


@dataclass
class CutoffReport:
    passed: bool
    checked: list[int]
    below_resolution: list[int]
    failures: list[dict] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checked": self.checked,
            "below_resolution": self.below_resolution,
            "failures": self.failures,
            "rows": self.rows,
        }


def _max_pairwise_quotient(space: DiscreteSpace, u: np.ndarray, chunk: int = 512) -> tuple[float, int, int]:
    """Largest |u(x) - u(z)| / d(x, z) over all pairs with u(x) > 0.

    On Euclidean spaces pairs with u(z) = 0 reduce exactly to the nearest
    zero of u, found with a k-d tree; the remaining pairs are enumerated.
    """
    support = np.flatnonzero(u > 0)
    best, arg = 0.0, (-1, -1)
    if support.size == 0 or space.n < 2:
        return best, *arg
    euclid = space.metric == "euclidean"
    cols = support if euclid else np.arange(space.n)
    if euclid:
        zeros = np.flatnonzero(u <= 0)
        if zeros.size:
            dz, kz = cKDTree(space.coords[zeros]).query(space.coords[support])
            with np.errstate(divide="ignore"):
                qz = np.abs(u[support] - u[zeros[kz]]) / dz
            k = int(np.argmax(qz))
            best, arg = float(qz[k]), (int(support[k]), int(zeros[kz[k]]))
    for start in range(0, support.size, chunk):
        rows = support[start : start + chunk]
        if euclid:
            diff = space.coords[rows][:, None, :] - space.coords[cols][None, :, :]
            d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        else:
            d = np.vstack([space.center_distances(int(r)) for r in rows])
        du = np.abs(u[rows][:, None] - u[cols][None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, du / d, 0.0)
        k = int(np.argmax(q))
        if q.flat[k] > best:
            best = float(q.flat[k])
            arg = (int(rows[k // cols.size]), int(cols[k % cols.size]))
    return best, *arg


def verify_cutoff_properties(
    space: DiscreteSpace, family: CutoffFamily, p: float = 2.0, h_lip: float | None = None
) -> CutoffReport:
    """Check support, plateau, lip and pairwise Lipschitz bounds for each psi_j.

    Indices beyond the resolvable range (plateau gap below the mesh) are
    reported in ``below_resolution`` and skipped.
    """
    if h_lip is None:
        h_lip = 2.0 * space.mesh
    tau = 2.0 * space.mesh / h_lip
    R = family.ball.radius
    dist = space.center_distances(family.ball.center)
    mass = space.mass
    mu_star = float(mass[dist < 2.0 * R].sum())
    checked = list(range(1, family.resolvable + 1))
    skipped = list(range(family.resolvable + 1, family.J_max + 1))
    failures: list[dict] = []
    rows: list[dict] = []

    def fail(j: int, check: str, point: int, value: float, bound: float) -> None:
        failures.append({"j": j, "check": check, "point": space.ids[point], "value": value, "bound": bound})

    for j in checked:
        u = family.psi(j)
        L = slope(j, R, family.nu)
        if np.any((u < 0) | (u > 1)):
            k = int(np.flatnonzero((u < 0) | (u > 1))[0])
            fail(j, "range", k, float(u[k]), 1.0)
        in_Bj = np.zeros(space.n, dtype=bool)
        in_Bj[family.B(j)] = True
        outside = np.flatnonzero((u != 0) & ~in_Bj)
        if outside.size:
            fail(j, "support", int(outside[0]), float(u[outside[0]]), 0.0)
        plateau = family.B(j + 1)
        off = plateau[u[plateau] != 1.0]
        if off.size:
            fail(j, "plateau", int(off[0]), float(u[off[0]]), 1.0)
        g = discrete_lip(space, u, h_lip) if space.n > 1 else np.zeros(1)
        k = int(np.argmax(g))
        if g[k] > L * (1.0 + tau):
            fail(j, "lip", k, float(g[k]), L * (1.0 + tau))
        q, a, _ = _max_pairwise_quotient(space, u)
        if q > L * (1.0 + _LIP_RTOL):
            fail(j, "pairwise_lipschitz", a, q, L)
        energy = float((mass * g**p).sum() / mu_star) ** (1.0 / p)
        rows.append(
            {
                "j": j,
                "r_j": family.radii[j - 1],
                "slope": L,
                "max_lip": float(g[k]),
                "max_pairwise_quotient": q,
                "energy_over_bound": energy / (L * (mass[in_Bj].sum() / mu_star) ** (1.0 / p)),
            }
        )
    return CutoffReport(not failures, checked, skipped, failures, rows)
