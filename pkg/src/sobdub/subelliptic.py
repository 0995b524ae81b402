"""Degenerate-elliptic setting: Q-gradients, subunit shortest-path metrics,
accumulating cutoff families and the beta-iteration certificate for Lebesgue
measure on subunit balls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import gcd
from typing import Callable

import numpy as np

from .constants import SubellipticParams, log2_subelliptic_doubling_constant, subelliptic_beta
from .cutoffs import J_CAP, psi_values, radius
from .measures import WeightFamily, build_grid
from .space_core import Ball, DiscreteSpace

__all__ = [
    "AccumulatingFamily",
    "MatrixField",
    "SubellipticCertificate",
    "boundary_distance",
    "build_accumulating_family",
    "dilation_check",
    "fit_KN",
    "grushin_space",
    "metric_volumes",
    "node_at",
    "q_gradient_norm",
    "subelliptic_chain_certify",
    "subunit_metric",
]

LOG_SLACK = 1e-9
_RANK_TOL = 1e-14


@dataclass(frozen=True)
class MatrixField:
    """A field of symmetric positive semi-definite 2x2 matrices on the plane."""

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.asarray(self.fn(pts), dtype=float).reshape(-1, 2, 2)

    @classmethod
    def identity(cls) -> "MatrixField":
        return cls("identity", lambda pts: np.broadcast_to(np.eye(2), (len(pts), 2, 2)))

    @classmethod
    def diagonal(cls, f: Callable, g: Callable, kind: str = "diagonal") -> "MatrixField":
        def fn(pts):
            out = np.zeros((len(pts), 2, 2))
            out[:, 0, 0] = f(pts[:, 0], pts[:, 1])
            out[:, 1, 1] = g(pts[:, 0], pts[:, 1])
            return out

        return cls(kind, fn)

    @classmethod
    def grushin(cls) -> "MatrixField":
        """diag(1, x**2)."""
        return cls.diagonal(lambda x, y: np.ones_like(x), lambda x, y: x * x, kind="grushin")

    @classmethod
    def from_name(cls, name: str) -> "MatrixField":
        if name == "identity":
            return cls.identity()
        if name == "grushin":
            return cls.grushin()
        raise ValueError(f"unknown matrix field {name!r}")

    def check_psd(self, pts, tol: float = 1e-12) -> bool:
        Q = self(pts)
        if not np.allclose(Q, np.swapaxes(Q, 1, 2)):
            return False
        return bool(np.all(np.linalg.eigvalsh(Q) >= -tol * np.maximum(1.0, np.abs(Q).max())))

    def sup_norm(self, pts) -> float:
        return float(np.linalg.eigvalsh(self(pts)).max())


def _require_grid(space: DiscreteSpace) -> tuple[np.ndarray, np.ndarray]:
    if space.shape is None or space.axes is None or len(space.shape) != 2:
        raise ValueError("need a 2D coordinate grid")
    if min(space.shape) < 2:
        raise ValueError("degenerate grid: need at least two rows and two columns")
    return space.axes[0], space.axes[1]


def _central_difference(U: np.ndarray, axis_values: np.ndarray, axis: int) -> np.ndarray:
    """(U[i+1] - U[i-1]) / (x[i+1] - x[i-1]) inside, one-sided at both ends."""
    V = np.moveaxis(U, axis, 0)
    x = axis_values.reshape((-1,) + (1,) * (V.ndim - 1))
    out = np.empty_like(V)
    out[1:-1] = (V[2:] - V[:-2]) / (x[2:] - x[:-2])
    out[0] = (V[1] - V[0]) / (x[1] - x[0])
    out[-1] = (V[-1] - V[-2]) / (x[-1] - x[-2])
    return np.moveaxis(out, 0, axis)


def q_gradient_norm(space: DiscreteSpace, u, Q: MatrixField) -> np.ndarray:
    """(grad u^T Q grad u)**(1/2) with central differences (one-sided on the boundary)."""
    ax, ay = _require_grid(space)
    U = np.asarray(u, dtype=float).reshape(space.shape)
    gx, gy = _central_difference(U, ax, 0), _central_difference(U, ay, 1)
    grad = np.column_stack([gx.ravel(), gy.ravel()])
    M = Q(space.coords)
    quad = np.einsum("ni,nij,nj->n", grad, M, grad)
    return np.sqrt(np.maximum(quad, 0.0))


def _stencil(radius_: int) -> list[tuple[int, int]]:
    """Half of the primitive offsets with max(|a|, |b|) <= radius_."""
    out = []
    for a in range(0, radius_ + 1):
        for b in range(-radius_, radius_ + 1):
            if (a == 0 and b <= 0) or gcd(a, abs(b)) != 1:
                continue
            out.append((a, b))
    return out


def _subunit_cost(delta: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """sqrt(delta^T Q^+ delta) when delta lies in the range of Q, else inf."""
    tr = Q[:, 0, 0] + Q[:, 1, 1]
    cost2 = np.full(len(delta), np.inf)
    pos = tr > 0
    # work with Q / tr so that the rank test does not underflow
    scale = np.where(pos, tr, 1.0)
    a, b, c = Q[:, 0, 0] / scale, Q[:, 0, 1] / scale, Q[:, 1, 1] / scale
    dx, dy = delta[:, 0], delta[:, 1]
    det = a * c - b * b
    full = pos & (det > _RANK_TOL)
    cost2[full] = (c[full] * dx[full] ** 2 - 2 * b[full] * dx[full] * dy[full] + a[full] * dy[full] ** 2) / (
        det[full] * tr[full]
    )
    rank1 = pos & ~full
    if rank1.any():
        # Q = tr * v v^T with v the unit column of largest norm
        use_first = a[rank1] >= c[rank1]
        vx = np.where(use_first, a[rank1], b[rank1])
        vy = np.where(use_first, b[rank1], c[rank1])
        nv = np.hypot(vx, vy)
        vx, vy = vx / nv, vy / nv
        dlen = np.hypot(dx[rank1], dy[rank1])
        cross = np.abs(dx[rank1] * vy - dy[rank1] * vx)
        along = dx[rank1] * vx + dy[rank1] * vy
        ok = cross <= 1e-12 * dlen
        cost2[rank1] = np.where(ok, along**2 / tr[rank1], np.inf)
    return np.sqrt(cost2)


def subunit_metric(space: DiscreteSpace, Q: MatrixField, stencil: int = 1) -> DiscreteSpace:
    """Shortest-path metric on the grid with subunit edge lengths.

    An edge with displacement delta costs sqrt(delta^T Q(mid)^+ delta) where
    Q is evaluated at the edge midpoint; edges leaving the range of Q are
    removed. ``stencil=1`` is 8-neighbour connectivity, larger values add the
    primitive knight-type offsets.
    """
    ax, ay = _require_grid(space)
    nx, ny = space.shape
    idx = np.arange(space.n).reshape(nx, ny)
    heads, tails, costs = [], [], []
    for a, b in _stencil(stencil):
        i0, i1 = 0, nx - a
        j0, j1 = max(0, -b), ny - max(0, b)
        if i1 <= i0 or j1 <= j0:
            continue
        src = idx[i0:i1, j0:j1].ravel()
        dst = idx[i0 + a : i1 + a, j0 + b : j1 + b].ravel()
        delta = space.coords[dst] - space.coords[src]
        mid = 0.5 * (space.coords[dst] + space.coords[src])
        cost = _subunit_cost(delta, Q(mid))
        keep = np.isfinite(cost) & (cost > 0)
        heads.append(src[keep])
        tails.append(dst[keep])
        costs.append(cost[keep])
    edges = (np.concatenate(heads), np.concatenate(tails), np.concatenate(costs))
    return DiscreteSpace(space.mass, space.coords, edges=edges, shape=space.shape, axes=space.axes)


def node_at(space: DiscreteSpace, xy) -> int:
    """Index of the grid node nearest to ``xy``."""
    return int(np.argmin(np.linalg.norm(space.coords - np.asarray(xy, dtype=float), axis=1)))


GRUSHIN_RESOLUTION = (601, 601)
GRUSHIN_DOMAIN = ((-1.2, 1.2), (-0.36, 0.36))
GRUSHIN_STENCIL = 4


def grushin_space(
    resolution=GRUSHIN_RESOLUTION,
    domain=GRUSHIN_DOMAIN,
    stencil: int = GRUSHIN_STENCIL,
) -> tuple[DiscreteSpace, MatrixField]:
    """Lebesgue grid with the Grushin subunit metric.

    The 8-neighbour stencil overestimates distances near the degenerate line
    anisotropically, enough to bias small-ball volumes by ~10%; radius 4
    brings ball-volume ratios within ~2%.
    """
    grid = build_grid(domain, resolution, WeightFamily("lebesgue", dim=2))
    Q = MatrixField.grushin()
    return subunit_metric(grid, Q, stencil), Q


def boundary_distance(space: DiscreteSpace, center: int) -> float:
    """Metric distance from ``center`` to the outermost ring of grid nodes."""
    _require_grid(space)
    ring = np.zeros(space.shape, dtype=bool)
    ring[[0, -1], :] = True
    ring[:, [0, -1]] = True
    return float(space.center_distances(center)[ring.ravel()].min())


def metric_volumes(space: DiscreteSpace, center: int, radii) -> list[dict]:
    """Lebesgue volume of open subunit balls B(center, R) and B(center, 2R)."""
    d = space.center_distances(center)
    rows = []
    for R in radii:
        v1 = float(space.mass[d < R].sum())
        v2 = float(space.mass[d < 2 * R].sum())
        rows.append({"R": float(R), "vol_R": v1, "vol_2R": v2, "ratio": v2 / v1 if v1 > 0 else math.inf})
    return rows


def dilation_check(space: DiscreteSpace, center: int, xy, lam: float) -> dict:
    """Compare d(0, delta_lam(p)) with lam d(0, p) for delta_lam(x, y) = (lam x, lam**2 y)."""
    x, y = xy
    d = space.center_distances(center)
    i, k = node_at(space, (x, y)), node_at(space, (lam * x, lam * lam * y))
    base, scaled = float(d[i]), float(d[k])
    return {"point": [x, y], "lam": lam, "d_point": base, "d_dilated": scaled, "rel_err": abs(scaled - lam * base) / (lam * base)}


@dataclass
class AccumulatingFamily:
    ball: Ball
    nu: float
    radii: tuple[float, ...]
    functions: tuple[np.ndarray, ...]
    J: int
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def psi(self, j: int) -> np.ndarray:
        return self.functions[j - 1]


def _default_J_nu(R: float, h: float, nu: float) -> int:
    # largest J with plateau gap (1 - nu) R 2**(-J-1) >= h
    if R <= 4.0 * h:
        raise ValueError(f"radius below resolution: R = {R:g} <= 4h = {4 * h:g}")
    return int(min(max(math.floor(math.log2((1.0 - nu) * R / (2.0 * h))), 1), J_CAP))


def build_accumulating_family(
    space: DiscreteSpace, Q: MatrixField, ball: Ball, nu: float = 0.5, J: int | None = None
) -> AccumulatingFamily:
    """psi_j from subunit distances with plateau radii shrinking from R toward nu R.

    The structural properties (support in B, plateau on B(y, nu R), nesting,
    range and Lipschitz bound) are checked exactly on the grid.
    """
    if not isinstance(ball.center, int):
        ball = Ball(node_at(space, ball.center), ball.radius, ball.closed)
    R = ball.radius
    if not R < boundary_distance(space, ball.center) / 6.0:
        raise ValueError("ball too close to the domain boundary: need R < dist(y, boundary) / 6")
    if not 0 < nu < 1:
        raise ValueError("nu must lie in (0, 1)")
    if J is None:
        J = _default_J_nu(R, space.mesh, nu)
    d = space.center_distances(ball.center)
    radii = tuple(radius(j, R, nu) for j in range(1, J + 2))
    funcs = tuple(psi_values(j, R, d, nu) for j in range(1, J + 1))

    checks = {
        "supp_psi1_in_B": bool(np.all(d[funcs[0] > 0] < R)),
        "plateau_contains_nuR_ball": all(bool(np.all(f[d < nu * R] == 1.0)) for f in funcs),
        "nested_supports": all(bool(np.all(funcs[k][funcs[k + 1] > 0] == 1.0)) for k in range(J - 1)),
        "range_01": all(bool(np.all((f >= 0) & (f <= 1))) for f in funcs),
    }
    # Euclidean Lipschitz constant along grid edges is finite (max over the
    # 8-neighbourhood difference quotients)
    ax, ay = _require_grid(space)
    lip_ok = True
    for f in funcs:
        F = f.reshape(space.shape)
        qx = np.abs(np.diff(F, axis=0)) / np.diff(ax)[:, None]
        qy = np.abs(np.diff(F, axis=1)) / np.diff(ay)[None, :]
        lip_ok &= bool(np.isfinite(qx).all() and np.isfinite(qy).all())
    checks["lipschitz"] = lip_ok
    return AccumulatingFamily(ball, nu, radii, funcs, J, checks)


def _s_average(grad: np.ndarray, w: np.ndarray, s: float) -> float:
    return float(np.dot(w, grad**s)) ** (1.0 / s)


def fit_KN(space: DiscreteSpace, Q: MatrixField, family: AccumulatingFamily, s: float, N: float) -> float:
    """Smallest K with (|B|^-1 int_B [grad psi_j]_Q^s dx)^(1/s) <= K N^j / R for every j."""
    if not s >= 1 or not N > 1:
        raise ValueError("need s >= 1 and N > 1")
    R = family.ball.radius
    d = space.center_distances(family.ball.center)
    inside = d < R
    w = space.mass[inside] / space.mass[inside].sum()
    K = 0.0
    for j in range(1, family.J + 1):
        g = q_gradient_norm(space, family.psi(j), Q)[inside]
        K = max(K, _s_average(g, w, s) * R / N**j)
    return K


@dataclass
class SubellipticCertificate:
    beta: float
    J: int
    c_hat: float
    c_hat_all: float
    argmax_j: int
    log_lhs: float
    log_rhs: float
    log2_limit_bound: float
    limit_bound: float
    actual_doubling: float
    K_fit: float
    log2_bound_K: float
    family_checks: dict
    rows: list[dict]
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def subelliptic_chain_certify(
    space: DiscreteSpace,
    Q: MatrixField,
    ball: Ball,
    params: SubellipticParams,
    family: AccumulatingFamily | None = None,
) -> SubellipticCertificate:
    """beta-iteration with B_j = supp(psi_j) and Lebesgue measure.

    c_hat is the least constant with
    (|B_{j+1}| / |B*|)**(1/(p sigma)) <= c_hat N**j (|B_j| / |B*|)**(1/p - 1/s)
    for every row; the telescoped finite-J inequality is checked in log form
    and the limit bound c_hat**(p sigma/(beta-1)) N**(p sigma beta/(beta-1)**2)
    is compared with |B*| / |B|.
    """
    beta = subelliptic_beta(params)
    if family is None:
        family = build_accumulating_family(space, Q, ball, params.nu)
    ball = family.ball
    R, nu, J = ball.radius, family.nu, family.J
    p, sigma, s, N = params.p, params.sigma, params.s, params.N
    d = space.center_distances(ball.center)
    order = np.argsort(d, kind="stable")
    ds = d[order]
    cum = np.concatenate([[0.0], np.cumsum(space.mass[order])])

    def vol_open(r: float) -> float:
        return float(cum[np.searchsorted(ds, r, side="left")])

    vol_star, vol_B = vol_open(2 * R), vol_open(R)
    e = 1.0 / p - 1.0 / s

    def row(j: int, vj: float, vnext: float) -> dict:
        mj, mnext = vj / vol_star, vnext / vol_star
        lhs = mnext ** (1.0 / (p * sigma))
        c = lhs / (N**j * mj**e)
        return {"j": j, "vol_Bj": vj, "m_j": mj, "lhs": lhs, "c_j": c}

    # supp psi_j = {d < r_j}
    vols = [vol_open(radius(j, R, nu)) for j in range(1, J + 2)]
    rows = [row(j, vols[j - 1], vols[j]) for j in range(1, J + 1)]
    c_hat = max(r["c_j"] for r in rows)
    argmax_j = max(rows, key=lambda r: r["c_j"])["j"]

    limit_count = int(np.searchsorted(ds, nu * R, side="right"))
    tail, j, vj = 0.0, J + 1, vols[J]
    while j <= 80:
        vnext = vol_open(radius(j + 1, R, nu))
        tail = max(tail, row(j, vj, vnext)["c_j"])
        if int(np.searchsorted(ds, radius(j, R, nu), side="left")) == limit_count:
            break
        j, vj = j + 1, vnext
    c_all = max(c_hat, tail)

    ps = p * sigma
    log_C = sum(ps * (math.log(c_hat) + k * math.log(N)) / beta**k for k in range(1, J + 1))
    w = beta ** (-J)
    log_lhs = (1.0 - w) * math.log(vol_star) + w * math.log(vols[J])
    log_rhs = log_C + math.log(vols[0])
    log2_limit = log2_subelliptic_doubling_constant(params, c_all)
    actual = vol_star / vol_B
    K = fit_KN(space, Q, family, s, N)
    passed = (
        log_lhs <= log_rhs + LOG_SLACK
        and math.log2(actual) <= log2_limit + 1e-9
        and family.passed
    )
    return SubellipticCertificate(
        beta=beta,
        J=J,
        c_hat=c_hat,
        c_hat_all=c_all,
        argmax_j=argmax_j,
        log_lhs=log_lhs,
        log_rhs=log_rhs,
        log2_limit_bound=log2_limit,
        limit_bound=2.0**log2_limit if log2_limit < 1023 else math.inf,
        actual_doubling=actual,
        K_fit=K,
        log2_bound_K=log2_subelliptic_doubling_constant(params, K + 1.0),
        family_checks=dict(family.checks),
        rows=rows,
        passed=bool(passed),
    )
