"""Lower bounds on the weak Sobolev constant of one ball by ascent on the Sobolev quotient."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import SobolevParams
from .cutoffs import build_family, default_J
from .space_core import Ball, DiscreteSpace, ball_members, lip_with_argmax

__all__ = ["EstimateResult", "OptimizerConfig", "estimate_lower_bound", "sobolev_ratio", "tent"]

MAX_HALVINGS = 30


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 4
    max_iters: int = 200
    step: float = 0.25
    seed: int = 0
    epsilon: float = 1e-3
    tolerance: float = 1e-10
    h_lip: float | None = None

    def __post_init__(self) -> None:
        if self.restarts < 1 or self.max_iters < 0:
            raise ValueError("restarts must be >= 1 and max_iters >= 0")
        if not self.step > 0 or self.epsilon < 0 or self.tolerance < 0:
            raise ValueError("step must be positive, epsilon and tolerance nonnegative")


@dataclass
class EstimateResult:
    best_ratio: float
    best_phi: np.ndarray
    best_candidate: str
    seed: int
    iterations: int
    trace: list[float] = field(default_factory=list)
    seed_ratios: dict[str, float] = field(default_factory=dict)
    refined_ratios: dict[str, float] = field(default_factory=dict)

    def to_dict(self, include_phi: bool = False) -> dict:
        out = {
            "best_ratio": self.best_ratio,
            "best_candidate": self.best_candidate,
            "seed": self.seed,
            "iterations": self.iterations,
            "seed_ratios": self.seed_ratios,
            "refined_ratios": self.refined_ratios,
        }
        if include_phi:
            out["phi"] = self.best_phi.tolist()
        return out


class _Problem:
    """The quotient restricted to one ball, on a compact local index set."""

    def __init__(self, space: DiscreteSpace, ball: Ball, params: SobolevParams, h_lip: float | None) -> None:
        self.space = space
        self.R = ball.radius
        self.p, self.q = params.p, params.p * params.sigma
        self.members = ball_members(space, ball)
        if self.members.size == 0:
            raise ValueError("ball contains no sample points")
        self.h_lip = 2.0 * space.mesh if h_lip is None else h_lip
        w = space.mass[self.members]
        self.w = w / w.sum()
        i, j, d = space.neighbor_pairs(self.h_lip)
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        dd = np.concatenate([d, d])
        local = np.full(space.n, -1, dtype=np.int64)
        local[self.members] = np.arange(self.members.size)
        keep = local[src] >= 0
        self.src = local[src[keep]]
        # neighbours outside the ball carry the value 0 and get index -1
        self.dst = local[dst[keep]]
        self.dd = dd[keep]
        order = np.lexsort((self.dst, self.src))
        self.src, self.dst, self.dd = self.src[order], self.dst[order], self.dd[order]
        self.m = self.members.size

    def _lip(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        other = np.where(self.dst >= 0, x[np.maximum(self.dst, 0)], 0.0)
        diff = x[self.src] - other
        q = np.abs(diff) / self.dd
        g = np.zeros(self.m)
        arg = np.full(self.m, -1, dtype=np.int64)
        if q.size:
            order = np.lexsort((q, self.src))
            s = self.src[order]
            last = np.ones(order.size, dtype=bool)
            last[:-1] = s[1:] != s[:-1]
            top = order[last]
            g[self.src[top]] = q[top]
            arg[self.src[top]] = top
        return g, arg, diff

    def ratio(self, x: np.ndarray) -> float:
        a = np.abs(x)
        g, _, _ = self._lip(x)
        num = np.dot(self.w, a**self.q) ** (1.0 / self.q)
        den = self.R * np.dot(self.w, g**self.p) ** (1.0 / self.p) + np.dot(self.w, a**self.p) ** (1.0 / self.p)
        return float(num / den)

    def log_objective(self, x: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
        """Smoothed log-quotient and its (generalized) gradient."""
        p, q, w = self.p, self.q, self.w
        smooth = eps > 0 and (p == 1 or q < 2)
        if smooth:
            a = np.sqrt(x * x + eps * eps)
            da = x / a
        else:
            a = np.abs(x)
            da = np.sign(x)
        Sq = np.dot(w, a**q)
        Sp = np.dot(w, a**p)
        g, arg, diff = self._lip(x)
        T = np.dot(w, g**p)
        L = Sp ** (1.0 / p)
        G = T ** (1.0 / p) if T > 0 else 0.0
        D = self.R * G + L
        value = math.log(Sq) / q - math.log(D)

        grad_logN = (w * q * a ** (q - 1) * da) / (q * Sq)
        grad_L = (1.0 / p) * Sp ** (1.0 / p - 1.0) * w * p * a ** (p - 1) * da
        grad_T = np.zeros(self.m)
        has = arg >= 0
        if T > 0 and has.any():
            rows = np.flatnonzero(has)
            e = arg[rows]
            coef = w[rows] * p * g[rows] ** (p - 1) * np.sign(diff[e]) / self.dd[e]
            np.add.at(grad_T, rows, coef)
            nb = self.dst[e]
            inside = nb >= 0
            np.add.at(grad_T, nb[inside], -coef[inside])
        grad_G = (1.0 / p) * T ** (1.0 / p - 1.0) * grad_T if T > 0 else grad_T
        grad = grad_logN - (self.R * grad_G + grad_L) / D
        return value, grad


def tent(space: DiscreteSpace, ball: Ball) -> np.ndarray:
    """(1 - d(x, y) / R)^+ restricted to the ball."""
    d = space.center_distances(ball.center)
    phi = np.clip(1.0 - d / ball.radius, 0.0, 1.0)
    phi[_outside(space, ball)] = 0.0
    return phi


def _outside(space: DiscreteSpace, ball: Ball) -> np.ndarray:
    mask = np.ones(space.n, dtype=bool)
    mask[ball_members(space, ball)] = False
    return mask


def sobolev_ratio(
    space: DiscreteSpace, ball: Ball, phi, params: SobolevParams, h_lip: float | None = None
) -> float:
    """Smallest single constant for which the weak Sobolev inequality holds for ``phi`` on ``ball``.

    Averages are mu-averages over the ball and the gradient is the one-scale
    discrete lip of ``phi``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (space.n,):
        raise ValueError("function must have one value per point")
    if not np.all(np.isfinite(phi)):
        raise ValueError("function values must be finite")
    if np.any(phi[_outside(space, ball)] != 0):
        raise ValueError("not zero-boundary: function is nonzero outside the ball")
    if not np.any(phi != 0):
        raise ValueError("function is identically zero")
    members = ball_members(space, ball)
    w = space.mass[members] / space.mass[members].sum()
    g, _, _ = lip_with_argmax(space, phi, 2.0 * space.mesh if h_lip is None else h_lip, rows=members)
    a = np.abs(phi[members])
    p, q = params.p, params.p * params.sigma
    num = np.dot(w, a**q) ** (1.0 / q)
    den = ball.radius * np.dot(w, g**p) ** (1.0 / p) + np.dot(w, a**p) ** (1.0 / p)
    return float(num / den)


def _seeds(space: DiscreteSpace, ball: Ball, problem: _Problem, config: OptimizerConfig) -> list[tuple[str, np.ndarray]]:
    members = problem.members
    seeds = [("tent", tent(space, ball)[members])]
    try:
        J = default_J(ball, space)
    except ValueError:
        J = 0
    if J:
        family = build_family(space, ball, J)
        for j in range(1, J + 1):
            seeds.append((f"psi_{j}", family.psi(j)[members].copy()))
    rng = np.random.default_rng(config.seed)
    d0 = space.center_distances(ball.center)
    inner = np.flatnonzero(d0 < ball.radius / 2.0)
    if inner.size == 0:
        inner = members
    for k in range(config.restarts):
        c = int(inner[rng.integers(inner.size)])
        width = rng.uniform(ball.radius / 8.0, ball.radius / 2.0)
        dc = space.center_distances(c)[members]
        seeds.append((f"bump_{k}", np.exp(-0.5 * (dc / width) ** 2)))
    return [(name, x) for name, x in seeds if np.any(x != 0)]


def _ascend(problem: _Problem, x0: np.ndarray, config: OptimizerConfig) -> tuple[float, np.ndarray, int, list[float]]:
    x = x0 / np.max(np.abs(x0))
    best = problem.ratio(x)
    best_x = x.copy()
    trace = [best]
    eps = config.epsilon
    value, grad = problem.log_objective(x, eps)
    step = config.step
    iters = 0
    for iters in range(1, config.max_iters + 1):
        scale = np.max(np.abs(grad))
        if not np.isfinite(scale) or scale == 0:
            break
        direction = grad / scale
        accepted = False
        for _ in range(MAX_HALVINGS):
            y = x + step * direction
            top = np.max(np.abs(y))
            if top > 0 and np.isfinite(top):
                y = y / top
                with np.errstate(all="ignore"):
                    new_value, new_grad = problem.log_objective(y, eps)
                if np.isfinite(new_value) and np.all(np.isfinite(new_grad)) and new_value > value:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            break
        improvement = new_value - value
        x, value, grad = y, new_value, new_grad
        step = min(step * 1.5, config.step * 4)
        r = problem.ratio(x)
        if r > best:
            best, best_x = r, x.copy()
        trace.append(best)
        if improvement < config.tolerance:
            break
    return best, best_x, iters, trace


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SOBDUB_THREADS", "1")))
    except ValueError:
        return 1


def estimate_lower_bound(
    space: DiscreteSpace, ball: Ball, params: SobolevParams, config: OptimizerConfig | None = None
) -> EstimateResult:
    """Best Sobolev quotient over seeded candidates refined by ascent.

    Candidates are the tent, the cutoffs psi_j and ``config.restarts`` random
    gaussian bumps. Each is refined on the node values inside the ball (values
    outside stay zero). The result is deterministic for a given seed.
    """
    config = config or OptimizerConfig()
    problem = _Problem(space, ball, params, config.h_lip)
    if problem.m < 8:
        raise ValueError(f"ball too small: {problem.m} sample points, need at least 8")
    seeds = _seeds(space, ball, problem, config)
    seed_ratios = {name: problem.ratio(x) for name, x in seeds}
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        runs = list(pool.map(lambda item: _ascend(problem, item[1], config), seeds))

    # ties go to the earliest candidate
    best_k = max(range(len(runs)), key=lambda k: (runs[k][0], -k))
    best, trace = -math.inf, []
    for run in runs:
        for value in run[3]:
            best = max(best, value)
            trace.append(best)
    total_iters = sum(run[2] for run in runs)
    best_name = seeds[best_k][0]
    phi = np.zeros(space.n)
    phi[problem.members] = runs[best_k][1]
    return EstimateResult(
        best_ratio=float(best),
        best_phi=phi,
        best_candidate=best_name,
        seed=config.seed,
        iterations=total_iters,
        trace=trace,
        seed_ratios=seed_ratios,
        refined_ratios={name: run[0] for (name, _), run in zip(seeds, runs)},
    )
