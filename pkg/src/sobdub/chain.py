"""Per-ball measure chain, minimal chain constant and the telescoped certificate.

For a ball B = B(y, R) with B* = B(y, 2R) and closed B_j = {d(., y) <= r_j},
row j of the chain compares a_{j+1} = m_{j+1}**(1/(p sigma)) with
2**(j+4) m_j**(1/p), where m_j = mu(B_j) / mu(B*). The smallest constant that
makes every row hold is the chain constant; feeding it through the iteration
gives a doubling bound for this ball.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .constants import SobolevParams, log2_K1, log2_doubling_constant
from .cutoffs import default_J, radius
from .space_core import Ball, DiscreteSpace, EmptyBallError

__all__ = [
    "Certificate",
    "ChainReport",
    "ChainRow",
    "certify_finite_bound",
    "chain_ratios",
    "minimal_chain_constant",
    "bound_holds",
    "run_chain",
    "sobolev_lower_bound_from_doubling",
    "theorem_bound",
]

LOG_SLACK = 1e-9
EQUALITY_RTOL = 1e-12
# r_j rounds to R/2 well before this index; beyond it the rows only shrink
_TAIL_CAP = 80
LN2 = math.log(2.0)


@dataclass(frozen=True)
class ChainRow:
    j: int
    r_j: float
    mu_Bj: float
    m_j: float
    a_next: float
    rho_j: float


@dataclass(frozen=True)
class Certificate:
    J: int
    log_lhs: float
    log_rhs: float
    passed: bool
    argmax_j: int
    argmax_rel_gap: float
    min_row_slack: float


@dataclass
class ChainReport:
    center: object
    R: float
    p: float
    sigma: float
    J: int
    rows: list[ChainRow]
    mu_B: float
    mu_Bstar: float
    mu_half: float
    mu_B_J1: float
    tail_max_rho: float
    actual_doubling: float
    c_min: float | None = None
    argmax_j: int | None = None
    certificate: Certificate | None = None
    theorem_bound: float | None = None
    log2_theorem_bound: float | None = None
    chain_complete: bool | None = None

    @property
    def params(self) -> SobolevParams:
        return SobolevParams(self.p, self.sigma)

    @property
    def c_chain(self) -> float:
        """Chain constant valid for every j >= 1, not only j <= J."""
        return max(minimal_chain_constant(self), self.tail_max_rho)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["center"] = list(self.center) if isinstance(self.center, tuple) else self.center
        out["c_chain"] = self.c_chain
        return out


class _SortedMeasure:
    """mu of open/closed balls about one center via one sort and a cumulative sum."""

    def __init__(self, space: DiscreteSpace, center) -> None:
        d = space.center_distances(center)
        order = np.argsort(d, kind="stable")
        self.d = d[order]
        self.cum = np.concatenate([[0.0], np.cumsum(space.mass[order])])

    def closed(self, r: float) -> float:
        return float(self.cum[np.searchsorted(self.d, r, side="right")])

    def open(self, r: float) -> float:
        return float(self.cum[np.searchsorted(self.d, r, side="left")])

    def count_closed(self, r: float) -> int:
        return int(np.searchsorted(self.d, r, side="right"))


def _row(j: int, R: float, mu_j: float, mu_next: float, mu_star: float, p: float, sigma: float) -> ChainRow:
    m_j, m_next = mu_j / mu_star, mu_next / mu_star
    a_next = m_next ** (1.0 / (p * sigma))
    rho = a_next / (math.ldexp(1.0, j + 4) * m_j ** (1.0 / p))
    return ChainRow(j, radius(j, R), mu_j, m_j, a_next, rho)


def chain_ratios(space: DiscreteSpace, ball: Ball, params: SobolevParams, J: int | None = None) -> ChainReport:
    """Rows j = 1..J of the chain for ``ball`` (only center and radius are used)."""
    R = ball.radius
    if J is None:
        J = default_J(ball, space)
    if J < 1:
        raise ValueError("J must be at least 1")
    sm = _SortedMeasure(space, ball.center)
    mu_half = sm.closed(R / 2.0)
    if mu_half <= 0.0:
        raise EmptyBallError("resolution too coarse: closed half-ball contains no sample point")
    mu_B, mu_star = sm.open(R), sm.open(2.0 * R)
    p, sigma = params.p, params.sigma
    mus = [sm.closed(radius(j, R)) for j in range(1, J + 2)]
    rows = [_row(j, R, mus[j - 1], mus[j], mu_star, p, sigma) for j in range(1, J + 1)]

    # rows past J until B_j has shrunk to the closed half-ball; from there on
    # m_j is constant and rho_j halves at every step
    half_count = sm.count_closed(R / 2.0)
    tail, j, mu_j = 0.0, J + 1, mus[J]
    while j <= _TAIL_CAP:
        mu_next = sm.closed(radius(j + 1, R))
        tail = max(tail, _row(j, R, mu_j, mu_next, mu_star, p, sigma).rho_j)
        if sm.count_closed(radius(j, R)) == half_count:
            break
        j, mu_j = j + 1, mu_next
    return ChainReport(
        center=ball.center,
        R=R,
        p=p,
        sigma=sigma,
        J=J,
        rows=rows,
        mu_B=mu_B,
        mu_Bstar=mu_star,
        mu_half=mu_half,
        mu_B_J1=mus[J],
        tail_max_rho=tail,
        actual_doubling=mu_star / mu_B,
    )


def minimal_chain_constant(report: ChainReport) -> float:
    """max_j rho_j over the computed rows."""
    return max(row.rho_j for row in report.rows)


def _log_C(J: int, c: float, p: float, sigma: float) -> float:
    total = 0.0
    lc = math.log(c)
    for j in range(1, J + 1):
        total += sigma * p * (lc + (j + 4) * LN2) / sigma**j
    return total


def certify_finite_bound(report: ChainReport) -> Certificate:
    """Telescoped finite-J inequality in natural-log form.

    (1 - sigma**-J) log mu(B*) + sigma**-J log mu(B_{J+1}) <= log C(J) + log mu(B_1)
    with log C(J) = sum_{j<=J} sigma p (log c + (j + 4) log 2) / sigma**j.
    """
    p, sigma, J = report.p, report.sigma, report.J
    c = minimal_chain_constant(report)
    w = sigma ** (-J)
    lhs = (1.0 - w) * math.log(report.mu_Bstar) + w * math.log(report.mu_B_J1)
    rhs = _log_C(J, c, p, sigma) + math.log(report.rows[0].mu_Bj)
    slacks = [math.log(c * math.ldexp(1.0, r.j + 4) * r.m_j ** (1.0 / p)) - math.log(r.a_next) for r in report.rows]
    k = int(np.argmax([r.rho_j for r in report.rows]))
    top = report.rows[k]
    bound_top = c * math.ldexp(1.0, top.j + 4) * top.m_j ** (1.0 / p)
    gap = abs(bound_top - top.a_next) / top.a_next
    return Certificate(
        J=J,
        log_lhs=lhs,
        log_rhs=rhs,
        passed=bool(lhs <= rhs + LOG_SLACK and gap <= EQUALITY_RTOL and min(slacks) >= -LOG_SLACK),
        argmax_j=top.j,
        argmax_rel_gap=gap,
        min_row_slack=min(slacks),
    )


def theorem_bound(report: ChainReport) -> float:
    """doubling_constant(params, c) with c the chain constant over all j."""
    log2_val = log2_doubling_constant(report.params, report.c_chain)
    return 2.0**log2_val if log2_val < 1023 else math.inf


def sobolev_lower_bound_from_doubling(space: DiscreteSpace, center, R: float, params: SobolevParams) -> float:
    """(D / K1)**((sigma - 1) / (p sigma)) with D = mu(B(y, 2R)) / mu(B(y, R)).

    Any constant making every chain row hold for this ball is at least this.
    """
    sm = _SortedMeasure(space, center)
    inner = sm.open(R)
    if inner <= 0:
        raise EmptyBallError("ball contains no sample points")
    D = sm.open(2.0 * R) / inner
    log2_val = (math.log2(D) - log2_K1(params)) / params.exponent
    return 2.0**log2_val


def run_chain(space: DiscreteSpace, ball: Ball, params: SobolevParams, J: int | None = None) -> ChainReport:
    """Rows, chain constant, certificate and theorem bound in one report."""
    report = chain_ratios(space, ball, params, J)
    report.c_min = minimal_chain_constant(report)
    report.argmax_j = max(report.rows, key=lambda r: r.rho_j).j
    report.certificate = certify_finite_bound(report)
    report.log2_theorem_bound = log2_doubling_constant(report.params, report.c_chain)
    report.theorem_bound = theorem_bound(report)
    report.chain_complete = report.tail_max_rho <= report.c_min
    return report


def bound_holds(report: ChainReport, rtol: float = 1e-9) -> bool:
    """mu(B*) / mu(B) <= theorem bound, compared in log2 form."""
    return math.log2(report.actual_doubling) <= report.log2_theorem_bound + math.log2(1.0 + rtol)
