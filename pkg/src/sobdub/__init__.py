"""Weak Sobolev inequalities and measure doubling on discrete metric measure spaces."""

from .constants import SobolevParams, SubellipticParams
from .measures import WeightFamily, analytic_ball_measure, build_grid, parse_family
from .space_core import Ball, DiscreteSpace, ball_members, discrete_lip, distance, doubling_ratio, measure

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "DiscreteSpace",
    "SobolevParams",
    "SubellipticParams",
    "WeightFamily",
    "analytic_ball_measure",
    "ball_members",
    "build_grid",
    "discrete_lip",
    "distance",
    "doubling_ratio",
    "measure",
    "parse_family",
]
