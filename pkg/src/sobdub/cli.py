"""Batch front-end: ``sobdub <command> [flags]``.

Exit status: 0 on success, 1 when a certificate or property check fails,
2 on invalid input (bad flags, malformed specs, unreadable files).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .chain import bound_holds, run_chain, sobolev_lower_bound_from_doubling
from .constants import (
    SobolevParams,
    SubellipticParams,
    log2_doubling_constant,
    log2_K1,
    log2_subelliptic_doubling_constant,
    series_S,
    subelliptic_beta,
)
from .cutoffs import build_family, verify_cutoff_properties
from .measures import analytic_ball_measure, build_grid, parse_family
from .sobolev_opt import OptimizerConfig, estimate_lower_bound, sobolev_ratio, tent
from .space_core import Ball, DiscreteSpace, doubling_ratio, load_space_csv, measure
from .subelliptic import (
    GRUSHIN_DOMAIN,
    GRUSHIN_RESOLUTION,
    GRUSHIN_STENCIL,
    MatrixField,
    build_accumulating_family,
    dilation_check,
    metric_volumes,
    node_at,
    subelliptic_chain_certify,
    subunit_metric,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
DEFAULT_GRID = {1: 2001, 2: 201}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- output


def _plain(obj: Any) -> Any:
    """JSON-safe copy: numpy to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if hasattr(obj, "__dataclass_fields__"):
        return _plain({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    return str(obj)


def _dump_json(payload: dict) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"


def _dump_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _rows_csv(payload: dict) -> str:
    rows = _plain(payload.get("rows"))
    if not rows or not all(isinstance(r, dict) for r in rows):
        raise InputError("csv output needs a report with a rows table")
    header = sorted(rows[0])
    return _dump_csv(header, [[r.get(k, "") for k in header] for r in rows])


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parsing


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _radii(text: str) -> list[float]:
    """``a:b:n`` (n evenly spaced values) or a comma list."""
    if ":" in str(text):
        parts = str(text).split(":")
        if len(parts) != 3:
            raise InputError(f"radii must be a:b:n, got {text!r}")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise InputError(f"radii must be a:b:n, got {text!r}") from None
        if n < 1:
            raise InputError("radii count must be positive")
        values = np.linspace(a, b, n).tolist()
    else:
        values = _floats(text)
    if not values or any(not (r > 0 and math.isfinite(r)) for r in values):
        raise InputError("radii must be positive and finite")
    return values


def _domain(text: str, dim: int) -> list[tuple[float, float]]:
    boxes = []
    for part in str(text).split(","):
        lo, sep, hi = part.partition(":")
        if not sep:
            raise InputError(f"domain must be lo:hi[,lo:hi], got {text!r}")
        try:
            boxes.append((float(lo), float(hi)))
        except ValueError:
            raise InputError(f"domain must be lo:hi[,lo:hi], got {text!r}") from None
    if len(boxes) != dim:
        raise InputError(f"domain has {len(boxes)} axes, space has {dim}")
    return boxes


def _resolution(text: str | None, dim: int) -> list[int]:
    if text is None:
        return [DEFAULT_GRID[dim]] * dim
    try:
        res = [int(t) for t in str(text).split(",")]
    except ValueError:
        raise InputError(f"grid must be integers, got {text!r}") from None
    if len(res) == 1:
        res = res * dim
    if len(res) != dim:
        raise InputError(f"grid has {len(res)} entries, space has {dim}")
    return res


def _load_space(args, centers: list[np.ndarray | str], rmax: float) -> DiscreteSpace:
    spec = args.space
    if spec is None:
        raise InputError("--space is required")
    # a points file, unless it is a tabulated weight such as table:path=w.csv
    if spec.endswith(".csv") and not spec.startswith("table:"):
        if not Path(spec).is_file():
            raise InputError(f"cannot read points file {spec!r}")
        if args.edges and not Path(args.edges).is_file():
            raise InputError(f"cannot read edges file {args.edges!r}")
        return load_space_csv(spec, args.edges)
    family = parse_family(spec, args.dim)
    if args.domain:
        box = _domain(args.domain, family.dim)
    else:
        pts = np.array([c for c in centers], dtype=float).reshape(-1, family.dim)
        half = 2.5 * rmax
        box = [(float(pts[:, k].min() - half), float(pts[:, k].max() + half)) for k in range(family.dim)]
    return build_grid(box, _resolution(args.grid, family.dim), family)


def _center(text: str | None, args) -> np.ndarray | str:
    if getattr(args, "center_id", None) is not None:
        return str(args.center_id)
    if text is None:
        raise InputError("--center is required")
    return np.array(_floats(text))


def _resolve(space: DiscreteSpace, center) -> Any:
    """Ball center as a point index (for ids) or a coordinate tuple."""
    if isinstance(center, str):
        try:
            return space.index_of(center)
        except KeyError:
            raise InputError(f"unknown point id {center!r}") from None
    if space.coords is None:
        raise InputError("space has no coordinates; use --center-id")
    if center.size != space.coords.shape[1]:
        raise InputError(f"center has {center.size} coordinates, space has {space.coords.shape[1]}")
    return tuple(float(v) for v in center)


def _positive(name: str, value: float | None) -> float:
    if value is None or not (value > 0 and math.isfinite(value)):
        raise InputError(f"--{name} must be positive and finite")
    return float(value)


def _sobolev(args) -> SobolevParams:
    return SobolevParams(args.p, args.sigma)


def _center_label(center) -> str:
    if isinstance(center, tuple):
        return " ".join(repr(v) for v in center)
    return str(center)


# ---------------------------------------------------------------- commands


def cmd_constants(args) -> tuple[dict, int]:
    params = _sobolev(args)
    out = {
        "p": params.p,
        "sigma": params.sigma,
        "S": series_S(params.sigma),
        "log2_K1": log2_K1(params),
        "K1": 2.0 ** log2_K1(params) if log2_K1(params) < 1023 else math.inf,
        "exponent_psigma_over_sigma_minus1": params.exponent,
    }
    if args.cs is not None:
        log2_cd = log2_doubling_constant(params, _positive("cs", args.cs))
        out["C_S"] = args.cs
        out["log2_C_D"] = log2_cd
        out["C_D"] = 2.0**log2_cd if log2_cd < 1023 else math.inf
    if args.s is not None:
        sp = SubellipticParams(args.p, args.sigma, args.s, K=args.K, N=args.bign)
        log2_sub = log2_subelliptic_doubling_constant(sp)
        out.update(
            {
                "s": sp.s,
                "K": sp.K,
                "N": sp.N,
                "beta": subelliptic_beta(sp),
                "log2_subelliptic_bound": log2_sub,
                "subelliptic_bound": 2.0**log2_sub if log2_sub < 1023 else math.inf,
            }
        )
    return out, EXIT_OK


def cmd_doubling(args) -> tuple[dict, int]:
    raw = _center(args.center, args)
    R = _positive("radius", args.radius)
    space = _load_space(args, [raw], 2 * R)
    center = _resolve(space, raw)
    out = {
        "center": center,
        "R": R,
        "mu_B": measure(space, Ball(center, R)),
        "mu_2B": measure(space, Ball(center, 2 * R)),
        "ratio": doubling_ratio(space, center, R),
    }
    if not args.space.endswith(".csv"):
        family = parse_family(args.space, args.dim)
        a1 = analytic_ball_measure(family, center, R)
        a2 = analytic_ball_measure(family, center, 2 * R)
        if a1 and a2:
            out["analytic_ratio"] = a2 / a1
    return out, EXIT_OK


def _chain_row(space: DiscreteSpace, center, R: float, params: SobolevParams, J: int | None) -> dict:
    report = run_chain(space, Ball(center, R), params, J)
    lower = sobolev_lower_bound_from_doubling(space, center, R, params)
    return {
        "report": report,
        "lower_bound": lower,
        "pass": bool(report.certificate.passed and bound_holds(report)),
    }


def cmd_chain(args) -> tuple[dict, int]:
    raw = _center(args.center, args)
    R = _positive("radius", args.radius)
    space = _load_space(args, [raw], 2 * R)
    center = _resolve(space, raw)
    res = _chain_row(space, center, R, _sobolev(args), args.J)
    out = res["report"].to_dict()
    out["lower_bound"] = res["lower_bound"]
    out["pass"] = res["pass"]
    return out, EXIT_OK if res["pass"] else EXIT_FAIL


def cmd_estimate(args) -> tuple[dict, int]:
    raw = _center(args.center, args)
    R = _positive("radius", args.radius)
    space = _load_space(args, [raw], 2 * R)
    ball = Ball(_resolve(space, raw), R)
    params = _sobolev(args)
    config = OptimizerConfig(restarts=args.restarts, max_iters=args.iters, seed=args.seed)
    result = estimate_lower_bound(space, ball, params, config)
    out = result.to_dict(include_phi=args.include_phi)
    out["tent_ratio"] = sobolev_ratio(space, ball, tent(space, ball), params)
    out["center"], out["R"] = ball.center, R
    return out, EXIT_OK


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SOBDUB_THREADS", "1")))
    except ValueError:
        return 1


def cmd_sweep(args) -> tuple[dict | str, int]:
    raws = [_center(c, args) for c in (args.center or [])]
    if not raws:
        raise InputError("--center is required (repeat it for several centers)")
    radii = _radii(args.radii)
    space = _load_space(args, raws, 2 * max(radii))
    centers = sorted({_resolve(space, c) for c in raws}, key=lambda c: (str(type(c)), c))
    params = _sobolev(args)
    jobs = [(c, R) for c in centers for R in sorted(radii)]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda job: _chain_row(space, job[0], job[1], params, args.J), jobs))
    rows = []
    for (c, R), res in zip(jobs, results):
        rep = res["report"]
        rows.append([_center_label(c), R, rep.J, rep.c_min, rep.actual_doubling, rep.theorem_bound, res["lower_bound"], res["pass"]])
    status = EXIT_OK if all(r[-1] for r in rows) else EXIT_FAIL
    header = ["center", "R", "J", "c_min", "doubling", "theorem_bound", "lower_bound", "pass"]
    if args.format == "csv":
        return _dump_csv(header, rows), status
    return {"rows": [dict(zip(header, r)) for r in rows]}, status


def cmd_cutoff_check(args) -> tuple[dict, int]:
    raw = _center(args.center, args)
    R = _positive("radius", args.radius)
    space = _load_space(args, [raw], 2 * R)
    ball = Ball(_resolve(space, raw), R)
    family = build_family(space, ball, args.J)
    report = verify_cutoff_properties(space, family, p=args.p)
    out = report.to_dict()
    out.update({"center": ball.center, "R": R, "J_max": family.J_max, "mesh": space.mesh})
    return out, EXIT_OK if report.passed else EXIT_FAIL


def _subunit_space(args, default_field: str):
    field = MatrixField.from_name(args.q or default_field)
    res = _resolution(args.grid, 2) if args.grid else list(GRUSHIN_RESOLUTION)
    box = _domain(args.domain, 2) if args.domain else [tuple(b) for b in GRUSHIN_DOMAIN]
    grid = build_grid(box, res, parse_family("lebesgue", 2))
    stencil = GRUSHIN_STENCIL if args.stencil is None else args.stencil
    if stencil < 1:
        raise InputError("--stencil must be at least 1")
    return subunit_metric(grid, field, stencil), field


def cmd_grushin(args) -> tuple[dict | str, int]:
    space, _ = _subunit_space(args, "grushin")
    origin = node_at(space, (0.0, 0.0))
    radii = _radii(args.radii)
    volumes = metric_volumes(space, origin, radii)
    if args.format == "csv":
        header = ["R", "vol_R", "vol_2R", "ratio"]
        return _dump_csv(header, [[r[k] for k in header] for r in volumes]), EXIT_OK
    d = space.center_distances(origin)
    horizontal = []
    for x in (0.25, 0.5, 1.0):
        k = node_at(space, (x, 0.0))
        horizontal.append({"x": float(space.coords[k, 0]), "d": float(d[k])})
    dil = [dilation_check(space, origin, (0.2, 0.012), 2.0), dilation_check(space, origin, (0.1, 0.0108), 3.0)]
    return {"volumes": volumes, "horizontal": horizontal, "dilation": dil, "mesh": space.mesh}, EXIT_OK


def cmd_subelliptic(args) -> tuple[dict, int]:
    params = SubellipticParams(args.p, args.sigma, args.s, K=args.K, N=args.bign, nu=args.nu)
    space, field = _subunit_space(args, "grushin")
    xy = _floats(args.center) if args.center is not None else [0.0, 0.0]
    if len(xy) != 2:
        raise InputError("subelliptic center needs two coordinates")
    R = _positive("radius", args.radius)
    ball = Ball(node_at(space, xy), R)
    family = build_accumulating_family(space, field, ball, params.nu, args.J)
    cert = subelliptic_chain_certify(space, field, ball, params, family)
    out = cert.to_dict()
    out.update({"field": field.kind, "center": space.coords[ball.center].tolist(), "R": R})
    return out, EXIT_OK if cert.passed else EXIT_FAIL


COMMANDS = {
    "constants": cmd_constants,
    "doubling": cmd_doubling,
    "chain": cmd_chain,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "cutoff-check": cmd_cutoff_check,
    "grushin": cmd_grushin,
    "subelliptic": cmd_subelliptic,
}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, *, space: bool = True, ball: bool = True, sobolev: bool = True) -> None:
    p.add_argument("--config", help="JSON file whose keys mirror the long flags")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    if space:
        p.add_argument("--space", help="weight family (e.g. power:alpha=1) or a points CSV")
        p.add_argument("--edges", help="edges CSV (a,b,cost) for a graph space")
        p.add_argument("--dim", type=int, choices=(1, 2))
        p.add_argument("--domain", help="lo:hi[,lo:hi]; default covers 2.5 * radius around the centers")
        p.add_argument("--grid", help="points per axis, one value or one per axis")
    if ball:
        p.add_argument("--center", help="comma-separated coordinates")
        p.add_argument("--center-id", help="point id for CSV spaces")
        p.add_argument("--radius", type=float)
        p.add_argument("--J", type=int)
    if sobolev:
        p.add_argument("--p", type=float, default=2.0)
        p.add_argument("--sigma", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sobdub", description="Doubling certificates from weak Sobolev inequalities.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("constants", help="series sum, K1 and doubling constants")
    _common(p, space=False, ball=False)
    p.add_argument("--cs", type=float, help="Sobolev constant C_S")
    p.add_argument("--s", type=float, help="gradient integrability s (subelliptic bound)")
    p.add_argument("--K", type=float, default=1.0)
    p.add_argument("--bign", type=float, default=2.0)

    p = sub.add_parser("doubling", help="mu(2B) / mu(B) for one ball")
    _common(p, sobolev=False)

    p = sub.add_parser("chain", help="chain constant, certificate and theorem bound for one ball")
    _common(p)

    p = sub.add_parser("estimate", help="optimizer lower bound on the Sobolev constant of one ball")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--include-phi", action="store_true")

    p = sub.add_parser("sweep", help="chain over several centers and radii")
    _common(p, ball=False)
    p.add_argument("--center", action="append", help="repeat for several centers")
    p.add_argument("--center-id", default=None, help=argparse.SUPPRESS)
    p.add_argument("--radii", required=False, default=None, help="a:b:n or a comma list")
    p.add_argument("--J", type=int)

    p = sub.add_parser("cutoff-check", help="verify the cutoff family of one ball")
    _common(p)

    for name, text in (("grushin", "subunit ball volumes and metric checks"), ("subelliptic", "subelliptic doubling certificate")):
        p = sub.add_parser(name, help=text)
        _common(p, space=False, ball=False, sobolev=name == "subelliptic")
        p.add_argument("--q", choices=("grushin", "identity"))
        p.add_argument("--grid", help="points per axis")
        p.add_argument("--domain", help="xlo:xhi,ylo:yhi")
        p.add_argument("--stencil", type=int)
        if name == "grushin":
            p.add_argument("--radii", default="0.2,0.35,0.5")
        else:
            p.add_argument("--center", help="x,y (default origin)")
            p.add_argument("--radius", type=float, default=0.15)
            p.add_argument("--s", type=float, default=8.0)
            p.add_argument("--K", type=float, default=1.0)
            p.add_argument("--bign", type=float, default=2.0)
            p.add_argument("--nu", type=float, default=0.5)
            p.add_argument("--J", type=int)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config!r}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items() if k != "command"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    # config values are defaults; explicit flags still win
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        payload, status = COMMANDS[args.command](args)
        if isinstance(payload, str):
            text = payload
        elif args.format == "csv":
            text = _rows_csv(payload)
        else:
            text = _dump_json(payload)
        _emit(text, args.out)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InputError, ValueError, KeyError, OSError) as exc:
        # DivergentIteration and EmptyBallError are ValueErrors too
        print(f"sobdub: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return status


if __name__ == "__main__":
    sys.exit(main())
