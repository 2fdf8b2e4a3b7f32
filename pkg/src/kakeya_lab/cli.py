"""Command line interface.

Every command writes ``<name>.json`` (resolved config, tool version and
results) and any CSV data into ``--out`` when given, and prints the report
to stdout otherwise. Exit codes: 0 success, 1 a checked condition failed,
2 usage or input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .measure import (
    OccupancyGrid, axis_lines, box_count, compression_family, curved_maximal, direction_lines,
    direction_net, geodesic_lines, kakeya_maximal, lp_scaling_fit, nikodym_coverage,
    nikodym_maximal, rasterize_tubes, straight_family, straight_lattice_family,
)
from .phase_analysis import (
    DegeneratePhaseError, check_bourgain, check_h1, check_h2, check_straight_condition,
    check_translation_invariant, sample_points, trace_curve,
)
from .phase_expr import DomainError, ParseError, PhasePoint, load_phase_spec
from .phase_straighten import StraighteningError, straighten
from .space_forms import Geodesic, GeometryError, Kind, SpaceForm, integrate_geodesic, write_point_cloud
from .straighten_geo import (
    LineSpaceElement, bilipschitz_scan, chart_for, collinearity_residual,
    line_space_map, projective_nikodym_to_kakeya,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# stages whose rejection means the phase fails a hypothesis rather than a numerical breakdown
CONDITION_STAGES = {"precondition", "extract_c", "extract_A"}

CONDITIONS = ("h1", "h2", "translation", "bourgain", "straight")


class UsageError(ValueError):
    pass


# ------------------------------------------------------------------ parsing helpers


def float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def point_list(text: str) -> np.ndarray:
    """Points as "a,b;c,d"."""
    try:
        return np.array([[float(v) for v in p.split(",")] for p in text.split(";") if p.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected points like '0,0;0.1,0.2', got {text!r}") from None


def probe_list(text: str) -> list[tuple[float, list[float]]]:
    """Probe points as "t:y1,y2;t:y1,y2"."""
    out = []
    try:
        for item in text.split(";"):
            if item.strip():
                t, _, y = item.partition(":")
                out.append((float(t), [float(v) for v in y.split(",") if v.strip()]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected probes like '0.1:0,0', got {text!r}") from None
    return out


def tol_pair(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"--tol expects NAME=VALUE, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--tol value is not a number: {value!r}") from None


def _tol(args, name: str, default: float) -> float:
    return dict(args.tol or []).get(name, default)


def read_csv_points(path) -> np.ndarray:
    """Numeric CSV with an optional header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric CSV entry ({exc})") from None


def read_grid_or_cloud(path):
    """A grid JSON file, or a CSV point cloud."""
    text = Path(path).read_text()
    try:
        json.loads(text)
    except json.JSONDecodeError:
        return read_csv_points(path)
    try:
        return OccupancyGrid.from_json(path)
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a grid file ({exc})") from None


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else repr(float(v)) for v in r])


# ------------------------------------------------------------------ reporting


class Run:
    """Collects the report and data files of one invocation."""

    def __init__(self, name: str, args):
        self.name = name
        self.out: Optional[Path] = Path(args.out) if args.out else None
        self.config = {"command": name, "version": __version__, **_config_of(args)}
        self.files: list[str] = []
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def path(self, filename: str) -> Optional[Path]:
        if self.out is None:
            return None
        self.files.append(filename)
        return self.out / filename

    def finish(self, results: dict, passed: bool = True) -> int:
        report = {"tool": "kakeya-lab", "version": __version__, "config": self.config,
                  "pass": bool(passed), "results": _jsonable(results), "files": self.files}
        text = json.dumps(report, indent=2, sort_keys=True)
        if self.out is None:
            print(text)
        else:
            (self.out / f"{self.name}.json").write_text(text + "\n")
            print(f"{self.name}: {'pass' if passed else 'FAIL'} -> {self.out / (self.name + '.json')}")
        return EXIT_OK if passed else EXIT_FAIL


def _config_of(args) -> dict:
    skip = {"func", "out"}
    cfg = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if k == "tol":
            v = dict(v or [])
        cfg[k] = _jsonable(v)
    return cfg


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, Path):
        return str(v)
    return v


# ------------------------------------------------------------------ geo


def _curved_space(args) -> SpaceForm:
    if args.model == "euclidean":
        raise UsageError("this command needs --model sphere or --model hyperbolic")
    return SpaceForm(Kind(args.model), args.dim)


def cmd_geo_straighten(args) -> int:
    run = Run("geo_straighten", args)
    space = _curved_space(args)
    chart = chart_for(space)
    rng = np.random.default_rng(args.seed)
    base = space.random_points(rng, args.n, args.radius)
    dirs = space.random_unit_tangents(rng, base)
    s = np.linspace(-args.length / 2, args.length / 2, args.samples)
    closed, integ, rows = [], [], []
    for i, (p, v) in enumerate(zip(base, dirs)):
        pts = Geodesic(space, p, v)(s)
        img = chart.forward(pts)
        closed.append(collinearity_residual(img))
        if args.integrator:
            integ.append(collinearity_residual(chart.forward(integrate_geodesic(space, p, v, s))))
        rows += [[str(i), sv] + list(x) for sv, x in zip(s, img)]
    tol_c = _tol(args, "residual", 1e-10)
    tol_i = _tol(args, "integrator", 1e-7)
    res = {"residual_max": max(closed), "n_geodesics": args.n, "tol": tol_c}
    passed = res["residual_max"] < tol_c
    if args.integrator:
        res.update(integrator_residual_max=max(integ), integrator_tol=tol_i)
        passed = passed and max(integ) < tol_i
    if (p := run.path("polylines.csv")) is not None:
        _write_rows(p, ["geodesic", "s"] + [f"u{j + 1}" for j in range(space.d)], rows)
    return run.finish(res, passed)


def cmd_geo_check_lines(args) -> int:
    run = Run("geo_check_lines", args)
    space = _curved_space(args)
    chart = chart_for(space)
    pts = read_csv_points(args.input)
    if pts.shape[1] != space.ambient_dim:
        raise UsageError(f"expected {space.ambient_dim} ambient coordinates per row")
    space.check_point(pts)
    img = chart.forward(pts)
    r = collinearity_residual(img)
    tol = _tol(args, "residual", 1e-10)
    if (p := run.path("images.csv")) is not None:
        write_point_cloud(p, img, [f"u{j + 1}" for j in range(space.d)])
    return run.finish({"residual_max": r, "n_points": len(pts), "tol": tol}, r < tol)


def cmd_geo_bilipschitz(args) -> int:
    run = Run("geo_bilipschitz", args)
    rep = bilipschitz_scan(chart_for(_curved_space(args)), args.radius, args.n, args.seed)
    return run.finish(rep.as_dict())


def cmd_nikodym_to_kakeya(args) -> int:
    run = Run("nikodym_to_kakeya", args)
    pts = read_csv_points(args.input) if args.input else args.points
    if pts is None:
        raise UsageError("give --input CSV or --points")
    img = projective_nikodym_to_kakeya(pts)
    if (p := run.path("mapped.csv")) is not None:
        write_point_cloud(p, img)
    return run.finish({"n_points": len(pts), "points": pts, "images": img})


def cmd_linespace_map(args) -> int:
    run = Run("linespace_map", args)
    space = _curved_space(args)
    if space.d != 2:
        raise UsageError("linespace map is defined for --dim 2")
    gamma0 = Geodesic.through(space, space.center, space.tangent_basis(space.center)[0])
    rows = []
    for z in args.z:
        for e in args.e:
            rho, eta = line_space_map(space, gamma0, LineSpaceElement(z, e))
            rows.append([z, e, rho, eta])
    if (p := run.path("linespace.csv")) is not None:
        _write_rows(p, ["z", "e", "rho", "eta"], rows)
    return run.finish({"rows": rows, "columns": ["z", "e", "rho", "eta"]})


# ------------------------------------------------------------------ phase


def _phase(args):
    if not args.spec:
        raise UsageError("--spec PATH is required")
    return load_phase_spec(args.spec)


def cmd_phase_check(args) -> int:
    run = Run("phase_check", args)
    phi = _phase(args)
    names = [c.strip() for c in args.conditions.split(",") if c.strip()]
    bad = [c for c in names if c not in CONDITIONS]
    if bad:
        raise UsageError(f"unknown condition(s) {bad}; choose from {list(CONDITIONS)}")
    if args.at:
        k = phi.d - 1
        if any(len(y) != k for _, y in args.at):
            raise UsageError(f"--at needs {k} y-coordinates per probe")
        samples = PhasePoint(np.zeros((len(args.at), k)), np.array([t for t, _ in args.at]),
                             np.array([y for _, y in args.at]))
    else:
        samples = sample_points(phi, args.n_samples, seed=args.seed)
    reports = {}
    for c in names:
        if c == "h1":
            rep = check_h1(phi, samples, _tol(args, "h1", 1e-6))
        elif c == "h2":
            y0 = np.zeros(phi.d - 1)
            pts = samples.with_y(np.broadcast_to(y0, samples.y.shape)) if args.at else \
                sample_points(phi, args.n_samples, seed=args.seed, y=y0)
            rep = check_h2(phi, y0, pts, _tol(args, "h2", 1e-8))
        elif c == "translation":
            rep = check_translation_invariant(phi, samples, _tol(args, "translation", 1e-9))
        elif c == "bourgain":
            rep = check_bourgain(phi, samples, _tol(args, "bourgain", 1e-8), mode=args.mode)
        else:
            rep = check_straight_condition(phi, samples, _tol(args, "straight", 1e-8))
        reports[c] = rep
        if (p := run.path(f"{c}.csv")) is not None:
            _write_rows(p, ["sample", "residual"], [[str(i), r] for i, r in enumerate(rep.residuals)])
    passed = all(r.passed for r in reports.values())
    return run.finish({"phase": phi.to_spec(), "conditions": {k: r.to_dict() for k, r in reports.items()}},
                      passed)


def cmd_phase_straighten(args) -> int:
    run = Run("phase_straighten", args)
    phi = _phase(args)
    try:
        res = straighten(phi, args.t_max, args.step, tol=_tol(args, "verify", 1e-6))
    except StraighteningError as exc:
        run.finish({"phase": phi.to_spec(), "stage": exc.stage, "error": exc.message}, False)
        return EXIT_FAIL if exc.stage in CONDITION_STAGES else EXIT_NUMERIC
    a = res.alpha
    if (p := run.path("alpha.csv")) is not None:
        _write_rows(p, ["t", "alpha", "dalpha"], zip(a.t, a.alpha, a.dalpha))
    if (p := run.path("profiles.csv")) is not None:
        k = res.B.values.shape[1]
        _write_rows(p, ["t", "c"] + [f"A{i + 1}" for i in range(k)] + [f"B{i + 1}" for i in range(k)],
                    (np.concatenate([[t, cv], av, bv])
                     for t, cv, av, bv in zip(res.c.t, res.c.values, res.A.values, res.B.values)))
    if (p := run.path("hqf.csv")) is not None:
        res.hqf.write_csv(p)
    return run.finish(res.to_dict(), res.passed)


def cmd_phase_curves(args) -> int:
    run = Run("phase_curves", args)
    phi = _phase(args)
    k = phi.d - 1
    ys = args.y if args.y is not None else np.zeros((1, k))
    oms = args.omega if args.omega is not None else np.zeros((len(ys), k))
    if ys.shape[1] != k or oms.shape != ys.shape:
        raise UsageError(f"--y and --omega need matching rows of {k} coordinates")
    t = np.linspace(-args.t_max, args.t_max, args.samples)
    rows, summary = [], []
    for i, (y, w) in enumerate(zip(ys, oms)):
        tr = trace_curve(phi, y, PhasePoint(w, 0.0, y), t)
        summary.append({"y": y, "omega": w, "complete": tr.complete, "method": tr.method,
                        "message": tr.message, "collinearity": collinearity_residual(tr.points)
                        if tr.complete else None})
        rows += [[str(i)] + list(pt) for pt in tr.points]
    if (p := run.path("curves.csv")) is not None:
        _write_rows(p, ["curve"] + [f"x{j + 1}" for j in range(k)] + ["t"], rows)
    ok = all(s["complete"] for s in summary)
    run.finish({"phase": phi.to_spec(), "curves": summary}, ok)
    return EXIT_OK if ok else EXIT_NUMERIC


# ------------------------------------------------------------------ sets and measures


def _delta(args) -> float:
    if not args.delta:
        raise UsageError("--delta is required")
    return args.delta[0]


def cmd_set_build(args) -> int:
    run = Run("set_build", args)
    delta = _delta(args)
    if args.family == "compression":
        fam = compression_family(delta, n_y=args.ny)
    elif args.family == "straight":
        fam = straight_lattice_family(delta, args.seed, n_y=args.ny)
    else:
        if args.centers is None or args.directions is None:
            raise UsageError("--family lines needs --centers and --directions")
        fam = straight_family(args.centers, args.directions, delta)
    grid = rasterize_tubes(fam, args.box, args.grid, mode=args.mode)
    if (p := run.path("set.json")) is not None:
        grid.to_json(p)
    return run.finish({"n_tubes": len(fam), "provenance": fam.provenance, "occupied": grid.count,
                       "cell": grid.cell, "coarse_warning": bool(grid.meta.get("coarse_warning"))})


def cmd_dim_boxcount(args) -> int:
    run = Run("dim_boxcount", args)
    src = read_grid_or_cloud(args.input)
    ks = range(args.kmin, args.kmax + 1)
    rep = box_count(src, ks, L=None if isinstance(src, OccupancyGrid) else args.box)
    if (p := run.path("boxcount.csv")) is not None:
        _write_rows(p, ["k", "scale", "count"], zip(rep.ks, rep.scales, rep.counts))
    return run.finish(rep.to_dict())


def _test_function(args, delta: float) -> OccupancyGrid:
    if args.input:
        g = read_grid_or_cloud(args.input)
        if not isinstance(g, OccupancyGrid):
            raise UsageError("maximal scan needs a grid file as --input")
        return OccupancyGrid(g.L, g.n, g.data.astype(float))
    fn = {
        "ones": lambda c: np.ones(c.shape[:-1]),
        "ball": lambda c: (np.linalg.norm(c, axis=-1) < delta).astype(float),
        "slab": lambda c: (np.abs(c[..., -1]) <= 0.5).astype(float),
    }[args.f]
    return OccupancyGrid.from_function(args.box, args.grid, args.dim, fn)


def cmd_maximal_scan(args) -> int:
    run = Run("maximal_scan", args)
    if not args.delta:
        raise UsageError("--delta is required")
    scans = []
    for delta in args.delta:
        f = _test_function(args, delta)
        net = direction_net(f.d, args.net or delta)
        if args.kind == "kakeya":
            r = kakeya_maximal(f, delta, net)
        elif args.kind == "nikodym":
            pos = args.positions if args.positions is not None else np.zeros((1, f.d))
            r = nikodym_maximal(f, delta, pos, net, model=args.model)
        else:
            phi = _phase(args)
            ys = args.y if args.y is not None else np.zeros((1, phi.d - 1))
            r = curved_maximal(phi, f, delta, ys)
        scans.append(r)
        if (p := run.path(f"scan_delta{len(scans)}.csv")) is not None:
            r.to_csv(p)
    res = {"scans": [{"delta": s.delta, "sup": s.sup, "sup_index": s.sup_index,
                      "witness": s.witnesses[s.sup_index], f"L{args.q:g}": s.lp_norm(args.q)}
                     for s in scans]}
    if len(scans) >= 3:
        res["scaling"] = lp_scaling_fit(scans, args.q).to_dict()
    return run.finish(res)


def cmd_nikodym_coverage(args) -> int:
    run = Run("nikodym_coverage", args)
    g = read_grid_or_cloud(args.input)
    if not isinstance(g, OccupancyGrid):
        raise UsageError("nikodym coverage needs a grid file as --input")
    if args.positions is not None:
        pts = args.positions
    else:
        ax = np.linspace(-g.L, g.L, args.n_points + 2)[1:-1]
        pts = np.stack(np.meshgrid(*[ax] * g.d, indexing="ij"), -1).reshape(-1, g.d)
    if args.family == "axis":
        fam = axis_lines
    elif args.model == "euclidean":
        fam = direction_lines(direction_net(g.d, args.net))
    else:
        fam = geodesic_lines(args.model, direction_net(g.d, args.net))
    rep = nikodym_coverage(g, pts, fam, args.lam)
    if (p := run.path("coverage.csv")) is not None:
        _write_rows(p, [f"x{j + 1}" for j in range(g.d)] + ["fraction", "covered"],
                    (list(x) + [fr, str(int(c))] for x, fr, c in zip(pts, rep.fractions, rep.covered)))
    out = rep.to_dict()
    return run.finish({k: out[k] for k in ("lambda", "n_points", "n_covered", "covered_fraction")})


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: print report to stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=tol_pair, action="append", metavar="NAME=VALUE")
    p.add_argument("--threads", type=int, help="cap on worker threads (env KAKEYA_LAB_THREADS)")


def _model(p, default="sphere"):
    p.add_argument("--model", choices=["euclidean", "sphere", "hyperbolic"], default=default)
    p.add_argument("--dim", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kakeya-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"kakeya-lab {__version__}")
    top = ap.add_subparsers(dest="group", required=True)

    def group(name, help_):
        g = top.add_parser(name, help=help_)
        return g.add_subparsers(dest="action", required=True)

    def leaf(parent, name, func, help_):
        p = parent.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=func)
        return p

    geo = group("geo", "geodesic straightening charts")
    p = leaf(geo, "straighten", cmd_geo_straighten, "seeded geodesics through the chart")
    _model(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--length", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=33)
    p.add_argument("--integrator", action="store_true", help="also check RK4 geodesic samples")
    p = leaf(geo, "check-lines", cmd_geo_check_lines, "collinearity of chart images of points")
    _model(p)
    p.add_argument("--input", required=True, help="CSV of ambient points")
    p = leaf(geo, "bilipschitz", cmd_geo_bilipschitz, "distance-ratio scan of the chart")
    _model(p)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--n", type=int, default=1000)

    p = top.add_parser("nikodym-to-kakeya", help="projective map on {x_d > 0}")
    _common(p)
    p.set_defaults(func=cmd_nikodym_to_kakeya)
    p.add_argument("--input", help="CSV of points")
    p.add_argument("--points", type=point_list)

    ph = group("phase", "phase function tools")
    for name, func, help_ in (("check", cmd_phase_check, "condition checkers"),
                              ("straighten", cmd_phase_straighten, "straightening pipeline"),
                              ("curves", cmd_phase_curves, "trace Kakeya curves")):
        p = leaf(ph, name, func, help_)
        p.add_argument("--spec", help="phase spec JSON")
    pc = ph.choices["check"]
    pc.add_argument("--conditions", default=",".join(CONDITIONS))
    pc.add_argument("--mode", choices=["frozen", "field"], default="frozen")
    pc.add_argument("--n-samples", type=int, default=5)
    pc.add_argument("--at", type=probe_list, help="probe points 't:y1,y2;...' at x = 0 "
                    "instead of the sample lattice")
    ps = ph.choices["straighten"]
    ps.add_argument("--t-max", type=float, default=0.1)
    ps.add_argument("--step", type=float, default=1e-3)
    pv = ph.choices["curves"]
    pv.add_argument("--y", type=point_list, help="frequencies as 'a,b;c,d'")
    pv.add_argument("--omega", type=point_list, help="base points x at t = 0, one per y")
    pv.add_argument("--t-max", type=float, default=0.25)
    pv.add_argument("--samples", type=int, default=41)

    st = group("set", "tube-union sets")
    p = leaf(st, "build", cmd_set_build, "rasterize a tube family")
    p.add_argument("--family", choices=["compression", "straight", "lines"], default="compression")
    p.add_argument("--delta", type=float_list)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--box", type=float, default=0.5)
    p.add_argument("--ny", type=int, default=64)
    p.add_argument("--mode", choices=["center", "corner"], default="center")
    p.add_argument("--centers", type=point_list)
    p.add_argument("--directions", type=point_list)

    dm = group("dim", "dimension estimates")
    p = leaf(dm, "boxcount", cmd_dim_boxcount, "dyadic box counting")
    p.add_argument("--input", required=True, help="grid JSON or CSV point cloud")
    p.add_argument("--kmin", type=int, default=4)
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--box", type=float, default=1.0, help="half-width for point clouds")

    mx = group("maximal", "maximal functions")
    p = leaf(mx, "scan", cmd_maximal_scan, "Kakeya, Nikodym or curved maximal scan")
    p.add_argument("--kind", choices=["kakeya", "nikodym", "curved"], default="kakeya")
    _model(p, "euclidean")
    p.add_argument("--input", help="grid JSON holding f (default: --f)")
    p.add_argument("--f", choices=["ones", "ball", "slab"], default="ones")
    p.add_argument("--delta", type=float_list)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--box", type=float, default=1.0)
    p.add_argument("--net", type=float, help="direction net spacing (default: delta)")
    p.add_argument("--positions", type=point_list)
    p.add_argument("--spec", help="phase spec JSON for --kind curved")
    p.add_argument("--y", type=point_list)
    p.add_argument("--q", type=float, default=2.0)

    nk = group("nikodym", "Nikodym sets")
    p = leaf(nk, "coverage", cmd_nikodym_coverage, "covered base points")
    _model(p, "euclidean")
    p.add_argument("--input", required=True, help="grid JSON of Omega")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--family", choices=["axis", "directions"], default="axis")
    p.add_argument("--net", type=float, default=0.1)
    p.add_argument("--positions", type=point_list)
    p.add_argument("--n-points", type=int, default=16)

    ls = group("linespace", "line-space model")
    p = leaf(ls, "map", cmd_linespace_map, "(z, e) -> (rho, eta)")
    _model(p)
    p.add_argument("--z", type=float_list, default=[0.0])
    p.add_argument("--e", type=float_list, default=[0.5])
    return ap


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        env = os.environ.get("KAKEYA_LAB_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"KAKEYA_LAB_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be positive")
    import numba
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (UsageError, ParseError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, DegeneratePhaseError, DomainError, StraighteningError,
            FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


run = main

if __name__ == "__main__":
    sys.exit(main())
