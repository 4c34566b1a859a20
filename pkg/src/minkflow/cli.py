"""Command-line front end.

Configuration is a flat text file of ``section.key = value`` lines; any key may
be overridden with ``--set section.key=value`` or the shortcut flags. Unknown
keys are rejected.

Exit codes: 0 success, 2 configuration or input error, 3 flow diverged,
4 flow timed out, 5 measure not spread, 6 variational solver hit max_iters.
"""

from __future__ import annotations

import argparse
import ast
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .dual_measure import (
    measure_density_grid,
    measure_of_polygon,
    total_mass,
    verify_variational_formula,
    weak_convergence_study,
)
from .errors import MaxIters, MinkowskiError, NotSpread
from .flow_solver import (
    FlowConfig,
    FlowStatus,
    check_admissibility,
    run_flow,
    uniqueness_harness,
)
from .gauss_integrals import Exponents, quermassintegral
from .sphere_geom import GridFunction, certify_convex, grid_angles
from .variational_solver import VariationalConfig, solve_variational

log = logging.getLogger("minkflow")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TIMEOUT, EXIT_NOT_SPREAD, EXIT_MAX_ITERS = 0, 2, 3, 4, 5, 6


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


# key -> (parser, default)
SCHEMA = {
    "problem.p": (float, 2.0),
    "problem.q": (float, 1.0),
    "problem.f": (str, "exp(-0.5)"),
    "problem.f_file": (str, ""),
    "problem.n": (int, 256),
    "flow.initial_radius": (float, 1.0),
    "flow.initial_file": (str, ""),
    "flow.dt_safety": (float, 0.25),
    "flow.residual_tol": (float, 1e-7),
    "flow.max_time": (float, 200.0),
    "flow.max_steps": (int, 2_000_000),
    "flow.h_cap": (float, 50.0),
    "flow.snapshot_stride": (int, 500),
    "variational.atoms": (str, ""),
    "variational.n_grid": (int, 64),
    "variational.step_init": (float, 0.5),
    "variational.grad_eps": (float, 1e-6),
    "variational.el_tol": (float, 1e-6),
    "variational.max_iters": (int, 500),
    "variational.gradient": (str, "fd"),
    "variational.prune_off_atom": (_bool, True),
    "measure.body": (str, ""),
    "measure.kind": (str, "auto"),
    "sweep.p": (_float_list, [2.0]),
    "sweep.q": (_float_list, [1.0]),
    "output.dir": (str, "out"),
    "log.level": (str, "WARNING"),
}

_POSITIVE = {
    "problem.n", "flow.dt_safety", "flow.residual_tol", "flow.max_time", "flow.max_steps",
    "flow.h_cap", "flow.snapshot_stride", "flow.initial_radius", "variational.n_grid",
    "variational.step_init", "variational.grad_eps", "variational.el_tol",
    "variational.max_iters",
}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected 'section.key = value'")
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        raw[key] = value.strip()
    return raw


def build_config(path: str | None, overrides: dict[str, str]) -> dict:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        raw.update(parse_config_text(text, path))
    for key in overrides:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
    raw.update(overrides)
    cfg = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        else:
            cfg[key] = default
    for key in _POSITIVE:
        if not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive")
    for key in ("problem.p", "problem.q"):
        if not math.isfinite(cfg[key]):
            raise ConfigError(f"{key} must be finite")
    return cfg


_FUNCS = {"cos": np.cos, "sin": np.sin, "exp": np.exp}
_THETA = {"theta", "t", "θ"}


def _frequency(node) -> int:
    """Integer k of an argument of the form theta, k*theta or theta*k."""
    if isinstance(node, ast.Name) and node.id in _THETA:
        return 1
    if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Mult):
        for a, b in ((node.left, node.right), (node.right, node.left)):
            if isinstance(a, ast.Constant) and isinstance(b, ast.Name) and b.id in _THETA:
                k = a.value
                if isinstance(k, int) and not isinstance(k, bool):
                    return k
                if isinstance(k, float) and k.is_integer():
                    return int(k)
    raise ConfigError("cos/sin take an argument k*theta with integer k")


def eval_expression(expr: str, theta: np.ndarray) -> np.ndarray:
    """Evaluate an f-expression: numbers, theta, + - * /, exp(.), cos(k theta), sin(k theta)."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse f = {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return np.full_like(theta, float(node.value))
        if isinstance(node, ast.Name) and node.id in _THETA:
            return theta.copy()
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
            a, b = ev(node.left), ev(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            return a / b
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            if node.func.id == "exp":
                return np.exp(ev(node.args[0]))
            return _FUNCS[node.func.id](_frequency(node.args[0]) * theta)
        raise ConfigError(f"unsupported construct in f = {expr!r}: {ast.dump(node)[:40]}")

    return ev(tree)


def _exps(cfg) -> Exponents:
    return Exponents(cfg["problem.p"], cfg["problem.q"])


def _load_f(cfg) -> GridFunction:
    if cfg["problem.f_file"]:
        return io.read_grid_function(cfg["problem.f_file"])
    n = cfg["problem.n"]
    vals = eval_expression(cfg["problem.f"], grid_angles(n))
    return GridFunction(np.broadcast_to(vals, (n,)).copy())


def _flow_config(cfg, exps, f) -> FlowConfig:
    if cfg["flow.initial_file"]:
        initial = certify_convex(io.read_grid_function(cfg["flow.initial_file"]))
    else:
        initial = certify_convex(GridFunction.constant(cfg["flow.initial_radius"], f.n_points))
    return FlowConfig(
        exps=exps, f=f, initial=initial, dt_safety=cfg["flow.dt_safety"],
        residual_tol=cfg["flow.residual_tol"], max_time=cfg["flow.max_time"],
        max_steps=cfg["flow.max_steps"], h_cap=cfg["flow.h_cap"],
        snapshot_stride=cfg["flow.snapshot_stride"],
    )


_STATUS_EXIT = {FlowStatus.CONVERGED: EXIT_OK, FlowStatus.DIVERGED: EXIT_DIVERGED,
                FlowStatus.TIMEOUT: EXIT_TIMEOUT}


def _run_flow_to_dir(cfg, exps, f, out: Path) -> tuple[int, dict]:
    fcfg = _flow_config(cfg, exps, f)
    lo, hi, ok = check_admissibility(f, exps)
    t0 = time.perf_counter()
    result = run_flow(fcfg)
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    io.write_grid_function(out / "body.csv", result.trace.snapshots[-1], "h")
    io.write_trace(out / "trace.csv", result.trace)
    for step, snap in zip(result.trace.steps, result.trace.snapshots):
        io.write_grid_function(out / "snapshots" / f"h_{step:08d}.csv", snap, "h")
    summary = {
        "status": result.status.value,
        "final_time": result.final_time,
        "final_residual": result.final_residual,
        "phi_descent_violations": result.trace.descent_violations(),
        "accepted_steps": result.trace.accepted_steps,
        "rejected_steps": result.trace.rejected_steps,
        "admissible_interval": f"({_fmt_bound(lo)}, {_fmt_bound(hi)})",
        "f_admissible": ok,
        "diagnostic": result.diagnostic,
    }
    io.write_report(out / "summary.txt", summary)
    summary["wall_time"] = wall
    return _STATUS_EXIT[result.status], summary


def _fmt_bound(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:g}"


def cmd_solve_flow(cfg) -> int:
    exps = _exps(cfg)
    exps.require_planar()
    f = _load_f(cfg)
    code, summary = _run_flow_to_dir(cfg, exps, f, Path(cfg["output.dir"]))
    print(f"status {summary['status']}  residual {summary['final_residual']:.3g}  "
          f"t {summary['final_time']:.6g}  phi violations {summary['phi_descent_violations']}  "
          f"wall {summary['wall_time']:.2f}s")
    print(f"admissible interval for f: {summary['admissible_interval']}"
          f"{'' if summary['f_admissible'] else '  (f lies outside it)'}")
    return code


def cmd_solve_variational(cfg) -> int:
    if not cfg["variational.atoms"]:
        raise ConfigError("variational.atoms is required")
    mu = io.read_atoms(cfg["variational.atoms"], even=True)
    vcfg = VariationalConfig(
        exps=_exps(cfg), mu=mu, n_grid=cfg["variational.n_grid"],
        step_init=cfg["variational.step_init"], grad_eps=cfg["variational.grad_eps"],
        el_tol=cfg["variational.el_tol"], max_iters=cfg["variational.max_iters"],
        gradient=cfg["variational.gradient"], prune_off_atom=cfg["variational.prune_off_atom"],
    )
    out = Path(cfg["output.dir"])
    code = EXIT_OK
    try:
        Q, report = solve_variational(vcfg)
    except MaxIters as exc:
        Q, report, code = exc.best, exc.report, EXIT_MAX_ITERS
        print(f"max_iters reached: {exc}")
    io.write_polygon(out / "polygon.csv", Q)
    io.write_report(out / "report.txt", {
        "iterations": report.iterations,
        "phi": report.phi,
        "el_residual": report.el_residual,
        "converged": report.converged,
    })
    print(f"iterations {report.iterations}  phi {report.phi:.12g}  "
          f"el_residual {report.el_residual:.3g}")
    return code


def _detect_kind(path: str) -> str:
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                head = line.split(",")[0].strip().lower()
                return "grid" if head == "theta" else "polygon"
    raise ConfigError(f"{path}: empty body file")


def cmd_measure(cfg) -> int:
    path = cfg["measure.body"]
    if not path:
        raise ConfigError("measure.body is required")
    exps = _exps(cfg)
    kind = cfg["measure.kind"]
    if kind == "auto":
        kind = _detect_kind(path)
    out = Path(cfg["output.dir"])
    if kind == "polygon":
        K = io.read_polygon(path)
        mu = measure_of_polygon(K, exps)
        io.write_atoms(out / "atoms.csv", mu)
    elif kind == "grid":
        K = certify_convex(io.read_grid_function(path))
        mu = measure_density_grid(K, exps)
        io.write_density(out / "density.csv", mu)
    else:
        raise ConfigError(f"measure.kind must be auto, polygon or grid, got {kind!r}")
    mass, quer = total_mass(mu), quermassintegral(K, exps.q)
    io.write_report(out / "measure.txt", {"kind": kind, "total_mass": mass, "quermassintegral": quer})
    print(f"total mass {mass:.17g}\nquermassintegral {quer:.17g}")
    return EXIT_OK


def _check_variational_formula(cfg):
    exps = _exps(cfg)
    n = cfg["problem.n"]
    K = certify_convex(GridFunction.constant(1.0, n))
    f = GridFunction.constant(1.0, n)
    r1 = verify_variational_formula(K, f, exps, 1e-4)
    r2 = verify_variational_formula(K, f, exps, 5e-5)
    ratio = r1.relative_gap / r2.relative_gap if r2.relative_gap > 0 else math.inf
    return [("variational-formula gap", r1.relative_gap, "< 1e-4", r1.relative_gap < 1e-4),
            ("variational-formula halving ratio", ratio, ">= 3", ratio >= 3.0)]


def _check_weak_convergence(cfg):
    exps = _exps(cfg)
    disk = certify_convex(GridFunction.constant(1.0, cfg["problem.n"]))
    table = weak_convergence_study(disk, [32, 64, 128, 256], lambda th: np.ones_like(th), exps)
    order = min(table.orders)
    return [("weak-convergence order", order, ">= 1.8", order >= 1.8)]


def _check_uniqueness(cfg):
    exps = _exps(cfg)
    n = 128
    f = GridFunction.from_function(lambda t: math.exp(-0.5) * (1 + 0.05 * np.cos(2 * t)), n)
    initials = [
        certify_convex(GridFunction.constant(0.8, n)),
        certify_convex(GridFunction.constant(1.5, n)),
        certify_convex(GridFunction.from_function(lambda t: 1.2 + 0.1 * np.cos(2 * t), n)),
    ]
    rep = uniqueness_harness(f, exps, initials, max_workers=_workers(len(initials)),
                             residual_tol=1e-8)
    return [("uniqueness max distance", rep.max_distance, "< 1e-5",
             rep.passed and rep.max_distance < 1e-5)]


def _check_admissibility(cfg):
    f = GridFunction.constant(0.5, 16)
    cases = [((2.0, 1.0), (0.0, math.inf)), ((1.0, 1.0), (0.0, 1.0)), ((1.0, 3.0), (0.0, 0.0))]
    rows = []
    for (p, q), want in cases:
        lo, hi, _ = check_admissibility(f, Exponents(p, q))
        rows.append((f"admissibility p={p:g} q={q:g}", f"({_fmt_bound(lo)}, {_fmt_bound(hi)})",
                     f"= ({_fmt_bound(want[0])}, {_fmt_bound(want[1])})", (lo, hi) == want))
    return rows


CHECKS = {
    "variational-formula": _check_variational_formula,
    "weak-convergence": _check_weak_convergence,
    "uniqueness": _check_uniqueness,
    "admissibility": _check_admissibility,
}


def cmd_check(cfg, names: list[str]) -> int:
    unknown = [n for n in names if n not in CHECKS and n != "all"]
    if unknown:
        raise ConfigError(f"unknown check {unknown[0]!r}; choose from {', '.join(CHECKS)} or all")
    if "all" in names:
        names = list(CHECKS)
    rows = []
    for name in names:
        rows.extend(CHECKS[name](cfg))
    width = max(len(r[0]) for r in rows)
    for label, measured, tol, ok in rows:
        shown = f"{measured:.3e}" if isinstance(measured, float) else str(measured)
        print(f"{'PASS' if ok else 'FAIL'}  {label:<{width}}  {shown:>14}  {tol}")
    return EXIT_OK if all(r[3] for r in rows) else 1


def _workers(jobs: int) -> int:
    env = os.environ.get("MINKFLOW_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"MINKFLOW_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, jobs))


def cmd_sweep(cfg) -> int:
    f = _load_f(cfg)
    pairs = [(p, q) for p in cfg["sweep.p"] for q in cfg["sweep.q"]]
    if not pairs:
        raise ConfigError("sweep.p and sweep.q must be non-empty")
    root = Path(cfg["output.dir"])

    def job(pq):
        p, q = pq
        return _run_flow_to_dir(cfg, Exponents(p, q), f, root / f"p{p:g}_q{q:g}")

    with ThreadPoolExecutor(max_workers=_workers(len(pairs))) as pool:
        results = list(pool.map(job, pairs))
    for (p, q), (code, summary) in zip(pairs, results):
        print(f"p={p:g} q={q:g}  {summary['status']:<10} residual {summary['final_residual']:.3g}")
    return max(code for code, _ in results)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--p", help="exponent p (problem.p)")
    common.add_argument("--q", help="exponent q (problem.q)")
    common.add_argument("--f", help="f expression over theta (problem.f)")
    common.add_argument("--n", help="grid size (problem.n)")
    common.add_argument("-o", "--out", help="output directory (output.dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="minkflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve-flow", parents=[common], help="run the curvature flow")
    sub.add_parser("solve-variational", parents=[common], help="minimise Phi for an atom file")
    sub.add_parser("measure", parents=[common], help="dual curvature measure of a body file")
    chk = sub.add_parser("check", parents=[common], help="run named numerical checks")
    chk.add_argument("names", nargs="+", metavar="NAME")
    sub.add_parser("sweep", parents=[common], help="solve-flow over a grid of (p, q)")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in (("p", "problem.p"), ("q", "problem.q"), ("f", "problem.f"),
                      ("n", "problem.n"), ("out", "output.dir")):
        if getattr(args, flag) is not None:
            out[key] = getattr(args, flag)
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args.config, _overrides(args))
        level = "INFO" if args.verbose else cfg["log.level"].upper()
        logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "solve-flow":
            return cmd_solve_flow(cfg)
        if args.command == "solve-variational":
            return cmd_solve_variational(cfg)
        if args.command == "measure":
            return cmd_measure(cfg)
        if args.command == "check":
            return cmd_check(cfg, args.names)
        return cmd_sweep(cfg)
    except NotSpread as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_SPREAD
    except (ConfigError, MinkowskiError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
