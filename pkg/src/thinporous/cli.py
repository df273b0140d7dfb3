"""Command-line front end.

    thinporous classify --delta 2 --gamma 1.5
    thinporous cell run.cfg --set geometry.n=32
    thinporous darcy run.cfg
    thinporous pipeline run.cfg
    thinporous validate --tol poiseuille=1e-5

Exit codes: 0 success, 2 validity refusal, 64 usage or bad input,
70 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .cellproblems import (IncompatibleProblemError, PermeabilityTensor, dirichlet_energy,
                           heleshaw_energy, permeability, profile_integral,
                           reduced3d_crosscheck, solve_heleshaw_cell)
from .config import ConfigError, RunConfig, describe_schema, dumps, load_config
from .darcy import (DarcyError, MacroDomain, manufactured_force, scale_back, solve_darcy)
from .grid import (GeometryError, ObstacleShape, StaggeredField2D, build_geometry,
                   discrete_div, discrete_grad, inner, write_field_csv)
from .linsolve import SingularMatrixError, SolverConfig, SolverError
from .regimes import (Regime, RegimeError, RegimeParams, ValidityError, classify,
                      exponent_report)

log = logging.getLogger("thinporous")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_USAGE = 64
EXIT_SOLVER = 70


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _number(text: str):
    """Exact rational for decimal or a/b input, so delta == 1 is an exact test."""
    try:
        q = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    return int(q) if q.denominator == 1 else q


def _exact(x):
    # config values arrive as floats; their shortest repr is what the user typed
    if x is None:
        return None
    return _number(repr(float(x)))


# ---------------------------------------------------------------------------
# config -> objects


def solver_config(cfg: RunConfig) -> SolverConfig:
    pre = cfg["solver.precond"]
    return SolverConfig(cfg["solver.rel_tol"], cfg["solver.max_iter"],
                        precond=None if pre == "none" else pre)


def obstacle_from_config(cfg: RunConfig) -> ObstacleShape:
    c = (cfg["geometry.cx"], cfg["geometry.cy"])
    kind = cfg["geometry.shape"]
    if kind == "none":
        return ObstacleShape.none()
    if kind == "disk":
        return ObstacleShape.disk(cfg["geometry.radius"], c)
    if kind == "ellipse":
        return ObstacleShape.ellipse(cfg["geometry.a"], cfg["geometry.b"],
                                     math.radians(cfg["geometry.rotation_deg"]), c)
    return ObstacleShape.rectangle(cfg["geometry.hx"], cfg["geometry.hy"], c)


def geometry_from_config(cfg: RunConfig, regime: Regime):
    nz = cfg["geometry.nz"] if regime is Regime.PTPM else None
    return build_geometry(obstacle_from_config(cfg), cfg["geometry.n"], nz)


def params_from_config(cfg: RunConfig, need_gamma=True, need_epsilon=False) -> RegimeParams:
    d, g, e = cfg["regime.delta"], cfg["regime.gamma"], cfg["regime.epsilon"]
    if d is None:
        raise ConfigError("regime.delta is required")
    if need_gamma and g is None:
        raise ConfigError("regime.gamma is required")
    if need_epsilon and e is None:
        raise ConfigError("regime.epsilon is required")
    return RegimeParams(_exact(e) if e is not None else None, _exact(d),
                        _exact(g) if g is not None else 0)


def domain_from_config(cfg: RunConfig) -> MacroDomain:
    Lx, Ly, m = cfg["domain.Lx"], cfg["domain.Ly"], cfg["domain.m"]
    my = cfg["domain.my"] or m
    eta = cfg["domain.eta"]
    kind = cfg["domain.force"]
    if kind == "manufactured":
        return MacroDomain.from_force(Lx, Ly, m, my, manufactured_force(Lx, Ly), eta)
    if kind == "zero":
        return MacroDomain(Lx, Ly, m, my, eta, 0.0, 0.0)
    return MacroDomain(Lx, Ly, m, my, eta, cfg["domain.fx"], cfg["domain.fy"])


def permeability_from_config(cfg: RunConfig) -> PermeabilityTensor:
    path = cfg["domain.k_json"]
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        try:
            return PermeabilityTensor.from_json(text)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a permeability JSON ({exc})") from None
    ks = [cfg[f"domain.{k}"] for k in ("k11", "k12", "k22")]
    if any(v is None for v in ks) or cfg["domain.regime"] is None:
        raise ConfigError("darcy needs domain.k_json, or domain.k11/k12/k22 and domain.regime")
    k = np.array([[ks[0], ks[1]], [ks[1], ks[2]]])
    return PermeabilityTensor(Regime(cfg["domain.regime"]), k, 0)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# field dumps


def dump_cell_fields(sol, out: Path):
    for i in range(len(sol.pressure)):
        write_field_csv(out / f"pressure{i + 1}.csv", "p", sol.pressure[i])
        if sol.velocity[i] is not None:
            for name, comp in sol.velocity[i].components().items():
                write_field_csv(out / f"{name}{i + 1}.csv", name, comp)
        if sol.flux:
            write_field_csv(out / f"flux{i + 1}_u.csv", "u", sol.flux[i].u)
            write_field_csv(out / f"flux{i + 1}_v.csv", "v", sol.flux[i].v)


def dump_darcy_fields(sol, out: Path):
    d = sol.domain
    xc = (np.arange(d.m) + 0.5) * d.hx
    yc = (np.arange(d.my) + 0.5) * d.hy
    xf = np.arange(d.m + 1) * d.hx
    yf = np.arange(d.my + 1) * d.hy
    write_field_csv(out / "P.csv", "P", sol.P, (xc, yc))
    write_field_csv(out / "Vx.csv", "Vx", sol.Vx, (xf, yc))
    write_field_csv(out / "Vy.csv", "Vy", sol.Vy, (xc, yf))


# ---------------------------------------------------------------------------
# subcommands


def cmd_classify(args) -> int:
    params = RegimeParams(args.epsilon, args.delta, args.gamma)
    rep = exponent_report(params)
    print(dumps(rep.to_dict()))
    return EXIT_OK if rep.darcy_valid else EXIT_INVALID


def _cell_regime(cfg):
    if cfg["regime.delta"] is not None:
        return classify(_exact(cfg["regime.delta"]))
    if cfg["domain.regime"] is not None:
        return Regime(cfg["domain.regime"])
    raise ConfigError("cell needs regime.delta (or domain.regime)")


def run_cell(cfg: RunConfig, regime: Regime):
    geom = geometry_from_config(cfg, regime)
    log.info("cell: %s n=%d nz=%s fluid fraction %.4f", regime, geom.n, geom.nz,
             geom.fluid_fraction)
    kt, sol = permeability(regime, geom, solver_config(cfg), return_solution=True)
    return geom, kt, sol


def cmd_cell(cfg: RunConfig) -> int:
    regime = _cell_regime(cfg)
    geom, kt, sol = run_cell(cfg, regime)
    out = _outdir(cfg)
    doc = kt.to_dict()
    doc["geometry"] = geom.shape.to_dict()
    doc["fluid_fraction"] = geom.fluid_fraction
    _write_json(out / "permeability.json", doc)
    if cfg["output.fields"]:
        dump_cell_fields(sol, out)
    print(dumps(doc))
    return EXIT_OK


def run_darcy(cfg: RunConfig, kt: PermeabilityTensor):
    dom = domain_from_config(cfg)
    return solve_darcy(dom, kt, solver_config(cfg))


def cmd_darcy(cfg: RunConfig) -> int:
    kt = permeability_from_config(cfg)
    sol = run_darcy(cfg, kt)
    out = _outdir(cfg)
    summary = sol.summary()
    summary["regime"] = Regime(kt.regime).value
    dump_darcy_fields(sol, out)
    _write_json(out / "darcy_summary.json", summary)
    print(dumps(summary))
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig) -> int:
    params = params_from_config(cfg, need_epsilon=True)
    rep = exponent_report(params)
    out = _outdir(cfg)
    doc = {"report": rep.to_dict()}
    _, kt, csol = run_cell(cfg, rep.regime)
    doc["permeability"] = kt.to_dict()
    dsol = run_darcy(cfg, kt)
    doc["darcy"] = dsol.summary()
    code = EXIT_OK
    try:
        scaled = scale_back(dsol, rep, float(params.epsilon))
        doc["scale"] = {"epsilon": scaled.epsilon, "exponent": scaled.exponent,
                        "factor": scaled.factor,
                        "max_abs_velocity": float(max(np.abs(scaled.Vx).max(),
                                                      np.abs(scaled.Vy).max()))}
    except ValidityError as exc:
        doc["scale"] = None
        doc["refused"] = str(exc)
        code = EXIT_INVALID
    if cfg["output.fields"]:
        dump_cell_fields(csol, out)
        dump_darcy_fields(dsol, out)
    _write_json(out / "pipeline.json", doc)
    print(dumps(doc))
    if code:
        print(f"refused: {doc['refused']}", file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# validate


def _check_adjoint():
    rng = np.random.default_rng(7)
    n = 16
    f = StaggeredField2D(rng.standard_normal((n, n)), rng.standard_normal((n, n)))
    p = rng.standard_normal((n, n))
    lhs = inner(discrete_div(f), p)
    rhs = -inner(f, discrete_grad(p))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)


def _check_poiseuille():
    geom = build_geometry(ObstacleShape.none(), 8, 32)
    k = permeability(Regime.PTPM, geom, SolverConfig(1e-12)).k
    return abs(k[0, 0] - 1.0 / 12.0)


def _check_vtpm_empty():
    k = permeability(Regime.VTPM, build_geometry(ObstacleShape.none(), 16)).k
    return float(np.abs(k - np.eye(2)).max())


def _check_heleshaw_identity():
    geom = build_geometry(ObstacleShape.disk(0.25), 32)
    sol, kt = solve_heleshaw_cell(geom, SolverConfig(1e-12))
    return max(abs(heleshaw_energy(sol, i) - kt.k[i, i]) / kt.k[i, i] for i in range(2))


def _check_stokes_energy():
    geom = build_geometry(ObstacleShape.disk(0.25), 16)
    kt, sol = permeability(Regime.HTPM, geom, SolverConfig(1e-12), return_solution=True)
    return max(abs(dirichlet_energy(sol.velocity[i], geom) - kt.k[i, i]) / kt.k[i, i]
               for i in range(2))


def _check_profile():
    return max(abs(profile_integral(r) + 1.0 / 12.0) for r in ("exact", "gauss"))


def _check_crosscheck():
    geom = build_geometry(ObstacleShape.disk(0.25), 32)
    A, B = reduced3d_crosscheck(geom, SolverConfig(1e-12))
    return float(np.abs(A - B).max() / np.abs(B).max())


def _check_closed_box():
    dom = MacroDomain(1.0, 1.0, 16, 16, 1.0, 1.0, 0.0)
    sol = solve_darcy(dom, (np.eye(2), Regime.HTPM), SolverConfig(1e-12))
    X, _ = dom.centers()
    return max(float(np.abs(sol.Vx).max()), float(np.abs(sol.Vy).max()),
               float(np.abs(sol.P - (X - 0.5)).max()))


VALIDATION_CHECKS = {
    "profile_integral": (_check_profile, 1e-12),
    "adjointness": (_check_adjoint, 1e-12),
    "poiseuille": (_check_poiseuille, 1e-4),
    "vtpm_empty": (_check_vtpm_empty, 1e-10),
    "heleshaw_energy": (_check_heleshaw_identity, 1e-10),
    "stokes_energy": (_check_stokes_energy, 1e-8),
    "reduced3d": (_check_crosscheck, 1e-10),
    "closed_box": (_check_closed_box, 1e-10),
}


def run_validation(tolerances=None):
    """Rows ``(name, value, tol, passed)`` for the built-in analytic checks."""
    tolerances = dict(tolerances or {})
    unknown = set(tolerances) - set(VALIDATION_CHECKS)
    if unknown:
        raise ConfigError(f"unknown check(s): {', '.join(sorted(unknown))}")
    rows = []
    for name, (fn, tol) in VALIDATION_CHECKS.items():
        tol = tolerances.get(name, tol)
        try:
            value = float(fn())
            ok = bool(value <= tol)
        except (SolverError, SingularMatrixError) as exc:
            log.warning("%s: %s", name, exc)
            value, ok = float("nan"), False
        rows.append((name, value, tol, ok))
    return rows


def _parse_tols(items):
    tols = {}
    for item in items or ():
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--tol expects name=value, got {item!r}")
        try:
            tols[name.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"--tol {name}: not a number: {val!r}") from None
    return tols


def cmd_validate(args) -> int:
    rows = run_validation(_parse_tols(args.tol))
    width = max(len(r[0]) for r in rows)
    for name, value, tol, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {value:.3e}  (tol {tol:.1e})")
    failures = sum(not r[3] for r in rows)
    print(f"{len(rows) - failures}/{len(rows)} checks passed")
    return min(failures, 125)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thinporous", description="Thin porous media permeability and Darcy toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("classify", help="regime, critical Reynolds exponent and estimates")
    c.add_argument("--delta", type=_number, required=True)
    c.add_argument("--gamma", type=_number, required=True)
    c.add_argument("--epsilon", type=_number, default=None)

    for name, helptext in (("cell", "solve the cell problem, write permeability.json"),
                           ("darcy", "solve the macroscopic Darcy problem"),
                           ("pipeline", "classify, cell, darcy and scale back")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", nargs="?", help="section.key = value file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")

    v = sub.add_parser("validate", help="run the built-in analytic checks")
    v.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                   help=f"override a tolerance; names: {', '.join(VALIDATION_CHECKS)}")

    sub.add_parser("keys", help="list config keys and defaults")
    return p


def _dispatch(args) -> int:
    if args.command == "classify":
        return cmd_classify(args)
    if args.command == "validate":
        return cmd_validate(args)
    if args.command == "keys":
        print(describe_schema())
        return EXIT_OK
    cfg = load_config(args.config, args.set)
    return {"cell": cmd_cell, "darcy": cmd_darcy, "pipeline": cmd_pipeline}[args.command](cfg)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ValidityError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IncompatibleProblemError, SolverError, SingularMatrixError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, GeometryError, RegimeError, DarcyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
