"""Command line interface.

Subcommands:

* ``solve``       one mesh level against a manufactured current; writes
                  the edge circulation vector and a JSON summary, with
                  optional Matrix Market dumps of the system matrices
* ``study``       convergence sweep; writes CSV, a JSON mirror, and
                  log-log figures into the output directory
* ``factors``     stability and approximation factors for one level
* ``export-vtk``  solve one level and write a legacy ASCII VTK file

Configuration is TOML; any key can be overridden on the command line
with ``--set KEY=VALUE`` (TOML literal syntax, bare words read as
strings).  Exit codes: 0 success, 2 configuration error, 3 operating
frequency at or near a discrete resonance, 4 solver or estimator
failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from .assembly import (
    DofSystem,
    MaterialField,
    assemble_b,
    write_matrix_market,
)
from .factors import FactorError, compute_factors
from .mesh import MeshError, build_box_mesh
from .solvers import SolverError, resonance_distance
from .studies import (
    solve_level,
    ConfigError,
    ResonanceError,
    StudyConfig,
    StudyError,
    render_study_figures,
    run_convergence_study,
    write_study_csv,
    write_study_json,
)
from .vtk_io import edge_field_at_vertices, write_vtk

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESONANCE = 3
EXIT_SOLVER = 4


def _parse_override(item: str):
    key, sep, val = item.partition("=")
    key, val = key.strip(), val.strip()
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        return key, tomllib.loads(f"v = {val}")["v"]
    except tomllib.TOMLDecodeError:
        return key, val  # bare word, e.g. solution=ms2


def _load_config(args) -> StudyConfig:
    data = {}
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML in {args.config}: {exc}") from exc
    for item in args.set or []:
        key, val = _parse_override(item)
        data[key] = val
    if args.seed is not None:
        data["seed"] = args.seed
    return StudyConfig.from_dict(data)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_solution_csv(path, row) -> None:
    """Full edge table with circulations; constrained edges carry zero."""
    dofs = row.solution.dofs
    mesh = dofs.mesh
    coeffs = row.solution.entity_coeffs()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["edge", "tail", "head", "circulation"])
        for e, (a, b) in enumerate(mesh.edges):
            writer.writerow([e, a, b, repr(float(coeffs[e]))])


def cmd_solve(cfg: StudyConfig, args) -> int:
    row = solve_level(cfg.replace(factors=False), cfg.n)
    _write_solution_csv(os.path.join(args.out, "solution.csv"), row)
    summary = {
        "config": cfg.as_dict(),
        "n": row.n,
        "h": row.h,
        "ndof": row.ndof,
        "err_energy": _json_safe(row.err_energy),
        "best_err": _json_safe(row.best_err),
        "qo_ratio": _json_safe(row.qo_ratio),
    }
    _write_json(os.path.join(args.out, "solve.json"), summary)
    if args.matrices:
        mesh = row.solution.dofs.mesh
        mat = MaterialField.isotropic(mesh, cfg.eps, cfg.nu, cfg.omega)
        B, N = assemble_b(row.solution.dofs, mat)
        write_matrix_market(os.path.join(args.out, "B.mtx"), B,
                            comment="problem matrix Kc - omega^2 M")
        write_matrix_market(os.path.join(args.out, "N.mtx"), N,
                            comment="energy matrix Kc + omega^2 M")
    print(f"n={row.n} ndof={row.ndof} h={row.h:.6g} "
          f"err_energy={row.err_energy:.6g} qo_ratio={row.qo_ratio:.6g}")
    return EXIT_OK


def cmd_study(cfg: StudyConfig, args) -> int:
    result = run_convergence_study(cfg, threads=args.threads)
    write_study_csv(result, os.path.join(args.out, "study.csv"))
    write_study_json(result, os.path.join(args.out, "study.json"))
    render_study_figures(result, args.out)
    for row in result.rows:
        print(f"n={row.n} ndof={row.ndof} err_energy={row.err_energy:.6g} "
              f"qo_ratio={row.qo_ratio:.6g} rate={row.rate_energy:.3g}")
    return EXIT_OK


def cmd_factors(cfg: StudyConfig, args) -> int:
    mesh = build_box_mesh(cfg.n)
    mat = MaterialField.isotropic(mesh, cfg.eps, cfg.nu, cfg.omega)
    dofs = DofSystem(mesh, "nedelec0")
    B, N = assemble_b(dofs, mat)
    lam, gap = resonance_distance(B, N, cfg.omega)
    if gap < 0.05:
        raise ResonanceError(
            f"omega^2 = {cfg.omega ** 2:.6g} is within {gap:.2%} of the "
            f"discrete resonance at {lam:.6g} (n={cfg.n})",
            eigenvalue=lam,
        )
    report = compute_factors(mesh, mat, r=cfg.factor_r, seed=cfg.seed,
                             maxiter=cfg.factor_maxiter)
    payload = {k: _json_safe(v) for k, v in dataclasses.asdict(report).items()}
    payload["config"] = cfg.as_dict()
    _write_json(os.path.join(args.out, "factors.json"), payload)
    print(f"n={cfg.n} beta_h={report.beta_h:.6g} c_st={report.c_st:.6g} "
          f"gamma_app={report.gamma_app:.6g} gamma_div={report.gamma_div:.6g}")
    return EXIT_OK


def cmd_export_vtk(cfg: StudyConfig, args) -> int:
    row = solve_level(cfg.replace(factors=False), cfg.n)
    vectors = {"E_h": edge_field_at_vertices(row.solution)}
    path = os.path.join(args.out, "solution.vtk")
    write_vtk(path, row.solution.dofs.mesh, point_vectors=vectors,
              title=f"curl-curl solution, n={row.n}, omega={cfg.omega:g}")
    print(f"wrote {path}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for randomized estimators")
    parser = argparse.ArgumentParser(
        prog="edgefem",
        description="shifted curl-curl solver and verification harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common],
                       help="solve one level against a manufactured current")
    p.add_argument("--matrices", action="store_true",
                   help="also dump B and N in Matrix Market format")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("study", parents=[common], help="convergence sweep")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads across study levels")
    p.set_defaults(func=cmd_study)
    p = sub.add_parser("factors", parents=[common],
                       help="stability and approximation factors")
    p.set_defaults(func=cmd_factors)
    p = sub.add_parser("export-vtk", parents=[common],
                       help="solve one level and export legacy ASCII VTK")
    p.set_defaults(func=cmd_export_vtk)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _load_config(args)
        os.makedirs(args.out, exist_ok=True)
        return args.func(cfg, args)
    except ResonanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"offending eigenvalue: {exc.eigenvalue:.12g}", file=sys.stderr)
        return EXIT_RESONANCE
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FactorError, StudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
