"""Command-line entry point.

Subcommands::

    fluidsolid run           full simulation with CSV log and VTK snapshots
    fluidsolid preprocess    write only the (preprocessed) initial phase field
    fluidsolid energy-audit  fixed-grid run checking the energy inequality per step
    fluidsolid blocks        export Jacobian blocks and their condition numbers
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .assembly import Discretization, StepProblem, extract_blocks
from .driver import StepFailure, build_initial, run_simulation
from .io import write_energy_csv, write_vtk
from .linalg import cond1_exact, export_matrix_market
from .mesh import build_rect_mesh
from .scenarios import MODES, SCENARIO_NAMES, ConfigError, RunControls, parse_config, serialize_config

log = logging.getLogger("fluidsolid")


def _load(args):
    if args.config:
        text = Path(args.config).read_text()
    else:
        text = f"[scenario]\nname = {args.scenario}\n"
    params, scen, strategy, newton, run = parse_config(text)
    if args.strategy:
        strategy = replace(strategy, mode=args.strategy)
    if args.tau is not None:
        params = replace(params, tau=args.tau).validate()
    if args.steps is not None:
        run = replace(run, steps=args.steps)
    if args.adapt is not None:
        run = replace(run, adapt=args.adapt == "on")
    if args.out:
        run = replace(run, out=args.out)
    return params, scen, strategy, newton, run


def _outdir(run: RunControls) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot_writer(out: Path, params, stride: int):
    def cb(rec, state, disc):
        log.info("step %d t=%.4f F=%.8e Newton=%s area=%.5f", rec.step, rec.time, rec.energy.total,
                 None if rec.stats is None else rec.stats.newton_iterations, rec.shrinkage.solid_area)
        if stride > 0 and rec.step % stride == 0:
            write_vtk(state, out / f"state_{rec.step:05d}.vtk", params)
    return cb


def cmd_run(args, audit: bool = False) -> int:
    params, scen, strategy, newton, run = _load(args)
    if audit:
        run = replace(run, energy_audit=True, adapt=False)
    out = _outdir(run)
    (out / "config.ini").write_text(serialize_config(params, scen, strategy, newton, run))
    try:
        res = run_simulation(scen, params, strategy, run.steps, newton, run,
                             callback=_snapshot_writer(out, params, run.output_stride))
    except StepFailure as exc:
        log.error("%s", exc)
        return 2
    write_energy_csv(res.records, out / "energy.csv")
    summary = {
        "steps": run.steps,
        "final_time": res.final_state.time,
        "newton_iterations": sum(r.stats.newton_iterations for r in res.records[1:]),
        "coupling_iterations": sum(r.stats.coupling_iterations for r in res.records[1:]),
        "final_solid_area": res.records[-1].shrinkage.solid_area,
        "final_energy": res.records[-1].energy.total,
    }
    if audit:
        checked = [r for r in res.records if r.verdict is not None]
        failed = [r.step for r in checked if not r.verdict.passed]
        for r in checked:
            print(f"step {r.step:4d} {'PASS' if r.verdict.passed else 'FAIL'} "
                  f"lhs={r.verdict.lhs:.6e} rhs={r.verdict.rhs:.6e} slack={r.verdict.slack:.1e}")
        summary["audited_steps"] = len(checked)
        summary["failed_steps"] = failed
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 1 if audit and summary["failed_steps"] else 0


def cmd_preprocess(args) -> int:
    params, scen, strategy, newton, run = _load(args)
    out = _outdir(run)
    disc, state = build_initial(scen, params, newton)
    path = write_vtk(state, out / "phi0.vtk", params)
    phi = state.phi.coefficients
    print(f"wrote {path}: {disc.mesh.n_vertices} vertices, phi in [{phi.min():.4g}, {phi.max():.4g}]")
    return 0


def cmd_blocks(args) -> int:
    params, scen, strategy, newton, run = _load(args)
    out = _outdir(run)
    scen = replace(scen, nx=args.nx, ny=args.ny, levels=0)
    disc, state = build_initial(scen, params, newton)
    prob = StepProblem(disc, state, params, state.time + params.tau, reactive=scen.reactive)
    system = prob.block_system(prob.initial_guess())
    blocks = dict(zip(("A_CH", "A_NS", "C_T", "C_I"), extract_blocks(system)))
    report = {"N_m": disc.ndofs, "N_CH": system.n_ch, "N_NS": system.n_ns}
    export_matrix_market(out / "A.mtx", system.matrix)
    for name, B in blocks.items():
        export_matrix_market(out / f"{name}.mtx", B)
    report["cond1_A"] = cond1_exact(system.matrix)
    report["cond1_A_CH"] = cond1_exact(blocks["A_CH"])
    report["cond1_A_NS"] = cond1_exact(blocks["A_NS"])
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluidsolid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style configuration file")
    common.add_argument("--scenario", choices=SCENARIO_NAMES, default="cavity_inclusions",
                        help="preset used when no config file is given")
    common.add_argument("--strategy", choices=MODES)
    common.add_argument("--out", help="output directory")
    common.add_argument("--adapt", choices=("on", "off"))
    common.add_argument("--steps", type=int)
    common.add_argument("--tau", type=float)
    sub.add_parser("run", parents=[common], help="run a simulation")
    sub.add_parser("preprocess", parents=[common], help="write the initial phase field")
    sub.add_parser("energy-audit", parents=[common], help="fixed-grid run with energy checks")
    b = sub.add_parser("blocks", parents=[common], help="export Jacobian blocks on a small mesh")
    b.add_argument("--nx", type=int, default=8)
    b.add_argument("--ny", type=int, default=4)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "energy-audit":
            return cmd_run(args, audit=True)
        if args.command == "preprocess":
            return cmd_preprocess(args)
        return cmd_blocks(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
