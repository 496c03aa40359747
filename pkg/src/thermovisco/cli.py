"""Command-line entry point.

    thermovisco run <config.cfg>
    thermovisco check-constitutive <config.cfg> [--samples N] [--seed S]
    thermovisco convergence <config.cfg> --levels "cells:n:k:dt;..."

Exit codes: 0 all verdicts pass, 1 runtime or verdict failure, 2 config
error.  THERMOVISCO_OUTDIR overrides the configured output directory.
"""

from __future__ import annotations

import argparse
import os
import sys as _sys
import numpy as np
from pathlib import Path

from .config import ConfigError, RunConfig, build_problem, load_config, make_flow_rule, shipped_config_path
from .constitutive import verify_admissibility
from .discretization import eval_displacement, eval_stress, eval_temperature
from .solver import StepFailureError, PicardConvergenceError, run as solver_run

SNAPSHOT_SCHEMA = "thermovisco-snapshot-v1"


def _resolve_config(path_arg: str) -> Path:
    p = Path(path_arg)
    if p.exists():
        return p
    try:
        shipped = shipped_config_path(path_arg)
        if shipped.exists():
            return shipped
    except Exception:
        pass
    raise ConfigError(f"config file not found: {path_arg}")


def _output_dir(rc: RunConfig) -> Path:
    out = os.environ.get("THERMOVISCO_OUTDIR", rc.output_dir)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_snapshot(path, sys_, state) -> None:
    """Flat, diffable text snapshot: nodal fields then cellwise stress."""
    mesh = sys_.mesh
    nodal_u = sys_.nodal_displacement(state.u)
    nodal_v = sys_.nodal_displacement(state.v)
    stress_full = np.zeros((mesh.n_cells, sys_.s_comp))
    stress_full[sys_.stress_cell, sys_.stress_comp] = state.stress
    axes = "xyz"[:mesh.dim]
    with open(path, "w") as fh:
        fh.write(f"# schema: {SNAPSHOT_SCHEMA}\n")
        fh.write(f"# t: {state.t!r}\n")
        fh.write(f"# dim: {mesh.dim}  cells: {','.join(map(str, mesh.cells))}\n")
        cols = [*axes, *(f"u_{a}" for a in axes), *(f"v_{a}" for a in axes), "theta"]
        fh.write("[nodes] " + " ".join(cols) + "\n")
        for i in range(mesh.n_nodes):
            vals = [*mesh.nodes[i], *nodal_u[i], *nodal_v[i], state.theta[i]]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")
        fh.write("[cells] " + " ".join([*(f"c_{a}" for a in axes),
                                        *(f"stress_{k}" for k in range(sys_.s_comp))]) + "\n")
        centers = mesh.cell_centers
        for e in range(mesh.n_cells):
            vals = [*centers[e], *stress_full[e]]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def cmd_run(args) -> int:
    rc = load_config(_resolve_config(args.config))
    sys_, cfg = build_problem(rc)
    out = _output_dir(rc)

    observers = []
    if rc.snapshot_stride > 0:
        def snap(i, t, state, row, _sys=sys_, _out=out, _stride=rc.snapshot_stride):
            if i % _stride == 0:
                write_snapshot(_out / f"snapshot_{i:06d}.txt", _sys, state)
        observers.append(snap)

    try:
        result = solver_run(sys_, cfg, observers=observers, collect_infos=False)
    except PicardConvergenceError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        print(f"residual history: {['%.3e' % r for r in exc.residual_history]}",
              file=_sys.stderr)
        return 1
    except (StepFailureError, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1

    ledger = result.ledger
    ledger.to_csv(out / rc.ledger_filename)
    write_snapshot(out / "snapshot_final.txt", sys_, result.state)
    ledger.write_summary_json(out / "summary.json")
    print(ledger.summary_text())
    print(f"wrote {out / rc.ledger_filename}, snapshot_final.txt, summary.json")
    return 0 if ledger.summary()["passed"] else 1


def cmd_check_constitutive(args) -> int:
    rc = load_config(_resolve_config(args.config))
    rule = make_flow_rule(rc)
    report = verify_admissibility(rule, sample_count=args.samples, rng_seed=args.seed)
    print(report)
    return 0 if report.passed else 1


def _parse_levels(arg: str):
    levels = []
    for chunk in arg.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 4:
            raise ConfigError(f"level {chunk!r}: expected cells:n_disp:k_stress:dt")
        try:
            cells = tuple(int(c) for c in parts[0].replace("x", ",").split(","))
            n_disp = parts[1].strip()
            k_stress = parts[2].strip()
            dt = float(parts[3])
        except ValueError as exc:
            raise ConfigError(f"level {chunk!r}: {exc}") from exc
        levels.append((cells, n_disp, k_stress, dt))
    if len(levels) < 2:
        raise ConfigError("need at least two levels, coarse to fine")
    # coarse -> fine: cell counts non-decreasing, dt non-increasing
    for a, b in zip(levels, levels[1:]):
        if int(np.prod(b[0])) < int(np.prod(a[0])) or b[3] > a[3] + 1e-15:
            raise ConfigError(
                f"levels must be ordered coarse to fine (cells non-decreasing, "
                f"dt non-increasing); got {a[0]}@dt={a[3]:g} before {b[0]}@dt={b[3]:g}")
    return levels


def _probe_points(dim, extents, per_axis=256):
    if dim == 1:
        x = np.linspace(0, extents[0], per_axis)
        return x[:, None]
    per = 48 if dim == 2 else 12
    axes = [np.linspace(0, extents[a], per) for a in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def cmd_convergence(args) -> int:
    rc = load_config(_resolve_config(args.config))
    levels = _parse_levels(args.levels)
    probes = _probe_points(rc.dim, rc.extents)

    from dataclasses import replace as dc_replace
    fields, summaries = [], []
    for (cells, n_disp, k_stress, dt) in levels:
        if len(cells) == 1:
            cells = cells * rc.dim
        n_interior = int(np.prod([c - 1 for c in cells]))
        max_disp = n_interior * rc.dim
        max_stress = int(np.prod(cells)) * (rc.dim * (rc.dim + 1) // 2)
        nd = max_disp if n_disp == "full" else min(int(n_disp), max_disp)
        ks = max_stress if k_stress == "full" else min(int(k_stress), max_stress)
        level_rc = dc_replace(rc, cells=cells, n_disp_level=nd, k_stress_level=ks, dt=dt)
        sys_, cfg = build_problem(level_rc)
        result = solver_run(sys_, cfg, collect_infos=False)
        fields.append({
            "u": eval_displacement(sys_, result.state.u, probes),
            "stress": eval_stress(sys_, result.state.stress, probes),
            "theta": eval_temperature(sys_, result.state.theta, probes),
        })
        summaries.append(result.ledger.summary())

    weight = 1.0 / probes.shape[0]
    print(f"{'pair':>12} {'du':>12} {'dstress':>12} {'dtheta':>12} {'total':>12}")
    totals = []
    for i in range(1, len(fields)):
        diffs = {}
        for key in ("u", "stress", "theta"):
            d = fields[i][key] - fields[i - 1][key]
            diffs[key] = float(np.sqrt(weight * np.sum(d * d)))
        total = float(np.sqrt(sum(v ** 2 for v in diffs.values())))
        totals.append(total)
        print(f"{i - 1}->{i:>10} {diffs['u']:12.4e} {diffs['stress']:12.4e} "
              f"{diffs['theta']:12.4e} {total:12.4e}")
    for i, s in enumerate(summaries):
        print(f"level {i}: energy residual {s['energy_residual']:.4e}, "
              f"dissipation margin {s['dissipation_margin_min']:.4e}")
    decreasing = all(b <= a * (1.0 + 1e-12) for a, b in zip(totals, totals[1:]))
    print(f"pairwise differences monotonically decreasing: {decreasing}")
    return 0 if decreasing else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="thermovisco",
        description="coupled thermo-visco-elastic simulator with balance diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write ledger/snapshots")
    p_run.add_argument("config")
    p_run.set_defaults(func=cmd_run)

    p_chk = sub.add_parser("check-constitutive",
                           help="randomized admissibility checks of the flow rule")
    p_chk.add_argument("config")
    p_chk.add_argument("--samples", type=int, default=10_000)
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.set_defaults(func=cmd_check_constitutive)

    p_cnv = sub.add_parser("convergence", help="refinement study over nested levels")
    p_cnv.add_argument("config")
    p_cnv.add_argument("--levels", required=True,
                       help='semicolon list "cells:n_disp:k_stress:dt", coarse to fine; '
                            '"full" picks the maximal level')
    p_cnv.set_defaults(func=cmd_convergence)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
