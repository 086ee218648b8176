"""Command-line entry point.

Subcommands: run (evolve a scenario and write all artifacts), check
(admissibility, stability and identity checks on a state), oracle
(exhaustive small-instance reference), energy (single-state breakdown)
and report (re-render figures from a trace CSV).

Heavy imports happen inside the handlers so that --threads can cap the
BLAS pools before numpy loads.  The env var SMASIM_LOG in
{error, info, debug} selects the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import pathlib
import sys

EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_USAGE = 2

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging():
    name = os.environ.get("SMASIM_LOG", "error").lower()
    level = _LOG_LEVELS.get(name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _apply_threads(n):
    if n and n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(n)


def _parse_overrides(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise SystemExit(f"--tol-override expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_scenario(args):
    from .scenario import load_scenario

    return load_scenario(
        args.scenario,
        tol_overrides=_parse_overrides(args.tol_override),
        seed=args.seed,
    )


def _outdir(args):
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _state_for(args, scenario):
    from .output import load_state

    if getattr(args, "state", None):
        t, y, z = load_state(args.state, scenario.mesh, scenario.num_phases)
        if getattr(args, "t", None) is not None:
            t = args.t
        return t, y, z
    t = getattr(args, "t", None) or 0.0
    return t, scenario.y0, scenario.z0


# ----------------------------------------------------------------------


def cmd_run(args):
    from .output import write_json, write_state, write_trace_csv, write_vtk
    from .report import render_figures
    from .solver import EvolutionError, audit_trajectory, check_stability, evolve

    scenario = _load_scenario(args)
    out = _outdir(args)

    def on_step(k, trajectory):
        if scenario.vtk_every > 0 and k % scenario.vtk_every == 0:
            write_vtk(out / f"step_{k:04d}.vtk", scenario.mesh,
                      trajectory.deformations[-1], trajectory.phases[-1],
                      scenario.model)

    aborted = None
    try:
        trajectory = evolve(
            scenario.mesh, scenario.model, scenario.program, scenario.metric,
            scenario.config, scenario.y0, scenario.z0, scenario.horizon,
            scenario.steps, fingerprint=scenario.fingerprint, on_step=on_step,
        )
    except EvolutionError as exc:
        aborted = str(exc)
        trajectory = exc.trajectory

    trace_path = write_trace_csv(out / "trace.csv", trajectory.records)
    write_state(out / "final_state.json", trajectory.deformations[-1],
                trajectory.phases[-1], trajectory.times[-1])

    audit = audit_trajectory(trajectory, scenario.config.tol_bal)
    final_report = check_stability(
        trajectory.times[-1], scenario.mesh, trajectory.deformations[-1],
        trajectory.phases[-1], scenario.model, scenario.program,
        scenario.metric, scenario.config,
    )
    last = trajectory.records[-1]
    summary = {
        "fingerprint": trajectory.fingerprint,
        "steps": len(trajectory.records) - 1,
        "aborted": aborted,
        "stable_at_start": trajectory.stable_at_start,
        "final": {
            "t": last.t, "E_bulk": last.e_bulk, "E_int": last.e_int,
            "W_ext": last.w_ext, "E_spring": last.e_spring,
            "E_total": last.e_total, "Diss_cum": last.diss_cum,
            "balance_residual": last.balance_residual,
            "min_detF": last.min_det_f,
        },
        "certificates": {
            "two_sided": audit.two_sided_ok,
            "dissipation_monotone": audit.dissipation_monotone,
            "orientation": audit.orientation_ok,
            "balance": audit.balance_ok,
            "all": audit.passed,
        },
        "stability_final": {
            "passed": final_report.passed,
            "worst_margin": final_report.worst_margin,
            "families": final_report.families,
            "competitors": final_report.n_competitors,
        },
    }
    write_json(out / "summary.json", summary)

    from .output import read_trace_csv

    render_figures(read_trace_csv(trace_path), out)

    ok = audit.passed and aborted is None
    print(f"run: {'PASS' if ok else 'FAIL'}  "
          f"E_total={last.e_total:.6e}  Diss={last.diss_cum:.6e}  "
          f"residual={last.balance_residual:.3e}  -> {out}")
    return EXIT_OK if ok else EXIT_CERTIFICATE


def cmd_check(args):
    import numpy as np

    from .energy import gauss_identity_check, interface_measure_totals
    from .output import write_json
    from .solver import check_admissibility, check_stability

    scenario = _load_scenario(args)
    mesh = scenario.mesh
    t, y, z = _state_for(args, scenario)
    out = _outdir(args)

    adm = check_admissibility(mesh, y, h_vox=scenario.config.h_vox)
    stab = check_stability(t, mesh, y, z, scenario.model, scenario.program,
                           scenario.metric, scenario.config)

    # divergence-theorem identities with a random interior test field
    rng = np.random.default_rng(scenario.config.seed)
    v = rng.standard_normal((mesh.num_nodes, 3))
    v[mesh.boundary_node_mask] = 0.0
    res_curl, res_cof = gauss_identity_check(
        mesh, y, np.ones(mesh.num_tets, dtype=bool), v
    )

    boundary_phases = set(int(p) for p in z.labels[mesh.bface_tet])
    totals = {}
    for phase in sorted(set(int(p) for p in z.labels)):
        interior = phase not in boundary_phases
        a_tot, h_tot, c_tot = interface_measure_totals(mesh, y, z, phase)
        totals[str(phase)] = {
            "interior": interior,
            "a_total": float(np.linalg.norm(a_tot)),
            "H_total": float(np.linalg.norm(h_tot)),
            "c_total": float(np.linalg.norm(c_tot)),
        }
    null_ok = all(
        max(v["a_total"], v["H_total"], v["c_total"]) <= 1e-10
        for v in totals.values() if v["interior"]
    )

    identity_ok = res_curl <= 1e-8 and res_cof <= 1e-8
    passed = adm.passed and stab.passed and identity_ok and null_ok
    report = {
        "admissibility": {
            "orientation_ok": adm.orientation_ok,
            "bad_elements": adm.bad_elements,
            "min_detF": adm.min_det,
            "det_integral": adm.det_integral,
            "voxel_volume": adm.voxel_volume,
            "slack": adm.slack,
            "injectivity_ok": adm.injectivity_ok,
        },
        "stability": {
            "passed": stab.passed,
            "worst_margin": stab.worst_margin,
            "worst_competitor": stab.worst_label,
            "violations": len(stab.violations),
            "families": stab.families,
        },
        "gauss_identities": {
            "curl_residual": res_curl,
            "cofactor_residual": res_cof,
            "ok": identity_ok,
        },
        "null_lagrangian_totals": totals,
        "pass": passed,
    }
    write_json(out / "check_report.json", report)
    print(f"check: {'PASS' if passed else 'FAIL'}  -> {out / 'check_report.json'}")
    return EXIT_OK if passed else EXIT_CERTIFICATE


def cmd_oracle(args):
    from .dissipation import total_dissipation
    from .energy import energy_breakdown
    from .output import write_json
    from .solver import incremental_step, oracle_enumerate

    scenario = _load_scenario(args)
    mesh = scenario.mesh
    if mesh.num_tets > 12:
        print(f"oracle: element count {mesh.num_tets} exceeds the cap of 12",
              file=sys.stderr)
        return EXIT_USAGE
    if scenario.num_phases > 3:
        print("oracle: more than 2 martensite variants exceeds the cap",
              file=sys.stderr)
        return EXIT_USAGE
    out = _outdir(args)

    k = args.k
    t_k = k * scenario.horizon / scenario.steps
    result = oracle_enumerate(
        t_k, mesh, scenario.model, scenario.program, scenario.metric,
        scenario.z0, scenario.y0, scenario.config,
    )
    y_sol, z_sol, info = incremental_step(
        t_k, mesh, scenario.y0, scenario.z0, scenario.model, scenario.program,
        scenario.metric, scenario.config,
    )
    e_sol = energy_breakdown(t_k, mesh, y_sol, z_sol, scenario.model,
                             scenario.program, smoothed=True).total
    obj_sol = e_sol + total_dissipation(mesh, scenario.z0, z_sol, scenario.metric)
    gap = obj_sol - result.best_objective
    rel_gap = gap / (1.0 + abs(result.best_objective))
    margin, worst_idx = result.stability_margin(mesh, scenario.metric, z_sol, e_sol)
    tol = scenario.config.tol_bal * (1.0 + abs(e_sol))
    report = {
        "t": t_k,
        "num_labelings": len(result.objectives),
        "global_min_objective": result.best_objective,
        "argmin_labels": [int(v) for v in result.best_labels],
        "solver_objective": obj_sol,
        "solver_labels": [int(v) for v in z_sol.labels],
        "gap": gap,
        "gap_relative": rel_gap,
        "stability": {
            "worst_margin": margin,
            "worst_labeling": worst_idx,
            "is_stable": margin >= -tol,
        },
    }
    write_json(out / "oracle_report.json", report)
    print(f"oracle: labelings={len(result.objectives)}  "
          f"gap={gap:.3e} (rel {rel_gap:.3e})  "
          f"stable={report['stability']['is_stable']}")
    return EXIT_OK


def cmd_energy(args):
    import numpy as np

    from .energy import deformation_gradients, energy_breakdown
    from .tensor3 import det

    scenario = _load_scenario(args)
    t, y, z = _state_for(args, scenario)
    parts = energy_breakdown(t, scenario.mesh, y, z, scenario.model,
                             scenario.program)
    dets = det(deformation_gradients(scenario.mesh, y))
    payload = {
        "t": t,
        "E_bulk": parts.bulk,
        "E_int": parts.interface,
        "W_ext": parts.external_work,
        "E_spring": parts.spring,
        "E_total": parts.total,
        "min_detF": float(np.min(dets)),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args):
    from .output import read_trace_csv
    from .report import render_figures

    rows = read_trace_csv(args.trace)
    paths = render_figures(rows, args.out)
    print("report: " + ", ".join(str(p) for p in paths))
    return EXIT_OK


# ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smasim",
        description="Quasistatic shape-memory microstructure simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default="smasim-out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--threads", type=int, default=0,
                       help="worker thread cap (0 = auto)")
        p.add_argument("--tol-override", action="append", metavar="KEY=VAL",
                       help="override a solver field, e.g. tol_g=1e-8")

    p_run = sub.add_parser("run", help="evolve a scenario and write artifacts")
    common(p_run)
    p_run.set_defaults(handler=cmd_run)

    p_check = sub.add_parser("check", help="verify a state against the model")
    common(p_check)
    p_check.add_argument("--state", help="state JSON (defaults to the initial state)")
    p_check.add_argument("--t", type=float, default=None, help="evaluation time")
    p_check.set_defaults(handler=cmd_check)

    p_oracle = sub.add_parser("oracle", help="exhaustive small-instance reference")
    common(p_oracle)
    p_oracle.add_argument("--k", type=int, default=1, help="time step to analyze")
    p_oracle.set_defaults(handler=cmd_oracle)

    p_energy = sub.add_parser("energy", help="single-state energy breakdown")
    common(p_energy)
    p_energy.add_argument("--state", help="state JSON (defaults to the initial state)")
    p_energy.add_argument("--t", type=float, default=None, help="evaluation time")
    p_energy.set_defaults(handler=cmd_energy)

    p_report = sub.add_parser("report", help="render figures from a trace CSV")
    p_report.add_argument("--trace", required=True, help="trace CSV file")
    p_report.add_argument("--out", default="smasim-out", help="output directory")
    p_report.set_defaults(handler=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(getattr(args, "threads", 0))
    _configure_logging()
    try:
        return args.handler(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        from .scenario import ScenarioError

        if isinstance(exc, (ScenarioError, ValueError, OSError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        raise


if __name__ == "__main__":
    sys.exit(main())
