"""Command-line surface: validate, simulate, mincut, resilience, limitflow.

Every command is a pure function of (scenario file, flags, seed): rerunning
with the same inputs produces byte-identical outputs.  Relative output
paths resolve against $FLOWNET_OUTDIR when it is set.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    SimulationConfig,
    LocalSolverError,
    SimulationError,
    alpha_transfer_estimate,
    default_dt,
    limit_flow_estimate,
    network_limit_flow,
    simulate,
)
from .resilience import estimate_weak_resilience
from .scenario import Scenario, ScenarioError, load_scenario, validate_scenario
from .topology import max_flow_value, min_cut_capacity

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _resolve_out(path: str) -> Path:
    base = os.environ.get("FLOWNET_OUTDIR")
    p = Path(path)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_manifest(prefix: Path, args_list, scenario_path, seed, outputs):
    digest = hashlib.sha256(Path(scenario_path).read_bytes()).hexdigest()
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": args_list,
        "scenario_sha256": digest,
        "seed": seed,
        "tool_version": __version__,
        "outputs": [str(o) for o in outputs],
    }
    path = prefix.parent / (prefix.name + ".manifest.json")
    path.write_text(_dump_json(manifest), encoding="utf-8")
    return path


def _build_config(scenario: Scenario, args) -> SimulationConfig:
    sim = dict(scenario.simulation)
    if getattr(args, "horizon", None) is not None:
        sim["horizon"] = args.horizon
    if getattr(args, "dt", None) is not None:
        sim["dt"] = args.dt
    allowed = {"dt", "horizon", "tail_fraction", "transfer_tol", "sat_threshold",
               "density_ceiling", "record_stride"}
    stray = set(sim) - allowed - {"initial_density"}
    if stray:
        raise ScenarioError(f"simulation: unknown settings {sorted(stray)}")
    kwargs = {k: v for k, v in sim.items() if k in allowed}
    if "record_stride" in kwargs:
        kwargs["record_stride"] = int(kwargs["record_stride"])
    return SimulationConfig(inflow=scenario.inflow, **kwargs)


def _initial_density(scenario: Scenario):
    raw = scenario.simulation.get("initial_density")
    if raw is None:
        return None
    return np.array([float(raw.get(str(lid), 0.0)) for lid in scenario.topology.link_ids])


def _trajectory_csv(traj) -> str:
    cols = (["t"] + [f"rho_{lid}" for lid in traj.link_ids]
            + [f"f_{lid}" for lid in traj.link_ids]
            + [f"lambda_{v}" for v in range(traj.node_inflows.shape[1])])
    lines = [",".join(cols)]
    for i in range(len(traj.times)):
        row = [repr(float(traj.times[i]))]
        row += [repr(float(x)) for x in traj.rho[i]]
        row += [repr(float(x)) for x in traj.flows[i]]
        row += [repr(float(x)) for x in traj.node_inflows[i]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        report = {"ok": False, "scenario": str(args.scenario),
                  "findings": [{"component": "document", "message": str(exc)}]}
        sys.stdout.write(_dump_json(report))
        return EXIT_VALIDATION
    report = validate_scenario(scenario)
    sys.stdout.write(_dump_json(report))
    if args.report:
        _resolve_out(args.report).write_text(_dump_json(report), encoding="utf-8")
    return EXIT_OK if report["ok"] else EXIT_VALIDATION


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _build_config(scenario, args)
    spec = scenario.perturbation_spec()
    summary: dict = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.name,
        "seed": scenario.seed,
        "inflow": scenario.inflow,
    }
    if spec is None:
        traj = simulate(scenario.network, scenario.policy, config, _initial_density(scenario))
        net_for_sat = scenario.network
    else:
        # attack run: start from the unperturbed limit flow's densities and
        # integrate the perturbed functions with the unchanged policy
        from .resilience import initial_densities

        alpha = scenario.attack_alpha()
        base_limit = network_limit_flow(scenario.network, scenario.policy, scenario.inflow)
        rho0 = initial_densities(scenario.network, base_limit.flow_vector(scenario.topology))
        if config.dt is None:
            config = replace(config, dt=default_dt(scenario.network))
        net_for_sat = scenario.network.perturbed(spec)
        traj = simulate(net_for_sat, scenario.policy, config, rho0)
        summary["attack"] = {
            "alpha": alpha,
            "magnitude": spec.magnitude,
            "stretching": spec.stretching,
        }

    est, flags = limit_flow_estimate(traj, net_for_sat, config.sat_threshold)
    transfer = alpha_transfer_estimate(traj, 0.0, scenario.inflow, config.tail_fraction,
                                       tol=config.transfer_tol)
    summary.update({
        "dt": traj.dt,
        "horizon": float(traj.times[-1]),
        "terminal_flow": {str(lid): float(traj.flows[-1, i]) for i, lid in enumerate(traj.link_ids)},
        "limit_flow_estimate": {str(lid): float(est[i]) for i, lid in enumerate(traj.link_ids)},
        "tail_min_outflow": transfer.tail_min,
        "tail_variation": transfer.tail_variation,
        "converged": not transfer.inconclusive,
        "saturated_links": [lid for lid in traj.link_ids if flags[lid]],
        "max_undershoot": traj.max_undershoot,
    })
    if spec is not None and scenario.attack_alpha() is not None:
        alpha = scenario.attack_alpha()
        verdict = alpha_transfer_estimate(traj, alpha, scenario.inflow, config.tail_fraction,
                                          tol=config.transfer_tol)
        summary["attack"]["defeated"] = not verdict.transferring

    out = _resolve_out(args.out)
    csv_path = out.parent / (out.name + ".csv")
    csv_path.write_text(_trajectory_csv(traj), encoding="utf-8")
    summary_path = out.parent / (out.name + ".summary.json")
    summary_path.write_text(_dump_json(summary), encoding="utf-8")
    manifest = _write_manifest(out, sys.argv[1:], args.scenario, scenario.seed,
                               [csv_path, summary_path])
    sys.stdout.write(_dump_json({"outputs": [str(csv_path), str(summary_path), str(manifest)]}))
    return EXIT_OK


def cmd_mincut(args) -> int:
    scenario = load_scenario(args.scenario)
    caps = scenario.network.capacities()
    capacity, cut = min_cut_capacity(scenario.topology, caps)
    flow = max_flow_value(scenario.topology, caps)
    if abs(capacity - flow) > 1e-12 * max(1.0, abs(capacity)):
        raise SimulationError(f"min-cut {capacity} and max-flow {flow} disagree")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.name,
        "capacity": capacity,
        "max_flow": flow,
        "cut": {"origin_side": sorted(cut.origin_side), "links": sorted(cut.cut_links)},
    }
    sys.stdout.write(_dump_json(doc))
    if args.out:
        _resolve_out(args.out).write_text(_dump_json(doc), encoding="utf-8")
    return EXIT_OK


def cmd_resilience(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _build_config(scenario, args)
    alphas = tuple(float(a) for a in args.alphas.split(","))
    seed = args.seed if args.seed is not None else scenario.seed
    report = estimate_weak_resilience(
        scenario.network, scenario.policy, scenario.inflow,
        config=config, alphas=alphas, n_samples=args.samples, seed=seed,
        jobs=args.jobs,
    )
    doc = {"schema_version": SCHEMA_VERSION, "scenario": scenario.name}
    doc.update(report.to_dict())
    sys.stdout.write(_dump_json(doc))
    if args.out:
        out = _resolve_out(args.out)
        out.write_text(_dump_json(doc), encoding="utf-8")
        _write_manifest(out, sys.argv[1:], args.scenario, seed, [out])
    return EXIT_OK


def _limitflow_row(payload):
    network, policy, lam = payload
    try:
        lf = network_limit_flow(network, policy, lam)
        return lam, lf, ""
    except LocalSolverError as exc:
        return lam, None, f"solver failed: residual {exc.residual:.3e}"


def cmd_limitflow(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.sweep:
        try:
            start, stop, num = args.sweep.split(":")
            lams = np.linspace(float(start), float(stop), int(num))
        except ValueError as exc:
            raise ScenarioError(f"--sweep expects start:stop:num, got {args.sweep!r}") from exc
    else:
        lams = np.array([scenario.inflow])
    payloads = [(scenario.network, scenario.policy, float(l)) for l in lams]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_limitflow_row, payloads))
    else:
        rows = [_limitflow_row(p) for p in payloads]

    lids = scenario.topology.link_ids
    cols = ["lambda0"] + [f"f_{lid}" for lid in lids] + [f"sat_{lid}" for lid in lids] + ["status"]
    lines = [",".join(cols)]
    for lam, lf, err in rows:
        if lf is None:
            lines.append(",".join([repr(lam)] + [""] * (2 * len(lids)) + [err]))
        else:
            lines.append(",".join(
                [repr(lam)]
                + [repr(lf.flows[lid]) for lid in lids]
                + [str(int(lf.saturated[lid])) for lid in lids]
                + ["ok"]
            ))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _resolve_out(args.out)
        out.write_text(text, encoding="utf-8")
        _write_manifest(out, sys.argv[1:], args.scenario, scenario.seed, [out])
        sys.stdout.write(_dump_json({"outputs": [str(out)]}))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flownet",
        description="Dynamical flow networks: simulation, min-cut, and resilience analysis",
    )
    parser.add_argument("--version", action="version", version=f"flownet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario document end to end")
    p.add_argument("scenario")
    p.add_argument("--report", help="also write the JSON report here")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", help="integrate the dynamics, write CSV + summary")
    p.add_argument("scenario")
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--out", required=True, help="output prefix (.csv / .summary.json)")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("mincut", help="min-cut capacity and witness cut")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_mincut)

    p = sub.add_parser("resilience", help="bracket the weak resilience against min-cut")
    p.add_argument("scenario")
    p.add_argument("--alphas", default="0.5,0.2,0.1,0.05")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_resilience)

    p = sub.add_parser("limitflow", help="asymptotic flows, optionally swept over inflow")
    p.add_argument("scenario")
    p.add_argument("--sweep", help="inflow grid as start:stop:num")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_limitflow)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationError, LocalSolverError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
