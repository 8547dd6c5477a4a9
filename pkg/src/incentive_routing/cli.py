"""Command-line entry point.

    incentive-routing {ue,so,bilevel,fit,simulate-intersection,report}
        --scenario FILE --out DIR [--seed N] [--iterations N] [--bounds LO,HI]

Every command writes its tables plus ``manifest.json`` into the output
directory; given the same scenario and seed the files are byte-identical.
Failures exit nonzero and print a one-line JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bilevel import DeConfig, SpsaConfig, UpperLevel, differential_evolution, gap_closure, polish, spsa_optimize
from .calibration import (
    AssumptionViolation,
    SIOUX_FLOW_SCALE,
    UnitConfig,
    apply_node_fits,
    builtin_sioux_node_costs,
    fit_quartic,
    read_delay_samples,
    read_node_cost_sidecar,
    synthetic_samples,
    write_node_cost_sidecar,
)
from .equilibrium import AssignmentProblem, SolveOptions
from .intersection import IntersectionModel, delay_curve
from .io import ParseError, emit_flow_difference, parse_tntp, write_flows
from .library import braess, pigou, sioux_falls
from .network import PER_PATH, ContractError, IncentiveSchedule, Network, StructureError
from .scenario import Scenario, ScenarioError, load_scenario

COMMANDS = ("ue", "so", "bilevel", "fit", "simulate-intersection", "report")

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NOT_CONVERGED = 4


class NotConverged(RuntimeError):
    pass


def build_network(sc: Scenario) -> Network:
    if sc.network is None and sc.net_file is None:
        raise ScenarioError("this command needs 'network' or 'net_file'")
    if sc.network is not None:
        if sc.network == "sioux-falls":
            net = sioux_falls(node_costs=None)
        elif sc.network == "pigou":
            net = pigou(sc.demand if sc.demand is not None else 1.0)
        else:
            net = braess(sc.network.split("-", 1)[1], sc.demand if sc.demand is not None else 1.0)
    else:
        node_path = sc.resolve(sc.node_file) if sc.node_file else None
        net = parse_tntp(sc.resolve(sc.net_file), sc.resolve(sc.trips_file), node_path, sc.name)
    if sc.node_costs == "none":
        return net
    if sc.node_costs == "builtin_sioux":
        fits = builtin_sioux_node_costs()
        scale = sc.flow_scale if sc.flow_scale is not None else SIOUX_FLOW_SCALE
    else:
        fits = read_node_cost_sidecar(sc.resolve(sc.node_cost_file))
        scale = sc.flow_scale if sc.flow_scale is not None else 1.0
    return apply_node_fits(net, fits, UnitConfig(sc.time_divisor, scale, sc.extrapolation))


def solve_options(sc: Scenario, tolerance: float | None = None) -> SolveOptions:
    return SolveOptions(
        relative_gap_tolerance=tolerance or sc.relative_gap_tolerance,
        max_iterations=sc.max_iterations,
        step_rule=sc.step_rule,
        record_trace=True,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


class Outputs:
    """Collects written files for the manifest."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def add(self, paths) -> None:
        self.files.extend(paths)

    def manifest(self, command: str, sc: Scenario, status: str, results: dict) -> Path:
        files = {}
        for p in sorted(set(self.files)):
            if p.exists():
                files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        data = {
            "command": command,
            "status": status,
            "version": __version__,
            "scenario": sc.to_dict(),
            "results": results,
            "files": files,
        }
        target = self.dir / "manifest.json"
        target.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        return target


# -- commands -------------------------------------------------------------------------


def _solve_command(sc: Scenario, out: Outputs, objective: str) -> dict:
    net = build_network(sc)
    problem = AssignmentProblem.auto(net)
    res = problem.solve(IncentiveSchedule(), solve_options(sc), objective)
    out.add(write_flows(res.flows, out.dir, objective))
    res.write_trace(out.path(f"{objective}_trace.csv"))
    results = {
        "social_cost": float(res.social_cost),
        "potential": float(res.potential_value),
        "relative_gap": float(res.relative_gap),
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
        "nodes": len(net.nodes),
        "edges": len(net.edges),
        "od_pairs": len(net.demands),
    }
    if not res.converged:
        raise NotConverged(results)
    return results


def cmd_ue(sc: Scenario, out: Outputs) -> dict:
    return _solve_command(sc, out, "ue")


def cmd_so(sc: Scenario, out: Outputs) -> dict:
    return _solve_command(sc, out, "so")


def cmd_bilevel(sc: Scenario, out: Outputs) -> dict:
    net = build_network(sc)
    search_tol = sc.bilevel_relative_gap_tolerance or sc.relative_gap_tolerance
    upper = UpperLevel(
        net,
        sc.incentive_mode,
        sc.bounds,
        options=SolveOptions(search_tol, sc.max_iterations, sc.step_rule),
        robustness_weight=sc.robustness_weight,
    )
    if sc.algorithm == "spsa":
        cfg = SpsaConfig(
            iterations=sc.iterations, a=sc.spsa_a, alpha=sc.spsa_alpha, c=sc.spsa_c, gamma=sc.spsa_gamma,
            A=sc.spsa_A, seed=sc.seed, init=sc.spsa_init, objective_scale=sc.spsa_objective_scale,
        )
        result = spsa_optimize(upper, cfg)
    else:
        cfg = DeConfig(sc.de_population_factor, sc.de_F, sc.de_CR, sc.de_max_generations, sc.de_tol, sc.seed)
        result = differential_evolution(upper, cfg)
    result = polish(upper, result, SolveOptions(sc.relative_gap_tolerance, sc.max_iterations, sc.step_rule))
    result.write_incentives(out.path("incentives.csv"))
    result.write_trace(out.path("bilevel_trace.csv"))
    out.add(write_flows(result.baseline_flows, out.dir, "baseline"))
    out.add(write_flows(result.flows, out.dir, "incentivized"))
    emit_flow_difference(
        result.baseline_flows, result.flows, out.path("flow_difference.csv"), out.path("flow_difference_graph.json")
    )
    results = {
        "algorithm": result.algorithm,
        "incentive_mode": sc.incentive_mode,
        "bounds": list(sc.bounds),
        "dimension": len(result.keys),
        "baseline_ue_cost": float(result.baseline_ue_cost),
        "incentivized_ue_cost": float(result.incentivized_ue_cost),
        "so_cost": float(result.so_cost),
        "gap_closure_percent": float(result.gap_closure_percent),
        "evaluations": int(result.evaluations),
    }
    return results


def cmd_fit(sc: Scenario, out: Outputs) -> dict:
    if sc.samples_file is not None:
        samples = read_delay_samples(sc.resolve(sc.samples_file))
    else:
        # no measurements given: noisy samples drawn from the builtin fits
        grid = np.linspace(0.0, 900.0, 91)
        samples = [
            synthetic_samples(f, grid, sc.noise, sc.seed + i) for i, f in enumerate(builtin_sioux_node_costs())
        ]
    fits = [fit_quartic(s, check=False) for s in samples]
    monotone = []
    for f in fits:
        try:
            f.check_assumption()
            monotone.append(True)
        except AssumptionViolation:
            monotone.append(False)
    write_node_cost_sidecar(fits, out.path("node_costs.csv"))
    with open(out.path("fit_report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "samples", "mape_percent", "monotone"])
        for s, f, ok in zip(samples, fits, monotone):
            w.writerow([f.node_id, len(s.departures), _fmt(f.mape_percent), int(ok)])
    mapes = [f.mape_percent for f in fits]
    return {
        "nodes": len(fits),
        "non_monotone_nodes": [f.node_id for f, ok in zip(fits, monotone) if not ok],
        "mape_percent_min": float(min(mapes)),
        "mape_percent_max": float(max(mapes)),
        "mape_percent_mean": float(np.mean(mapes)),
    }


def cmd_simulate(sc: Scenario, out: Outputs) -> dict:
    model = IntersectionModel(sc.sim_service_time, sc.sim_control_zone_travel)
    seeds = [sc.seed + r for r in range(sc.sim_rollouts)]
    curve = delay_curve(
        sc.sim_rates, sc.sim_offsets, seeds, model, sc.sim_horizon, sc.sim_rollouts, sc.sim_min_headway
    )
    curve.write_csv(out.path("delay_curve.csv"))
    return {"points": len(curve.points), "unstable_rates": [float(r) for r in curve.unstable_rates]}


def cmd_report(sc: Scenario, out: Outputs) -> dict:
    manifest = out.dir / "manifest.json"
    if not manifest.is_file():
        raise ScenarioError(f"{manifest} not found; run 'bilevel' into this directory first")
    stored = json.loads(manifest.read_text())
    if stored.get("command") != "bilevel":
        raise ScenarioError(f"{manifest} records a '{stored.get('command')}' run, not 'bilevel'")
    r = stored["results"]
    recomputed = gap_closure(r["baseline_ue_cost"], r["incentivized_ue_cost"], r["so_cost"])
    consistent = abs(recomputed - r["gap_closure_percent"]) <= 1e-9
    lines = [
        f"baseline_ue_cost {_fmt(r['baseline_ue_cost'])}",
        f"so_cost {_fmt(r['so_cost'])}",
        f"incentivized_ue_cost {_fmt(r['incentivized_ue_cost'])}",
        f"gap_closure_percent {_fmt(recomputed)} {'consistent' if consistent else 'INCONSISTENT'}",
    ]
    out.path("report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if not consistent:
        raise ContractError(f"stored gap closure {r['gap_closure_percent']} != recomputed {recomputed}")
    return {"gap_closure_percent": recomputed, "consistent": consistent}


HANDLERS = {
    "ue": cmd_ue,
    "so": cmd_so,
    "bilevel": cmd_bilevel,
    "fit": cmd_fit,
    "simulate-intersection": cmd_simulate,
    "report": cmd_report,
}


# -- entry point ---------------------------------------------------------------------


def _bounds(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    return lo, hi


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incentive-routing", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--iterations", type=int, help="override the upper-level iteration budget")
    parser.add_argument("--bounds", type=_bounds, help="override incentive bounds as LO,HI")
    parser.add_argument("--version", action="version", version=__version__)
    return parser


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        sc = load_scenario(args.scenario)
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.iterations is not None:
            changes["iterations"] = args.iterations
        if args.bounds is not None:
            changes["bounds"] = args.bounds
        if changes:
            sc = sc.replace(**changes)
    except (ScenarioError, ContractError) as exc:
        return _error("scenario", str(exc), EXIT_USAGE)

    out = Outputs(Path(args.out))
    try:
        results = HANDLERS[args.command](sc, out)
    except NotConverged as exc:
        out.manifest(args.command, sc, "not_converged", exc.args[0])
        return _error("not_converged", "equilibrium solver hit its iteration limit; outputs are partial", EXIT_NOT_CONVERGED)
    except ParseError as exc:
        return _error("parse", str(exc), EXIT_INPUT)
    except (StructureError, ContractError, ValueError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_INPUT)
    if args.command != "report":
        out.manifest(args.command, sc, "ok", results)
    return 0


if __name__ == "__main__":
    sys.exit(main())
