"""File formats: TNTP networks and trips, node coordinates, flow tables,
incentive schedules and flow-difference exports."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .costs import BPR
from .network import (
    PER_PATH,
    PER_TURN,
    ContractError,
    Demand,
    EdgeSpec,
    FlowAssignment,
    IncentiveSchedule,
    Network,
    NodeSpec,
    edge_costs,
    node_costs,
)


class ParseError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def parse_id(text: str):
    """Node/edge ids read from text: integers stay integers."""
    text = text.strip()
    return int(text) if re.fullmatch(r"-?\d+", text) else text


def _metadata_lines(lines):
    """Yield (line_no, stripped) for body lines after ``<END OF METADATA>``.

    Files without the marker are read from the top, skipping ``<...>`` lines.
    """
    has_end = any(l.strip().upper().startswith("<END OF METADATA>") for l in lines)
    in_body = not has_end
    for no, raw in enumerate(lines, start=1):
        s = raw.strip()
        if not in_body:
            if s.upper().startswith("<END OF METADATA>"):
                in_body = True
            continue
        if not s or s.startswith("~") or s.startswith("<"):
            continue
        yield no, s


def _read_net(path) -> tuple[list, list]:
    lines = Path(path).read_text().splitlines()
    edges = []
    node_ids = set()
    for no, s in _metadata_lines(lines):
        if not s.endswith(";"):
            raise ParseError(path, no, "link record must end with ';'")
        fields = s[:-1].split()
        if len(fields) < 7:
            raise ParseError(path, no, f"expected at least 7 fields, found {len(fields)}")
        try:
            a, b = parse_id(fields[0]), parse_id(fields[1])
            cap, _length, fft, bb, power = (float(x) for x in fields[2:7])
        except ValueError as exc:
            raise ParseError(path, no, f"bad numeric field ({exc})") from None
        try:
            cost = BPR(fft, cap, bb, power)
        except ValueError as exc:
            raise ParseError(path, no, str(exc)) from None
        node_ids.update((a, b))
        edges.append(EdgeSpec(a, b, cost, len(edges) + 1))
    if not edges:
        raise ParseError(path, len(lines), "no link records")
    return edges, sorted(node_ids, key=lambda v: (isinstance(v, str), v))


_TRIP = re.compile(r"([^\s:;]+)\s*:\s*([^\s;]+)\s*;?")


def _read_trips(path) -> list[Demand]:
    lines = Path(path).read_text().splitlines()
    origin = None
    demands = []
    for no, s in _metadata_lines(lines):
        if s.lower().startswith("origin"):
            parts = s.split()
            if len(parts) != 2:
                raise ParseError(path, no, "origin line must be 'Origin <id>'")
            origin = parse_id(parts[1])
            continue
        if origin is None:
            raise ParseError(path, no, "destination entries before any 'Origin' line")
        body = s
        pos = 0
        for m in _TRIP.finditer(body):
            if body[pos : m.start()].strip():
                raise ParseError(path, no, f"unparseable text {body[pos:m.start()].strip()!r}")
            pos = m.end()
            dest = parse_id(m.group(1))
            try:
                value = float(m.group(2))
            except ValueError:
                raise ParseError(path, no, f"bad demand value {m.group(2)!r}") from None
            if value < 0:
                raise ParseError(path, no, f"negative demand {value}")
            if dest != origin:
                demands.append(Demand(origin, dest, value))
        if body[pos:].strip():
            raise ParseError(path, no, f"unparseable text {body[pos:].strip()!r}")
    return demands


def read_node_coordinates(path) -> dict:
    coords = {}
    lines = Path(path).read_text().splitlines()
    for no, raw in enumerate(lines, start=1):
        s = raw.strip().rstrip(";").strip()
        if not s or s.startswith("~") or s.lower().startswith("node"):
            continue
        parts = s.split()
        if len(parts) < 3:
            raise ParseError(path, no, "node record needs id, x, y")
        try:
            coords[parse_id(parts[0])] = (float(parts[1]), float(parts[2]))
        except ValueError:
            raise ParseError(path, no, "bad coordinate") from None
    return coords


def parse_tntp(net_path, trips_path, node_path=None, name: str | None = None) -> Network:
    """Network with BPR edge costs and zero-cost intersections.

    Every listed off-diagonal OD entry becomes a demand (zeros included), so the
    OD count matches the trips table.
    """
    edges, node_ids = _read_net(net_path)
    demands = _read_trips(trips_path)
    if not demands or sum(d.demand for d in demands) <= 0:
        raise ContractError(f"{trips_path}: zero total demand")
    known = set(node_ids)
    for d in demands:
        for v in (d.origin, d.destination):
            if v not in known:
                known.add(v)
                node_ids.append(v)
    coords = read_node_coordinates(node_path) if node_path else None
    nodes = [NodeSpec(v) for v in node_ids]
    return Network(nodes, edges, demands, name or Path(net_path).stem.replace("_net", ""), coords)


def serialize_tntp(network: Network, net_path, trips_path) -> None:
    """Write a network with BPR edges back to TNTP (length is written as free-flow time)."""
    lines = [
        f"<NUMBER OF ZONES> {len(network.nodes)}",
        f"<NUMBER OF NODES> {len(network.nodes)}",
        "<FIRST THRU NODE> 1",
        f"<NUMBER OF LINKS> {len(network.edges)}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for e in network.edges:
        c = e.cost
        if not isinstance(c, BPR):
            raise ContractError(f"edge {e.id!r}: only BPR costs can be written as TNTP")
        lines.append(
            f"\t{e.tail}\t{e.head}\t{c.capacity!r}\t{c.free_flow_time!r}\t{c.free_flow_time!r}"
            f"\t{c.b!r}\t{c.power!r}\t0\t0\t1\t;"
        )
    Path(net_path).write_text("\n".join(lines) + "\n")

    by_origin: dict = {}
    for d in network.demands:
        by_origin.setdefault(d.origin, []).append(d)
    out = [
        f"<NUMBER OF ZONES> {len(network.nodes)}",
        f"<TOTAL OD FLOW> {network.total_demand!r}",
        "<END OF METADATA>",
        "",
    ]
    for o, ds in by_origin.items():
        out.append(f"Origin \t{o}")
        out.append("".join(f"    {d.destination} : {d.demand!r};" for d in ds))
        out.append("")
    Path(trips_path).write_text("\n".join(out) + "\n")


# -- flow tables -----------------------------------------------------------------


def write_flows(flows: FlowAssignment, out_dir, prefix: str = "flows") -> list[Path]:
    """``<prefix>_edges.csv`` (edge_id, edge_tail, edge_head, flow, cost),
    ``<prefix>_nodes.csv`` (node, flow, cost) and, with path flows,
    ``<prefix>_paths.csv`` (path, od_index, nodes, flow)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = flows.network
    written = []
    p = out_dir / f"{prefix}_edges.csv"
    ce = edge_costs(flows)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "edge_tail", "edge_head", "flow", "cost"])
        for e, x, c in zip(net.edges, flows.edge_flows, ce):
            w.writerow([e.id, e.tail, e.head, repr(float(x)), repr(float(c))])
    written.append(p)
    p = out_dir / f"{prefix}_nodes.csv"
    cv = node_costs(flows)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "flow", "cost"])
        for n, x, c in zip(net.nodes, flows.node_flows, cv):
            w.writerow([n.id, repr(float(x)), repr(float(c))])
    written.append(p)
    if flows.path_flows is not None:
        p = out_dir / f"{prefix}_paths.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "od_index", "nodes", "flow"])
            for path, x in zip(flows.paths, flows.path_flows):
                w.writerow([path.name, path.od_index, "-".join(map(str, path.nodes)), repr(float(x))])
        written.append(p)
    return written


def read_edge_flows(path) -> dict:
    with open(path, newline="") as fh:
        return {parse_id(r["edge_id"]): float(r["flow"]) for r in csv.DictReader(fh)}


def read_path_flows(path) -> dict:
    with open(path, newline="") as fh:
        return {r["path"]: float(r["flow"]) for r in csv.DictReader(fh)}


def emit_flow_difference(base: FlowAssignment, incentivized: FlowAssignment, csv_path, graph_path=None) -> np.ndarray:
    """Per-edge flow change table plus an optional JSON graph description
    (node positions when known, edge deltas) for external rendering."""
    net = base.network
    if not net.same_structure(incentivized.network):
        raise ContractError("flow difference needs two assignments on the same network")
    delta = incentivized.edge_flows - base.edge_flows
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "edge_tail", "edge_head", "flow_base", "flow_incentivized", "delta"])
        for e, a, b, d in zip(net.edges, base.edge_flows, incentivized.edge_flows, delta):
            w.writerow([e.id, e.tail, e.head, repr(float(a)), repr(float(b)), repr(float(d))])
    if graph_path is not None:
        coords = net.coordinates
        graph = {
            "nodes": [
                {"id": n.id, "x": coords[n.id][0], "y": coords[n.id][1]} if n.id in coords else {"id": n.id}
                for n in net.nodes
            ],
            "edges": [
                {"id": e.id, "tail": e.tail, "head": e.head, "delta": float(d)}
                for e, d in zip(net.edges, delta)
            ],
        }
        Path(graph_path).write_text(json.dumps(graph, indent=1, sort_keys=True) + "\n")
    return delta


# -- incentive schedules -----------------------------------------------------------


def write_incentives(schedule: IncentiveSchedule, path, keys=None) -> None:
    """CSV keyed by (node, path) or (node, in_edge, out_edge); ``keys`` fixes
    the row set and order (missing keys are written as 0)."""
    keys = list(keys) if keys is not None else list(schedule.values)
    header = ["node", "path"] if schedule.mode == PER_PATH else ["node", "in_edge", "out_edge"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["offset"])
        for k in keys:
            w.writerow(list(k) + [repr(float(schedule.offset(k)))])


def read_incentives(path, bounds=(-np.inf, np.inf)) -> IncentiveSchedule:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        mode = PER_PATH if header[:2] == ["node", "path"] else PER_TURN
        values = {}
        for row in reader:
            if mode == PER_PATH:
                key = (parse_id(row[0]), row[1])
            else:
                key = tuple(parse_id(x) for x in row[:3])
            values[key] = float(row[-1])
    return IncentiveSchedule(mode, values, tuple(bounds))
