"""Road network data model: nodes with intersection costs, edges, OD demand,
paths, flows, incentive schedules, and the cost evaluations on top of them."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .costs import ZERO, CostFunction

INTERSECTION = "intersection"
TERMINAL = "terminal"

PER_PATH = "per_path"
PER_TURN = "per_turn"


class StructureError(ValueError):
    """A reference to a node, edge, path or movement that does not exist."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


def sort_key(node_id: Hashable):
    # ints before strings; keeps mixed-id networks orderable
    return (isinstance(node_id, str), node_id)


@dataclass(frozen=True)
class NodeSpec:
    id: Hashable
    role: str = INTERSECTION
    base_cost: CostFunction = ZERO

    def __post_init__(self):
        if self.role not in (INTERSECTION, TERMINAL):
            raise ValueError(f"unknown node role {self.role!r}")
        if self.role == TERMINAL and not self.base_cost.is_zero():
            raise ContractError(f"terminal node {self.id!r} must have zero base cost")


@dataclass(frozen=True)
class EdgeSpec:
    tail: Hashable
    head: Hashable
    cost: CostFunction
    id: Hashable = None


@dataclass(frozen=True)
class Demand:
    origin: Hashable
    destination: Hashable
    demand: float


class Network:
    """Directed multigraph with edge and node cost functions and OD demands.

    Edges are addressed by their ``id`` (defaults to the position in the edge
    list) and internally by index.  Parallel edges are allowed.
    """

    def __init__(
        self,
        nodes: Sequence[NodeSpec],
        edges: Sequence[EdgeSpec],
        demands: Sequence[Demand | tuple] = (),
        name: str = "",
        coordinates: Mapping[Hashable, tuple[float, float]] | None = None,
    ):
        self.name = name
        self.nodes = tuple(nodes)
        self.node_index = {}
        for i, n in enumerate(self.nodes):
            if n.id in self.node_index:
                raise StructureError(f"duplicate node id {n.id!r}")
            self.node_index[n.id] = i

        fixed = []
        for i, e in enumerate(edges):
            if e.id is None:
                e = EdgeSpec(e.tail, e.head, e.cost, i)
            fixed.append(e)
        self.edges = tuple(fixed)
        self.edge_index = {}
        for i, e in enumerate(self.edges):
            if e.tail not in self.node_index or e.head not in self.node_index:
                raise StructureError(f"edge {e.id!r} references unknown node")
            if e.tail == e.head:
                raise StructureError(f"edge {e.id!r} is a self-loop")
            if e.id in self.edge_index:
                raise StructureError(f"duplicate edge id {e.id!r}")
            self.edge_index[e.id] = i

        self._out = {n.id: [] for n in self.nodes}
        self._in = {n.id: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            self._out[e.tail].append(i)
            self._in[e.head].append(i)
        for adj in (self._out, self._in):
            for k in adj:
                adj[k].sort(key=lambda i: (sort_key(self.edges[i].head), sort_key(self.edges[i].tail), i))

        self.demands = tuple(d if isinstance(d, Demand) else Demand(*d) for d in demands)
        for d in self.demands:
            if d.origin not in self.node_index or d.destination not in self.node_index:
                raise StructureError(f"demand {d} references unknown node")
            if d.demand < 0:
                raise ContractError(f"negative demand {d}")
            if d.origin == d.destination:
                raise ContractError(f"demand {d} has identical origin and destination")
            if not self.reachable(d.origin, d.destination):
                raise StructureError(f"no path from {d.origin!r} to {d.destination!r}")
        self.coordinates = dict(coordinates or {})

    def __repr__(self):
        return (
            f"Network({self.name!r}, nodes={len(self.nodes)}, edges={len(self.edges)}, "
            f"od_pairs={len(self.demands)})"
        )

    # -- structure ----------------------------------------------------------

    def out_edges(self, node_id) -> list[int]:
        return self._out[node_id]

    def in_edges(self, node_id) -> list[int]:
        return self._in[node_id]

    def node(self, node_id) -> NodeSpec:
        try:
            return self.nodes[self.node_index[node_id]]
        except KeyError:
            raise StructureError(f"unknown node {node_id!r}") from None

    def edge(self, edge_id) -> EdgeSpec:
        try:
            return self.edges[self.edge_index[edge_id]]
        except KeyError:
            raise StructureError(f"unknown edge {edge_id!r}") from None

    def reachable(self, origin, destination) -> bool:
        seen = {origin}
        queue = deque([origin])
        while queue:
            v = queue.popleft()
            if v == destination:
                return True
            for i in self._out[v]:
                h = self.edges[i].head
                if h not in seen:
                    seen.add(h)
                    queue.append(h)
        return False

    @property
    def total_demand(self) -> float:
        return float(sum(d.demand for d in self.demands))

    def require_demand(self):
        if not self.demands or self.total_demand <= 0:
            raise ContractError("network has zero total demand")

    def movements(self) -> list[tuple]:
        """All (node, in_edge_id, out_edge_id) turns at intersections, U-turns excluded."""
        out = []
        for n in sorted(self.nodes, key=lambda n: sort_key(n.id)):
            if n.role != INTERSECTION:
                continue
            for i in self._in[n.id]:
                for j in self._out[n.id]:
                    if self.edges[i].tail == self.edges[j].head:
                        continue
                    out.append((n.id, self.edges[i].id, self.edges[j].id))
        return out

    def with_demands(self, demands) -> "Network":
        return Network(self.nodes, self.edges, demands, self.name, self.coordinates)

    def with_node_costs(self, costs: Mapping[Hashable, CostFunction]) -> "Network":
        nodes = [
            NodeSpec(n.id, INTERSECTION if n.id in costs else n.role, costs.get(n.id, n.base_cost))
            for n in self.nodes
        ]
        return Network(nodes, self.edges, self.demands, self.name, self.coordinates)

    def without_node_costs(self) -> "Network":
        nodes = [NodeSpec(n.id, n.role, ZERO) for n in self.nodes]
        return Network(nodes, self.edges, self.demands, self.name, self.coordinates)

    def same_structure(self, other: "Network") -> bool:
        return [n.id for n in self.nodes] == [n.id for n in other.nodes] and [
            (e.id, e.tail, e.head) for e in self.edges
        ] == [(e.id, e.tail, e.head) for e in other.edges]


# -- paths -------------------------------------------------------------------


@dataclass(frozen=True)
class Path:
    od_index: int
    nodes: tuple
    edges: tuple  # edge indices into Network.edges
    name: str = ""

    @property
    def intermediate(self) -> tuple:
        return self.nodes[1:-1]

    def movements(self, network: Network) -> list[tuple]:
        """The (node, in_edge_id, out_edge_id) turns taken at each intermediate node."""
        return [
            (v, network.edges[self.edges[k]].id, network.edges[self.edges[k + 1]].id)
            for k, v in enumerate(self.intermediate)
        ]

    def validate(self, network: Network) -> None:
        if len(self.edges) != len(self.nodes) - 1 or len(set(self.nodes)) != len(self.nodes):
            raise StructureError(f"path {self.name!r} is not a simple node/edge sequence")
        for k, i in enumerate(self.edges):
            if not 0 <= i < len(network.edges):
                raise StructureError(f"path {self.name!r} uses unknown edge index {i}")
            e = network.edges[i]
            if e.tail != self.nodes[k] or e.head != self.nodes[k + 1]:
                raise StructureError(f"path {self.name!r} edge {e.id!r} does not match node sequence")
        d = network.demands[self.od_index]
        if self.nodes[0] != d.origin or self.nodes[-1] != d.destination:
            raise StructureError(f"path {self.name!r} does not connect its OD pair")


@dataclass
class PathSet:
    paths: list[Path]
    truncated: bool = False

    def __len__(self):
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)

    def __getitem__(self, i):
        return self.paths[i]

    def by_name(self, name: str) -> Path:
        for p in self.paths:
            if p.name == name:
                return p
        raise StructureError(f"unknown path {name!r}")

    def index(self, name: str) -> int:
        for i, p in enumerate(self.paths):
            if p.name == name:
                return i
        raise StructureError(f"unknown path {name!r}")

    def od_indices(self) -> np.ndarray:
        return np.array([p.od_index for p in self.paths], dtype=np.int64)


def _zero_flow_cost(network: Network, nodes, edges) -> float:
    c = sum(float(network.edges[i].cost.evaluate(0.0)) for i in edges)
    c += sum(float(network.node(v).base_cost.evaluate(0.0)) for v in nodes[1:-1])
    return c


def enumerate_paths(
    network: Network,
    od: int | None = None,
    max_paths: int = 10_000,
    max_cost_factor: float | None = None,
) -> PathSet:
    """Depth-first enumeration of simple paths, lexicographic in node ids.

    ``max_paths`` caps the count per OD pair; ``max_cost_factor`` drops paths whose
    zero-flow cost exceeds that multiple of the cheapest enumerated one.  Hitting
    the path cap sets ``truncated``.
    """
    ods = range(len(network.demands)) if od is None else [od]
    paths: list[Path] = []
    truncated = False
    for k in ods:
        d = network.demands[k]
        found: list[tuple[tuple, tuple]] = []
        stack = [(d.origin, (d.origin,), ())]
        # iterative DFS; children pushed in reverse so the smallest id is expanded first
        while stack:
            v, nodes, edges = stack.pop()
            if v == d.destination:
                found.append((nodes, edges))
                if len(found) >= max_paths:
                    truncated = bool(stack)
                    break
                continue
            children = []
            for i in network.out_edges(v):
                h = network.edges[i].head
                if h not in nodes:
                    children.append((h, nodes + (h,), edges + (i,)))
            stack.extend(reversed(children))
        if max_cost_factor is not None and found:
            costs = [_zero_flow_cost(network, n, e) for n, e in found]
            best = min(costs)
            found = [f for f, c in zip(found, costs) if c <= max_cost_factor * best + 1e-12]
        for nodes, edges in found:
            paths.append(Path(k, nodes, edges, f"p{len(paths) + 1}"))
    return PathSet(paths, truncated)


# -- flows --------------------------------------------------------------------


@dataclass
class FlowAssignment:
    """Edge and node flows, plus path flows (path mode) or turn flows (turn mode)."""

    network: Network
    edge_flows: np.ndarray
    node_flows: np.ndarray
    path_flows: np.ndarray | None = None
    paths: PathSet | None = None
    movement_flows: dict | None = None

    def edge_flow(self, edge_id) -> float:
        return float(self.edge_flows[self.network.edge_index[edge_id]])

    def node_flow(self, node_id) -> float:
        return float(self.node_flows[self.network.node_index[node_id]])

    def path_flow(self, name: str) -> float:
        if self.path_flows is None:
            raise ContractError("assignment has no path flows")
        return float(self.path_flows[self.paths.index(name)])

    def check_feasible(self, tol: float = 1e-9) -> None:
        if self.path_flows is None:
            return
        if np.any(self.path_flows < -tol):
            raise ContractError("negative path flow")
        sums = np.bincount(self.paths.od_indices(), self.path_flows, len(self.network.demands))
        target = np.array([d.demand for d in self.network.demands])
        if not np.allclose(sums, target, atol=tol * max(1.0, target.max())):
            raise ContractError("path flows do not meet OD demand")


def incidence(network: Network, paths: PathSet) -> tuple[np.ndarray, np.ndarray]:
    """Dense edge-path and node-path incidence (intermediate nodes only)."""
    E = np.zeros((len(network.edges), len(paths)))
    V = np.zeros((len(network.nodes), len(paths)))
    for j, p in enumerate(paths):
        E[list(p.edges), j] = 1.0
        for v in p.intermediate:
            V[network.node_index[v], j] = 1.0
    return E, V


def aggregate_flows(path_flows, paths: PathSet, network: Network) -> FlowAssignment:
    """Edge flow = sum of flows of paths using the edge; node flow counts only
    paths for which the node is intermediate."""
    f = np.asarray(path_flows, dtype=float)
    if f.shape != (len(paths),):
        raise StructureError(f"expected {len(paths)} path flows, got shape {f.shape}")
    if np.any(f < 0):
        raise ContractError("path flows must be non-negative")
    edge = np.zeros(len(network.edges))
    node = np.zeros(len(network.nodes))
    for fp, p in zip(f, paths):
        if fp == 0.0:
            continue
        for i in p.edges:
            if not 0 <= i < len(network.edges):
                raise StructureError(f"path {p.name!r} uses unknown edge index {i}")
            edge[i] += fp
        for v in p.intermediate:
            node[network.node_index[v]] += fp
    return FlowAssignment(network, edge, node, f.copy(), paths)


def flows_from_dict(network: Network, paths: PathSet, flows: Mapping[str, float]) -> FlowAssignment:
    vec = np.zeros(len(paths))
    for name, value in flows.items():
        vec[paths.index(name)] = value
    return aggregate_flows(vec, paths, network)


# -- incentives -----------------------------------------------------------------


@dataclass
class IncentiveSchedule:
    """Additive intersection offsets keyed by (node, path) or (node, in_edge, out_edge).

    Missing keys read as zero.  ``bounds`` gives the default box for every key,
    ``key_bounds`` overrides it per key.
    """

    mode: str = PER_PATH
    values: dict = field(default_factory=dict)
    bounds: tuple[float, float] = (-np.inf, np.inf)
    key_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (PER_PATH, PER_TURN):
            raise ValueError(f"unknown incentive mode {self.mode!r}")
        self.values = {tuple(k): float(v) for k, v in self.values.items()}
        lo, hi = self.bounds
        if lo > hi:
            raise ContractError(f"empty incentive bounds {self.bounds}")
        for k, v in self.values.items():
            klo, khi = self.bounds_for(k)
            if not klo - 1e-12 <= v <= khi + 1e-12:
                raise ContractError(f"incentive {k}={v} outside bounds [{klo}, {khi}]")

    @classmethod
    def zero(cls, mode: str = PER_PATH) -> "IncentiveSchedule":
        return cls(mode)

    def bounds_for(self, key) -> tuple[float, float]:
        return self.key_bounds.get(tuple(key), self.bounds)

    def offset(self, key) -> float:
        return self.values.get(tuple(key), 0.0)

    def with_values(self, values: Mapping) -> "IncentiveSchedule":
        return IncentiveSchedule(self.mode, dict(values), self.bounds, dict(self.key_bounds))

    def vector(self, keys: Sequence) -> np.ndarray:
        return np.array([self.offset(k) for k in keys], dtype=float)

    def from_vector(self, keys: Sequence, vec) -> "IncentiveSchedule":
        return self.with_values({tuple(k): float(x) for k, x in zip(keys, vec) if x != 0.0})

    def validate(self, network: Network, paths: PathSet | None = None) -> None:
        """Check key references and that no offset can drive a node cost negative."""
        names = {p.name for p in paths} if paths is not None else None
        for key in self.values:
            node = key[0]
            info = network.node(node)
            if self.mode == PER_PATH:
                if names is not None and key[1] not in names:
                    raise StructureError(f"incentive key {key} names unknown path")
            else:
                if len(key) != 3:
                    raise StructureError(f"per-turn key {key} must be (node, in_edge, out_edge)")
                ein, eout = network.edge(key[1]), network.edge(key[2])
                if ein.head != node or eout.tail != node:
                    raise StructureError(f"movement {key} does not pass through node {node!r}")
            lo, _ = self.bounds_for(key)
            floor = -info.base_cost.min_value()
            if min(lo, self.values[key]) < floor - 1e-12:
                raise ContractError(
                    f"incentive key {key}: lower bound {lo} below -min node cost {floor:.6g}"
                )

    def path_offsets(self, path: Path, network: Network) -> list[float]:
        """u_v^p for each intermediate node of ``path``."""
        if self.mode == PER_PATH:
            return [self.offset((v, path.name)) for v in path.intermediate]
        return [self.offset(m) for m in path.movements(network)]

    def path_total(self, path: Path, network: Network) -> float:
        return float(sum(self.path_offsets(path, network)))


NO_INCENTIVES = IncentiveSchedule()


def path_incentive_vector(paths: PathSet, network: Network, incentives: IncentiveSchedule | None):
    if incentives is None:
        return np.zeros(len(paths))
    return np.array([incentives.path_total(p, network) for p in paths])


# -- cost evaluation -------------------------------------------------------------


def node_cost(network: Network, node_id, flow: float, offset: float = 0.0) -> float:
    if flow < 0:
        raise ContractError("node flow must be non-negative")
    value = float(network.node(node_id).base_cost.evaluate(flow)) + offset
    if value < -1e-12:
        raise ContractError(f"node {node_id!r} cost {value} is negative; offset out of bounds")
    return value


def edge_costs(flows: FlowAssignment) -> np.ndarray:
    net = flows.network
    return np.array([float(e.cost.evaluate(x)) for e, x in zip(net.edges, flows.edge_flows)])


def node_costs(flows: FlowAssignment) -> np.ndarray:
    net = flows.network
    return np.array([float(n.base_cost.evaluate(x)) for n, x in zip(net.nodes, flows.node_flows)])


def path_cost(path: Path, flows: FlowAssignment, incentives: IncentiveSchedule | None = None) -> float:
    net = flows.network
    total = 0.0
    for i in path.edges:
        total += float(net.edges[i].cost.evaluate(flows.edge_flows[i]))
    offsets = (
        incentives.path_offsets(path, net) if incentives is not None else [0.0] * len(path.intermediate)
    )
    for v, u in zip(path.intermediate, offsets):
        total += node_cost(net, v, flows.node_flows[net.node_index[v]], u)
    return total


def path_costs(flows: FlowAssignment, incentives: IncentiveSchedule | None = None) -> np.ndarray:
    if flows.paths is None:
        raise ContractError("path costs need an enumerated path set")
    return np.array([path_cost(p, flows, incentives) for p in flows.paths])


def base_social_cost(flows: FlowAssignment) -> float:
    """C° = sum_e c_e(f_e) f_e + sum_v c_v(f_v) f_v."""
    return float(edge_costs(flows) @ flows.edge_flows + node_costs(flows) @ flows.node_flows)


def decompose_social_cost(
    flows: FlowAssignment, incentives: IncentiveSchedule | None = None
) -> tuple[float, float]:
    """Split C(f, u) into the incentive-free part C°(f) and the term sum_p f_p u_p."""
    base = base_social_cost(flows)
    if incentives is None:
        return base, 0.0
    if flows.path_flows is not None:
        u = path_incentive_vector(flows.paths, flows.network, incentives)
        return base, float(u @ flows.path_flows)
    if incentives.mode != PER_TURN:
        raise ContractError("edge-based flows carry only per-turn incentive terms")
    moves = flows.movement_flows or {}
    return base, float(sum(incentives.offset(k) * x for k, x in moves.items()))


def social_cost(flows: FlowAssignment, incentives: IncentiveSchedule | None = None) -> float:
    """C(f, u) = sum_p c_p(f, u) f_p; for edge-based flows, C° plus the turn term."""
    if flows.path_flows is not None:
        return float(path_costs(flows, incentives) @ flows.path_flows)
    base, extra = decompose_social_cost(flows, incentives)
    return base + extra


def per_path_keys(network: Network, paths: Iterable[Path]) -> list[tuple]:
    """Every (intersection, path) pair a per-path schedule can address."""
    keys = []
    for p in paths:
        for v in p.intermediate:
            if network.node(v).role == INTERSECTION:
                keys.append((v, p.name))
    return sorted(keys, key=lambda k: (sort_key(k[0]), _path_number(k[1])))


def _path_number(name: str):
    digits = "".join(ch for ch in name if ch.isdigit())
    return (int(digits) if digits else 0, name)
