"""Rewrite path-specific intersection costs as ordinary routing structure.

``split_nodes_transform`` follows the per-path construction: each intersection
becomes a serial congestion edge followed by one constant-cost parallel edge per
path through it.  ``turn_expand`` builds the per-turn counterpart used by the
link-based solver, where the path identity at a node is the turn it takes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import Constant, CostBank, Shifted
from .network import (
    INTERSECTION,
    PER_PATH,
    PER_TURN,
    ContractError,
    Demand,
    EdgeSpec,
    FlowAssignment,
    IncentiveSchedule,
    Network,
    NodeSpec,
    Path,
    PathSet,
    StructureError,
)


def _split_ids(v):
    return f"{v}:in", f"{v}:mid", f"{v}:out"


def split_nodes_transform(
    network: Network, paths: PathSet, incentives: IncentiveSchedule | None = None
) -> tuple[Network, dict[str, Path]]:
    """Return the classical network and a map from each original path name to
    its transformed path, whose cost equals the original incentivized cost."""
    incentives = incentives or IncentiveSchedule(PER_PATH)
    if incentives.mode != PER_PATH:
        raise ContractError("split_nodes_transform needs per-path incentives; use turn_expand")

    through: dict = {}
    for p in paths:
        for v in p.intermediate:
            if network.node(v).role == INTERSECTION:
                through.setdefault(v, []).append(p)
    split = set(through)

    def entry(v):
        return _split_ids(v)[0] if v in split else v

    def exit_(v):
        return _split_ids(v)[2] if v in split else v

    nodes = []
    for n in network.nodes:
        if n.id in split:
            nodes.extend(NodeSpec(i) for i in _split_ids(n.id))
        else:
            nodes.append(n)

    edges = [EdgeSpec(exit_(e.tail), entry(e.head), e.cost, e.id) for e in network.edges]
    serial_index = {}
    parallel_index = {}
    for v in sorted(split, key=lambda v: network.node_index[v]):
        v_in, v_mid, v_out = _split_ids(v)
        offsets = [incentives.offset((v, p.name)) for p in through[v]]
        # push any negative offset into the serial edge so both pieces stay non-negative
        shift = max(0.0, -min(offsets))
        base = network.node(v).base_cost
        serial_cost = Shifted(base, -shift) if shift else base
        serial_index[v] = len(edges)
        edges.append(EdgeSpec(v_in, v_mid, serial_cost, f"{v}:node"))
        for p, u in zip(through[v], offsets):
            parallel_index[(v, p.name)] = len(edges)
            edges.append(EdgeSpec(v_mid, v_out, Constant(u + shift), f"{v}:{p.name}"))

    demands = [Demand(exit_(d.origin), entry(d.destination), d.demand) for d in network.demands]
    out = Network(nodes, edges, demands, network.name + "+split", network.coordinates)

    mapping = {}
    for p in paths:
        seq = [exit_(p.nodes[0])]
        eseq = []
        for k, i in enumerate(p.edges):
            eseq.append(i)
            h = p.nodes[k + 1]
            if k + 1 < len(p.nodes) - 1 and h in split:
                v_in, v_mid, v_out = _split_ids(h)
                seq += [v_in, v_mid, v_out]
                eseq += [serial_index[h], parallel_index[(h, p.name)]]
            else:
                seq.append(entry(h) if k + 1 == len(p.nodes) - 1 else h)
        mapping[p.name] = Path(p.od_index, tuple(seq), tuple(eseq), p.name)
    return out, mapping


@dataclass
class ExpandedNetwork:
    """Turn-expanded graph for link-based assignment.

    States are edge tails/heads (``2*i`` and ``2*i+1`` for edge ``i``) plus a
    source and a sink state per node.  Every link touches at most one shared
    resource: an original edge (``link_edge``) or an intersection
    (``link_node``, shared by all turns through it and charging ``c_v`` of their
    summed flow) plus a constant offset ``link_const``.
    """

    network: Network
    n_states: int
    link_tail: np.ndarray
    link_head: np.ndarray
    link_edge: np.ndarray
    link_node: np.ndarray
    link_const: np.ndarray
    movement_keys: list
    movement_links: np.ndarray
    source_state: np.ndarray
    sink_state: np.ndarray
    csr_start: np.ndarray = field(repr=False, default=None)
    csr_links: np.ndarray = field(repr=False, default=None)

    @property
    def n_links(self) -> int:
        return len(self.link_tail)

    @property
    def n_resources(self) -> int:
        return len(self.network.edges) + len(self.network.nodes)

    def link_resource(self) -> np.ndarray:
        """Resource index per link (edges first, then nodes), -1 for none."""
        n_e = len(self.network.edges)
        res = np.where(self.link_edge >= 0, self.link_edge, -1)
        return np.where(self.link_node >= 0, n_e + self.link_node, res).astype(np.int64)

    def cost_bank(self) -> CostBank:
        net = self.network
        return CostBank([e.cost for e in net.edges] + [n.base_cost for n in net.nodes])

    def serial_nodes(self) -> list:
        """Intersections whose congestion is carried by a shared (serial) resource."""
        used = sorted(set(int(v) for v in self.link_node if v >= 0))
        return [self.network.nodes[i].id for i in used]

    def movements_at(self, node_id) -> list:
        return [k for k in self.movement_keys if k[0] == node_id]

    def with_incentives(self, incentives: IncentiveSchedule | None) -> "ExpandedNetwork":
        const = _movement_consts(self.network, self.movement_keys, incentives)
        link_const = self.link_const.copy()
        link_const[self.movement_links] = const
        return ExpandedNetwork(
            self.network, self.n_states, self.link_tail, self.link_head, self.link_edge,
            self.link_node, link_const, self.movement_keys, self.movement_links,
            self.source_state, self.sink_state, self.csr_start, self.csr_links,
        )

    def assignment(self, link_flows: np.ndarray) -> FlowAssignment:
        net = self.network
        x = np.asarray(link_flows, dtype=float)
        edge = np.zeros(len(net.edges))
        np.add.at(edge, self.link_edge[self.link_edge >= 0], x[self.link_edge >= 0])
        node = np.zeros(len(net.nodes))
        np.add.at(node, self.link_node[self.link_node >= 0], x[self.link_node >= 0])
        moves = {k: float(x[j]) for k, j in zip(self.movement_keys, self.movement_links)}
        return FlowAssignment(net, edge, node, movement_flows=moves)


def _movement_consts(network, keys, incentives):
    if incentives is None or not incentives.values:
        return np.zeros(len(keys))
    if incentives.mode != PER_TURN:
        raise ContractError("turn_expand needs per-turn incentives")
    known = set(keys)
    for k in incentives.values:
        if k not in known:
            node, ein, eout = (tuple(k) + (None, None, None))[:3]
            # distinguish malformed references from legal-but-unexpanded turns
            network.node(node)
            network.edge(ein)
            network.edge(eout)
            raise StructureError(f"movement {k} is not a feasible turn")
    return np.array([incentives.offset(k) for k in keys])


def turn_expand(network: Network, incentives: IncentiveSchedule | None = None) -> ExpandedNetwork:
    """Expand every intersection into its turn movements."""
    if incentives is not None and incentives.values and incentives.mode != PER_TURN:
        raise ContractError("turn_expand needs per-turn incentives; use split_nodes_transform")
    n_e = len(network.edges)
    n_v = len(network.nodes)
    source_state = 2 * n_e + np.arange(n_v)
    sink_state = 2 * n_e + n_v + np.arange(n_v)
    tail, head, edge, node, const = [], [], [], [], []

    def add(t, h, e=-1, v=-1):
        tail.append(t)
        head.append(h)
        edge.append(e)
        node.append(v)
        const.append(0.0)
        return len(tail) - 1

    for i in range(n_e):
        add(2 * i, 2 * i + 1, e=i)
    keys = network.movements()
    mlinks = []
    for v, ein, eout in keys:
        vi = network.node_index[v]
        i, j = network.edge_index[ein], network.edge_index[eout]
        mlinks.append(add(2 * i + 1, 2 * j, v=vi))
    # pass-through at non-intersection nodes: free, not incentivized
    for n in network.nodes:
        if n.role == INTERSECTION:
            continue
        for i in network.in_edges(n.id):
            for j in network.out_edges(n.id):
                if network.edges[i].tail != network.edges[j].head:
                    add(2 * i + 1, 2 * j)
    for n in network.nodes:
        vi = network.node_index[n.id]
        for j in network.out_edges(n.id):
            add(int(source_state[vi]), 2 * j)
        for i in network.in_edges(n.id):
            add(2 * i + 1, int(sink_state[vi]))

    tail = np.array(tail, dtype=np.int64)
    order = np.lexsort((np.arange(len(tail)), tail))
    n_states = 2 * n_e + 2 * n_v
    start = np.zeros(n_states + 1, dtype=np.int64)
    np.add.at(start, tail + 1, 1)
    start = np.cumsum(start)
    exp = ExpandedNetwork(
        network=network,
        n_states=n_states,
        link_tail=tail,
        link_head=np.array(head, dtype=np.int64),
        link_edge=np.array(edge, dtype=np.int64),
        link_node=np.array(node, dtype=np.int64),
        link_const=np.array(const, dtype=float),
        movement_keys=keys,
        movement_links=np.array(mlinks, dtype=np.int64),
        source_state=source_state.astype(np.int64),
        sink_state=sink_state.astype(np.int64),
        csr_start=start,
        csr_links=order.astype(np.int64),
    )
    return exp.with_incentives(incentives)
