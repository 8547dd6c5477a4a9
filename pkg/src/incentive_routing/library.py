"""Small reference networks: Braess (quadratic and quartic edge models), Pigou,
parallel links and a single path."""

from __future__ import annotations

from .costs import Constant, Polynomial
from .network import TERMINAL, Demand, EdgeSpec, Network, NodeSpec

BRAESS_EDGE_MODELS = {
    "quadratic": (0.0, 1.0, -0.5),
    "quartic": (0.0, 0.5, -0.5, -1.0, 2.0),
}

# (node, path) order of the four per-path incentive coordinates
BRAESS_KEYS = [("v", "p1"), ("v", "p2"), ("w", "p2"), ("w", "p3")]


def braess(model: str = "quadratic", demand: float = 1.0) -> Network:
    """s -> {v, w} -> t with the v -> w shortcut; nodes v and w cost their flow.

    Path enumeration yields p1 = s-v-t, p2 = s-v-w-t, p3 = s-w-t.
    """
    try:
        coeffs = BRAESS_EDGE_MODELS[model]
    except KeyError:
        raise ValueError(f"unknown Braess model {model!r}") from None
    c = Polynomial(coeffs)
    nodes = [
        NodeSpec("s", TERMINAL),
        NodeSpec("v", base_cost=Polynomial((0.0, 1.0))),
        NodeSpec("w", base_cost=Polynomial((0.0, 1.0))),
        NodeSpec("t", TERMINAL),
    ]
    edges = [
        EdgeSpec("s", "v", c, "e1"),
        EdgeSpec("s", "w", Constant(1.0), "e2"),
        EdgeSpec("v", "t", Constant(1.0), "e3"),
        EdgeSpec("w", "t", c, "e4"),
        EdgeSpec("v", "w", Constant(0.0), "e5"),
    ]
    return Network(nodes, edges, [Demand("s", "t", demand)], f"braess-{model}")


def pigou(demand: float = 1.0) -> Network:
    """Two parallel links: constant cost 1 and cost equal to flow."""
    nodes = [NodeSpec("s", TERMINAL), NodeSpec("t", TERMINAL)]
    edges = [
        EdgeSpec("s", "t", Constant(1.0), "l1"),
        EdgeSpec("s", "t", Polynomial((0.0, 1.0)), "l2"),
    ]
    return Network(nodes, edges, [Demand("s", "t", demand)], "pigou")


def parallel_links(costs, demand: float = 1.0) -> Network:
    nodes = [NodeSpec("s", TERMINAL), NodeSpec("t", TERMINAL)]
    edges = [EdgeSpec("s", "t", c, f"l{i + 1}") for i, c in enumerate(costs)]
    return Network(nodes, edges, [Demand("s", "t", demand)], "parallel")


def single_path(edge_costs, node_costs=None, demand: float = 1.0) -> Network:
    """A chain n0 -> n1 -> ... with the given edge costs and optional node costs."""
    k = len(edge_costs)
    node_costs = list(node_costs or [])
    nodes = [NodeSpec("n0", TERMINAL)]
    for i in range(1, k):
        base = node_costs[i - 1] if i - 1 < len(node_costs) else Constant(0.0)
        nodes.append(NodeSpec(f"n{i}", base_cost=base))
    nodes.append(NodeSpec(f"n{k}", TERMINAL))
    edges = [EdgeSpec(f"n{i}", f"n{i + 1}", c, f"e{i + 1}") for i, c in enumerate(edge_costs)]
    return Network(nodes, edges, [Demand("n0", f"n{k}", demand)], "chain")


def sioux_falls(node_costs: str | None = "builtin", flow_scale: float | None = None) -> Network:
    """The bundled Sioux Falls network (BPR edges, minutes).

    ``node_costs="builtin"`` attaches the tabulated intersection quartics mapped
    with the calibrated flow scale; ``None`` leaves intersections free.
    """
    from importlib.resources import files

    from .calibration import SIOUX_FLOW_SCALE, apply_node_fits, builtin_sioux_node_costs, sioux_units
    from .io import parse_tntp

    data = files("incentive_routing") / "data"
    net = parse_tntp(
        data / "SiouxFalls_net.tntp", data / "SiouxFalls_trips.tntp", data / "SiouxFalls_node.tntp", "sioux-falls"
    )
    if node_costs is None:
        return net
    if node_costs != "builtin":
        raise ValueError(f"unknown node cost source {node_costs!r}")
    units = sioux_units(SIOUX_FLOW_SCALE if flow_scale is None else flow_scale)
    return apply_node_fits(net, builtin_sioux_node_costs(), units)
