"""User equilibrium and system optimum by Frank-Wolfe, plus verification tools.

Two problem layouts share the compiled solver:

* path mode: columns are enumerated paths; per-path incentives are arbitrary.
* link mode: columns are links of the turn-expanded graph; incentives are per
  turn and paths are never materialized (used for Sioux Falls).

Both minimize the potential (UE) or the incentive-free social cost via marginal
costs (SO) over the same resources: every edge and every intersection.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _kernels as K
from .costs import CostBank
from .network import (
    PER_TURN,
    ContractError,
    FlowAssignment,
    IncentiveSchedule,
    Network,
    PathSet,
    StructureError,
    aggregate_flows,
    decompose_social_cost,
    enumerate_paths,
    incidence,
    path_costs,
    path_incentive_vector,
)
from .transforms import ExpandedNetwork, turn_expand

STEP_RULES = {
    "harmonic": K.HARMONIC,
    "harmonic_2_over_k_plus_2": K.HARMONIC,
    "exact": K.EXACT,
    "exact_line_search": K.EXACT,
    "conjugate": K.CONJUGATE,
    "away_step": K.AWAY,
    "biconjugate": K.BICONJUGATE,
}

# networks up to this many nodes default to path enumeration
PATH_MODE_NODE_LIMIT = 12


@dataclass
class SolveOptions:
    """Frank-Wolfe controls.

    ``step_rule`` is one of ``harmonic`` (2/(k+2)), ``exact`` (bisection line
    search), ``conjugate`` (conjugate directions with exact search), ``away_step``
    (path mode only) or ``auto``, which picks away steps in path mode and
    conjugate directions in link mode.
    """

    relative_gap_tolerance: float = 1e-6
    max_iterations: int = 5000
    step_rule: str = "auto"
    record_trace: bool = False
    seed: int | None = None

    def __post_init__(self):
        if not self.relative_gap_tolerance > 0:
            raise ContractError("relative_gap_tolerance must be positive")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be at least 1")
        if self.step_rule != "auto" and self.step_rule not in STEP_RULES:
            raise ContractError(f"unknown step rule {self.step_rule!r}")

    def rule_code(self, mode: int) -> int:
        if self.step_rule == "auto":
            return K.AWAY if mode == K.PATH_MODE else K.BICONJUGATE
        code = STEP_RULES[self.step_rule]
        if code == K.AWAY and mode != K.PATH_MODE:
            raise ContractError("away steps need path mode")
        return code


@dataclass
class EquilibriumResult:
    flows: FlowAssignment
    relative_gap: float
    potential_value: float
    social_cost: float
    iterations: int
    converged: bool
    column_flows: np.ndarray = field(repr=False)
    trace: np.ndarray | None = field(default=None, repr=False)
    objective: str = "ue"

    def write_trace(self, path) -> None:
        """CSV of (iteration, potential, social_cost, relative_gap)."""
        if self.trace is None:
            raise ContractError("solve was run without record_trace")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "potential", "social_cost", "relative_gap"])
            for k, (obj, soc, gap) in enumerate(self.trace):
                w.writerow([k, repr(float(obj)), repr(float(soc)), repr(float(gap))])


class AssignmentProblem:
    """Column/resource arrays of one network layout, reusable across incentives.

    Build with :meth:`paths` or :meth:`links`; :meth:`solve` runs Frank-Wolfe for
    a given incentive schedule.
    """

    def __init__(self, network: Network, mode: int):
        network.require_demand()
        self.network = network
        self.mode = mode
        bank = CostBank([e.cost for e in network.edges] + [n.base_cost for n in network.nodes])
        self.bank = bank.arrays
        self.n_res = len(bank)
        self.od_demand = np.array([d.demand for d in network.demands], dtype=float)
        self.path_set: PathSet | None = None
        self.expanded: ExpandedNetwork | None = None

    # -- construction ---------------------------------------------------------

    @classmethod
    def paths(cls, network: Network, paths: PathSet | None = None) -> "AssignmentProblem":
        if paths is None:
            paths = enumerate_paths(network)
            if paths.truncated:
                raise ContractError("path enumeration truncated; use link mode")
        self = cls(network, K.PATH_MODE)
        n_od = len(network.demands)
        od = paths.od_indices()
        self.order = np.argsort(od, kind="stable")
        self.path_set = paths
        counts = np.bincount(od, minlength=n_od)
        for k in range(n_od):
            if counts[k] == 0 and self.od_demand[k] > 0:
                d = network.demands[k]
                raise StructureError(f"no path supplied for OD {d.origin!r}->{d.destination!r}")
        self.od_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        n_e = len(network.edges)
        ptr, res = [0], []
        for j in self.order:
            p = paths[j]
            p.validate(network)
            res.extend(p.edges)
            res.extend(n_e + network.node_index[v] for v in p.intermediate)
            ptr.append(len(res))
        self.col_ptr = np.array(ptr, dtype=np.int64)
        self.col_res = np.array(res, dtype=np.int64)
        self.n_col = len(paths)
        self._empty_link_arrays()
        return self

    @classmethod
    def links(cls, network: Network, expanded: ExpandedNetwork | None = None) -> "AssignmentProblem":
        expanded = expanded or turn_expand(network)
        self = cls(network, K.LINK_MODE)
        self.expanded = expanded
        res = expanded.link_resource()
        has = res >= 0
        self.col_ptr = np.concatenate([[0], np.cumsum(has)]).astype(np.int64)
        self.col_res = res[has].astype(np.int64)
        self.n_col = expanded.n_links
        origins = np.array(
            [expanded.source_state[network.node_index[d.origin]] for d in network.demands], dtype=np.int64
        )
        dests = np.array(
            [expanded.sink_state[network.node_index[d.destination]] for d in network.demands], dtype=np.int64
        )
        order = np.lexsort((dests, origins))
        self.od_order = order
        self.od_origin = origins[order]
        self.od_dest = dests[order]
        self.od_demand_sorted = self.od_demand[order]
        self.od_start = np.zeros(1, dtype=np.int64)
        return self

    @classmethod
    def auto(cls, network: Network, incentives: IncentiveSchedule | None = None, paths=None):
        if paths is not None:
            return cls.paths(network, paths)
        if incentives is not None and incentives.mode == PER_TURN:
            return cls.links(network)
        if incentives is not None and incentives.values:
            return cls.paths(network)
        if len(network.nodes) <= PATH_MODE_NODE_LIMIT:
            return cls.paths(network)
        return cls.links(network)

    def _empty_link_arrays(self):
        self.od_origin = np.zeros(0, dtype=np.int64)
        self.od_dest = np.zeros(0, dtype=np.int64)
        self.od_demand_sorted = self.od_demand

    # -- incentives -----------------------------------------------------------

    def column_constants(self, incentives: IncentiveSchedule | None) -> np.ndarray:
        if incentives is not None and incentives.values:
            incentives.validate(self.network, self.path_set)
        if self.mode == K.PATH_MODE:
            if incentives is None:
                return np.zeros(self.n_col)
            return path_incentive_vector(self.path_set, self.network, incentives)[self.order]
        if incentives is not None and incentives.values and incentives.mode != PER_TURN:
            raise ContractError("link mode takes per-turn incentives")
        return self.expanded.with_incentives(incentives).link_const

    def keys(self) -> list:
        """Incentive keys addressable in this layout."""
        if self.mode == K.PATH_MODE:
            from .network import per_path_keys

            return per_path_keys(self.network, self.path_set)
        return list(self.expanded.movement_keys)

    # -- solving --------------------------------------------------------------

    def solve(
        self,
        incentives: IncentiveSchedule | None = None,
        options: SolveOptions | None = None,
        objective: str = "ue",
        initial: np.ndarray | None = None,
    ) -> EquilibriumResult:
        """Run Frank-Wolfe.  ``initial`` is a feasible column-flow vector in this
        problem's column order (e.g. ``result.column_flows`` of an earlier solve)."""
        kind = {"ue": K.UE, "so": K.SO}[objective]
        const = self.column_constants(incentives) if kind == K.UE else np.zeros(self.n_col)
        return self.solve_constants(const, options, objective, initial)

    def solve_constants(
        self,
        const: np.ndarray,
        options: SolveOptions | None = None,
        objective: str = "ue",
        initial: np.ndarray | None = None,
    ) -> EquilibriumResult:
        """Frank-Wolfe with per-column constant offsets given directly."""
        options = options or SolveOptions()
        kind = {"ue": K.UE, "so": K.SO}[objective]
        const = np.asarray(const, dtype=float)
        x0 = np.zeros(0) if initial is None else np.asarray(initial, dtype=float)
        if x0.size and x0.shape != (self.n_col,):
            raise ContractError(f"initial flows must have {self.n_col} entries")
        x, gap, it, trace, status = K.frank_wolfe(
            x0, self.mode, kind, options.rule_code(self.mode),
            float(options.relative_gap_tolerance), int(options.max_iterations),
            self.col_ptr, self.col_res, const, self.n_res, *self.bank,
            self.od_start, self.od_demand_sorted,
            self.od_origin, self.od_dest,
            *self._graph_arrays(),
        )
        if status == 2:
            raise StructureError("a destination is unreachable in the expanded graph")
        if status == 3:
            raise ContractError("negative link costs; a cost function left its valid domain")
        return self._result(x, const, gap, it, trace, status == 0, options, objective)

    def key_columns(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """(column, key) index pairs: column j carries the offset of key k.

        Constants for an incentive vector u are ``bincount(col, u[key])``.
        """
        pos = {tuple(k): i for i, k in enumerate(keys)}
        cols, ks = [], []
        if self.mode == K.PATH_MODE:
            for j, idx in enumerate(self.order):
                p = self.path_set[idx]
                for v in p.intermediate:
                    i = pos.get((v, p.name))
                    if i is not None:
                        cols.append(j)
                        ks.append(i)
        else:
            for key, link in zip(self.expanded.movement_keys, self.expanded.movement_links):
                i = pos.get(tuple(key))
                if i is not None:
                    cols.append(int(link))
                    ks.append(i)
        return np.array(cols, dtype=np.int64), np.array(ks, dtype=np.int64)

    def constants_from_vector(self, key_cols, vec) -> np.ndarray:
        cols, ks = key_cols
        return np.bincount(cols, np.asarray(vec, dtype=float)[ks], minlength=self.n_col)

    def used_margin(self, x: np.ndarray, const: np.ndarray, flow_epsilon: float = 1e-9) -> float:
        """Path mode: smallest excess cost of an unused path over its OD's
        cheapest used path (0 when every path is used)."""
        if self.mode != K.PATH_MODE:
            raise ContractError("path margins need path mode")
        xr = K.to_resources(x, self.col_ptr, self.col_res, self.n_res)
        cc = K.column_values(K.res_costs(xr, *self.bank), self.col_ptr, self.col_res, const)
        margin = np.inf
        for k in range(len(self.od_demand)):
            lo, hi = self.od_start[k], self.od_start[k + 1]
            used = x[lo:hi] > flow_epsilon * self.od_demand[k]
            if used.all() or not used.any():
                continue
            lam = cc[lo:hi][used].min()
            margin = min(margin, float(cc[lo:hi][~used].min() - lam))
        return 0.0 if not np.isfinite(margin) else margin

    def _graph_arrays(self):
        if self.expanded is None:
            z = np.zeros(1, dtype=np.int64)
            return z, z, z, z, 0
        ex = self.expanded
        return ex.csr_start, ex.csr_links, ex.link_head, ex.link_tail, ex.n_states

    def _result(self, x, const, gap, it, trace, converged, options, objective):
        xr = K.to_resources(x, self.col_ptr, self.col_res, self.n_res)
        base_pot = float(np.sum(K.res_integrals(xr, *self.bank)))
        base_soc = float(np.sum(K.res_costs(xr, *self.bank) * xr))
        extra = float(np.sum(const * x))
        flows = self.assignment(x)
        return EquilibriumResult(
            flows=flows,
            relative_gap=float(gap),
            potential_value=base_pot + extra,
            social_cost=base_soc + extra,
            iterations=int(it),
            converged=bool(converged),
            column_flows=x,
            trace=np.array(trace) if options.record_trace else None,
            objective=objective,
        )

    def assignment(self, x: np.ndarray) -> FlowAssignment:
        if self.mode == K.PATH_MODE:
            f = np.zeros(self.n_col)
            f[self.order] = x
            return aggregate_flows(f, self.path_set, self.network)
        return self.expanded.assignment(x)

    def column_costs(self, x: np.ndarray, incentives=None) -> np.ndarray:
        xr = K.to_resources(x, self.col_ptr, self.col_res, self.n_res)
        c = K.res_costs(xr, *self.bank)
        return K.column_values(c, self.col_ptr, self.col_res, self.column_constants(incentives))

    def relative_gap(self, x: np.ndarray, incentives=None) -> float:
        cc = self.column_costs(x, incentives)
        total = float(cc @ x)
        if self.mode == K.PATH_MODE:
            _, bound = K.aon_paths(cc, self.od_start, self.od_demand_sorted)
        else:
            ex = self.expanded
            _, bound = K.aon_links(
                cc, self.od_origin, self.od_dest, self.od_demand_sorted,
                ex.csr_start, ex.csr_links, ex.link_head, ex.link_tail, ex.n_states,
            )
        return _gap(total, bound)

    def random_feasible(self, rng: np.random.Generator) -> np.ndarray:
        """Random interior point of the path-flow polytope (path mode)."""
        if self.mode != K.PATH_MODE:
            raise ContractError("random feasible starts need path mode")
        x = np.zeros(self.n_col)
        for k in range(len(self.od_demand)):
            lo, hi = self.od_start[k], self.od_start[k + 1]
            if hi > lo:
                x[lo:hi] = rng.dirichlet(np.ones(hi - lo)) * self.od_demand[k]
        return x

    def to_columns(self, path_flows: np.ndarray) -> np.ndarray:
        return np.asarray(path_flows, dtype=float)[self.order]


def _gap(total: float, bound: float) -> float:
    if total > 0:
        return max(0.0, (total - bound) / total)
    return 0.0 if total - bound <= 0 else float("inf")


# -- public solver entry points ----------------------------------------------


def frank_wolfe_ue(
    network: Network,
    incentives: IncentiveSchedule | None = None,
    options: SolveOptions | None = None,
    paths: PathSet | None = None,
    initial: np.ndarray | None = None,
) -> EquilibriumResult:
    """Wardrop user equilibrium under additive intersection incentives.

    Per-path incentives (or a small network) run on enumerated paths, per-turn
    incentives on the turn-expanded graph.  ``initial`` is a feasible path-flow
    vector in path mode.
    """
    problem = AssignmentProblem.auto(network, incentives, paths)
    x0 = None
    if initial is not None:
        x0 = problem.to_columns(initial) if problem.mode == K.PATH_MODE else initial
    return problem.solve(incentives, options, "ue", x0)


def system_optimum(
    network: Network, options: SolveOptions | None = None, paths: PathSet | None = None
) -> EquilibriumResult:
    """Minimize C° (no incentives) by Frank-Wolfe on marginal costs c + x c'."""
    problem = AssignmentProblem.auto(network, None, paths)
    return problem.solve(None, options, "so")


# -- potentials -----------------------------------------------------------------


def base_potential(flows: FlowAssignment) -> float:
    """Φ°(f) = sum_e int_0^{f_e} c_e + sum_v int_0^{f_v} c_v."""
    net = flows.network
    total = sum(float(e.cost.integral(x)) for e, x in zip(net.edges, flows.edge_flows))
    total += sum(float(n.base_cost.integral(x)) for n, x in zip(net.nodes, flows.node_flows))
    return total


def potential(flows: FlowAssignment, incentives: IncentiveSchedule | None = None) -> float:
    """Φ(f, u) = Φ°(f) + sum_p f_p u_p."""
    _, extra = decompose_social_cost(flows, incentives)
    return base_potential(flows) + extra


# -- equilibrium checks ---------------------------------------------------------


def _require_paths(flows: FlowAssignment):
    if flows.path_flows is None:
        raise ContractError("this check needs path flows (path mode)")


def _od_groups(flows: FlowAssignment):
    od = flows.paths.od_indices()
    return [np.flatnonzero(od == k) for k in range(len(flows.network.demands))]


def relative_gap(flows: FlowAssignment, incentives: IncentiveSchedule | None = None) -> float:
    """(C_current - sum_od D_od * min path cost) / C_current over the flows' path set.

    Link-mode solves report their gap on :class:`EquilibriumResult` directly.
    """
    _require_paths(flows)
    net = flows.network
    c = path_costs(flows, incentives)
    total = float(c @ flows.path_flows)
    bound = sum(
        net.demands[k].demand * float(c[idx].min()) for k, idx in enumerate(_od_groups(flows)) if len(idx)
    )
    return _gap(total, bound)


def wardrop_residual(
    flows: FlowAssignment,
    incentives: IncentiveSchedule | None = None,
    flow_epsilon: float = 1e-9,
) -> float:
    """Largest excess cost of a used path over its OD's cheapest path.

    A path counts as used when its flow exceeds ``flow_epsilon`` times the OD
    demand.  The value is in cost units (not normalized).
    """
    _require_paths(flows)
    c = path_costs(flows, incentives)
    worst = 0.0
    for k, idx in enumerate(_od_groups(flows)):
        if not len(idx):
            continue
        dem = flows.network.demands[k].demand
        used = idx[flows.path_flows[idx] > flow_epsilon * dem]
        if len(used):
            worst = max(worst, float(c[used].max() - c[idx].min()))
    return worst


@dataclass
class KKTReport:
    holds: bool
    lam: np.ndarray  # per OD: min used-path cost
    mu: np.ndarray  # per path: c_p - lambda_od


def verify_kkt(
    flows: FlowAssignment,
    incentives: IncentiveSchedule | None = None,
    tolerance: float = 1e-6,
    flow_epsilon: float = 1e-9,
) -> KKTReport:
    """Check the stationarity/complementarity conditions of the potential at ``flows``."""
    _require_paths(flows)
    c = path_costs(flows, incentives)
    n_od = len(flows.network.demands)
    lam = np.full(n_od, np.nan)
    mu = np.zeros(len(c))
    holds = True
    for k, idx in enumerate(_od_groups(flows)):
        if not len(idx):
            continue
        dem = flows.network.demands[k].demand
        used = idx[flows.path_flows[idx] > flow_epsilon * dem]
        lam[k] = float(c[used].min()) if len(used) else float(c[idx].min())
        mu[idx] = c[idx] - lam[k]
        if np.any(mu[used] > tolerance) or np.any(mu[idx] < -tolerance):
            holds = False
    return KKTReport(holds, lam, mu)


def used_path_margin(
    flows: FlowAssignment, incentives: IncentiveSchedule | None = None, flow_epsilon: float = 1e-9
) -> float:
    """Smallest cost excess of an unused path over its OD's equilibrium cost.

    Positive values mean the equilibrium is robust: every unused path is strictly
    more expensive.  Returns 0 when every path of every OD is used.
    """
    report = verify_kkt(flows, incentives, np.inf, flow_epsilon)
    margin = np.inf
    for k, idx in enumerate(_od_groups(flows)):
        dem = flows.network.demands[k].demand
        unused = idx[flows.path_flows[idx] <= flow_epsilon * dem]
        if len(unused):
            margin = min(margin, float(report.mu[unused].min()))
    return 0.0 if not np.isfinite(margin) else margin


# -- all-or-nothing with lexicographic ties ---------------------------------------


def all_or_nothing(network: Network, edge_costs, demands=None) -> np.ndarray:
    """Edge flows routing every OD demand on one shortest path at fixed edge costs.

    Ties are broken by the lexicographically smallest node sequence, then the
    smallest edge index among parallel edges.
    """
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    costs = np.asarray(edge_costs, dtype=float)
    if costs.shape != (len(network.edges),) or np.any(costs < 0):
        raise ContractError("need one non-negative cost per edge")
    demands = network.demands if demands is None else demands
    n = len(network.nodes)
    # reverse graph distances to each destination; duplicate arcs keep the cheapest
    tails = np.array([network.node_index[e.tail] for e in network.edges])
    heads = np.array([network.node_index[e.head] for e in network.edges])
    best = {}
    for i, (a, b) in enumerate(zip(tails, heads)):
        if (b, a) not in best or costs[i] < costs[best[(b, a)]]:
            best[(b, a)] = i
    rows = np.array([k[0] for k in best], dtype=np.int64)
    cols = np.array([k[1] for k in best], dtype=np.int64)
    # explicit zeros would vanish from a sparse matrix; lift them by a tiny epsilon
    vals = np.array([costs[i] for i in best.values()]) + 0.0
    tiny = np.finfo(float).tiny
    rev = csr_matrix((np.where(vals == 0, tiny, vals), (rows, cols)), shape=(n, n))

    flows = np.zeros(len(network.edges))
    cache = {}
    for d in demands:
        if d.demand == 0:
            continue
        t = network.node_index[d.destination]
        if t not in cache:
            dist = dijkstra(rev, directed=True, indices=t)
            cache[t] = np.where(dist < 1e-300, 0.0, dist)
        dist = cache[t]
        v = d.origin
        if not np.isfinite(dist[network.node_index[v]]):
            raise StructureError(f"destination {d.destination!r} unreachable from {v!r}")
        seen = {v}
        while v != d.destination:
            dv = dist[network.node_index[v]]
            step = None
            for i in network.out_edges(v):  # sorted by head id, then edge index
                h = network.edges[i].head
                if h in seen:
                    continue
                if abs(costs[i] + dist[network.node_index[h]] - dv) <= 1e-12 * max(1.0, dv):
                    step = i
                    break
            if step is None:
                raise StructureError("shortest-path reconstruction failed")
            flows[step] += d.demand
            v = network.edges[step].head
            seen.add(v)
    return flows


# -- brute-force oracles -----------------------------------------------------------


MAX_ORACLE_PATHS = 10


def _simplex_grid(n: int, steps: int) -> np.ndarray:
    """All compositions of ``steps`` into ``n`` non-negative parts, scaled to sum 1."""
    if n == 1:
        return np.ones((1, 1))
    pts = []
    for bars in itertools.combinations(range(steps + n - 1), n - 1):
        prev = -1
        parts = []
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(steps + n - 2 - prev)
        pts.append(parts)
    return np.array(pts, dtype=float) / steps


def _oracle_objective(network, paths, incentives, kind):
    """(value, gradient) of Φ (``ue``) or C° (``so``) as functions of path flows."""
    E, V = incidence(network, paths)
    u = path_incentive_vector(paths, network, incentives)
    costly = [i for i, n in enumerate(network.nodes) if not n.base_cost.is_zero()]

    def value(F):
        """F: (m, n_paths) batch of path flows."""
        ef = F @ E.T
        nf = F @ V.T
        total = F @ u
        for i, e in enumerate(network.edges):
            total = total + (e.cost.integral(ef[:, i]) if kind == "ue" else e.cost.evaluate(ef[:, i]) * ef[:, i])
        for i in costly:
            c = network.nodes[i].base_cost
            total = total + (c.integral(nf[:, i]) if kind == "ue" else c.evaluate(nf[:, i]) * nf[:, i])
        return total

    def gradient(f):
        ef, nf = E @ f, V @ f
        ge = np.array([float(e.cost.evaluate(x)) for e, x in zip(network.edges, ef)])
        gv = np.zeros(len(network.nodes))
        for i in costly:
            gv[i] = float(network.nodes[i].base_cost.evaluate(nf[i]))
        if kind == "so":
            ge = ge + ef * np.array([float(e.cost.derivative(x)) for e, x in zip(network.edges, ef)])
            for i in costly:
                gv[i] += nf[i] * float(network.nodes[i].base_cost.derivative(nf[i]))
        return E.T @ ge + V.T @ gv + u

    return value, gradient


def _brute_force(network, paths, incentives, grid_step, kind, max_points, sweeps):
    if paths is None:
        paths = enumerate_paths(network, max_paths=MAX_ORACLE_PATHS + 1)
    if len(paths) > MAX_ORACLE_PATHS:
        raise ContractError(f"brute-force oracle limited to {MAX_ORACLE_PATHS} paths, got {len(paths)}")
    network.require_demand()
    value, gradient = _oracle_objective(network, paths, incentives if kind == "ue" else None, kind)
    groups = [np.flatnonzero(paths.od_indices() == k) for k in range(len(network.demands))]
    demand = [d.demand for d in network.demands]

    # grid resolution: as fine as requested while the product grid stays under max_points
    steps = max(1, int(round(1.0 / grid_step)))

    def grid_size(s):
        from math import comb

        size = 1
        for g in groups:
            if len(g):
                size *= comb(s + len(g) - 1, len(g) - 1)
        return size

    while steps > 1 and grid_size(steps) > max_points:
        steps = max(1, int(steps * 0.8))
    blocks = []
    for g, dem in zip(groups, demand):
        if len(g):
            blocks.append((g, _simplex_grid(len(g), steps) * dem))
    best = None
    best_val = np.inf
    # cartesian product over OD blocks, evaluated in batches of the last block
    for combo in itertools.product(*[range(len(b[1])) for b in blocks[:-1]]):
        F = np.zeros((len(blocks[-1][1]), len(paths)))
        for (g, pts), r in zip(blocks[:-1], combo):
            F[:, g] = pts[r]
        g_last, pts_last = blocks[-1]
        F[:, g_last] = pts_last
        vals = value(F)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best = F[i].copy()

    # local polish of the grid point: SLSQP on the simplex product, then
    # pairwise-transfer coordinate descent, exact on each 1-D exchange
    cons = []
    for g, dem in zip(groups, demand):
        if len(g):
            row = np.zeros(len(paths))
            row[g] = 1.0
            cons.append({"type": "eq", "fun": lambda f, row=row, dem=dem: row @ f - dem, "jac": lambda f, row=row: row})
    r = minimize(
        lambda f: float(value(f[None, :])[0]), best, jac=gradient, method="SLSQP",
        bounds=[(0.0, None)] * len(best), constraints=cons, options={"ftol": 1e-15, "maxiter": 500},
    )
    f = best
    if r.success:
        cand = np.maximum(r.x, 0.0)
        for g, dem in zip(groups, demand):
            if len(g) and cand[g].sum() > 0:
                cand[g] *= dem / cand[g].sum()
        if float(value(cand[None, :])[0]) < float(value(best[None, :])[0]):
            f = cand
    for _ in range(sweeps):
        before = float(value(f[None, :])[0])
        for g in groups:
            for i, j in itertools.permutations(g, 2):
                if i > j:
                    continue

                def along(t, i=i, j=j):
                    h = f.copy()
                    h[i] += t
                    h[j] -= t
                    return float(value(h[None, :])[0])

                lo, hi = -f[i], f[j]
                if hi - lo <= 0:
                    continue
                r = minimize_scalar(along, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
                t = r.x if r.fun < along(0.0) else 0.0
                f[i] += t
                f[j] -= t
        f = np.maximum(f, 0.0)
        if before - float(value(f[None, :])[0]) <= 1e-15 * max(1.0, abs(before)):
            break
    return aggregate_flows(f, paths, network)


def brute_force_equilibrium(
    network: Network,
    grid_step: float = 1e-3,
    incentives: IncentiveSchedule | None = None,
    paths: PathSet | None = None,
    max_points: int = 2_000_000,
    sweeps: int = 200,
) -> FlowAssignment:
    """Grid search of the potential over the path-flow simplex, then exact
    pairwise-exchange refinement.  Independent of the Frank-Wolfe code."""
    return _brute_force(network, paths, incentives, grid_step, "ue", max_points, sweeps)


def brute_force_social_opt(
    network: Network,
    grid_step: float = 1e-3,
    paths: PathSet | None = None,
    max_points: int = 2_000_000,
    sweeps: int = 200,
) -> FlowAssignment:
    """Same search as :func:`brute_force_equilibrium` on the social cost C°."""
    return _brute_force(network, paths, None, grid_step, "so", max_points, sweeps)


__all__ = [
    "AssignmentProblem",
    "EquilibriumResult",
    "KKTReport",
    "SolveOptions",
    "all_or_nothing",
    "base_potential",
    "brute_force_equilibrium",
    "brute_force_social_opt",
    "frank_wolfe_ue",
    "potential",
    "relative_gap",
    "system_optimum",
    "used_path_margin",
    "verify_kkt",
    "wardrop_residual",
]
