import numpy as np
import pytest

from incentive_routing.costs import Constant, Polynomial
from incentive_routing.equilibrium import (
    AssignmentProblem,
    SolveOptions,
    all_or_nothing,
    brute_force_equilibrium,
    brute_force_social_opt,
    frank_wolfe_ue,
    potential,
    relative_gap,
    system_optimum,
    used_path_margin,
    verify_kkt,
    wardrop_residual,
)
from incentive_routing.library import BRAESS_KEYS, braess, parallel_links, pigou
from incentive_routing.network import (
    PER_PATH,
    PER_TURN,
    ContractError,
    PathSet,
    IncentiveSchedule,
    aggregate_flows,
    enumerate_paths,
    social_cost,
)
from incentive_routing.transforms import split_nodes_transform
from oracles import BRAESS_QUADRATIC_SO, BRAESS_QUADRATIC_SO_COST, BRAESS_QUADRATIC_UE

TIGHT = SolveOptions(relative_gap_tolerance=1e-10, max_iterations=20000)


def test_braess_quadratic_ue(braess_quadratic):
    res = frank_wolfe_ue(braess_quadratic, options=TIGHT)
    assert res.converged
    assert np.allclose(res.flows.path_flows, BRAESS_QUADRATIC_UE, atol=1e-6)
    assert res.social_cost == pytest.approx(2.0, abs=1e-8)
    assert verify_kkt(res.flows, tolerance=1e-6).holds


def test_braess_quadratic_so(braess_quadratic):
    res = system_optimum(braess_quadratic, TIGHT)
    assert np.allclose(res.flows.path_flows, BRAESS_QUADRATIC_SO, atol=1e-5)
    assert res.social_cost == pytest.approx(BRAESS_QUADRATIC_SO_COST, abs=1e-8)


def test_braess_incentive_recovers_so(braess_quadratic):
    u = IncentiveSchedule(PER_PATH, dict(zip(BRAESS_KEYS, [0.0, 0.2, 0.2, 0.0])), (0.0, 0.2))
    res = frank_wolfe_ue(braess_quadratic, u, TIGHT)
    assert np.allclose(res.flows.path_flows, BRAESS_QUADRATIC_SO, atol=1e-6)
    # p2 carries nothing, so the offsets add nothing to the social cost
    assert res.social_cost == pytest.approx(1.875, abs=1e-8)
    # p2 costs 2 c(0.5) + 1 + 0.4 = 2.15 against 1.875 on p1 and p3
    assert used_path_margin(res.flows, u) == pytest.approx(0.275, abs=1e-5)


def test_pigou():
    net = pigou()
    ue = frank_wolfe_ue(net, options=TIGHT)
    assert ue.social_cost == pytest.approx(1.0, abs=1e-6)
    so = system_optimum(net, TIGHT)
    assert so.social_cost == pytest.approx(0.75, abs=1e-8)
    assert np.allclose(so.flows.path_flows, [0.5, 0.5], atol=1e-5)


def test_single_path_trivial():
    net = parallel_links([Polynomial((1.0, 2.0))], demand=3.0)
    res = frank_wolfe_ue(net)
    assert res.iterations <= 1 and res.flows.path_flows[0] == pytest.approx(3.0)
    assert res.social_cost == pytest.approx(3.0 * 7.0)


@pytest.mark.parametrize("rule", ["harmonic", "exact", "conjugate", "away_step"])
def test_step_rules_agree(braess_quadratic, rule):
    # 2/(k+2) steps converge sublinearly, so they get a looser target
    tol = 1e-5 if rule == "harmonic" else 1e-7
    opts = SolveOptions(relative_gap_tolerance=tol, max_iterations=200000, step_rule=rule)
    res = frank_wolfe_ue(braess_quadratic, options=opts)
    assert res.converged
    assert res.social_cost == pytest.approx(2.0, abs=1e-4)


def test_conjugate_no_slower_than_exact(braess_quartic):
    base = dict(relative_gap_tolerance=1e-8, max_iterations=50000)
    exact = frank_wolfe_ue(braess_quartic, options=SolveOptions(step_rule="exact", **base))
    conj = frank_wolfe_ue(braess_quartic, options=SolveOptions(step_rule="conjugate", **base))
    assert conj.iterations <= exact.iterations


def test_trace_is_recorded_and_gap_reaches_tolerance(braess_quadratic, tmp_path):
    res = frank_wolfe_ue(braess_quadratic, options=SolveOptions(1e-8, record_trace=True))
    assert res.trace.shape[1] == 3 and res.trace[-1, 2] <= 1e-8
    res.write_trace(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("iteration,potential,social_cost,relative_gap")


def test_not_converged_flag(braess_quartic):
    res = frank_wolfe_ue(braess_quartic, options=SolveOptions(1e-14, max_iterations=3, step_rule="harmonic"))
    assert not res.converged and res.iterations == 3


def test_bad_options():
    with pytest.raises(ContractError):
        SolveOptions(relative_gap_tolerance=0.0)
    with pytest.raises(ContractError):
        SolveOptions(step_rule="newton")


def test_warm_start_converges_faster(braess_quartic):
    problem = AssignmentProblem.paths(braess_quartic)
    cold = problem.solve(options=SolveOptions(1e-9))
    u = IncentiveSchedule(PER_PATH, {("v", "p2"): 0.01}, (0.0, 0.2))
    warm = problem.solve(u, SolveOptions(1e-9), initial=cold.column_flows)
    fresh = problem.solve(u, SolveOptions(1e-9))
    assert warm.social_cost == pytest.approx(fresh.social_cost, rel=1e-6)


def test_potential_matches_result(braess_quadratic):
    res = frank_wolfe_ue(braess_quadratic, options=TIGHT)
    assert potential(res.flows) == pytest.approx(res.potential_value, rel=1e-12)


def test_wardrop_residual_and_gap(braess_quadratic):
    res = frank_wolfe_ue(braess_quadratic, options=TIGHT)
    assert wardrop_residual(res.flows) <= 1e-6
    assert relative_gap(res.flows) <= 1e-9
    paths = enumerate_paths(braess_quadratic)
    off = aggregate_flows([0.5, 0.0, 0.5], paths, braess_quadratic)
    assert relative_gap(off) > 0
    assert not verify_kkt(off, tolerance=1e-6).holds


def test_aon_lexicographic_tie():
    net = parallel_links([Constant(1.0), Constant(1.0)], demand=2.0)
    assert list(all_or_nothing(net, [1.0, 1.0])) == [2.0, 0.0]
    assert list(all_or_nothing(net, [1.0, 0.5])) == [0.0, 2.0]


def test_aon_braess_zero_cost_shortcut(braess_quadratic):
    # s-v (0) + v-w (0) + w-t (0): all demand takes p2
    y = all_or_nothing(braess_quadratic, [0.0, 1.0, 1.0, 0.0, 0.0])
    assert list(y) == [1.0, 0.0, 0.0, 1.0, 1.0]


def test_aon_rejects_negative_costs(braess_quadratic):
    with pytest.raises(ContractError):
        all_or_nothing(braess_quadratic, [-1.0, 1.0, 1.0, 1.0, 1.0])


def test_brute_force_braess(braess_quadratic):
    ue = brute_force_equilibrium(braess_quadratic, grid_step=1e-2)
    assert np.allclose(ue.path_flows, BRAESS_QUADRATIC_UE, atol=1e-4)
    so = brute_force_social_opt(braess_quadratic, grid_step=1e-2)
    assert np.allclose(so.path_flows, BRAESS_QUADRATIC_SO, atol=1e-4)


def test_split_nodes_equilibrium_matches(braess_quartic):
    # edge-only solve of the split network equals the node-cost solve
    paths = enumerate_paths(braess_quartic)
    u = IncentiveSchedule(PER_PATH, dict(zip(BRAESS_KEYS, [0.0, 0.1, 0.05, 0.0])), (0.0, 0.2))
    direct = frank_wolfe_ue(braess_quartic, u, TIGHT)
    net, mapping = split_nodes_transform(braess_quartic, paths, u)
    mapped = PathSet([mapping[p.name] for p in paths])
    split = frank_wolfe_ue(net, options=TIGHT, paths=mapped)
    assert np.allclose(split.flows.path_flows, direct.flows.path_flows, atol=1e-6)


def test_turn_expanded_matches_path_mode(braess_quartic):
    opts = SolveOptions(1e-10, max_iterations=50000)
    path_mode = AssignmentProblem.paths(braess_quartic).solve(options=opts)
    link_mode = AssignmentProblem.links(braess_quartic).solve(options=opts)
    assert link_mode.social_cost == pytest.approx(path_mode.social_cost, rel=1e-7)
    assert np.allclose(link_mode.flows.edge_flows, path_mode.flows.edge_flows, atol=1e-5)


def test_per_turn_equals_per_path_for_braess(braess_quadratic):
    # the shortcut movements at v and w belong to p2 only
    turn = IncentiveSchedule(PER_TURN, {("v", "e1", "e5"): 0.2, ("w", "e5", "e4"): 0.2}, (0.0, 0.2))
    path = IncentiveSchedule(PER_PATH, {("v", "p2"): 0.2, ("w", "p2"): 0.2}, (0.0, 0.2))
    a = frank_wolfe_ue(braess_quadratic, turn, TIGHT)
    b = frank_wolfe_ue(braess_quadratic, path, TIGHT)
    assert a.social_cost == pytest.approx(b.social_cost, abs=1e-7)
    assert np.allclose(a.flows.edge_flows, b.flows.edge_flows, atol=1e-5)


def test_so_with_quartic_matches_oracle(braess_quartic):
    so = system_optimum(braess_quartic, TIGHT)
    oracle = brute_force_social_opt(braess_quartic, grid_step=1e-2)
    assert so.social_cost <= social_cost(oracle) + 1e-9
    assert np.allclose(so.flows.path_flows, oracle.path_flows, atol=2e-3)


def test_demand_scaling():
    net = braess("quadratic", demand=0.5)
    res = frank_wolfe_ue(net, options=TIGHT)
    assert res.flows.path_flows.sum() == pytest.approx(0.5)


@pytest.mark.slow
def test_sioux_falls_edges_only(sioux_edges_only):
    res = frank_wolfe_ue(sioux_edges_only, options=SolveOptions(1e-6, max_iterations=20000))
    assert res.converged and res.relative_gap <= 1e-6
    # literature UE total travel time for this network is about 7.48e6 veh-min
    assert res.social_cost == pytest.approx(7.48e6, rel=5e-3)
