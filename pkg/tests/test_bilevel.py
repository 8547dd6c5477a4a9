import numpy as np
import pytest

from incentive_routing.bilevel import (
    BilevelResult,
    DeConfig,
    SpsaConfig,
    UpperLevel,
    differential_evolution,
    evaluate_upper,
    gap_closure,
    minimize_de,
    polish,
    spsa_optimize,
)
from incentive_routing.equilibrium import AssignmentProblem, SolveOptions
from incentive_routing.library import BRAESS_KEYS
from incentive_routing.network import PER_PATH, PER_TURN, ContractError, IncentiveSchedule

FAST = SolveOptions(relative_gap_tolerance=1e-9)


def _u(values):
    return IncentiveSchedule(PER_PATH, dict(zip(BRAESS_KEYS, values)), (0.0, 0.2))


def test_gap_closure_examples():
    assert gap_closure(8.04e6, 7.84e6, 7.75e6) == pytest.approx(68.97, abs=0.01)
    assert gap_closure(8.04e6, 7.93e6, 7.75e6) == pytest.approx(37.93, abs=0.01)
    assert gap_closure(2.0, 2.0, 1.875) == 0.0
    with pytest.raises(ContractError):
        gap_closure(1.0, 1.0, 1.0)


def test_evaluate_upper_examples(braess_quadratic):
    assert evaluate_upper(braess_quadratic, _u([0, 0.2, 0.2, 0]), FAST) == pytest.approx(1.875, abs=1e-7)
    assert evaluate_upper(braess_quadratic, None, FAST) == pytest.approx(2.0, abs=1e-7)
    assert evaluate_upper(braess_quadratic, _u([0.2, 0, 0, 0.2]), FAST) > 1.875 + 1e-3


def test_evaluate_upper_per_turn(braess_quadratic):
    u = IncentiveSchedule(PER_TURN, {("v", "e1", "e5"): 0.2, ("w", "e5", "e4"): 0.2}, (0.0, 0.2))
    assert evaluate_upper(braess_quadratic, u, FAST) == pytest.approx(1.875, abs=1e-7)


def test_evaluation_is_invalid_when_not_converged(braess_quartic):
    upper = UpperLevel(braess_quartic, options=SolveOptions(1e-9))
    # starve the lower level after the baseline has been solved
    upper.options = SolveOptions(1e-14, max_iterations=2, step_rule="harmonic")
    ev = upper.evaluate(np.full(4, 0.1))
    assert not ev.valid and ev.objective == np.inf


def test_upper_level_rejects_out_of_box(braess_quadratic):
    upper = UpperLevel(braess_quadratic, options=FAST)
    with pytest.raises(ContractError):
        upper.evaluate([0.0, 0.3, 0.0, 0.0])


def test_spsa_braess(braess_quadratic):
    upper = UpperLevel(braess_quadratic, options=FAST)
    res = spsa_optimize(upper, SpsaConfig(iterations=2000, seed=0))
    assert res.gap_closure_percent >= 95.0
    assert res.incentivized_ue_cost <= res.baseline_ue_cost + 1e-9


def test_zero_width_box_returns_baseline(braess_quadratic):
    upper = UpperLevel(braess_quadratic, bounds=(0.0, 0.0), options=FAST)
    res = spsa_optimize(upper, SpsaConfig(iterations=20))
    assert np.all(res.best_vector == 0.0)
    assert res.gap_closure_percent == 0.0
    de = differential_evolution(upper, DeConfig(max_generations=3))
    assert de.incentivized_ue_cost == pytest.approx(de.baseline_ue_cost)


def test_spsa_never_worse_and_best_trace_monotone(braess_quartic):
    upper = UpperLevel(braess_quartic, options=FAST)
    seen = []
    orig = upper.evaluate

    def spy(u):
        seen.append(np.array(u))
        return orig(u)

    upper.evaluate = spy
    res = spsa_optimize(upper, SpsaConfig(iterations=60, seed=3, init="uniform"))
    assert res.incentivized_ue_cost <= res.baseline_ue_cost + 1e-9
    assert np.all(np.diff(res.trace[:, 3]) <= 0)
    # every evaluated point lies in the box
    pts = np.array(seen)
    assert pts.min() >= 0.0 and pts.max() <= 0.2


def test_spsa_reproducible(braess_quartic):
    runs = [spsa_optimize(UpperLevel(braess_quartic, options=FAST), SpsaConfig(iterations=40, seed=7))
            for _ in range(2)]
    assert np.array_equal(runs[0].trace, runs[1].trace)
    assert np.array_equal(runs[0].best_vector, runs[1].best_vector)


def test_spsa_gains():
    cfg = SpsaConfig()
    assert cfg.a_k(0) == pytest.approx(0.1 / 1201**0.4)
    assert cfg.c_k(9) == pytest.approx(0.4 / 10**0.03)
    with pytest.raises(ContractError):
        SpsaConfig(iterations=0)
    with pytest.raises(ContractError):
        SpsaConfig(a=-1.0)


def test_de_braess(braess_quadratic):
    res = differential_evolution(UpperLevel(braess_quadratic, options=FAST), DeConfig(seed=0))
    assert np.allclose(res.best_vector, [0.0, 0.2, 0.2, 0.0], atol=0.02)
    assert res.incentivized_ue_cost == pytest.approx(1.875, abs=0.005)


def test_de_one_dimensional_quadratic():
    x, fx, _ = minimize_de(lambda x: (x[0] - 0.37) ** 2, [0.0], [1.0], DeConfig(seed=1))
    assert abs(x[0] - 0.37) <= 1e-3 and fx <= 1e-6


def test_de_reproducible():
    f = lambda x: float(np.sum((x - 0.3) ** 2))  # noqa: E731
    a = minimize_de(f, [0, 0], [1, 1], DeConfig(seed=5, max_generations=20))
    b = minimize_de(f, [0, 0], [1, 1], DeConfig(seed=5, max_generations=20))
    assert np.array_equal(a[0], b[0]) and a[2] == b[2]


def test_returned_incentives_are_start_independent(braess_quartic):
    # the upper objective at the returned u does not depend on the UE starting point
    upper = UpperLevel(braess_quartic, options=FAST)
    res = differential_evolution(upper, DeConfig(seed=0, max_generations=30))
    problem = AssignmentProblem.paths(braess_quartic)
    rng = np.random.default_rng(0)
    costs = [problem.solve(res.best_incentives, FAST, initial=problem.random_feasible(rng)).social_cost
             for _ in range(2)]
    assert costs[0] == pytest.approx(costs[1], rel=1e-5)
    assert costs[0] == pytest.approx(res.incentivized_ue_cost, rel=1e-5)


def test_polish_and_outputs(braess_quadratic, tmp_path):
    upper = UpperLevel(braess_quadratic, options=SolveOptions(1e-6))
    res = polish(upper, differential_evolution(upper, DeConfig(seed=0)), FAST)
    assert isinstance(res, BilevelResult)
    assert res.incentivized_ue_cost == pytest.approx(1.875, abs=1e-7)
    res.write_trace(tmp_path / "trace.csv")
    res.write_incentives(tmp_path / "u.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == "iteration,objective_plus,objective_minus,best_objective"
    assert len((tmp_path / "u.csv").read_text().splitlines()) == 5


def test_per_turn_upper_level(braess_quadratic):
    upper = UpperLevel(braess_quadratic, mode=PER_TURN, options=FAST)
    assert upper.dim == len(braess_quadratic.movements())
    u = np.zeros(upper.dim)
    u[upper.keys.index(("v", "e1", "e5"))] = 0.2
    u[upper.keys.index(("w", "e5", "e4"))] = 0.2
    assert upper.evaluate(u).cost == pytest.approx(1.875, abs=1e-7)
