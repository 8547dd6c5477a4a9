"""Upper-level incentive design: minimize the equilibrium social cost
C°(f(u)) + f(u)·u over a box of incentives, by SPSA or differential evolution."""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import AssignmentProblem, EquilibriumResult, SolveOptions
from .io import write_incentives
from .network import PER_PATH, PER_TURN, ContractError, IncentiveSchedule, Network, PathSet


def gap_closure(baseline: float, incentivized: float, so: float) -> float:
    """Share of the UE-to-SO gap recovered, in percent."""
    if not baseline > so:
        raise ContractError(f"degenerate gap: baseline {baseline} is not above SO {so}")
    return 100.0 * (baseline - incentivized) / (baseline - so)


@dataclass
class Evaluation:
    cost: float  # true upper objective C(f(u), u); inf when the UE solve failed
    objective: float  # search objective (cost minus robustness bonus)
    margin: float
    result: EquilibriumResult | None = field(default=None, repr=False)

    @property
    def valid(self) -> bool:
        return bool(np.isfinite(self.cost))


DEFAULT_ROBUSTNESS_WEIGHT = 0.05


class UpperLevel:
    """Evaluates incentive vectors (ordered by ``keys``) through UE solves.

    Every solve warm-starts from the fixed baseline equilibrium, so an
    evaluation is a pure function of the incentive vector.  In per-path mode
    the search objective subtracts ``robustness_weight`` times the smallest
    cost excess of an unused path, which picks, among incentive vectors with
    equal social cost, the one leaving the equilibrium most strictly preferred.
    The margin is tracked in per-path mode even with zero weight.
    """

    def __init__(
        self,
        network: Network,
        mode: str = PER_PATH,
        bounds: tuple[float, float] = (0.0, 0.2),
        keys=None,
        paths: PathSet | None = None,
        options: SolveOptions | None = None,
        robustness_weight: float | None = None,
        warm_start: bool = True,
    ):
        if mode == PER_PATH:
            self.problem = AssignmentProblem.paths(network, paths)
        elif mode == PER_TURN:
            self.problem = AssignmentProblem.links(network)
        else:
            raise ContractError(f"unknown incentive mode {mode!r}")
        if robustness_weight is None:
            robustness_weight = DEFAULT_ROBUSTNESS_WEIGHT if mode == PER_PATH else 0.0
        if robustness_weight and mode != PER_PATH:
            raise ContractError("the robustness bonus needs per-path mode")
        self.network = network
        self.mode = mode
        self.keys = [tuple(k) for k in (keys if keys is not None else self.problem.keys())]
        lo, hi = (float(b) for b in bounds)
        if lo > hi:
            raise ContractError(f"empty bounds {bounds}")
        self.lower = np.full(len(self.keys), lo)
        self.upper = np.full(len(self.keys), hi)
        # one validation of the box replaces per-evaluation checks
        IncentiveSchedule(mode, {}, (lo, hi)).validate(network)
        for k in self.keys:
            floor = -network.node(k[0]).base_cost.min_value()
            if lo < floor - 1e-12:
                raise ContractError(f"lower bound {lo} drives node {k[0]!r} cost negative")
        self.key_cols = self.problem.key_columns(self.keys)
        self.options = options or SolveOptions()
        self.robustness_weight = float(robustness_weight)
        self.baseline = self.problem.solve_constants(np.zeros(self.problem.n_col), self.options)
        if not self.baseline.converged:
            raise ContractError("baseline equilibrium did not converge")
        self._start = self.baseline.column_flows if warm_start else None
        self._so: EquilibriumResult | None = None
        self.evaluations = 0

    def with_options(self, options: SolveOptions) -> "UpperLevel":
        """Same search space with a different lower-level solver setup."""
        other = copy.copy(self)
        other.options = options
        other.baseline = self.problem.solve_constants(np.zeros(self.problem.n_col), options)
        if not other.baseline.converged:
            raise ContractError("baseline equilibrium did not converge")
        other._start = other.baseline.column_flows if self._start is not None else None
        other._so = None
        other.evaluations = 0
        return other

    @property
    def dim(self) -> int:
        return len(self.keys)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def system_optimum(self) -> EquilibriumResult:
        if self._so is None:
            self._so = self.problem.solve_constants(np.zeros(self.problem.n_col), self.options, "so")
        return self._so

    def clip(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lower, self.upper)

    def schedule(self, u) -> IncentiveSchedule:
        u = np.asarray(u, dtype=float)
        values = {k: float(x) for k, x in zip(self.keys, u) if x != 0.0}
        return IncentiveSchedule(self.mode, values, (float(self.lower.min(initial=0)), float(self.upper.max(initial=0))))

    def evaluate(self, u) -> Evaluation:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ContractError(f"expected {self.dim} incentives, got shape {u.shape}")
        if np.any(u < self.lower - 1e-12) or np.any(u > self.upper + 1e-12):
            raise ContractError("incentive vector outside the feasible box")
        self.evaluations += 1
        const = self.problem.constants_from_vector(self.key_cols, u)
        res = self.problem.solve_constants(const, self.options, "ue", self._start)
        if not res.converged:
            return Evaluation(np.inf, np.inf, 0.0, res)
        margin = 0.0
        if self.mode == PER_PATH:
            margin = self.problem.used_margin(res.column_flows, const)
        return Evaluation(res.social_cost, res.social_cost - self.robustness_weight * margin, margin, res)

    def __call__(self, u) -> float:
        return self.evaluate(u).objective


def evaluate_upper(
    network: Network,
    incentives: IncentiveSchedule | None = None,
    options: SolveOptions | None = None,
    paths: PathSet | None = None,
) -> float:
    """C°(f(u)) + f(u)·u at the equilibrium f(u); +inf if the solve does not converge."""
    incentives = incentives or IncentiveSchedule()
    if incentives.mode == PER_TURN:
        problem = AssignmentProblem.links(network)
    else:
        problem = AssignmentProblem.paths(network, paths)
    res = problem.solve(incentives, options)
    return res.social_cost if res.converged else float("inf")


@dataclass
class BilevelResult:
    keys: list
    best_vector: np.ndarray
    best_incentives: IncentiveSchedule
    baseline_ue_cost: float
    incentivized_ue_cost: float
    so_cost: float
    best_objective: float
    trace: np.ndarray = field(repr=False)  # columns: iteration, objective_plus, objective_minus, best
    evaluations: int = 0
    algorithm: str = ""
    flows: object = field(default=None, repr=False)
    baseline_flows: object = field(default=None, repr=False)

    @property
    def gap_closure_percent(self) -> float:
        if self.baseline_ue_cost <= self.so_cost:
            return 0.0
        return gap_closure(self.baseline_ue_cost, self.incentivized_ue_cost, self.so_cost)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective_plus", "objective_minus", "best_objective"])
            for row in self.trace:
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])

    def write_incentives(self, path) -> None:
        write_incentives(self.best_incentives, path, self.keys)


COST_TIE_RTOL = 1e-7


class _Best:
    """Best-seen tracker ordered by true cost, then by larger margin among
    costs equal within ``COST_TIE_RTOL``; remaining ties keep the earlier point."""

    def __init__(self, u, ev: Evaluation):
        self.u = np.array(u, dtype=float)
        self.ev = ev

    def offer(self, u, ev: Evaluation) -> None:
        if not ev.valid:
            return
        tol = COST_TIE_RTOL * max(1.0, abs(self.ev.cost))
        better = ev.cost < self.ev.cost - tol or (abs(ev.cost - self.ev.cost) <= tol and ev.margin > self.ev.margin)
        if better:
            self.u = np.array(u, dtype=float)
            self.ev = ev


def _finish(upper: UpperLevel, best: _Best, trace, algorithm, so_cost=None) -> BilevelResult:
    so = upper.system_optimum().social_cost if so_cost is None else so_cost
    return BilevelResult(
        keys=list(upper.keys),
        best_vector=best.u.copy(),
        best_incentives=upper.schedule(best.u),
        baseline_ue_cost=upper.baseline.social_cost,
        incentivized_ue_cost=best.ev.cost,
        so_cost=so,
        best_objective=best.ev.objective,
        trace=np.array(trace, dtype=float).reshape(-1, 4),
        evaluations=upper.evaluations,
        algorithm=algorithm,
        flows=best.ev.result.flows if best.ev.result is not None else None,
        baseline_flows=upper.baseline.flows,
    )


# -- SPSA ---------------------------------------------------------------------------


@dataclass
class SpsaConfig:
    """Gains a_k = a / (k + 1 + A)**alpha and c_k = c / (k + 1)**gamma.

    ``init`` is ``uniform`` (random in the box), ``zero`` (clipped into the box)
    or ``lower``.  ``objective_scale`` divides objective differences before the
    gradient estimate; ``"gap"`` uses the baseline-to-SO gap of the instance.
    """

    iterations: int = 30000
    a: float = 0.1
    alpha: float = 0.40
    c: float = 0.4
    gamma: float = 0.03
    A: float = 1200.0
    seed: int | None = 0
    init: str = "uniform"
    objective_scale: float | str = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be at least 1")
        if min(self.a, self.alpha, self.c, self.gamma) <= 0 or self.A < 0:
            raise ContractError("SPSA gains must be positive")
        if self.init not in ("uniform", "zero", "lower"):
            raise ContractError(f"unknown init {self.init!r}")
        if isinstance(self.objective_scale, str):
            if self.objective_scale != "gap":
                raise ContractError(f"unknown objective scale {self.objective_scale!r}")
        elif not self.objective_scale > 0:
            raise ContractError("objective_scale must be positive")

    def a_k(self, k: int) -> float:
        return self.a / (k + 1 + self.A) ** self.alpha

    def c_k(self, k: int) -> float:
        return self.c / (k + 1) ** self.gamma


def spsa_optimize(upper: UpperLevel, config: SpsaConfig | None = None, callback=None) -> BilevelResult:
    """Two-sided simultaneous-perturbation descent with box projection.

    The baseline (u = 0, clipped into the box) is evaluated first and the
    best-seen evaluated point is returned; the final iterate is evaluated too.
    """
    config = config or SpsaConfig()
    rng = np.random.default_rng(config.seed)
    lo, hi = upper.bounds
    zero = upper.clip(np.zeros(upper.dim))
    best = _Best(zero, upper.evaluate(zero))
    if config.objective_scale == "gap":
        scale = upper.baseline.social_cost - upper.system_optimum().social_cost
        if scale <= 0:
            scale = 1.0
    else:
        scale = float(config.objective_scale)

    if config.init == "uniform":
        u = rng.uniform(lo, hi)
    elif config.init == "lower":
        u = lo.copy()
    else:
        u = zero.copy()
    trace = []
    for k in range(config.iterations):
        ak, ck = config.a_k(k), config.c_k(k)
        delta = rng.choice([-1.0, 1.0], size=upper.dim)
        up = upper.clip(u + ck * delta)
        um = upper.clip(u - ck * delta)
        ep, em = upper.evaluate(up), upper.evaluate(um)
        best.offer(up, ep)
        best.offer(um, em)
        if ep.valid and em.valid:
            ghat = (ep.objective - em.objective) / (2.0 * ck * scale) * delta
            u = upper.clip(u - ak * ghat)
        trace.append((k, ep.objective, em.objective, best.ev.objective))
        if callback is not None:
            callback(k, u, best)
    best.offer(u, upper.evaluate(u))
    return _finish(upper, best, trace, "spsa")


# -- differential evolution ------------------------------------------------------------


@dataclass
class DeConfig:
    """rand/1/bin differential evolution; population = population_factor * dim."""

    population_factor: int = 15
    F: float = 0.8
    CR: float = 0.9
    max_generations: int = 200
    tol: float = 1e-8
    seed: int | None = 0

    def __post_init__(self):
        if self.population_factor < 1 or self.max_generations < 1:
            raise ContractError("population_factor and max_generations must be positive")
        if not 0 <= self.CR <= 1 or self.F <= 0:
            raise ContractError("need F > 0 and CR in [0, 1]")


def minimize_de(func, lower, upper, config: DeConfig | None = None, init=None):
    """Minimize ``func`` over the box [lower, upper].

    Returns (best_x, best_f, trace rows (generation, best, mean, best)).
    ``init`` optionally seeds the first population members.  Stops when the
    population objective spread falls below ``tol`` (absolute plus relative).
    """
    config = config or DeConfig()
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = len(lower)
    rng = np.random.default_rng(config.seed)
    n = max(4, config.population_factor * dim)
    pop = lower + rng.random((n, dim)) * (upper - lower)
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=float))
        pop[: len(init)] = np.clip(init, lower, upper)
    fit = np.array([func(x) for x in pop])
    trace = []
    for gen in range(config.max_generations):
        for i in range(n):
            choices = [j for j in range(n) if j != i]
            r1, r2, r3 = rng.choice(choices, 3, replace=False)
            mutant = np.clip(pop[r1] + config.F * (pop[r2] - pop[r3]), lower, upper)
            cross = rng.random(dim) < config.CR
            cross[rng.integers(dim)] = True
            trial = np.where(cross, mutant, pop[i])
            ft = func(trial)
            if ft <= fit[i]:
                pop[i], fit[i] = trial, ft
        finite = fit[np.isfinite(fit)]
        b = int(np.argmin(fit))
        trace.append((gen, float(fit[b]), float(np.mean(finite)) if len(finite) else np.inf, float(fit[b])))
        if len(finite) == n and np.std(fit) <= config.tol * (1.0 + abs(np.mean(fit))):
            break
    b = int(np.argmin(fit))
    return pop[b].copy(), float(fit[b]), trace


def differential_evolution(upper: UpperLevel, config: DeConfig | None = None) -> BilevelResult:
    """DE over the incentive box; the baseline is a population member, so the
    result is never worse than no incentives."""
    zero = upper.clip(np.zeros(upper.dim))
    cache: dict = {}

    def func(u):
        key = u.tobytes()
        if key not in cache:
            cache[key] = upper.evaluate(u)
        return cache[key].objective

    x, _, trace = minimize_de(func, upper.lower, upper.upper, config, init=zero)
    best = _Best(zero, cache[zero.tobytes()])
    for key, ev in cache.items():
        best.offer(np.frombuffer(key), ev)
    return _finish(upper, best, trace, "de")


def polish(upper: UpperLevel, result: BilevelResult, options: SolveOptions) -> BilevelResult:
    """Re-solve baseline, SO and the returned incentives with ``options``
    (typically tighter than the search tolerance) for reporting.

    Falls back to no incentives if the re-solved incentivized cost exceeds
    the re-solved baseline.
    """
    fine = upper.with_options(options)
    ev = fine.evaluate(result.best_vector)
    u = result.best_vector
    if not ev.valid or ev.cost > fine.baseline.social_cost:
        u = upper.clip(np.zeros(upper.dim))
        ev = fine.evaluate(u)
    best = _Best(u, ev)
    out = _finish(fine, best, result.trace, result.algorithm)
    out.evaluations = result.evaluations
    return out
