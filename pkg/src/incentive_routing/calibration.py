"""Quartic intersection-delay fits, the builtin Sioux Falls coefficient table and
the mapping of fitted curves (seconds vs departures per hour) onto network node
costs (minutes vs assignment flow)."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .costs import AssumptionViolation, CostFunction, Polynomial, TangentExtension
from .io import parse_id

DEGREE = 4
MIN_SAMPLES = 6
MONOTONE_GRID = 901


class FitError(ValueError):
    """The least-squares problem is ill-posed (too few or repeated departures)."""


class ExtrapolationWarning(UserWarning):
    """A mapped node cost is used beyond the departures range it was fitted on."""


@dataclass
class DelaySamples:
    node_id: object
    departures: np.ndarray
    mean_delay: np.ndarray
    rollout_count: int = 20

    def __post_init__(self):
        self.departures = np.asarray(self.departures, dtype=float)
        self.mean_delay = np.asarray(self.mean_delay, dtype=float)
        if self.departures.shape != self.mean_delay.shape or self.departures.ndim != 1:
            raise ValueError("departures and mean_delay must be equal-length vectors")
        if np.any(self.departures < 0):
            raise ValueError("departures must be non-negative")
        if np.any(self.mean_delay <= 0):
            raise ValueError("mean delays must be positive")


@dataclass(frozen=True)
class QuarticFit:
    """c(N) = a0 + a1 N + ... + a4 N^4 in seconds, N in departures per horizon."""

    coefficients: tuple  # (a0, a1, a2, a3, a4)
    mape_percent: float
    fit_domain: tuple = (0.0, 900.0)
    node_id: object = None

    def __post_init__(self):
        c = tuple(float(a) for a in self.coefficients)
        if len(c) != DEGREE + 1:
            raise ValueError("a quartic fit needs exactly five coefficients")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "fit_domain", tuple(float(x) for x in self.fit_domain))

    def evaluate(self, n):
        return np.polynomial.polynomial.polyval(np.asarray(n, dtype=float), self.coefficients)

    def check_assumption(self, points: int = MONOTONE_GRID) -> None:
        """Non-negative and non-decreasing on the fit domain (grid check)."""
        lo, hi = self.fit_domain
        xs = np.linspace(lo, hi, points)
        ys = self.evaluate(xs)
        if np.min(ys) < 0:
            raise AssumptionViolation(f"node {self.node_id}: fitted delay negative on [{lo}, {hi}]")
        steps = np.diff(ys)
        if np.min(steps) < -1e-12 * max(1.0, float(np.max(np.abs(ys)))):
            i = int(np.argmin(steps))
            raise AssumptionViolation(
                f"node {self.node_id}: fitted delay decreases between N={xs[i]:.6g} and N={xs[i + 1]:.6g}"
            )


def mape(predicted, actual) -> float:
    """Mean absolute percentage error, in percent."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValueError("predicted and actual must have equal length")
    if a.size == 0:
        raise ValueError("empty input")
    if np.any(a == 0):
        raise ValueError("MAPE undefined for zero actual values")
    return float(100.0 * np.mean(np.abs(p - a) / np.abs(a)))


def _design(n: np.ndarray, scale: float) -> np.ndarray:
    return np.vander(n / scale, DEGREE + 1, increasing=True)


def fit_quartic(samples: DelaySamples, check: bool = True) -> QuarticFit:
    """Ordinary least squares on {1, N, ..., N^4} via normal equations.

    Departures are divided by their maximum before forming the normal equations
    (N^4 reaches ~6.6e11 at N=900) and the coefficients are rescaled afterwards.
    """
    n, y = samples.departures, samples.mean_delay
    if len(n) < MIN_SAMPLES:
        raise FitError(f"need at least {MIN_SAMPLES} samples, got {len(n)}")
    if len(np.unique(n)) < DEGREE + 1:
        raise FitError("need at least five distinct departure values")
    scale = float(np.max(n)) or 1.0
    Z = _design(n, scale)
    G = Z.T @ Z
    rhs = Z.T @ y
    try:
        factor = cho_factor(G)
    except np.linalg.LinAlgError:
        raise FitError("normal equations are singular") from None
    b = cho_solve(factor, rhs)
    # one step of iterative refinement on the normal equations
    b = b + cho_solve(factor, rhs - G @ b)
    coeffs = tuple(float(bk / scale**k) for k, bk in enumerate(b))
    fit = QuarticFit(
        coeffs,
        mape(np.polynomial.polynomial.polyval(n, coeffs), y),
        (float(np.min(n)) if np.min(n) > 0 else 0.0, float(np.max(n))),
        samples.node_id,
    )
    if check:
        fit.check_assumption()
    return fit


def fit_residual(samples: DelaySamples, fit: QuarticFit) -> np.ndarray:
    return fit.evaluate(samples.departures) - samples.mean_delay


def synthetic_samples(
    fit: QuarticFit,
    departures,
    noise: float = 0.0,
    seed: int | None = None,
    rollout_count: int = 20,
) -> DelaySamples:
    """Delays generated from ``fit``; ``noise`` is a multiplicative error of that
    relative size with a random sign per sample."""
    n = np.asarray(departures, dtype=float)
    y = fit.evaluate(n)
    if noise:
        signs = np.random.default_rng(seed).choice([-1.0, 1.0], size=n.shape)
        y = y * (1.0 + noise * signs)
    return DelaySamples(fit.node_id, n, y, rollout_count)


# -- builtin coefficient table ----------------------------------------------------

# node: (a4, a3, a2, a1, a0, MAPE %), departures N in [0, 900] per 3600 s, delay in s
SIOUX_FALLS_NODE_COEFFICIENTS = {
    1: (-1.14e-14, 3.68e-10, -2.54e-7, 1.91e-4, 13.99, 0.43),
    2: (-3.91e-14, 4.92e-10, -4.53e-7, 3.36e-4, 13.94, 0.42),
    3: (-3.98e-12, 1.96e-8, -1.56e-5, 5.38e-3, 12.96, 1.64),
    4: (-2.81e-12, 1.74e-8, -1.46e-5, 5.41e-3, 12.91, 1.74),
    5: (-4.78e-12, 2.21e-8, -1.81e-5, 6.23e-3, 12.90, 1.69),
    6: (-4.48e-12, 2.09e-8, -1.68e-5, 5.82e-3, 12.89, 1.68),
    7: (-5.75e-14, 5.56e-10, -5.20e-7, 3.62e-4, 13.93, 0.44),
    8: (6.63e-13, 1.02e-8, -1.06e-5, 5.08e-3, 13.16, 1.94),
    9: (-3.35e-12, 1.80e-8, -1.43e-5, 5.05e-3, 12.98, 1.67),
    10: (1.40e-12, 1.26e-8, -1.45e-5, 6.93e-3, 13.54, 2.21),
    11: (1.84e-12, 8.22e-9, -9.92e-6, 5.16e-3, 13.15, 1.83),
    12: (-5.06e-12, 2.23e-8, -1.78e-5, 6.08e-3, 12.89, 1.73),
    13: (6.28e-15, 3.10e-10, -2.11e-7, 2.16e-4, 13.95, 0.45),
    14: (-3.83e-12, 1.91e-8, -1.53e-5, 5.47e-3, 12.92, 1.59),
    15: (4.68e-13, 1.12e-8, -1.17e-5, 5.39e-3, 13.16, 1.90),
    16: (-3.58e-12, 2.24e-8, -2.15e-5, 8.31e-3, 12.95, 2.12),
    17: (-5.66e-12, 2.42e-8, -1.95e-5, 6.74e-3, 12.87, 1.75),
    18: (-5.30e-12, 2.39e-8, -1.92e-5, 6.50e-3, 13.05, 1.74),
    19: (-2.05e-12, 1.53e-8, -1.27e-5, 4.82e-3, 12.95, 1.63),
    20: (-4.90e-12, 3.15e-8, -2.75e-5, 9.61e-3, 14.50, 2.27),
    21: (-5.02e-12, 2.29e-8, -1.90e-5, 6.70e-3, 12.81, 1.76),
    22: (3.01e-12, 4.78e-9, -6.83e-6, 4.19e-3, 13.39, 1.88),
    23: (-3.66e-12, 1.89e-8, -1.53e-5, 5.44e-3, 12.93, 1.68),
    24: (-3.44e-12, 1.88e-8, -1.55e-5, 5.49e-3, 12.94, 1.73),
}

SIOUX_FIT_DOMAIN = (0.0, 900.0)


def builtin_sioux_node_costs() -> list[QuarticFit]:
    """The 24 tabulated fits, in node order, with their tabulated MAPE."""
    out = []
    for node, (a4, a3, a2, a1, a0, pct) in SIOUX_FALLS_NODE_COEFFICIENTS.items():
        out.append(QuarticFit((a0, a1, a2, a3, a4), pct, SIOUX_FIT_DOMAIN, node))
    return out


# -- unit mapping -----------------------------------------------------------------


TANGENT = "tangent"
POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class UnitConfig:
    """Network node cost c_v(f) = quartic(flow_scale * f) / time_divisor.

    ``time_divisor`` 60 converts seconds to minutes and ``flow_scale`` maps
    assignment flow onto the fit's departures axis.  Past the fitted departures
    range the cost either follows its tangent line (``tangent``, default) or
    the raw quartic (``polynomial``).  ``operating_flow`` is the largest network
    flow the cost is checked on.
    """

    time_divisor: float = 60.0
    flow_scale: float = 1.0
    extrapolation: str = TANGENT
    operating_flow: float | None = None

    def __post_init__(self):
        if self.time_divisor <= 0 or self.flow_scale <= 0:
            raise ValueError("time_divisor and flow_scale must be positive")
        if self.extrapolation not in (TANGENT, POLYNOMIAL):
            raise ValueError(f"unknown extrapolation {self.extrapolation!r}")


def node_cost_units_map(fit: QuarticFit, units: UnitConfig = UnitConfig()) -> CostFunction:
    """Fitted quartic expressed in network units.

    The result is non-negative and non-decreasing on its operating domain
    (checked at construction).  An :class:`ExtrapolationWarning` is issued when the
    operating domain maps past the fitted departures range.
    """
    s, div = units.flow_scale, units.time_divisor
    coeffs = tuple(a * s**k / div for k, a in enumerate(fit.coefficients))
    fitted_max = fit.fit_domain[1] / s
    flow_max = units.operating_flow if units.operating_flow is not None else fitted_max
    if flow_max > fitted_max * (1 + 1e-12):
        warnings.warn(
            f"node {fit.node_id}: operating flow {flow_max:.6g} maps to N={flow_max * s:.6g}, "
            f"beyond the fitted range {fit.fit_domain[1]:.6g}",
            ExtrapolationWarning,
            stacklevel=2,
        )
    if units.extrapolation == POLYNOMIAL:
        return Polynomial(coeffs, flow_max=flow_max)
    inner = Polynomial(coeffs, flow_max=fitted_max)
    return TangentExtension(inner, fitted_max, flow_max=max(flow_max, fitted_max))


# -- node-cost sidecar CSV ----------------------------------------------------------

SIDECAR_FIELDS = ["node_id", "a0", "a1", "a2", "a3", "a4", "flow_max", "mape"]


def write_node_cost_sidecar(fits, path) -> None:
    """CSV (node_id, a0..a4, flow_max, mape); flow_max is the fitted departures range."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIDECAR_FIELDS)
        for f in fits:
            w.writerow(
                [f.node_id] + [repr(a) for a in f.coefficients]
                + [repr(f.fit_domain[1]), repr(float(f.mape_percent))]
            )


def read_node_cost_sidecar(path) -> list[QuarticFit]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(SIDECAR_FIELDS[:7]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: sidecar lacks columns {sorted(missing)}")
        for row in reader:
            coeffs = tuple(float(row[f"a{k}"]) for k in range(DEGREE + 1))
            pct = float(row["mape"]) if row.get("mape") not in (None, "") else float("nan")
            out.append(QuarticFit(coeffs, pct, (0.0, float(row["flow_max"])), parse_id(row["node_id"])))
    return out


def read_delay_samples(path) -> list[DelaySamples]:
    """CSV (node_id, departures, mean_delay_seconds) grouped by node, file order kept."""
    groups: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = parse_id(row["node_id"])
            groups.setdefault(key, ([], []))
            groups[key][0].append(float(row["departures"]))
            groups[key][1].append(float(row["mean_delay_seconds"]))
    return [DelaySamples(k, np.array(n), np.array(d)) for k, (n, d) in groups.items()]


def write_delay_samples(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "departures", "mean_delay_seconds"])
        for s in samples:
            for n, d in zip(s.departures, s.mean_delay):
                w.writerow([s.node_id, repr(float(n)), repr(float(d))])


# -- flow-scale calibration ----------------------------------------------------------

# Solving the baseline UE (tolerance 1e-6) for s with the builtin table, time
# divisor 60 and tangent extrapolation gives a UE social cost of 8.04e6 min.
SIOUX_FLOW_SCALE = 0.145130974513796
SIOUX_UE_TARGET = 8.04e6


def sioux_units(flow_scale: float = SIOUX_FLOW_SCALE) -> UnitConfig:
    return UnitConfig(time_divisor=60.0, flow_scale=flow_scale)


def apply_node_fits(network, fits, units: UnitConfig):
    """Copy of ``network`` whose listed nodes get the mapped fitted costs."""
    return network.with_node_costs({f.node_id: node_cost_units_map(f, units) for f in fits})


def calibrate_flow_scale(
    network,
    fits,
    target: float = SIOUX_UE_TARGET,
    bracket: tuple[float, float] = (1e-3, 1.0),
    time_divisor: float = 60.0,
    tolerance: float = 1e-6,
    xtol: float = 1e-9,
) -> float:
    """Flow scale s at which the baseline UE social cost equals ``target``.

    The UE cost grows with s (node delays only increase), so a bracketing root
    finder on UE(s) - target applies.
    """
    from scipy.optimize import brentq

    from .equilibrium import AssignmentProblem, SolveOptions

    options = SolveOptions(relative_gap_tolerance=tolerance)

    def excess(s):
        net = apply_node_fits(network, fits, UnitConfig(time_divisor, s))
        return AssignmentProblem.links(net).solve(options=options).social_cost - target

    lo, hi = bracket
    if excess(lo) > 0 or excess(hi) < 0:
        raise ValueError(f"target {target:.6g} not bracketed by flow scales {bracket}")
    return float(brentq(excess, lo, hi, xtol=xtol))
