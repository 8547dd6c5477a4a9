"""Congestion cost functions for edges and intersections.

Every cost maps a non-negative flow to a travel time and exposes its closed-form
integral (for the potential) and derivatives (for marginal costs and
conjugate directions).  Construction runs a grid check of non-negativity and
monotonicity on ``[0, flow_max]``; functions that fail it are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRID_POINTS = 1000


class AssumptionViolation(ValueError):
    """A cost function is negative or decreasing on its operating domain."""


class CostFunction:
    """Base class; subclasses implement the four evaluators on numpy arrays."""

    flow_max: float

    def evaluate(self, x):
        raise NotImplementedError

    def integral(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def second_derivative(self, x):
        raise NotImplementedError

    def bank_terms(self) -> tuple[np.ndarray, float, float, float, float]:
        """(ascending polynomial coefficients, bpr_coef, bpr_capacity, bpr_power, breakpoint).

        The kernel form is ``sum_k a_k x**k + bpr_coef * (x / cap)**power`` up to
        ``breakpoint`` and its tangent line beyond (``inf`` for no breakpoint).
        """
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    def grid(self, n: int = GRID_POINTS) -> np.ndarray:
        return np.linspace(0.0, self.flow_max, n)

    def min_value(self) -> float:
        """Lower bound of the cost on the operating domain (grid estimate)."""
        return float(np.min(self.evaluate(self.grid())))

    def is_zero(self) -> bool:
        poly, bc = self.bank_terms()[:2]
        return not np.any(poly) and bc == 0.0

    def check_assumption(self, n: int = GRID_POINTS) -> None:
        xs = self.grid(n)
        ys = np.asarray(self.evaluate(xs), dtype=float)
        scale = max(1.0, float(np.max(np.abs(ys))))
        if not np.all(np.isfinite(ys)):
            raise AssumptionViolation(f"{self!r}: non-finite values on [0, {self.flow_max}]")
        if np.min(ys) < -1e-12 * scale:
            i = int(np.argmin(ys))
            raise AssumptionViolation(f"{self!r}: negative value {ys[i]:.6g} at flow {xs[i]:.6g}")
        steps = np.diff(ys)
        if np.min(steps) < -1e-12 * scale:
            i = int(np.argmin(steps))
            raise AssumptionViolation(
                f"{self!r}: decreasing between flows {xs[i]:.6g} and {xs[i + 1]:.6g}"
            )


@dataclass(frozen=True)
class Polynomial(CostFunction):
    """c(x) = a0 + a1 x + ... + an x^n."""

    coefficients: tuple[float, ...]
    flow_max: float = 1.0
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        if not coeffs:
            coeffs = (0.0,)
        object.__setattr__(self, "coefficients", coeffs)
        if self.flow_max <= 0:
            raise ValueError("flow_max must be positive")
        if self.check:
            self.check_assumption()

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def evaluate(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coefficients)

    def integral(self, x):
        c = np.polynomial.polynomial.polyint(self.coefficients)
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)

    def derivative(self, x):
        c = np.polynomial.polynomial.polyder(self.coefficients)
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)

    def second_derivative(self, x):
        c = np.polynomial.polynomial.polyder(self.coefficients, 2)
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), c)

    def bank_terms(self):
        return np.array(self.coefficients), 0.0, 1.0, 1.0, np.inf


@dataclass(frozen=True)
class Constant(CostFunction):
    value: float
    flow_max: float = 1.0

    def __post_init__(self):
        if self.value < 0:
            raise AssumptionViolation(f"constant cost {self.value} is negative")

    def evaluate(self, x):
        return np.full(np.shape(x), float(self.value))[()]

    def integral(self, x):
        return self.value * np.asarray(x, dtype=float)

    def derivative(self, x):
        return np.zeros(np.shape(x))[()]

    second_derivative = derivative

    def bank_terms(self):
        return np.array([float(self.value)]), 0.0, 1.0, 1.0, np.inf


@dataclass(frozen=True)
class BPR(CostFunction):
    """Bureau of Public Roads link cost fft * (1 + b * (x / capacity)**power)."""

    free_flow_time: float
    capacity: float
    b: float = 0.15
    power: float = 4.0
    flow_max: float | None = None

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.free_flow_time < 0 or self.b < 0 or self.power < 0:
            raise AssumptionViolation(f"{self!r}: BPR parameters must be non-negative")
        if self.flow_max is None:
            object.__setattr__(self, "flow_max", 10.0 * self.capacity)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        return self.free_flow_time * (1.0 + self.b * (x / self.capacity) ** self.power)

    def integral(self, x):
        x = np.asarray(x, dtype=float)
        p = self.power
        return self.free_flow_time * (
            x + self.b * self.capacity / (p + 1.0) * (x / self.capacity) ** (p + 1.0)
        )

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.power
        if p == 0:
            return np.zeros_like(x)[()]
        return self.free_flow_time * self.b * p / self.capacity * (x / self.capacity) ** (p - 1.0)

    def second_derivative(self, x):
        x = np.asarray(x, dtype=float)
        p = self.power
        if p <= 1:
            return np.zeros_like(x)[()]
        return (
            self.free_flow_time * self.b * p * (p - 1.0) / self.capacity**2
            * (x / self.capacity) ** (p - 2.0)
        )

    def bank_terms(self):
        return (
            np.array([float(self.free_flow_time)]),
            float(self.free_flow_time * self.b),
            float(self.capacity),
            float(self.power),
            np.inf,
        )


@dataclass(frozen=True)
class Shifted(CostFunction):
    """``base(x) + shift``; used to move a constant between serial and parallel edges."""

    base: CostFunction
    shift: float

    def __post_init__(self):
        object.__setattr__(self, "flow_max", self.base.flow_max)
        if self.base.min_value() + self.shift < -1e-12:
            raise AssumptionViolation(f"{self!r}: shift drives the cost negative")

    def evaluate(self, x):
        return self.base.evaluate(x) + self.shift

    def integral(self, x):
        return self.base.integral(x) + self.shift * np.asarray(x, dtype=float)

    def derivative(self, x):
        return self.base.derivative(x)

    def second_derivative(self, x):
        return self.base.second_derivative(x)

    def bank_terms(self):
        poly, bc, cap, pw, brk = self.base.bank_terms()
        poly = poly.copy()
        poly[0] += self.shift
        return poly, bc, cap, pw, brk


@dataclass(frozen=True)
class TangentExtension(CostFunction):
    """``base`` on [0, breakpoint], continued along its tangent line beyond.

    Keeps a fitted curve monotone and convex-compatible outside the range it
    was fitted on.  ``flow_max`` defaults to ten times the breakpoint.
    """

    base: CostFunction
    breakpoint: float
    flow_max: float | None = None

    def __post_init__(self):
        if not self.breakpoint > 0:
            raise ValueError("breakpoint must be positive")
        if np.isfinite(self.base.bank_terms()[4]):
            raise ValueError("base cost already has a breakpoint")
        if self.flow_max is None:
            object.__setattr__(self, "flow_max", 10.0 * self.breakpoint)
        self.check_assumption()

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        b = self.breakpoint
        return x, b, np.minimum(x, b), np.maximum(x - b, 0.0)

    def evaluate(self, x):
        _, b, inner, t = self._split(x)
        return self.base.evaluate(inner) + self.base.derivative(b) * t

    def integral(self, x):
        _, b, inner, t = self._split(x)
        return self.base.integral(inner) + self.base.evaluate(b) * t + 0.5 * self.base.derivative(b) * t**2

    def derivative(self, x):
        x, b, inner, _ = self._split(x)
        return np.where(x <= b, self.base.derivative(inner), self.base.derivative(b))[()]

    def second_derivative(self, x):
        x, _, inner, _ = self._split(x)
        return np.where(x <= self.breakpoint, self.base.second_derivative(inner), 0.0)[()]

    def bank_terms(self):
        poly, bc, cap, pw, _ = self.base.bank_terms()
        return poly, bc, cap, pw, float(self.breakpoint)


ZERO = Constant(0.0)


class CostBank:
    """Column-stacked coefficients of many cost functions, for the numba kernels."""

    def __init__(self, functions):
        functions = list(functions)
        terms = [f.bank_terms() for f in functions]
        width = max([len(t[0]) for t in terms], default=1)
        self.poly = np.zeros((len(functions), width))
        for i, t in enumerate(terms):
            self.poly[i, : len(t[0])] = t[0]
        self.bpr_coef = np.array([t[1] for t in terms], dtype=float)
        self.bpr_cap = np.array([t[2] for t in terms], dtype=float)
        self.bpr_pow = np.array([t[3] for t in terms], dtype=float)
        self.breakpoint = np.array([t[4] for t in terms], dtype=float)
        self.functions = functions

    def __len__(self):
        return len(self.functions)

    @property
    def arrays(self):
        return self.poly, self.bpr_coef, self.bpr_cap, self.bpr_pow, self.breakpoint
