"""Wardrop equilibria with intersection costs and timestamp-incentive design."""

__version__ = "0.1.0"
