"""Simulator and controller workbench for fast-timescale demand response with air-conditioner fleets."""

__version__ = "0.1.0"


class NonFiniteResult(ArithmeticError):
    """A thermal coefficient or state became NaN/inf."""


class ConfigError(ValueError):
    """Invalid environment, agent or experiment configuration."""
