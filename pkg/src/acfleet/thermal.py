"""Second-order (air + mass) house thermal model with an exact closed-form step.

The house is described by two coupled linear ODEs::

    Ch dTh/dt = Uh (To - Th) + Hm (Tm - Th) + Qa + Qs
    Cm dTm/dt = Hm (Th - Tm)

Eliminating Tm gives ``a Th'' + b Th' + c Th = d``, whose solution for inputs
held constant over the step (zero-order hold) is a sum of two exponentials.

All temperatures are in degrees Celsius. The model is affine in the
temperatures, so no Kelvin conversion is needed anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import NonFiniteResult

TEMP_MIN = -50.0
TEMP_MAX = 80.0


@dataclass(frozen=True)
class ThermalParams:
    """Wall conductance Uh (W/K), mass capacity Cm (J/K), air capacity Ch (J/K), mass conductance Hm (W/K)."""

    Uh: float = 2.18e2
    Cm: float = 3.45e6
    Ch: float = 9.08e5
    Hm: float = 2.84e3

    def __post_init__(self):
        vals = np.array([self.Uh, self.Cm, self.Ch, self.Hm], dtype=float)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"thermal parameters must be finite and > 0, got {self}")
        a, b, c = quadratic_coefficients(self.Uh, self.Cm, self.Ch, self.Hm)
        if not b * b - 4 * a * c > 0:
            raise NonFiniteResult(f"repeated or complex roots for {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.Uh, self.Cm, self.Ch, self.Hm])


@dataclass(frozen=True)
class HouseState:
    Th: float
    Tm: float


@dataclass(frozen=True)
class ThermalInputs:
    To: float
    Qa: float = 0.0
    Qs: float = 0.0
    dt: float = 4.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")


def quadratic_coefficients(Uh, Cm, Ch, Hm):
    a = Cm * Ch / Hm
    b = Cm * (Uh + Hm) / Hm + Ch
    c = Uh
    return a, b, c


@dataclass(frozen=True)
class ThermalCoefficients:
    """Step-invariant part of the closed form: depends on parameters and dt only.

    Fields may be scalars or arrays (one entry per house).
    """

    Uh: np.ndarray
    Ch: np.ndarray
    Hm: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    A3: np.ndarray
    A4: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    dt: float

    @classmethod
    def build(cls, Uh, Cm, Ch, Hm, dt: float) -> "ThermalCoefficients":
        Uh, Cm, Ch, Hm = (np.asarray(v, dtype=float) for v in (Uh, Cm, Ch, Hm))
        if not dt > 0:
            raise ValueError("dt must be > 0")
        a, b, c = quadratic_coefficients(Uh, Cm, Ch, Hm)
        disc = b * b - 4 * a * c
        if np.any(disc <= 0):
            raise NonFiniteResult("repeated or complex roots in thermal model")
        sq = np.sqrt(disc)
        r1 = (-b + sq) / (2 * a)
        r2 = (-b - sq) / (2 * a)
        A3 = (r1 * Ch + Uh + Hm) / Hm
        A4 = (r2 * Ch + Uh + Hm) / Hm
        coeffs = cls(Uh, Ch, Hm, r1, r2, A3, A4, np.exp(r1 * dt), np.exp(r2 * dt), float(dt))
        for name in ("r1", "r2", "A3", "A4", "e1", "e2"):
            if not np.all(np.isfinite(getattr(coeffs, name))):
                raise NonFiniteResult(f"non-finite thermal coefficient {name}")
        return coeffs

    @classmethod
    def from_params(cls, params: ThermalParams, dt: float) -> "ThermalCoefficients":
        return cls.build(params.Uh, params.Cm, params.Ch, params.Hm, dt)

    def advance(self, Th, Tm, To, Qa, Qs=0.0):
        """Advance (Th, Tm) by one step of length ``dt``; works elementwise on arrays."""
        Th = np.asarray(Th, dtype=float)
        Tm = np.asarray(Tm, dtype=float)
        with np.errstate(invalid="ignore", over="ignore"):
            heat = Qa + Qs
            d_over_c = heat / self.Uh + To
            dTh0 = (self.Hm * Tm - (self.Uh + self.Hm) * Th + self.Uh * To + heat) / self.Ch
            A1 = (self.r2 * Th - dTh0 - self.r2 * d_over_c) / (self.r2 - self.r1)
            A2 = Th - d_over_c - A1
            x1 = A1 * self.e1
            x2 = A2 * self.e2
            Th_next = x1 + x2 + d_over_c
            Tm_next = x1 * self.A3 + x2 * self.A4 + d_over_c
        if not (np.all(np.isfinite(Th_next)) and np.all(np.isfinite(Tm_next))):
            raise NonFiniteResult("thermal step produced a non-finite temperature")
        return Th_next, Tm_next


def step_thermal(state: HouseState, params: ThermalParams, inputs: ThermalInputs) -> HouseState:
    """Exact one-step update of a single house for inputs held constant over ``inputs.dt``."""
    coeffs = ThermalCoefficients.from_params(params, inputs.dt)
    Th, Tm = coeffs.advance(state.Th, state.Tm, inputs.To, inputs.Qa, inputs.Qs)
    return HouseState(float(Th), float(Tm))


def clamp_temperatures(Th: np.ndarray, Tm: np.ndarray):
    """Clamp to the simulator's physical envelope; returns (Th, Tm, diverged)."""
    diverged = bool(
        np.any(Th < TEMP_MIN) or np.any(Th > TEMP_MAX) or np.any(Tm < TEMP_MIN) or np.any(Tm > TEMP_MAX)
    )
    if diverged:
        Th = np.clip(Th, TEMP_MIN, TEMP_MAX)
        Tm = np.clip(Tm, TEMP_MIN, TEMP_MAX)
    return Th, Tm, diverged


def affine_dynamics(params: ThermalParams, To: float, dt: float, Qs: float = 0.0):
    """Exact affine form ``x' = A x + B Qa + e`` of one step, with x = (Th, Tm).

    Extracted by evaluating the closed form at basis points; since the step is
    affine in (Th, Tm, Qa) for fixed params/To/dt this is exact up to rounding.
    """
    coeffs = ThermalCoefficients.from_params(params, dt)
    e = np.array(coeffs.advance(0.0, 0.0, To, 0.0, Qs), dtype=float)
    A = np.empty((2, 2))
    A[:, 0] = np.array(coeffs.advance(1.0, 0.0, To, 0.0, Qs)) - e
    A[:, 1] = np.array(coeffs.advance(0.0, 1.0, To, 0.0, Qs)) - e
    B = np.array(coeffs.advance(0.0, 0.0, To, 1.0, Qs)) - e
    return A, B, e


@dataclass(frozen=True)
class SolarConfig:
    """Bivariate polynomial solar gain in (day_of_year, hour_of_day).

    ``coefficients[(i, j)]`` multiplies ``day**i * hour**j`` with ``i + j <= 4``.
    No coefficients (the default) disables solar gain.
    """

    coefficients: tuple = ()
    start_hour: float = 7.5
    end_hour: float = 17.5

    @classmethod
    def from_mapping(cls, coeffs: dict) -> "SolarConfig":
        items = []
        for (i, j), v in sorted(coeffs.items()):
            if i < 0 or j < 0 or i + j > 4:
                raise ValueError(f"term day^{i} hour^{j} exceeds degree 4")
            items.append(((int(i), int(j)), float(v)))
        return cls(tuple(items))


def solar_gain(day_of_year: int, seconds_of_day: float, config: SolarConfig | None = None) -> float:
    """Solar heat gain in W; zero at night (before 7:30 and after 17:30) and when disabled."""
    if config is None or not config.coefficients:
        return 0.0
    hour = (seconds_of_day % 86400.0) / 3600.0
    if hour < config.start_hour or hour > config.end_hour:
        return 0.0
    total = 0.0
    for (i, j), v in config.coefficients:
        total += v * float(day_of_year) ** i * hour ** j
    return max(total, 0.0)
