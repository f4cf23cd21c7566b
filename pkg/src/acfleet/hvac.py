"""Air-conditioner power/heat model and the compressor lockout state machine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AcParams:
    Ka: float = 15000.0  # cooling capacity, W
    COPa: float = 2.5
    La: float = 0.35  # latent cooling fraction
    lmax: float = 40.0  # lockout duration, s

    def __post_init__(self):
        if not (self.Ka > 0 and self.COPa > 0 and self.La >= 0 and self.lmax >= 0):
            raise ValueError(f"invalid AC parameters {self}")

    @property
    def power(self) -> float:
        return self.Ka / self.COPa

    @property
    def heat(self) -> float:
        return -self.Ka / (1.0 + self.La)

    def check_timestep(self, dt: float) -> None:
        steps = self.lmax / dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"lockout {self.lmax} s is not a multiple of dt={dt} s")


@dataclass(frozen=True)
class AcState:
    on: bool = False
    lockout_remaining: float = 0.0


def ac_outputs(params: AcParams, state: AcState) -> tuple[float, float]:
    """(Qa, Pa) in W: heat removed from the air (negative) and electrical power."""
    if state.on:
        return params.heat, params.power
    return 0.0, 0.0


def apply_action(state: AcState, params: AcParams, action: bool, dt: float) -> AcState:
    """One lockout-aware transition.

    Switching OFF an ON unit arms the lockout at ``lmax``; the clock is then
    decremented in the same step, so the unit can restart exactly ``lmax``
    seconds after shutdown. ON requests during lockout are silently dropped.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    on, lockout = transition(
        np.array([state.on]), np.array([state.lockout_remaining], dtype=float),
        np.array([bool(action)]), params.lmax, dt,
    )
    return AcState(bool(on[0]), float(lockout[0]))


def transition(on: np.ndarray, lockout: np.ndarray, action: np.ndarray, lmax, dt: float):
    """Vectorised :func:`apply_action` over a fleet; ``lmax`` may be per-unit."""
    action = np.asarray(action, dtype=bool)
    turning_off = on & ~action
    lockout = np.where(turning_off, lmax, lockout)
    new_on = action & (lockout <= 0)
    lockout = np.maximum(lockout - dt, 0.0)
    return new_on, lockout
