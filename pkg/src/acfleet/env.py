"""Multi-house AC fleet environment with local (ring) communication.

Per step, in order: lockout-aware AC transitions, AC outputs, thermal update of
every house, aggregate power and base-demand refresh, then observations and
rewards. The signal ``s_t`` in force during an interval is known when the
actions for that interval are chosen; the reward compares it with the power
drawn over the same interval and with the post-step air temperatures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ConfigError
from .hvac import AcParams, transition
from .signal import BaseSignalTable, SignalConfig, default_table, interpolate_Da, perlin_1d
from .thermal import SolarConfig, ThermalCoefficients, ThermalParams, clamp_temperatures, solar_gain

OBS_FIELDS = ("Th", "Tm", "TT", "on", "lockout", "signal_per_agent", "power_per_agent")
MESSAGE_FIELDS = ("temp_diff", "lockout", "on")
OBS_SIZE = len(OBS_FIELDS)
MESSAGE_SIZE = len(MESSAGE_FIELDS)
DA_REFRESH_SECONDS = 300.0


@dataclass(frozen=True)
class Heterogeneity:
    """Per-house parameter samplers; all off by default (homogeneous fleet)."""

    thermal_std_frac: float = 0.0
    ka_choices: tuple = ()
    lmax_choices: tuple = ()


@dataclass(frozen=True)
class EnvConfig:
    N: int = 10
    Nc: int = 9
    dt: float = 4.0
    target: float = 20.0
    outdoor_min: float = 28.0
    outdoor_max: float = 34.0
    outdoor_shift: float = 0.0
    alpha_temp: float = 1.0
    alpha_sig: float = 3e-7
    init_sigma: float = 5.0
    thermal: ThermalParams = field(default_factory=ThermalParams)
    ac: AcParams = field(default_factory=AcParams)
    heterogeneity: Heterogeneity = field(default_factory=Heterogeneity)
    signal: SignalConfig = field(default_factory=SignalConfig)
    solar: SolarConfig = field(default_factory=SolarConfig)
    day_of_year: int = 180
    start_time: float = 0.0
    p_d: float = 0.0
    seed: int = 0
    # observation normalisation constants
    temp_scale: float = 30.0
    # "absolute": Th, Tm, TT divided by temp_scale; "offset": Th - TT and Tm - TT divided by
    # offset_scale (TT itself still divided by temp_scale), also used for the message temp_diff
    obs_temperatures: str = "absolute"
    offset_scale: float = 1.0

    def validate(self) -> None:
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not 0 <= self.Nc < self.N:
            raise ConfigError(f"Nc must satisfy 0 <= Nc < N (got Nc={self.Nc}, N={self.N})")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.init_sigma < 0:
            raise ConfigError("init_sigma must be >= 0")
        if not 0 <= self.p_d <= 1:
            raise ConfigError("p_d must be in [0, 1]")
        if self.obs_temperatures not in ("absolute", "offset"):
            raise ConfigError(f"obs_temperatures must be 'absolute' or 'offset', got {self.obs_temperatures!r}")
        if not (self.temp_scale > 0 and self.offset_scale > 0):
            raise ConfigError("normalisation scales must be > 0")
        for lmax in (self.ac.lmax, *self.heterogeneity.lmax_choices):
            steps = lmax / self.dt
            if abs(steps - round(steps)) > 1e-9:
                raise ConfigError(f"lockout {lmax} s is not a multiple of dt={self.dt}")

    @property
    def lockout_scale(self) -> float:
        return self.ac.lmax if self.ac.lmax > 0 else 1.0

    @property
    def power_scale(self) -> float:
        return self.ac.power

    @property
    def temp_diff_scale(self) -> float:
        return self.offset_scale if self.obs_temperatures == "offset" else self.temp_scale

    def normalization(self) -> dict:
        return {"temp_scale": self.temp_scale, "lockout_scale": self.lockout_scale,
                "power_scale": self.power_scale, "obs_temperatures": self.obs_temperatures,
                "offset_scale": self.offset_scale}

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)


@dataclass
class GlobalState:
    time: float
    Th: np.ndarray
    Tm: np.ndarray
    on: np.ndarray
    lockout: np.ndarray
    P: float
    s: float
    Da: float
    tracked_signal: float
    diverged: bool = False


def neighbours(i: int, N: int, Nc: int) -> list[int]:
    """Ring neighbours of agent i ordered by signed offset.

    Offsets -Nc//2 .. +Nc//2 excluding 0; an odd Nc takes one extra neighbour
    at offset Nc//2 + 1 so that exactly Nc agents are returned.
    """
    if not 0 <= Nc < N:
        raise ValueError("need 0 <= Nc < N")
    return [(i + off) % N for off in ring_offsets(Nc)]


def ring_offsets(Nc: int) -> list[int]:
    half = Nc // 2
    offs = [o for o in range(-half, half + 1) if o != 0]
    if Nc % 2:
        offs.append(half + 1)
    return offs


def neighbour_matrix(N: int, Nc: int) -> np.ndarray:
    """(N, Nc) integer array; row i lists i's neighbours in offset order."""
    offs = np.array(ring_offsets(Nc), dtype=int)
    return (np.arange(N)[:, None] + offs[None, :]) % N


def neighbour_mask(N: int, Nc: int) -> np.ndarray:
    """(N, N) boolean mask, True where column j is a neighbour of row i."""
    mask = np.zeros((N, N), dtype=bool)
    if Nc:
        idx = neighbour_matrix(N, Nc)
        mask[np.arange(N)[:, None], idx] = True
    return mask


class FleetEnv:
    """Dec-POMDP environment over ``N`` houses.

    ``step`` mutates internal state; one instance must not be stepped from
    several threads. Independent instances share nothing.
    """

    def __init__(self, config: EnvConfig = EnvConfig(), table: BaseSignalTable | None = None):
        config.validate()
        self.config = config
        self.table = table if table is not None else default_table()
        self.neighbour_idx = neighbour_matrix(config.N, config.Nc)
        self.refresh_steps = max(1, int(round(DA_REFRESH_SECONDS / config.dt)))
        self._coeff_cache: dict = {}
        self.state: GlobalState | None = None

    # ------------------------------------------------------------------ setup

    def _coefficients(self, thermal: np.ndarray) -> ThermalCoefficients:
        key = (thermal.tobytes(), self.config.dt)
        if key not in self._coeff_cache:
            self._coeff_cache[key] = ThermalCoefficients.build(*thermal.T, self.config.dt)
        return self._coeff_cache[key]

    def _sample_houses(self, rng: np.random.Generator):
        cfg, het, N = self.config, self.config.heterogeneity, self.config.N
        thermal = np.tile(cfg.thermal.as_array(), (N, 1))
        if het.thermal_std_frac > 0:
            noisy = thermal * (1.0 + het.thermal_std_frac * rng.standard_normal((N, 4)))
            # redraw non-positive values until every parameter is valid
            bad = noisy <= 0
            while bad.any():
                noisy[bad] = thermal[bad] * (1.0 + het.thermal_std_frac * rng.standard_normal(bad.sum()))
                bad = noisy <= 0
            thermal = noisy
        Ka = np.full(N, cfg.ac.Ka)
        if het.ka_choices:
            Ka = rng.choice(np.asarray(het.ka_choices, dtype=float), size=N)
        lmax = np.full(N, cfg.ac.lmax)
        if het.lmax_choices:
            lmax = rng.choice(np.asarray(het.lmax_choices, dtype=float), size=N)
        return thermal, Ka, lmax

    def reset(self, seed: int | None = None, initial=None, start_time: float | None = None):
        """Start an episode; returns (raw observations, state).

        ``initial`` optionally fixes (Th, Tm) arrays instead of sampling them.
        """
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        ss = np.random.SeedSequence(seed)
        init_ss, het_ss, comm_ss, sig_ss = ss.spawn(4)
        rng = np.random.default_rng(init_ss)
        self.comm_rng = np.random.default_rng(comm_ss)
        self.thermal, self.Ka, self.lmax = self._sample_houses(np.random.default_rng(het_ss))
        self.coeffs = self._coefficients(self.thermal)
        self.heat = -self.Ka / (1.0 + cfg.ac.La)
        self.power = self.Ka / cfg.ac.COPa
        self.perlin = replace(cfg.signal.perlin, seed=int(sig_ss.generate_state(1)[0]))
        N = cfg.N
        if initial is None:
            Th = cfg.target + np.abs(rng.normal(0.0, cfg.init_sigma, N)) if cfg.init_sigma > 0 else np.full(N, cfg.target)
            Tm = cfg.target + np.abs(rng.normal(0.0, cfg.init_sigma, N)) if cfg.init_sigma > 0 else np.full(N, cfg.target)
        else:
            Th, Tm = (np.array(v, dtype=float).reshape(N) for v in initial)
        t0 = cfg.start_time if start_time is None else float(start_time)
        self.steps = 0
        Da = self._base_demand(Th, Tm, t0)
        self.state = GlobalState(
            time=t0, Th=Th, Tm=Tm, on=np.zeros(N, dtype=bool), lockout=np.zeros(N),
            P=0.0, s=0.0, Da=Da, tracked_signal=0.0,
        )
        self.state.s = self._signal(t0, Da)
        return self.observations(), self.state

    # ------------------------------------------------------------------ physics

    def outdoor_temperature(self, t: float) -> float:
        cfg = self.config
        mid = 0.5 * (cfg.outdoor_min + cfg.outdoor_max)
        amp = 0.5 * (cfg.outdoor_max - cfg.outdoor_min)
        hours = (t % 86400.0) / 3600.0
        return mid - amp * math.cos(2.0 * math.pi * (hours - 6.0) / 24.0) + cfg.outdoor_shift

    def _base_demand(self, Th, Tm, t) -> float:
        per_house = interpolate_Da(self.table, Th, Tm, self.config.target, self.outdoor_temperature(t),
                                   self.Ka, self.thermal)
        return float(per_house.sum())

    def _signal(self, t, Da) -> float:
        sig = self.config.signal
        base = Da * sig.mean_factor
        return max(base * (1.0 + sig.beta_p * perlin_1d(t, self.perlin)), 0.0)

    def step(self, actions):
        """Advance one timestep; returns (raw observations, rewards, state)."""
        cfg, st = self.config, self.state
        actions = np.asarray(actions, dtype=bool).reshape(-1)
        if actions.shape != (cfg.N,):
            raise ValueError(f"expected {cfg.N} actions, got {actions.shape}")
        on, lockout = transition(st.on, st.lockout, actions, self.lmax, cfg.dt)
        Qa = np.where(on, self.heat, 0.0)
        P = float(np.where(on, self.power, 0.0).sum())
        To = self.outdoor_temperature(st.time)
        Qs = solar_gain(cfg.day_of_year, st.time, cfg.solar)
        Th, Tm = self.coeffs.advance(st.Th, st.Tm, To, Qa, Qs)
        Th, Tm, diverged = clamp_temperatures(Th, Tm)
        tracked = st.s
        time = st.time + cfg.dt
        self.steps += 1
        Da = st.Da
        if self.steps % self.refresh_steps == 0:
            Da = self._base_demand(Th, Tm, time)
        self.state = GlobalState(time=time, Th=Th, Tm=Tm, on=on, lockout=lockout, P=P,
                                 s=self._signal(time, Da), Da=Da, tracked_signal=tracked,
                                 diverged=st.diverged or diverged)
        rewards = self.rewards(Th, P, tracked)
        return self.observations(), rewards, self.state

    def rewards(self, Th, P, s) -> np.ndarray:
        cfg = self.config
        temp = cfg.alpha_temp * (Th - cfg.target) ** 2
        sig = cfg.alpha_sig * ((P - s) / cfg.N) ** 2
        return -(temp + sig)

    # ------------------------------------------------------------------ observations

    def observations(self) -> np.ndarray:
        """Raw (N, 7) observations in physical units, columns in ``OBS_FIELDS`` order."""
        st, cfg = self.state, self.config
        N = cfg.N
        obs = np.empty((N, OBS_SIZE))
        obs[:, 0] = st.Th
        obs[:, 1] = st.Tm
        obs[:, 2] = cfg.target
        obs[:, 3] = st.on
        obs[:, 4] = st.lockout
        obs[:, 5] = st.s / N
        obs[:, 6] = st.P / N
        return obs

    def normalized_observations(self) -> np.ndarray:
        """Observations scaled by fixed constants (temperatures /30, lockout /lmax, powers /rated)."""
        cfg = self.config
        obs = self.observations()
        if cfg.obs_temperatures == "offset":
            obs[:, 0:2] = (obs[:, 0:2] - cfg.target) / cfg.offset_scale
            obs[:, 2] /= cfg.temp_scale
        else:
            obs[:, 0:3] /= cfg.temp_scale
        obs[:, 4] /= cfg.lockout_scale
        obs[:, 5:7] /= cfg.power_scale
        return obs

    def messages(self) -> np.ndarray:
        """Normalised hand-engineered message of every agent, (N, 3)."""
        st, cfg = self.state, self.config
        return np.column_stack([(st.Th - cfg.target) / cfg.temp_diff_scale,
                                st.lockout / cfg.lockout_scale,
                                st.on.astype(float)])

    def augmented_observations(self, p_d: float | None = None, Nc: int | None = None) -> np.ndarray:
        """Own observation followed by neighbours' messages in signed-offset order.

        Each message is independently dropped (zero-filled) with probability ``p_d``.
        """
        p_d = self.config.p_d if p_d is None else p_d
        own = self.normalized_observations()
        idx = self.neighbour_idx if Nc is None else neighbour_matrix(self.config.N, Nc)
        if idx.shape[1] == 0:
            return own
        msgs = self.messages()[idx]  # (N, Nc, 3)
        if p_d > 0:
            keep = self.comm_rng.random(idx.shape) >= p_d
            msgs = msgs * keep[:, :, None]
        return np.concatenate([own, msgs.reshape(self.config.N, -1)], axis=1)

    def collect_he_messages(self, i: int, p_d: float | None = None) -> np.ndarray:
        """Augmented observation of a single agent (uses only i's own data and neighbours' messages)."""
        p_d = self.config.p_d if p_d is None else p_d
        own = self.normalized_observations()[i]
        idx = self.neighbour_idx[i]
        msgs = self.messages()[idx]
        if p_d > 0 and len(idx):
            msgs = msgs * (self.comm_rng.random(len(idx)) >= p_d)[:, None]
        return np.concatenate([own, msgs.reshape(-1)])

    def comm_mask(self, p_d: float | None = None, Nc: int | None = None) -> np.ndarray:
        """(N, N) receive mask for attention-based messaging after random message loss."""
        p_d = self.config.p_d if p_d is None else p_d
        mask = neighbour_mask(self.config.N, self.config.Nc if Nc is None else Nc)
        if p_d > 0:
            mask &= self.comm_rng.random(mask.shape) >= p_d
        return mask
