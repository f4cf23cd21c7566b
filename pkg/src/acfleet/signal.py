"""Regulation signal: interpolated base demand plus 1-D Perlin high-frequency deviation."""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hvac import AcParams
from .thermal import ThermalCoefficients, ThermalParams

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def _lattice_gradients(seed: int, octave: int, cells: np.ndarray) -> np.ndarray:
    """Pseudo-random gradients in [-1, 1] at integer lattice points (aperiodic, seedable)."""
    with np.errstate(over="ignore"):
        key = np.uint64(_octave_key(seed, octave))
        h = _splitmix64(key ^ cells.astype(np.int64).astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (2.0 / 2.0**53) - 1.0


_M64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64_int(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def _octave_key(seed: int, octave: int) -> int:
    return _splitmix64_int(_splitmix64_int(seed & _M64) ^ (octave + 1))


def _gradient_int(key: int, cell: int) -> float:
    h = _splitmix64_int(key ^ (cell & _M64))
    return (h >> 11) * (2.0 / 2.0**53) - 1.0


def fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


@dataclass(frozen=True)
class PerlinConfig:
    """Multi-octave 1-D gradient noise.

    With the defaults the octave lattice spacings are 80, 40, 20, 10 and 5 s
    (``base_period / octave_steps`` halved per octave). ``frequency_scheme="linear"``
    instead makes octave k's frequency proportional to k + 1.
    """

    octaves: int = 5
    amplitude_ratio: float = 0.9
    base_period: float = 400.0
    octave_steps: int = 5
    seed: int = 0
    frequency_scheme: str = "dyadic"
    frequency_factor: float = 1.0

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if not 0 < self.amplitude_ratio <= 1:
            raise ValueError("amplitude_ratio must be in (0, 1]")
        if not self.base_period > 0 or not self.frequency_factor > 0:
            raise ValueError("base_period and frequency_factor must be > 0")
        if self.frequency_scheme not in ("dyadic", "linear"):
            raise ValueError(f"unknown frequency scheme {self.frequency_scheme!r}")

    def spacings(self) -> list[float]:
        first = self.base_period / self.octave_steps / self.frequency_factor
        if self.frequency_scheme == "dyadic":
            return [first / 2**k for k in range(self.octaves)]
        return [first / (k + 1) for k in range(self.octaves)]

    def amplitudes(self) -> list[float]:
        return [self.amplitude_ratio**k for k in range(self.octaves)]


def gradient_noise(x: np.ndarray, seed: int, octave: int = 0) -> np.ndarray:
    """Single-octave 1-D Perlin noise in [-1, 1]; zero at every integer x."""
    x = np.asarray(x, dtype=float)
    cell = np.floor(x)
    f = x - cell
    g0 = _lattice_gradients(seed, octave, cell)
    g1 = _lattice_gradients(seed, octave, cell + 1)
    u = fade(f)
    # raw range is [-0.5, 0.5], attained at f = 0.5 with opposite unit gradients
    return 2.0 * ((1.0 - u) * g0 * f + u * g1 * (f - 1.0))


def perlin_1d(t, config: PerlinConfig = PerlinConfig()):
    """Normalised multi-octave noise delta_p(t) in [-1, 1]."""
    amps = config.amplitudes()
    if np.ndim(t) == 0:
        return _perlin_scalar(float(t), config.seed, tuple(config.spacings()), tuple(amps))
    t_arr = np.asarray(t, dtype=float)
    total = np.zeros_like(t_arr)
    for k, (spacing, amp) in enumerate(zip(config.spacings(), amps)):
        total = total + amp * gradient_noise(t_arr / spacing, config.seed, k)
    return total / sum(amps)


def _perlin_scalar(t: float, seed: int, spacings: tuple, amps: tuple) -> float:
    total = 0.0
    for k, (spacing, amp) in enumerate(zip(spacings, amps)):
        x = t / spacing
        cell = math.floor(x)
        f = x - cell
        key = _octave_key(seed, k)
        g0 = _gradient_int(key, cell)
        g1 = _gradient_int(key, cell + 1)
        u = fade(f)
        total += amp * 2.0 * ((1.0 - u) * g0 * f + u * g1 * (f - 1.0))
    return total / sum(amps)


@dataclass(frozen=True)
class SignalConfig:
    perlin: PerlinConfig = field(default_factory=PerlinConfig)
    beta_p: float = 0.9
    mean_factor: float = 1.0


@dataclass(frozen=True)
class RegulationSignal:
    Da: float
    delta_s: float
    s: float


def signal_at(t, Da, config: SignalConfig = SignalConfig()) -> RegulationSignal:
    """s = Da (1 + beta_p delta_p(t)), clamped at zero."""
    if Da < 0:
        raise ValueError("Da must be >= 0")
    base = Da * config.mean_factor
    delta = base * config.beta_p * perlin_1d(t, config.perlin)
    return RegulationSignal(base, delta, max(base + delta, 0.0))


# --------------------------------------------------------------------------- base table


class GridTooCoarse(UserWarning):
    """Interpolated base demand deviates from the simulation oracle by >10% of rated power."""


class TableClampWarning(UserWarning):
    """A base-demand query fell outside the table hull and was clamped."""


REFERENCE_TARGET = 20.0
TABLE_MAGIC = b"ACBT"
TABLE_VERSION = 1


def default_presets() -> list[ThermalParams]:
    base = ThermalParams()
    presets = [base]
    for name in ("Uh", "Cm", "Ch", "Hm"):
        for factor in (0.6, 1.4):
            kwargs = asdict(base)
            kwargs[name] *= factor
            presets.append(ThermalParams(**kwargs))
    return presets


@dataclass(frozen=True)
class TableGrid:
    """Axes of the base-demand table.

    Continuous axes (linear interpolation): outdoor temperature (at a reference
    target of 20 C), air and mass temperature offsets from target. Discrete axes
    (nearest neighbour): thermal parameter presets and cooling capacity.
    """

    outdoor: tuple = tuple(np.linspace(22.0, 42.0, 11))
    th_gaps: tuple = (-1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0, 3.0, 10.0)
    tm_gaps: tuple = (-1.0, 0.0, 0.5, 2.0, 10.0)
    ka_values: tuple = (10000.0, 12500.0, 15000.0, 17500.0, 20000.0)
    presets: tuple = field(default_factory=lambda: tuple(default_presets()))
    cop: float = 2.5
    latent: float = 0.35
    dt: float = 4.0
    duration: float = 300.0

    @property
    def shape(self) -> tuple:
        return (len(self.presets), len(self.ka_values), len(self.outdoor), len(self.th_gaps), len(self.tm_gaps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["presets"] = [asdict(p) for p in self.presets]
        d["outdoor"] = [float(v) for v in self.outdoor]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TableGrid":
        d = dict(d)
        d["presets"] = tuple(ThermalParams(**p) for p in d["presets"])
        for k in ("outdoor", "th_gaps", "tm_gaps", "ka_values"):
            d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


def bang_bang_average_power(Th_gap, Tm_gap, To_rel, Ka, Uh, Cm, Ch, Hm, cop, latent, dt, duration):
    """Mean electrical power of a lockout-free bang-bang thermostat over ``duration``.

    All array arguments broadcast; temperatures are relative to the target.
    """
    Th = np.array(Th_gap, dtype=float)
    Tm = np.array(Tm_gap, dtype=float)
    Th, Tm, To_rel, Ka = np.broadcast_arrays(Th, Tm, To_rel, Ka)
    Th, Tm = Th.copy(), Tm.copy()
    coeffs = ThermalCoefficients.build(Uh, Cm, Ch, Hm, dt)
    heat = -Ka / (1.0 + latent)
    power = Ka / cop
    total = np.zeros_like(Th)
    steps = int(round(duration / dt))
    for _ in range(steps):
        on = Th > 0.0
        total += np.where(on, power, 0.0)
        Th, Tm = coeffs.advance(Th, Tm, To_rel, np.where(on, heat, 0.0))
    return total / steps


@dataclass
class BaseSignalTable:
    grid: TableGrid
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"table values shape {self.values.shape} != grid {self.grid.shape}")
        self._preset_logs = np.log(np.array([p.as_array() for p in self.grid.presets]))

    # -- lookup ---------------------------------------------------------------------------

    def preset_index(self, params_array: np.ndarray) -> np.ndarray:
        """Nearest preset (log-space distance) for each row of (Uh, Cm, Ch, Hm)."""
        logs = np.log(np.atleast_2d(params_array))
        dist = ((logs[:, None, :] - self._preset_logs[None, :, :]) ** 2).sum(axis=2)
        return dist.argmin(axis=1)

    def ka_index(self, Ka) -> np.ndarray:
        axis = np.asarray(self.grid.ka_values)
        return np.abs(np.atleast_1d(Ka)[:, None] - axis[None, :]).argmin(axis=1)

    def interpolate(self, Th_gap, Tm_gap, To_rel, Ka, params_array) -> np.ndarray:
        """Per-house average power (W); ``To_rel`` is outdoor temperature at a 20 C target."""
        Th_gap, Tm_gap, To_rel, Ka = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (Th_gap, Tm_gap, To_rel, Ka))
        n = max(len(Th_gap), len(Tm_gap), len(To_rel), len(Ka))
        Th_gap, Tm_gap, To_rel, Ka = (np.broadcast_to(v, (n,)) for v in (Th_gap, Tm_gap, To_rel, Ka))
        params_array = np.broadcast_to(np.atleast_2d(params_array), (n, 4))
        p = self.preset_index(params_array)
        k = self.ka_index(Ka)
        io, wo = _bracket(self.grid.outdoor, To_rel)
        ih, wh = _bracket(self.grid.th_gaps, Th_gap)
        im, wm = _bracket(self.grid.tm_gaps, Tm_gap)
        v = self.values
        out = np.zeros(n)
        for do, fo in ((0, 1 - wo), (1, wo)):
            for dh, fh in ((0, 1 - wh), (1, wh)):
                for dm, fm in ((0, 1 - wm), (1, wm)):
                    out += fo * fh * fm * v[p, k, io + do, ih + dh, im + dm]
        return out

    # -- persistence ----------------------------------------------------------------------

    def save(self, path) -> None:
        """Binary file: magic, version, header length, JSON header, float64 values (C order)."""
        path = Path(path)
        header = json.dumps({"grid": self.grid.to_dict(), "shape": list(self.values.shape)}, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(TABLE_MAGIC)
            fh.write(struct.pack("<II", TABLE_VERSION, len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BaseSignalTable":
        path = Path(path)
        with open(path, "rb") as fh:
            if fh.read(4) != TABLE_MAGIC:
                raise ValueError(f"{path} is not a base-signal table")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != TABLE_VERSION:
                raise ValueError(f"unsupported table version {version}")
            header = json.loads(fh.read(hlen))
            values = np.frombuffer(fh.read(), dtype="<f8").astype(float)
        grid = TableGrid.from_dict(header["grid"])
        sidecar = path.with_suffix(path.suffix + ".json")
        metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(grid, values.reshape(header["shape"]), metadata)


def _bracket(axis, x):
    axis = np.asarray(axis, dtype=float)
    lo, hi = axis[0], axis[-1]
    if np.any(x < lo) or np.any(x > hi):
        warnings.warn(TableClampWarning("base-demand query outside table hull; clamped"), stacklevel=3)
        x = np.clip(x, lo, hi)
    i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, len(axis) - 2)
    w = (x - axis[i]) / (axis[i + 1] - axis[i])
    return i, w


def run_table_oracle(grid: TableGrid, presets=None) -> np.ndarray:
    """Simulate every grid node; returns values with shape ``grid.shape``."""
    presets = grid.presets if presets is None else presets
    out = np.empty(grid.shape)
    K, O, H, M = np.meshgrid(
        np.asarray(grid.ka_values), np.asarray(grid.outdoor) - REFERENCE_TARGET,
        np.asarray(grid.th_gaps), np.asarray(grid.tm_gaps), indexing="ij",
    )
    for p, prm in enumerate(presets):
        out[p] = bang_bang_average_power(
            H, M, O, K, prm.Uh, prm.Cm, prm.Ch, prm.Hm, grid.cop, grid.latent, grid.dt, grid.duration
        )
    return out


def build_base_table(grid: TableGrid = TableGrid(), validate: int = 200, seed: int = 0) -> BaseSignalTable:
    """Generate the base-demand table by simulating every node.

    ``validate`` random off-grid queries are checked against direct simulation;
    a :class:`GridTooCoarse` warning is raised if any residual exceeds 10% of
    the rated electrical power.
    """
    values = run_table_oracle(grid)
    table = BaseSignalTable(grid, values, {
        "generator": "lockout-free bang-bang, zero-order hold",
        "dt": grid.dt,
        "duration": grid.duration,
        "nodes": int(values.size),
        "seed": seed,
    })
    if validate:
        residual = validation_residuals(table, validate, seed)
        table.metadata["max_validation_residual_fraction"] = float(residual.max())
        if residual.max() > 0.10:
            warnings.warn(GridTooCoarse(
                f"max interpolation residual {residual.max():.1%} of rated power"), stacklevel=2)
    return table


def validation_residuals(table: BaseSignalTable, n: int, seed: int = 0) -> np.ndarray:
    """|interpolated - simulated| / rated power at ``n`` random in-hull queries."""
    grid = table.grid
    rng = np.random.default_rng(seed)
    To = rng.uniform(grid.outdoor[0], grid.outdoor[-1], n)
    th = rng.uniform(grid.th_gaps[0], grid.th_gaps[-1], n)
    tm = rng.uniform(grid.tm_gaps[0], grid.tm_gaps[-1], n)
    k = rng.integers(len(grid.ka_values), size=n)
    p = rng.integers(len(grid.presets), size=n)
    Ka = np.asarray(grid.ka_values)[k]
    prm = np.array([grid.presets[i].as_array() for i in p])
    approx = table.interpolate(th, tm, To, Ka, prm)
    exact = bang_bang_average_power(
        th, tm, To - REFERENCE_TARGET, Ka, prm[:, 0], prm[:, 1], prm[:, 2], prm[:, 3],
        grid.cop, grid.latent, grid.dt, grid.duration,
    )
    return np.abs(approx - exact) / (Ka / grid.cop)


def interpolate_Da(table: BaseSignalTable, Th, Tm, TT, To, Ka, params_array) -> np.ndarray:
    """Per-house base demand in W; the caller sums over houses."""
    Th = np.asarray(Th, dtype=float)
    TT = np.asarray(TT, dtype=float)
    To_rel = np.asarray(To, dtype=float) - TT + REFERENCE_TARGET
    return table.interpolate(Th - TT, np.asarray(Tm) - TT, To_rel, Ka, params_array)


_TABLE_CACHE: dict = {}


def default_table() -> BaseSignalTable:
    """Process-wide cached table for the default grid (no validation pass)."""
    if "default" not in _TABLE_CACHE:
        _TABLE_CACHE["default"] = build_base_table(TableGrid(), validate=0)
    return _TABLE_CACHE["default"]
