"""Robustness suites: faulty communication, heterogeneous fleets, shifted environments."""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..env import EnvConfig, Heterogeneity
from ..signal import SignalConfig
from ..thermal import SolarConfig
from .metrics import evaluate

KA_CHOICES = (10000.0, 12500.0, 15000.0, 17500.0, 20000.0)
LMAX_CHOICES = (32.0, 36.0, 40.0, 44.0, 48.0)
THERMAL_STD_FRAC = 0.5

# Illustrative daytime bump peaking at 800 W at 12:30 and vanishing at 7:30 and 17:30;
# real coefficients are site-specific and can be supplied through SolarConfig.
DEMO_SOLAR = SolarConfig.from_mapping({(0, 0): -4200.0, (0, 1): 800.0, (0, 2): -32.0})


@dataclass(frozen=True)
class RobustnessSpec:
    """Which disturbances to run; each enabled entry becomes one row of the report."""

    p_d: tuple = (0.0, 0.1, 0.5)
    thermal_heterogeneity: bool = True
    ka_heterogeneity: bool = True
    lmax_heterogeneity: bool = True
    outdoor_shifts: tuple = (-4.0, 4.0)
    signal_mean_factors: tuple = (0.7, 1.3)
    noise_amplitude_factor: float = 1.3
    noise_frequency_factor: float = 2.0
    solar: bool = True

    def __post_init__(self):
        for p in self.p_d:
            if not 0 <= p <= 1:
                raise ValueError("p_d values must be in [0, 1]")
        if self.noise_amplitude_factor <= 0 or self.noise_frequency_factor <= 0:
            raise ValueError("noise factors must be > 0")


def variants(base: EnvConfig, spec: RobustnessSpec) -> list[tuple[str, EnvConfig]]:
    """(label, config) pairs, one per enabled disturbance, led by the undisturbed base."""
    out = [("baseline", base)]
    for p in spec.p_d:
        if p > 0:
            out.append((f"p_d={p:g}", base.with_(p_d=p)))
    if spec.thermal_heterogeneity:
        out.append(("thermal heterogeneity", base.with_(heterogeneity=Heterogeneity(thermal_std_frac=THERMAL_STD_FRAC))))
    if spec.ka_heterogeneity:
        out.append(("Ka heterogeneity", base.with_(heterogeneity=Heterogeneity(ka_choices=KA_CHOICES))))
    if spec.lmax_heterogeneity:
        out.append(("lmax heterogeneity", base.with_(heterogeneity=Heterogeneity(lmax_choices=LMAX_CHOICES))))
    for shift in spec.outdoor_shifts:
        out.append((f"outdoor {shift:+g} C", base.with_(outdoor_shift=base.outdoor_shift + shift)))
    sig = base.signal
    for f in spec.signal_mean_factors:
        out.append((f"signal mean x{f:g}", base.with_(signal=replace(sig, mean_factor=sig.mean_factor * f))))
    if spec.noise_amplitude_factor != 1:
        out.append((f"noise amplitude x{spec.noise_amplitude_factor:g}",
                    base.with_(signal=replace(sig, beta_p=sig.beta_p * spec.noise_amplitude_factor))))
    if spec.noise_frequency_factor != 1:
        perlin = replace(sig.perlin, frequency_factor=sig.perlin.frequency_factor * spec.noise_frequency_factor)
        out.append((f"noise frequency x{spec.noise_frequency_factor:g}", base.with_(signal=SignalConfig(
            perlin=perlin, beta_p=sig.beta_p, mean_factor=sig.mean_factor))))
    if spec.solar:
        out.append(("solar gain", base.with_(solar=DEMO_SOLAR)))
    return out


def robustness_suite(controller_factory, base: EnvConfig, spec: RobustnessSpec = RobustnessSpec(), seeds=(1,),
                     horizon: int = 43200, warmup: int = 5000, jobs: int = 1, table=None) -> list[dict]:
    """One summary row per disturbance; ``signal_ratio`` is relative to the baseline row."""
    rows = []
    ref = None
    for label, cfg in variants(base, spec):
        summary = evaluate(controller_factory, cfg, seeds, horizon, warmup, jobs, table=table).summary()
        summary["variant"] = label
        if ref is None:
            ref = summary["signal_rmse_mean"]
        summary["signal_ratio"] = summary["signal_rmse_mean"] / ref if ref > 0 else float("nan")
        rows.append(summary)
    return rows

