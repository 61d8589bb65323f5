"""Synthetic UWB channel impulse responses with known range bias.

The received waveform is a sum of delayed, scaled copies of a Gaussian
pulse plus white noise. Path delays follow ``tau_l = (d + b_l) / c`` and are
rounded to the nearest bin. The measured distance comes from a threshold
leading-edge detector, so NLOS bias and missed weak first paths both show up
in the ranging error ``measured - true``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import CIR_LENGTH, Dataset, EnvQuality, ErrQuality, Sample
from .errors import NoSignalError, OutOfWindowError

SPEED_OF_LIGHT = 2.99792458e8
DEFAULT_BIN_DURATION = 1.0e-9
DEFAULT_BANDWIDTH = 500e6


@dataclass(frozen=True, eq=False)
class PulseTemplate:
    samples: np.ndarray
    bin_duration: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("pulse needs at least one sample")
        if not np.sum(s * s) > 0:
            raise ValueError("pulse has no energy")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.size

    @property
    def center(self) -> int:
        return self.length // 2


@dataclass(frozen=True)
class Path:
    gain: float
    bias_m: float


@dataclass(frozen=True)
class ChannelScenario:
    true_distance_m: float
    paths: tuple
    noise_std: float = 0.0
    env_class: int = 0
    propagation_speed: float = SPEED_OF_LIGHT

    def __post_init__(self):
        paths = tuple(p if isinstance(p, Path) else Path(*p) for p in self.paths)
        object.__setattr__(self, "paths", paths)
        if not paths:
            raise ValueError("scenario needs at least one path")
        if not self.true_distance_m > 0:
            raise ValueError("true_distance_m must be positive")
        if any(p.bias_m < 0 for p in paths):
            raise ValueError("path biases must be nonnegative")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.env_class == 0 and paths[0].bias_m != 0:
            raise ValueError("LOS scenario requires an unbiased first path")
        if self.env_class == 1 and min(p.bias_m for p in paths) <= 0:
            raise ValueError("NLOS scenario requires every path to be biased")


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    cir: np.ndarray
    measured_distance_m: float
    true_distance_m: float
    ranging_error_m: float
    env_class: int


@dataclass(frozen=True)
class GeneratorConfig:
    n_samples: int = 1000
    los_fraction: float = 0.5
    distance_range_m: tuple = (1.0, 20.0)
    nlos_bias_range_m: tuple = (0.2, 1.5)
    nlos_first_path_gain_range: tuple = (0.1, 0.5)
    n_extra_paths_range: tuple = (2, 6)
    extra_path_gain_decay: float = 0.7
    extra_path_excess_range_m: tuple = (0.3, 2.0)
    los_extra_gain_range: tuple = (0.2, 0.6)
    amplitude_range: tuple = (0.5, 2.0)
    noise_std_range: tuple = (0.002, 0.01)
    leading_edge_threshold: float = 0.2
    bandwidth_hz: float = DEFAULT_BANDWIDTH
    bin_duration_s: float = DEFAULT_BIN_DURATION
    pulse_length: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 0:
            raise ValueError("n_samples must be nonnegative")
        if not 0.0 <= self.los_fraction <= 1.0:
            raise ValueError("los_fraction must lie in [0, 1]")
        for name in (
            "distance_range_m",
            "nlos_bias_range_m",
            "nlos_first_path_gain_range",
            "n_extra_paths_range",
            "extra_path_excess_range_m",
            "los_extra_gain_range",
            "amplitude_range",
            "noise_std_range",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (min <= max)")
        if self.distance_range_m[0] <= 0:
            raise ValueError("distances must be positive")
        if self.nlos_bias_range_m[0] <= 0:
            raise ValueError("NLOS biases must be strictly positive")
        if self.n_extra_paths_range[0] < 0:
            raise ValueError("extra path count cannot be negative")
        if self.noise_std_range[0] < 0:
            raise ValueError("noise std cannot be negative")
        if not 0.0 < self.extra_path_gain_decay <= 1.0:
            raise ValueError("extra_path_gain_decay must lie in (0, 1]")
        if not 0.0 < self.leading_edge_threshold < 1.0:
            raise ValueError("leading_edge_threshold must lie in (0, 1)")


def gaussian_pulse(bandwidth_hz: float = DEFAULT_BANDWIDTH, bin_duration_s: float = DEFAULT_BIN_DURATION,
                   length: int = 9) -> PulseTemplate:
    """Sampled Gaussian envelope ``exp(-(t - t_c)^2 / (2 sigma^2))``, ``sigma = 1/(2 pi B)``.

    The peak sits on bin ``length // 2`` and equals 1.
    """
    if bandwidth_hz <= 0 or bin_duration_s <= 0:
        raise ValueError("bandwidth and bin duration must be positive")
    if length < 3:
        raise ValueError("pulse length must be at least 3 bins")
    sigma = 1.0 / (2.0 * math.pi * bandwidth_hz)
    t = (np.arange(length) - length // 2) * bin_duration_s
    samples = np.exp(-(t**2) / (2.0 * sigma**2))
    return PulseTemplate(samples / samples.max(), bin_duration_s)


def detect_leading_edge(cir: np.ndarray, threshold_ratio: float = 0.2) -> int:
    """Smallest bin index with ``cir[b] >= threshold_ratio * max(cir)``."""
    cir = np.asarray(cir, dtype=np.float64)
    if cir.size == 0:
        raise ValueError("empty CIR")
    if not 0.0 < threshold_ratio < 1.0:
        raise ValueError("threshold_ratio must lie in (0, 1)")
    peak = cir.max()
    if not peak > 0:
        raise NoSignalError("CIR carries no signal")
    return int(np.argmax(cir >= threshold_ratio * peak))


def delay_bin(delay_s: float, bin_duration_s: float) -> int:
    # floor(x + 0.5): half-up, unlike round()'s half-even
    return int(math.floor(delay_s / bin_duration_s + 0.5))


def synthesize_cir(scenario: ChannelScenario, pulse: PulseTemplate, n_bins: int = CIR_LENGTH,
                   bin_duration_s: float = DEFAULT_BIN_DURATION, seed: int = 0,
                   threshold_ratio: float = 0.2) -> SyntheticSample:
    """Render one noisy CIR magnitude and its leading-edge range measurement."""
    if n_bins < 1 or bin_duration_s <= 0:
        raise ValueError("n_bins and bin_duration_s must be positive")
    if not math.isclose(pulse.bin_duration, bin_duration_s, rel_tol=1e-12):
        raise ValueError("pulse was sampled at a different bin duration")
    if pulse.length > n_bins:
        raise ValueError("pulse is longer than the observation window")
    c = scenario.propagation_speed
    window = n_bins * bin_duration_s
    clean = np.zeros(n_bins)
    for path in scenario.paths:
        tau = (scenario.true_distance_m + path.bias_m) / c
        b = delay_bin(tau, bin_duration_s)
        if not (0.0 <= tau < window and b < n_bins):
            raise OutOfWindowError(f"path delay {tau:.3e} s outside [0, {window:.3e}) s")
        lo = b - pulse.center
        src_lo = max(0, -lo)
        src_hi = min(pulse.length, n_bins - lo)
        clean[lo + src_lo: lo + src_hi] += path.gain * pulse.samples[src_lo:src_hi]
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, scenario.noise_std, n_bins) if scenario.noise_std > 0 else 0.0
    cir = np.abs(clean + noise)
    edge = detect_leading_edge(cir, threshold_ratio)
    measured = c * (edge * bin_duration_s)
    return SyntheticSample(
        cir=cir,
        measured_distance_m=measured,
        true_distance_m=scenario.true_distance_m,
        ranging_error_m=measured - scenario.true_distance_m,
        env_class=scenario.env_class,
    )


def _uniform(rng, bounds: Sequence[float]) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def draw_scenario(config: GeneratorConfig, los: bool, rng: np.random.Generator) -> ChannelScenario:
    """Random LOS or NLOS scenario.

    NLOS obstruction couples first-path attenuation and bias: a deeper
    obstruction both weakens the first path and delays it more. Both
    marginals stay uniform over their configured ranges.
    """
    d = _uniform(rng, config.distance_range_m)
    n_extra = int(rng.integers(config.n_extra_paths_range[0], config.n_extra_paths_range[1] + 1))
    excess = np.sort(rng.uniform(*config.extra_path_excess_range_m, size=n_extra))
    decay = config.extra_path_gain_decay ** np.arange(n_extra)
    if los:
        first = Path(1.0, 0.0)
        base = _uniform(rng, config.los_extra_gain_range)
        extra = [Path(float(base * g), float(e)) for g, e in zip(decay, excess)]
    else:
        u = float(rng.uniform())
        b_lo, b_hi = config.nlos_bias_range_m
        g_lo, g_hi = config.nlos_first_path_gain_range
        bias = b_lo + u * (b_hi - b_lo)
        first = Path(g_hi - u * (g_hi - g_lo), bias)
        extra = [Path(float(g), float(bias + e)) for g, e in zip(decay, excess)]
    scale = _uniform(rng, config.amplitude_range)
    paths = tuple(Path(p.gain * scale, p.bias_m) for p in (first, *extra))
    noise = _uniform(rng, config.noise_std_range)
    return ChannelScenario(d, paths, noise, 0 if los else 1)


def is_los_index(i: int, los_fraction: float) -> bool:
    # Interleaved so that any prefix of length n holds floor(los_fraction * n) LOS samples.
    return math.floor((i + 1) * los_fraction) - math.floor(i * los_fraction) == 1


def generate_sample(config: GeneratorConfig, i: int, pulse: PulseTemplate | None = None) -> SyntheticSample:
    """Sample ``i`` of the dataset described by ``config``, reproducible on its own."""
    pulse = pulse or gaussian_pulse(config.bandwidth_hz, config.bin_duration_s, config.pulse_length)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
    scenario = draw_scenario(config, is_los_index(i, config.los_fraction), rng)
    noise_seed = int(rng.integers(2**63))
    return synthesize_cir(scenario, pulse, CIR_LENGTH, config.bin_duration_s, noise_seed,
                          config.leading_edge_threshold)


def generate_dataset(config: GeneratorConfig) -> Dataset:
    """Fully labeled synthetic dataset; ``floor(los_fraction * n)`` samples are LOS."""
    pulse = gaussian_pulse(config.bandwidth_hz, config.bin_duration_s, config.pulse_length)
    samples = []
    for i in range(config.n_samples):
        syn = generate_sample(config, i, pulse)
        samples.append(
            Sample(
                id=i,
                cir=syn.cir,
                env_label=syn.env_class,
                env_quality=EnvQuality.CLEAN,
                err_label=syn.ranging_error_m,
                err_quality=ErrQuality.CLEAN,
                true_err=syn.ranging_error_m,
                measured_distance_m=syn.measured_distance_m,
            )
        )
    return Dataset(tuple(samples), k_classes=2)
