"""Simulated measurements, parameter sweeps and the two-method comparison.

Each sweep point ``j`` draws its records from Philox stream
``run.stream + 2 j`` and its source-off noise run from ``run.stream + 2 j + 1``,
so points are statistically independent and each is reproducible alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import analytic, estimators
from . import simulator as sim
from .errors import DomainError
from .io import Config, ResultRow
from .tally import TallyStats

METHODS = (estimators.COINCIDENCE, estimators.DIFFERENCE_SIGNAL)


def point_stream(cfg: Config, index: int, noise: bool = False) -> int:
    return cfg.run.stream + 2 * index + int(noise)


def effective_efficiency(channel: sim.ChannelConfig) -> float:
    """Efficiency both methods recover: blocking and same-gate noise clicks hide photons."""
    return channel.efficiency * (1.0 - channel.blocking_probability) * math.exp(-channel.noise_mean_per_gate)


def dut_channel(cfg: Config) -> sim.ChannelConfig:
    return cfg.idler_channel if cfg.estimation.dut_arm == "idler" else cfg.signal_channel


def with_dut_channel(cfg: Config, channel: sim.ChannelConfig) -> Config:
    if cfg.estimation.dut_arm == "idler":
        return cfg.replace(idler_channel=channel)
    return cfg.replace(signal_channel=channel)


def wants_noise_run(cfg: Config) -> bool:
    mode = cfg.estimation.noise_run
    if mode != "auto":
        return mode == "on"
    return cfg.signal_channel.noise_mean_per_gate > 0 or cfg.idler_channel.noise_mean_per_gate > 0


def measured_source(cfg: Config) -> sim.SourceConfig:
    e = cfg.estimation
    if e.reference_fraction == 1.0:
        return cfg.source
    return sim.klyshko_geometry(cfg.source, e.reference_fraction, e.reference_arm)


@dataclass(frozen=True)
class Measurement:
    tally: TallyStats
    noise: Optional[TallyStats] = None


def measure(
    cfg: Config,
    index: int = 0,
    noise_run: Optional[bool] = None,
    sink: Optional[Callable] = None,
    backend: Optional[str] = None,
) -> Measurement:
    """Simulate the source-on run of point ``index`` and, if wanted, its source-off run."""
    run_cfg = replace(cfg.run, stream=point_stream(cfg, index))
    tally = sim.run(measured_source(cfg), cfg.signal_channel, cfg.idler_channel, run_cfg, sink=sink, backend=backend)
    if noise_run is None:
        noise_run = wants_noise_run(cfg)
    noise = None
    if noise_run:
        n = cfg.estimation.noise_pulses or cfg.run.n_pulses
        noise_cfg = replace(cfg.run, n_pulses=n, stream=point_stream(cfg, index, noise=True))
        off = sim.SourceConfig(0.0)
        noise = sim.run(off, cfg.signal_channel, cfg.idler_channel, noise_cfg, backend=backend)
    return Measurement(tally, noise)


def _oriented(m: Measurement, dut_arm: str) -> Measurement:
    # the difference pipeline estimates the idler arm
    if dut_arm == "idler":
        return m
    return Measurement(m.tally.swapped(), m.noise.swapped() if m.noise is not None else None)


def estimate(m: Measurement, cfg: Config, method: str) -> estimators.QEEstimate:
    e = cfg.estimation
    if method == estimators.COINCIDENCE:
        return estimators.qe_klyshko(m.tally, m.noise, e.window_factor, e.dut_arm, e.reference_deadtime_threshold)
    if method == estimators.DIFFERENCE_SIGNAL:
        o = _oriented(m, e.dut_arm)
        return estimators.qe_difference_method(o.tally, o.noise)
    raise DomainError(f"unknown method {method!r}")


def estimate_rows(
    m: Measurement, cfg: Config, methods: Sequence[str] = METHODS, sweep_variable: str = "", value=None
) -> list[ResultRow]:
    rows = []
    for method in methods:
        q = estimate(m, cfg, method)
        nrf_se = None
        if method == estimators.DIFFERENCE_SIGNAL:
            o = _oriented(m, cfg.estimation.dut_arm)
            nrf_se = estimators.difference_nrf(o.tally, o.noise).std_error
        rows.append(ResultRow.from_estimate(q, sweep_variable, value, nrf_se))
    return rows


# --- sweeps -----------------------------------------------------------------------

def mu_for_mean_sum(cfg: Config, mean_sum: float) -> float:
    """Mean pair number giving the requested expected <N+> (source-on, noise included)."""
    src = measured_source(cfg)

    def excess(mu):
        p_s, p_i, _ = sim.expected_rates(replace(src, mean_pairs_per_pulse=mu), cfg.signal_channel, cfg.idler_channel)
        return p_s + p_i - mean_sum

    lo, hi = excess(0.0), excess(sim.MAX_MEAN_PAIRS)
    if not lo < 0 < hi:
        raise DomainError(f"mean sum {mean_sum!r} unreachable: range is ({lo + mean_sum:.4g}, {hi + mean_sum:.4g})")
    return brentq(excess, 0.0, sim.MAX_MEAN_PAIRS, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def _check_values(values):
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise DomainError("a sweep needs at least two points")
    return vals


def gain_sweep(cfg: Config, mus: Sequence[float], backend=None) -> list[ResultRow]:
    """Vary the mean pair number; one difference-method row per point."""
    rows = []
    for j, mu in enumerate(_check_values(mus)):
        point = cfg.replace(source=replace(cfg.source, mean_pairs_per_pulse=mu))
        m = measure(point, j, backend=backend)
        o = _oriented(m, cfg.estimation.dut_arm)
        nrf = estimators.difference_nrf(o.tally, o.noise)
        try:
            q = estimators.qe_difference_method(o.tally, o.noise)
            rows.append(ResultRow.from_estimate(q, "mean_pairs_per_pulse", mu, nrf.std_error))
        except (DomainError, ArithmeticError):
            rows.append(
                ResultRow("mean_pairs_per_pulse", mu, None, None, estimators.DIFFERENCE_SIGNAL,
                          nrf.nrf, nrf.std_error, nrf.mean_sum)
            )
    return rows


def transmission_sweep(cfg: Config, transmissions: Sequence[float], methods=METHODS, backend=None) -> list[ResultRow]:
    """Vary the optical transmission in front of the detector under test."""
    rows = []
    for j, t in enumerate(sorted(_check_values(transmissions))):
        point = with_dut_channel(cfg, replace(dut_channel(cfg), transmission=t))
        rows += estimate_rows(measure(point, j, backend=backend), point, methods, "transmission", t)
    return rows


def noise_point(cfg: Config, background: float) -> Config:
    """Both arms see ``background`` photoelectrons per gate and the matching blocking probability."""
    e = cfg.estimation
    b = sim.blocking_from_background(background, e.gate_ns, e.dead_time_ns)
    chans = {
        name: replace(getattr(cfg, name), background_mean_per_gate=background, blocking_probability=b)
        for name in ("signal_channel", "idler_channel")
    }
    return cfg.replace(**chans)


def noise_sweep(cfg: Config, backgrounds: Sequence[float], methods=METHODS, backend=None) -> list[ResultRow]:
    rows = []
    for j, nu in enumerate(sorted(_check_values(backgrounds))):
        point = noise_point(cfg, nu)
        rows += estimate_rows(measure(point, j, backend=backend), point, methods, "background_mean_per_gate", nu)
    return rows


SWEEPS = {"gain": gain_sweep, "transmission": transmission_sweep, "noise": noise_sweep}


# --- comparison and fits -----------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    passed: bool
    difference: float
    combined_sigma: float

    def line(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        return f"{word}: |eta_c - eta_d| = {self.difference:.6f}, 3 sigma = {3 * self.combined_sigma:.6f}"


def verdict(rows: Sequence[ResultRow]) -> Verdict:
    by = {r.method: r for r in rows}
    c, d = by[estimators.COINCIDENCE], by[estimators.DIFFERENCE_SIGNAL]
    diff = abs(c.eta - d.eta)
    sigma = math.hypot(c.std_error, d.std_error)
    return Verdict(diff < 3 * sigma, diff, sigma)


def compare(cfg: Config, sink=None, backend=None) -> tuple[list[ResultRow], Verdict]:
    """Both pipelines on one simulated dataset, with the 3-sigma agreement verdict."""
    rows = estimate_rows(measure(cfg, 0, sink=sink, backend=backend), cfg)
    return rows, verdict(rows)


def gain_points(rows: Sequence[ResultRow]) -> list[analytic.GainPoint]:
    pts = []
    for r in rows:
        if r.nrf is None or r.mean_sum is None or not r.mean_sum > 0:
            continue
        se = r.nrf_std_error
        pts.append(analytic.GainPoint(r.mean_sum, r.nrf, 1.0 / se**2 if se else 1.0))
    return pts


def fit_table(rows: Sequence[ResultRow], k: float = 1.0) -> estimators.FitResult:
    pts = gain_points(rows)
    uniform = any(r.nrf_std_error in (None, 0.0) for r in rows if r.nrf is not None)
    return estimators.fit_nrf_curve(pts, k=k, uniform=uniform)


def fit_curve(eta: float, k: float, mean_sums: Sequence[float]) -> list[tuple[float, float]]:
    """Dead-time NRF curve sampled at ``mean_sums`` (for plotting)."""
    return [(s, 1.0 - 2.0 * eta / (1.0 + k) + s * analytic.deadtime_slope(eta, k)) for s in mean_sums]


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float


def weighted_line(x, y, sigma) -> LineFit:
    """Inverse-variance weighted straight-line fit ``y = slope x + intercept``."""
    x, y, s = (np.asarray(v, float) for v in (x, y, sigma))
    if len(x) < 2 or np.ptp(x) == 0:
        raise DomainError("need at least two distinct x values")
    if np.any(~(s > 0)):
        raise DomainError("standard errors must be positive")
    coef, cov = np.polyfit(x, y, 1, w=1.0 / s, cov="unscaled")
    return LineFit(float(coef[0]), float(coef[1]), math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1]))


__all__ = [
    "Measurement",
    "Verdict",
    "compare",
    "estimate",
    "estimate_rows",
    "fit_table",
    "gain_sweep",
    "measure",
    "mu_for_mean_sum",
    "noise_sweep",
    "transmission_sweep",
    "weighted_line",
]
