"""Per-pulse Monte Carlo of gated twin-beam photodetection.

Model of one gate:

* ``shared`` ~ Poisson photon number common to both arms (the twin pairs),
* an independent Poisson admixture per arm (unmatched modes, or pairs the
  narrow reference arm does not collect),
* per-arm thinning by the total channel efficiency ``T * eta_det``,
* Poisson dark + background photoelectrons per arm,
* at most one click per gate, and a whole-gate blocking probability.

Randomness comes from Philox4x64-10 keyed by ``(seed, stream)`` with the
pulse index as counter, so any partition of the pulse range into batches or
workers reproduces the same record stream.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Callable, Optional

import numpy as np

from . import _pykernel, analytic, kernel
from .errors import DomainError, TwinQEError
from .tally import PulseRecord, TallyStats

_U64 = 2**64
#: Largest shared mean photon number the inversion tables support.
MAX_MEAN_PAIRS = 200.0
_PMF_FLOOR = 1e-18


def _range_problems(obj, spec):
    out = []
    for name, (lo, hi) in spec.items():
        v = getattr(obj, name)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            out.append((name, f"must be a finite number, got {v!r}"))
        elif lo is not None and v < lo:
            out.append((name, f"must be >= {lo}, got {v!r}"))
        elif hi is not None and v > hi:
            out.append((name, f"must be <= {hi}, got {v!r}"))
    return out


class _Validated:
    _ranges: dict = {}

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise DomainError("; ".join(f"{type(self).__name__}.{k}: {m}" for k, m in problems))

    def problems(self) -> list[tuple[str, str]]:
        return _range_problems(self, self._ranges)


@dataclass(frozen=True)
class SourceConfig(_Validated):
    """Twin-beam source as seen by the two detection arms.

    ``collection_*`` is the fraction of pairs whose photon reaches that arm
    (a narrow-band reference arm has collection < 1; pairs collected by the
    narrower arm are a subset of those collected by the wider one).
    """

    mean_pairs_per_pulse: float
    matched_fraction_signal: float = 1.0
    matched_fraction_idler: float = 1.0
    collection_signal: float = 1.0
    collection_idler: float = 1.0

    _ranges = {
        "mean_pairs_per_pulse": (0.0, MAX_MEAN_PAIRS),
        "matched_fraction_signal": (0.0, 1.0),
        "matched_fraction_idler": (0.0, 1.0),
        "collection_signal": (0.0, 1.0),
        "collection_idler": (0.0, 1.0),
    }

    def photon_means(self) -> tuple[float, float, float]:
        """(shared, extra_signal, extra_idler) mean photon numbers before channel losses."""
        mu = self.mean_pairs_per_pulse
        # twins seen by both arms cannot outnumber either arm's matched photons
        shared = mu * min(
            self.collection_signal * self.matched_fraction_signal,
            self.collection_idler * self.matched_fraction_idler,
        )
        return shared, mu * self.collection_signal - shared, mu * self.collection_idler - shared


@dataclass(frozen=True)
class ChannelConfig(_Validated):
    transmission: float = 1.0
    detector_efficiency: float = 1.0
    dark_mean_per_gate: float = 0.0
    background_mean_per_gate: float = 0.0
    blocking_probability: float = 0.0

    _ranges = {
        "transmission": (0.0, 1.0),
        "detector_efficiency": (0.0, 1.0),
        "dark_mean_per_gate": (0.0, 50.0),
        "background_mean_per_gate": (0.0, 50.0),
        "blocking_probability": (0.0, 1.0),
    }

    @property
    def efficiency(self) -> float:
        """Total channel efficiency T * eta_det."""
        return self.transmission * self.detector_efficiency

    @property
    def noise_mean_per_gate(self) -> float:
        return self.dark_mean_per_gate + self.background_mean_per_gate


@dataclass(frozen=True)
class RunConfig(_Validated):
    n_pulses: int
    seed: int = 0
    batch_size: int = 1_000_000
    workers: int = 1
    stream: int = 0

    def problems(self):
        out = []
        for name, lo, hi in (
            ("n_pulses", 0, None),
            ("seed", 0, _U64 - 1),
            ("batch_size", 1, None),
            ("workers", 1, None),
            ("stream", 0, _U64 - 1),
        ):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                out.append((name, f"must be an integer, got {v!r}"))
            elif v < lo or (hi is not None and v > hi):
                out.append((name, f"out of range [{lo}, {hi if hi is not None else 'inf'}]: {v!r}"))
        return out


@dataclass(frozen=True)
class RngState:
    """Position in the counter-based stream: key ``(seed, stream)``, counter ``index``."""

    seed: int
    index: int
    stream: int = 0


class RecordSinkError(TwinQEError, OSError):
    pass


def blocking_from_background(background_mean_per_gate: float, gate_ns: float, dead_time_ns: float) -> float:
    """Probability a gate opens while the detector is dead from continuous background light.

    The background rate is ``background_mean_per_gate / gate_ns``; the
    detector is dead with probability ``1 - exp(-rate * dead_time)``.
    """
    if background_mean_per_gate < 0 or gate_ns <= 0 or dead_time_ns < 0:
        raise DomainError("need background >= 0, gate_ns > 0, dead_time_ns >= 0")
    return -math.expm1(-background_mean_per_gate / gate_ns * dead_time_ns)


def klyshko_geometry(source: SourceConfig, reference_fraction: float, reference_arm: str = "signal") -> SourceConfig:
    """Source seen through a narrow-band reference arm.

    The reference arm collects a Bernoulli(``reference_fraction``) subset of
    the pairs; the detector under test collects every pair.
    """
    if not 0.0 <= reference_fraction <= 1.0:
        raise DomainError(f"reference_fraction must lie in [0, 1], got {reference_fraction!r}")
    if reference_arm == "signal":
        return replace(source, collection_signal=reference_fraction, collection_idler=1.0)
    if reference_arm == "idler":
        return replace(source, collection_idler=reference_fraction, collection_signal=1.0)
    raise DomainError(f"reference_arm must be 'signal' or 'idler', got {reference_arm!r}")


def model_parameters(source: SourceConfig, signal_ch: ChannelConfig, idler_ch: ChannelConfig) -> dict:
    """Flatten configs into the parameters of :func:`analytic.click_statistics`."""
    shared, extra_s, extra_i = source.photon_means()
    return dict(
        shared_mu=shared,
        extra_s=extra_s,
        extra_i=extra_i,
        eta_s=signal_ch.efficiency,
        eta_i=idler_ch.efficiency,
        noise_s=signal_ch.noise_mean_per_gate,
        noise_i=idler_ch.noise_mean_per_gate,
        block_s=signal_ch.blocking_probability,
        block_i=idler_ch.blocking_probability,
    )


def expected_rates(source, signal_ch, idler_ch) -> tuple[float, float, float]:
    """Exact per-pulse (p_s, p_i, p_coinc) of the simulated model."""
    return analytic.click_statistics(**model_parameters(source, signal_ch, idler_ch))


def build_tables(source, signal_ch, idler_ch):
    """Inversion table of the shared photon number and per-arm click probabilities.

    Returns ``(cdf, table_s, table_i)``: ``cdf[m]`` is P(shared <= m) with the
    last entry forced to 1, ``table_x[m]`` the arm's click probability given
    ``m`` shared photons (independent admixture, noise and blocking folded in).
    """
    p = model_parameters(source, signal_ch, idler_ch)
    mu = p["shared_mu"]
    pmf = [math.exp(-mu)]
    m = 0
    while m < mu or pmf[-1] > _PMF_FLOOR:
        m += 1
        pmf.append(pmf[-1] * mu / m)
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0

    def arm(eta, extra, noise, block):
        base = math.exp(-eta * extra - noise)
        keep = 1.0 - eta
        return np.array([(1.0 - block) * (1.0 - base * keep**j) for j in range(len(cdf))])

    return (
        np.ascontiguousarray(cdf),
        arm(p["eta_s"], p["extra_s"], p["noise_s"], p["block_s"]),
        arm(p["eta_i"], p["extra_i"], p["noise_i"], p["block_i"]),
    )


def simulate_pulse(source, signal_ch, idler_ch, rng_state: RngState) -> PulseRecord:
    """Generate the single pulse at ``rng_state.index`` (reference path, pure Python)."""
    cdf, ts, ti = build_tables(source, signal_ch, idler_ch)
    out_s = np.empty(1, np.uint8)
    out_i = np.empty(1, np.uint8)
    _pykernel.simulate_block(rng_state.seed, rng_state.stream, rng_state.index, 1, cdf, ts, ti, out_s, out_i)
    return PulseRecord(int(out_s[0]), int(out_i[0]))


def simulate_clicks(source, signal_ch, idler_ch, start: int, n: int, seed: int, stream: int = 0, backend=None):
    """Click arrays (uint8) for pulses ``start .. start+n-1``."""
    if start < 0 or n < 0 or start + n > _U64:
        raise DomainError("pulse index range outside the 64-bit counter space")
    tables = build_tables(source, signal_ch, idler_ch)
    return _block(kernel.get_backend(backend), tables, seed, stream, start, n)


def _block(mod, tables, seed, stream, start, n):
    out_s = np.empty(n, np.uint8)
    out_i = np.empty(n, np.uint8)
    if n:
        mod.simulate_block(seed, stream, start, n, *tables, out_s, out_i)
    return out_s, out_i


def run(
    source: SourceConfig,
    signal_ch: ChannelConfig,
    idler_ch: ChannelConfig,
    run_cfg: RunConfig,
    sink: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
    backend: Optional[str] = None,
) -> TallyStats:
    """Simulate ``run_cfg.n_pulses`` gates and return the merged tally.

    ``sink(start, clicks_s, clicks_i)`` is called once per batch, in pulse
    order, when given. Results do not depend on ``batch_size`` or ``workers``.
    """
    mod = kernel.get_backend(backend)
    tables = build_tables(source, signal_ch, idler_ch)
    n, bs = run_cfg.n_pulses, run_cfg.batch_size
    starts = list(range(0, n, bs))

    def work(start):
        cs, ci = _block(mod, tables, run_cfg.seed, run_cfg.stream, start, min(bs, n - start))
        return start, cs, ci, TallyStats.from_clicks(cs, ci)

    total = TallyStats()

    def consume(results):
        nonlocal total
        for start, cs, ci, t in results:
            if sink is not None:
                try:
                    sink(start, cs, ci)
                except OSError as exc:
                    raise RecordSinkError(f"record sink failed at pulse {start}: {exc}") from exc
            total = total.merge(t)

    if run_cfg.workers == 1 or len(starts) <= 1:
        consume(map(work, starts))
    else:
        # bounded window keeps at most ``workers`` batches in memory
        with ThreadPoolExecutor(max_workers=run_cfg.workers) as pool:
            for w in range(0, len(starts), run_cfg.workers):
                consume(pool.map(work, starts[w : w + run_cfg.workers]))
    return total


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
