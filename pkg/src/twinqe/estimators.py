"""Quantum-efficiency estimators: coincidence (Klyshko) and difference-signal.

All statistics are functions of the four cell counts of a :class:`TallyStats`
(a sufficient statistic for binary clicks). Standard errors come from the
delta method over the multinomial cell distribution of each independent run.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import analytic
from .analytic import GainPoint
from .errors import (
    DeadTimeValidityWarning,
    DegeneratePointsError,
    DomainError,
    EmptyArmError,
    InsufficientDataError,
    NegativeSubtractionError,
)
from .tally import PulseRecord, TallyStats, accumulate, merge  # noqa: F401  (re-exported)

#: Coincidence-window factor of the gated laboratory setup (4.2 ns window in 30 ns gates).
LAB_WINDOW_FACTOR = 0.65
#: Reference-arm rate below which its singles need no dead-time correction.
REFERENCE_DEADTIME_THRESHOLD = 1e-2

COINCIDENCE = "coincidence"
DIFFERENCE_SIGNAL = "difference_signal"

ACCIDENTALS = "accidentals"
DEADTIME = "deadtime"
NOISE_SUBTRACTION = "noise_subtraction"
K_REBALANCE = "k_rebalance"

NoiseRunStats = TallyStats  # a tally recorded with the twin-beam source off


class EstimateRangeError(DomainError):
    """An efficiency estimate fell outside [0, 1]."""


@dataclass(frozen=True)
class QEEstimate:
    eta: float
    std_error: float
    method: str
    corrections_applied: frozenset = field(default_factory=frozenset)
    nrf: Optional[float] = None
    mean_sum: Optional[float] = None
    k: Optional[float] = None

    def __post_init__(self):
        for name in ("eta", "std_error", "nrf", "mean_sum", "k"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, float(v))
        if not self.std_error >= 0:
            raise DomainError(f"std_error must be >= 0, got {self.std_error!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise EstimateRangeError(f"{self.method} estimate {self.eta!r} outside [0, 1]")
        if self.method not in (COINCIDENCE, DIFFERENCE_SIGNAL):
            raise DomainError(f"unknown method {self.method!r}")
        object.__setattr__(self, "corrections_applied", frozenset(self.corrections_applied))


class NrfEstimate(NamedTuple):
    nrf: float
    mean_sum: float
    std_error: float


class FitResult(NamedTuple):
    eta: float
    std_error: float
    residual_sum: float
    residuals: tuple
    k: float


# --- delta method -----------------------------------------------------------

def _cell_probs(tally):
    return np.array(tally.cells(), dtype=float) / tally.n_pulses


def _delta_variance(func: Callable[..., float], tallies: Sequence[TallyStats]) -> float:
    """Delta-method variance of ``func(p_1, ..., p_m)`` over independent tallies.

    ``p_j`` is the 4-vector of cell frequencies of tally ``j``; each is
    multinomial with covariance ``(diag(p) - p p^T) / n``.
    """
    probs = [_cell_probs(t) for t in tallies]
    total = 0.0
    for j, t in enumerate(tallies):
        p = probs[j]
        grad = np.empty(4)
        for c in range(4):
            h = 1e-6 * max(p[c], 1e-6)
            up = [q.copy() for q in probs]
            dn = [q.copy() for q in probs]
            up[j][c] += h
            dn[j][c] -= h
            grad[c] = (func(*up) - func(*dn)) / (2 * h)
        cov = (np.diag(p) - np.outer(p, p)) / t.n_pulses
        total += float(grad @ cov @ grad)
    return max(total, 0.0)


# moments from cell frequencies p = (p00, p10, p01, p11)

def _means(p):
    return p[1] + p[3], p[2] + p[3]


def _diff_moments(p, k):
    """(Var(N_i - k N_s), <N_i + k N_s>) under cell frequencies ``p``."""
    ms, mi = _means(p)
    mean_d = mi - k * ms
    second = k * k * p[1] + p[2] + (1.0 - k) ** 2 * p[3]
    return second - mean_d * mean_d, mi + k * ms


# --- elementary estimators --------------------------------------------------

def estimate_k(tally: TallyStats, noise: Optional[TallyStats] = None) -> float:
    """Balance factor eta_i / eta_s from the ratio of the arm signals."""
    if noise is None:
        if tally.sum_s == 0:
            raise EmptyArmError("signal arm registered no clicks; k undefined")
        return tally.sum_i / tally.sum_s
    return _k_from(_cell_probs(tally), _cell_probs(noise))


def _k_from(p, pn=None):
    ms, mi = _means(p)
    if pn is not None:
        ns, ni = _means(pn)
        ms, mi = ms - ns, mi - ni
    if ms <= 0.0:
        raise EmptyArmError("no signal-arm clicks above noise; k undefined")
    return mi / ms


def estimate_nrf(tally: TallyStats, k: float = 1.0) -> NrfEstimate:
    """Var(N_i - k N_s) / <N_i + k N_s> with the n-1 sample variance.

    Also returns the unweighted mean sum <N_i + N_s> and a delta-method
    standard error of the ratio.
    """
    if not k > 0:
        raise DomainError(f"k must be > 0, got {k!r}")
    n = tally.n_pulses
    if n < 2:
        raise InsufficientDataError(f"need at least 2 pulses, got {n}")
    n00, n10, n01, n11 = tally.cells()
    sum_d = n01 + n11 - k * (n10 + n11)
    sum_d2 = k * k * n10 + n01 + (1.0 - k) ** 2 * n11
    weighted_mean = (tally.sum_i + k * tally.sum_s) / n
    if weighted_mean <= 0.0:
        raise InsufficientDataError("mean sum signal is zero; NRF undefined")
    var = (sum_d2 - sum_d * sum_d / n) / (n - 1)
    nrf = var / weighted_mean

    def ratio(p):
        v, m = _diff_moments(p, k)
        return v / m

    se = math.sqrt(_delta_variance(ratio, [tally]))
    return NrfEstimate(nrf, (tally.sum_i + tally.sum_s) / n, se)


def subtract_noise(signal_run: tuple[float, float], noise_run: tuple[float, float]) -> tuple[float, float]:
    """Remove an independent noise contribution from a (Var(N-), <N+>) pair.

    Returns ``(nrf, mean_sum)`` of the signal alone.
    """
    var_sn, mean_sn = signal_run
    var_n, mean_n = noise_run
    var = var_sn - var_n
    mean = mean_sn - mean_n
    if var < 0.0 or mean <= 0.0:
        raise NegativeSubtractionError(
            f"noise run (var={var_n!r}, mean={mean_n!r}) exceeds the combined run "
            f"(var={var_sn!r}, mean={mean_sn!r})"
        )
    return var / mean, mean


def noise_crossterm(signal_means: tuple[float, float], noise_means: tuple[float, float], k: float = 1.0) -> float:
    """NRF deficit left by background subtraction with binary clicks.

    A gate cannot click twice, so a noise photoelectron hides signal clicks in
    the same gate; after subtracting the noise run's variance and mean the
    NRF is low by ``2 sum_a w_a^2 s_a z_a / sum_a w_a s_a`` (``s_a``:
    noise-subtracted click rate, ``z_a``: noise click rate, ``w``: arm
    weights ``(k, 1)``). Adding this back restores the noiseless NRF.
    """
    (ms, mi), (ns, ni) = signal_means, noise_means
    ss, si = ms - ns, mi - ni
    den = k * ss + si
    if den <= 0.0:
        raise NegativeSubtractionError("no signal left after noise subtraction")
    return 2.0 * (k * k * ss * ns + si * ni) / den


def accidental_coincidences(tally: TallyStats, window_factor: float = LAB_WINDOW_FACTOR) -> float:
    """Expected accidental coincidences in the run: K <N_s> <N_i> n."""
    if tally.n_pulses <= 0:
        raise InsufficientDataError("empty tally")
    if not window_factor >= 0:
        raise DomainError(f"window factor must be >= 0, got {window_factor!r}")
    return tally.sum_s * tally.sum_i * window_factor / tally.n_pulses


def deadtime_correct_coincidences(measured_coinc: float, tally: TallyStats, noise: Optional[TallyStats] = None) -> float:
    """Undo the dead-time loss of real coincidences: C (1 + <N+>).

    ``<N+>`` is the tally's mean sum signal, with the noise run's mean sum
    removed when a noise run is given.
    """
    if tally.n_pulses <= 0:
        raise InsufficientDataError("empty tally")
    if not measured_coinc >= 0:
        raise DomainError(f"coincidence count must be >= 0, got {measured_coinc!r}")
    mean_sum = (tally.sum_s + tally.sum_i) / tally.n_pulses
    if noise is not None and noise.n_pulses:
        mean_sum -= (noise.sum_s + noise.sum_i) / noise.n_pulses
    return measured_coinc * (1.0 + max(mean_sum, 0.0))


# --- full pipelines -----------------------------------------------------------

def _difference_nrf(p, pn, bessel):
    """(NRF, <N+>, k) of the plain difference N_i - N_s, background removed when ``pn`` is given.

    ``bessel`` holds the n/(n-1) factors turning population variances into
    sample variances for the signal and noise runs.
    """
    k = _k_from(p, pn)
    var, mean = _diff_moments(p, 1.0)
    var *= bessel[0]
    if pn is None:
        return var / mean, mean, k
    var_n, mean_n = _diff_moments(pn, 1.0)
    nrf, mean = subtract_noise((var, mean), (var_n * bessel[1], mean_n))
    return nrf + noise_crossterm(_means(p), _means(pn)), mean, k


def _difference_setup(tally, noise):
    if tally.n_pulses < 2:
        raise InsufficientDataError(f"need at least 2 pulses, got {tally.n_pulses}")
    if tally.sum_s + tally.sum_i == 0:
        raise InsufficientDataError("no clicks recorded; NRF undefined")
    if noise is not None and noise.n_pulses < 2:
        raise InsufficientDataError("noise run needs at least 2 pulses")
    tallies = [tally] if noise is None else [tally, noise]
    bessel = [t.n_pulses / (t.n_pulses - 1) for t in tallies] + [1.0]
    return tallies, bessel


def _split(ps):
    return ps[0], ps[1] if len(ps) > 1 else None


def difference_nrf(tally: TallyStats, noise: Optional[TallyStats] = None) -> NrfEstimate:
    """NRF of ``N_i - N_s`` and <N+> as fed to the dead-time inversion, with background removed.

    The standard error is the delta-method error of the NRF over both runs.
    """
    tallies, bessel = _difference_setup(tally, noise)
    nrf, mean, _ = _difference_nrf(*_split([_cell_probs(t) for t in tallies]), bessel)
    se = math.sqrt(_delta_variance(lambda *ps: _difference_nrf(*_split(ps), bessel)[0], tallies))
    return NrfEstimate(nrf, mean, se)


def qe_difference_method(tally: TallyStats, noise: Optional[TallyStats] = None) -> QEEstimate:
    """Idler-channel efficiency from the variance of the photocount difference.

    Steps: balance factor ``k`` from the signal ratio; NRF and <N+> of the
    plain difference ``N_i - N_s``; background removal when a noise run is
    given; inversion of the dead-time corrected NRF relation for ``eta_i``.
    """
    tallies, bessel = _difference_setup(tally, noise)

    def eta_of(*ps):
        f_nrf, f_mean, f_k = _difference_nrf(*_split(ps), bessel)
        return analytic.solve_eta_from_nrf(f_nrf, f_k, f_mean)

    nrf, mean, k = _difference_nrf(*_split([_cell_probs(t) for t in tallies]), bessel)
    if mean > analytic.DEADTIME_VALIDITY_LIMIT:
        warnings.warn(f"mean sum {mean:.4g} beyond the linear dead-time range", DeadTimeValidityWarning)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeadTimeValidityWarning)
        eta = analytic.solve_eta_from_nrf(nrf, k, mean)
        var = _delta_variance(eta_of, tallies)

    corrections = {K_REBALANCE, DEADTIME}
    if noise is not None:
        corrections.add(NOISE_SUBTRACTION)
    return QEEstimate(eta, math.sqrt(var), DIFFERENCE_SIGNAL, corrections, nrf=nrf, mean_sum=mean, k=k)


def _klyshko_eta(p, pn, window_factor, dut, deadtime_threshold):
    """Efficiency of arm ``dut`` (0 signal, 1 idler) from cell frequencies."""
    ms, mi = _means(p)
    rate_ref = mi if dut == 0 else ms
    coinc = p[3]
    real = coinc - window_factor * ms * mi
    mean_sum = ms + mi
    ref_sig = rate_ref
    if pn is not None:
        ns, ni = _means(pn)
        mean_sum -= ns + ni
        ref_sig -= ns if dut == 1 else ni
    if ref_sig <= 0.0:
        raise InsufficientDataError("reference singles do not exceed the reference noise")
    if ref_sig >= deadtime_threshold:
        # saturation of the reference singles: true mean = -ln(1 - p)
        ref_sig *= -math.log1p(-ref_sig) / ref_sig
    return real * (1.0 + max(mean_sum, 0.0)) / ref_sig


def qe_klyshko(
    tally: TallyStats,
    noise: Optional[TallyStats] = None,
    window_factor: float = LAB_WINDOW_FACTOR,
    dut_arm: str = "idler",
    deadtime_threshold: float = REFERENCE_DEADTIME_THRESHOLD,
) -> QEEstimate:
    """Efficiency of the detector under test from heralded coincidences.

    ``eta = (N_c - N'_c) (1 + <N+>) / (N_ref - N'_ref)`` where ``N'_c`` are
    accidental coincidences, ``N'_ref`` reference-arm noise counts from the
    source-off run, and the factor ``1 + <N+>`` restores real coincidences
    lost to dead time. Reference singles are dead-time corrected only above
    ``deadtime_threshold`` clicks per pulse.
    """
    if dut_arm not in ("signal", "idler"):
        raise DomainError(f"dut_arm must be 'signal' or 'idler', got {dut_arm!r}")
    if tally.n_pulses < 1:
        raise InsufficientDataError("empty tally")
    if not window_factor >= 0:
        raise DomainError(f"window factor must be >= 0, got {window_factor!r}")
    dut = 0 if dut_arm == "signal" else 1
    ref_clicks = tally.sum_i if dut == 0 else tally.sum_s
    if ref_clicks == 0:
        raise EmptyArmError("reference arm registered no clicks")

    p = _cell_probs(tally)
    pn = _cell_probs(noise) if noise is not None and noise.n_pulses else None

    def eta_of(*ps):
        return _klyshko_eta(ps[0], ps[1] if pn is not None else None, window_factor, dut, deadtime_threshold)

    eta = eta_of(p, pn) + 0.0  # no negative zero
    tallies = [tally, noise] if pn is not None else [tally]
    se = math.sqrt(_delta_variance(eta_of, tallies))

    corrections = {DEADTIME}
    if window_factor > 0:
        corrections.add(ACCIDENTALS)
    if pn is not None:
        corrections.add(NOISE_SUBTRACTION)
    return QEEstimate(eta, se, COINCIDENCE, corrections, mean_sum=(tally.sum_s + tally.sum_i) / tally.n_pulses)


# --- gain-sweep fit ----------------------------------------------------------

def fit_nrf_curve(points: Sequence[GainPoint], k: float = 1.0, uniform: bool = False) -> FitResult:
    """Least-squares fit of the dead-time NRF curve with the efficiency as only parameter.

    Points are weighted by ``GainPoint.weight`` (inverse NRF variance) unless
    ``uniform``. The minimum is located by bounded Brent search on [0, 1].
    """
    pts = list(points)
    if len(pts) < 2 or len({pt.mean_sum_signal for pt in pts}) < 2:
        raise DegeneratePointsError("need at least two points with distinct mean sum signal")
    if not k > 0:
        raise DomainError(f"k must be > 0, got {k!r}")
    s = np.array([pt.mean_sum_signal for pt in pts])
    y = np.array([pt.nrf for pt in pts])
    w = np.ones(len(pts)) if uniform else np.array([pt.weight for pt in pts])

    a, b, c = analytic._deadtime_coefficients(k)

    def model(eta):
        return 1.0 - 2.0 * eta / (1.0 + k) - s * (a - b * eta + c * eta * eta)

    def objective(eta):
        r = y - model(eta)
        return float(np.sum(w * r * r))

    if np.any(s > analytic.DEADTIME_VALIDITY_LIMIT):
        warnings.warn("some points lie beyond the linear dead-time range", DeadTimeValidityWarning)
    res = minimize_scalar(objective, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-11})
    eta = float(res.x)
    resid = y - model(eta)
    # curvature of the weighted chi-square gives the parameter variance
    dmodel = -2.0 / (1.0 + k) + s * (b - 2.0 * c * eta)
    info = float(np.sum(w * dmodel * dmodel))
    se = 1.0 / math.sqrt(info) if info > 0 else math.inf
    if uniform:
        dof = max(len(pts) - 1, 1)
        se *= math.sqrt(float(np.sum(resid * resid)) / dof)
    return FitResult(eta, se, float(np.sum(w * resid * resid)), tuple(float(r) for r in resid), k)


def gain_point(tally: TallyStats) -> GainPoint:
    """Unweighted (k = 1) NRF point of a balanced-arm run, weighted by its inverse variance."""
    est = estimate_nrf(tally, 1.0)
    return GainPoint(est.mean_sum, est.nrf, 1.0 / est.std_error**2)
