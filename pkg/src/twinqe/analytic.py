"""Closed-form noise-reduction-factor and click-statistics formulas.

Everything here is a pure function of its arguments. The binary-click
detector model is: a pulse carrying ``n`` photons produces a click with
probability ``1 - (1 - eta)**n``; the photon number of a pulse is Poissonian.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import DeadTimeValidityWarning, DomainError, NoAdmissibleRootError, NoRealRootError

#: Upper end of the mean-sum-signal range where the linear dead-time term is trusted.
DEADTIME_VALIDITY_LIMIT = 0.1

_ROOT_SLACK = 1e-12


@dataclass(frozen=True)
class GainPoint:
    """One (mean sum signal, measured NRF) point of a gain sweep."""

    mean_sum_signal: float
    nrf: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.mean_sum_signal > 0:
            raise DomainError(f"mean_sum_signal must be > 0, got {self.mean_sum_signal!r}")
        if not self.weight > 0:
            raise DomainError(f"weight must be > 0, got {self.weight!r}")


def _check_fraction(name, x):
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {x!r}")


def _check_nonneg(name, x):
    if not x >= 0.0:
        raise DomainError(f"{name} must be >= 0, got {x!r}")


def _check_positive(name, x):
    if not x > 0.0:
        raise DomainError(f"{name} must be > 0, got {x!r}")


def nrf_ideal(eta: float) -> float:
    """NRF of balanced arms with total efficiency ``eta`` (low-gain, no dead time)."""
    _check_fraction("eta", eta)
    return 1.0 - eta


def nrf_two_channel(eta_i: float, eta_s: float, n_per_mode: float) -> float:
    """NRF for unequal arm efficiencies.

    ``n_per_mode`` is the mean photon number per mode; the excess term grows
    with it and vanishes for balanced arms.
    """
    _check_fraction("eta_i", eta_i)
    _check_fraction("eta_s", eta_s)
    _check_nonneg("n_per_mode", n_per_mode)
    total = eta_i + eta_s
    if total == 0.0:
        raise DomainError("eta_i + eta_s must be > 0")
    return 1.0 - 2.0 * eta_i * eta_s / total + n_per_mode * (eta_i - eta_s) ** 2 / total


def nrf_k_rebalanced(eta_i: float, k: float) -> float:
    """Var(N_i - k N_s) / <N_i + k N_s> with ``k = eta_i / eta_s``."""
    _check_fraction("eta_i", eta_i)
    _check_positive("k", k)
    return 0.5 * (1.0 + k) - eta_i


def _deadtime_coefficients(k):
    """Coefficients (A, B, C) of the dead-time bracket ``A - B*eta + C*eta**2``."""
    opk = 1.0 + k
    return (1.0 + k * k) / opk**2, (k * k + 4.0 * k + 1.0) / opk**3, 1.0 / opk**2


def deadtime_slope(eta_i: float, k: float) -> float:
    """d NRF / d<N+> of the dead-time corrected NRF (always <= 0 for eta in [0, 1])."""
    a, b, c = _deadtime_coefficients(k)
    return -(a - b * eta_i + c * eta_i * eta_i)


def _warn_validity(mean_sum):
    if mean_sum > DEADTIME_VALIDITY_LIMIT:
        warnings.warn(
            f"mean sum signal {mean_sum:.4g} exceeds {DEADTIME_VALIDITY_LIMIT}; "
            "the first-order dead-time term may be inaccurate",
            DeadTimeValidityWarning,
            stacklevel=3,
        )


def nrf_deadtime(eta_i: float, k: float, mean_sum: float) -> float:
    """Measured NRF of single-photon detectors, to first order in ``mean_sum``.

    Parameters
    ----------
    eta_i : float
        Efficiency of the idler (tested) channel.
    k : float
        Balance factor ``eta_i / eta_s``.
    mean_sum : float
        Mean number of clicks per pulse summed over both detectors, <N+>.
    """
    _check_fraction("eta_i", eta_i)
    _check_positive("k", k)
    _check_nonneg("mean_sum", mean_sum)
    _warn_validity(mean_sum)
    return 1.0 - 2.0 * eta_i / (1.0 + k) + mean_sum * deadtime_slope(eta_i, k)


def solve_eta_from_nrf(nrf: float, k: float, mean_sum: float) -> float:
    """Invert :func:`nrf_deadtime` for the idler efficiency.

    The relation is quadratic in ``eta_i``; the root inside ``[0, 1]`` is
    returned. Raises :class:`NoRealRootError` for a negative discriminant and
    :class:`NoAdmissibleRootError` when zero or two roots are admissible.
    """
    if not math.isfinite(nrf):
        raise DomainError(f"nrf must be finite, got {nrf!r}")
    _check_positive("k", k)
    _check_nonneg("mean_sum", mean_sum)
    _warn_validity(mean_sum)

    a_coef, b_coef, c_coef = _deadtime_coefficients(k)
    # a x^2 + b x + c = 0
    a = -mean_sum * c_coef
    b = mean_sum * b_coef - 2.0 / (1.0 + k)
    c = 1.0 - mean_sum * a_coef - nrf

    if a == 0.0:
        roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            raise NoRealRootError(
                f"no real efficiency reproduces nrf={nrf!r} at k={k!r}, mean_sum={mean_sum!r}"
            )
        sq = math.sqrt(disc)
        q = -0.5 * (b - sq) if b < 0.0 else -0.5 * (b + sq)
        roots = [c / q, q / a] if q != 0.0 else [0.0]

    admissible = [r for r in roots if -_ROOT_SLACK <= r <= 1.0 + _ROOT_SLACK]
    if len(admissible) != 1:
        raise NoAdmissibleRootError(
            f"roots {roots} for nrf={nrf!r}, k={k!r}, mean_sum={mean_sum!r}: "
            f"expected exactly one in [0, 1], found {len(admissible)}"
        )
    return min(max(admissible[0], 0.0), 1.0)


def click_probability(eta: float, mu: float) -> float:
    """Probability of at least one registered photon from a Poisson(mu) pulse."""
    _check_fraction("eta", eta)
    _check_nonneg("mu", mu)
    return -math.expm1(-eta * mu)


def coincidence_probability(eta_s: float, eta_i: float, mu: float) -> float:
    """Probability that both arms click when each carries the same Poisson(mu) photon number."""
    _check_fraction("eta_s", eta_s)
    _check_fraction("eta_i", eta_i)
    _check_nonneg("mu", mu)
    p_s = -math.expm1(-eta_s * mu)
    p_i = -math.expm1(-eta_i * mu)
    # P(both) = p_s p_i + Cov, Cov written without cancellation
    cov = math.exp(-mu * (eta_s + eta_i)) * math.expm1(mu * eta_s * eta_i)
    return p_s * p_i + cov


def nrf_exact_model(eta_s: float, eta_i: float, mu: float) -> float:
    """Exact Var(N_i - N_s) / <N_i + N_s> of the binary-click model (no noise)."""
    p_s = click_probability(eta_s, mu)
    p_i = click_probability(eta_i, mu)
    total = p_s + p_i
    if total == 0.0:
        raise DomainError("both click probabilities vanish; NRF undefined")
    cov = math.exp(-mu * (eta_s + eta_i)) * math.expm1(mu * eta_s * eta_i)
    return (p_s * (1.0 - p_s) + p_i * (1.0 - p_i) - 2.0 * cov) / total


def independent_arms_nrf(p_s: float, p_i: float) -> float:
    """NRF of two uncorrelated binary arms with click probabilities ``p_s``, ``p_i``."""
    _check_fraction("p_s", p_s)
    _check_fraction("p_i", p_i)
    total = p_s + p_i
    if total == 0.0:
        raise DomainError("both click probabilities vanish; NRF undefined")
    return 1.0 - (p_s * p_s + p_i * p_i) / total


def click_statistics(
    shared_mu: float,
    extra_s: float,
    extra_i: float,
    eta_s: float,
    eta_i: float,
    noise_s: float = 0.0,
    noise_i: float = 0.0,
    block_s: float = 0.0,
    block_i: float = 0.0,
) -> tuple[float, float, float]:
    """Exact (p_s, p_i, p_coinc) for the full gated model.

    Each arm receives the common Poisson(``shared_mu``) photon number plus an
    independent Poisson(``extra_*``) admixture, and a Poisson(``noise_*``)
    count of noise photoelectrons; a gate is dead with probability
    ``block_*``.
    """
    for name, x in (("shared_mu", shared_mu), ("extra_s", extra_s), ("extra_i", extra_i),
                    ("noise_s", noise_s), ("noise_i", noise_i)):
        _check_nonneg(name, x)
    for name, x in (("eta_s", eta_s), ("eta_i", eta_i), ("block_s", block_s), ("block_i", block_i)):
        _check_fraction(name, x)

    miss_s = eta_s * extra_s + noise_s
    miss_i = eta_i * extra_i + noise_i
    open_s, open_i = 1.0 - block_s, 1.0 - block_i
    # E[no click] per arm and jointly, via the Poisson generating function
    log_q_s = -miss_s - shared_mu * eta_s
    log_q_i = -miss_i - shared_mu * eta_i
    p_s = -math.expm1(log_q_s)
    p_i = -math.expm1(log_q_i)
    cov = math.exp(log_q_s + log_q_i) * math.expm1(shared_mu * eta_s * eta_i)
    return open_s * p_s, open_i * p_i, open_s * open_i * (p_s * p_i + cov)


def aperture_ratio(lambda_i: float, lambda_s: float) -> float:
    """Iris diameter ratio D_i / D_s that collects conjugate signal/idler modes."""
    _check_positive("lambda_i", lambda_i)
    _check_positive("lambda_s", lambda_s)
    return lambda_i / lambda_s
