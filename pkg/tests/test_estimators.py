import math
import warnings

import numpy as np
import pytest

from twinqe import analytic, estimators as est
from twinqe import simulator as sim
from twinqe.analytic import GainPoint
from twinqe.errors import (
    DegeneratePointsError,
    DomainError,
    EmptyArmError,
    InsufficientDataError,
    NegativeSubtractionError,
)
from twinqe.tally import TallyStats, merge

ETA = 0.256
MU = 0.0985  # <N+> ~ 0.05 for eta = 0.256


def simulate(mu=MU, eta_s=ETA, eta_i=ETA, n=10_000_000, seed=1, **ch):
    return sim.run(
        sim.SourceConfig(mu),
        sim.ChannelConfig(1.0, eta_s, **ch),
        sim.ChannelConfig(1.0, eta_i, **ch),
        sim.RunConfig(n, seed=seed),
    )


def noise_run(nu, n=10_000_000, seed=99):
    ch = sim.ChannelConfig(1.0, ETA, background_mean_per_gate=nu)
    return sim.run(sim.SourceConfig(0.0), ch, ch, sim.RunConfig(n, seed=seed))


def bootstrap_sd(tallies, func, reps=300, seed=0):
    """Multinomial resampling of each tally's cells (same law as resampling records)."""
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(reps):
        boot = [
            TallyStats.from_cells(*rng.multinomial(t.n_pulses, np.array(t.cells()) / t.n_pulses)) for t in tallies
        ]
        vals.append(func(*boot))
    return float(np.std(vals, ddof=1))


class TestK:
    def test_ratio(self):
        assert est.estimate_k(TallyStats(10_000, 1000, 1000, 0)) == 1.0
        assert est.estimate_k(TallyStats(10_000, 1000, 1200, 0)) == 1.2

    def test_empty_signal_arm(self):
        with pytest.raises(EmptyArmError):
            est.estimate_k(TallyStats(10, 0, 3, 0))

    def test_simulated_ratio(self):
        t = simulate(mu=0.01, eta_s=0.30, eta_i=0.24)
        k = est.estimate_k(t)
        se = k * math.sqrt(1 / t.sum_i + 1 / t.sum_s)
        assert abs(k - 0.8) <= 3 * se


class TestNrf:
    def test_zero_mean(self):
        with pytest.raises(InsufficientDataError):
            est.estimate_nrf(TallyStats(100, 0, 0, 0))
        with pytest.raises(InsufficientDataError):
            est.estimate_nrf(TallyStats(1, 1, 0, 0))

    def test_alternating_records(self):
        n = 1_000_000
        t = TallyStats.from_cells(0, n // 2, n // 2, 0)
        r = est.estimate_nrf(t, 1.0)
        assert r.mean_sum == 1.0
        assert r.nrf == pytest.approx(n / (n - 1), rel=1e-15)

    def test_sample_variance_on_two_records(self):
        # differences (-1, 0): unbiased variance 0.5, mean sum 0.5
        t = TallyStats.from_cells(1, 1, 0, 0)
        assert est.estimate_nrf(t).nrf == pytest.approx(1.0)

    def test_unbiased_on_bernoulli_streams(self):
        rng = np.random.default_rng(5)
        p = 0.01
        n = 1_000_000
        t = TallyStats.from_clicks(rng.random(n) < p, rng.random(n) < p)
        r = est.estimate_nrf(t)
        assert abs(r.nrf - analytic.independent_arms_nrf(p, p)) <= 3 * r.std_error
        # single arm: Var(N_i)/<N_i> = 1 - p
        single = TallyStats.from_clicks(np.zeros(n, bool), rng.random(n) < p)
        v = est.estimate_nrf(single).nrf * single.sum_i / n
        ph = single.sum_i / n
        assert v == pytest.approx(ph * (1 - ph) * n / (n - 1), rel=1e-12)

    def test_matches_exact_model(self):
        t = simulate(seed=2)
        r = est.estimate_nrf(t)
        assert abs(r.nrf - analytic.nrf_exact_model(ETA, ETA, MU)) <= 3 * r.std_error

    def test_merge_then_estimate(self):
        src, a, b = sim.SourceConfig(MU), sim.ChannelConfig(1, ETA), sim.ChannelConfig(1, 0.2)
        parts = [sim.simulate_clicks(src, a, b, start, n, seed=6) for start, n in ((0, 300_000), (300_000, 700_001), (1_000_001, 999))]
        whole = TallyStats.from_clicks(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
        tallies = [TallyStats.from_clicks(*p) for p in parts]
        for k in (1.0, 0.7, 1.3):
            x = est.estimate_nrf(merge(*tallies), k)
            y = est.estimate_nrf(whole, k)
            z = est.estimate_nrf(tallies[2] + (tallies[1] + tallies[0]), k)
            assert x.nrf == pytest.approx(y.nrf, rel=1e-12) == z.nrf
            assert x.std_error == pytest.approx(y.std_error, rel=1e-12)

    def test_delta_se_matches_bootstrap(self):
        t = simulate(n=1_000_000, seed=7)
        se = est.estimate_nrf(t).std_error
        sd = bootstrap_sd([t], lambda x: est.estimate_nrf(x).nrf)
        assert se == pytest.approx(sd, rel=0.2)


class TestNoiseSubtraction:
    def test_example(self):
        nrf, mean = est.subtract_noise((0.08, 0.10), (0.03, 0.05))
        assert nrf == pytest.approx(1.0) and mean == pytest.approx(0.05)

    def test_identity(self):
        assert est.subtract_noise((0.037, 0.05), (0.0, 0.0)) == (0.037 / 0.05, 0.05)

    def test_negative(self):
        with pytest.raises(NegativeSubtractionError):
            est.subtract_noise((0.02, 0.10), (0.03, 0.05))
        with pytest.raises(NegativeSubtractionError):
            est.subtract_noise((0.08, 0.05), (0.03, 0.05))

    def test_crossterm_vanishes_without_noise(self):
        assert est.noise_crossterm((0.02, 0.03), (0.0, 0.0)) == 0.0

    def test_background_subtracted_nrf(self):
        nu = 0.01
        sig = simulate(seed=8, background_mean_per_gate=nu)
        q = est.qe_difference_method(sig, noise_run(nu))
        # background photoelectrons hide signal clicks: effective efficiency eta * exp(-nu)
        eff = ETA * math.exp(-nu)
        expected = analytic.nrf_exact_model(eff, eff, MU)
        sd = math.sqrt(2) * est.estimate_nrf(sig).std_error
        assert abs(q.nrf - expected) <= 3 * sd
        assert est.NOISE_SUBTRACTION in q.corrections_applied


class TestDifferenceMethod:
    def test_lab_regime(self):
        q = est.qe_difference_method(simulate(seed=9))
        assert q.method == est.DIFFERENCE_SIGNAL
        assert abs(q.eta - ETA) <= 3 * q.std_error
        assert 0 < q.std_error <= 0.004
        assert q.mean_sum == pytest.approx(0.05, abs=0.001)
        assert q.corrections_applied == {est.DEADTIME, est.K_REBALANCE}

    def test_low_gain_needs_no_deadtime_term(self):
        t = simulate(mu=1e-3, n=20_000_000, seed=10)
        r = est.estimate_nrf(t)
        raw = analytic.solve_eta_from_nrf(r.nrf, est.estimate_k(t), 0.0)
        q = est.qe_difference_method(t)
        assert abs(raw - ETA) <= 3 * q.std_error

    def test_unbalanced_arms(self):
        q = est.qe_difference_method(simulate(eta_s=0.30, eta_i=0.24, seed=11))
        assert abs(q.eta - 0.24) <= 3 * q.std_error
        assert q.k == pytest.approx(0.8, abs=0.02)

    def test_k_invariance(self):
        a = est.qe_difference_method(simulate(seed=12))
        b = est.qe_difference_method(simulate(eta_s=0.18, seed=13))
        assert a.nrf != pytest.approx(b.nrf, abs=0.01)
        assert abs(a.eta - b.eta) <= 3 * math.hypot(a.std_error, b.std_error)

    def test_delta_se_matches_bootstrap(self):
        t = simulate(n=2_000_000, seed=14)
        q = est.qe_difference_method(t)
        sd = bootstrap_sd([t], lambda x: est.qe_difference_method(x).eta, reps=200)
        assert q.std_error == pytest.approx(sd, rel=0.2)

    def test_no_clicks(self):
        with pytest.raises(InsufficientDataError):
            est.qe_difference_method(TallyStats(100))

    def test_warns_beyond_linear_range(self):
        t = simulate(mu=0.5, n=200_000, seed=15)
        with pytest.warns(est.DeadTimeValidityWarning):
            try:
                est.qe_difference_method(t)
            except DomainError:
                pass


class TestCoincidence:
    def test_accidentals(self):
        t = TallyStats(10_000_000, 10_000, 20_000, 0)
        assert est.accidental_coincidences(t, 0.65) == pytest.approx(13.0)
        assert est.accidental_coincidences(TallyStats(100, 0, 50, 0)) == 0.0
        assert est.LAB_WINDOW_FACTOR == 0.65

    def test_deadtime_correction(self):
        t = TallyStats(1_000_000, 25_000, 25_000, 10_000)
        assert est.deadtime_correct_coincidences(10_000, t) / 1e6 == pytest.approx(0.0105)
        assert est.deadtime_correct_coincidences(7, TallyStats(10)) == 7

    def test_ratio_arithmetic(self):
        t = TallyStats(10**13, 1000, 258, 258)
        q = est.qe_klyshko(t, window_factor=0.0, dut_arm="idler")
        assert q.eta == pytest.approx(0.258, rel=1e-8)
        assert q.method == est.COINCIDENCE

    def test_no_coincidences(self):
        q = est.qe_klyshko(TallyStats(10**13, 1000, 258, 0), window_factor=0.0)
        assert q.eta == 0.0

    def test_dut_arm_selects_reference(self):
        t = TallyStats(10**13, 258, 1000, 258)
        assert est.qe_klyshko(t, window_factor=0.0, dut_arm="signal").eta == pytest.approx(0.258, rel=1e-8)
        with pytest.raises(DomainError):
            est.qe_klyshko(t, dut_arm="both")

    def test_reference_without_signal(self):
        with pytest.raises(EmptyArmError):
            est.qe_klyshko(TallyStats(100, 0, 5, 0))
        with pytest.raises(InsufficientDataError):
            est.qe_klyshko(TallyStats(100, 5, 5, 0), noise=TallyStats(100, 6, 5, 0))

    def test_narrow_reference(self):
        src = sim.klyshko_geometry(sim.SourceConfig(0.3), 0.1)
        t = sim.run(src, sim.ChannelConfig(1, 0.2), sim.ChannelConfig(1, ETA), sim.RunConfig(10_000_000, seed=16))
        assert t.sum_s / t.n_pulses < 0.01
        q = est.qe_klyshko(t, window_factor=1.0)
        assert abs(q.eta - ETA) <= 3 * q.std_error

    def test_delta_se_matches_bootstrap(self):
        t = simulate(n=2_000_000, seed=17)
        q = est.qe_klyshko(t, window_factor=1.0)
        sd = bootstrap_sd([t], lambda x: est.qe_klyshko(x, window_factor=1.0).eta, reps=200)
        assert q.std_error == pytest.approx(sd, rel=0.2)

    def test_noise_run_correction(self):
        nu = 0.02
        b = sim.blocking_from_background(nu, 30, 50)
        sig = simulate(seed=18, background_mean_per_gate=nu, blocking_probability=b)
        ch = sim.ChannelConfig(1, ETA, background_mean_per_gate=nu, blocking_probability=b)
        noise = sim.run(sim.SourceConfig(0.0), ch, ch, sim.RunConfig(10_000_000, seed=19))
        q = est.qe_klyshko(sig, noise, window_factor=1.0)
        target = ETA * (1 - b) * math.exp(-nu)
        assert abs(q.eta - target) <= 3 * q.std_error
        assert q.corrections_applied == {est.ACCIDENTALS, est.DEADTIME, est.NOISE_SUBTRACTION}


def test_methods_agree_on_one_dataset():
    t = simulate(seed=20)
    a = est.qe_difference_method(t)
    b = est.qe_klyshko(t, window_factor=1.0)
    assert abs(a.eta - b.eta) < 3 * math.hypot(a.std_error, b.std_error)


class TestFit:
    def test_noiseless_round_trip(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pts = [GainPoint(s, analytic.nrf_deadtime(0.3, 1.0, s), 1.0) for s in np.linspace(0.005, 0.1, 10)]
        r = est.fit_nrf_curve(pts, 1.0)
        assert r.eta == pytest.approx(0.3, abs=1e-8)
        assert max(abs(x) for x in r.residuals) < 1e-8

    def test_unbalanced_round_trip(self):
        pts = [GainPoint(s, analytic.nrf_deadtime(0.2, 0.7, s), 1.0 + s) for s in (0.01, 0.05, 0.09)]
        assert est.fit_nrf_curve(pts, 0.7, uniform=True).eta == pytest.approx(0.2, abs=1e-8)

    def test_degenerate(self):
        with pytest.raises(DegeneratePointsError):
            est.fit_nrf_curve([GainPoint(0.05, 0.7, 1.0), GainPoint(0.05, 0.72, 1.0)])
        with pytest.raises(DegeneratePointsError):
            est.fit_nrf_curve([GainPoint(0.05, 0.7, 1.0)])

    def test_simulated_sweep(self):
        pts = [est.gain_point(simulate(mu=m, n=1_000_000, seed=100 + j)) for j, m in enumerate(np.linspace(0.01, 0.2, 8))]
        r = est.fit_nrf_curve(pts)
        assert abs(r.eta - ETA) <= 3 * r.std_error
        assert r.std_error < 0.02


def test_estimate_range():
    with pytest.raises(est.EstimateRangeError):
        est.QEEstimate(1.2, 0.1, est.COINCIDENCE)
    with pytest.raises(DomainError):
        est.QEEstimate(0.2, -0.1, est.COINCIDENCE)
    q = est.QEEstimate(np.float64(0.2), 0.1, est.COINCIDENCE, ["accidentals"])
    assert type(q.eta) is float and q.corrections_applied == frozenset({"accidentals"})
