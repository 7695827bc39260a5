"""Iteration drivers: recursion forms, equivalences, AMP, diagnostics."""
import math

import numpy as np
import pytest

from oamp.algorithms import (
    AlgorithmSpec,
    compute_onsager,
    run_algorithm,
    run_amp,
    run_gip_parallel,
    run_oamp_svd,
    run_oamp_w,
    serial_chain_messages,
    spec_from_config,
)
from oamp.errors import DivergenceError
from oamp.estimators import (
    BStrategy,
    LinearEstimator,
    OrthogonalizedEstimator,
    black_box_denoiser,
    identity_denoiser,
)
from oamp.model import BernoulliGaussianPrior, build_system
from oamp.randmat import apply_adjoint
from oamp.state_evolution import se_prediction

from conftest import make_config, make_system


def identity_spec(kind, iterations=5, **extra):
    nle = OrthogonalizedEstimator(identity_denoiser(), BStrategy("derivative"),
                                  prior=BernoulliGaussianPrior(1.0))
    return AlgorithmSpec(kind=kind, le=LinearEstimator("lmmse"), nle=nle,
                         iterations=iterations, **extra)


class TestOampRuns:
    def test_noiseless_identity_exact_after_one_iteration(self):
        system, cfg = make_system(seed=0, n=64, m_over_n=1.0, kappa=1.0,
                                  snr_db=None, lam=1.0)
        traj = run_oamp_svd(system, identity_spec("oamp-svd", iterations=3))
        assert traj.gs_mse[0] < 1e-12
        assert traj.gs_mse[-1] < 1e-12

    def test_identity_fixed_point(self):
        # once the estimate equals the truth in a noiseless system, the
        # iteration no longer moves
        system, _ = make_system(seed=1, n=64, m_over_n=1.0, kappa=2.0,
                                snr_db=None, lam=1.0)
        spec = identity_spec("oamp-w", iterations=4, record_messages=True)
        traj = run_oamp_w(system, spec)
        s_first = traj.messages[0][1]
        for _, s_later in traj.messages[1:]:
            np.testing.assert_allclose(s_later, s_first, atol=1e-10)

    def test_desk_scale_monotone_descent(self):
        cfg = make_config(n=512, m_over_n=0.65, kappa=10.0, snr_db=45.0,
                          iterations=10, b_strategy="integral")
        acc = np.zeros(cfg.iterations)
        trials = 10
        for i in range(trials):
            rng = np.random.default_rng(1000 + i)
            system = build_system(cfg, rng)
            acc += run_algorithm(system, spec_from_config(cfg), rng).gs_mse
        acc /= trials
        # monotone within Monte-Carlo slack
        assert np.all(np.diff(acc) < 0.05 * acc[:-1])

    def test_svd_and_w_forms_agree(self):
        system, cfg = make_system(seed=2, n=128, m_over_n=0.65, kappa=10.0,
                                  snr_db=45.0, iterations=10)
        t_svd = run_oamp_svd(system, spec_from_config(cfg.with_overrides(algorithm="oamp-svd")))
        t_w = run_oamp_w(system, spec_from_config(cfg.with_overrides(algorithm="oamp-w")))
        np.testing.assert_allclose(t_svd.gs_mse, t_w.gs_mse, atol=1e-8)
        np.testing.assert_allclose(t_svd.v_phi, t_w.v_phi, atol=1e-10)

    def test_vamp_is_oamp_w_with_ep(self):
        system, cfg = make_system(seed=3, n=128, m_over_n=0.65, kappa=10.0,
                                  snr_db=45.0, iterations=8)
        t_vamp = run_algorithm(system, spec_from_config(cfg.with_overrides(algorithm="vamp")))
        t_wep = run_algorithm(system, spec_from_config(
            cfg.with_overrides(algorithm="oamp-w", b_strategy="ep")))
        np.testing.assert_allclose(t_vamp.gs_mse, t_wep.gs_mse, atol=1e-10)

    def test_optimized_beats_standard(self):
        cfg = make_config(n=256, m_over_n=0.65, kappa=10.0, snr_db=45.0,
                          iterations=12, b_strategy="integral")
        trials = 50
        std = np.zeros(cfg.iterations)
        opt = np.zeros(cfg.iterations)
        for i in range(trials):
            system = build_system(cfg, np.random.default_rng(5000 + i))
            std += run_algorithm(system, spec_from_config(cfg)).gs_mse
            opt += run_algorithm(
                system, spec_from_config(cfg.with_overrides(algorithm="oamp-w-optimized"))).gs_mse
        assert np.all(opt[2:] <= std[2:])

    def test_trajectory_shape_and_finiteness(self):
        system, cfg = make_system(seed=4, iterations=5)
        traj = run_algorithm(system, spec_from_config(cfg))
        assert traj.iterations == 5
        for arr in (traj.v_gamma, traj.v_phi, traj.gs_mse, traj.raw_mse):
            assert arr.shape == (5,)
            assert np.all(np.isfinite(arr)) and np.all(arr >= 0.0)

    def test_divergence_raises_structured_error(self):
        system, _ = make_system(seed=5)
        blower = black_box_denoiser(lambda r: r * np.inf, differentiable=False)
        nle = OrthogonalizedEstimator(blower, BStrategy("none"), c_rule="none",
                                      prior=BernoulliGaussianPrior(0.25))
        spec = AlgorithmSpec(kind="oamp-w", le=LinearEstimator("lmmse"), nle=nle,
                             iterations=4)
        with pytest.raises(DivergenceError) as err:
            run_oamp_w(system, spec)
        assert err.value.iteration == 1

    def test_kind_validation(self):
        system, cfg = make_system()
        spec = spec_from_config(cfg)
        with pytest.raises(ValueError):
            run_oamp_svd(system, spec)       # spec kind is oamp-w
        with pytest.raises(ValueError):
            run_amp(system, spec)

    def test_amp_spec_requires_raw_prototype(self):
        nle = OrthogonalizedEstimator(identity_denoiser(), BStrategy("integral"),
                                      prior=BernoulliGaussianPrior(1.0))
        with pytest.raises(ValueError, match="raw"):
            AlgorithmSpec(kind="amp", le=LinearEstimator("matched-filter"),
                          nle=nle, iterations=3)


class TestAmp:
    def test_first_iteration_is_matched_filter(self):
        system, cfg = make_system(seed=6, kappa=1.0)
        spec = spec_from_config(cfg.with_overrides(algorithm="amp"),
                                record_messages=True)
        traj = run_amp(system, spec)
        x_in_1 = traj.messages[0][0]
        np.testing.assert_allclose(x_in_1, apply_adjoint(system, system.y), rtol=1e-12)

    def test_matches_state_evolution_on_iidg(self):
        cfg = make_config(n=1024, m_over_n=0.65, kappa=1.0, snr_db=45.0,
                          iterations=6, algorithm="amp")
        se = se_prediction(cfg, cfg.iterations)
        acc = np.zeros(cfg.iterations)
        trials = 8
        for i in range(trials):
            rng = np.random.default_rng(900 + i)
            system = build_system(cfg, rng, spectrum_kind="iidg-sample")
            acc += run_amp(system, spec_from_config(cfg)).gs_mse
        gap = 10 * np.log10(acc / trials) - 10 * np.log10(se.gs_mse)
        assert np.all(np.abs(gap) < 1.0)

    def test_degrades_on_ill_conditioned_system(self):
        system, cfg = make_system(seed=7, n=256, m_over_n=0.65, kappa=10.0,
                                  snr_db=45.0, iterations=20)
        amp = run_amp(system, spec_from_config(cfg.with_overrides(algorithm="amp")))
        oamp = run_algorithm(system, spec_from_config(cfg))
        assert amp.gs_mse[-1] > oamp.gs_mse[-1]


class TestOnsager:
    def test_zero_coefficient(self):
        assert np.array_equal(compute_onsager(0.0, np.ones(4), np.zeros(4)), np.zeros(4))

    def test_equal_vectors(self):
        v = np.arange(4.0)
        assert np.array_equal(compute_onsager(0.7, v, v), np.zeros(4))

    def test_arithmetic(self):
        np.testing.assert_array_equal(
            compute_onsager(0.5, np.array([2.0, -4.0]), np.zeros(2)), [1.0, -2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            compute_onsager(0.5, np.ones(3), np.ones(4))


class TestSchedules:
    def test_parallel_chain_equals_serial_bitwise(self):
        system, cfg = make_system(seed=8, n=128, m_over_n=0.65, kappa=10.0,
                                  snr_db=45.0, iterations=6)
        spec = spec_from_config(cfg)
        chain_a, chain_b = run_gip_parallel(system, spec)
        serial = serial_chain_messages(system, spec)
        assert len(chain_a) == len(serial) == 2 * spec.iterations
        for a, s in zip(chain_a, serial):
            assert np.array_equal(a, s)
        # the opposite-phase chain is a different process
        assert not np.array_equal(chain_a[0], chain_b[0])


class TestOrthogonalityDiagnostics:
    def test_cross_correlations_stay_small(self):
        cfg = make_config(n=1024, m_over_n=0.65, kappa=10.0, snr_db=45.0,
                          iterations=8, b_strategy="integral")
        bound = 5.0 / math.sqrt(cfg.n)
        seeds = 5
        cross = np.zeros((cfg.iterations, cfg.iterations))
        sig = np.zeros(cfg.iterations)
        for i in range(seeds):
            rng = np.random.default_rng(40 + i)
            system = build_system(cfg, rng)
            traj = run_algorithm(system, spec_from_config(cfg, track_cross=True), rng)
            cross += np.abs(traj.cross_corr)
            sig += np.abs(traj.signal_corr)
        upper = np.triu_indices(cfg.iterations)
        assert np.max(cross[upper] / seeds) < bound
        assert np.max(sig / seeds) < bound

    def test_unorthogonalized_control_violates(self):
        cfg = make_config(n=1024, m_over_n=0.65, kappa=10.0, snr_db=45.0,
                          iterations=6, b_strategy="none")
        system = build_system(cfg, np.random.default_rng(60))
        traj = run_algorithm(system, spec_from_config(cfg, track_cross=True))
        bound = 5.0 / math.sqrt(cfg.n)
        upper = np.triu_indices(cfg.iterations)
        assert np.max(np.abs(traj.cross_corr[upper])) > bound
