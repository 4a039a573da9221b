import math

import numpy as np
import pytest

from conftest import random_mixed, random_pure, random_unitary
from nvpulse.linops import InvariantViolation
from nvpulse.pulses import (NO_NOISE, DensityMatrix, NoiseParams, PulseSpec,
                            RWAWarning, apply_pulse_with_noise, detuning_members,
                            evolve, fit_damped_cosine, free_evolution, pi_pulse,
                            pulse_propagator, rabi_trace, resolve_target)

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class TestDensityMatrix:
    def test_pure_level(self):
        rho = DensityMatrix.pure_level(3)
        assert rho.population(3) == 1.0
        rho.check()

    def test_check_catches_violations(self):
        bad_trace = np.eye(4, dtype=complex)
        with pytest.raises(InvariantViolation, match="trace"):
            DensityMatrix(bad_trace).check()
        m = np.diag([1.0, 0.0, 0.0, 0.0]).astype(complex)
        m[0, 1] = 0.3  # not Hermitian
        with pytest.raises(InvariantViolation, match="Hermitian"):
            DensityMatrix(m).check()
        m2 = np.diag([1.2, -0.2, 0.0, 0.0]).astype(complex)
        with pytest.raises(InvariantViolation, match="eigenvalue"):
            DensityMatrix(m2).check()

    def test_bad_basis(self):
        with pytest.raises(ValueError):
            DensityMatrix(np.eye(4) / 4, basis="levels5")
        with pytest.raises(ValueError):
            DensityMatrix(np.eye(6) / 6, basis="levels4")


class TestPulseSpec:
    def test_rotation_angle(self):
        p = PulseSpec("mw", "A", rabi_mhz=10.0, duration_us=0.05)
        assert abs(p.rotation_angle - math.pi) < 1e-12

    def test_by_angle(self):
        p = PulseSpec.by_angle("rf", "C", math.pi, 5.0)
        assert abs(p.duration_us - 0.1) < 1e-15
        with pytest.raises(ValueError):
            PulseSpec.by_angle("rf", "C", math.pi, 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            PulseSpec("laser", "A", 1.0, 1.0)
        with pytest.raises(ValueError):
            PulseSpec("mw", "A", 1.0, -0.1)
        with pytest.raises(ValueError):
            PulseSpec("mw", None, 1.0, 0.1)  # no target and no carrier


class TestNoiseParams:
    def test_t2_bound(self):
        with pytest.raises(ValueError, match="T2 <= 2"):
            NoiseParams(t1_electron_us=1.0, t2_electron_us=3.0)

    def test_positive_times(self):
        with pytest.raises(ValueError):
            NoiseParams(t2_nuclear_us=0.0)

    def test_ensemble_size(self):
        with pytest.raises(ValueError):
            NoiseParams(ensemble_size=0)


class TestPropagator:
    def test_zero_duration_is_identity(self, register):
        p = PulseSpec("mw", "A", 10.0, 0.0)
        u = pulse_propagator(register.levels, register.table, p)
        assert np.abs(u - np.eye(4)).max() < 1e-15

    def test_resonant_pi_swaps_pair(self, register):
        rho = DensityMatrix.pure_level(3)
        out = evolve(rho, pulse_propagator(register.levels, register.table,
                                           register.pi("A")))
        assert abs(out.population(1) - 1.0) < 1e-12

    def test_detuned_pulse_matches_analytic_rabi(self, register):
        # closed-form two-level oracle: P(t) = (O^2/OR^2) sin^2(pi OR t)
        omega, delta = 8.0, 5.0
        omega_r = math.hypot(omega, delta)
        rho = DensityMatrix.pure_level(3)
        for t in np.linspace(0.01, 0.4, 17):
            p = PulseSpec("mw", "A", omega, float(t), detuning_mhz=delta)
            out = evolve(rho, pulse_propagator(register.levels, register.table, p))
            expected = (omega / omega_r) ** 2 * math.sin(math.pi * omega_r * t) ** 2
            assert abs(out.population(1) - expected) < 1e-10

    def test_max_transfer_at_delta_equals_omega(self, register):
        omega = 10.0
        t_pi = 1.0 / (2.0 * omega * math.sqrt(2.0))
        p = PulseSpec("mw", "A", omega, t_pi, detuning_mhz=omega)
        out = evolve(DensityMatrix.pure_level(3),
                     pulse_propagator(register.levels, register.table, p))
        assert abs(out.population(1) - 0.5) < 1e-12

    def test_unitarity(self, register):
        rng = np.random.default_rng(2)
        eye = np.eye(4)
        for _ in range(50):
            p = PulseSpec(
                "rf" if rng.random() < 0.5 else "mw",
                None, rabi_mhz=rng.uniform(0.1, 10),
                duration_us=rng.uniform(0, 2),
                phase_rad=rng.uniform(-np.pi, np.pi),
                detuning_mhz=rng.normal(0, 2),
                carrier_mhz=float(rng.uniform(1, 5000)),
            )
            u = pulse_propagator(register.levels, register.table, p)
            assert np.abs(u.conj().T @ u - eye).max() < 1e-10

    def test_composition(self, register):
        t1, t2 = 0.037, 0.113
        def u(t):
            return pulse_propagator(register.levels, register.table,
                                    PulseSpec("rf", "C", 5.0, t, phase_rad=0.3))
        assert np.abs(u(t1 + t2) - u(t2) @ u(t1)).max() < 1e-9

    def test_six_level_embedding(self, register):
        u = pulse_propagator(register.levels, register.table, register.pi("A"), dim=6)
        assert u.shape == (6, 6)
        assert np.abs(u.conj().T @ u - np.eye(6)).max() < 1e-10
        rho6 = DensityMatrix.pure_level(register.levels.labels[3] + 1, basis="eigen6")
        out = evolve(rho6, u)
        assert abs(out.m[register.levels.labels[1], register.levels.labels[1]].real - 1.0) < 1e-12

    def test_unknown_transition(self, register):
        with pytest.raises(ValueError, match="unknown transition"):
            resolve_target(PulseSpec("mw", "Q", 1.0, 1.0), register.table)

    def test_channel_mismatch(self, register):
        with pytest.raises(ValueError, match="channel mismatch"):
            resolve_target(PulseSpec("rf", "A", 1.0, 1.0), register.table)

    def test_explicit_carrier_resolves_to_nearest(self, register):
        p = PulseSpec("rf", None, 1.0, 0.1, carrier_mhz=126.0)
        name, det = resolve_target(p, register.table)
        assert name == "C"
        assert abs(det - (126.0 - register.table["C"].frequency_mhz)) < 1e-12

    def test_rwa_warning(self, register):
        p = PulseSpec("rf", "D", 5.0, 0.1)  # 5 MHz drive on a 3 MHz line
        with pytest.warns(RWAWarning):
            pulse_propagator(register.levels, register.table, p)


class TestEvolve:
    def test_identity(self, register):
        rho = DensityMatrix(random_mixed(np.random.default_rng(0)))
        out = evolve(rho, np.eye(4, dtype=complex))
        assert np.abs(out.m - rho.m).max() < 1e-15

    def test_double_pi_restores_populations(self, register):
        rho = DensityMatrix(random_mixed(np.random.default_rng(1)))
        u = pulse_propagator(register.levels, register.table, register.pi("A"))
        out = evolve(evolve(rho, u), u)
        assert np.abs(out.populations() - rho.populations()).max() < 1e-10

    def test_spectrum_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            rho = DensityMatrix(random_mixed(rng))
            u = random_unitary(rng)
            out = evolve(rho, u)
            assert abs(out.m.trace() - 1.0) < 1e-10
            w_in = np.linalg.eigvalsh(rho.m)
            w_out = np.linalg.eigvalsh(out.m)
            assert np.abs(w_in - w_out).max() < 1e-10

    def test_dimension_mismatch(self):
        rho = DensityMatrix.pure_level(1)
        with pytest.raises(ValueError, match="dimension"):
            evolve(rho, np.eye(6, dtype=complex))

    def test_non_unitary_rejected(self):
        rho = DensityMatrix.pure_level(1)
        with pytest.raises(InvariantViolation, match="unitary"):
            evolve(rho, 0.5 * np.eye(4, dtype=complex))


def coherence_state(i, j, value=0.5):
    m = np.zeros((4, 4), dtype=complex)
    m[i - 1, i - 1] = m[j - 1, j - 1] = 0.5
    m[i - 1, j - 1] = value
    m[j - 1, i - 1] = np.conjugate(value)
    return DensityMatrix(m)


class TestFreeEvolution:
    def test_zero_duration(self, register):
        rho = coherence_state(1, 2)
        out = free_evolution(rho, 0.0, NO_NOISE, register.levels)
        assert out is rho

    def test_nuclear_coherence_decay(self, register):
        noise = NoiseParams(t2_nuclear_us=100.0)
        rho = coherence_state(1, 2)
        out = free_evolution(rho, 30.0, noise, register.levels)
        assert abs(abs(out.m[0, 1]) / 0.5 - math.exp(-0.3)) < 1e-12

    def test_electron_coherence_decay(self, register):
        noise = NoiseParams(t2_electron_us=6.0, t2_nuclear_us=100.0)
        rho = coherence_state(1, 3)
        out = free_evolution(rho, 3.0, noise, register.levels)
        assert abs(abs(out.m[0, 2]) / 0.5 - math.exp(-0.5)) < 1e-12

    def test_populations_fixed_without_t1(self, register):
        rho = DensityMatrix.from_populations([0.4, 0.3, 0.2, 0.1])
        out = free_evolution(rho, 500.0, NoiseParams(t2_electron_us=1.0,
                                                     t2_nuclear_us=1.0),
                             register.levels)
        assert np.abs(out.populations() - rho.populations()).max() < 1e-12

    def test_t1_relaxes_toward_pair_mean(self, register):
        noise = NoiseParams(t1_electron_us=10.0, t2_electron_us=5.0)
        rho = DensityMatrix.from_populations([0.8, 0.0, 0.2, 0.0])
        out = free_evolution(rho, 10.0, noise, register.levels)
        diff = 0.6 * math.exp(-1.0)
        assert abs(out.population(1) - (0.5 + diff / 2)) < 1e-12
        assert abs(out.population(3) - (0.5 - diff / 2)) < 1e-12

    def test_semigroup(self, register):
        noise = NoiseParams(t1_electron_us=50.0, t2_electron_us=7.0, t2_nuclear_us=80.0)
        rho = DensityMatrix(random_mixed(np.random.default_rng(9)))
        one = free_evolution(rho, 11.3, noise, register.levels)
        two = free_evolution(free_evolution(rho, 4.1, noise, register.levels),
                             7.2, noise, register.levels)
        assert np.abs(one.m - two.m).max() < 1e-9

    def test_deterministic_phase_rate(self, register):
        rho = coherence_state(1, 2)
        t = 0.0173
        out = free_evolution(rho, t, NO_NOISE, register.levels)
        e1 = register.levels.level_energy(1)
        e2 = register.levels.level_energy(2)
        expected = 0.5 * np.exp(-2j * math.pi * (e1 - e2) * t)
        assert abs(out.m[0, 1] - expected) < 1e-12

    def test_detuning_shifts_phase(self, register):
        rho = coherence_state(1, 2)
        t, xi = 0.2, 1.7
        out = free_evolution(rho, t, NO_NOISE, register.levels, {"C": xi})
        base = free_evolution(rho, t, NO_NOISE, register.levels)
        # an offset raises the C frequency, i.e. speeds up the (1,2) phase
        ratio = out.m[0, 1] / base.m[0, 1]
        assert abs(ratio - np.exp(2j * math.pi * xi * t)) < 1e-12

    def test_negative_duration_rejected(self, register):
        with pytest.raises(ValueError):
            free_evolution(DensityMatrix.pure_level(1), -1.0, NO_NOISE, register.levels)


class TestNoisyPulse:
    def test_degenerate_ensemble_matches_unitary_path(self, register):
        rho = DensityMatrix(random_mixed(np.random.default_rng(12)))
        pulse = register.pi("A")
        a = apply_pulse_with_noise(rho, pulse, NO_NOISE, register.levels, register.table)
        b = evolve(rho, pulse_propagator(register.levels, register.table, pulse))
        assert np.abs(a.m - b.m).max() < 1e-12

    def test_transfer_monotone_in_linewidth(self, register):
        rho = DensityMatrix.pure_level(3)
        transfers = []
        for fwhm in (0.0, 5.0, 10.0, 20.0, 40.0):
            noise = NoiseParams(linewidth_a_mhz=fwhm, ensemble_size=21)
            out = apply_pulse_with_noise(rho, register.pi("A"), noise,
                                         register.levels, register.table)
            transfers.append(out.population(1))
        assert transfers[0] > 0.999999
        assert all(a > b for a, b in zip(transfers, transfers[1:]))
        assert transfers[-1] < 0.5

    def test_ensemble_average_matches_monte_carlo_oracle(self, register):
        # independent oracle: average the closed-form transfer over a dense
        # Gaussian sample instead of quadrature + matrix engine
        fwhm, omega = 7.7, 10.0
        noise = NoiseParams(linewidth_a_mhz=fwhm, ensemble_size=21)
        out = apply_pulse_with_noise(DensityMatrix.pure_level(3), register.pi("A"),
                                     noise, register.levels, register.table)
        rng = np.random.default_rng(123)
        delta = rng.normal(0.0, fwhm * FWHM_TO_SIGMA, size=400_000)
        omega_r2 = omega ** 2 + delta ** 2
        t_pi = 1.0 / (2.0 * omega)
        mc = np.mean(omega ** 2 / omega_r2 * np.sin(np.pi * np.sqrt(omega_r2) * t_pi) ** 2)
        assert abs(out.population(1) - mc) < 2e-3

    def test_spectator_untouched_by_noiseless_pi(self, register):
        m = np.zeros((4, 4), dtype=complex)
        m[0, 0], m[1, 1], m[2, 2], m[3, 3] = 0.3, 0.3, 0.2, 0.2
        m[3, 2] = m[2, 3] = 0.1  # coherence on the (3,4) pair
        rho = DensityMatrix(m)
        out = apply_pulse_with_noise(rho, register.pi("C"), NO_NOISE,
                                     register.levels, register.table)
        assert abs(out.population(3) - 0.2) < 1e-10
        assert abs(out.population(4) - 0.2) < 1e-10
        assert abs(abs(out.m[2, 3]) - 0.1) < 1e-10
        # the driven pair swaps
        assert abs(out.population(1) - 0.3) < 1e-10 and abs(out.population(2) - 0.3) < 1e-10

    def test_pi_conjugates_pair_coherence(self, register):
        rho = coherence_state(1, 2, value=0.2 + 0.4j)
        out = apply_pulse_with_noise(rho, register.pi("C"), NO_NOISE,
                                     register.levels, register.table)
        assert abs(out.m[0, 1] - (0.2 - 0.4j)) < 1e-10

    def test_damping_interleaved(self, register):
        # a pi pulse under strong pure dephasing on the driven line loses
        # transfer; Trotterized result must stay a valid state
        noise = NoiseParams(t2_nuclear_us=0.4)
        out = apply_pulse_with_noise(DensityMatrix.pure_level(1), register.pi("C"),
                                     noise, register.levels, register.table)
        out.check()
        assert out.population(2) < 0.95

    def test_trotter_convergence(self, register):
        noise = NoiseParams(t2_nuclear_us=2.0)
        pulse = register.pi("C")
        coarse = apply_pulse_with_noise(DensityMatrix.pure_level(1), pulse, noise,
                                        register.levels, register.table)
        import nvpulse.pulses as pmod
        old = pmod.TROTTER_FRACTION
        try:
            pmod.TROTTER_FRACTION = old / 8.0
            fine = apply_pulse_with_noise(DensityMatrix.pure_level(1), pulse, noise,
                                          register.levels, register.table)
        finally:
            pmod.TROTTER_FRACTION = old
        assert np.abs(coarse.m - fine.m).max() < 1e-5


class TestDetuningMembers:
    def test_weights_sum_to_one(self):
        noise = NoiseParams(linewidth_a_mhz=3.0, linewidth_c_mhz=0.5, ensemble_size=11)
        members = detuning_members(noise)
        assert abs(sum(w for w, _ in members) - 1.0) < 1e-12
        assert len(members) == 121

    def test_zero_linewidth_collapses(self):
        assert detuning_members(NO_NOISE) == [(1.0, {})]

    def test_deterministic(self):
        noise = NoiseParams(linewidth_a_mhz=3.0, ensemble_size=9)
        assert detuning_members(noise) == detuning_members(noise)


class TestRabiTrace:
    def test_noiseless_frequency(self, register):
        durations = np.linspace(0.0025, 0.3, 61)
        tr = rabi_trace(DensityMatrix.pure_level(3), "A", 10.0, durations,
                        NO_NOISE, register.levels, register.table)
        assert abs(tr.fitted_frequency_mhz - 10.0) / 10.0 < 1e-3
        assert tr.fit_residual < 1e-4

    def test_decay_matches_generator(self, register):
        # with T1 = T2 = tau the nutation envelope decays exactly with tau
        tau = 6.0
        noise = NoiseParams(t1_electron_us=tau, t2_electron_us=tau)
        durations = np.linspace(0.002, 2.0 * tau, 240)
        tr = rabi_trace(DensityMatrix.pure_level(3), "A", 2.0, durations,
                        noise, register.levels, register.table)
        assert abs(tr.fitted_decay_us - tau) / tau < 0.1

    def test_nuclear_populations_closed(self, register):
        durations = np.linspace(0.01, 0.6, 25)
        total_err = 0.0
        for t in durations:
            p = PulseSpec("rf", "C", 5.0, float(t))
            out = apply_pulse_with_noise(DensityMatrix.pure_level(1), p, NO_NOISE,
                                         register.levels, register.table)
            pops = out.populations()
            total_err = max(total_err, abs(pops.sum() - 1.0))
            assert pops[2] < 1e-12 and pops[3] < 1e-12
        assert total_err < 1e-9

    def test_too_few_samples(self, register):
        with pytest.raises(ValueError, match="8"):
            rabi_trace(DensityMatrix.pure_level(3), "A", 10.0, [0.0, 0.1, 0.2],
                       NO_NOISE, register.levels, register.table)

    def test_fit_helper_rejects_short_input(self):
        with pytest.raises(ValueError):
            fit_damped_cosine(np.arange(4), np.ones(4))
