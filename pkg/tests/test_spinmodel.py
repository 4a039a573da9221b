import numpy as np
import pytest

from nvpulse.spinmodel import (LabelingError, SpinSystemParams, build_hamiltonian,
                               calibrate_field, eigenlevels, spin_operators,
                               transition_table, TRANSITION_PAIRS)


def char_poly_coeffs(h):
    """Characteristic polynomial by Faddeev-LeVerrier (no eigensolver)."""
    n = h.shape[0]
    coeffs = [1.0 + 0j]
    m = np.zeros_like(h)
    for k in range(1, n + 1):
        m = h @ m + coeffs[-1] * np.eye(n)
        coeffs.append(-(h @ m).trace() / k)
    return np.array(coeffs)


class TestSpinOperators:
    @pytest.mark.parametrize("s", [0.5, 1.0])
    def test_commutators(self, s):
        sx, sy, sz = spin_operators(s)
        for a, b, c in ((sx, sy, sz), (sy, sz, sx), (sz, sx, sy)):
            assert np.abs(a @ b - b @ a - 1j * c).max() < 1e-12

    def test_sz_spectra(self):
        _, _, sz_half = spin_operators(0.5)
        assert np.allclose(np.diagonal(sz_half), [0.5, -0.5])
        _, _, sz_one = spin_operators(1.0)
        assert np.allclose(np.diagonal(sz_one), [1.0, 0.0, -1.0])

    def test_casimir_spin_one(self):
        sx, sy, sz = spin_operators(1.0)
        assert np.abs(sx @ sx + sy @ sy + sz @ sz - 2.0 * np.eye(3)).max() < 1e-12

    def test_rejects_other_spins(self):
        with pytest.raises(ValueError):
            spin_operators(1.5)


class TestParams:
    def test_rejects_asymmetric_tensor(self):
        d = np.diag([0.0, 0.0, 2870.0])
        d[0, 1] = 1.0
        with pytest.raises(ValueError, match="symmetric"):
            SpinSystemParams(D=d)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            SpinSystemParams(A=np.full((3, 3), np.nan))
        with pytest.raises(ValueError):
            SpinSystemParams(B=[0.0, 0.0, np.inf])

    def test_rejects_bad_magneton(self):
        with pytest.raises(ValueError):
            SpinSystemParams(beta_e=-1.0)

    def test_scalar_tensors_promote(self):
        p = SpinSystemParams(A=130.0)
        assert np.allclose(p.A, 130.0 * np.eye(3))


class TestHamiltonian:
    def test_hermitian_and_trace_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            d = rng.normal(size=(3, 3))
            d = (d + d.T) / 2
            a = rng.normal(size=(3, 3))
            a = (a + a.T) / 2
            p = SpinSystemParams(D=d, A=a, B=rng.normal(size=3))
            h = build_hamiltonian(p)
            assert np.abs(h - h.conj().T).max() < 1e-12
            # Zeeman and hyperfine terms are traceless; S D S contributes
            # Tr(S_k S_l) = 2 delta_kl per electron index, times dim_I = 2
            assert abs(h.trace() - 4.0 * np.trace(d)) < 1e-10 * max(1.0, abs(np.trace(d)))

    def test_hyperfine_sets_electron_branch_splitting(self):
        # calibrated field: splitting of levels 1-2 is close to the 130 MHz
        # hyperfine coupling (reduced a few MHz by the nuclear Zeeman shift)
        p = calibrate_field(SpinSystemParams(), 3.0)
        lv = eigenlevels(build_hamiltonian(p))
        split12 = abs(lv.level_energy(1) - lv.level_energy(2))
        assert abs(split12 - 130.0) < 4.0

    def test_zero_field_zero_hyperfine_degeneracies(self):
        p = SpinSystemParams(A=np.zeros((3, 3)), B=np.zeros(3))
        w = np.linalg.eigvalsh(build_hamiltonian(p))
        assert np.allclose(w[:2], 0.0, atol=1e-12)          # m_S = 0 pair
        assert np.allclose(w[2:], 2870.0, atol=1e-12)       # m_S = +-1 manifold

    def test_eigenvalues_satisfy_characteristic_polynomial(self):
        p = calibrate_field(SpinSystemParams(), 3.0)
        h = build_hamiltonian(p)
        w = np.linalg.eigvalsh(h)
        coeffs = char_poly_coeffs(h)
        scale = np.abs(coeffs).max() * max(1.0, np.abs(w).max()) ** 6
        for lam in w:
            assert abs(np.polyval(coeffs, lam)) < 1e-9 * scale

    def test_zeeman_scaling_is_linear(self):
        rng = np.random.default_rng(11)
        b = rng.normal(size=3)
        zero = np.zeros((3, 3))
        w1 = np.linalg.eigvalsh(build_hamiltonian(SpinSystemParams(D=zero, A=zero, B=b)))
        w3 = np.linalg.eigvalsh(build_hamiltonian(SpinSystemParams(D=zero, A=zero, B=3.0 * b)))
        assert np.allclose(w3, 3.0 * w1, rtol=1e-12, atol=1e-12)


class TestEigenlevels:
    def test_diagonal_hamiltonian(self):
        d = np.diag([5.0, 1.0, -2.0, 7.0, 3.0, 0.0]).astype(complex)
        lv = eigenlevels(d, branch=-1)
        assert np.allclose(lv.energies, sorted(np.diagonal(d).real))
        assert np.abs(lv.states.conj().T @ lv.states - np.eye(6)).max() < 1e-10

    def test_reconstruction(self):
        rng = np.random.default_rng(5)
        g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        h = (g + g.conj().T) / 2
        lv = eigenlevels(h, require_labels=False)
        rebuilt = lv.states @ np.diag(lv.energies) @ lv.states.conj().T
        assert np.abs(rebuilt - h).max() < 1e-9 * max(1.0, np.abs(h).max())

    def test_orthonormality(self, register):
        v = register.levels.states
        assert np.abs(v.conj().T @ v - np.eye(6)).max() < 1e-10

    def test_nuclear_zeeman_splitting_matches_target(self, register):
        assert abs(register.levels.nuclear_zeeman_splitting() - 3.0) < 0.03

    def test_anticrossing_fails_loudly(self):
        # at the level anticrossing the m_S=0 states mix ~50/50 with the
        # electron branch, so the dominant character drops below threshold
        p = SpinSystemParams()
        b_cross = (p.D[2, 2] - p.A[2, 2] / 2.0) / (p.g_e * p.beta_e)
        h = build_hamiltonian(SpinSystemParams(B=np.array([0.0, 0.0, -b_cross])))
        with pytest.raises(LabelingError):
            eigenlevels(h)

    def test_labels_cover_working_levels(self, register):
        assert sorted(register.levels.labels) == [1, 2, 3, 4]
        assert min(register.levels.weights[j] for j in register.levels.labels.values()) >= 0.6


class TestTransitionTable:
    def test_frequencies_and_channels(self, register):
        tab = register.table
        assert abs(tab["C"].frequency_mhz - 127.0) < 0.5
        assert {t.name: t.channel for t in tab} == {"A": "mw", "B": "mw", "C": "rf", "D": "rf"}
        assert all(t.frequency_mhz > 0 for t in tab)
        assert tab["A"].levels == (1, 3) and tab["C"].levels == (1, 2)

    def test_nuclear_line_degenerates_at_tiny_field(self):
        p = SpinSystemParams(B=np.array([0.0, 0.0, -1e-4]))
        lv = eigenlevels(build_hamiltonian(p))
        tab = transition_table(lv)
        assert tab["D"].frequency_mhz < 1e-4

    def test_cycle_closure_identity(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            p = SpinSystemParams(
                D=np.diag([0.0, 0.0, rng.uniform(2000, 4000)]),
                A=rng.uniform(80, 180) * np.eye(3),
                B=np.array([0.0, 0.0, -rng.uniform(5, 80)]),
            )
            tab = transition_table(eigenlevels(build_hamiltonian(p)))
            lhs = tab.signed_gap("A") - tab.signed_gap("B")
            rhs = tab.signed_gap("C") - tab.signed_gap("D")
            assert abs(lhs - rhs) < 1e-9

    def test_missing_labels_rejected(self, register):
        lv = register.levels
        broken = type(lv)(lv.energies, lv.states, {1: 0, 2: 1, 3: 2},
                          lv.characters, lv.weights, lv.branch)
        with pytest.raises(LabelingError):
            transition_table(broken)


class TestCalibration:
    def test_calibrated_splitting_hits_target(self):
        for target in (2.0, 3.0, 6.0, 10.0):
            p = calibrate_field(SpinSystemParams(), target)
            lv = eigenlevels(build_hamiltonian(p))
            assert abs(lv.nuclear_zeeman_splitting() - target) < 1e-6

    def test_branch_mirror(self):
        p_minus = calibrate_field(SpinSystemParams(), 3.0, branch=-1)
        p_plus = calibrate_field(SpinSystemParams(), 3.0, branch=1)
        assert p_minus.B[2] < 0 < p_plus.B[2]
        t_minus = transition_table(eigenlevels(build_hamiltonian(p_minus), branch=-1))
        t_plus = transition_table(eigenlevels(build_hamiltonian(p_plus), branch=1))
        assert abs(t_minus["C"].frequency_mhz - t_plus["C"].frequency_mhz) < 1e-6

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            calibrate_field(SpinSystemParams(), -1.0)
