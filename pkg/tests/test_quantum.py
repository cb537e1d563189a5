import math

import numpy as np
import pytest

from ghzkit import quantum

SQ2 = math.sqrt(2.0)


def pauli_tensor(*ops):
    out = np.array([[1.0]], dtype=complex)
    for o in ops:
        out = np.kron(out, o)
    return out


SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)


class TestGhzState:
    def test_minus_half_pi_matches_definition(self):
        ket = quantum.ghz_state(-math.pi / 2)
        expected = np.zeros(8, dtype=complex)
        expected[0] = 1 / SQ2
        expected[7] = -1j / SQ2
        assert np.allclose(ket, expected, atol=1e-15)

    def test_zero_phase_amplitudes(self):
        ket = quantum.ghz_state(0.0)
        assert np.allclose(ket, [1 / SQ2, 0, 0, 0, 0, 0, 0, 1 / SQ2])

    def test_pi_orthogonal_to_zero(self):
        inner = np.vdot(quantum.ghz_state(0.0), quantum.ghz_state(math.pi))
        assert abs(inner) < 1e-15

    def test_normalized(self):
        for phase in np.linspace(-np.pi, np.pi, 7):
            quantum.check_ket(quantum.ghz_state(phase))

    def test_rejects_non_finite_phase(self):
        with pytest.raises(ValueError):
            quantum.ghz_state(float("nan"))


class TestProjector:
    def test_computational_basis(self):
        p = quantum.projector((quantum.HV,) * 3, (+1, +1, +1))
        assert np.allclose(p, np.diag([1, 0, 0, 0, 0, 0, 0, 0]))

    def test_single_qubit_right_circular_factor(self):
        k = quantum.RL.plus_ket()
        factor = np.outer(k, k.conj())
        assert np.allclose(factor, 0.5 * np.array([[1, -1j], [1j, 1]]))

    def test_idempotent_for_random_settings(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            settings = tuple(
                quantum.Setting(theta=math.acos(rng.uniform(-1, 1)),
                                phi=rng.uniform(0, 2 * math.pi))
                for _ in range(3))
            outcomes = tuple(rng.choice([-1, 1]) for _ in range(3))
            p = quantum.projector(settings, outcomes)
            assert np.allclose(p @ p, p, atol=1e-12)
            assert np.allclose(p, p.conj().T, atol=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        settings = (quantum.RL, quantum.DA, quantum.equatorial(0.3))
        probs = quantum.outcome_probabilities(rho, settings)
        assert abs(probs.sum() - 1.0) < 1e-10
        assert np.all(probs > -1e-12)


class TestCorrelation:
    def test_rl_rl_rl_matches_pauli_oracle(self):
        rho = quantum.ket_density(quantum.ghz_state(-math.pi / 2))
        oracle = np.trace(rho @ pauli_tensor(SY, SY, SY)).real
        value = quantum.correlation(rho, (quantum.RL,) * 3)
        assert oracle == pytest.approx(1.0, abs=1e-12)
        assert value == pytest.approx(oracle, abs=1e-12)

    def test_rl_da_da_matches_pauli_oracle(self):
        rho = quantum.ket_density(quantum.ghz_state(-math.pi / 2))
        oracle = np.trace(rho @ pauli_tensor(SY, SX, SX)).real
        value = quantum.correlation(rho, (quantum.RL, quantum.DA, quantum.DA))
        assert oracle == pytest.approx(-1.0, abs=1e-12)
        assert value == pytest.approx(oracle, abs=1e-12)

    def test_maximally_mixed_gives_zero(self):
        rho = quantum.maximally_mixed()
        for settings in ((quantum.RL,) * 3, (quantum.DA,) * 3,
                         (quantum.RL, quantum.DA, quantum.RL)):
            assert quantum.correlation(rho, settings) == pytest.approx(0.0, abs=1e-12)

    def test_matches_projector_sum(self):
        # correlation() collapses the projector sum into one operator; this
        # pins the two evaluations together on random mixed states
        rng = np.random.default_rng(7)
        signs = np.array([1, -1, -1, 1, -1, 1, 1, -1], dtype=float)
        for _ in range(10):
            a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
            rho = a @ a.conj().T
            rho /= np.trace(rho)
            settings = tuple(quantum.equatorial(rng.uniform(0, 2 * np.pi))
                             for _ in range(3))
            probs = quantum.outcome_probabilities(rho, settings)
            assert quantum.correlation(rho, settings) == pytest.approx(
                float(signs @ probs), abs=1e-10)


class TestEquatorialLaw:
    def test_cosine_law_on_grid_against_projector_oracle(self):
        # E(t1,t2,t3; phase) = cos(t1+t2+t3-phase), verified on a 5^3 angle
        # grid for 4 phases against the explicit projector sum
        signs = np.array([1, -1, -1, 1, -1, 1, 1, -1], dtype=float)
        angles = np.linspace(0.0, 2 * np.pi, 5, endpoint=False)
        for phase in (-np.pi / 2, 0.0, np.pi / 2, np.pi):
            rho = quantum.ket_density(quantum.ghz_state(phase))
            for t1 in angles:
                for t2 in angles:
                    for t3 in angles:
                        settings = tuple(quantum.equatorial(t)
                                         for t in (t1, t2, t3))
                        probs = quantum.outcome_probabilities(rho, settings)
                        oracle = float(signs @ probs)
                        law = quantum.equatorial_correlation(phase, (t1, t2, t3))
                        assert abs(oracle - law) < 1e-10
                        assert abs(quantum.correlation(rho, settings) - law) < 1e-10


class TestMermin:
    def test_ghz_reaches_four(self):
        rho = quantum.ket_density(quantum.ghz_state(-math.pi / 2))
        m = quantum.mermin_parameter(rho, quantum.STANDARD_PAIRS)
        assert m == pytest.approx(4.0, abs=1e-10)

    def test_maximally_mixed_gives_zero(self):
        m = quantum.mermin_parameter(quantum.maximally_mixed(),
                                     quantum.STANDARD_PAIRS)
        assert m == pytest.approx(0.0, abs=1e-12)

    def test_werner_half_by_linearity_oracle(self):
        ket = quantum.ghz_state(-math.pi / 2)
        rho = quantum.werner_state(ket, 0.5)
        # oracle: combine the four correlations of the mixture directly
        (a, ap), (b, bp), (c, cp) = quantum.STANDARD_PAIRS
        oracle = abs(quantum.correlation(rho, (a, b, c))
                     - quantum.correlation(rho, (a, bp, cp))
                     - quantum.correlation(rho, (ap, b, cp))
                     - quantum.correlation(rho, (ap, bp, c)))
        m = quantum.mermin_parameter(rho, quantum.STANDARD_PAIRS)
        assert m == pytest.approx(oracle, abs=1e-12)
        assert m == pytest.approx(2.0, abs=1e-10)

    @pytest.mark.parametrize("visibility", [0.0, 0.25, 0.5, 0.75, 1.0])
    def test_werner_scaling(self, visibility):
        rho = quantum.werner_state(quantum.ghz_state(-math.pi / 2), visibility)
        m = quantum.mermin_parameter(rho, quantum.STANDARD_PAIRS)
        assert m == pytest.approx(4.0 * visibility, abs=1e-10)

    def test_global_phase_invariance(self):
        ket = quantum.ghz_state(-math.pi / 2)
        rot = np.exp(0.7j) * ket
        m1 = quantum.mermin_parameter(quantum.ket_density(ket),
                                      quantum.STANDARD_PAIRS)
        m2 = quantum.mermin_parameter(quantum.ket_density(rot),
                                      quantum.STANDARD_PAIRS)
        assert m1 == pytest.approx(m2, abs=1e-12)

    def test_prime_form_swaps_roles(self):
        rho = quantum.ket_density(quantum.ghz_state(0.0))
        swapped = ((quantum.DA, quantum.RL),) * 3
        assert quantum.mermin_parameter(rho, quantum.STANDARD_PAIRS, "M_prime") \
            == pytest.approx(quantum.mermin_parameter(rho, swapped, "M"), abs=1e-12)


class TestFidelity:
    def test_pure_state_with_itself(self):
        ket = quantum.ghz_state(math.pi)
        assert quantum.fidelity(quantum.ket_density(ket), ket) == pytest.approx(1.0)

    def test_maximally_mixed_gives_eighth(self):
        assert quantum.fidelity(quantum.maximally_mixed(),
                                quantum.ghz_state(0.3)) == pytest.approx(0.125)

    def test_werner_linearity(self):
        ket = quantum.ghz_state(math.pi)
        rho = quantum.werner_state(ket, 0.8)
        assert quantum.fidelity(rho, ket) == pytest.approx(0.8 + 0.2 * 0.125,
                                                           abs=1e-12)


class TestValidation:
    def test_check_ket_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            quantum.check_ket(np.ones(8, dtype=complex))

    def test_check_density_rejects_nonhermitian(self):
        bad = np.eye(8, dtype=complex) / 8
        bad[0, 1] = 0.5
        with pytest.raises(ValueError):
            quantum.check_density(bad)

    def test_check_density_accepts_werner(self):
        rho = quantum.werner_state(quantum.ghz_state(1.0), 0.7)
        quantum.check_density(rho)

    def test_werner_rejects_bad_visibility(self):
        with pytest.raises(ValueError):
            quantum.werner_state(quantum.ghz_state(0.0), 1.2)
