import numpy as np
import pytest

from qdpair import quantum as q

from conftest import random_density_matrix, random_max_entangled, random_unitary_2

BELL = q.pure_state_density_matrix(q.PHI_PLUS)
MIXED = np.eye(4) / 4.0


class TestValidation:
    def test_maximally_mixed_accepted(self):
        assert q.validate_density_matrix(MIXED) is not None

    def test_bell_projector_accepted(self):
        q.validate_density_matrix(BELL)

    def test_negative_eigenvalue_rejected(self):
        bad = np.diag([0.5, 0.5, 0.5, -0.5])
        with pytest.raises(q.InvalidStateError, match="PSD"):
            q.validate_density_matrix(bad)

    def test_non_hermitian_rejected(self):
        bad = MIXED.astype(complex).copy()
        bad[0, 1] = 0.1
        with pytest.raises(q.InvalidStateError, match="Hermitian"):
            q.validate_density_matrix(bad)

    def test_wrong_trace_rejected(self):
        with pytest.raises(q.InvalidStateError, match="trace"):
            q.validate_density_matrix(np.eye(4) / 2.0)

    def test_unnormalized_pure_state_rejected(self):
        with pytest.raises(q.InvalidStateError, match="normalized"):
            q.validate_pure_state([1.0, 1.0, 0.0, 0.0])


class TestFullyEntangledFraction:
    def test_bell_state(self):
        assert q.fully_entangled_fraction(BELL) == pytest.approx(1.0, abs=1e-12)

    def test_maximally_mixed(self):
        assert q.fully_entangled_fraction(MIXED) == pytest.approx(0.25, abs=1e-12)

    def test_product_state(self):
        hh = np.zeros(4, dtype=complex)
        hh[0] = 1.0
        rho = q.pure_state_density_matrix(hh)
        assert q.fully_entangled_fraction(rho) == pytest.approx(0.5, abs=1e-9)

    def test_dominates_fixed_bell_fidelities(self, rng):
        for _ in range(5):
            rho = random_density_matrix(rng)
            fef = q.fully_entangled_fraction(rho)
            for _ in range(1000):
                phi = random_max_entangled(rng)
                assert fef >= q.fidelity_to_state(rho, phi) - 1e-10

    def test_local_unitary_invariance(self, rng):
        for _ in range(20):
            rho = random_density_matrix(rng)
            u = np.kron(random_unitary_2(rng), random_unitary_2(rng))
            rotated = u @ rho @ u.conj().T
            assert q.fully_entangled_fraction(rotated) == pytest.approx(
                q.fully_entangled_fraction(rho), abs=1e-9
            )

    def test_agrees_with_bruteforce_on_random_states(self, rng):
        for _ in range(10):
            rho = random_density_matrix(rng)
            fast = q.fully_entangled_fraction(rho)
            slow = q.fef_bruteforce_oracle(rho, grid_resolution=8)
            assert fast == pytest.approx(slow, abs=1e-4)


class TestBruteforceOracle:
    def test_bell_state(self):
        rho = q.pure_state_density_matrix(q.PHI_MINUS)
        assert q.fef_bruteforce_oracle(rho) == pytest.approx(1.0, abs=1e-6)

    def test_maximally_mixed(self):
        assert q.fef_bruteforce_oracle(MIXED) == pytest.approx(0.25, abs=1e-9)

    def test_werner_state(self):
        p = 0.9333
        rho = p * BELL + (1 - p) * MIXED
        assert q.fef_bruteforce_oracle(rho) == pytest.approx((1 + 3 * p) / 4, abs=1e-4)

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            q.fef_bruteforce_oracle(MIXED, grid_resolution=4)


class TestConcurrence:
    def test_bell_state(self):
        assert q.concurrence(BELL) == pytest.approx(1.0, abs=1e-9)

    def test_maximally_mixed(self):
        assert q.concurrence(MIXED) == pytest.approx(0.0, abs=1e-9)

    def test_werner_state(self):
        p = 0.9333
        rho = p * BELL + (1 - p) * MIXED
        assert q.concurrence(rho) == pytest.approx((3 * p - 1) / 2, abs=1e-3)

    def test_schmidt_coefficient_law(self, rng):
        # C = 2ab for |psi> = a|00> + b|11>, in any local frame
        for _ in range(20):
            a = rng.uniform(0.05, 0.95)
            b = np.sqrt(1 - a * a)
            psi = np.array([a, 0, 0, b], dtype=complex)
            u = np.kron(random_unitary_2(rng), random_unitary_2(rng))
            rho = q.pure_state_density_matrix(u @ psi)
            assert q.concurrence(rho) == pytest.approx(2 * a * b, abs=1e-9)


class TestFidelityAndPurity:
    def test_self_fidelity(self):
        assert q.fidelity_to_state(BELL, q.PHI_PLUS) == pytest.approx(1.0, abs=1e-12)

    def test_mixed_fidelity(self):
        assert q.fidelity_to_state(MIXED, q.PSI_MINUS) == pytest.approx(0.25, abs=1e-12)

    def test_orthogonal_bell_states(self):
        assert q.fidelity_to_state(BELL, q.PSI_PLUS) == pytest.approx(0.0, abs=1e-12)

    def test_metric_ranges(self, rng):
        for _ in range(25):
            report = q.metric_report(random_density_matrix(rng))
            assert 0.25 <= report.fef <= 1.0 + 1e-12
            assert 0.0 <= report.concurrence <= 1.0 + 1e-12
            assert 0.25 <= report.purity <= 1.0 + 1e-12
            assert 0.0 <= report.fidelity_to_target <= 1.0 + 1e-12


class TestSerialization:
    def test_round_trip(self, rng):
        rho = random_density_matrix(rng)
        text = q.density_matrix_to_json(rho, source="test")
        back = q.density_matrix_from_json(text)
        assert np.allclose(back, rho, atol=1e-15)

    def test_metadata_block(self):
        payload = q.density_matrix_to_dict(MIXED, source="unit", provenance=("a", "b"))
        assert payload["basis"] == ["HH", "HV", "VH", "VV"]
        assert payload["metadata"]["source"] == "unit"
        assert payload["metadata"]["timestamp"] is None

    def test_rejects_unknown_basis(self):
        payload = q.density_matrix_to_dict(MIXED)
        payload["basis"] = ["VV", "VH", "HV", "HH"]
        with pytest.raises(q.InvalidStateError):
            q.density_matrix_from_dict(payload)
