import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contextkey import qmath
from contextkey.mapping import PAULI, PartyIndexing, lift_matrix, pauli
from conftest import ghz_state, singlet_state


def lifted_pauli_op(axis, party, num_parties):
    return qmath.HermitianOperator(lift_matrix(PAULI[axis], party, PartyIndexing(num_parties)))


class TestStateTypes:
    def test_state_vector_normalization_enforced(self):
        with pytest.raises(qmath.InvariantViolation):
            qmath.StateVector(np.array([1.0, 1.0]))

    def test_density_operator_invariants(self):
        with pytest.raises(qmath.InvariantViolation):
            qmath.DensityOperator(np.array([[0.5, 0.5], [0.0, 0.5]]))  # not Hermitian
        with pytest.raises(qmath.InvariantViolation):
            qmath.DensityOperator(np.diag([0.7, 0.7]))  # trace 1.4
        with pytest.raises(qmath.InvariantViolation):
            qmath.DensityOperator(np.diag([1.5, -0.5]))  # negative eigenvalue

    def test_unitary_invariant(self):
        with pytest.raises(qmath.InvariantViolation):
            qmath.UnitaryOperator(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_dichotomic_projector_invariants(self):
        eye = np.eye(2)
        with pytest.raises(qmath.InvariantViolation):
            qmath.DichotomicObservable(eye, eye)  # no resolution of identity
        obs = qmath.DichotomicObservable.from_involution(PAULI["Z"], label="Z")
        assert np.allclose(obs.operator().matrix, PAULI["Z"])
        with pytest.raises(qmath.InvariantViolation):
            qmath.DichotomicObservable.from_involution(np.diag([1.0, 2.0]))


class TestMeasureProjective:
    def test_eigenstate_is_deterministic(self):
        state = qmath.StateVector.basis(4, 0)
        obs = pauli("Z", 1, PartyIndexing(2))
        for seed in range(5):
            outcome, post = qmath.measure_projective(state, obs, np.random.default_rng(seed))
            assert outcome == +1
            assert np.allclose(post.amplitudes, state.amplitudes)

    def test_singlet_z_branches(self):
        state = singlet_state()
        obs = pauli("Z", 1, PartyIndexing(2))
        p_plus, p_minus = qmath.branch_probabilities(state, obs)
        assert p_plus == pytest.approx(0.5, abs=1e-12)
        assert p_minus == pytest.approx(0.5, abs=1e-12)
        # post states are |1⟩ and −|2⟩ up to a global phase
        plus_branch = obs.plus_projector @ state.amplitudes / math.sqrt(p_plus)
        minus_branch = obs.minus_projector @ state.amplitudes / math.sqrt(p_minus)
        assert abs(abs(plus_branch[1]) - 1.0) < 1e-12
        assert abs(abs(minus_branch[2]) - 1.0) < 1e-12

    def test_ghz_z_chain_conditioning(self):
        # After the first Z outcome, later Z measurements are deterministic.
        indexing = PartyIndexing(3)
        rng = np.random.default_rng(7)
        for _ in range(20):
            state = ghz_state(3)
            first, state = qmath.measure_projective(state, pauli("Z", 1, indexing), rng)
            for party in (2, 3):
                outcome, state = qmath.measure_projective(state, pauli("Z", party, indexing), rng)
                assert outcome == first

    def test_dimension_mismatch(self):
        with pytest.raises(qmath.DimensionMismatch):
            qmath.measure_projective(
                qmath.StateVector.basis(8, 0), pauli("Z", 1, PartyIndexing(2)), np.random.default_rng(0)
            )

    def test_vanishing_branches_rejected(self):
        with pytest.raises(qmath.InvariantViolation):
            qmath._sample_branch(1e-13, 1e-13, np.random.default_rng(0))

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_post_state_is_eigenvector(self, seed):
        rng = np.random.default_rng(seed)
        amps = rng.normal(size=8) + 1j * rng.normal(size=8)
        state = qmath.StateVector(amps / np.linalg.norm(amps))
        axis = "XYZ"[seed % 3]
        party = 1 + seed % 3
        obs = pauli(axis, party, PartyIndexing(3))
        p_plus, p_minus = qmath.branch_probabilities(state, obs)
        assert p_plus + p_minus == pytest.approx(1.0, abs=1e-10)
        outcome, post = qmath.measure_projective(state, obs, rng)
        op = obs.operator().matrix
        assert np.max(np.abs(op @ post.amplitudes - outcome * post.amplitudes)) < 1e-10


class TestMeasureDensity:
    def test_pure_eigenstate(self):
        rho = qmath.StateVector.basis(4, 0).density()
        obs = pauli("Z", 1, PartyIndexing(2))
        outcome, post = qmath.measure_density(rho, obs, np.random.default_rng(0))
        assert outcome == +1
        assert np.allclose(post.matrix, rho.matrix)

    def test_maximally_mixed_is_unbiased(self):
        rho = qmath.DensityOperator(np.eye(4) / 4)
        obs = pauli("X", 2, PartyIndexing(2))
        p_plus, p_minus = qmath.branch_probabilities(rho, obs)
        assert p_plus == pytest.approx(0.5, abs=1e-12)
        assert p_minus == pytest.approx(0.5, abs=1e-12)

    def test_flip_noise_state_branch_weights(self):
        # (1−ε)|0⟩⟨0| + ε|7⟩⟨7| read by Z1 gives +1 with probability 1−ε.
        eps = 0.1
        rho = np.zeros((8, 8), dtype=complex)
        rho[0, 0], rho[7, 7] = 1 - eps, eps
        p_plus, p_minus = qmath.branch_probabilities(
            qmath.DensityOperator(rho), pauli("Z", 1, PartyIndexing(3))
        )
        assert p_plus == pytest.approx(0.9, abs=1e-12)
        assert p_minus == pytest.approx(0.1, abs=1e-12)

    def test_matches_projective_on_pure_states(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            amps = rng.normal(size=8) + 1j * rng.normal(size=8)
            state = qmath.StateVector(amps / np.linalg.norm(amps))
            obs = pauli("XYZ"[int(rng.integers(3))], int(rng.integers(1, 4)), PartyIndexing(3))
            pure = qmath.branch_probabilities(state, obs)
            mixed = qmath.branch_probabilities(state.density(), obs)
            assert pure[0] == pytest.approx(mixed[0], abs=1e-12)
            assert pure[1] == pytest.approx(mixed[1], abs=1e-12)


class TestExpectation:
    def test_singlet_xx(self):
        op = lifted_pauli_op("X", 1, 2).matrix @ lifted_pauli_op("X", 2, 2).matrix
        value = qmath.expectation(singlet_state(), qmath.HermitianOperator(op))
        assert value == pytest.approx(-1.0, abs=1e-12)

    def test_basis_state_z(self):
        assert qmath.expectation(qmath.StateVector.basis(4, 0), lifted_pauli_op("Z", 1, 2)) == pytest.approx(1.0)

    def test_ghz_zz(self):
        op = lifted_pauli_op("Z", 1, 3).matrix @ lifted_pauli_op("Z", 2, 3).matrix
        assert qmath.expectation(ghz_state(3), qmath.HermitianOperator(op)) == pytest.approx(1.0, abs=1e-12)

    def test_imaginary_residue_rejected(self):
        # A blatantly non-Hermitian matrix sneaks past the wrapper when raw.
        raw = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        state = qmath.StateVector(np.array([1.0, 1j]) / math.sqrt(2))
        with pytest.raises(qmath.InvariantViolation):
            qmath.expectation(state, raw)


class TestUnitaryFromGenerator:
    def test_empty_sum_is_identity(self):
        u = qmath.unitary_from_generator([], dim=4)
        assert np.allclose(u.matrix, np.eye(4))
        with pytest.raises(ValueError):
            qmath.unitary_from_generator([])

    def test_pi_times_projector(self):
        obs = pauli("Z", 1, PartyIndexing(2))
        proj = qmath.HermitianOperator(obs.plus_projector)
        u = qmath.unitary_from_generator([(math.pi, proj)])
        assert np.max(np.abs(u.matrix - (np.eye(4) - 2 * obs.plus_projector))) < 1e-10

    def test_single_pauli_generator_matches_tensor_exponential(self):
        theta = math.pi / 4
        u = qmath.unitary_from_generator([(theta, lifted_pauli_op("X", 1, 2))])
        local = math.cos(theta) * np.eye(2) + 1j * math.sin(theta) * PAULI["X"]
        assert np.max(np.abs(u.matrix - np.kron(local, np.eye(2)))) < 1e-10

    def test_randomized_unitarity(self):
        rng = np.random.default_rng(5)
        gens = [lifted_pauli_op(a, p, 2) for a in "XYZ" for p in (1, 2)]
        for _ in range(200):
            coeffs = rng.uniform(0, 2 * math.pi, size=len(gens))
            u = qmath.unitary_from_generator(list(zip(coeffs, gens)))
            assert np.max(np.abs(u.matrix.conj().T @ u.matrix - np.eye(4))) < 1e-10


class TestPlumbing:
    def test_commutator_norms(self):
        assert qmath.commutator_norm(lifted_pauli_op("X", 1, 2), lifted_pauli_op("X", 2, 2)) < 1e-12
        assert qmath.commutator_norm(lifted_pauli_op("X", 2, 2), lifted_pauli_op("Z", 2, 2)) == pytest.approx(2.0)

    def test_tensor_matches_lift(self):
        lifted = lift_matrix(PAULI["X"], 2, PartyIndexing(2))
        assert np.allclose(qmath.tensor(np.eye(2), PAULI["X"]), lifted)

    def test_tensor_states(self):
        left = qmath.StateVector.basis(2, 1)
        right = qmath.StateVector(np.array([1.0, 1.0]) / math.sqrt(2))
        combined = qmath.tensor(left, right)
        assert combined.dim == 4
        assert np.allclose(combined.amplitudes, [0, 0, 1 / math.sqrt(2), 1 / math.sqrt(2)])

    def test_dagger(self):
        mat = np.array([[0.0, 1j], [0.0, 0.0]])
        assert np.allclose(qmath.dagger(mat), mat.conj().T)

    def test_apply_unitary_on_density(self):
        u = qmath.unitary_from_generator([(0.3, lifted_pauli_op("Y", 1, 2))])
        rho = singlet_state().density()
        rotated = qmath.apply_unitary(rho, u)
        assert np.trace(rotated.matrix) == pytest.approx(1.0, abs=1e-12)

    def test_spectral_round_trip(self):
        rng = np.random.default_rng(11)
        raw = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        op = qmath.HermitianOperator((raw + raw.conj().T) / 2)
        rebuilt = sum(lam * np.outer(v, v.conj()) for lam, v in qmath.spectral_decomposition(op))
        assert np.max(np.abs(rebuilt - op.matrix)) < 1e-10
