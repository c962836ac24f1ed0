"""Exact dense complex linear algebra and measurement primitives.

Everything here works on small Hilbert spaces (dimension <= 4096) with
plain numpy arrays wrapped in thin validating dataclasses.  All values are
immutable after construction; the only stateful argument anywhere is the
random generator consumed by the sampling routines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ATOL = 1e-10

# Branches with probability below this are never sampled (avoids
# renormalizing a null vector).
PROB_FLOOR = 1e-12


class DimensionMismatch(ValueError):
    """Operands live on Hilbert spaces of different dimensions."""


class InvariantViolation(ValueError):
    """A constructed object fails its defining numerical invariant."""


def _as_complex_matrix(matrix, dim: int | None = None) -> np.ndarray:
    mat = np.array(matrix, dtype=np.complex128)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvariantViolation(f"expected a square matrix, got shape {mat.shape}")
    if dim is not None and mat.shape[0] != dim:
        raise DimensionMismatch(f"matrix is {mat.shape[0]}-dimensional, expected {dim}")
    mat.setflags(write=False)
    return mat


def _check_dims(*dims: int) -> int:
    if len(set(dims)) != 1:
        raise DimensionMismatch(f"dimension mismatch: {dims}")
    return dims[0]


@dataclass(frozen=True)
class StateVector:
    """Normalized pure state on a D-dimensional space."""

    amplitudes: np.ndarray
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > self.atol:
            raise InvariantViolation(f"state norm {norm} is not 1 within {self.atol}")

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @staticmethod
    def basis(dim: int, index: int) -> "StateVector":
        amps = np.zeros(dim, dtype=np.complex128)
        amps[index] = 1.0
        return StateVector(amps)

    def density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, unit-trace, positive-semidefinite operator."""

    matrix: np.ndarray
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        object.__setattr__(self, "matrix", mat)
        if np.max(np.abs(mat - mat.conj().T)) > self.atol:
            raise InvariantViolation("density matrix is not Hermitian")
        trace = np.trace(mat)
        if abs(trace - 1.0) > self.atol:
            raise InvariantViolation(f"density matrix trace {trace} is not 1")
        eigvals = np.linalg.eigvalsh(mat)
        if eigvals.min() < -self.atol:
            raise InvariantViolation(f"density matrix has negative eigenvalue {eigvals.min()}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class HermitianOperator:
    """Generic observable: a matrix equal to its conjugate transpose."""

    matrix: np.ndarray
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        object.__setattr__(self, "matrix", mat)
        if np.max(np.abs(mat - mat.conj().T)) > self.atol:
            raise InvariantViolation("operator is not Hermitian")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class UnitaryOperator:
    """Operator with U†U = identity."""

    matrix: np.ndarray
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        mat = _as_complex_matrix(self.matrix)
        object.__setattr__(self, "matrix", mat)
        residue = np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])))
        if residue > self.atol:
            raise InvariantViolation(f"U†U deviates from identity by {residue}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DichotomicObservable:
    """±1-valued observable stored as its two eigenprojectors.

    The reconstructed operator P₊ − P₋ squares to the identity, which is
    what makes the two-outcome Born sampling below exact.
    """

    plus_projector: np.ndarray
    minus_projector: np.ndarray
    label: str = ""
    atol: float = DEFAULT_ATOL

    def __post_init__(self):
        plus = _as_complex_matrix(self.plus_projector)
        minus = _as_complex_matrix(self.minus_projector, plus.shape[0])
        object.__setattr__(self, "plus_projector", plus)
        object.__setattr__(self, "minus_projector", minus)
        eye = np.eye(plus.shape[0])
        for name, proj in (("plus", plus), ("minus", minus)):
            if np.max(np.abs(proj - proj.conj().T)) > self.atol:
                raise InvariantViolation(f"{name} projector is not Hermitian")
            if np.max(np.abs(proj @ proj - proj)) > self.atol:
                raise InvariantViolation(f"{name} projector is not idempotent")
        if np.max(np.abs(plus + minus - eye)) > self.atol:
            raise InvariantViolation("projectors do not resolve the identity")
        if np.max(np.abs(plus @ minus)) > self.atol:
            raise InvariantViolation("projectors are not orthogonal")

    @property
    def dim(self) -> int:
        return self.plus_projector.shape[0]

    def projector(self, outcome: int) -> np.ndarray:
        return self.plus_projector if outcome > 0 else self.minus_projector

    def operator(self) -> HermitianOperator:
        return HermitianOperator(self.plus_projector - self.minus_projector)

    @staticmethod
    def from_involution(matrix, label: str = "") -> "DichotomicObservable":
        """Build from a Hermitian matrix M with M² = identity."""
        mat = _as_complex_matrix(matrix)
        eye = np.eye(mat.shape[0])
        if np.max(np.abs(mat @ mat - eye)) > DEFAULT_ATOL:
            raise InvariantViolation("matrix does not square to the identity")
        return DichotomicObservable((eye + mat) / 2, (eye - mat) / 2, label=label)


def measure_projective(
    state: StateVector, obs: DichotomicObservable, rng: np.random.Generator
) -> tuple[int, StateVector]:
    """Born-rule sample a dichotomic observable on a pure state.

    Returns the ±1 outcome and the renormalized post-measurement state
    (global phase left as the projection produces it).
    """
    _check_dims(state.dim, obs.dim)
    branch_plus = obs.plus_projector @ state.amplitudes
    branch_minus = obs.minus_projector @ state.amplitudes
    p_plus = float(np.real(np.vdot(state.amplitudes, branch_plus)))
    p_minus = float(np.real(np.vdot(state.amplitudes, branch_minus)))
    if abs(p_plus + p_minus - 1.0) > 1e-10:
        raise InvariantViolation(f"branch probabilities sum to {p_plus + p_minus}")
    outcome = _sample_branch(p_plus, p_minus, rng)
    branch = branch_plus if outcome > 0 else branch_minus
    prob = p_plus if outcome > 0 else p_minus
    return outcome, StateVector(branch / np.sqrt(prob))


def measure_density(
    rho: DensityOperator, obs: DichotomicObservable, rng: np.random.Generator
) -> tuple[int, DensityOperator]:
    """Born-rule sample on a mixed state with the projective state update."""
    _check_dims(rho.dim, obs.dim)
    p_plus = float(np.real(np.trace(obs.plus_projector @ rho.matrix)))
    p_minus = float(np.real(np.trace(obs.minus_projector @ rho.matrix)))
    if abs(p_plus + p_minus - 1.0) > 1e-10:
        raise InvariantViolation(f"branch probabilities sum to {p_plus + p_minus}")
    outcome = _sample_branch(p_plus, p_minus, rng)
    proj = obs.projector(outcome)
    prob = p_plus if outcome > 0 else p_minus
    post = proj @ rho.matrix @ proj / prob
    return outcome, DensityOperator(post)


def _sample_branch(p_plus: float, p_minus: float, rng: np.random.Generator) -> int:
    if p_plus < PROB_FLOOR and p_minus < PROB_FLOOR:
        raise InvariantViolation("both branch probabilities vanish; state is corrupted")
    if p_plus < PROB_FLOOR:
        return -1
    if p_minus < PROB_FLOOR:
        return +1
    return +1 if rng.random() < p_plus / (p_plus + p_minus) else -1


def branch_probabilities(
    state: StateVector | DensityOperator, obs: DichotomicObservable
) -> tuple[float, float]:
    """Probabilities of the +1 and −1 outcomes, without sampling."""
    _check_dims(state.dim, obs.dim)
    if isinstance(state, StateVector):
        p_plus = np.real(np.vdot(state.amplitudes, obs.plus_projector @ state.amplitudes))
        p_minus = np.real(np.vdot(state.amplitudes, obs.minus_projector @ state.amplitudes))
    else:
        p_plus = np.real(np.trace(obs.plus_projector @ state.matrix))
        p_minus = np.real(np.trace(obs.minus_projector @ state.matrix))
    return float(p_plus), float(p_minus)


def expectation(state: StateVector | DensityOperator, op: HermitianOperator | np.ndarray) -> float:
    """⟨Ψ|op|Ψ⟩ or trace(ρ·op), with the imaginary residue checked and dropped."""
    mat = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op)
    _check_dims(state.dim, mat.shape[0])
    if isinstance(state, StateVector):
        value = np.vdot(state.amplitudes, mat @ state.amplitudes)
    else:
        value = np.trace(state.matrix @ mat)
    if abs(value.imag) > 1e-8:
        raise InvariantViolation(f"expectation has imaginary residue {value.imag}")
    return float(value.real)


def unitary_from_generator(
    terms: list[tuple[float, HermitianOperator]], dim: int | None = None
) -> UnitaryOperator:
    """exp(i·Σ βⱼGⱼ) via exact spectral decomposition of the Hermitian sum.

    ``dim`` is only needed for the empty-sum case, which returns the identity.
    """
    if not terms:
        if dim is None:
            raise ValueError("dim required for an empty generator sum")
        return UnitaryOperator(np.eye(dim, dtype=np.complex128))
    gen_dim = _check_dims(*(g.dim for _, g in terms))
    if dim is not None and dim != gen_dim:
        raise DimensionMismatch(f"generators are {gen_dim}-dimensional, expected {dim}")
    total = np.zeros((gen_dim, gen_dim), dtype=np.complex128)
    for coeff, gen in terms:
        total += coeff * gen.matrix
    eigvals, eigvecs = np.linalg.eigh(total)
    matrix = (eigvecs * np.exp(1j * eigvals)) @ eigvecs.conj().T
    return UnitaryOperator(matrix)


def apply_unitary(state: StateVector | DensityOperator, u: UnitaryOperator):
    """U|Ψ⟩ or UρU†."""
    _check_dims(state.dim, u.dim)
    if isinstance(state, StateVector):
        return StateVector(u.matrix @ state.amplitudes)
    return DensityOperator(u.matrix @ state.matrix @ u.matrix.conj().T)


def tensor(a, b):
    """Kronecker product of two states or two operators (wrapper-preserving)."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(np.kron(a.amplitudes, b.amplitudes))
    mat_a = a.matrix if hasattr(a, "matrix") else np.asarray(a)
    mat_b = b.matrix if hasattr(b, "matrix") else np.asarray(b)
    return np.kron(mat_a, mat_b)


def dagger(a) -> np.ndarray:
    mat = a.matrix if hasattr(a, "matrix") else np.asarray(a)
    return mat.conj().T


def commutator_norm(a, b) -> float:
    """Max absolute entry of AB − BA."""
    mat_a = a.matrix if hasattr(a, "matrix") else np.asarray(a)
    mat_b = b.matrix if hasattr(b, "matrix") else np.asarray(b)
    _check_dims(mat_a.shape[0], mat_b.shape[0])
    return float(np.max(np.abs(mat_a @ mat_b - mat_b @ mat_a)))


def spectral_decomposition(op: HermitianOperator) -> list[tuple[float, np.ndarray]]:
    """Eigenvalue / eigenvector pairs; reassembling Σ λ|v⟩⟨v| returns the input."""
    eigvals, eigvecs = np.linalg.eigh(op.matrix)
    return [(float(eigvals[i]), eigvecs[:, i].copy()) for i in range(op.dim)]
