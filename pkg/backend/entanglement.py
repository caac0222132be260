"""
Entanglement Module
Encoding subspaces, biphoton output states built from crosstalk matrices,
disorder-averaged density matrices and the concurrence/negativity measures
with their error bars
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from config import settings
from backend.errors import (
    ConfigurationError,
    DimensionMismatchError,
    FullyLossyChannelError,
    NonPhysicalStateError,
)
from backend.oam_modes import CrosstalkMatrix

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-8
EIGENVALUE_FLOOR = -1e-10
LOSS_TOLERANCE = 1e-6
MIN_TRACE = 1e-12
# eigenvalues below this fraction of the largest are treated as exact zeros
RANK_TOLERANCE = 1e-14
MIN_BOOTSTRAP_REALIZATIONS = 10

SUPPORTED_DIMENSIONS = (2, 3, 4)

MatrixLike = Union["DensityMatrix", np.ndarray]
Functional = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class EncodingSubspace:
    """
    The d OAM modes carrying one qudit, in ascending order.

    Alice's photon uses `modes`; Bob's photon carries the opposite charges,
    so `bob_modes` is the same set in descending label order and the input
    state is Σ_j |j, j⟩/√d.
    """
    modes: Tuple[int, ...]

    def __post_init__(self):
        modes = tuple(sorted(int(m) for m in self.modes))
        if len(set(modes)) != len(modes):
            raise ConfigurationError(f"Encoding modes must be distinct, got {list(self.modes)}", field="subspaces")
        if len(modes) not in SUPPORTED_DIMENSIONS:
            raise ConfigurationError(
                f"Encoding subspace dimension must be one of {SUPPORTED_DIMENSIONS}, got {len(modes)}",
                field="subspaces",
            )
        object.__setattr__(self, "modes", modes)

    @property
    def d(self) -> int:
        return len(self.modes)

    @property
    def bob_modes(self) -> Tuple[int, ...]:
        return tuple(-m for m in self.modes)

    @property
    def label(self) -> str:
        return "{" + ",".join(str(m) for m in self.modes) + "}"

    @classmethod
    def qubit(cls, l0: int) -> "EncodingSubspace":
        return cls((-abs(l0), abs(l0)))

    @classmethod
    def qutrit(cls, l0: int) -> "EncodingSubspace":
        return cls((-abs(l0), 0, abs(l0)))

    @classmethod
    def ququart(cls, l1: int, l2: int) -> "EncodingSubspace":
        return cls((-abs(l2), -abs(l1), abs(l1), abs(l2)))

    @classmethod
    def parse(cls, text: str) -> "EncodingSubspace":
        """Build a subspace from text such as "-2,-1,1,2" or "{-1,1}" """
        try:
            return cls(tuple(int(part) for part in text.strip("{}[] ").split(",")))
        except ValueError:
            raise ConfigurationError(f"Cannot parse encoding subspace '{text}'", field="subspaces")


def ququart_pairs(max_l: int = 5) -> List[EncodingSubspace]:
    """All ququart subspaces {-l2, -l1, l1, l2} with 0 < l1 < l2 <= max_l"""
    return [
        EncodingSubspace.ququart(l1, l2)
        for l1 in range(1, max_l + 1)
        for l2 in range(l1 + 1, max_l + 1)
    ]


def maximally_entangled(d: int) -> np.ndarray:
    """Input state |ψ0⟩ = Σ_j |j, j⟩/√d as a d² vector"""
    return np.eye(d, dtype=np.complex128).ravel() / math.sqrt(d)


@dataclass(frozen=True)
class BiphotonState:
    """
    Unnormalized output state of one realization.

    coefficients[j0, j] is the amplitude of |j0⟩_A |j⟩_B; the d² vector
    index is j0*d + j.
    """
    d: int
    coefficients: np.ndarray
    realization: Optional[int] = None

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=np.complex128)
        if coefficients.shape != (self.d, self.d):
            raise DimensionMismatchError(f"Coefficient matrix {coefficients.shape} is not {self.d}x{self.d}")
        if np.sum(np.abs(coefficients) ** 2) > 1 + LOSS_TOLERANCE:
            raise NonPhysicalStateError(
                f"Biphoton norm {np.sum(np.abs(coefficients) ** 2):.8f} exceeds 1"
            )
        coefficients.flags.writeable = False
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def vector(self) -> np.ndarray:
        return self.coefficients.ravel()

    @property
    def norm(self) -> float:
        """Σ|M|², the probability of detecting both photons inside the subspace"""
        return float(np.sum(np.abs(self.coefficients) ** 2))

    def rotate_alice(self, unitary: np.ndarray) -> "BiphotonState":
        """Apply a local unitary to Alice's (untouched) photon"""
        unitary = np.asarray(unitary)
        if unitary.shape != (self.d, self.d):
            raise DimensionMismatchError(f"Local unitary {unitary.shape} does not act on d={self.d}")
        return BiphotonState(d=self.d, coefficients=unitary @ self.coefficients, realization=self.realization)


def assemble_biphoton(ct: CrosstalkMatrix, subspace: EncodingSubspace) -> BiphotonState:
    """
    Output state of one realization restricted to the encoding subspace

    Bob's photon enters the channel as -m_{j0} and is detected as -m_j, so
    M[j0, j] = c_{-m_j, -m_{j0}} / √d.

    Args:
        ct (CrosstalkMatrix): Crosstalk of the realization
        subspace (EncodingSubspace): Encoding modes

    Returns:
        BiphotonState: Unnormalized projected state
    """
    bob = subspace.bob_modes
    missing = [
        (l, l0) for l0 in bob for l in bob if not ct.has(l, l0)
    ]
    if missing:
        raise DimensionMismatchError(
            f"Crosstalk matrix lacks entries {missing[:4]} needed for subspace {subspace.label}"
        )

    d = subspace.d
    rows = [ct.output_indices.index(l) for l in bob]
    cols = [ct.input_indices.index(l0) for l0 in bob]
    # entries is (output, input); M wants (input j0, output j)
    coefficients = ct.entries[np.ix_(rows, cols)].T / math.sqrt(d)
    return BiphotonState(d=d, coefficients=coefficients, realization=ct.realization)


@dataclass(frozen=True)
class DensityMatrix:
    """
    Disorder-averaged, renormalized two-photon state.

    Attributes:
        d (int): Qudit dimension
        rho (np.ndarray): d²xd² Hermitian matrix with unit trace
        trace (float): Mean probability 𝓣 that both photons stay in the subspace
        n_realizations (int): Number of accumulated realizations
        stderr (np.ndarray): Standard errors of the real (real part) and
            imaginary (imaginary part) components of every element
        trace_stderr (float): Standard error of 𝓣
        samples (np.ndarray): Per-realization state vectors, N x d²
    """
    d: int
    rho: np.ndarray
    trace: float = 1.0
    n_realizations: int = 1
    stderr: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    trace_stderr: float = 0.0
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=np.complex128)
        _check_physical(rho, self.d)
        if abs(np.trace(rho).real - 1) > 1e-12:
            raise NonPhysicalStateError(f"Density matrix trace {np.trace(rho).real:.12f} differs from 1")
        rho.flags.writeable = False
        object.__setattr__(self, "rho", rho)
        if self.stderr is None:
            object.__setattr__(self, "stderr", np.zeros_like(rho))

    @classmethod
    def from_array(cls, rho: np.ndarray) -> "DensityMatrix":
        """Wrap an explicit unit-trace matrix (no sampling information)"""
        rho = np.asarray(rho)
        return cls(d=_dimension_of(rho), rho=rho)

    @classmethod
    def from_pure(cls, vector: np.ndarray) -> "DensityMatrix":
        vector = np.asarray(vector, dtype=np.complex128)
        vector = vector / np.linalg.norm(vector)
        return cls.from_array(np.outer(vector, vector.conj()))

    def eigenvalues(self) -> np.ndarray:
        return linalg.eigvalsh(self.rho)


def _dimension_of(rho: np.ndarray) -> int:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionMismatchError(f"Density matrix must be square, got {rho.shape}")
    d = int(round(math.sqrt(rho.shape[0])))
    if d * d != rho.shape[0]:
        raise DimensionMismatchError(f"Density matrix size {rho.shape[0]} is not a square d²")
    return d


def _check_physical(rho: np.ndarray, d: int):
    if rho.shape != (d * d, d * d):
        raise DimensionMismatchError(f"Density matrix {rho.shape} does not match d={d}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOLERANCE:
        raise NonPhysicalStateError("Density matrix is not Hermitian")
    smallest = linalg.eigvalsh(rho)[0]
    if smallest < EIGENVALUE_FLOOR * max(1.0, abs(np.trace(rho))):
        raise NonPhysicalStateError(f"Density matrix has negative eigenvalue {smallest:.3e}")


def _as_array(rho: MatrixLike) -> Tuple[np.ndarray, int]:
    if isinstance(rho, DensityMatrix):
        return rho.rho, rho.d
    rho = np.asarray(rho, dtype=np.complex128)
    d = _dimension_of(rho)
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOLERANCE:
        raise NonPhysicalStateError("Density matrix is not Hermitian")
    return rho, d


def _density_from_samples(vectors: np.ndarray) -> Tuple[np.ndarray, float]:
    total = float(np.sum(np.abs(vectors) ** 2))
    if total < MIN_TRACE:
        raise FullyLossyChannelError(
            f"Accumulated trace {total:.3e} is zero: no realization left photons in the subspace"
        )
    rho = vectors.T @ vectors.conj() / total
    return 0.5 * (rho + rho.conj().T), total


def accumulate(states: Sequence[BiphotonState]) -> DensityMatrix:
    """
    Disorder average ρ = Σ_i |ψ_i⟩⟨ψ_i| / Σ_i ⟨ψ_i|ψ_i⟩

    The reported trace is the realization mean of ⟨ψ_i|ψ_i⟩.

    Args:
        states (Sequence[BiphotonState]): One state per realization

    Returns:
        DensityMatrix: Renormalized state with per-element standard errors
    """
    if not states:
        raise ConfigurationError("Cannot accumulate an empty list of states")
    d = states[0].d
    if any(state.d != d for state in states):
        raise DimensionMismatchError("All accumulated states must share one dimension")

    vectors = np.stack([state.vector for state in states])
    n = len(states)
    rho, total = _density_from_samples(vectors)
    norms = np.sum(np.abs(vectors) ** 2, axis=1)
    mean_trace = total / n

    if n > 1:
        outers = np.einsum("ni,nj->nij", vectors, vectors.conj()) / mean_trace
        stderr = (outers.real.std(axis=0, ddof=1) + 1j * outers.imag.std(axis=0, ddof=1)) / math.sqrt(n)
        trace_stderr = float(norms.std(ddof=1) / math.sqrt(n))
    else:
        stderr = np.zeros_like(rho)
        trace_stderr = 0.0

    return DensityMatrix(
        d=d,
        rho=rho,
        trace=mean_trace,
        n_realizations=n,
        stderr=stderr,
        trace_stderr=trace_stderr,
        samples=vectors,
    )


def _sigma_y_pair() -> np.ndarray:
    sigma_y = np.array([[0, -1j], [1j, 0]])
    return np.kron(sigma_y, sigma_y)


def concurrence(rho: MatrixLike) -> float:
    """
    Two-qubit concurrence C = max(0, √λ1 - √λ2 - √λ3 - √λ4)

    λ are the eigenvalues, in decreasing order, of ρ (σy⊗σy) ρ* (σy⊗σy).
    The √λ are taken as the singular values of √ρ (σy⊗σy) √ρ*, which keeps
    pure states exact.
    """
    rho, d = _as_array(rho)
    if d != 2:
        raise DimensionMismatchError(f"Concurrence is defined for qubits only, got d={d}")
    values, vectors = linalg.eigh(rho)
    if values.min() < EIGENVALUE_FLOOR:
        raise NonPhysicalStateError(f"Negative eigenvalue {values.min():.3e} in a concurrence argument")
    values = np.where(values > RANK_TOLERANCE * values.max(), values, 0.0)
    root = (vectors * np.sqrt(values)) @ vectors.conj().T
    roots = linalg.svdvals(root @ _sigma_y_pair() @ root.conj())
    return float(max(0.0, roots[0] - roots[1:].sum()))


def partial_transpose(rho: np.ndarray, d: int) -> np.ndarray:
    """Transpose Bob's index of a d²xd² matrix"""
    return rho.reshape(d, d, d, d).transpose(0, 3, 2, 1).reshape(d * d, d * d)


def negativity(rho: MatrixLike) -> float:
    """
    Normalized negativity (‖ρ^PT‖₁ - 1) / (d - 1)

    Equals 1 for a maximally entangled state of any dimension.
    """
    rho, d = _as_array(rho)
    trace_norm = np.sum(np.abs(linalg.eigvalsh(partial_transpose(rho, d))))
    return float((trace_norm - 1) / (d - 1))


def trace_probability(rho: MatrixLike) -> float:
    rho, _ = _as_array(rho)
    return float(np.trace(rho).real)


def error_bars(density: DensityMatrix,
               functional: Functional,
               resamples: Optional[int] = None,
               seed: int = 0) -> float:
    """
    Bootstrap standard error of f(ρ) over realizations

    Realizations are resampled with replacement and ρ is rebuilt from each
    resample exactly as `accumulate` does.

    Args:
        density (DensityMatrix): Accumulated state with per-realization samples
        functional (Callable): Measure evaluated on a d²xd² array
        resamples (int, optional): Bootstrap resamples (default from settings)
        seed (int): Seed of the resampling stream

    Returns:
        float: Standard deviation of the bootstrap distribution
    """
    resamples = settings.BOOTSTRAP_RESAMPLES if resamples is None else resamples
    if density.samples is None:
        raise ConfigurationError("Density matrix carries no per-realization samples")
    n = len(density.samples)
    if n < MIN_BOOTSTRAP_REALIZATIONS:
        raise ConfigurationError(
            f"Bootstrap error bars need at least {MIN_BOOTSTRAP_REALIZATIONS} realizations, got {n}",
            field="realizations",
        )

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    values = np.empty(resamples)
    for b in range(resamples):
        picks = rng.integers(0, n, size=n)
        rho, _ = _density_from_samples(density.samples[picks])
        values[b] = functional(rho)
    return float(values.std(ddof=1))


def _clip_to_psd(rho: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh(rho)
    return (vectors * np.clip(values, 0, None)) @ vectors.conj().T


def linear_error(density: DensityMatrix, functional: Functional, step: float = 1e-7) -> float:
    """
    First-order error propagation of the element standard errors

    The gradient of f with respect to the real and imaginary part of every
    independent (upper-triangle) element is taken by central differences,
    perturbing the element and its Hermitian partner together. Perturbed
    matrices are clipped back to positive semidefinite before evaluation.
    """
    rho = np.array(density.rho)
    size = rho.shape[0]
    variance = 0.0
    for i in range(size):
        for j in range(i, size):
            parts = [(1.0, density.stderr[i, j].real)]
            if i != j:
                parts.append((1j, density.stderr[i, j].imag))
            for direction, sigma in parts:
                if sigma == 0:
                    continue
                bump = np.zeros_like(rho)
                bump[i, j] += direction * step
                if i != j:
                    bump[j, i] += np.conj(direction) * step
                gradient = (functional(_clip_to_psd(rho + bump))
                            - functional(_clip_to_psd(rho - bump))) / (2 * step)
                variance += (gradient * sigma) ** 2
    return float(math.sqrt(variance))
