"""
Bell CGLMP Module
Measurement bases, joint-outcome projectors and the CGLMP Bell operator for
two qudits, evaluated on simulated density matrices
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from config import settings
from backend.errors import ConfigurationError, DimensionMismatchError, NonPhysicalStateError
from backend.entanglement import MatrixLike, SUPPORTED_DIMENSIONS, _as_array, maximally_entangled

# Configure logging
logging.basicConfig(level=settings.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Measurement-setting phases
ALICE_SETTINGS = {1: 0.0, 2: 0.5}
BOB_SETTINGS = {1: 0.25, 2: -0.25}

# Local-realistic bound of the CGLMP expression
CLASSICAL_BOUND = 2.0
IMAG_TOLERANCE = 1e-10


def _check_dimension(d: int):
    if d not in SUPPORTED_DIMENSIONS:
        raise DimensionMismatchError(f"CGLMP operator supports d in {SUPPORTED_DIMENSIONS}, got {d}")


def _check_setting(setting: int, name: str):
    if setting not in (1, 2):
        raise ConfigurationError(f"Measurement setting {name} must be 1 or 2, got {setting}")


def alice_basis(d: int, a: int) -> np.ndarray:
    """Columns |v⟩ with entries exp[i(2π/d) j (v + α_a)] / √d"""
    _check_setting(a, "a")
    j, v = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return np.exp(2j * np.pi / d * j * (v + ALICE_SETTINGS[a])) / math.sqrt(d)


def bob_basis(d: int, b: int) -> np.ndarray:
    """Columns |w⟩ with entries exp[-i(2π/d) j (w - β_b)] / √d"""
    _check_setting(b, "b")
    j, w = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    return np.exp(-2j * np.pi / d * j * (w - BOB_SETTINGS[b])) / math.sqrt(d)


def probability_operator(d: int, a: int, b: int, k: int) -> np.ndarray:
    """
    Projector onto the outcomes where Alice's result exceeds Bob's by k (mod d)

    P(A_a = B_b + k) = Σ_r |r+k⟩_a⟨r+k| ⊗ |r⟩_b⟨r|
    """
    alice = alice_basis(d, a)
    bob = bob_basis(d, b)
    projector = np.zeros((d * d, d * d), dtype=np.complex128)
    for r in range(d):
        vector = np.kron(alice[:, (r + k) % d], bob[:, r])
        projector += np.outer(vector, vector.conj())
    return projector


def _terms(d: int) -> List[Tuple[float, int, Tuple[int, int, int]]]:
    """(weight, sign, (a, b, k)) for every joint probability of the CGLMP sum"""
    terms = []
    for k in range(d // 2):
        weight = 1 - 2 * k / (d - 1)
        positive = [(1, 1, k), (2, 1, -(k + 1)), (2, 2, k), (1, 2, -k)]
        negative = [(1, 1, -(k + 1)), (2, 1, k), (2, 2, -(k + 1)), (1, 2, k + 1)]
        terms += [(weight, +1, term) for term in positive]
        terms += [(weight, -1, term) for term in negative]
    return terms


@dataclass(frozen=True)
class BellOperatorMatrix:
    """CGLMP operator S_d acting on the d² two-qudit space"""
    d: int
    matrix: np.ndarray

    @property
    def max_eigenvalue(self) -> float:
        return float(linalg.eigvalsh(self.matrix)[-1])

    def expectation(self, vector: np.ndarray) -> float:
        vector = np.asarray(vector, dtype=np.complex128)
        return float(np.vdot(vector, self.matrix @ vector).real / np.vdot(vector, vector).real)


@lru_cache(maxsize=None)
def bell_operator(d: int) -> BellOperatorMatrix:
    """
    CGLMP operator Σ_k (1 - 2k/(d-1)) {positive terms - negative terms}

    Built once per dimension; the returned matrix is read-only.
    """
    _check_dimension(d)
    matrix = np.zeros((d * d, d * d), dtype=np.complex128)
    for weight, sign, (a, b, k) in _terms(d):
        matrix += sign * weight * probability_operator(d, a, b, k % d)
    matrix = 0.5 * (matrix + matrix.conj().T)
    matrix.flags.writeable = False
    return BellOperatorMatrix(d=d, matrix=matrix)


def max_violation(d: int) -> float:
    """Largest eigenvalue of S_d"""
    return bell_operator(d).max_eigenvalue


def bell_parameter(rho: MatrixLike) -> float:
    """
    S_d = Tr(S_d ρ)

    ρ must follow the assemble_biphoton ordering: Alice's label 0 is the
    smallest azimuthal index, Bob's labels run in the opposite direction.
    """
    rho, d = _as_array(rho)
    operator = bell_operator(d)
    value = np.trace(operator.matrix @ rho)
    if abs(value.imag) > IMAG_TOLERANCE:
        raise NonPhysicalStateError(f"Bell parameter has imaginary part {value.imag:.3e}")
    return float(value.real)


def violates(value: float) -> bool:
    return value > CLASSICAL_BOUND


def classical_bound(d: int) -> float:
    """Maximum of the CGLMP sum over all d⁴ deterministic local strategies"""
    _check_dimension(d)
    terms = _terms(d)
    best = -math.inf
    for a1, a2, b1, b2 in itertools.product(range(d), repeat=4):
        alice = {1: a1, 2: a2}
        bob = {1: b1, 2: b2}
        value = sum(
            sign * weight
            for weight, sign, (a, b, k) in terms
            if (alice[a] - bob[b] - k) % d == 0
        )
        best = max(best, value)
    return float(best)


def critical_strength(strengths: Sequence[float],
                      values: Sequence[float],
                      threshold: float = CLASSICAL_BOUND) -> Optional[float]:
    """
    First turbulence strength at which S_d drops to the threshold

    Linear interpolation between the last violating point and the first
    non-violating one. Returns None if S_d never drops to the threshold.
    """
    if len(strengths) != len(values):
        raise DimensionMismatchError("Strength and value lists differ in length")
    for i, (w, s) in enumerate(zip(strengths, values)):
        if s <= threshold:
            if i == 0:
                return float(w)
            w_prev, s_prev = strengths[i - 1], values[i - 1]
            return float(w_prev + (s_prev - threshold) * (w - w_prev) / (s_prev - s))
    return None


def table_values() -> Dict[int, Dict[str, float]]:
    """S_d for the maximally entangled input and the largest eigenvalue, per d"""
    table = {}
    for d in SUPPORTED_DIMENSIONS:
        operator = bell_operator(d)
        table[d] = {
            "S_max": operator.max_eigenvalue,
            "S_maximally_entangled": operator.expectation(maximally_entangled(d)),
        }
    return table
