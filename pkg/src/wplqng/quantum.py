"""Density-matrix simulation of one- and two-qubit circuits with Kraus noise.

Conventions
-----------
* Qubit 0 is the leftmost tensor factor: a two-qubit Pauli string ``"ZI"``
  acts with Z on qubit 0.
* Bloch vectors follow ``rho = (I + r . sigma) / 2``.
* Channels are lists of 2x2 Kraus operators; on two qubits they act on one
  qubit at a time (no correlated noise).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    CircuitError,
    CPTPViolationError,
    DimensionError,
    DomainError,
    UnphysicalStateError,
)
from .linalg import hermitian_eigvalsh

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": SX, "Y": SY, "Z": SZ}
SIGMAS = (SX, SY, SZ)

H_GATE = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)
SDG_GATE = np.array([[1, 0], [0, -1j]], dtype=complex)
CZ_GATE = np.diag([1, 1, 1, -1]).astype(complex)

BLOCH_TOL = 1e-9
CPTP_TOL = 1e-12


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible sub-stream for ``(seed, *keys)``."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------


def bloch_to_density(r: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise DimensionError(f"Bloch vector must have 3 components, got shape {r.shape}")
    if np.linalg.norm(r) > 1.0 + BLOCH_TOL:
        raise UnphysicalStateError(f"|r| = {np.linalg.norm(r):.6g} exceeds 1")
    return 0.5 * (I2 + r[0] * SX + r[1] * SY + r[2] * SZ)


def density_to_bloch(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise DimensionError(f"expected a single-qubit density matrix, got shape {rho.shape}")
    return np.array([np.trace(s @ rho).real for s in SIGMAS])


def pure_state(vec: Sequence[complex]) -> np.ndarray:
    psi = np.asarray(vec, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def zero_state(n_qubits: int) -> np.ndarray:
    rho = np.zeros((2**n_qubits, 2**n_qubits), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def check_density(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise if ``rho`` is not Hermitian, unit-trace and PSD within ``tol``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] not in (2, 4):
        raise DimensionError(f"density matrix must be 2x2 or 4x4, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise UnphysicalStateError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise UnphysicalStateError("density matrix does not have unit trace")
    if np.min(hermitian_eigvalsh(rho)) < -tol:
        raise UnphysicalStateError("density matrix has a negative eigenvalue")


# --------------------------------------------------------------------------
# channels
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseChannel:
    """Single-qubit CPTP map in Kraus form."""

    kraus: tuple[np.ndarray, ...]
    label: str = "custom"

    def __post_init__(self) -> None:
        ks = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ks or any(k.shape != (2, 2) for k in ks):
            raise DimensionError("Kraus operators must be a non-empty list of 2x2 matrices")
        object.__setattr__(self, "kraus", ks)
        total = sum(k.conj().T @ k for k in ks)
        if np.max(np.abs(total - I2)) > CPTP_TOL:
            raise CPTPViolationError(f"sum K^dag K deviates from I by {np.max(np.abs(total - I2)):.3g}")

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return apply_channel(self, rho)

    def then(self, other: "NoiseChannel") -> "NoiseChannel":
        """Channel that applies ``self`` first and ``other`` second."""
        ks = tuple(b @ a for a in self.kraus for b in other.kraus)
        return NoiseChannel(ks, label=f"{other.label}*{self.label}")


IDENTITY_CHANNEL = NoiseChannel((I2,), label="identity")


def make_channel(kind: str, param: float) -> NoiseChannel:
    """Build one of the canonical channels.

    ``dephasing(p)`` flips the phase with probability ``p`` (p <= 1/2),
    ``depolarizing(p)`` maps rho to (1-p) rho + p I/2, and
    ``amplitude_damping(gamma)`` relaxes towards |0> with probability gamma.
    """
    p = float(param)
    if not np.isfinite(p):
        raise DomainError("channel parameter must be finite")
    if kind == "dephasing":
        if not 0.0 <= p <= 0.5:
            raise DomainError(f"dephasing probability must lie in [0, 1/2], got {p}")
        ks = (np.sqrt(1.0 - p) * I2, np.sqrt(p) * SZ)
    elif kind == "depolarizing":
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"depolarizing probability must lie in [0, 1], got {p}")
        ks = (np.sqrt(1.0 - 0.75 * p) * I2, *(np.sqrt(p / 4.0) * s for s in SIGMAS))
    elif kind == "amplitude_damping":
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"amplitude damping gamma must lie in [0, 1], got {p}")
        ks = (
            np.array([[1, 0], [0, np.sqrt(1.0 - p)]], dtype=complex),
            np.array([[0, np.sqrt(p)], [0, 0]], dtype=complex),
        )
    elif kind == "identity":
        ks = (I2,)
    else:
        raise DomainError(f"unknown channel kind {kind!r}")
    return NoiseChannel(ks, label=f"{kind}({p:g})")


def kron2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two 2x2 matrices (``np.kron`` is slow at this size)."""
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(4, 4)


def _embed(op: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    if n_qubits == 1:
        if qubit != 0:
            raise CircuitError(f"qubit index {qubit} out of range for 1 qubit")
        return op
    if qubit == 0:
        return kron2(op, I2)
    if qubit == 1:
        return kron2(I2, op)
    raise CircuitError(f"qubit index {qubit} out of range for 2 qubits")


def _n_qubits(rho: np.ndarray) -> int:
    if rho.shape == (2, 2):
        return 1
    if rho.shape == (4, 4):
        return 2
    raise DimensionError(f"unsupported density matrix shape {rho.shape}")


def apply_channel(ch: NoiseChannel, rho: np.ndarray, qubit: int = 0) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    n = _n_qubits(rho)
    out = np.zeros_like(rho)
    for k in ch.kraus:
        kf = _embed(k, qubit, n)
        out += kf @ rho @ kf.conj().T
    return out


@dataclass(frozen=True)
class AffineBlochMap:
    """The action ``r -> T r + c`` of a qubit channel on Bloch vectors."""

    T: np.ndarray
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        T = np.asarray(self.T, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if T.shape != (3, 3) or c.shape != (3,):
            raise DimensionError("Bloch map needs a 3x3 matrix and a 3-vector")
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "c", c)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return bloch_to_density(self.apply(density_to_bloch(rho)))

    def apply(self, r: Sequence[float]) -> np.ndarray:
        return self.T @ np.asarray(r, dtype=float) + self.c

    def then(self, other: "AffineBlochMap") -> "AffineBlochMap":
        return AffineBlochMap(other.T @ self.T, other.T @ self.c + other.c)

    @classmethod
    def diagonal(cls, lam_perp: float, lam_par: float) -> "AffineBlochMap":
        """Unital phase-covariant map diag(lam_perp, lam_perp, lam_par)."""
        return cls(np.diag([lam_perp, lam_perp, lam_par]))


def channel_to_bloch_map(ch: NoiseChannel) -> AffineBlochMap:
    """``T_ij = tr(sigma_i Phi(sigma_j)) / 2`` and ``c_i = tr(sigma_i Phi(I)) / 2``."""
    T = np.empty((3, 3))
    for j, sj in enumerate(SIGMAS):
        out = apply_channel(ch, sj)
        for i, si in enumerate(SIGMAS):
            T[i, j] = 0.5 * np.trace(si @ out).real
    out = apply_channel(ch, I2)
    c = np.array([0.5 * np.trace(si @ out).real for si in SIGMAS])
    return AffineBlochMap(T, c)


# --------------------------------------------------------------------------
# circuits
# --------------------------------------------------------------------------

ROTATIONS = ("RY", "RZ")
FIXED_1Q = {"X": SX, "H": H_GATE, "SDG": SDG_GATE, "IDLE": I2}
GATE_NAMES = frozenset(ROTATIONS) | frozenset(FIXED_1Q) | {"CZ"}


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def matrix(self) -> np.ndarray:
        if self.name == "RY":
            return ry(self.angle)
        if self.name == "RZ":
            return rz(self.angle)
        if self.name == "CZ":
            return CZ_GATE
        return FIXED_1Q[self.name]


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list on ``n_qubits`` (1 or 2) qubits."""

    n_qubits: int
    gates: tuple[Gate, ...] = ()

    def __post_init__(self) -> None:
        if self.n_qubits not in (1, 2):
            raise CircuitError("only 1- and 2-qubit circuits are supported")
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if g.name not in GATE_NAMES:
                raise CircuitError(f"unknown gate {g.name!r}")
            if any(not 0 <= q < self.n_qubits for q in g.qubits):
                raise CircuitError(f"gate {g.name} addresses qubits {g.qubits} on {self.n_qubits} qubits")
            arity = 2 if g.name == "CZ" else 1
            if len(g.qubits) != arity or len(set(g.qubits)) != arity:
                raise CircuitError(f"gate {g.name} needs {arity} distinct qubit(s), got {g.qubits}")
            if g.name in ROTATIONS:
                if g.angle is None or not np.isfinite(g.angle):
                    raise CircuitError(f"{g.name} needs a finite angle")

    def _add(self, *gates: Gate) -> "Circuit":
        return Circuit(self.n_qubits, self.gates + gates)

    def ry(self, q: int, angle: float) -> "Circuit":
        return self._add(Gate("RY", (q,), float(angle)))

    def rz(self, q: int, angle: float) -> "Circuit":
        return self._add(Gate("RZ", (q,), float(angle)))

    def x(self, q: int) -> "Circuit":
        return self._add(Gate("X", (q,)))

    def h(self, q: int) -> "Circuit":
        return self._add(Gate("H", (q,)))

    def sdg(self, q: int) -> "Circuit":
        return self._add(Gate("SDG", (q,)))

    def cz(self, q0: int = 0, q1: int = 1) -> "Circuit":
        return self._add(Gate("CZ", (q0, q1)))

    def idle(self, q: int, depth: int = 1) -> "Circuit":
        if depth < 0:
            raise CircuitError("idle depth must be non-negative")
        return self._add(*(Gate("IDLE", (q,)) for _ in range(depth)))


NoiseSpec = Union[None, NoiseChannel, Mapping[str, NoiseChannel]]


def _noise_for(noise: NoiseSpec, gate: Gate) -> NoiseChannel | None:
    if noise is None:
        return None
    if isinstance(noise, NoiseChannel):
        return noise
    return noise.get(gate.name, noise.get("*"))


def simulate(circ: Circuit, noise: NoiseSpec = None, initial: np.ndarray | None = None) -> np.ndarray:
    """Run ``circ`` on ``initial`` (default |0...0>).

    ``noise`` is either one channel applied after every gate or a mapping from
    gate name (``"*"`` as fallback) to a channel. After each gate the channel
    hits every qubit the gate touched.
    """
    n = circ.n_qubits
    rho = zero_state(n) if initial is None else np.array(initial, dtype=complex)
    if _n_qubits(rho) != n:
        raise DimensionError(f"initial state is not a {n}-qubit density matrix")
    for g in circ.gates:
        if g.name != "IDLE":
            u = g.matrix() if g.name == "CZ" else _embed(g.matrix(), g.qubits[0], n)
            rho = u @ rho @ u.conj().T
        ch = _noise_for(noise, g)
        if ch is not None:
            for q in g.qubits:
                rho = apply_channel(ch, rho, q)
    return rho


# --------------------------------------------------------------------------
# observables and sampling
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PauliHamiltonian:
    terms: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        terms = tuple((str(s).upper(), float(c)) for s, c in self.terms)
        if not terms:
            raise DimensionError("Hamiltonian needs at least one term")
        n = len(terms[0][0])
        for s, c in terms:
            if len(s) != n or set(s) - set("IXYZ"):
                raise DimensionError(f"bad Pauli string {s!r}")
            if not np.isfinite(c):
                raise DomainError("Hamiltonian coefficients must be finite")
        object.__setattr__(self, "terms", terms)

    @property
    def n_qubits(self) -> int:
        return len(self.terms[0][0])

    def matrix(self) -> np.ndarray:
        return sum(c * pauli_matrix(s) for s, c in self.terms)


@functools.lru_cache(maxsize=None)
def _pauli_cached(label: str) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for ch in label:
        out = np.kron(out, PAULI[ch])
    out.flags.writeable = False
    return out


def pauli_matrix(label: str) -> np.ndarray:
    return _pauli_cached(label).copy()


def expectation(rho: np.ndarray, obs: PauliHamiltonian | str) -> float:
    if isinstance(obs, str):
        obs = PauliHamiltonian(((obs, 1.0),))
    rho = np.asarray(rho)
    if rho.shape != (2**obs.n_qubits,) * 2:
        raise DimensionError(f"{obs.n_qubits}-qubit observable on state of shape {rho.shape}")
    # tr(P rho) as an elementwise sum; P is Hermitian
    return float(sum(c * np.sum(_pauli_cached(s).T * rho).real for s, c in obs.terms))


@dataclass(frozen=True)
class ShotCounts:
    n_plus: int
    n_minus: int

    def __post_init__(self) -> None:
        if self.n_plus < 0 or self.n_minus < 0:
            raise DomainError("counts must be non-negative")

    @property
    def shots(self) -> int:
        return self.n_plus + self.n_minus

    @property
    def mean(self) -> float:
        if self.shots == 0:
            raise DomainError("no shots recorded")
        return (self.n_plus - self.n_minus) / self.shots


def plus_probability(expval: float) -> float:
    return min(1.0, max(0.0, 0.5 * (1.0 + expval)))


def sample_counts(rho: np.ndarray, basis: str, shots: int, rng: np.random.Generator) -> ShotCounts:
    """Draw ``shots`` projective measurements of a Pauli basis on one qubit."""
    if shots < 1:
        raise DomainError("shots must be >= 1")
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise DimensionError("sample_counts expects a single-qubit state")
    n_plus = int(rng.binomial(shots, plus_probability(expectation(rho, basis))))
    return ShotCounts(n_plus, shots - n_plus)


def exact_ground_energy(h: PauliHamiltonian) -> float:
    """Smallest eigenvalue of the dense Hamiltonian (Jacobi eigensolver)."""
    if h.n_qubits > 2:
        raise DimensionError("exact_ground_energy supports at most 2 qubits")
    return float(hermitian_eigvalsh(h.matrix(), tol=1e-14)[0])


def is_trace_preserving(kraus: Iterable[np.ndarray], tol: float = CPTP_TOL) -> bool:
    total = sum(np.asarray(k).conj().T @ np.asarray(k) for k in kraus)
    return bool(np.max(np.abs(total - I2)) <= tol)
