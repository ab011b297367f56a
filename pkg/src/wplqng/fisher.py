"""Block-diagonal WPL Fisher matrices and their regularised inverses."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CircuitError, CorrectionSingularError, DimensionError, DomainError, SymmetryError
from .geometry import WplParams, wpl_block
from .linalg import jacobi_eigh, jacobi_svd, pinv

log = logging.getLogger(__name__)

DEFAULT_TAU = 1e-3
SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class AnsatzLayout:
    """Layer-major parameter layout of a hardware-efficient ansatz.

    Parameter ``2 * (layer * n_qubits + qubit)`` is that pair's Ry angle and
    the next one its Rz angle.
    """

    n_qubits: int = 2
    n_layers: int = 2

    @property
    def n_params(self) -> int:
        return 2 * self.n_qubits * self.n_layers

    def pairs(self) -> list[tuple[int, int, int, int]]:
        """``(layer, qubit, ry_index, rz_index)`` for every rotation pair."""
        out = []
        for layer in range(self.n_layers):
            for q in range(self.n_qubits):
                k = 2 * (layer * self.n_qubits + q)
                out.append((layer, q, k, k + 1))
        return out


@dataclass(frozen=True)
class PseudoInverseConfig:
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise DomainError("tau must be positive")


@dataclass(frozen=True)
class FisherBlock:
    index: int
    matrix: np.ndarray
    qubit: int
    layer: int
    params: tuple[int, ...]


@dataclass(frozen=True)
class LowRankCorrection:
    """Cross-block coupling ``C = U V^T`` with ``U, V`` of shape (p, r)."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if U.shape != V.shape:
            raise DimensionError("U and V must have the same shape")
        if U.shape[1] > U.shape[0]:
            raise DimensionError("correction rank exceeds the parameter count")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        return self.U @ self.V.T


@dataclass(frozen=True)
class BlockDiagQfim:
    blocks: tuple[FisherBlock, ...]
    n_params: int
    correction: LowRankCorrection | None = None

    def __post_init__(self) -> None:
        seen = sorted(i for blk in self.blocks for i in blk.params)
        if seen != list(range(self.n_params)):
            raise CircuitError("blocks do not partition the parameter vector")

    def dense(self, with_correction: bool = True) -> np.ndarray:
        F = np.zeros((self.n_params, self.n_params))
        for blk in self.blocks:
            idx = np.array(blk.params)
            F[np.ix_(idx, idx)] = blk.matrix
        if with_correction and self.correction is not None:
            F = F + self.correction.dense()
        return F

    def block_pinv(self, cfg: PseudoInverseConfig = PseudoInverseConfig()) -> np.ndarray:
        """Blockwise thresholded pseudoinverse, correction ignored."""
        out = np.zeros((self.n_params, self.n_params))
        for blk in self.blocks:
            idx = np.array(blk.params)
            out[np.ix_(idx, idx)] = pseudo_inverse(blk.matrix, cfg)
        return out

    def pinv(self, cfg: PseudoInverseConfig = PseudoInverseConfig()) -> np.ndarray:
        """Block pseudoinverse with the Woodbury update for any correction.

        Falls back to the block-only preconditioner when the Woodbury inner
        matrix is singular.
        """
        base = self.block_pinv(cfg)
        if self.correction is None or self.correction.rank == 0:
            return base
        try:
            return woodbury_pinv(base, self.correction)
        except CorrectionSingularError as exc:
            log.warning("entangler correction dropped: %s", exc)
            return base


def assemble_wpl_qfim(
    params: Sequence[WplParams],
    theta: Sequence[float],
    layout: AnsatzLayout = AnsatzLayout(),
    correction: LowRankCorrection | None = None,
) -> BlockDiagQfim:
    """One ``diag(b^2, b^2 sin^2(theta_y) (a/b)^2)`` block per (layer, qubit) pair.

    The Ry angle plays the polar coordinate of the qubit's WPL chart and the
    Rz angle the azimuth; all layers of a qubit share its ``WplParams``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (layout.n_params,):
        raise CircuitError(f"layout expects {layout.n_params} parameters, got {theta.shape}")
    if len(params) != layout.n_qubits:
        raise CircuitError(f"need one WplParams per qubit ({layout.n_qubits}), got {len(params)}")
    blocks = []
    for k, (layer, q, iy, iz) in enumerate(layout.pairs()):
        mat = wpl_block(np.sin(theta[iy]) ** 2, params[q])
        blocks.append(FisherBlock(k, mat, q, layer, (iy, iz)))
    return BlockDiagQfim(tuple(blocks), layout.n_params, correction)


def _symmetric(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise DimensionError("expected a square matrix")
    if np.max(np.abs(F - F.T), initial=0.0) > SYMMETRY_TOL:
        raise SymmetryError("matrix is not symmetric")
    return 0.5 * (F + F.T)


def pseudo_inverse(F: np.ndarray, cfg: PseudoInverseConfig = PseudoInverseConfig()) -> np.ndarray:
    """``W diag(1/lam if lam >= tau else 0) W^T`` from the eigendecomposition of ``F``."""
    w, W = jacobi_eigh(_symmetric(F))
    keep = w >= cfg.tau
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (W * inv) @ W.T


def naive_inverse(F: np.ndarray, jitter: float = 1e-12) -> np.ndarray:
    """Direct spectral inverse of ``F + jitter I`` with no thresholding."""
    w, W = jacobi_eigh(_symmetric(F))
    return (W / (w + jitter)) @ W.T


def woodbury_pinv(F_loc_pinv: np.ndarray, corr: LowRankCorrection, cond_max: float = 1e10) -> np.ndarray:
    """``F+ - F+ U (I + V^T F+ U)^-1 V^T F+``."""
    Fp = np.asarray(F_loc_pinv, dtype=float)
    if corr.rank == 0:
        return Fp.copy()
    if corr.U.shape[0] != Fp.shape[0]:
        raise DimensionError("correction factors do not match the matrix size")
    inner = np.eye(corr.rank) + corr.V.T @ Fp @ corr.U
    s = jacobi_svd(inner).s
    if s[-1] == 0.0 or s[0] / s[-1] >= cond_max:
        raise CorrectionSingularError(f"Woodbury inner matrix has condition number {s[0] / max(s[-1], 1e-300):.3g}")
    inner_inv, _ = pinv(inner, cutoff=0.0)
    return Fp - Fp @ corr.U @ inner_inv @ corr.V.T @ Fp


def precondition(F_pinv: np.ndarray, gradient: Sequence[float]) -> np.ndarray:
    g = np.asarray(gradient, dtype=float)
    F_pinv = np.asarray(F_pinv, dtype=float)
    if F_pinv.shape != (g.size, g.size):
        raise DimensionError(f"preconditioner {F_pinv.shape} does not match gradient of length {g.size}")
    return F_pinv @ g


class StepBounds(NamedTuple):
    lower: float
    upper: float


def step_size_bounds(eta: float, tau: float, C: float, R: float) -> StepBounds:
    """Effective step-length bounds ``(eta / (C R), eta / tau)`` for one block."""
    if not (eta > 0 and tau > 0 and C > 0 and R > 0):
        raise DomainError("eta, tau, C and R must be positive")
    return StepBounds(eta / (C * R), eta / tau)


@dataclass(frozen=True)
class StepSizeCheck:
    ratio: float
    bounds: StepBounds
    within: bool
    violations: tuple[float, ...]  # retained eigenvalues above C * R


def check_step_size(
    F_block: np.ndarray,
    g: Sequence[float],
    eta: float,
    tau: float = DEFAULT_TAU,
    C: float = 1.0,
    R: float = 2.0,
    rtol: float = 1e-12,
) -> StepSizeCheck:
    """Measure ``eta ||F+ g|| / ||g||`` against the curvature-aware bounds.

    Retained eigenvalues above ``C * R`` are reported in ``violations``
    rather than raised.
    """
    bounds = step_size_bounds(eta, tau, C, R)
    w = jacobi_eigh(_symmetric(F_block)).values
    violations = tuple(float(x) for x in w if x >= tau and x > C * R * (1 + rtol))
    g = np.asarray(g, dtype=float)
    ratio = float(eta * np.linalg.norm(pseudo_inverse(F_block, PseudoInverseConfig(tau)) @ g) / np.linalg.norm(g))
    within = bounds.lower * (1 - rtol) <= ratio <= bounds.upper * (1 + rtol)
    return StepSizeCheck(ratio, bounds, within, violations)
