"""Small dense eigen/SVD kernels based on cyclic Jacobi rotations.

The matrices in this package are at most 8x8, so plain Jacobi sweeps are
both accurate (small singular values keep full relative precision) and fast
enough. Every routine accepts a stack of matrices ``(..., m, n)`` and rotates
the whole stack at once; this is what makes the bootstrap cheap.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericError

OFF_TOL = 1e-13
MAX_SWEEPS = 60


class SymEig(NamedTuple):
    values: np.ndarray  # ascending, shape (..., n)
    vectors: np.ndarray  # columns are eigenvectors, shape (..., n, n)


class SVD(NamedTuple):
    U: np.ndarray  # (..., m, n)
    s: np.ndarray  # descending, (..., n)
    V: np.ndarray  # (..., n, n)


def _check_finite(a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix contains non-finite entries")


def _off_norm(a: np.ndarray) -> np.ndarray:
    off = a * (1.0 - np.eye(a.shape[-1]))  # direct sum; ||A||^2 - sum(diag^2) cancels
    return np.sqrt(np.sum(off * off, axis=(-2, -1)))


def jacobi_eigh(a: np.ndarray, tol: float = OFF_TOL) -> SymEig:
    """Eigen-decomposition of real symmetric matrices by cyclic Jacobi.

    Iterates full sweeps over all (p, q) pairs until the off-diagonal
    Frobenius norm drops below ``tol * max(1, ||A||_F)``.
    """
    a = np.array(a, dtype=float, copy=True)
    _check_finite(a)
    if a.shape[-1] != a.shape[-2]:
        raise ValueError("jacobi_eigh needs square matrices")
    n = a.shape[-1]
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    scale = np.maximum(1.0, np.sqrt(np.sum(a * a, axis=(-2, -1))))

    for _ in range(MAX_SWEEPS):
        if np.all(_off_norm(a) < tol * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                with np.errstate(over="ignore"):  # theta = inf gives t = 0, the correct limit
                    theta = (a[..., q, q] - a[..., p, p]) / (2.0 * safe)
                    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c_ = c[..., None]
                s_ = s[..., None]
                ap = a[..., :, p].copy()
                aq = a[..., :, q].copy()
                a[..., :, p] = c_ * ap - s_ * aq
                a[..., :, q] = s_ * ap + c_ * aq
                ap = a[..., p, :].copy()
                aq = a[..., q, :].copy()
                a[..., p, :] = c_ * ap - s_ * aq
                a[..., q, :] = s_ * ap + c_ * aq
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c_ * vp - s_ * vq
                v[..., :, q] = s_ * vp + c_ * vq
    else:
        if not np.all(_off_norm(a) < tol * scale):
            raise NumericError("Jacobi eigensolver did not converge")

    w = np.diagonal(a, axis1=-2, axis2=-1).copy()
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return SymEig(w, v)


def hermitian_eigvalsh(h: np.ndarray, tol: float = OFF_TOL) -> np.ndarray:
    """Eigenvalues of a complex Hermitian matrix (ascending).

    Uses the real embedding ``[[Re, -Im], [Im, Re]]`` whose spectrum is that
    of ``h`` with every eigenvalue doubled.
    """
    h = np.asarray(h, dtype=complex)
    re, im = h.real, h.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    w = jacobi_eigh(np.concatenate([top, bottom], axis=-2), tol=tol).values
    return w[..., ::2]


def _complete_columns(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace columns flagged ``~good`` by an orthonormal completion."""
    u = u.copy()
    m, n = u.shape
    basis = [u[:, j] for j in range(n) if good[j]]
    candidates = iter(np.eye(m))
    for j in range(n):
        if good[j]:
            continue
        while True:
            e = next(candidates)
            for b in basis:
                e = e - (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 1e-6:
                break
        u[:, j] = e / norm
        basis.append(u[:, j])
    return u


def jacobi_svd(a: np.ndarray, tol: float = 1e-15) -> SVD:
    """Thin SVD via one-sided (Hestenes) Jacobi rotations.

    For ``m >= n`` returns ``U`` of shape (m, n); wide inputs are handled by
    transposing. Singular values are sorted in descending order; columns of
    ``U`` belonging to zero singular values are filled with an orthonormal
    completion so that ``U`` always has orthonormal columns.
    """
    a = np.array(a, dtype=float, copy=True)
    _check_finite(a)
    m, n = a.shape[-2:]
    if m < n:
        res = jacobi_svd(np.swapaxes(a, -1, -2), tol=tol)
        return SVD(res.V, res.s, res.U)

    v = np.broadcast_to(np.eye(n), a.shape[:-2] + (n, n)).copy()
    # columns below this squared norm are numerically zero and never rotated
    negligible = (np.finfo(float).eps ** 2) * np.sum(a * a, axis=(-2, -1))
    for _ in range(MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                colp = a[..., :, p]
                colq = a[..., :, q]
                alpha = np.sum(colp * colp, axis=-1)
                beta = np.sum(colq * colq, axis=-1)
                gamma = np.sum(colp * colq, axis=-1)
                active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
                active &= np.minimum(alpha, beta) > negligible
                active &= np.abs(gamma) > 1e-300
                if not np.any(active):
                    continue
                rotated = True
                safe = np.where(active, gamma, 1.0)
                with np.errstate(over="ignore"):
                    zeta = (beta - alpha) / (2.0 * safe)
                    t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(zeta, 1.0))
                t = np.where(active, t, 0.0)
                c = (1.0 / np.sqrt(1.0 + t * t))[..., None]
                s = c * t[..., None]
                ap = colp.copy()
                aq = colq.copy()
                a[..., :, p] = c * ap - s * aq
                a[..., :, q] = s * ap + c * aq
                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c * vp - s * vq
                v[..., :, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise NumericError("Jacobi SVD did not converge")

    s = np.sqrt(np.sum(a * a, axis=-2))
    order = np.argsort(-s, axis=-1, kind="stable")
    s = np.take_along_axis(s, order, axis=-1)
    a = np.take_along_axis(a, order[..., None, :], axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)

    smax = s[..., :1]
    good = s > 1e-14 * np.maximum(smax, 1e-300)
    u = a / np.where(good, s, 1.0)[..., None, :]
    if not np.all(good):
        flat_u = u.reshape(-1, m, n)
        flat_good = np.broadcast_to(good, s.shape).reshape(-1, n)
        for k in range(flat_u.shape[0]):
            if not np.all(flat_good[k]):
                flat_u[k] = _complete_columns(flat_u[k], flat_good[k])
        u = flat_u.reshape(a.shape)
    return SVD(u, s, v)


def pinv(a: np.ndarray, cutoff: float = 1e-12) -> tuple[np.ndarray, int]:
    """Moore-Penrose pseudoinverse of a single matrix and its numerical rank.

    Singular values below the absolute ``cutoff`` are treated as zero.
    """
    res = jacobi_svd(a)
    keep = res.s >= cutoff
    inv_s = np.where(keep, 1.0 / np.where(keep, res.s, 1.0), 0.0)
    return (res.V * inv_s) @ res.U.T, int(np.sum(keep))
