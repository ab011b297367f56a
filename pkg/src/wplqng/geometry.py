"""Principal contractions of a Bloch map and the weighted-projective-line surrogate.

The map from contractions ``(lam_perp, lam_par)`` to WPL parameters
``(a/b, b, R)`` is not unique across the literature, so every entry point
takes an explicit :class:`Convention`:

``SEC5``
    ``b = lam_perp``, ``a/b = lam_par / lam_perp``, ``R = 2 / lam_perp**2``.
``PROP33``
    ``b = 1 / lam_perp``, ``a/b = lam_par / lam_perp``, ``R = 2 * lam_perp**2``.
``HW``
    ``b = lam_perp``, ``a/b = sqrt(lam_perp / lam_par)``, ``R = 2 / lam_perp**2``.

In all three ``R == 2 / b**2`` holds exactly as stored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericError
from .linalg import jacobi_svd

DEFAULT_EPSILON = 1e-4
DEFAULT_DELTA = 1e-2

BRANCH_LEADING_PAIR = 1
BRANCH_TRAILING_PAIR = 2
BRANCH_NONE = 3


class Convention(str, enum.Enum):
    SEC5 = "SEC5"
    PROP33 = "PROP33"
    HW = "HW"

    @classmethod
    def parse(cls, value: "Convention | str") -> "Convention":
        if isinstance(value, Convention):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown convention {value!r}; expected one of sec5, prop33, hw") from None


@dataclass(frozen=True)
class RegularizedSvd:
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def matrix(self) -> np.ndarray:
        return (self.U * self.s[..., None, :]) @ np.swapaxes(self.V, -1, -2)


def svd_regularize(T: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> RegularizedSvd:
    """SVD of ``T`` with singular values reflected to ``|s|`` and clipped to ``[epsilon, 1]``.

    Works on a single 3x3 matrix or on a stack ``(..., 3, 3)``.
    """
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)):
        raise NumericError("Bloch matrix contains non-finite entries")
    res = jacobi_svd(T)
    s = np.clip(np.abs(res.s), epsilon, 1.0)
    return RegularizedSvd(res.U, s, res.V, epsilon)


@dataclass(frozen=True)
class PrincipalContractions:
    lam_perp: float
    lam_par: float
    phase_covariant: bool = True
    branch: int = BRANCH_LEADING_PAIR


TIE_BREAKS = ("first", "tighter")


def _extract_arrays(s: np.ndarray, delta: float, tie_break: str = "first") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if tie_break not in TIE_BREAKS:
        raise DomainError(f"tie_break must be one of {TIE_BREAKS}, got {tie_break!r}")
    s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2]
    gap12, gap23 = np.abs(s1 - s2), np.abs(s2 - s3)
    first = gap12 <= delta
    if tie_break == "tighter":
        first &= ~((gap23 <= delta) & (gap23 < gap12))
    second = ~first & (gap23 <= delta)
    lam_perp = np.where(second, 0.5 * (s2 + s3), 0.5 * (s1 + s2))
    lam_par = np.where(second, s1, s3)
    branch = np.where(first, BRANCH_LEADING_PAIR, np.where(second, BRANCH_TRAILING_PAIR, BRANCH_NONE))
    return lam_perp, lam_par, branch


def extract_contractions(
    svd: RegularizedSvd, delta: float = DEFAULT_DELTA, tie_break: str = "first"
) -> PrincipalContractions:
    """Pick the transversal pair from near-degenerate singular values.

    ``|s1 - s2| <= delta`` selects (s1, s2) as the transversal pair; otherwise
    ``|s2 - s3| <= delta`` selects (s2, s3). With no near-degenerate pair the
    channel is flagged as not phase-covariant and (s1, s2) is used anyway as
    a coarse surrogate.

    ``tie_break="tighter"`` changes only the case where both pairs are within
    ``delta``: the pair with the strictly smaller gap wins. Shot-noise
    pipelines need this because a wide ``delta`` can also cover the true
    contraction gap.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    s = np.asarray(svd.s, dtype=float)
    if s.shape != (3,):
        raise ValueError("extract_contractions expects a single set of 3 singular values")
    lp, lq, br = _extract_arrays(s, delta, tie_break)
    return PrincipalContractions(float(lp), float(lq), bool(br != BRANCH_NONE), int(br))


@dataclass(frozen=True)
class WplParams:
    a_over_b: float
    b: float
    R: float
    kappa: float = 1.0  # stored only; has no role in the metric
    convention: Convention = Convention.SEC5

    def __post_init__(self) -> None:
        for name in ("a_over_b", "b", "R", "kappa"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")

    @classmethod
    def from_ratio(cls, a_over_b: float, b: float, convention: Convention | str = Convention.SEC5) -> "WplParams":
        return cls(float(a_over_b), float(b), scalar_curvature(b), 1.0, Convention.parse(convention))

    def as_dict(self) -> dict:
        return {"a_over_b": self.a_over_b, "b": self.b, "R": self.R, "kappa": self.kappa,
                "convention": self.convention.value}


def _wpl_arrays(lam_perp, lam_par, convention: Convention):
    lam_perp = np.asarray(lam_perp, dtype=float)
    lam_par = np.asarray(lam_par, dtype=float)
    if convention is Convention.SEC5:
        b, ratio = lam_perp, lam_par / lam_perp
    elif convention is Convention.PROP33:
        b, ratio = 1.0 / lam_perp, lam_par / lam_perp
    elif convention is Convention.HW:
        b, ratio = lam_perp, np.sqrt(lam_perp / lam_par)
    else:  # pragma: no cover - Convention.parse guards this
        raise ConfigError(f"unknown convention {convention!r}")
    return ratio, b, 2.0 / (b * b)


def wpl_from_contractions(c: PrincipalContractions, convention: Convention | str) -> WplParams:
    conv = Convention.parse(convention)
    if not (0 < c.lam_perp <= 1 and 0 < c.lam_par <= 1):
        raise DomainError("contractions must lie in (0, 1]")
    ratio, b, R = _wpl_arrays(c.lam_perp, c.lam_par, conv)
    return WplParams(float(ratio), float(b), float(R), 1.0, conv)


def scalar_curvature(b: float) -> float:
    if not b > 0:
        raise DomainError("curvature radius b must be positive")
    return 2.0 / (b * b)


def orbifold_area(a: float, b: float) -> float:
    """Area ``2 pi b^2 (1/a + 1/b)`` from the orbifold Gauss-Bonnet formula."""
    if not (a > 0 and b > 0):
        raise DomainError("orbifold weights must be positive")
    return 2.0 * np.pi * b * b * (1.0 / a + 1.0 / b)


@dataclass(frozen=True)
class MetricSample:
    point: tuple[float, float]
    matrix: np.ndarray


def noisy_fs_metric(theta: float, lam_perp: float, lam_par: float, phi: float = 0.0) -> MetricSample:
    """First-order metric of the pure-state manifold seen through diag(lp, lp, lq)."""
    if not 0.0 <= theta <= np.pi:
        raise DomainError("theta must lie in [0, pi]")
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    g = np.diag([0.25 * (lam_par**2 * c2 + lam_perp**2 * s2), 0.25 * lam_perp**2 * s2])
    return MetricSample((theta, phi), g)


def wpl_block(sin2: float, params: WplParams) -> np.ndarray:
    """``diag(b^2, b^2 sin^2 (a/b)^2)`` for a given ``sin^2`` of the polar angle."""
    b2 = params.b * params.b
    return np.diag([b2, b2 * max(sin2, 0.0) * params.a_over_b**2])


def wpl_metric(theta: float, params: WplParams, phi: float = 0.0) -> MetricSample:
    if not 0.0 < theta < np.pi:
        raise DomainError("theta must lie in the open interval (0, pi)")
    return MetricSample((theta, phi), wpl_block(np.sin(theta) ** 2, params))


def bures_metric(r: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    n2 = float(r @ r)
    if n2 >= 1.0:
        raise DomainError("Bures metric diverges on the boundary |r| = 1")
    d = 1.0 - n2
    return np.eye(3) / d + np.outer(r, r) / (d * d)


def gaussian_curvature_integral(params: WplParams, order: int = 64) -> float:
    """Gauss-Legendre quadrature of ``K dA`` over the (theta, phi) chart.

    ``K = R / 2`` and ``dA = sqrt(det g) dtheta dphi`` with ``g`` the WPL chart
    metric. For ``a/b = 1`` this is the Gauss-Bonnet integral ``4 pi``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * np.pi * (x + 1.0)
    wt = 0.5 * np.pi * w
    dets = np.array([np.linalg.det(wpl_block(np.sin(t) ** 2, params)) for t in theta])
    k = 0.5 * params.R
    return float(2.0 * np.pi * np.sum(wt * k * np.sqrt(dets)))


def wpl_report(c: PrincipalContractions, p: WplParams, epsilon: float, delta: float) -> dict:
    return {
        "lambda_perp": c.lam_perp,
        "lambda_par": c.lam_par,
        "phase_covariant": c.phase_covariant,
        "branch": c.branch,
        "convention": p.convention.value,
        "a_over_b": p.a_over_b,
        "b": p.b,
        "R": p.R,
        "epsilon": epsilon,
        "delta": delta,
    }
