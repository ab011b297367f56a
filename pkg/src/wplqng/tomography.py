"""Prepare-and-measure Bloch tomography and the tomography-to-WPL pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np

from .errors import DesignDeficiencyError, DomainError, IncompleteRecordError, InvalidRecordError
from .geometry import (
    DEFAULT_DELTA,
    DEFAULT_EPSILON,
    TIE_BREAKS,
    Convention,
    PrincipalContractions,
    RegularizedSvd,
    WplParams,
    _extract_arrays,
    _wpl_arrays,
    extract_contractions,
    svd_regularize,
    wpl_from_contractions,
    wpl_report,
)
from .linalg import pinv
from .quantum import (
    AffineBlochMap,
    Circuit,
    NoiseSpec,
    ShotCounts,
    bloch_to_density,
    expectation,
    make_rng,
    sample_counts,
    simulate,
)

BASES = ("X", "Y", "Z")
DESIGN_CUTOFF = 1e-12


@dataclass(frozen=True)
class ProbeSet:
    labels: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        vecs = np.asarray(self.vectors, dtype=float).reshape(-1, 3)
        if len(self.labels) != len(vecs):
            raise ValueError("one label per probe vector")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("probe labels must be unique")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)


DEFAULT_PROBES = ProbeSet(("0", "1", "+", "+y"), [[0, 0, 1], [0, 0, -1], [1, 0, 0], [0, 1, 0]])
OVERCOMPLETE_PROBES = ProbeSet(
    ("0", "1", "+", "-", "+y", "-y"),
    [[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]],
)


@dataclass(frozen=True)
class CircuitChannel:
    """A single-qubit circuit plus its noise model, used as a channel."""

    circuit: Circuit
    noise: NoiseSpec = None

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return simulate(self.circuit, self.noise, initial=rho)


def idle_channel(noise: NoiseSpec, depth: int) -> CircuitChannel:
    return CircuitChannel(Circuit(1).idle(0, depth), noise)


_ROTATIONS = {
    "X": Circuit(1).h(0),
    "Y": Circuit(1).sdg(0).h(0),
    "Z": Circuit(1),
}


@dataclass(frozen=True)
class TomographyEntry:
    label: str
    basis: str
    counts: ShotCounts | None
    expectation: float


@dataclass(frozen=True)
class TomographyRecord:
    """Measured expectations for every (probe, basis) pair.

    ``shots is None`` marks an exact-expectation record (no sampling noise).
    """

    probes: ProbeSet
    entries: tuple[TomographyEntry, ...]
    shots: int | None
    seed: int | None
    n_circuits: int = 0

    @property
    def exact(self) -> bool:
        return self.shots is None

    def entry(self, label: str, basis: str) -> TomographyEntry:
        for e in self.entries:
            if e.label == label and e.basis == basis:
                return e
        raise IncompleteRecordError(f"record has no entry for probe {label!r}, basis {basis!r}")

    def expectations(self) -> np.ndarray:
        """Array of shape (n_probes, 3) in X, Y, Z order."""
        return np.array([estimate_bloch(self, lab) for lab in self.probes.labels])

    def plus_counts(self) -> np.ndarray:
        return np.array([[self.entry(lab, b).counts.n_plus for b in BASES] for lab in self.probes.labels])

    def to_dict(self) -> dict:
        return {
            "probes": [
                {
                    "label": e.label,
                    "basis": e.basis,
                    "n_plus": None if e.counts is None else e.counts.n_plus,
                    "n_minus": None if e.counts is None else e.counts.n_minus,
                    "expectation": e.expectation,
                }
                for e in self.entries
            ],
            "probe_vectors": {lab: vec.tolist() for lab, vec in zip(self.probes.labels, self.probes.vectors)},
            "shots": self.shots,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "TomographyRecord":
        vecs = doc.get("probe_vectors")
        labels = list(dict.fromkeys(p["label"] for p in doc["probes"]))
        if vecs is None:
            defaults = dict(zip(DEFAULT_PROBES.labels, DEFAULT_PROBES.vectors))
            vecs = {lab: defaults[lab] for lab in labels}
        probes = ProbeSet(tuple(labels), [vecs[lab] for lab in labels])
        entries = []
        for p in doc["probes"]:
            if p.get("n_plus") is None:
                entries.append(TomographyEntry(p["label"], p["basis"], None, float(p["expectation"])))
            else:
                counts = ShotCounts(int(p["n_plus"]), int(p["n_minus"]))
                entries.append(TomographyEntry(p["label"], p["basis"], counts, counts.mean))
        return cls(probes, tuple(entries), doc.get("shots"), doc.get("seed"), len(entries))


def run_tomography(
    channel: Callable[[np.ndarray], np.ndarray],
    probes: ProbeSet = DEFAULT_PROBES,
    shots: int | None = 4096,
    seed: int = 0,
    repetition: int = 0,
) -> TomographyRecord:
    """Send every probe through ``channel`` and measure it in X, Y and Z.

    ``channel`` is any callable mapping a 2x2 density matrix to another one
    (a :class:`NoiseChannel`, :class:`CircuitChannel` or ``AffineBlochMap``).
    With ``shots=None`` the exact expectations are recorded instead of counts.
    Every (probe, basis) circuit draws from its own sub-stream
    ``(seed, probe, basis, repetition)``.
    """
    if shots is not None and shots < 1:
        raise DomainError("shots must be >= 1")
    entries = []
    for i, (label, vec) in enumerate(zip(probes.labels, probes.vectors)):
        rho_out = channel(bloch_to_density(vec))
        for j, basis in enumerate(BASES):
            rotated = simulate(_ROTATIONS[basis], None, initial=rho_out)
            if shots is None:
                entries.append(TomographyEntry(label, basis, None, expectation(rotated, "Z")))
            else:
                counts = sample_counts(rotated, "Z", shots, make_rng(seed, i, j, repetition))
                entries.append(TomographyEntry(label, basis, counts, counts.mean))
    return TomographyRecord(probes, tuple(entries), shots, seed, len(entries))


def estimate_bloch(record: TomographyRecord, label: str) -> np.ndarray:
    return np.array([record.entry(label, b).expectation for b in BASES])


class BlochFit(NamedTuple):
    T: np.ndarray
    c: np.ndarray
    residual: float

    @property
    def map(self) -> AffineBlochMap:
        return AffineBlochMap(self.T, self.c)


def design_pinv(inputs: np.ndarray, affine: bool = True) -> np.ndarray:
    """Pseudoinverse of the (optionally ones-augmented) probe design matrix."""
    x = np.asarray(inputs, dtype=float).reshape(-1, 3)
    if affine:
        x = np.hstack([x, np.ones((len(x), 1))])
    need = 4 if affine else 3
    if len(x) < need:
        raise DesignDeficiencyError(f"{'affine' if affine else 'linear'} fit needs at least {need} probes")
    p, rank = pinv(x, DESIGN_CUTOFF)
    if rank < need:
        raise DesignDeficiencyError(f"probe design has rank {rank} < {need}")
    return p


def _fit(inputs, outputs, affine: bool) -> BlochFit:
    x = np.asarray(inputs, dtype=float).reshape(-1, 3)
    y = np.asarray(outputs, dtype=float).reshape(-1, 3)
    if len(x) != len(y):
        raise ValueError("inputs and outputs must pair up")
    coef = design_pinv(x, affine) @ y
    T = coef[:3].T
    c = coef[3] if affine else np.zeros(3)
    resid = y - x @ T.T - c
    return BlochFit(T, c, float(np.sum(resid * resid)))


def fit_affine_map(inputs: Sequence, outputs: Sequence) -> BlochFit:
    """Least-squares ``(T, c)`` minimising ``sum ||T r_i + c - r'_i||^2``."""
    return _fit(inputs, outputs, affine=True)


def fit_linear_map(inputs: Sequence, outputs: Sequence) -> BlochFit:
    """As :func:`fit_affine_map` with the translation forced to zero."""
    return _fit(inputs, outputs, affine=False)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of the record -> WPL pipeline; the convention has no default on purpose."""

    convention: Convention
    fit: Literal["affine", "linear"] = "affine"
    epsilon: float = DEFAULT_EPSILON
    delta: float = DEFAULT_DELTA
    tie_break: Literal["first", "tighter"] = "first"

    def __post_init__(self) -> None:
        object.__setattr__(self, "convention", Convention.parse(self.convention))
        if self.fit not in ("affine", "linear"):
            raise DomainError(f"fit must be 'affine' or 'linear', got {self.fit!r}")
        if not (self.epsilon > 0 and self.delta > 0):
            raise DomainError("epsilon and delta must be positive")
        if self.tie_break not in TIE_BREAKS:
            raise DomainError(f"tie_break must be one of {TIE_BREAKS}")

    @classmethod
    def for_shots(cls, shots: int | None, convention: Convention | str, **kw) -> "PipelineConfig":
        """Shot-aware defaults: ``delta = shot_scaled_delta(shots)`` and the tighter-pair tie-break."""
        return cls(convention, delta=shot_scaled_delta(shots), tie_break="tighter", **kw)


def shot_scaled_delta(shots: int | None, k: float = 6.0, floor: float = DEFAULT_DELTA) -> float:
    """Degeneracy tolerance that grows with the shot-noise scale ``k / sqrt(N)``."""
    if shots is None:
        return floor
    return max(floor, k / np.sqrt(shots))


@dataclass(frozen=True)
class PipelineResult:
    fit: BlochFit
    svd: RegularizedSvd
    contractions: PrincipalContractions
    params: WplParams
    config: PipelineConfig

    def report(self) -> dict:
        return wpl_report(self.contractions, self.params, self.config.epsilon, self.config.delta)


def estimate_wpl(record: TomographyRecord, config: PipelineConfig) -> PipelineResult:
    """record -> Bloch map -> regularised SVD -> contractions -> WPL parameters."""
    outputs = record.expectations()
    fitter = fit_affine_map if config.fit == "affine" else fit_linear_map
    fit = fitter(record.probes.vectors, outputs)
    svd = svd_regularize(fit.T, config.epsilon)
    contractions = extract_contractions(svd, config.delta, config.tie_break)
    params = wpl_from_contractions(contractions, config.convention)
    return PipelineResult(fit, svd, contractions, params, config)


PARAM_NAMES = ("a_over_b", "b", "R")


@dataclass(frozen=True)
class BootstrapReport:
    B: int
    samples: np.ndarray  # (B, 3): a_over_b, b, R
    point: dict
    ci: dict
    seed: int
    level: float = 0.95

    def to_dict(self) -> dict:
        summary = {
            name: {"mean": float(np.mean(self.samples[:, k])), "std": float(np.std(self.samples[:, k], ddof=1))}
            for k, name in enumerate(PARAM_NAMES)
        }
        return {"point": self.point, "ci": self.ci, "B": self.B, "seed": self.seed,
                "level": self.level, "samples_summary": summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def width(self, name: str) -> float:
        lo, hi = self.ci[name]
        return hi - lo

    def std(self, name: str) -> float:
        return float(np.std(self.samples[:, PARAM_NAMES.index(name)], ddof=1))


def bootstrap_wpl(
    record: TomographyRecord,
    B: int,
    config: PipelineConfig,
    seed: int = 0,
    level: float = 0.95,
) -> BootstrapReport:
    """Parametric bootstrap of the full pipeline with percentile intervals.

    Each replicate redraws every (probe, basis) count from
    ``Binomial(N, n_plus / N)`` on its own stream ``(seed, replicate)`` and
    reruns fit, regularisation, extraction and the WPL map with the same
    configuration.
    """
    if B < 2:
        raise DomainError("bootstrap needs B >= 2")
    point = estimate_wpl(record, config).params
    point_vec = np.array([point.a_over_b, point.b, point.R])

    if record.exact:
        samples = np.tile(point_vec, (B, 1))
    else:
        if not record.shots or record.shots <= 0:
            raise InvalidRecordError("record has no shots")
        N = record.shots
        try:
            probs = record.plus_counts() / N
        except AttributeError:
            raise InvalidRecordError("shot record is missing counts") from None
        draws = np.stack([make_rng(seed, k).binomial(N, probs) for k in range(B)])
        outputs = (2.0 * draws - N) / N  # (B, P, 3)
        affine = config.fit == "affine"
        coef = design_pinv(record.probes.vectors, affine) @ outputs  # (B, 3|4, 3)
        T = np.swapaxes(coef[:, :3, :], -1, -2)
        svd = svd_regularize(T, config.epsilon)
        lp, lq, _ = _extract_arrays(svd.s, config.delta, config.tie_break)
        ratio, b, R = _wpl_arrays(lp, lq, config.convention)
        samples = np.column_stack([ratio, b, R])

    alpha = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(samples, [alpha, 100.0 - alpha], axis=0)
    ci = {name: [float(lo[k]), float(hi[k])] for k, name in enumerate(PARAM_NAMES)}
    point_d = {name: float(point_vec[k]) for k, name in enumerate(PARAM_NAMES)}
    return BootstrapReport(B, samples, point_d, ci, seed, level)


def identifiability_check(lam_perp: float, lam_par: float, shots: int, k: float = 5.0) -> Literal["resolved", "marginal"]:
    """``resolved`` iff the contraction gap exceeds ``k`` shot-noise units."""
    if shots < 1:
        raise DomainError("shots must be >= 1")
    return "resolved" if abs(lam_perp - lam_par) > k / np.sqrt(shots) else "marginal"
