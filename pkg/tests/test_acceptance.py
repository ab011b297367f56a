"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import time

import numpy as np

from wplqng.cli import main
from wplqng.fisher import LowRankCorrection, PseudoInverseConfig, check_step_size, pseudo_inverse, woodbury_pinv
from wplqng.geometry import (
    BRANCH_LEADING_PAIR,
    BRANCH_NONE,
    BRANCH_TRAILING_PAIR,
    RegularizedSvd,
    WplParams,
    extract_contractions,
    gaussian_curvature_integral,
    orbifold_area,
    scalar_curvature,
    wpl_block,
)
from wplqng.quantum import PauliHamiltonian, channel_to_bloch_map, exact_ground_energy, make_channel
from wplqng.tomography import (
    DEFAULT_PROBES,
    PipelineConfig,
    bootstrap_wpl,
    estimate_wpl,
    fit_affine_map,
    idle_channel,
    run_tomography,
)
from wplqng.vqe import HAMILTONIAN_TERMS, OptimizerConfig, default_problem, run_ablation, run_vqe

TAU = 1e-3


def _analytic(kind, p):
    if kind == "dephasing":
        return np.diag([1 - 2 * p, 1 - 2 * p, 1.0]), np.zeros(3)
    if kind == "depolarizing":
        return (1 - p) * np.eye(3), np.zeros(3)
    if kind == "amplitude_damping":
        return np.diag([np.sqrt(1 - p), np.sqrt(1 - p), 1 - p]), np.array([0.0, 0.0, p])
    return np.eye(3), np.zeros(3)


CHANNELS = [("dephasing", p) for p in (0.0, 0.05, 0.2, 0.5)]
CHANNELS += [(k, p) for k in ("depolarizing", "amplitude_damping") for p in (0.0, 0.05, 0.2, 0.5, 0.9, 1.0)]
CHANNELS.append(("identity", 0.0))


def _fit_error(kind, p, shots, seed):
    rec = run_tomography(make_channel(kind, p), shots=shots, seed=seed)
    T, _ = _analytic(kind, p)
    return np.linalg.norm(fit_affine_map(DEFAULT_PROBES.vectors, rec.expectations()).T - T)


def test_criterion_01_ground_energy(criterion):
    t0 = time.perf_counter()
    e0 = exact_ground_energy(PauliHamiltonian(HAMILTONIAN_TERMS))
    elapsed = time.perf_counter() - t0
    target = -2.016552506059644
    criterion("1 ground energy", abs(e0 - target) <= 1e-9 and elapsed < 1.0,
              f"computed {e0:.15f}, target {target}, |diff| {abs(e0 - target):.3e}, {elapsed:.3f}s")


def test_criterion_02_curvature_constant(criterion):
    r09, r1 = scalar_curvature(0.9), scalar_curvature(1.0)
    criterion("2 curvature constant", abs(r09 - 2.4691358) <= 1e-6 and r1 == 2.0, f"R(0.9) = {r09:.9f}, R(1) = {r1!r}")


def test_criterion_03_channel_oracles(criterion):
    worst = 0.0
    for kind, p in CHANNELS:
        m = channel_to_bloch_map(make_channel(kind, p))
        T, c = _analytic(kind, p)
        worst = max(worst, np.abs(m.T - T).max(), np.abs(m.c - c).max())
    ad = channel_to_bloch_map(make_channel("amplitude_damping", 0.2))
    ad_ok = np.allclose(np.diag(ad.T), [0.894427, 0.894427, 0.8], atol=1e-6) and np.allclose(ad.c, [0, 0, 0.2])
    criterion("3 channel oracles", worst <= 1e-12 and ad_ok,
              f"max deviation {worst:.2e}; AD(0.2) diag {np.round(np.diag(ad.T), 6).tolist()}, c {ad.c.tolist()}")


def test_criterion_04_tomography_recovery(criterion):
    t0 = time.perf_counter()
    exact_err = 0.0
    for kind, p in CHANNELS:
        rec = run_tomography(make_channel(kind, p), shots=None)
        fit = fit_affine_map(DEFAULT_PROBES.vectors, rec.expectations())
        T, c = _analytic(kind, p)
        exact_err = max(exact_err, np.abs(fit.T - T).max(), np.abs(fit.c - c).max())
    shot_channels = [("amplitude_damping", 0.2), ("depolarizing", 0.1), ("dephasing", 0.25)]
    medians = {f"{k}({p})": float(np.median([_fit_error(k, p, 4096, s) for s in range(50)])) for k, p in shot_channels}
    Ns = [1000, 4000, 16000, 64000]
    slopes = {}
    for k, p in shot_channels:
        errs = [np.median([_fit_error(k, p, n, s) for s in range(50)]) for n in Ns]
        slopes[f"{k}({p})"] = float(np.polyfit(np.log(Ns), np.log(errs), 1)[0])
    elapsed = time.perf_counter() - t0
    ok = (exact_err <= 1e-10 and max(medians.values()) < 0.05
          and all(abs(s + 0.5) <= 0.15 for s in slopes.values()) and elapsed < 30)
    criterion("4 tomography recovery", ok,
              f"exact max err {exact_err:.1e}; medians {({k: round(v, 4) for k, v in medians.items()})}; "
              f"slopes {({k: round(v, 3) for k, v in slopes.items()})}; {elapsed:.1f}s")


def test_criterion_05_pseudoinverse_axioms(criterion):
    rng = np.random.default_rng(5)
    worst, clip_ok = 0.0, True
    for _ in range(100):
        n = int(rng.integers(1, 9))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        w = 10.0 ** rng.uniform(-6, 1, n)
        w[np.abs(w - TAU) < 1e-6] = 0.0
        F = (q * w) @ q.T
        F = 0.5 * (F + F.T)
        Fp = pseudo_inverse(F, PseudoInverseConfig(TAU))
        lam, W = np.linalg.eigh(F)
        Wk = W[:, lam >= TAU]
        P = Wk @ Wk.T
        worst = max(worst, np.abs(P @ F @ Fp @ F @ P - P @ F @ P).max())
        inv_eigs = np.linalg.eigvalsh(Fp)
        clip_ok &= int(np.sum(np.abs(inv_eigs) > 1e-9)) == int(np.sum(w >= TAU))
        clip_ok &= np.allclose(np.sort(inv_eigs[np.abs(inv_eigs) > 1e-9]), np.sort(1.0 / w[w >= TAU]), rtol=1e-8)
    criterion("5 pseudoinverse axioms", worst <= 1e-10 and clip_ok,
              f"max |P(F F+ F - F)P| = {worst:.2e}; clipped set exact: {clip_ok}")


def test_criterion_06_woodbury(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        n, r = int(rng.integers(2, 9)), int(rng.integers(1, 3))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        F = (q * rng.uniform(0.2, 3.0, n)) @ q.T
        U = rng.normal(size=(n, r)) * 0.5
        V = rng.normal(size=(n, r)) * 0.5
        dense = np.linalg.inv(F + U @ V.T)
        got = woodbury_pinv(np.linalg.inv(F), LowRankCorrection(U, V))
        worst = max(worst, np.abs(got - dense).max())
    criterion("6 Woodbury equivalence", worst <= 1e-8, f"max deviation {worst:.2e} over 50 instances")


def test_criterion_07_step_size_bounds(criterion):
    rng = np.random.default_rng(7)
    eta, C = 0.05, 1.0
    checks = violations = 0
    for _ in range(100):
        p = WplParams.from_ratio(rng.uniform(0.05, 1.0), rng.uniform(0.2, 1.0))
        F = wpl_block(np.sin(rng.uniform(0, np.pi)) ** 2, p)
        lam, W = np.linalg.eigh(F)
        Wk = W[:, lam >= TAU]
        for _ in range(100):
            g = Wk @ rng.normal(size=Wk.shape[1])
            res = check_step_size(F, g, eta, TAU, C, p.R)
            checks += 1
            violations += (not res.within) + len(res.violations)
    criterion("7 step-size bounds", violations == 0, f"{violations} violations in {checks} checks")


def test_criterion_08_orbifold_area(criterion):
    area = orbifold_area(1, 1)
    quad = gaussian_curvature_integral(WplParams.from_ratio(1.0, 1.0))
    criterion("8 orbifold area", abs(area - 4 * np.pi) <= 1e-12 and abs(quad - 4 * np.pi) <= 1e-6,
              f"area - 4pi = {area - 4 * np.pi:.1e}, quadrature - 4pi = {quad - 4 * np.pi:.1e}")


def test_criterion_09_bootstrap_coverage(criterion):
    t0 = time.perf_counter()
    ch = idle_channel(make_channel("dephasing", 0.05), 5)
    true_b = estimate_wpl(run_tomography(ch, shots=None), PipelineConfig("SEC5")).params.b
    pipe = PipelineConfig.for_shots(4096, "SEC5")
    hits = 0
    for trial in range(100):
        lo, hi = bootstrap_wpl(run_tomography(ch, shots=4096, seed=trial), 500, pipe, seed=trial).ci["b"]
        hits += lo <= true_b <= hi
    elapsed = time.perf_counter() - t0
    criterion("9 bootstrap coverage", hits >= 88 and elapsed < 120, f"{hits}/100 intervals cover b = {true_b:.5f}; "
              f"{elapsed:.1f}s")


def test_criterion_10_vqe_convergence(criterion):
    t0 = time.perf_counter()
    problem = default_problem()
    base = OptimizerConfig(shots=None, seed=1337)
    traces = [run_vqe(problem, OptimizerConfig(kind=k, shots=None, seed=1337))
              for k in ("euclid", "bloch_qng", "wpl_qng")]
    a_ok = all(len(tr) == 81 and tr.abs_error[-1] < tr.abs_error[0] for tr in traces)
    detail_a = ", ".join(f"{tr.label} {tr.abs_error[0]:.4f} -> {tr.abs_error[-1]:.4f}" for tr in traces)
    naive, pinv = run_ablation("naive_inverse", base, problem)
    ratio = max(naive.step_norm) / max(pinv.step_norm)
    iso = run_ablation("isotropic", base, problem)[0]
    c_ok = not iso.aborted and np.all(np.isfinite(np.column_stack([iso.energy, iso.exact_energy, iso.step_norm])))
    elapsed = time.perf_counter() - t0
    # recorded, not asserted
    print(f"isotropic final {iso.abs_error[-1]:.4f} vs euclid {traces[0].abs_error[-1]:.4f}")
    try:
        criterion("10a VQE descent", a_ok, detail_a)
    finally:
        try:
            criterion("10b naive-inverse blow-up", ratio >= 10,
                      f"max step naive {max(naive.step_norm):.3f} / pinv {max(pinv.step_norm):.3f} = {ratio:.2f}")
        finally:
            criterion("10c isotropic finite", c_ok and elapsed < 300, f"{len(iso)} rows, all finite; {elapsed:.1f}s")


def test_criterion_11_determinism(criterion, tmp_path):
    runs = {
        "tomo": ["tomo"],
        "vqe": ["vqe"],
        "drift": ["drift"],
        "ablate": ["ablate", "--set", "T_max=10"],
    }
    same = {}
    for name, argv in runs.items():
        first, second = tmp_path / f"{name}1", tmp_path / f"{name}2"
        rc1 = main([*argv, "--out", str(first)])
        rc2 = main(["rerun", str(first / "manifest.json"), "--out", str(second)])
        files1 = {p.name: p.read_bytes() for p in first.iterdir()}
        files2 = {p.name: p.read_bytes() for p in second.iterdir()}
        same[name] = rc1 == rc2 == 0 and files1 == files2 and len(files1) > 1
        assert json.loads(files1["manifest.json"])["command"] == name
    criterion("11 determinism", all(same.values()), f"byte-identical reruns: {same}")


def _svd(s):
    return RegularizedSvd(np.eye(3), np.array(s, dtype=float), np.eye(3))


def test_criterion_12_degeneracy_rule(criterion):
    a = extract_contractions(_svd([0.99, 0.5, 0.5]), 0.01)
    b = extract_contractions(_svd([0.9, 0.9, 0.9]), 0.01)
    c = extract_contractions(_svd([0.9, 0.6, 0.3]), 0.01)
    ok = ((a.branch, a.lam_perp, a.lam_par, a.phase_covariant) == (BRANCH_TRAILING_PAIR, 0.5, 0.99, True)
          and (b.branch, b.lam_perp, b.lam_par, b.phase_covariant) == (BRANCH_LEADING_PAIR, 0.9, 0.9, True)
          and c.branch == BRANCH_NONE and not c.phase_covariant)
    criterion("12 degeneracy rule", ok, f"branches {a.branch}, {b.branch}, {c.branch}")
