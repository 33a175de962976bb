"""Acceptance criteria AC-1 .. AC-8, each at its stated tolerance and runtime budget."""

import hashlib
import json
import time

import numpy as np
import pytest

from weakhyp.pipeline import run_pipeline, threshold_table
from weakhyp.scenarios import builtin
from weakhyp.solver import lift_initial, solve_original, solve_reduced, synthesize_gevrey
from weakhyp.symbols import ReducedSystem, SystemSpec, adjugate_symbol, bracket, char_poly, \
    eval_system
from weakhyp.solver import FrequencyGrid


@pytest.fixture(scope="module")
def wave_run(tmp_path_factory):
    t0 = time.perf_counter()
    res = run_pipeline(builtin("wave_t2"), out=tmp_path_factory.mktemp("run1"))
    return res, time.perf_counter() - t0


def _doc(res, name):
    return json.loads((res.out_dir / name).read_text())


def _random_system(rng, m):
    n = int(rng.integers(1, 4))

    def poly():
        c = [float(x) for x in rng.normal(size=3)]
        sign = ["-" if x < 0 else "+" for x in c]
        return f"{c[0]!r} {sign[1]} {abs(c[1])!r}*t {sign[2]} {abs(c[2])!r}*t^2"
    A = [[[poly() for _ in range(n)] for _ in range(m)] for _ in range(m)]
    return SystemSpec.from_strings(m, n, 1.0, 1.0, A)


def test_ac1_reduction(ac_report):
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst, m1_exact = 0.0, True
    for k in range(200):
        m = 1 + k % 4
        spec = _random_system(rng, m)
        t = float(rng.uniform(0, 1))
        xi = rng.normal(size=spec.n) * 2.0 ** rng.uniform(-2, 8)
        A, _ = eval_system(spec, t, xi)
        size = 1.0 + np.linalg.norm(A, 2)
        tau = size * rng.uniform() * np.exp(2j * np.pi * rng.uniform())
        L = adjugate_symbol(spec, t, xi)(tau)
        b = char_poly(A.astype(complex))
        delta = tau**m + sum(b[j - 1] * tau ** (m - j) for j in range(1, m + 1))
        res = np.linalg.norm(L @ (tau * np.eye(m) - A) - delta * np.eye(m), 2)
        worst = max(worst, res / size**m)
        if m == 1:
            m1_exact &= bool(np.all(L == 1.0) and res == 0.0)
    dt = time.perf_counter() - t0
    ok = ac_report("AC-1", worst <= 1e-10 and m1_exact and dt < 10,
                   f"max scaled residual {worst:.3g}, m=1 exact {m1_exact}, {dt:.1f}s")
    assert ok


@pytest.mark.parametrize("name", ["wave_t2", "holder_abs(0.5)"])
def test_ac2_regularized_roots(name, tmp_path, ac_report):
    t0 = time.perf_counter()
    res = run_pipeline(builtin(name), ["eigen"], out=tmp_path)
    dt = time.perf_counter() - t0
    doc = _doc(res, "eigen.json")
    eps = [p["eps"] for p in doc["regularization"]]
    ci = [p["c_i"] for p in doc["regularization"]]
    cii = [p["c_ii"] for p in doc["regularization"]]
    ok = ac_report(
        f"AC-2[{name}]",
        doc["constants_stable"] and doc["separated"] and dt < 30
        and eps == [2.0**-k for k in range(3, 10)],
        f"c_i in [{min(ci):.3g}, {max(ci):.3g}], c_ii in [{min(cii):.3g}, {max(cii):.3g}], "
        f"separated {doc['separated']}, {dt:.1f}s")
    assert ok


def test_ac3_scaling_laws(tmp_path, ac_report):
    t0 = time.perf_counter()
    fits = _doc(run_pipeline(builtin("wave_t2"), ["energy-scan"], out=tmp_path),
                "energy_fits.json")["fits"]
    fits_b = _doc(run_pipeline(builtin("wave_t2_b"), ["energy-scan"], out=tmp_path),
                  "energy_fits.json")["fits"]
    dt = time.perf_counter() - t0
    alpha, m = 1.0, 2
    s1, s2, s3, s4 = (fits["q1"]["slope"], fits["q2"]["slope"], fits["q3"]["slope"],
                      fits_b["q4"]["slope"])
    ok = (-1.15 <= s1 <= -0.85 and -1.15 <= s2 <= -0.85
          and alpha - 0.15 <= s3 <= alpha + 0.15
          and s4 >= alpha * (1 - m) - 0.15 and dt < 120)
    ac_report("AC-3", ok, f"slopes q1 {s1:.4f}, q2 {s2:.4f}, q3/<xi> {s3:.4f}, "
                          f"q4 (nonzero B) {s4:.4f}, {dt:.1f}s")
    assert ok


@pytest.mark.parametrize("name", ["wave_t2", "triple_degenerate"])
def test_ac4_consistency(name, ac_report):
    scn = builtin(name)
    spec = scn.system
    m = spec.m
    t0 = time.perf_counter()
    grid = FrequencyGrid.log_spaced(K=7)
    data = synthesize_gevrey(1.5, 1.0, grid, m)
    t = np.linspace(0, spec.T, scn.grid.N_t)
    reduced = ReducedSystem(spec)
    worst = 0.0
    for i in range(len(grid.radii)):
        for d in range(len(grid.directions)):
            xi, g = grid.xi(i, d), data.unit_vector(i, d)
            u = solve_original(spec, xi, g, t).u
            V = solve_reduced(reduced, xi, lift_initial(spec, xi, g), t).V
            xb = float(bracket(xi))
            for c in range(m):
                ref = xb ** (m - 1) * u[:, c]
                worst = max(worst, np.max(np.abs(ref - V[:, c * m])) / np.max(np.abs(ref)))
    dt = time.perf_counter() - t0
    ok = ac_report(f"AC-4[{name}]", worst <= 1e-6 and dt < 120,
                   f"max relative error {worst:.3g} over radii <= 2^7, {dt:.1f}s")
    assert ok


def test_ac5_energy_monotonicity(wave_run, ac_report):
    res, _ = wave_run
    chk = _doc(res, "energy_check_s1p8.json")
    plan = _doc(res, "plan_s1p8.json")
    dt = res.manifest["timings_s"]["solve"]
    inc = [r for r, keep in zip(chk["ratios"], chk["included"]) if keep]
    radii = [r for r, keep in zip(chk["radii"], chk["included"]) if keep]
    worst = max(inc) if inc else float("inf")
    ok = ac_report(
        "AC-5",
        bool(inc) and worst <= 1 + 1e-8 and max(radii) == 2.0**12
        and plan["gamma"] == 0.5 and dt < 180,
        f"Xi0 {plan['Xi0']:g}, kappa {plan['kappa']:.4g}, max |W(t)|/|W(0)| {worst!r} over "
        f"{len(inc)} modes, solve {dt:.1f}s")
    assert ok


def test_ac6_gevrey_preservation(wave_run, ac_report):
    res, _ = wave_run
    fit = _doc(res, "gevrey_fit.json")
    dt = res.manifest["timings_s"]["solve"] + res.manifest["timings_s"]["gevrey-fit"]
    pred = fit["predicted_delta"]
    ok = (fit["s0"] == 1.5 and fit["delta0"] == 1.0 and pred is not None and pred > 0
          and fit["delta"] is not None and fit["delta"] >= pred
          and fit["residual"] <= 0.05 and dt < 180)
    ac_report("AC-6", ok,
              f"fitted delta {fit['delta']!r} (residual {fit['residual']:.3g}), "
              f"required delta0 - kappa*T = {pred!r} > 0, {dt:.1f}s")
    assert ok


def test_ac7_thresholds(ac_report):
    t0 = time.perf_counter()
    rows = threshold_table(np.linspace(0.05, 1.0, 20), [1, 2, 3, 4, 5])
    (r12,) = threshold_table([1.0], [2])
    (r_half3,) = threshold_table([0.5], [3])
    dt = time.perf_counter() - t0
    ok = (len(rows) == 100 and all(r[4] >= 0 for r in rows)
          and r12[2:4] == (2.0, 1.5) and r_half3[2] == 1.5
          and r_half3[3] == pytest.approx(7 / 6, abs=1e-15) and dt < 1)
    ac_report("AC-7", ok, f"s*(1,2)={r12[2]}, yuzawa {r12[3]}; s*(1/2,3)={r_half3[2]}, "
                          f"yuzawa {r_half3[3]:.6f}; min improvement "
                          f"{min(r[4] for r in rows):.3g} on 20x5 grid, {dt * 1e3:.1f}ms")
    assert ok


def test_ac8_determinism(wave_run, tmp_path, ac_report):
    first, dt1 = wave_run
    t0 = time.perf_counter()
    second = run_pipeline(builtin("wave_t2"), out=tmp_path)
    dt = dt1 + time.perf_counter() - t0

    def digests(res):
        out = {f["path"]: f["sha256"] for f in res.manifest["files"]}
        for p in res.out_dir.iterdir():
            if p.name != "manifest.json":
                assert hashlib.sha256(p.read_bytes()).hexdigest() == out[p.name]
        return out

    a, b = digests(first), digests(second)
    ok = ac_report("AC-8", a == b and len(a) > 0 and dt < 300,
                   f"{len(a)} files, checksums identical {a == b}, two runs {dt:.1f}s")
    assert ok
