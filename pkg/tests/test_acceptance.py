"""End-to-end acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Every preset is run once per session through the same path as ``cwiener run``
(scenario pipeline plus artifact writer); the criteria below read the recorded
checks and wall-clock timings of those runs.
"""

import time

import pytest

from cwiener.cli import write_artifacts
from cwiener.config import load_config
from cwiener.scenarios import PRESETS, run_scenario


class Run:
    def __init__(self, name, out_dir, threads=1):
        self.cfg = load_config(name)
        t0 = time.perf_counter()
        self.result = run_scenario(self.cfg, threads=threads)
        self.out = write_artifacts(self.cfg, self.result, out_dir)
        self.wall = time.perf_counter() - t0

    def value(self, name):
        return self.result.criterion(name).value

    def ok(self, *names):
        return all(self.result.criterion(n).passed for n in names)

    def timing(self, key="total"):
        return self.result.timings[key]


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    return {name: Run(name, base / name) for name in sorted(PRESETS)}


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def test_01_noise_covariance(runs, capsys):
    r = runs["noise-covariance-sweep"]
    t = r.timing("covariance")
    ok = r.ok("covariance_z", "hyperplane_ulps") and r.value("covariance_z") <= 3 and t < 10
    report(capsys, 1, ok, f"max |z| = {r.value('covariance_z'):.3f} (<= 3), hyperplane ulps = "
           f"{r.value('hyperplane_ulps'):.3g}, {t:.2f} s (< 10)")


def test_02_realizability(runs, capsys):
    r = runs["noise-covariance-sweep"]
    t = r.timing("realizability")
    ok = r.value("min_eigenvalue") >= -1e-12 and r.value("det_gamma0") <= 1e-12 and t < 1
    report(capsys, 2, ok, f"min eig = {r.value('min_eigenvalue'):.3g} (>= -1e-12), "
           f"|det| at gamma=0 = {r.value('det_gamma0'):.3g} (<= 1e-12), {t:.3f} s (< 1)")


def test_03_pde_correctness(runs, capsys):
    r = runs["free-packet-spreading"]
    t = r.timing()
    ok = (r.value("quantum_variance_rel") <= 1e-3 and r.value("heat_variance_rel") <= 1e-3
          and r.value("norm_drift_per_step") < 1e-10 and r.value("residual_order") >= 1.9 and t < 30)
    report(capsys, 3, ok, f"variance rel err quantum {r.value('quantum_variance_rel'):.2e} heat "
           f"{r.value('heat_variance_rel'):.2e} (<= 1e-3), norm drift/step {r.value('norm_drift_per_step'):.2e} "
           f"(< 1e-10), residual order {r.value('residual_order'):.3f} (>= 1.9), {t:.2f} s (< 30)")


def test_04_brownian_equivalence(runs, capsys):
    r = runs["ou-stationary"]
    t = r.timing()
    ok = (r.cfg.ensemble.count == 100000 and r.value("stationary_variance_rel") <= 0.02
          and r.value("density_l1") < 0.02 and r.value("forward_backward_z") <= 4
          and r.value("literal_equals_consistent") <= 1e-8 and t < 60)
    report(capsys, 4, ok, f"N = {r.cfg.ensemble.count}, var rel err {r.value('stationary_variance_rel'):.4f} "
           f"(<= 0.02), L1 vs oracle {r.value('density_l1'):.4f} (< 0.02), fwd/bwd |z| "
           f"{r.value('forward_backward_z'):.2f} (<= 4), literal - consistent "
           f"{r.value('literal_equals_consistent'):.1e}, {t:.2f} s (< 60)")


def test_05_quantum_equivalence(runs, capsys):
    r = runs["quantum-ho-ground"]
    t = r.timing()
    snaps = sorted(k for k in r.result.metrics if k.startswith("l1_density-consistent_t"))
    lit = r.result.criterion("literal_l1")
    ok = len(snaps) == 3 and r.value("density_l1") < 0.02 and not lit.asserted and t < 60
    report(capsys, 5, ok, f"max L1 over {len(snaps)} snapshots {r.value('density_l1'):.4f} (< 0.02), "
           f"literal-mode L1 {lit.value:.3f} (reported), {t:.2f} s (< 60)")


def test_06_ito_velocity_closure(runs, capsys):
    r = runs["ou-stationary"]
    t = r.timing()
    ok = r.value("ito_slope_rel") <= 0.05 and r.value("osmotic_rel") <= 0.10 and t < 60
    report(capsys, 6, ok, f"slope rel err {r.value('ito_slope_rel'):.4f} (<= 0.05), osmotic rel err "
           f"{r.value('osmotic_rel'):.4f} (<= 0.10), {t:.2f} s (< 60)")


def test_07_hamilton_jacobi(runs, capsys):
    r = runs["hamilton-jacobi-residual"]
    t = r.timing()
    ok = (r.value("ou_residual") <= 1e-10 and r.value("packet_order") >= 1.9
          and r.value("sign_flip_error") <= 1e-8 and t < 10)
    report(capsys, 7, ok, f"OU residual {r.value('ou_residual'):.2e} (<= 1e-10), packet order "
           f"{r.value('packet_order'):.3f} (>= 1.9), sign-flip deviation from 2 m w^2 x "
           f"{r.value('sign_flip_error'):.1e}, {t:.2f} s (< 10)")


def test_08_winding(runs, capsys):
    r = runs["ring-winding"]
    t = r.timing("winding")
    ok = r.value("winding_exact") == 0 and r.value("additivity") == 0 and t < 1
    report(capsys, 8, ok, f"winding mismatches {r.value('winding_exact'):g}, additivity mismatches "
           f"{r.value('additivity'):g}, {t:.3f} s (< 1)")


def test_09_uncertainty(runs, capsys):
    r = runs["uncertainty-family"]
    t = r.timing()
    fam = r.result.metrics["family_products"]
    ok = (r.value("gaussian_product") <= 1e-6 and r.value("family_margin") >= -1e-8 and len(fam) == 20
          and r.value("bound_formula") <= 1e-15 and t < 5)
    report(capsys, 9, ok, f"|Gaussian - 0.5| {r.value('gaussian_product'):.1e} (<= 1e-6), min margin over "
           f"{len(fam)} superpositions {r.value('family_margin'):.4f} (>= -1e-8), bound formula err "
           f"{r.value('bound_formula'):.1e}, {t:.2f} s (< 5)")


def test_10_relativistic(runs, capsys):
    r = runs["kg-causality"]
    t = r.timing()
    by_window = r.result.metrics["violation_fractions"]
    windows = sorted(by_window, key=float)
    fr = [by_window[w] for w in windows]
    strictly = all(a > b for a, b in zip(fr, fr[1:]))
    ok = (r.value("em_relative") <= 0.01 and strictly and [float(w) for w in windows] == [0.1, 0.5, 1.5, 3.0]
          and r.value("on_shell_residual") <= 1e-12 and r.value("threshold_formula") <= 1e-15 and t < 120)
    report(capsys, 10, ok, f"E[eta w w] = {r.result.metrics['em_expectation']:.4f} (rel err "
           f"{r.value('em_relative'):.4f} <= 0.01), fractions {[round(f, 4) for f in fr]} strictly decreasing "
           f"= {strictly}, threshold {r.result.metrics['suppression_threshold']:.3g}, on-shell residual "
           f"{r.value('on_shell_residual'):.1e}, {t:.2f} s (< 120)")


def test_11_quadratic_variation(runs, capsys):
    r = runs["noise-covariance-sweep"]
    t = r.timing("quadratic_variation")
    ok = (r.value("complex_bracket_z") <= 5 and r.value("mixed_bracket_z") <= 5
          and r.value("qv_slope_error") <= 0.1 and t < 30)
    report(capsys, 11, ok, f"complex |z| {r.value('complex_bracket_z'):.2f}, mixed |z| "
           f"{r.value('mixed_bracket_z'):.2f} (<= 5), slope {r.result.metrics['qv_slope']:.3f} "
           f"(-0.5 +- 0.1), {t:.2f} s (< 30)")


def _tree(path):
    return {p.relative_to(path): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_12_reproducibility(runs, tmp_path, capsys):
    t0 = time.perf_counter()
    mismatched = []
    total = sum(r.wall for r in runs.values())
    for name, first in runs.items():
        ref = _tree(first.out)
        for label, threads in (("rerun", 1), ("threads4", 4)):
            again = Run(name, tmp_path / label / name, threads=threads)
            total += again.wall
            if _tree(again.out) != ref:
                mismatched.append(f"{name}:{label}")
    elapsed = time.perf_counter() - t0
    ok = not mismatched and total < 600
    report(capsys, 12, ok, f"{len(runs)} presets x 3 runs byte-identical, mismatches {mismatched or 'none'}, "
           f"all preset runs {total:.1f} s (< 600), rerun phase {elapsed:.1f} s")
