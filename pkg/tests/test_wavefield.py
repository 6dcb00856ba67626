import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cwiener.errors import IllPosedError, InvalidSpecError, NumericalGuardError
from cwiener.io import write_wave_csv
from cwiener.noise import DiffusionConstant, ParticleSpec
from cwiener.wavefield import (
    CATALOG,
    DensityField,
    GridSpec,
    PotentialSet,
    WaveField,
    analytic_state,
    diffusion_residual,
    discrete_eigenstates,
    evolve_crank_nicolson,
    evolve_kg_spectral,
    gaussian_packet_modes,
    mass_shell_frequency,
    operator_moments,
    residual_certificate,
    shell_residual,
    superpose,
    well_posed_direction,
)
from cwiener.wavefield.klein_gordon import KGModes

sp = pytest.importorskip("sympy")

I = DiffusionConstant(1.0, math.pi / 2)
ONE = DiffusionConstant(1.0, 0.0)
LINE = GridSpec.line(-8, 8, 320, dt=0.01)


# --- symbolic substitution oracles ------------------------------------------------------


def _oscillator_oracle(alpha_value, m, omega, k):
    """Solve (alpha^2/2m) psi'' + c x^2 psi = E psi for c and E with the Hermite ansatz."""
    x = sp.symbols("x", real=True)
    a = sp.nsimplify(alpha_value)
    mag = sp.sqrt(a * sp.conjugate(a))
    xi = sp.sqrt(m * omega / mag) * x
    psi = sp.hermite(k, xi) * sp.exp(-xi**2 / 2)
    c, E = sp.symbols("c E")
    expr = sp.expand(sp.simplify((a**2 / (2 * m) * sp.diff(psi, x, 2) + c * x**2 * psi - E * psi) / sp.exp(-xi**2 / 2)))
    poly = sp.Poly(expr, x)
    sol = sp.solve([poly.coeff_monomial(x ** (k + 2)), poly.coeff_monomial(x**k)], [c, E], dict=True)[0]
    return complex(sol[c]), complex(sol[E])


@pytest.mark.parametrize("alpha", [I, ONE], ids=["quantum", "brownian"])
@pytest.mark.parametrize("k", [0, 1, 3])
def test_oscillator_signs_match_substitution(alpha, k):
    m, omega = 1.0, 1.0
    c, E = _oscillator_oracle(alpha.value, sp.Integer(1), sp.Integer(1), k)
    name = "harmonic-ground" if k == 0 else "harmonic-excited-k"
    params = {"omega": omega} if k == 0 else {"omega": omega, "k": k}
    st_ = analytic_state(name, LINE, alpha, ParticleSpec(m), **params)
    np.testing.assert_allclose(st_.potential.scalar, c.real * LINE.x**2, atol=1e-12)
    assert abs(st_.energy - E) < 1e-12


def test_oscillator_time_dependence_both_branches():
    for b in (1, -1):
        for alpha in (I, ONE):
            s0 = analytic_state("harmonic-excited-k", LINE, alpha, omega=1.0, k=2, branch=b)
            t = 0.37
            pts = LINE.x[:, None]
            expected = s0.evaluate(pts, 0.0) * np.exp(-b * s0.energy * t / alpha.value)
            np.testing.assert_allclose(s0.evaluate(pts, t), expected, rtol=1e-13)


def test_quantum_ground_state_values():
    # [DERIVED] psi = exp(-x^2/2) up to normalisation, E = +1/2 for alpha = i
    s0 = analytic_state("harmonic-ground", LINE, I, omega=1.0)
    ratio = s0.wave.amplitudes / np.exp(-LINE.x**2 / 2)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)
    assert abs(s0.energy - 0.5) < 1e-15


def test_free_packet_solves_heat_flow_symbolically():
    x, t, y0 = sp.symbols("x t y0", real=True)
    D, a0, kap = sp.symbols("D a0 kappa")
    # completing the square: exp(-y^2/4a0 + kappa y) = exp(-(y - 2 a0 kappa)^2/4a0 + a0 kappa^2)
    oracle = sp.sqrt(a0 / (a0 + D * t)) * sp.exp(-((x - y0 - 2 * a0 * kap) ** 2) / (4 * (a0 + D * t)) + a0 * kap**2)
    assert sp.simplify(sp.diff(oracle, t) - D * sp.diff(oracle, x, 2)) == 0
    f = sp.lambdify((x, t, y0, D, a0, kap), oracle, "numpy")
    m = 1.3
    for alpha in (I, ONE, DiffusionConstant(0.8, 0.6)):
        for b in (1, -1):
            st_ = analytic_state("free-gaussian-packet", LINE, alpha, ParticleSpec(m), branch=b, s=0.9, p=0.4, x0=0.3)
            Dv = -b * alpha.value / (2 * m)
            kv = -0.4 / alpha.value
            for tt in (0.0, 0.25):
                if (0.81 + Dv * tt).real <= 0:
                    continue
                num = st_.evaluate(LINE.x[:, None], tt)
                ref = f(LINE.x, tt, 0.3, Dv, 0.81, kv)
                np.testing.assert_allclose(num / ref, (num / ref)[0], rtol=1e-10)


@pytest.mark.parametrize("name,grid,params", [
    ("free-gaussian-packet", GridSpec.line(-8, 8, 160), {"s": 1.0, "p": 0.5}),
    ("harmonic-ground", GridSpec.line(-8, 8, 160), {"omega": 1.0}),
    ("harmonic-excited-k", GridSpec.line(-8, 8, 160), {"omega": 1.0, "k": 2}),
    ("ring-eigenstate-k", GridSpec.ring(64), {"k": 2}),
    ("plane-wave", GridSpec.line(-8, 8, 160), {"k": 1.3}),
    ("kg-plane-wave", GridSpec("spacetime-box", ((0, 2), (-3, 3)), (40, 60)), {"k": 0.7}),
    ("kg-packet", GridSpec("spacetime-box", ((-1, 1), (-3, 3)), (40, 60)), {"k0": 1.0, "sigma_k": 0.3, "nodes": 4}),
])
@pytest.mark.parametrize("branch", [1, -1])
def test_residual_certificates(name, grid, params, branch):
    st_ = analytic_state(name, grid, I, branch=branch, **params)
    res, order = residual_certificate(st_)
    assert order[0] >= 1.9, (res, order)


def test_catalog_names():
    assert len(CATALOG) == 7
    with pytest.raises(InvalidSpecError):
        analytic_state("nope", LINE, I)
    with pytest.raises(InvalidSpecError):
        analytic_state("ring-eigenstate-k", LINE, I, k=1)
    with pytest.raises(InvalidSpecError):
        analytic_state("harmonic-ground", LINE, I)  # omega missing


def test_ring_eigenstate_single_valued():
    g = GridSpec.ring(32)
    psi = analytic_state("ring-eigenstate-k", g, I, k=2).wave
    np.testing.assert_allclose(psi.amplitudes, np.exp(2j * g.x), rtol=1e-13)


# --- superposition -----------------------------------------------------------------------


def test_superposition_single_term_stationary():
    s0 = analytic_state("harmonic-ground", LINE, I, omega=1.0)
    d0 = superpose([1.0], [s0], 0.0).density().values
    d1 = superpose([1.0], [s0], 3.0).density().values
    np.testing.assert_allclose(d0, d1, atol=1e-14)


def test_two_level_interference_frequency():
    # density of (psi0 + psi1)/sqrt2 is periodic with angular frequency |E1 - E0| = omega
    lv = [analytic_state("harmonic-excited-k", LINE, I, omega=1.3, k=k) for k in (0, 1)]
    c = np.array([1, 1]) / math.sqrt(2)
    mean = lambda t: superpose(c, lv, t).density().mean()
    T = 2 * math.pi / 1.3
    assert abs(mean(0.0) - mean(T)) < 1e-12
    assert abs(mean(0.0) + mean(T / 2)) < 1e-12
    assert abs(mean(0.0)) > 0.1


def test_superpose_zero_coefficients():
    s0 = analytic_state("harmonic-ground", LINE, I, omega=1.0)
    with pytest.raises(InvalidSpecError):
        superpose([0.0], [s0])


def test_superpose_solves_equation():
    lv = [analytic_state("harmonic-excited-k", LINE, I, omega=1.0, k=k) for k in range(3)]
    psi = superpose([1, 0.5j, -0.2], lv, 0.4)
    H = lambda f: -0.5 * np.gradient(np.gradient(f, LINE.spacing[0]), LINE.spacing[0]) + lv[0].potential.scalar * f
    dt = 1e-5
    dpsi = (superpose([1, 0.5j, -0.2], lv, 0.4 + dt).amplitudes - superpose([1, 0.5j, -0.2], lv, 0.4 - dt).amplitudes) / (2 * dt)
    inner = np.abs(LINE.x) < 5
    # alpha d_t Psi = H Psi on the standard branch
    assert np.max(np.abs((1j * dpsi - H(psi.amplitudes))[inner])) < 5e-3


# --- Crank-Nicolson ------------------------------------------------------------------------


def test_free_packet_quantum_spreading():
    g = GridSpec.line(-30, 30, 3000, dt=1e-3)
    psi = analytic_state("free-gaussian-packet", g, I, s=1.0).wave.normalized()
    out = evolve_crank_nicolson(psi, steps=1000, track_norm=True)
    assert abs(out.density().variance() / 1.25 - 1) < 1e-3
    assert np.max(np.abs(np.diff(out.meta["norm_history"]))) < 1e-10


def test_heat_branch_spreading():
    g = GridSpec.line(-30, 30, 3000, dt=1e-3)
    psi = analytic_state("free-gaussian-packet", g, ONE, s=1.0, norm="L1").wave
    out = evolve_crank_nicolson(psi, steps=1000)
    assert abs(out.density("L1").variance() / 2.0 - 1) < 1e-3


def test_heat_branch_norm_decays():
    g = GridSpec.line(-10, 10, 200, dt=1e-2)
    psi = analytic_state("free-gaussian-packet", g, ONE, s=1.0).wave
    norms = evolve_crank_nicolson(psi, steps=50, track_norm=True).meta["norm_history"]
    assert np.all(np.diff(norms) < 0)


def test_ground_state_stationary():
    pot = PotentialSet(0.5 * LINE.x**2)
    (E, vec), = discrete_eigenstates(LINE, pot, I, count=1)
    psi = WaveField(LINE, vec, I)
    out = evolve_crank_nicolson(psi, pot, 100)
    assert np.max(np.abs(np.abs(out.amplitudes) - np.abs(vec))) < 1e-8
    assert abs(E - 0.5) < 1e-3


def test_ill_posed_direction_named():
    psi = analytic_state("harmonic-ground", LINE, ONE, omega=1.0, branch=1).wave
    with pytest.raises(IllPosedError) as exc:
        evolve_crank_nicolson(psi, steps=1)
    assert exc.value.well_posed_direction == "backward"
    assert "backward" in str(exc.value)
    evolve_crank_nicolson(psi, steps=1, direction="backward")
    assert well_posed_direction(ONE, -1) == "forward"
    assert well_posed_direction(I, 1) == "both"


def test_stability_guard():
    psi = analytic_state("harmonic-ground", LINE, I, omega=1.0).wave
    with pytest.raises(NumericalGuardError) as exc:
        evolve_crank_nicolson(psi, PotentialSet(0.5 * LINE.x**2), 1, dt=0.05)
    assert exc.value.guard == "stability"


def test_crank_nicolson_second_order():
    errs = []
    for n, dt in ((240, 0.02), (480, 0.01)):
        g = GridSpec.line(-12, 12, n, dt=dt)
        st_ = analytic_state("free-gaussian-packet", g, I, s=1.0, p=0.5)
        num = evolve_crank_nicolson(st_.wave, steps=int(round(1 / dt)))
        errs.append(np.max(np.abs(num.amplitudes - st_.at(1.0).wave.amplitudes)))
    assert math.log2(errs[0] / errs[1]) >= 1.9


@settings(max_examples=15, deadline=None)
@given(a=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
def test_crank_nicolson_linear(a, b):
    g = GridSpec.line(-8, 8, 64, dt=0.01)
    p1 = analytic_state("free-gaussian-packet", g, I, s=1.0, p=0.5).wave
    p2 = analytic_state("harmonic-excited-k", g, I, omega=1.0, k=1).wave
    pot = PotentialSet(0.1 * g.x)
    if a == 0 and b == 0:
        return
    comb = p1.with_amplitudes(a * p1.amplitudes + b * p2.amplitudes)
    lhs = evolve_crank_nicolson(comb, pot, 10).amplitudes
    rhs = a * evolve_crank_nicolson(p1, pot, 10).amplitudes + b * evolve_crank_nicolson(p2, pot, 10).amplitudes
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * (1 + abs(a) + abs(b))


def test_crank_nicolson_snapshots():
    psi = analytic_state("harmonic-ground", LINE, I, omega=1.0).wave
    out, snaps = evolve_crank_nicolson(psi, PotentialSet(0.5 * LINE.x**2), 10, snapshots=[0, 5, 10])
    assert sorted(snaps) == [0, 5, 10]
    assert snaps[10].amplitudes.tobytes() == out.amplitudes.tobytes()
    assert abs(snaps[5].time - 0.05) < 1e-15


# --- moments ----------------------------------------------------------------------------


def test_gaussian_minimal_uncertainty():
    g = GridSpec.line(-12, 12, 4800)
    mom = operator_moments(analytic_state("free-gaussian-packet", g, I, s=1.0, p=0.3).wave)
    assert abs(math.sqrt((mom["VarX"] * mom["VarP"]).real) - 0.5) < 1e-6


def test_ring_momentum_eigenvalue():
    g = GridSpec.ring(64)
    for k in (-2, 0, 3):
        mom = operator_moments(analytic_state("ring-eigenstate-k", g, I, k=k).wave, ("P", "P2"))
        # finite-difference derivative: error shrinks with (k h)^4
        assert abs(mom["P"] - k) < 1e-3


def test_symmetric_packet_centered():
    mom = operator_moments(analytic_state("harmonic-ground", LINE, I, omega=1.0).wave, ("X",))
    assert abs(mom["X"]) < 1e-14


def test_free_packet_xp_covariance():
    g = GridSpec.line(-12, 12, 2400)
    mom = operator_moments(analytic_state("free-gaussian-packet", g, I, s=1.0, p=0.3, t=0.5).wave, ("X", "P", "XP"))
    # free spreading: cov(X, P) grows as t VarP / m, VarP = 1/4s^2 (m = 1, s = 1, t = 0.5)
    assert abs(mom["XP"] - mom["X"] * mom["P"] - 0.125) < 1e-5


# --- Klein-Gordon ------------------------------------------------------------------------


def test_on_shell_symbolic():
    k, m = sp.symbols("k m", positive=True)
    w = sp.sqrt(k**2 + m**2)
    x, t = sp.symbols("x t", real=True)
    phi = sp.exp(sp.I * (k * x - w * t))
    # box Phi = -d_t^2 + d_x^2 ; KG at alpha = i: (box - m^2/alpha^2 * (-1)) ... i.e. box Phi = m^2 Phi
    assert sp.simplify(-sp.diff(phi, t, 2) + sp.diff(phi, x, 2) - m**2 * phi) == 0
    kk = np.array([[0.3, -1.1, 0.4]])
    om = mass_shell_frequency(kk, 2.0, I)
    assert abs(om[0] - float(w.subs({k: np.linalg.norm(kk), m: 2.0}))) < 1e-14
    assert np.max(np.abs(shell_residual(kk, om, 2.0, I))) < 1e-13


def test_massless_null_dispersion():
    kk = np.array([[0.3, -1.1, 0.4], [2.0, 0.0, 0.0]])
    om = mass_shell_frequency(kk, 0.0, I)
    np.testing.assert_allclose(np.abs(om), np.linalg.norm(kk, axis=1), rtol=1e-15)


def test_off_shell_modes_rejected():
    with pytest.raises(InvalidSpecError):
        KGModes([[1.0]], [1.0], [1.0], 1.0, I)


def test_packet_group_velocity():
    g = GridSpec.line(-200.0, 200.0, 4000)
    data = np.exp(-g.x**2 / 400 + 1j * g.x)
    spec = evolve_kg_spectral(WaveField(g, data, I), ParticleSpec(1.0), I, 1.0)
    assert spec.shell_residual() < 1e-12
    v = (spec.field(100.0).density().mean() - spec.field(0.0).density().mean()) / 100.0
    assert abs(v / (1 / math.sqrt(2)) - 1) < 0.02


def test_packet_modes_on_shell_and_centered():
    modes = gaussian_packet_modes([1.0, 0.0, 0.0], 0.1, 1.0, I, nodes=4)
    pts = np.zeros((1, 4))
    assert abs(modes.evaluate(pts)[0] - 1.0) < 1e-12  # weights sum to one at the centre
    assert modes.off_shell < 1e-12


def test_spectral_affine_factor():
    g = GridSpec.line(-10, 10, 64)
    spec = evolve_kg_spectral(WaveField(g, np.exp(1j * 2 * math.pi * g.x / 20), I), ParticleSpec(2.0), I, 0.5)
    a = spec.psi(0.0, 0.0, -1).amplitudes
    b = spec.psi(0.0, 1.0, -1).amplitudes
    np.testing.assert_allclose(b / a, np.exp(-0.5 * 4.0 * 1.0 / (2 * 1j)), rtol=1e-13)


# --- grids, densities and export -------------------------------------------------------------


def test_grid_needs_eight_cells():
    with pytest.raises(InvalidSpecError):
        GridSpec.line(0, 1, 7)


def test_density_conventions():
    psi = analytic_state("harmonic-ground", LINE, I, omega=1.0).wave
    for conv, var in (("L2", 0.5), ("L1", 1.0)):
        d = psi.density(conv)
        assert abs(d.mass() - 1) < 1e-12
        assert abs(d.variance() - var) < 1e-3


def test_density_coarsen_preserves_mass():
    d = analytic_state("harmonic-ground", LINE, I, omega=1.0).wave.density()
    c = d.coarsen(4)
    assert c.grid.shape == (80,)
    assert abs(c.mass() - 1) < 1e-12


def test_wave_rejects_zero_and_nan():
    with pytest.raises(InvalidSpecError):
        WaveField(LINE, np.zeros(LINE.shape), I)
    bad = np.ones(LINE.shape, dtype=complex)
    bad[3] = np.nan
    with pytest.raises(InvalidSpecError):
        WaveField(LINE, bad, I)


def test_density_rejects_negative():
    with pytest.raises(InvalidSpecError):
        DensityField(LINE, -np.ones(LINE.shape))


def test_wave_csv_and_sidecar(tmp_path):
    psi = analytic_state("harmonic-ground", GridSpec.line(-4, 4, 16), I, omega=1.0).wave
    write_wave_csv(tmp_path / "w.csv", psi)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "x,re_psi,im_psi,abs2,time"
    assert len(lines) == 17
    meta = json.loads((tmp_path / "w.json").read_text())
    assert meta["branch"] == -1 and meta["provenance"]["catalog"] == "harmonic-ground"


def test_box_packet_residual():
    g = GridSpec.box(((-6, 6), (-6, 6)), (48, 48))
    st_ = analytic_state("free-gaussian-packet", g, I, s=1.0, p=[0.3, -0.2])
    r = np.abs(diffusion_residual(st_)).max()
    r2 = np.abs(diffusion_residual(st_.on(g.refined(2)))).max()
    assert math.log2(r / r2) > 1.9
