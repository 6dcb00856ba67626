import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cwiener import rng
from cwiener.errors import InvalidSpecError
from cwiener.noise import (
    DiffusionConstant,
    ParticleSpec,
    assert_realizable,
    build_channel_covariance,
    channel_increments,
    estimate_quadratic_variation,
    sample_increments,
)

I = DiffusionConstant(1.0, math.pi / 2)
ONE = DiffusionConstant(1.0, 0.0)

# values below were produced by substituting into the covariance formula with sympy
# (exact rationals / surds), then frozen
COV_I = np.array([[0.5, 0.5], [0.5, 0.5]])
COV_BROWNIAN_M2 = np.array([[0.5, 0.0], [0.0, 0.0]])
COV_TIME_I = np.array([[0.5, -0.5], [-0.5, 0.5]])
COV_QUARTER = np.array([[0.8535533905932737, 0.35355339059327373], [0.35355339059327373, 0.14644660940672624]])


def test_covariance_quantum():
    cov = build_channel_covariance(I, mass=1.0)
    np.testing.assert_allclose(cov.matrix, COV_I, atol=1e-15)


def test_covariance_brownian_mass_two():
    cov = build_channel_covariance(ONE, mass=2.0)
    np.testing.assert_allclose(cov.matrix, COV_BROWNIAN_M2, atol=1e-15)


def test_covariance_time_channel():
    cov = build_channel_covariance(I, epsilon=1.0, signature=-1)
    np.testing.assert_allclose(cov.matrix, COV_TIME_I, atol=1e-15)
    assert cov.signature == -1


def test_covariance_quarter_phase():
    cov = build_channel_covariance(DiffusionConstant(1.0, math.pi / 4), mass=1.0)
    np.testing.assert_allclose(cov.matrix, COV_QUARTER, atol=1e-15)


def test_covariance_sympy_oracle():
    sp = pytest.importorskip("sympy")
    phi, g, m, mag = sp.symbols("phi gamma m A", positive=True)
    M = sp.Matrix([[mag * (1 + sp.cos(phi)) + g, mag * sp.sin(phi)], [mag * sp.sin(phi), mag * (1 - sp.cos(phi)) + g]]) / (2 * m)
    for vals in [(0.3, 0.0, 1.0, 1.0), (2.1, 0.5, 2.0, 0.7), (-1.2, 0.1, 0.5, 3.0)]:
        ph, ga, ms, mg = vals
        expected = np.array(M.subs({phi: ph, g: ga, m: ms, mag: mg}).evalf(), dtype=float)
        cov = build_channel_covariance(DiffusionConstant(mg, ph, ga), mass=ms)
        np.testing.assert_allclose(cov.matrix, expected, atol=1e-14)


@pytest.mark.parametrize("bad", [dict(mass=0.0), dict(mass=-1.0), dict(epsilon=0.0), dict(epsilon=-2.0)])
def test_covariance_rejects_nonpositive_scale(bad):
    with pytest.raises(InvalidSpecError):
        build_channel_covariance(I, **bad)


def test_negative_gamma_rejected():
    with pytest.raises(InvalidSpecError):
        DiffusionConstant(1.0, 0.0, -0.1)
    with pytest.raises(InvalidSpecError):
        DiffusionConstant(-1.0, 0.0)


def test_particle_mass_negative_rejected():
    with pytest.raises(InvalidSpecError):
        ParticleSpec(mass=-1.0)


def test_realizable_eigenvalues():
    r = assert_realizable(build_channel_covariance(I, mass=1.0))
    np.testing.assert_allclose(sorted(r.eigenvalues), [0.0, 1.0], atol=1e-15)
    assert r.realizable


@pytest.mark.parametrize("phi", [0.0, math.pi / 4, math.pi / 2, math.pi])
def test_rank_one_determinant(phi):
    r = assert_realizable(build_channel_covariance(DiffusionConstant(1.0, phi), mass=1.0))
    assert abs(r.determinant) < 1e-15


def test_time_channel_equals_rotated_alpha():
    for phi in np.linspace(-3, 3, 13):
        a = DiffusionConstant(1.3, float(phi))
        rot = DiffusionConstant.from_complex(a.value * np.exp(1j * math.pi))
        t = build_channel_covariance(a, epsilon=0.7, signature=-1)
        s = build_channel_covariance(rot, epsilon=0.7, signature=1)
        np.testing.assert_allclose(t.matrix, s.matrix, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(phi=st.floats(-math.pi + 1e-9, math.pi), gamma=st.floats(0, 5), mag=st.floats(1e-3, 10), m=st.floats(1e-2, 10))
def test_psd_everywhere(phi, gamma, mag, m):
    r = assert_realizable(build_channel_covariance(DiffusionConstant(mag, phi, gamma), mass=m))
    assert r.eigenvalues.min() >= -1e-12
    assert r.realizable


@settings(max_examples=40, deadline=None)
@given(phi=st.floats(-math.pi + 1e-9, math.pi), sign=st.sampled_from([1, -1]), seed=st.integers(0, 2**63))
def test_hyperplane_exact(phi, sign, seed):
    kw = dict(mass=1.0) if sign == 1 else dict(epsilon=1.0)
    cov = build_channel_covariance(DiffusionConstant(1.0, phi), signature=sign, **kw)
    b = sample_increments(cov, 1e-2, 2000, seed=seed)
    assert b.hyperplane_residual() <= 4 * np.finfo(float).eps * np.abs(b.values).max()


def test_quantum_hyperplane_im_equals_re():
    b = sample_increments(build_channel_covariance(I, mass=1.0), 1e-3, 10000, seed=3)
    v = b.values.ravel()
    np.testing.assert_allclose(v.imag, v.real, rtol=0, atol=4 * np.finfo(float).eps * np.abs(v).max())


def test_sample_covariance_quantum():
    n, dt = 10**6, 1e-3
    b = sample_increments(build_channel_covariance(I, mass=1.0), dt, n, seed=42)
    v = b.values[:, 0, 0]
    xy = np.stack([v.real, v.imag])
    for a in range(2):
        for c in range(2):
            prod = xy[a] * xy[c]
            se = prod.std() / math.sqrt(n)
            assert abs(prod.mean() - COV_I[a, c] * dt) < 3 * se


def test_sampling_deterministic():
    cov = build_channel_covariance(DiffusionConstant(1.0, 0.4, 0.2), mass=1.0)
    a = sample_increments(cov, 0.01, 500, channels=2, seed=9, counter_offset=3, steps=4)
    b = sample_increments(cov, 0.01, 500, channels=2, seed=9, counter_offset=3, steps=4)
    assert a.values.tobytes() == b.values.tobytes()
    c = sample_increments(cov, 0.01, 500, channels=2, seed=10, counter_offset=3, steps=4)
    assert not np.array_equal(a.values, c.values)


def test_counter_keyed_slices():
    # a block of paths drawn on its own equals the same rows of a larger draw
    cov = build_channel_covariance(DiffusionConstant(1.0, 0.9, 0.3), mass=1.0)
    full = channel_increments(cov, 0.1, 5, 7, 1, 0, 1000)
    part = channel_increments(cov, 0.1, 5, 7, 1, 613, 101)
    assert full[613:714].tobytes() == part.tobytes()


def test_rng_uniforms_open_interval():
    u = rng.uniforms(1, rng.stream_id(0), 0, 100000)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / 1e5)


def test_quadratic_variation_quantum():
    b = sample_increments(build_channel_covariance(I, mass=1.0), 1e-3, 10**5, seed=1)
    qv = estimate_quadratic_variation(b)
    est = qv.complex_bracket[0, 0]
    se = qv.complex_stderr[0, 0]
    assert abs(est.imag - 1.0) < 5 * se.imag
    assert abs(est.real) < 1e-12
    assert abs(qv.mixed_bracket[0, 0].real - 1.0) < 5 * qv.mixed_stderr[0, 0]
    np.testing.assert_allclose(qv.conjugate_bracket, np.conj(qv.complex_bracket))


def test_quadratic_variation_brownian_real():
    b = sample_increments(build_channel_covariance(ONE, mass=1.0), 1e-3, 2000, seed=1)
    assert np.all(estimate_quadratic_variation(b).complex_bracket.imag == 0)


def test_quadratic_variation_gamma():
    a = DiffusionConstant(1.0, 0.7, 0.5)
    qv = estimate_quadratic_variation(sample_increments(build_channel_covariance(a, mass=1.0), 1e-3, 10**5, seed=2))
    assert abs(qv.mixed_bracket[0, 0].real - 1.5) < 5 * qv.mixed_stderr[0, 0]
    est = qv.complex_bracket[0, 0]
    assert abs(est.real - a.value.real) < 5 * qv.complex_stderr[0, 0].real
    assert abs(est.imag - a.value.imag) < 5 * qv.complex_stderr[0, 0].imag


def test_quadratic_variation_needs_data():
    b = sample_increments(build_channel_covariance(I, mass=1.0), 1e-3, 1, seed=1)
    with pytest.raises(ValueError):
        estimate_quadratic_variation(b)


def test_sample_rejects_bad_step():
    with pytest.raises(InvalidSpecError):
        sample_increments(build_channel_covariance(I, mass=1.0), 0.0, 10)
