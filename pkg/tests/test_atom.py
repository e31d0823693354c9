import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltgrating import Beam, GratingGeometry, SurfacePotentialParams, diffraction_angles, transmission_atom
from tiltgrating.atom import (
    CumulantSet,
    bar_shape,
    cumulant_intensity,
    cumulants,
    grating_function,
    integration_bound,
    pattern_cumulant,
    pattern_exact,
    single_bar_amplitude,
    slit_function_exact,
    slit_integrals,
)

FREE = SurfacePotentialParams(0.0)


def _gl(a, b, npan, order):
    x, w = np.polynomial.legendre.leggauss(order)
    pts = np.linspace(a, b, npan + 1)
    lo, hi = pts[:-1], pts[1:]
    return ((hi - lo)[:, None] * (x + 1) / 2 + lo[:, None]).ravel(), ((hi - lo)[:, None] * w / 2).ravel()


def gl_nodes(profile, npan=8000, order=40, xc=2.0):
    """Fixed Gauss-Legendre rule on the slit line between the edge margins.

    Within ``xc`` of each wall the phase grows like xi^-2, so that layer is
    integrated in u = xi^-2, where the phase is close to linear.
    """
    h, eps = profile.S0 / 2, profile.edge_margin
    if eps == 0:
        return _gl(-h, h, 200, order)
    u, wu = _gl(xc**-2, eps**-2, npan, order)
    xi, wxi = u**-0.5, wu * 0.5 * u**-1.5
    s_mid, w_mid = _gl(-h + xc, h - xc, 400, order)
    return np.concatenate([h - xi, -h + xi, s_mid]), np.concatenate([wxi, wxi, w_mid])


def gl_slit_function(profile, ks):
    s, w = gl_nodes(profile)
    tau = profile(s)
    return np.array([np.sum(w * tau * np.exp(-1j * k * s)) for k in np.atleast_1d(ks)])


# -- grating function


def test_grating_function_examples():
    assert grating_function(7, 0.0, 100.0) == 7.0
    x = math.pi / 3
    assert abs(grating_function(3, 2 * x / 100.0, 100.0)) < 1e-14


@pytest.mark.parametrize("N,m", [(5, 1), (4, 1), (5, 2), (6, 3), (1, 1)])
def test_grating_function_limit_at_principal_maxima(N, m):
    mp.mp.dps = 30
    ref = mp.limit(lambda x: mp.sin(N * x) / mp.sin(x), m * mp.pi)
    got = float(grating_function(N, 2 * m * math.pi / 100.0, 100.0))
    assert got == pytest.approx(float(ref), abs=1e-12)
    assert abs(got) == N


@given(st.integers(1, 40), st.floats(0.01, 3.1))
def test_grating_function_direct_ratio(N, x):
    direct = math.sin(N * x) / math.sin(x)
    assert float(grating_function(N, 2 * x / 100.0, 100.0)) == pytest.approx(direct, rel=1e-9, abs=1e-9)


# -- single bar and Babinet


def test_single_bar_amplitude_shape():
    beam = Beam.helium(500.0)
    A = 37.0
    small = [abs(single_bar_amplitude(beam, A, dk, 20.0)) for dk in (1e-9, 0.0)]
    other = abs(single_bar_amplitude(beam, 2 * A, 0.0, 20.0))
    assert other / small[1] == pytest.approx(2.0, rel=1e-14)
    assert small[0] == pytest.approx(small[1], rel=1e-12)
    for m in (1, 2, 5, -3):
        assert abs(single_bar_amplitude(beam, A, 2 * m * math.pi / A, 20.0)) < 1e-12 * small[1]
    with pytest.raises(ValueError):
        single_bar_amplitude(beam, 0.0, 0.1, 20.0)


def test_babinet_bar_matches_open_slit():
    A = 60.0
    beam = Beam.helium(800.0)
    slit = transmission_atom(GratingGeometry(100.0, A, 0.0, 0.0), beam, FREE)
    pref = abs(single_bar_amplitude(beam, A, 0.0, 20.0)) / A
    for dk in (0.0, 0.013, -0.21, 0.5):
        bar = abs(single_bar_amplitude(beam, A, dk, 20.0)) / pref
        assert bar == pytest.approx(abs(slit_function_exact(slit, dk)), rel=1e-10, abs=1e-10 * A)


# -- slit function


def test_open_slit_function_is_kirchhoff(standard, he500_21):
    prof = transmission_atom(standard, he500_21, FREE)
    S0 = prof.S0
    assert slit_function_exact(prof, 0.0) == pytest.approx(S0, rel=1e-14)
    for k in (0.01, -0.07, 0.33):
        assert slit_function_exact(prof, k) == pytest.approx(S0 * np.sinc(k * S0 / (2 * math.pi)), rel=1e-10)
    for m in (1, 2, -4):
        assert abs(slit_function_exact(prof, 2 * m * math.pi / S0)) < 1e-10 * S0


def test_slit_function_with_attraction(standard, he500_21, c3_sinx):
    prof = transmission_atom(standard, he500_21, c3_sinx)
    a0 = slit_function_exact(prof, 0.0)
    assert abs(a0) < prof.S0
    assert a0 == pytest.approx(complex(gl_slit_function(prof, 0.0)[0]), abs=1e-10 * prof.S0)
    with pytest.raises(ValueError):
        slit_function_exact(prof, 0.0, D=0.5 * prof.S0)
    assert slit_function_exact(prof, 0.0, D=3 * prof.S0) == a0


@pytest.mark.parametrize("theta_deg,speed,C3", [(21.0, 500.0, 0.1), (3.0, 700.0, 0.1), (-21.0, 300.0, 0.05), (0.0, 2000.0, 0.2)])
def test_slit_function_matches_gauss_legendre(standard, theta_deg, speed, C3):
    beam = Beam.helium(speed, math.radians(theta_deg))
    prof = transmission_atom(standard, beam, SurfacePotentialParams(C3))
    ks = np.array([0.0, 0.04, -0.11, 0.3])
    ref = gl_slit_function(prof, ks)
    a, _, _ = slit_integrals(prof, ks)
    plain, _, _ = slit_integrals(prof, ks, strips=False)
    assert np.max(np.abs(a - ref)) < 1e-10 * prof.S0
    assert np.max(np.abs(plain - ref)) < 1e-10 * prof.S0


def test_integration_bound(standard, he500_21):
    kin = diffraction_angles(standard, he500_21, (-6, 6))
    D = integration_bound(standard, kin)
    assert np.all(D >= kin.frame.S0)
    lim = standard.period_d * math.cos(he500_21.theta) / kin.frame.cos_proj
    assert D[kin.orders == 0][0] == lim
    assert D[kin.orders == 1][0] == pytest.approx(lim, rel=0.05)


# -- exact patterns


def test_zeroth_order_is_one(standard, he500_21, c3_sinx):
    pat = pattern_exact(standard, he500_21, c3_sinx, (-10, 10))
    assert pat.at(0) == 1.0
    assert np.all(pat.intensity >= 0)
    assert pat.method == "exact"


def test_kirchhoff_pattern(standard, he500_21):
    pat = pattern_exact(standard, he500_21, FREE, (-12, 12))
    kin = diffraction_angles(standard, he500_21, (-12, 12))
    S0 = kin.frame.S0
    ref = kin.obliquity() * np.sinc(kin.dk_s2 * S0 / (2 * math.pi)) ** 2
    assert np.allclose(pat.intensity, ref, rtol=1e-10, atol=1e-10 * 1e-10)


@pytest.mark.parametrize("C3", [0.0, 0.1])
def test_symmetric_at_normal_incidence(standard, C3):
    pat = pattern_exact(standard, Beam.helium(500.0), SurfacePotentialParams(C3), (-9, 9))
    assert list(pat.orders) == list(range(-9, 10))
    assert np.allclose(pat.intensity, pat.intensity[::-1], rtol=1e-10, atol=0)


@given(st.floats(-40.0, 40.0), st.floats(300.0, 2000.0))
@settings(max_examples=25, deadline=None)
def test_thin_grating_slit_function_symmetric(theta_deg, speed):
    thin = GratingGeometry(100.0, 60.0, 0.0, math.radians(6.0))
    beam = Beam.helium(speed, math.radians(theta_deg))
    kin = diffraction_angles(thin, beam, (-5, 5))
    pat = pattern_exact(thin, beam, SurfacePotentialParams(0.1), (-5, 5))
    slit_part = pat.intensity / kin.obliquity()
    assert np.allclose(slit_part, slit_part[::-1], rtol=1e-10, atol=1e-12)
    assert np.allclose(kin.dk_s2, -kin.dk_s2[::-1], rtol=1e-12)


def test_fifth_order_momentum_asymmetry(standard):
    beam = Beam.from_wavenumber(10.0, math.radians(21.0))
    pat = pattern_exact(standard, beam, FREE, (-5, 5))
    lo, hi = abs(pat.dk_s2[0]), abs(pat.dk_s2[-1])
    assert 0.16 <= 2 * (lo - hi) / (lo + hi) <= 0.18


def signed_asymmetry(geom, k):
    kin = diffraction_angles(geom, Beam.from_wavenumber(k, math.radians(21.0)), [-5, 5])
    lo, hi = np.abs(kin.dk_s2)
    return (hi - lo) / (hi + lo)


@given(st.floats(8.0, 40.0))
@settings(max_examples=30, deadline=None)
def test_asymmetry_scales_inversely_with_momentum(k):
    from tiltgrating import asymmetry_expansion

    geom = GratingGeometry.standard()
    a1, a4 = signed_asymmetry(geom, k), signed_asymmetry(geom, 4 * k)
    assert a1 < 0
    assert a1 / a4 == pytest.approx(4.0, rel=0.05)
    quad = asymmetry_expansion(geom, Beam.from_wavenumber(k, math.radians(21.0)), 5).quadratic_term_ratio
    assert a1 == pytest.approx(quad, rel=0.05)


def test_pattern_independent_of_order_subset(standard, he500_21, c3_sinx):
    full = pattern_exact(standard, he500_21, c3_sinx, (-10, 10))
    part = pattern_exact(standard, he500_21, c3_sinx, [-7, 3])
    for n in (-7, 3):
        assert part.at(n) == pytest.approx(full.at(n), rel=1e-7)


# -- cumulants


def test_free_cumulants(standard, he500_21):
    c = cumulants(transmission_atom(standard, he500_21, FREE))
    assert c.S_eff == pytest.approx(c.S0, abs=1e-12 * c.S0)
    for v in (c.R1_plus, c.R1_minus, c.R2_plus, c.R2_minus):
        assert abs(v) < 1e-10 * c.S0**2
    assert CumulantSet.free(10.0).S_eff == 10.0


def test_cumulant_identities(standard, he500_21, c3_sinx):
    prof = transmission_atom(standard, he500_21, c3_sinx)
    s, w = gl_nodes(prof)
    tau = prof(s)
    tau0 = complex(prof(np.array([0.0]))[0])
    h = prof.S0 / 2
    # width reduced by the mean deviation of tau from 1 (tau / tau0 once normalized);
    # the integral of 1 is exact, tau inside the edge margins averages out
    mean_dev = prof.S0 - np.sum(w * tau)
    raw = cumulants(prof, normalize=False)
    assert raw.S_eff == pytest.approx(prof.S0 - mean_dev.real, abs=1e-10 * prof.S0)
    norm = cumulants(prof)
    assert norm.S_eff == pytest.approx(prof.S0 - (prof.S0 - np.sum(w * tau) / tau0).real, abs=1e-10 * prof.S0)
    # second cumulants from the half-slit moments of xi = S0/2 - |s2|
    xi = h - np.abs(s)
    up = s > 0
    R1p = h - np.sum(w * tau * up) / tau0
    R2p = h * h - R1p**2 - 2 * np.sum(w * xi * tau * up) / tau0
    assert norm.R1_plus == pytest.approx(R1p, abs=1e-10 * prof.S0)
    assert norm.R2_plus == pytest.approx(R2p, abs=1e-9 * prof.S0**2)
    assert norm.Delta == pytest.approx((norm.R1_plus + norm.R1_minus).imag)
    assert norm.Gamma == pytest.approx((norm.R1_plus - norm.R1_minus).imag)
    assert norm.sigma_sq == pytest.approx(0.5 * (norm.R2_plus + norm.R2_minus).real)


def test_attraction_narrows_slit(standard, he500_21, c3_sinx):
    from tiltgrating.constants import HBAR_MEV_S

    c = cumulants(transmission_atom(standard, he500_21, c3_sinx))
    assert c.S_eff < c.S0
    assert c.Sigma > 0
    ell = math.sqrt(c3_sinx.C3 / (HBAR_MEV_S * he500_21.speed * 1e9))
    assert 1 < (c.S0 - c.S_eff) / ell < 100
    assert 1 < c.Sigma / ell < 100


def test_width_reduction_follows_interaction_length(standard, he500_21):
    red = [
        (lambda c: c.S0 - c.S_eff)(cumulants(transmission_atom(standard, he500_21, SurfacePotentialParams(C3))))
        for C3 in (0.001, 0.004)
    ]
    assert red[1] / red[0] == pytest.approx(2.0, rel=0.01)


# -- cumulant patterns


def test_zero_cumulants_reproduce_kirchhoff(standard, he500_21):
    exact = pattern_exact(standard, he500_21, FREE, (-10, 10))
    kin = diffraction_angles(standard, he500_21, (-10, 10))
    cum = pattern_cumulant(standard, he500_21, CumulantSet.free(kin.frame.S0), (-10, 10))
    assert cum.method == "cumulant"
    assert np.allclose(cum.intensity, exact.intensity, rtol=1e-10, atol=1e-20)
    direct = cumulant_intensity(kin, kin.frame.S0, 0.0, 0.0, 0.0)
    assert np.allclose(direct, exact.intensity, rtol=1e-10, atol=1e-20)


def test_asymmetry_cumulant_tilts_pattern(standard):
    kin = diffraction_angles(standard, Beam.helium(500.0), (-5, 5))
    S0 = kin.frame.S0
    base = cumulant_intensity(kin, S0, 0.0, 0.0, 4.0)
    tilted = cumulant_intensity(kin, S0, 0.0, 2.0, 4.0)
    ratio = tilted / base
    assert np.allclose(ratio, np.exp(-2.0 * kin.dk_s2), rtol=1e-12)


@given(st.floats(0.0, 0.2), st.floats(200.0, 2000.0))
@settings(max_examples=20, deadline=None, derandomize=True)
def test_cumulant_pattern_tracks_exact(C3, v):
    geom = GratingGeometry.standard()
    beam = Beam.helium(v, math.radians(21.0))
    exact, cums = pattern_exact(geom, beam, SurfacePotentialParams(C3), (-5, 5), return_cumulants=True)
    approx = pattern_cumulant(geom, beam, cums, (-5, 5))
    dev = np.abs(approx.intensity / exact.intensity - 1)
    assert dev.max() < 0.10
