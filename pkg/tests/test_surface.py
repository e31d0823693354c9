import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from tiltgrating import (
    Beam,
    DomainError,
    GeometrySingularity,
    GratingGeometry,
    ShadowingError,
    SurfacePotentialParams,
    phase_function,
    slit_frame,
    transmission_atom,
)
from tiltgrating.constants import HBAR_MEV_S
from tiltgrating.surface import PhaseKernel, phase_closed_form

# phi(s2 = 0) for helium at 500 m/s, C3 = 0.1 meV nm^3, theta' = 21 deg, standard grating,
# from a 50-digit evaluation of the closed form
GOLDEN_PHI0 = 0.005362313489253338


def brute_force_phase(geom, theta, speed, C3, s2):
    """3 C3/(hbar v) times the area integral of h^-4 over the two bars bounding the slit.

    A 2D area element at distance h from the straight path, integrated along the
    path and along the bar axis, contributes C6 * pi / (2 h^4); with C6 = 6 C3/pi
    that is 3 C3 / h^4.
    """
    fr = slit_frame(geom, theta)
    P = fr.point(np.array(s2))
    n = fr.beam_normal
    d, s0, t, tb = geom.period_d, geom.slit_width_s0, geom.thickness_t, geom.tan_beta

    def h_inv4(x2, x1):
        h = (x1 - P[0]) * n[0] + (x2 - P[1]) * n[1]
        return h**-4

    total = 0.0
    bars = [
        (lambda x1: s0 + 2 * t * tb - x1 * tb, lambda x1: d + x1 * tb),
        (lambda x1: s0 + 2 * t * tb - x1 * tb - d, lambda x1: x1 * tb),
    ]
    for lo, hi in bars:
        val, _ = integrate.dblquad(h_inv4, 0.0, t, lo, hi, epsabs=0.0, epsrel=1e-12)
        total += val
    return 3 * C3 * total / (HBAR_MEV_S * speed * 1e9)


def mp_closed_form(s2, C3=0.1, speed=500, theta_deg=21):
    mp.mp.dps = 50
    d, s0, t = mp.mpf(100), mp.mpf(60), mp.mpf(120)
    tb = mp.tan(mp.radians(6))
    th = mp.radians(theta_deg)
    a = mp.acot(tb + s0 / t)
    S0 = t / mp.sin(a)
    c, ct = mp.cos(a + th), mp.cos(th)
    d_t, s0_t = ct / c * d, ct / c * s0
    s2 = mp.mpf(s2)
    x11, x21 = S0 / 2 - s2, S0 / 2 + s2
    x12 = x11 - s0_t + mp.cos(a - th) / c * S0
    x22 = x11 - s0_t
    tp = mp.tan(th)
    upper = (x11**-2 + (x11 - d_t) ** -2 - x12**-2 - (x12 - d_t) ** -2) / (tp + tb)
    lower = (x21**-2 + (x21 - d_t) ** -2 - x22**-2 - (x22 + d_t) ** -2) / (tp - tb)
    hbar_mev_s = mp.mpf("6.62607015e-34") / (2 * mp.pi) / mp.mpf("1.602176634e-19") * 1000
    pref = mp.mpf(C3) / (2 * hbar_mev_s * speed * mp.mpf(10) ** 9) / (ct**2 * c**2)
    return pref * (upper + lower)


def test_golden_phase_at_centre(standard, he500_21, c3_sinx):
    assert float(mp_closed_form(0)) == pytest.approx(GOLDEN_PHI0, rel=1e-15)
    assert float(phase_function(standard, he500_21, c3_sinx, 0.0)) == pytest.approx(GOLDEN_PHI0, rel=1e-12)


@pytest.mark.parametrize("s2", [0.0, 35.0, -50.0, 68.0])
def test_phase_matches_brute_force_area_integral(standard, s2):
    th = math.radians(21)
    ref = brute_force_phase(standard, th, 500.0, 0.1, s2)
    got = float(phase_function(standard, Beam.helium(500.0, th), SurfacePotentialParams(0.1), s2))
    assert got == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("theta_deg", [3.0, -3.0, -21.0, 28.0])
def test_vertex_sum_matches_brute_force_other_regimes(standard, theta_deg):
    th = math.radians(theta_deg)
    S0 = slit_frame(standard, th).S0
    for s2 in (0.0, 0.3 * S0):
        ref = brute_force_phase(standard, th, 700.0, 0.1, s2)
        got = float(PhaseKernel.build(standard, th, 700.0, 0.1)(s2))
        assert got == pytest.approx(ref, rel=1e-9)


def test_closed_form_equals_vertex_sum(standard):
    th = math.radians(21)
    S0 = slit_frame(standard, th).S0
    s = np.linspace(-0.49 * S0, 0.49 * S0, 97)
    cf = phase_closed_form(standard, th, 500.0, 0.1, s)
    vs = PhaseKernel.build(standard, th, 500.0, 0.1)(s)
    assert np.allclose(cf, vs, rtol=1e-12, atol=0)


def test_zero_coupling_gives_zero_phase(standard, he500_21):
    s = np.linspace(-60, 60, 11)
    assert np.all(phase_function(standard, he500_21, SurfacePotentialParams(0.0), s) == 0.0)


def test_phase_diverges_at_walls(standard, he500_21, c3_sinx):
    h = slit_frame(standard, he500_21.theta).S0 / 2
    deltas = np.array([1.0, 0.1, 0.01, 0.001])
    for side in (1, -1):
        ph = phase_function(standard, he500_21, c3_sinx, side * (h - deltas))
        assert np.all(np.diff(ph) > 0)
        assert ph[-1] > 1e4


def test_domain_and_singularity_errors(standard, he500_21, c3_sinx):
    h = slit_frame(standard, he500_21.theta).S0 / 2
    with pytest.raises(DomainError):
        phase_function(standard, he500_21, c3_sinx, h)
    with pytest.raises(DomainError):
        phase_function(standard, he500_21, c3_sinx, np.array([0.0, -h - 1]))
    with pytest.raises(GeometrySingularity):
        phase_function(standard, Beam.helium(500.0, standard.wedge_angle_beta), c3_sinx, 0.0)
    with pytest.raises(GeometrySingularity):
        phase_function(standard, Beam.helium(500.0, -standard.wedge_angle_beta), c3_sinx, 0.0)
    with pytest.raises(ShadowingError):
        phase_function(standard, Beam.helium(500.0, math.radians(-35)), c3_sinx, 0.0)


def test_negative_coupling_rejected():
    with pytest.raises(ValueError):
        SurfacePotentialParams(-0.1)
    assert SurfacePotentialParams(math.pi / 6).C6 == pytest.approx(1.0)


angles = st.floats(-30.0, 30.0).filter(lambda x: abs(abs(x) - 6.0) > 0.5)


@settings(max_examples=60, deadline=None)
@given(angles, st.floats(150.0, 3000.0), st.floats(0.0, 0.6), st.floats(-0.45, 0.45), st.floats(1.1, 5.0))
def test_phase_scaling(theta_deg, v, C3, frac, factor):
    geom = GratingGeometry.standard()
    th = math.radians(theta_deg)
    s2 = frac * slit_frame(geom, th).S0
    base = float(phase_function(geom, Beam.helium(v, th), SurfacePotentialParams(C3), s2))
    faster = float(phase_function(geom, Beam.helium(v * factor, th), SurfacePotentialParams(C3), s2))
    stronger = float(phase_function(geom, Beam.helium(v, th), SurfacePotentialParams(C3 * factor), s2))
    assert faster == pytest.approx(base / factor, rel=1e-12, abs=1e-300)
    assert stronger == pytest.approx(base * factor, rel=1e-12, abs=1e-300)
    assert base >= 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(7.0, 30.0), st.floats(-0.45, 0.45))
def test_mirror_relabelling(theta_deg, frac):
    """Reflecting the grating about the slit centre maps th' -> -th' and s2 -> -s2."""
    geom = GratingGeometry.standard()
    th = math.radians(theta_deg)
    s2 = frac * slit_frame(geom, th).S0
    p = SurfacePotentialParams(0.1)
    plus = float(phase_function(geom, Beam.helium(500.0, th), p, s2))
    minus = float(phase_function(geom, Beam.helium(500.0, -th), p, -s2))
    assert minus == pytest.approx(plus, rel=1e-11)


def test_transmission_profile(standard, he500_21, c3_sinx):
    prof = transmission_atom(standard, he500_21, c3_sinx)
    h = prof.S0 / 2
    s = np.linspace(-0.999 * h, 0.999 * h, 501)
    tau = prof(s)
    assert np.allclose(np.abs(tau), 1.0, atol=1e-14)
    assert np.all(prof(np.array([-h, h, h + 1, -2 * h])) == 0)
    free = transmission_atom(standard, he500_21, SurfacePotentialParams(0.0))
    assert np.all(free(s) == 1.0)
    # tau -> 1 pointwise, linearly in C3
    dev = [np.abs(transmission_atom(standard, he500_21, SurfacePotentialParams(c))(s) - 1) for c in (1e-8, 1e-9)]
    assert np.allclose(dev[1], dev[0] / 10, rtol=1e-4)
    assert dev[1].max() < 1e-3
    with pytest.raises(ShadowingError):
        transmission_atom(standard, Beam.helium(500.0, math.radians(40)), c3_sinx)


def test_transmission_oscillates_faster_near_wall(standard, he500_21, c3_sinx):
    prof = transmission_atom(standard, he500_21, c3_sinx)
    h = prof.S0 / 2
    steps = []
    for delta in (1.0, 0.3, 0.1):
        s = h - delta - np.array([0.0, 1e-3])
        steps.append(abs(float(np.diff(prof.phase(s))[0])))
    assert steps[0] < steps[1] < steps[2]


def test_kernel_derivatives_match_finite_differences(standard, he500_21):
    k = PhaseKernel.build(standard, he500_21.theta, he500_21.speed, 0.1)
    s = np.array([-60.0, -10.0, 20.0, 69.0])
    f0, f1, f2 = k.derivatives(s)
    e = 1e-4
    assert np.allclose(f0, k(s), rtol=1e-14)
    assert np.allclose(f1, (k(s + e) - k(s - e)) / (2 * e), rtol=1e-6)
    assert np.allclose(f2, (k(s + e) - 2 * k(s) + k(s - e)) / e**2, rtol=1e-4)
