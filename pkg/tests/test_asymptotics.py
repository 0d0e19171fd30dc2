import math

import numpy as np
import pytest
import scipy.integrate

from hardscat import asymptotics as asy, bie, geometry as geo, rays


def bump(t, width=1.8):
    u = np.atleast_1d(np.asarray(t, dtype=float)) / width
    out = np.zeros_like(u)
    m = np.abs(u) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - u[m] ** 2))
    return out if np.ndim(t) else float(out[0])


def bump_deriv(t, n, h=1e-4):
    if n == 1:
        return (bump(t + h) - bump(t - h)) / (2 * h)
    return (bump(t + h) - 2 * bump(t) + bump(t - h)) / h ** 2


def brute_force(k, phase, a=-1.8, b=1.8):
    """Adaptive quadrature oracle of the oscillatory integral."""
    re = scipy.integrate.quad(lambda t: bump(t) * math.cos(k * phase(t)),
                              a, b, limit=20000, epsabs=1e-13, epsrel=1e-13)[0]
    im = scipy.integrate.quad(lambda t: bump(t) * math.sin(k * phase(t)),
                              a, b, limit=20000, epsabs=1e-13, epsrel=1e-13)[0]
    return complex(re, im)


def quadratic_problem():
    return asy.StationaryPhaseProblem(
        phase=lambda t: 0.5 * t * t,
        phase_deriv=lambda t, n: [t, 1.0, 0.0, 0.0][n - 1],
        amp=bump, a=-1.8, b=1.8, t0=0.0, amp_deriv=bump_deriv)


class TestStationaryPhase:
    def test_leading_against_oracle(self):
        prob = quadratic_problem()
        rel = {}
        for k in (100.0, 400.0):
            ref = brute_force(k, lambda t: 0.5 * t * t)
            rel[k] = abs(asy.stationary_phase_leading(prob, k) - ref) / abs(ref)
        assert rel[100.0] < 2e-2
        # O(1/k): a factor ~4 improvement per 4x in k
        assert 3.0 < rel[100.0] / rel[400.0] < 5.0

    def test_leading_closed_form(self):
        prob = quadratic_problem()
        k = 100.0
        expect = math.sqrt(2 * math.pi / k) * np.exp(1j * math.pi / 4) * bump(0.0)
        assert asy.stationary_phase_leading(prob, k) == pytest.approx(expect,
                                                                      rel=1e-12)

    def test_sign_flip(self):
        prob = asy.StationaryPhaseProblem(
            phase=lambda t: -0.5 * t * t,
            phase_deriv=lambda t, n: [-t, -1.0, 0.0, 0.0][n - 1],
            amp=bump, a=-1.8, b=1.8, t0=0.0)
        lead = asy.stationary_phase_leading(prob, 100.0)
        assert np.angle(lead) == pytest.approx(-math.pi / 4, abs=1e-12)

    def test_vanishing_amplitude(self):
        prob = asy.StationaryPhaseProblem(
            phase=lambda t: 0.5 * t * t,
            phase_deriv=lambda t, n: [t, 1.0, 0.0, 0.0][n - 1],
            amp=lambda t: bump(t) * t * t,
            a=-1.8, b=1.8, t0=0.0)
        assert asy.stationary_phase_leading(prob, 100.0) == 0.0

    def test_two_term_slope(self):
        prob = quadratic_problem()
        ks = [100.0, 200.0, 400.0, 800.0]
        errs = [abs(asy.stationary_phase_term(prob, k, 0)
                    + asy.stationary_phase_term(prob, k, 1)
                    - brute_force(k, lambda t: 0.5 * t * t)) for k in ks]
        slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
        assert abs(slope + 2.5) < 0.4

    def test_two_term_slope_general_phase(self):
        # cubic/quartic perturbation exercises the h-Taylor coefficients
        phase = lambda t: 0.5 * t * t + 0.1 * t ** 3 + 0.05 * t ** 4
        prob = asy.StationaryPhaseProblem(
            phase=phase,
            phase_deriv=lambda t, n: [t + 0.3 * t * t + 0.2 * t ** 3,
                                      1.0 + 0.6 * t + 0.6 * t * t,
                                      0.6 + 1.2 * t, 1.2][n - 1],
            amp=bump, a=-1.8, b=1.8, t0=0.0, amp_deriv=bump_deriv)
        ks = [100.0, 200.0, 400.0, 800.0]
        errs = [abs(asy.stationary_phase_term(prob, k, 0)
                    + asy.stationary_phase_term(prob, k, 1)
                    - brute_force(k, phase)) for k in ks]
        slope = np.polyfit(np.log(ks), np.log(errs), 1)[0]
        assert abs(slope + 2.5) < 0.4

    def test_q0_term_is_leading(self):
        prob = quadratic_problem()
        assert asy.stationary_phase_term(prob, 123.0, 0) == \
            asy.stationary_phase_leading(prob, 123.0)

    def test_h_at_stationary_point(self):
        for c in (0.5, 1.0, 3.7):
            prob = asy.StationaryPhaseProblem(
                phase=lambda t, c=c: 0.5 * c * t * t,
                phase_deriv=lambda t, n, c=c: [c * t, c, 0.0, 0.0][n - 1],
                amp=bump, a=-1.8, b=1.8, t0=0.0)
            assert prob.h_value(0.0) == pytest.approx((2 * c) ** -0.5, rel=1e-12)
            # smooth continuation across t0
            assert prob.h_value(1e-5) == pytest.approx(prob.h_value(-1e-5),
                                                       rel=1e-4)

    def test_degenerate_phase_rejected(self):
        with pytest.raises(asy.DegeneratePhaseError):
            asy.StationaryPhaseProblem(
                phase=lambda t: t ** 4,
                phase_deriv=lambda t, n: [4 * t ** 3, 12 * t * t, 24 * t, 24.0][n - 1],
                amp=bump, a=-1.8, b=1.8, t0=0.0)

    def test_printed_form_differs(self):
        # the printed exponent misses the classical constant; kept for audit
        prob = quadratic_problem()
        printed = asy.stationary_phase_term(prob, 100.0, 0, form="printed")
        corrected = asy.stationary_phase_term(prob, 100.0, 0)
        assert abs(printed) != pytest.approx(abs(corrected), rel=1e-3)


class TestKirchhoff:
    def test_value_on_illuminated_arc(self):
        scene = geo.circle_ellipse_scene(k=100.0)
        for t in (math.pi / 2 + 0.2, math.pi, 3 * math.pi / 2 - 0.2):
            assert asy.kirchhoff_envelope(scene, t) == 2.0

    def test_shadow_rejected(self):
        scene = geo.circle_ellipse_scene(k=100.0)
        with pytest.raises(rays.RayError):
            asy.kirchhoff_envelope(scene, 0.0)

    def test_mie_envelope_error_is_order_one_over_k(self):
        # |envelope - 2| ~ C/k: estimate C at k in {100, 200}, predict k=400
        errs = {}
        for k in (100.0, 200.0, 400.0):
            eta = bie.mie_total_field(0.5, k, np.array([1.0, 0.0]),
                                      np.array([math.pi]))[0]
            errs[k] = abs(eta * np.exp(1j * k * 0.5) - 2.0)
        c100 = errs[100.0] * 100.0
        c200 = errs[200.0] * 200.0
        c_est = 0.5 * (c100 + c200)
        predicted = c_est / 400.0
        assert abs(predicted - errs[400.0]) < 0.5 * errs[400.0]


@pytest.fixture(scope="module")
def go_scene():
    return geo.circle_ellipse_scene(k=100.0, max_reflections=5)


class TestGOAmplitude:
    def test_backscatter_spreading_factor(self, go_scene):
        # exact GO spreading off a circle: sqrt(rho/(rho+s)), rho = a/2
        x = np.array([-2.0, 0.0])
        amp = asy.go_leading_amplitude(go_scene, 0, x)
        a = 0.5
        expect = math.sqrt((a / 2) / (a / 2 + 2.0 - a))
        assert abs(amp.value) == pytest.approx(expect, rel=1e-8)
        assert amp.launch_param == pytest.approx(math.pi, abs=1e-10)
        assert amp.phase_value == pytest.approx(1.0, abs=1e-12)

    def test_stationary_point_matches_launch_map(self, go_scene):
        x = np.array([-1.4, 0.45])
        amp = asy.go_leading_amplitude(go_scene, 0, x)
        lp = rays.launch_point(go_scene, 0, x)
        assert abs(amp.launch_param - lp) < 1e-8

    def test_phase_equals_reflected_phase(self, go_scene):
        x = np.array([-1.4, 0.45])
        amp = asy.go_leading_amplitude(go_scene, 0, x)
        assert abs(amp.phase_value - rays.reflected_phase(go_scene, 0, x)) < 1e-10

    @pytest.mark.parametrize("m", [0, 1])
    def test_k_convergence(self, m):
        # |u_m^slow - A_{m,0}| shrinks by a per-doubling factor in [1.5, 3]
        if m == 0:
            x = np.array([-2.0, 0.3])
        else:
            base = geo.circle_ellipse_scene(k=100.0, max_reflections=3)
            t_probe = 3.2  # mid illuminated arc of the ellipse at iteration 1
            y = base.curve(1).point(t_probe)
            d = rays.reflected_direction(base, 1, t_probe)
            x = y + 1.1 * d
        devs = []
        for k in (100.0, 200.0, 400.0):
            scene = geo.circle_ellipse_scene(k=k, max_reflections=3)
            grids = {i: bie.grid_for(scene.obstacles[i], k) for i in (0, 1)}
            from hardscat import multiscatter as ms
            rec = ms.iterate(scene, m, grids)[m]
            u = bie.eval_dlp(rec.eta, k, [x])[0]
            psi = rays.reflected_phase(scene, m, x)
            amp = asy.go_leading_amplitude(scene, m, x)
            devs.append(abs(u * np.exp(-1j * k * psi) - amp.value))
        for a, b in zip(devs, devs[1:]):
            assert 1.5 <= a / b <= 3.0, devs
