import math

import mpmath as mp
import numpy as np
import pytest
import sympy
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad as scipy_quad

from siltkit.specfun import (
    KernelPoint,
    SimplexIntegralSpec,
    calibrate_log_branch_constant,
    calibrate_szego_constant,
    cauchy_hermite_bound,
    gaussian_kernel_batch,
    heat_kernel,
    hermite_eval,
    hermite_eval_all,
    log_heat_kernel,
    normalized_hermite_log_sign,
    simplex_moment_asymptotic,
    simplex_moment_integral,
    szego_bound,
    upper_incomplete_gamma,
)

mp.mp.dps = 40


def oracle_simplex_quadrature(alpha, d, r, epsrel=1e-12):
    """Raw 2-d adaptive quadrature of the weighted kernel over {s < t}.

    Independent of the closed form: integrates in the original (s, t)
    coordinates, with breakpoint hints at the interior ridge t - s ~ peak.
    The roundoff warning at this epsrel is expected and harmless.
    """
    import warnings
    from scipy.integrate import IntegrationWarning

    a = 0.5 * r * r
    peak = a / (alpha + 0.5 * d)

    def inner(s):
        def f(t):
            x = t - s
            return x ** (-alpha - 0.5 * d) * math.exp(-a / x) \
                / (2.0 * math.pi) ** (0.5 * d)

        pts = [s + p for p in (0.1 * peak, peak, 10 * peak, 100 * peak)
               if s + p < 1.0]
        value, _ = scipy_quad(f, s, 1.0, points=pts or None, limit=400,
                              epsabs=1e-300, epsrel=epsrel)
        return value

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        value, _ = scipy_quad(inner, 0.0, 1.0, limit=400, epsabs=1e-300,
                              epsrel=10 * epsrel)
    return value


class TestHeatKernel:
    def test_zero_offset_d2(self):
        assert heat_kernel(KernelPoint(np.zeros(2), 2, 1.0)) == pytest.approx(
            1.0 / (2.0 * math.pi), rel=1e-15)

    def test_d4_offset(self):
        # direct high-precision evaluation of the displayed formula
        expected = float(mp.mpf(math.pi) ** -2 * mp.e ** -1)
        assert heat_kernel(KernelPoint([1, 0, 0, 0], 4, 0.5)) == pytest.approx(
            expected, rel=1e-14)

    def test_standard_normal_at_zero(self):
        assert heat_kernel(KernelPoint([0.0], 1, 1.0)) == pytest.approx(
            (2.0 * math.pi) ** -0.5, rel=1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            KernelPoint(np.zeros(2), 2, 0.0)
        with pytest.raises(ValueError):
            KernelPoint(np.zeros(2), 2, -1.0)
        with pytest.raises(ValueError):
            KernelPoint(np.zeros(3), 2, 1.0)

    @pytest.mark.parametrize("d,nodes", [(1, 400), (2, 140), (3, 80), (4, 48)])
    def test_normalization_on_box(self, d, nodes):
        # tensor-grid quadrature over a +-8 sqrt(t) box integrates to 1
        t = 0.7
        x, w = np.polynomial.legendre.leggauss(nodes)
        half = 8.0 * math.sqrt(t)
        x = half * x
        w = half * w
        grids = np.meshgrid(*([x] * d), indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=-1)
        values = gaussian_kernel_batch(points, t)
        weight = np.ones(len(points))
        for axis in range(d):
            idx = np.unravel_index(np.arange(len(points)), (nodes,) * d)[axis]
            weight *= w[idx]
        assert float(weight @ values) == pytest.approx(1.0, abs=1e-6)

    @given(st.integers(1, 4), st.floats(0.01, 5.0),
           st.lists(st.floats(-3, 3), min_size=4, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_log_form_matches(self, d, t, coords):
        p = KernelPoint(np.array(coords[:d]), d, t)
        assert math.exp(log_heat_kernel(p)) == pytest.approx(heat_kernel(p),
                                                             rel=1e-12)


class TestUpperIncompleteGamma:
    def test_s1(self):
        assert upper_incomplete_gamma(1, 0.5) == pytest.approx(math.exp(-0.5),
                                                               rel=1e-14)

    def test_s2(self):
        assert upper_incomplete_gamma(2, 1) == pytest.approx(2.0 * math.exp(-1),
                                                             rel=1e-14)

    def test_negative_s_vs_quadrature_oracle(self):
        oracle = float(mp.quad(lambda z: z ** -2 * mp.exp(-z), [0.25, mp.inf]))
        assert upper_incomplete_gamma(-1, 0.25) == pytest.approx(oracle,
                                                                 rel=1e-13)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            upper_incomplete_gamma(1.0, 0.0)
        with pytest.raises(ValueError):
            upper_incomplete_gamma(1.0, -2.0)

    @given(st.floats(-5.0, 8.0), st.floats(1e-4, 25.0))
    @settings(max_examples=120, deadline=None)
    def test_matches_mpmath(self, s, a):
        # the downward ladder cancels catastrophically within ~1e-4 of
        # negative integers at small a (documented); keep a 1e-3 buffer,
        # exact integers themselves take the well-posed integer ladder
        if s <= 0 and 0 < abs(s - round(s)) < 1e-3:
            s = round(s) + math.copysign(1e-3, s - round(s) or -1.0)
        mine = upper_incomplete_gamma(s, a)
        ref = float(mp.gammainc(mp.mpf(s), mp.mpf(a), mp.inf))
        assert mine == pytest.approx(ref, rel=1e-12)

    def test_near_integer_ladder_step_count(self):
        # float drift in s must not change the number of ladder steps
        for s in (-1e-5, -0.99999, -1.00001, -3.999999, -4.000001):
            mine = upper_incomplete_gamma(s, 1.0)
            ref = float(mp.gammainc(mp.mpf(s), 1.0, mp.inf))
            assert mine == pytest.approx(ref, rel=1e-7)


class TestSimplexMoment:
    def test_rejects_zero_offset(self):
        with pytest.raises(ValueError):
            SimplexIntegralSpec(alpha=0.0, d=4, u=np.zeros(4))

    def test_d4_reduction(self):
        # hand reduction (exp(-a) - a E1(a)) / (2 pi^2 |u|^2) at alpha=0, d=4
        r = 0.37
        a = 0.5 * r * r
        expected = (math.exp(-a) - a * float(mp.e1(a))) \
            / (2.0 * math.pi ** 2 * r * r)
        spec = SimplexIntegralSpec(alpha=0.0, d=4, u_norm=r)
        assert simplex_moment_integral(spec) == pytest.approx(expected, rel=1e-12)
        assert simplex_moment_integral(spec) == pytest.approx(
            oracle_simplex_quadrature(0.0, 4, r), rel=1e-9)

    def test_small_offset_power_law(self):
        # c(4) = Gamma(1)/(2 pi^2), mass ~ c(4)/|u|^2 within 1%
        r = 1e-3
        spec = SimplexIntegralSpec(alpha=0.0, d=4, u_norm=r)
        expected = 1.0 / (2.0 * math.pi ** 2 * r * r)
        assert simplex_moment_integral(spec) == pytest.approx(expected, rel=0.01)

    def test_small_offset_log_law(self):
        r = 1e-4
        spec = SimplexIntegralSpec(alpha=0.0, d=2, u_norm=r)
        expected = math.log(1.0 / r) / math.pi
        assert simplex_moment_integral(spec) == pytest.approx(expected, rel=0.05)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_against_raw_quadrature(self, alpha, d):
        for r in (0.05, 0.2, 1.0):
            spec = SimplexIntegralSpec(alpha=alpha, d=d, u_norm=r)
            assert simplex_moment_integral(spec) == pytest.approx(
                oracle_simplex_quadrature(alpha, d, r), rel=1e-8)


class TestSimplexAsymptotic:
    def test_d4_constant(self):
        spec = SimplexIntegralSpec(alpha=0.0, d=4, u_norm=1.0)
        assert simplex_moment_asymptotic(spec) == pytest.approx(
            1.0 / (2.0 * math.pi ** 2), rel=1e-14)

    def test_alpha1_d2(self):
        spec = SimplexIntegralSpec(alpha=1.0, d=2, u_norm=0.01)
        assert simplex_moment_asymptotic(spec) == pytest.approx(1e4 / math.pi,
                                                                rel=1e-12)

    def test_log_case_unit_value(self):
        spec = SimplexIntegralSpec(alpha=0.0, d=2, u_norm=math.exp(-1))
        assert simplex_moment_asymptotic(spec) == pytest.approx(1.0 / math.pi,
                                                                rel=1e-14)

    def test_unsupported_regime(self):
        with pytest.raises(ValueError):
            simplex_moment_asymptotic(SimplexIntegralSpec(alpha=0.0, d=1,
                                                          u_norm=0.5))

    @pytest.mark.parametrize("alpha,d", [(0, 3), (0, 4), (0, 5), (0.5, 2),
                                         (1, 2), (2, 5)])
    def test_ratio_tends_to_one(self, alpha, d):
        spec = SimplexIntegralSpec(alpha=alpha, d=d, u_norm=1e-3)
        ratio = simplex_moment_integral(spec) / simplex_moment_asymptotic(spec)
        assert 0.98 <= ratio <= 1.02


class TestHermite:
    def test_spec_values(self):
        assert hermite_eval(2, 0.0) == -1.0
        assert hermite_eval(3, 2.0) == 2.0
        assert hermite_eval(4, 1.0) == -2.0

    def test_exact_vs_sympy(self):
        x = sympy.symbols("x")
        for n in range(11):
            poly = sympy.Poly(sympy.polys.orthopolys.hermite_prob_poly(n, x), x)
            for xv in range(-6, 7):
                assert hermite_eval(n, float(xv)) == float(poly.eval(xv))

    def test_derivative_identity(self):
        # d/dx H_n = n H_{n-1} by central differences
        h = 1e-5
        xs = np.linspace(-5, 5, 41)
        for n in range(1, 16):
            num = (hermite_eval(n, xs + h) - hermite_eval(n, xs - h)) / (2 * h)
            ref = n * hermite_eval(n - 1, xs)
            scale = np.maximum(np.abs(ref), 1.0)
            assert np.max(np.abs(num - ref) / scale) < 1e-6

    def test_generating_function(self):
        fact = np.cumprod(np.concatenate([[1.0], np.arange(1, 61)]))
        for z in (0.3, -0.7, 1.0):
            for xv in (0.0, 1.3, -2.2):
                table = hermite_eval_all(60, np.array([xv]))[:, 0]
                partial = float(np.sum(table * z ** np.arange(61) / fact))
                assert partial == pytest.approx(math.exp(z * xv - z * z / 2),
                                                abs=1e-10)

    @given(st.integers(2, 25), st.floats(-5, 5))
    @settings(max_examples=80, deadline=None)
    def test_recurrence_identity(self, n, x):
        lhs = hermite_eval(n, x)
        rhs = x * hermite_eval(n - 1, x) - (n - 1) * hermite_eval(n - 2, x)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)

    def test_negative_order_rejected(self):
        with pytest.raises(ValueError):
            hermite_eval(-1, 0.0)


class TestCauchyHermiteBound:
    def test_zero_order(self):
        assert cauchy_hermite_bound(0, 0.0, 1.0) == pytest.approx(0.5)

    def test_direct_formula(self):
        expected = math.log(2) + 0.5 + math.log(4) + 1.0
        assert cauchy_hermite_bound(2, 1.0, 0.25) == pytest.approx(expected,
                                                                   rel=1e-14)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            cauchy_hermite_bound(2, 0.0, 0.0)

    def test_no_overflow_at_large_order(self):
        assert math.isfinite(cauchy_hermite_bound(1000, 3.0, 1e-3))

    def test_monte_carlo_domination(self):
        # |H_n(inc/sqrt(dt))| <= n! sqrt(e) dt^(-n/2) e^|inc| on 1e4 draws
        rng = np.random.default_rng(7)
        s = rng.uniform(0, 1, 10_000)
        t = rng.uniform(0, 1, 10_000)
        s, t = np.minimum(s, t), np.maximum(s, t) + 1e-9
        dt = t - s
        inc = rng.standard_normal(10_000) * np.sqrt(dt)
        from scipy.special import gammaln
        violations = 0
        for n in range(1, 31):
            _, log_scaled = normalized_hermite_log_sign(n, inc / np.sqrt(dt))
            log_h = log_scaled + 0.5 * gammaln(n + 1)
            bound = gammaln(n + 1) + 0.5 - 0.5 * n * np.log(dt) + np.abs(inc)
            violations += int(np.sum(log_h > bound))
        assert violations == 0


class TestSzegoBound:
    def test_trivial_case(self):
        assert szego_bound(0, 0.0, 0.5, 3.0) == pytest.approx(math.log(3.0))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            szego_bound(1, 0.0, 0.1, 1.0)
        with pytest.raises(ValueError):
            szego_bound(1, 0.0, 0.3, 0.0)

    @pytest.mark.parametrize("alpha", [0.25, 0.5])
    def test_calibrated_constant_dominates(self, alpha):
        c = calibrate_szego_constant(alpha, 200)
        assert math.isfinite(c) and c > 0
        # fresh grid, offset from the calibration grid points
        xs = np.arange(0.005, 35.0, 0.0137)
        power = (8 * alpha - 1) / 12.0
        damp = np.exp(-alpha * xs * xs)
        w_prev = damp.copy()
        w = xs * damp
        margin = 1.05 * c
        assert np.max(np.abs(w_prev)) <= margin
        assert np.max(np.abs(w)) * 1.0 <= margin
        for m in range(1, 200):
            w, w_prev = xs * w / math.sqrt(m + 1) \
                - math.sqrt(m / (m + 1)) * w_prev, w
            assert np.max(np.abs(w)) * (m + 1) ** power <= margin

    def test_log_branch_constant_close_to_inverse_pi(self):
        c0 = calibrate_log_branch_constant()
        assert 1.0 / math.pi < c0 < 1.2 / math.pi
