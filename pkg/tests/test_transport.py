import math

import numpy as np
import pytest
from scipy.integrate import dblquad
from scipy.linalg import eigh_tridiagonal

from siltkit.marginals import TimeGrid
from siltkit.quadrature import ConvergenceError, SimplexQuadrature, \
    adaptive_partition_integral
from siltkit.rng import stream_generator
from siltkit.specfun import log_gaussian_kernel_batch
from siltkit.transport import (
    DegenerateProposalError,
    TransportPlanSpec,
    empirical_relative_entropy,
    empirical_w2,
    entropic_w2,
    entropy_bound,
    hessian_eigenvalues,
    hessian_matrix_diagonals,
    kappa,
    log_sigma2_integral,
    relative_entropy_terms,
    sinkhorn_log,
    systematic_resample,
    talagrand_bound,
    weighted_theta_samples,
)

from conftest import axis_offset

# frozen after the two independent quadrature schemes agreed to 1e-4
# (adaptive cell refinement vs per-cell scipy dblquad), d=4, n=2, |u|=0.2
ENTROPY_BOUND_BASELINE_4_2_02 = 2.7911132978


def log_sigma2_scipy_cells(u, d, n):
    """Second scheme for the singular log integral: per-cell dblquad."""
    grid = TimeGrid.make_uniform(n)
    r2 = float(np.dot(u, u))
    left, right = grid.t[:-1], grid.t[1:]
    lengths = grid.cell_lengths

    def integrand(t, s):
        alpha = np.clip(np.minimum(t, right) - np.maximum(s, left), 0, None)
        sigma2 = (t - s) - float(np.sum(alpha * alpha / lengths))
        sigma2 = max(sigma2, 1e-300)
        return math.log(sigma2) * math.exp(
            float(log_gaussian_kernel_batch(r2, d, t - s)))

    total = 0.0
    for i in range(n):
        total += dblquad(integrand, grid.t[i], grid.t[i + 1],
                         lambda s: s, grid.t[i + 1],
                         epsabs=1e-10, epsrel=1e-8)[0]
        for j in range(i + 1, n):
            total += dblquad(integrand, grid.t[i], grid.t[i + 1],
                             grid.t[j], grid.t[j + 1],
                             epsabs=1e-10, epsrel=1e-8)[0]
    return total


class TestHessianSpectrum:
    def test_small_cases(self):
        assert np.allclose(hessian_eigenvalues(1), [1.0])
        assert np.allclose(hessian_eigenvalues(2),
                           [3 - math.sqrt(5), 3 + math.sqrt(5)], atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 7, 33, 64, 128, 256])
    def test_matches_tridiagonal_solver(self, n):
        diag, off = hessian_matrix_diagonals(n)
        if n == 1:
            reference = np.array([diag[0]])
        else:
            reference = eigh_tridiagonal(diag, off, eigvals_only=True)
        assert np.max(np.abs(hessian_eigenvalues(n) - reference)) < 1e-10

    def test_kronecker_structure(self):
        # Hess = A kron I_d has A's eigenvalues with multiplicity d
        n, d = 3, 2
        diag, off = hessian_matrix_diagonals(n)
        a = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        dense = np.kron(a, np.eye(d))
        got = np.sort(np.linalg.eigvalsh(dense))
        expected = np.sort(np.repeat(hessian_eigenvalues(n), d))
        assert np.max(np.abs(got - expected)) < 1e-10

    def test_kappa_values(self):
        assert kappa(1) == pytest.approx(1.0, abs=1e-12)
        assert kappa(2) == pytest.approx(3 - math.sqrt(5), abs=1e-12)
        for n in (1, 2, 3, 17, 256):
            assert kappa(n) == pytest.approx(min(hessian_eigenvalues(n)),
                                             abs=1e-13)

    def test_scaled_kappa_limit(self):
        values = [n * kappa(n) for n in range(1, 201)]
        assert all(a < b for a, b in zip(values[:-1], values[1:]))
        assert values[-1] == pytest.approx(math.pi ** 2 / 4, rel=0.01)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            hessian_eigenvalues(0)
        with pytest.raises(ValueError):
            kappa(0)


class TestEntropyBound:
    def test_refinement_converges(self):
        for r in (0.1, 0.5):
            u = axis_offset(r, 4)
            for n in (1, 4, 8):
                coarse = log_sigma2_integral(u, 4, n, rel_tol=1e-7)
                fine = log_sigma2_integral(u, 4, n, rel_tol=1e-8)
                assert abs(coarse - fine) / abs(fine) < 1e-6

    def test_two_schemes_agree(self):
        u = axis_offset(0.2, 4)
        for n in (1, 2):
            adaptive = log_sigma2_integral(u, 4, n, rel_tol=1e-8)
            scipy_val = log_sigma2_scipy_cells(u, 4, n)
            assert adaptive == pytest.approx(scipy_val, rel=1e-4)

    def test_log_term_sign(self):
        # sigma2 <= t-s <= 1 pointwise, so the log integral is <= 0 and the
        # second term of the entropy bound is >= 0
        for n in (1, 3):
            u = axis_offset(0.3, 4)
            assert log_sigma2_integral(u, 4, n) < 0

    def test_regression_baseline(self):
        u = axis_offset(0.2, 4)
        value = entropy_bound(u, 4, 2)
        assert value == pytest.approx(ENTROPY_BOUND_BASELINE_4_2_02, abs=1e-6)

    def test_zero_offset_rejected(self):
        with pytest.raises(ValueError):
            entropy_bound(np.zeros(4), 4, 2)

    def test_fixed_rule_cross_check(self, quad_geo):
        # passing an explicit rule evaluates the same integrand directly
        u = axis_offset(0.5, 4)
        adaptive = log_sigma2_integral(u, 4, 1, rel_tol=1e-8)
        fixed = log_sigma2_integral(u, 4, 1, quad=quad_geo)
        assert fixed == pytest.approx(adaptive, rel=1e-3)


class TestTalagrandBound:
    def test_scaling_identity(self):
        u = axis_offset(0.3, 4)
        bound = talagrand_bound(u, 4, 2)
        assert bound.value == pytest.approx(2 * bound.entropy / kappa(2),
                                            rel=1e-14)
        assert not bound.vacuous

    def test_kappa_one_case(self):
        u = axis_offset(0.5, 4)
        bound = talagrand_bound(u, 4, 1)
        assert bound.kappa_n == pytest.approx(1.0, abs=1e-12)
        assert bound.value == pytest.approx(2 * bound.entropy, rel=1e-14)

    def test_direction_of_blowup(self):
        # computed direction only: the bound grows as the offset shrinks
        values = [talagrand_bound(axis_offset(r, 4), 4, 1).value
                  for r in (0.5, 0.2, 0.1, 0.05)]
        assert all(a < b for a, b in zip(values[:-1], values[1:]))


class TestImportanceSampling:
    def test_raw_mean_near_one(self, quad64):
        batch = weighted_theta_samples(axis_offset(0.3, 4), 4, 2, 99, 4000,
                                       quad64)
        se = float(np.std(batch.weights * batch.raw_mean * 4000, ddof=1)
                   / math.sqrt(4000))
        assert abs(batch.raw_mean - 1.0) <= 3 * se
        assert 0 < batch.ess <= 4000
        samples = batch.as_samples()
        assert len(samples) == 4000
        assert samples[0].weight == pytest.approx(batch.weights[0])

    def test_equal_weights_full_ess(self):
        weights = np.full(250, 1.0 / 250)
        assert 1.0 / np.sum(weights ** 2) == pytest.approx(250.0)

    def test_resampling_preserves_weighted_mean(self, quad64):
        u = axis_offset(0.35, 4)
        batch = weighted_theta_samples(u, 4, 2, 11, 3000, quad64)
        stat = batch.points[:, -1, 0] ** 2  # a fixed test function
        weighted = float(batch.weights @ stat)
        idx = systematic_resample(batch.weights, 3000, 11)
        resampled = stat[idx]
        se = float(np.std(resampled, ddof=1) / math.sqrt(len(resampled)))
        assert abs(float(np.mean(resampled)) - weighted) <= 3 * se

    def test_degenerate_proposal_raises(self, quad64):
        # an offset far outside the proposal's range underflows every weight
        with pytest.raises(DegenerateProposalError):
            weighted_theta_samples(axis_offset(60.0, 4), 4, 2, 3, 200, quad64)

    def test_entropy_terms_degenerate_sanity(self):
        assert np.all(relative_entropy_terms(np.ones(16)) == 0.0)
        assert relative_entropy_terms(np.zeros(4)).tolist() == [0, 0, 0, 0]

    def test_entropy_nonnegative_and_below_bound(self, quad64):
        for r in (0.2, 0.5):
            u = axis_offset(r, 4)
            for n in (1, 2):
                est = empirical_relative_entropy(u, 4, n, 2024, 3000, quad64)
                bound = entropy_bound(u, 4, n)
                assert est.value >= -3 * est.stderr
                assert est.value <= bound + 3 * est.stderr

    def test_entropy_deterministic_given_seed(self, quad64):
        u = axis_offset(0.3, 4)
        a = empirical_relative_entropy(u, 4, 2, 5, 500, quad64)
        b = empirical_relative_entropy(u, 4, 2, 5, 500, quad64)
        assert a.value == b.value and a.stderr == b.stderr


class TestEntropicTransport:
    def test_self_distance_small(self):
        gen = stream_generator(1, 2)
        x = gen.standard_normal((600, 2))
        plan = TransportPlanSpec(regularization=0.3, max_iterations=20000,
                                 tolerance=1e-9)
        value, err, _ = entropic_w2(x, x, plan)
        assert abs(value) < 0.05
        assert err < 1e-9

    def test_gaussian_shift_calibration(self):
        gen = stream_generator(9, 50)
        mu0 = np.array([0.7, 0.4])
        x = gen.standard_normal((2000, 2))
        y = gen.standard_normal((2000, 2)) + mu0
        plan = TransportPlanSpec(regularization=0.25, max_iterations=20000,
                                 tolerance=1e-9)
        value, _, _ = entropic_w2(x, y, plan)
        assert value == pytest.approx(float(mu0 @ mu0), rel=0.10)

    def test_triangle_sanity(self):
        gen = stream_generator(3, 4)
        plan = TransportPlanSpec(regularization=0.25, max_iterations=20000,
                                 tolerance=1e-9)
        a = gen.standard_normal((800, 2))
        b = gen.standard_normal((800, 2)) + np.array([1.0, 0.0])
        c = gen.standard_normal((800, 2)) + np.array([1.0, 1.0])

        def w2_with_bar(x, y):
            full, _, _ = entropic_w2(x, y, plan)
            half = len(x) // 2
            wa, _, _ = entropic_w2(x[:half], y[:half], plan)
            wb, _, _ = entropic_w2(x[half:], y[half:], plan)
            return math.sqrt(max(full, 0.0)), 0.5 * abs(wa - wb)

        dab, eab = w2_with_bar(a, b)
        dbc, ebc = w2_with_bar(b, c)
        dac, eac = w2_with_bar(a, c)
        assert dac <= dab + dbc + 3 * (eab + ebc + eac)

    def test_nonconvergence_raises(self):
        gen = stream_generator(5, 6)
        x = gen.standard_normal((100, 2))
        y = gen.standard_normal((100, 2)) + 4.0
        with pytest.raises(ConvergenceError):
            sinkhorn_log(np.sum((x[:, None] - y[None]) ** 2, -1), 0.05, 3,
                         1e-12)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            TransportPlanSpec(regularization=0.0)
        with pytest.raises(ValueError):
            TransportPlanSpec(tolerance=-1.0)

    def test_caps_enforced(self, quad64):
        plan = TransportPlanSpec()
        with pytest.raises(ValueError):
            empirical_w2(axis_offset(0.3, 4), 4, 2, 1, 6000, plan)
        with pytest.raises(ValueError):
            empirical_w2(axis_offset(0.3, 4), 4, 5, 1, 100, plan)

    def test_end_to_end_below_talagrand(self, quad64):
        u = axis_offset(0.3, 4)
        plan = TransportPlanSpec(regularization=0.3, max_iterations=20000,
                                 tolerance=1e-8)
        est = empirical_w2(u, 4, 2, 31, 1000, plan, quad=quad64)
        bound = talagrand_bound(u, 4, 2)
        assert not bound.vacuous
        assert est.value <= bound.value
