"""Bound-verifier tests.  Oracles: literal pair enumeration for the
conditional expectations, an independent re-transcription of the
contraction/noise formulas, and grid maximization for the slope constant."""

import numpy as np
import pytest

from rbsgd.barrier import b_slope, c_slope
from rbsgd.problem import AffineConstraintSet, FiniteSumObjective, Problem, generate_ellipsoid_problem
from rbsgd.schedules import BarrierSchedule, PowerLawSchedule
from rbsgd.solvers import make_state, sgd_step, solve_central_point
from rbsgd.theory import (
    BoundCheck,
    K0NotFoundError,
    TheoryConstants,
    c_grad_pointwise_bound,
    check_bound_c_norm,
    check_bound_c_sq,
    check_bound_phi_sq,
    check_descent,
    check_unbiasedness,
    compute_constants,
    find_k0,
    xi_r,
)

GAMMA = PowerLawSchedule(0.05, 0.8)
DINF = 0.5
BARRIER = BarrierSchedule(DINF, PowerLawSchedule(0.5, 0.3))


@pytest.fixture(scope="module")
def small():
    problem = generate_ellipsoid_problem(d=5, m=8, n=3, seed=2, radius2=1.0, target_norm=2.0)
    constants = compute_constants(problem, DINF)
    return problem, constants


def single_pair_problem():
    return Problem(
        objective=FiniteSumObjective(np.array([[1.0, 1.5]]), 0.4),
        constraints=AffineConstraintSet(np.array([[0.6, -0.2]]), np.array([-2.0])),
    )


class TestConstants:
    def test_slope_constant_is_inverse_floor(self, small):
        _, constants = small
        assert constants.c_hat == 2.0
        big = compute_constants(
            generate_ellipsoid_problem(d=4, m=6, n=2, seed=3, radius2=1.0, target_norm=1.5), 1e-6
        )
        assert big.c_hat == 1e6

    def test_slope_constant_matches_grid_maximization(self):
        # The per-unit-gap slope bound max(1/dk, 2/(dk + sqrt(dk*dinf)))
        # over dk >= dinf peaks at dk = dinf where it equals 1/dinf.
        for dinf in (0.5, 1e-2, 1e-6):
            dks = dinf * np.exp(np.linspace(0.0, 20.0, 20_001))
            vals = np.maximum(1.0 / dks, 2.0 / (dks + np.sqrt(dks * dinf)))
            assert np.max(vals) == pytest.approx(1.0 / dinf, rel=1e-12)
            assert np.argmax(vals) == 0

    def test_smoothness_constant_formula(self, small):
        problem, constants = small
        max_sq = float(np.max(problem.constraints.row_norms**2))
        assert constants.L_hat == pytest.approx(problem.objective.lipschitz + max_sq / DINF)

    def test_smoothness_constant_example_numbers(self):
        # lipschitz 2.25 with a single constraint row of squared norm 3
        # and floor 0.5 gives 2.25 + 6.
        problem = Problem(
            objective=FiniteSumObjective(np.array([[1.0, 1.0]]), 0.0),
            constraints=AffineConstraintSet(np.array([[1.0, np.sqrt(2.0)]]), np.array([-50.0])),
        )
        constants = compute_constants(problem, 0.5)
        assert constants.L_hat == pytest.approx(8.25, rel=1e-9)

    def test_single_pair_noise_vanishes(self):
        constants = compute_constants(single_pair_problem(), 0.25, grad_tol=1e-12)
        assert constants.sigma_phi <= 1e-20

    def test_moment_inequalities(self, small):
        _, constants = small
        assert constants.a_bar**2 <= constants.a_bbar * (1 + 1e-12)
        assert constants.a_bbar**2 <= constants.a_hat * (1 + 1e-12)
        assert constants.mu <= constants.lipschitz <= constants.L_hat

    def test_validation_rejects_bad_fields(self, small):
        _, constants = small
        with pytest.raises(ValueError):
            TheoryConstants(
                a_bar=-1.0, a_bbar=1.0, a_hat=1.0, b_bar=0.0, b_bbar=0.0, c_hat=1.0,
                L_hat=5.0, sigma_phi=0.0, mu=2.0, lipschitz=3.0, delta_inf=0.5,
                x_star=np.zeros(2),
            )
        with pytest.raises(ValueError):
            TheoryConstants(
                a_bar=1.0, a_bbar=1.0, a_hat=1.0, b_bar=0.0, b_bbar=0.0, c_hat=1.0,
                L_hat=2.0, sigma_phi=0.0, mu=2.0, lipschitz=3.0, delta_inf=0.5,
                x_star=np.zeros(2),
            )


class TestXiR:
    def test_frozen_gap_zeroes_xi(self, small):
        _, constants = small
        frozen = BarrierSchedule(DINF, PowerLawSchedule(0.0, 0.0))
        xi, r = xi_r(constants, GAMMA, frozen, 5)
        assert xi == 0.0
        assert r == pytest.approx(
            constants.c_hat * constants.a_bar / 2.0 + constants.b_bar / (2.0 * DINF * DINF)
        )

    def test_monotone_decay(self, small):
        _, constants = small
        xs = [xi_r(constants, GAMMA, BARRIER, k)[0] for k in (10, 1000, 1_000_000)]
        assert xs[0] > xs[1] > xs[2] > 0.0

    def test_noise_term_eventually_decreasing(self, small):
        _, constants = small
        def q(k):
            xi, r = xi_r(constants, GAMMA, BARRIER, k)
            return GAMMA(k) * BARRIER.epsilon(k) * r + 4.0 * GAMMA(k) ** 2 * constants.sigma_phi
        vals = [q(k) for k in (10**3, 10**4, 10**5, 10**6)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_matches_independent_transcription(self, small):
        # Second, separately written rendering of the same two formulas.
        _, c = small
        for k in (1, 7, 93, 12_345):
            g, e, dk = GAMMA(k), BARRIER.epsilon(k), BARRIER.delta(k)
            p = dk * c.delta_inf
            xi_ref = 2 * e / p * (3 * g * e * c.a_hat / p + c.a_bbar + c.b_bar) + 2 * c.c_hat * e * c.a_bar
            r_ref = (
                c.c_hat * c.a_bar / 2
                + c.b_bar / (2 * p)
                + 6 * g * c.c_hat**2 * e * c.a_bbar
                + 6 * g * c.b_bbar * e / p**2
            )
            xi, r = xi_r(c, GAMMA, BARRIER, k)
            assert xi == pytest.approx(xi_ref, rel=1e-12)
            assert r == pytest.approx(r_ref, rel=1e-12)

    def test_positive(self, small):
        _, constants = small
        for k in (1, 10, 10**6):
            xi, r = xi_r(constants, GAMMA, BARRIER, k)
            assert xi > 0 and r > 0


class TestFindK0:
    def test_immediate_when_conditions_hold_at_one(self, small):
        _, constants = small
        gamma = PowerLawSchedule(1.0 / (8.0 * constants.L_hat), 0.0)
        tiny_gap = BarrierSchedule(DINF, PowerLawSchedule(1e-9, 0.3))
        assert find_k0(constants, gamma, tiny_gap) == 1

    def test_transition_is_exact(self, small):
        _, constants = small
        from rbsgd.theory import _contraction_ok

        k0 = find_k0(constants, GAMMA, BARRIER, k_max=10**7)
        assert k0 > 1
        assert _contraction_ok(constants, GAMMA, BARRIER, k0)
        assert not _contraction_ok(constants, GAMMA, BARRIER, k0 - 1)
        xi, _ = xi_r(constants, GAMMA, BARRIER, k0)
        assert constants.mu - xi > 0
        g = GAMMA(k0)
        assert g * (1 - 4 * g * constants.L_hat) >= 0

    def test_budget_error(self, small):
        _, constants = small
        with pytest.raises(K0NotFoundError):
            find_k0(constants, GAMMA, BARRIER, k_max=10)

    def test_tiny_floor_pushes_threshold_far_out(self):
        problem = generate_ellipsoid_problem(d=4, m=6, n=2, seed=3, radius2=1.0, target_norm=1.5)
        constants = compute_constants(problem, 1e-6)
        gamma = PowerLawSchedule(0.3, 0.8)
        barrier = BarrierSchedule(1e-6, PowerLawSchedule(5.0, 0.3))
        k0 = find_k0(constants, gamma, barrier, k_max=10**60)
        assert k0 > 10**20
        from rbsgd.theory import _contraction_ok

        assert _contraction_ok(constants, gamma, barrier, k0)
        assert not _contraction_ok(constants, gamma, barrier, k0 - 1)


class TestAveragedBounds:
    def test_c_norm_zero_at_anchor(self, small):
        problem, constants = small
        chk = check_bound_c_norm(problem, constants, GAMMA, BARRIER, constants.x_star, 3)
        assert chk.lhs == 0.0 and chk.holds

    def test_c_norm_frozen_gap_both_sides_zero(self, small):
        problem, constants = small
        frozen = BarrierSchedule(DINF, PowerLawSchedule(0.0, 0.0))
        chk = check_bound_c_norm(problem, constants, GAMMA, frozen, np.ones(5), 3)
        assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.holds

    def test_c_sq_at_anchor_reduced_form(self, small):
        problem, constants = small
        k = 4
        chk = check_bound_c_sq(problem, constants, GAMMA, BARRIER, constants.x_star, k)
        eps, dk = BARRIER.epsilon(k), BARRIER.delta(k)
        reduced = (
            3 * constants.c_hat**2 * eps**2 * constants.a_bbar
            + 3 * constants.b_bbar * eps**2 / (dk * constants.delta_inf) ** 2
        )
        assert chk.rhs == pytest.approx(reduced, rel=1e-12)
        assert chk.holds

    def test_phi_sq_at_anchor(self, small):
        problem, constants = small
        chk = check_bound_phi_sq(problem, constants, constants.x_star)
        assert chk.lhs == pytest.approx(constants.sigma_phi, rel=1e-12)
        assert chk.rhs == pytest.approx(2 * constants.sigma_phi, rel=1e-6)
        assert chk.holds

    def test_phi_sq_single_pair_at_anchor(self):
        problem = single_pair_problem()
        constants = compute_constants(problem, 0.25, grad_tol=1e-12)
        chk = check_bound_phi_sq(problem, constants, constants.x_star)
        assert chk.lhs <= 1e-20 and chk.holds

    def test_phi_sq_matches_literal_pairs(self, small):
        problem, constants = small
        rng = np.random.default_rng(4)
        x = constants.x_star + rng.normal(size=5)
        chk = check_bound_phi_sq(problem, constants, x)
        acc = 0.0
        for i in range(problem.n):
            for j in range(problem.m):
                grad = problem.component_grad(i, x) + problem.constraints.normals[j] * b_slope(
                    problem.constraints.value(j, x), constants.delta_inf
                )
                acc += float(grad @ grad)
        acc /= problem.n * problem.m
        assert chk.lhs == pytest.approx(acc, rel=1e-12)

    @pytest.mark.parametrize("check", [check_bound_c_norm, check_bound_c_sq])
    def test_random_sweep_zero_violations(self, small, check):
        problem, constants = small
        rng = np.random.default_rng(8)
        for _ in range(300):
            x = constants.x_star + rng.normal(size=5) * rng.uniform(0.1, 10)
            k = int(rng.integers(1, 10**6))
            assert check(problem, constants, GAMMA, BARRIER, x, k).holds

    def test_phi_sq_random_sweep(self, small):
        problem, constants = small
        rng = np.random.default_rng(9)
        for _ in range(300):
            x = constants.x_star + rng.normal(size=5) * rng.uniform(0.1, 10)
            assert check_bound_phi_sq(problem, constants, x).holds

    def test_pointwise_bound_random_sweep(self, small):
        problem, constants = small
        rng = np.random.default_rng(10)
        for _ in range(200):
            x = constants.x_star + rng.normal(size=5) * rng.uniform(0.1, 10)
            k = int(rng.integers(1, 10**5))
            lhs, rhs = c_grad_pointwise_bound(problem, constants, BARRIER, x, k)
            assert np.all(lhs <= rhs * (1 + 1e-9) + 1e-15)

    def test_gap_slope_capped_by_c_hat_times_eps(self):
        # Interior-side slope bound behind the pointwise estimate.
        for dinf in (0.5, 1e-2):
            for eps in (2.0, 0.1, 1e-4):
                dk = dinf + eps
                z = -np.exp(np.linspace(np.log(dinf), 12, 5000))
                cap = eps / dinf
                assert np.max(np.abs(c_slope(z, dk, dinf))) <= cap * (1 + 1e-12)


class TestDescent:
    def test_matches_literal_enumeration(self, small):
        problem, constants = small
        rng = np.random.default_rng(12)
        k0 = find_k0(constants, GAMMA, BARRIER, k_max=10**7)
        for trial in range(5):
            x = constants.x_star + rng.normal(size=5) * 2
            k = k0 + int(rng.integers(0, 100))
            chk = check_descent(problem, constants, GAMMA, BARRIER, x, k, k0=k0)
            g, dk = GAMMA(k), BARRIER.delta(k)
            acc = 0.0
            for i in range(problem.n):
                for j in range(problem.m):
                    grad = problem.component_grad(i, x) + problem.constraints.normals[
                        j
                    ] * b_slope(problem.constraints.value(j, x), dk)
                    step = x - g * grad - constants.x_star
                    acc += float(step @ step)
            acc /= problem.n * problem.m
            assert chk.lhs == pytest.approx(acc, rel=1e-12)
            assert chk.holds and chk.gated

    def test_anchor_reduced_form(self, small):
        problem, constants = small
        k0 = find_k0(constants, GAMMA, BARRIER, k_max=10**7)
        k = k0 + 3
        chk = check_descent(problem, constants, GAMMA, BARRIER, constants.x_star, k, k0=k0)
        xi, r = xi_r(constants, GAMMA, BARRIER, k)
        g, eps = GAMMA(k), BARRIER.epsilon(k)
        assert chk.rhs == pytest.approx(g * eps * r + 4 * g * g * constants.sigma_phi, rel=1e-9)
        assert chk.holds

    def test_single_pair_fixed_point(self):
        problem = single_pair_problem()
        constants = compute_constants(problem, 0.25, grad_tol=1e-12)
        gamma = PowerLawSchedule(0.02, 0.8)
        # Frozen barrier: the anchor is an exact fixed point of the update.
        frozen = BarrierSchedule(0.25, PowerLawSchedule(0.0, 0.0))
        k0 = find_k0(constants, gamma, frozen, k_max=10**7)
        chk = check_descent(problem, constants, gamma, frozen, constants.x_star, k0, k0=k0)
        assert chk.lhs <= 1e-18
        assert chk.holds
        # Adaptive barrier: the update drifts by the adaptation difference,
        # still far inside the bound.
        adaptive = BarrierSchedule(0.25, PowerLawSchedule(0.25, 0.3))
        k0a = find_k0(constants, gamma, adaptive, k_max=10**7)
        chka = check_descent(problem, constants, gamma, adaptive, constants.x_star, k0a, k0=k0a)
        assert chka.lhs <= 1e-9
        assert chka.holds

    def test_pre_threshold_checks_marked_ungated(self, small):
        problem, constants = small
        k0 = find_k0(constants, GAMMA, BARRIER, k_max=10**7)
        chk = check_descent(problem, constants, GAMMA, BARRIER, np.ones(5), max(1, k0 // 2), k0=k0)
        assert not chk.gated

    def test_states_along_trajectory(self, small):
        problem, constants = small
        k0 = find_k0(constants, GAMMA, BARRIER, k_max=10**7)
        state = make_state(problem, seed=5)
        checked = violations = 0
        for _ in range(k0 + 400):
            state = sgd_step(state, problem, GAMMA, BARRIER)
            k = state.k - 1
            if k >= k0 and k % 2 == 0:
                chk = check_descent(problem, constants, GAMMA, BARRIER, state.x, k, k0=k0)
                checked += 1
                violations += not chk.holds
        assert checked >= 150
        assert violations == 0


class TestUnbiasedness:
    def test_single_component_exact(self):
        problem = single_pair_problem()
        chk = check_unbiasedness(problem, np.array([0.3, -0.8]), 0.7)
        assert chk.holds

    def test_identical_components_exact(self):
        alphas = np.tile(np.array([[0.9, 1.4]]), (4, 1))
        problem = Problem(
            objective=FiniteSumObjective(alphas, 0.2),
            constraints=AffineConstraintSet(np.array([[1.0, 0.0], [0.0, 1.0]]), -np.ones(2)),
        )
        chk = check_unbiasedness(problem, np.array([1.0, 2.0]), 0.3)
        assert chk.holds

    def test_random_points_small_instance(self, small):
        problem, _ = small
        rng = np.random.default_rng(14)
        for _ in range(25):
            chk = check_unbiasedness(problem, rng.normal(size=5) * 5, float(rng.uniform(0.01, 2)))
            assert chk.holds
            assert chk.lhs <= 1e-12


class TestBoundCheck:
    def test_tolerance_semantics(self):
        from rbsgd.theory import _holds

        assert _holds(1.0, 1.0)
        assert _holds(1.0 + 5e-10, 1.0)
        assert not _holds(1.0 + 3e-9, 1.0)
        assert _holds(0.0, 0.0)
        assert BoundCheck("x", 1.0, 2.0, True).margin == 1.0
