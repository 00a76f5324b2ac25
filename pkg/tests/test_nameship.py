"""Tests for the truncated nameship likelihood and its maximiser."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from negcon.core import Frames
from negcon.errors import DivergenceError, InvalidArgumentError
from negcon.nameship import (
    INTERCEPT,
    NameshipParams,
    category_probs,
    fit_nameship,
    hessian,
    joint_prob,
    log_likelihood,
    score,
    score_contributions,
    truncated_prob,
    truncated_probs,
)
from negcon.simulation import example_config, simulate

from conftest import make_frames, random_theta


def intercept_frames(types):
    """Frames whose naming models have intercepts only."""
    n = len(types)
    return Frames(a=np.zeros(n), z=np.zeros(n), c=np.zeros((n, 0)), y=np.zeros(n), s=types,
                  c1=np.zeros((n, 0)), c2=np.zeros((n, 0)), c_names=(), c1_names=(), c2_names=())


def theta_of(t1, t2):
    return NameshipParams(np.atleast_1d(t1), np.atleast_1d(t2))


mpmath.mp.dps = 50


def logistic(x):
    return 1 / (1 + mpmath.exp(-x))


def enumerate_cells(theta, frame):
    """Brute force in 50-digit arithmetic: the four (r1, r2) cells from two
    independent logistics."""
    mpf = mpmath.mpf
    eta1 = mpf(theta.theta1[0]) + sum(mpf(b) * mpf(x) for b, x in zip(theta.theta1[1:], frame.c1))
    eta2 = mpf(theta.theta2[0]) + sum(mpf(b) * mpf(x) for b, x in zip(theta.theta2[1:], frame.c2))
    p1, p2 = logistic(eta1), logistic(eta2)
    cells = {}
    for r1 in (0, 1):
        for r2 in (0, 1):
            cells[2 * r1 + r2] = (p1 if r1 else 1 - p1) * (p2 if r2 else 1 - p2)
    return [cells[s] for s in range(4)]


class TestJointProb:
    def test_zero_theta_is_fair_coins(self):
        f = intercept_frames([1])
        assert joint_prob(theta_of(0, 0), f[0], 1, 0) == pytest.approx(0.25, abs=1e-15)

    def test_product_of_logistics(self):
        # (3/4) * (1/2)
        f = intercept_frames([3])
        assert joint_prob(theta_of(math.log(3), 0), f[0], 1, 1) == pytest.approx(0.375, abs=1e-15)

    def test_normalised(self, frames, rng):
        theta = random_theta(frames, rng)
        total = sum(joint_prob(theta, frames, r1, r2) for r1 in (0, 1) for r2 in (0, 1))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_dimension_mismatch(self, frames):
        with pytest.raises(InvalidArgumentError, match="dimensions"):
            joint_prob(theta_of([0, 0], [0]), frames, 1, 0)


class TestCategoryProbs:
    def test_uniform_at_zero(self):
        np.testing.assert_allclose(category_probs(theta_of(0, 0), intercept_frames([1])[0]),
                                   [0.25] * 4, atol=1e-15)

    def test_enumeration_example(self):
        # theta1 intercept log 2: Pr(R1 = 1) = 2/3, Pr(R2 = 1) = 1/2
        got = category_probs(theta_of(math.log(2), 0), intercept_frames([1])[0])
        np.testing.assert_allclose(got, [1 / 6, 1 / 6, 2 / 6, 2 / 6], atol=1e-15)

    def test_matches_joint_prob(self, frames, rng):
        theta = random_theta(frames, rng)
        probs = category_probs(theta, frames)
        for s, (r1, r2) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            np.testing.assert_allclose(probs[:, s], joint_prob(theta, frames, r1, r2), rtol=1e-14)

    def test_against_enumeration(self, frames, rng):
        for _ in range(100):
            theta = random_theta(frames, rng, scale=0.3)
            i = rng.integers(len(frames))
            expected = [float(c) for c in enumerate_cells(theta, frames[i])]
            np.testing.assert_allclose(category_probs(theta, frames[i]), expected, rtol=0, atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=7, max_size=7))
    def test_normalisation_property(self, values):
        f = make_frames(12, seed=5)
        theta = NameshipParams.from_vector(np.array(values) / 10, NameshipParams.zeros(f))
        probs = category_probs(theta, f)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(truncated_probs(theta, f).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(probs >= 0)


class TestTruncatedProb:
    def test_symmetric(self):
        assert truncated_prob(theta_of(0, 0), intercept_frames([1])[0]) == pytest.approx(1 / 3)

    def test_enumeration_example(self):
        # renormalise (1/6, 1/6, 2/6, 2/6) over s >= 1
        f = intercept_frames([1, 2, 3])
        np.testing.assert_allclose(truncated_prob(theta_of(math.log(2), 0), f),
                                   [1 / 5, 2 / 5, 2 / 5], atol=1e-15)

    def test_conditional_identity(self, frames, rng):
        theta = random_theta(frames, rng)
        probs = category_probs(theta, frames)
        # 1 - p0 written as p1 + p2 + p3 avoids cancellation when p0 is near 1
        expected = probs[np.arange(len(frames)), frames.s] / probs[:, 1:].sum(axis=1)
        np.testing.assert_allclose(truncated_prob(theta, frames), expected, rtol=1e-12)

    def test_null_type_rejected(self):
        with pytest.raises(InvalidArgumentError, match="never observed"):
            truncated_prob(theta_of(0, 0), intercept_frames([0])[0])


class TestLogLikelihood:
    def test_single_symmetric(self):
        assert log_likelihood(theta_of(0, 0), intercept_frames([2])) == pytest.approx(math.log(1 / 3))

    def test_additive(self):
        assert log_likelihood(theta_of(0, 0), intercept_frames([3] * 7)) == pytest.approx(
            7 * math.log(1 / 3), rel=1e-14)

    def test_brute_force(self, frames, rng):
        for _ in range(50):
            theta = random_theta(frames, rng, scale=0.3)
            expected = mpmath.mpf(0)
            for frame in frames:
                cells = enumerate_cells(theta, frame)
                expected += mpmath.log(cells[frame.s] / (cells[1] + cells[2] + cells[3]))
            expected = float(expected)
            assert abs(log_likelihood(theta, frames) - expected) <= 1e-12 * max(1, abs(expected))

    def test_rejects_null_frames(self):
        with pytest.raises(InvalidArgumentError):
            log_likelihood(theta_of(0, 0), intercept_frames([1, 0]))


def fd_gradient(fun, x, h=1e-5):
    grad = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return grad


class TestScore:
    def test_finite_differences(self, frames, rng):
        for _ in range(10):
            theta = random_theta(frames, rng, scale=0.1)
            fd = fd_gradient(lambda v: log_likelihood(NameshipParams.from_vector(v, theta), frames),
                             theta.vector)
            an = score(theta, frames)
            assert np.max(np.abs(an - fd)) <= 1e-6 * max(1.0, np.max(np.abs(an)))

    def test_one_dyad_by_hand(self):
        # cells s = 1, 2, 3 have weights e^b, e^a, e^(a+b); for s = 3 the score is
        # r - E(r | S >= 1) = (1 - Pr(R1 = 1 | S >= 1), 1 - Pr(R2 = 1 | S >= 1)).
        a, b = 0.4, -0.7
        w = np.exp([b, a, a + b])
        q = w / w.sum()
        expected = [1 - (q[1] + q[2]), 1 - (q[0] + q[2])]
        np.testing.assert_allclose(score(theta_of(a, b), intercept_frames([3])), expected,
                                   rtol=1e-14)

    def test_contributions_sum(self, frames, rng):
        theta = random_theta(frames, rng)
        np.testing.assert_allclose(score_contributions(theta, frames).sum(axis=0),
                                   score(theta, frames), rtol=1e-12)

    def test_hessian_matches_score_differences(self, frames, rng):
        theta = random_theta(frames, rng, scale=0.1)
        fd = np.array([fd_gradient(lambda v: score(NameshipParams.from_vector(v, theta), frames)[i],
                                   theta.vector) for i in range(len(theta.vector))])
        h = hessian(theta, frames)
        np.testing.assert_allclose(h, h.T, atol=1e-12)
        np.testing.assert_allclose(h, fd, atol=1e-5 * np.max(np.abs(h)))


@pytest.fixture(scope="module")
def simulated():
    return simulate(example_config(n_observed=4000, seed=11)).frames


class TestFitNameship:
    def test_converges_with_small_score(self, simulated):
        rep = fit_nameship(simulated)
        assert rep.converged
        assert rep.gradient_norm <= 1e-8 * len(simulated)
        assert np.max(np.abs(score(rep.theta_hat, simulated))) == pytest.approx(rep.gradient_norm)

    def test_hessian_negative_semidefinite(self, simulated):
        rep = fit_nameship(simulated)
        assert np.max(np.linalg.eigvalsh(rep.hessian)) <= 1e-8

    def test_restart_at_optimum(self, simulated):
        rep = fit_nameship(simulated)
        again = fit_nameship(simulated, init=rep.theta_hat)
        assert again.converged and again.iterations <= 2

    def test_monotone_ascent(self, simulated):
        lls = [fit_nameship(simulated, max_iter=k).loglik for k in range(8)]
        assert all(b >= a for a, b in zip(lls, lls[1:]))

    def test_recovers_centered_truth(self, simulated):
        # ages are centred at the sample mean, so only slopes are comparable directly
        rep = fit_nameship(simulated)
        t = rep.theta_hat.to_dict()
        se = dict(zip(rep.theta_hat.names, rep.se))
        assert abs(t["theta1"]["z"] - 0.35) < 4 * se["theta1[z]"]
        assert abs(t["theta2"]["age2"] - 0.12) < 4 * se["theta2[age2]"]

    def test_separation_detected(self):
        with pytest.raises(DivergenceError) as info:
            fit_nameship(intercept_frames([3] * 50))
        assert set(info.value.directions) <= {"theta1[(intercept)]", "theta2[(intercept)]"}
        assert info.value.directions

    def test_non_convergence_is_reported(self, simulated):
        rep = fit_nameship(simulated, max_iter=1)
        assert not rep.converged and rep.iterations == 1

    def test_intercept_only_closed_form(self):
        # MLE equates truncated cell frequencies: counts (10, 20, 30) -> e^b:e^a:e^(a+b) = 1:2:3
        f = intercept_frames([1] * 10 + [2] * 20 + [3] * 30)
        rep = fit_nameship(f)
        np.testing.assert_allclose(rep.theta_hat.vector, [math.log(3), math.log(1.5)], atol=1e-9)

    def test_invalid_tolerance(self, simulated):
        with pytest.raises(InvalidArgumentError):
            fit_nameship(simulated, tol=0)

    def test_report_json(self, simulated):
        out = fit_nameship(simulated).to_json()
        assert out["kind"] == "nameship"
        assert set(out["theta1"]) == {INTERCEPT, "sex1", "age1", "z"}
        assert set(out["theta2"]) == {INTERCEPT, "sex2", "age2"}
        assert out["converged"] is True and isinstance(out["iterations"], int)
