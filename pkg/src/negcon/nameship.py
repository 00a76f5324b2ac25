"""Truncated likelihood of the nameship mechanism.

Each person names the other independently given covariates, with logistic
models for alter (covariates C~1, which include the negative control Z) and
ego (covariates C~2). Only dyads with at least one naming are observed, so the
likelihood conditions on S >= 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit, logsumexp

from .core import AnalysisFrame, Frames, classify_nameship, decode_nameship
from .errors import DivergenceError, InvalidArgumentError

log = logging.getLogger(__name__)

INTERCEPT = "(intercept)"
SEPARATION_BOUND = 15.0


@dataclass(frozen=True)
class NameshipParams:
    """Coefficients of the alter (theta1) and ego (theta2) naming models.

    Element 0 of each vector is the intercept; the rest follow the frame's
    ``c1_names`` / ``c2_names``.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    names1: tuple = ()
    names2: tuple = ()

    def __post_init__(self):
        t1 = np.array(self.theta1, dtype=float).ravel()
        t2 = np.array(self.theta2, dtype=float).ravel()
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
            raise InvalidArgumentError("nameship coefficients must be finite")
        t1.flags.writeable = False
        t2.flags.writeable = False
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)
        names1 = tuple(self.names1) or (INTERCEPT,) + tuple(f"x{i}" for i in range(1, len(t1)))
        names2 = tuple(self.names2) or (INTERCEPT,) + tuple(f"x{i}" for i in range(1, len(t2)))
        if len(names1) != len(t1) or len(names2) != len(t2):
            raise InvalidArgumentError("coefficient names do not match coefficient count")
        object.__setattr__(self, "names1", names1)
        object.__setattr__(self, "names2", names2)

    @classmethod
    def zeros(cls, frames) -> NameshipParams:
        names1, names2 = _layout(frames)
        return cls(np.zeros(len(names1)), np.zeros(len(names2)), names1, names2)

    @classmethod
    def from_vector(cls, vector, like: NameshipParams) -> NameshipParams:
        k = len(like.theta1)
        vector = np.asarray(vector, dtype=float)
        return cls(vector[:k], vector[k:], like.names1, like.names2)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2])

    @property
    def names(self) -> tuple:
        return (tuple(f"theta1[{n}]" for n in self.names1)
                + tuple(f"theta2[{n}]" for n in self.names2))

    def to_dict(self) -> dict:
        return {"theta1": dict(zip(self.names1, map(float, self.theta1))),
                "theta2": dict(zip(self.names2, map(float, self.theta2)))}


def _layout(frames):
    if isinstance(frames, AnalysisFrame):
        raise InvalidArgumentError("a single frame carries no column names; pass Frames")
    return (INTERCEPT,) + tuple(frames.c1_names), (INTERCEPT,) + tuple(frames.c2_names)


def _designs(frames):
    """Return (X1, X2, s, single) with intercept columns prepended."""
    if isinstance(frames, AnalysisFrame):
        c1 = np.atleast_2d(np.asarray(frames.c1, dtype=float))
        c2 = np.atleast_2d(np.asarray(frames.c2, dtype=float))
        s = np.array([int(frames.s)])
        single = True
    else:
        c1, c2, s, single = frames.c1, frames.c2, frames.s, False
    n = c1.shape[0]
    return np.column_stack([np.ones(n), c1]), np.column_stack([np.ones(n), c2]), s, single


def _predictors(theta: NameshipParams, frames):
    x1, x2, s, single = _designs(frames)
    if x1.shape[1] != len(theta.theta1) or x2.shape[1] != len(theta.theta2):
        raise InvalidArgumentError(
            f"theta dimensions ({len(theta.theta1)}, {len(theta.theta2)}) do not match the frame "
            f"layout ({x1.shape[1]}, {x2.shape[1]}) including intercepts")
    return x1 @ theta.theta1, x2 @ theta.theta2, x1, x2, s, single


def _squeeze(values, single):
    return values[0] if single else values


def joint_prob(theta: NameshipParams, frames, r1, r2):
    """Pr(R1 = r1, R2 = r2 | A, C, Z; theta), untruncated."""
    r1, r2 = decode_nameship(classify_nameship(r1, r2))
    eta1, eta2, *_, single = _predictors(theta, frames)
    logp = (log_expit(eta1) if r1 else log_expit(-eta1)) + (log_expit(eta2) if r2 else log_expit(-eta2))
    return _squeeze(np.exp(logp), single)


def _category_logprobs(eta1, eta2):
    l1, l1c = log_expit(eta1), log_expit(-eta1)
    l2, l2c = log_expit(eta2), log_expit(-eta2)
    return np.column_stack([l1c + l2c, l1c + l2, l1 + l2c, l1 + l2])


def category_probs(theta: NameshipParams, frames) -> np.ndarray:
    """Untruncated Pr(S = s | A, C, Z; theta) for s = 0..3 (columns)."""
    eta1, eta2, *_, single = _predictors(theta, frames)
    return _squeeze(np.exp(_category_logprobs(eta1, eta2)), single)


def _truncated_logprobs(eta1, eta2):
    # Observed cells s = 1, 2, 3 have log-weights eta2, eta1, eta1 + eta2.
    logits = np.column_stack([eta2, eta1, eta1 + eta2])
    return logits - logsumexp(logits, axis=1, keepdims=True)


def truncated_probs(theta: NameshipParams, frames) -> np.ndarray:
    """Pr(S = s | S >= 1, A, C, Z; theta) for s = 1, 2, 3 (columns)."""
    eta1, eta2, *_, single = _predictors(theta, frames)
    return _squeeze(np.exp(_truncated_logprobs(eta1, eta2)), single)


def _observed(s):
    s = np.asarray(s)
    if np.any(s < 1):
        raise InvalidArgumentError("null nameship (s = 0) is never observed")
    return s


def truncated_prob(theta: NameshipParams, frames):
    """Probability of each frame's own nameship type given S >= 1."""
    eta1, eta2, _, _, s, single = _predictors(theta, frames)
    s = _observed(s)
    logq = _truncated_logprobs(eta1, eta2)
    return _squeeze(np.exp(logq[np.arange(len(s)), s - 1]), single)


def log_likelihood(theta: NameshipParams, frames) -> float:
    eta1, eta2, _, _, s, _ = _predictors(theta, frames)
    s = _observed(s)
    logq = _truncated_logprobs(eta1, eta2)
    return float(np.sum(logq[np.arange(len(s)), s - 1]))


def _eta_derivatives(eta1, eta2, s):
    """Per-dyad gradient and Hessian of the log-likelihood w.r.t. (eta1, eta2).

    The observed cell given S >= 1 is an exponential family in (r1, r2) with
    natural parameter (eta1, eta2), so the Hessian is minus the covariance of
    (r1, r2). Gradients are written so the r = 1 branch never cancels.
    """
    q = np.exp(_truncated_logprobs(eta1, eta2))
    q1, q2, q3 = q[:, 0], q[:, 1], q[:, 2]
    r1 = s >= 2
    r2 = (s == 1) | (s == 3)
    g1 = np.where(r1, q1, -(q2 + q3))
    g2 = np.where(r2, q2, -(q1 + q3))
    v1 = q1 * (q2 + q3)
    v2 = q2 * (q1 + q3)
    cov12 = -q1 * q2
    return g1, g2, v1, v2, cov12


def score_contributions(theta: NameshipParams, frames) -> np.ndarray:
    """Per-dyad score of the truncated log-likelihood, one row per dyad."""
    eta1, eta2, x1, x2, s, single = _predictors(theta, frames)
    g1, g2, *_ = _eta_derivatives(eta1, eta2, _observed(s))
    out = np.column_stack([x1 * g1[:, None], x2 * g2[:, None]])
    return _squeeze(out, single)


def score(theta: NameshipParams, frames) -> np.ndarray:
    """Analytic gradient of :func:`log_likelihood` (theta1 block, then theta2)."""
    contrib = score_contributions(theta, frames)
    return contrib if contrib.ndim == 1 else contrib.sum(axis=0)


def hessian(theta: NameshipParams, frames) -> np.ndarray:
    eta1, eta2, x1, x2, s, _ = _predictors(theta, frames)
    _, _, v1, v2, cov12 = _eta_derivatives(eta1, eta2, _observed(s))
    h11 = -(x1.T * v1) @ x1
    h22 = -(x2.T * v2) @ x2
    h12 = -(x1.T * cov12) @ x2
    return np.block([[h11, h12], [h12.T, h22]])


@dataclass(frozen=True)
class MleReport:
    theta_hat: NameshipParams
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    hessian: np.ndarray
    n: int = 0

    @property
    def cov(self) -> np.ndarray:
        """Inverse observed information."""
        return np.linalg.inv(-self.hessian)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def to_json(self) -> dict:
        from scipy.stats import norm

        out = {"kind": "nameship", **self.theta_hat.to_dict(),
               "loglik": float(self.loglik), "converged": bool(self.converged),
               "iterations": int(self.iterations), "gradient_norm": float(self.gradient_norm),
               "n": int(self.n)}
        try:
            se = self.se
        except np.linalg.LinAlgError:
            se = np.full(len(self.theta_hat.vector), np.nan)
        est = self.theta_hat.vector
        p = 2 * norm.sf(np.abs(est / se))
        k = len(self.theta_hat.theta1)
        for block, sl, names in (("theta1", slice(0, k), self.theta_hat.names1),
                                 ("theta2", slice(k, None), self.theta_hat.names2)):
            out[f"{block}_se"] = dict(zip(names, map(float, se[sl])))
            out[f"{block}_p"] = dict(zip(names, map(float, p[sl])))
        return out


def fit_nameship(frames: Frames, init: NameshipParams | None = None, tol: float = 1e-8,
                 max_iter: int = 100) -> MleReport:
    """Maximise the truncated log-likelihood by damped Newton iterations.

    Converged means the max-norm of the mean score (gradient / n) is at most
    ``tol`` and the Newton step has become negligible; a vanishing gradient
    with O(1) steps is the signature of a likelihood that keeps rising
    towards infinity.

    Raises
    ------
    DivergenceError
        When iterations run out with some coefficient beyond +-15, i.e. the
        data separate the naming categories along that direction.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    _observed(frames.s)
    theta = init if init is not None else NameshipParams.zeros(frames)
    _predictors(theta, frames)
    vec = theta.vector
    n = len(frames)
    fun = lambda v: log_likelihood(NameshipParams.from_vector(v, theta), frames)  # noqa: E731

    ll = fun(vec)
    converged = False
    iterations = 0
    grad = score(theta, frames)
    hess = hessian(theta, frames)
    for iterations in range(max_iter + 1):
        step = _ascent_direction(grad, hess)
        step_small = np.max(np.abs(step)) <= 1e-6 * (1.0 + np.max(np.abs(vec)))
        if np.max(np.abs(grad)) <= tol * n and step_small:
            converged = True
            break
        if iterations == max_iter:
            break
        t = 1.0
        for _ in range(60):
            cand = vec + t * step
            ll_new = fun(cand)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t *= 0.5
        else:
            # No ascent possible at floating-point resolution.
            converged = np.max(np.abs(grad)) <= tol * n
            break
        vec, ll = cand, ll_new
        cur = NameshipParams.from_vector(vec, theta)
        grad = score(cur, frames)
        hess = hessian(cur, frames)

    theta_hat = NameshipParams.from_vector(vec, theta)
    if not converged:
        wild = [name for name, value in zip(theta_hat.names, vec) if abs(value) > SEPARATION_BOUND]
        if wild:
            raise DivergenceError(
                "nameship likelihood appears unbounded (separation) along "
                + ", ".join(wild), directions=wild)
        log.warning("nameship fit did not converge after %d iterations", iterations)
    return MleReport(theta_hat=theta_hat, loglik=float(ll),
                     gradient_norm=float(np.max(np.abs(grad))), iterations=iterations,
                     converged=converged, hessian=hess, n=len(frames))


def _ascent_direction(grad, hess):
    try:
        chol = np.linalg.cholesky(-hess)
    except np.linalg.LinAlgError:
        chol = None
    if chol is not None:
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        if np.all(np.isfinite(step)):
            return step
    # Curvature not usable: plain gradient ascent, scaled to a unit max-step.
    return grad / max(1.0, np.max(np.abs(grad)))
