"""Sandwich covariance for the two-step estimator.

The nameship score and the stage-2 moment conditions are stacked into one
estimating function per dyad, G = (G_theta, G_beta^s for each stratum), and
the covariance of sqrt(n)(rho_hat - rho) is U^{-1} V U^{-T}. The stage-2 rows
depend on theta through the probability regressors, which is how first-stage
uncertainty reaches the outcome coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import Frames, ModelConfig
from .errors import InvalidArgumentError, NumericalError, SingularBreadError
from .nameship import NameshipParams, category_probs, score_contributions
from .outcome import STRATA, design_names, design_rows

BREAD_COND_MAX = 1e12


def jacobian_fd(function, point, step=None) -> np.ndarray:
    """Central-difference Jacobian, shape (len(f(x)), len(x)).

    ``step`` is a scalar or per-coordinate array; by default
    1e-6 * max(1, |x_i|).
    """
    x0 = np.atleast_1d(np.asarray(point, dtype=float))
    if step is None:
        h = 1e-6 * np.maximum(1.0, np.abs(x0))
    else:
        h = np.broadcast_to(np.asarray(step, dtype=float), x0.shape).copy()
        if np.any(h <= 0):
            raise InvalidArgumentError("finite-difference step must be positive")
    f0 = np.atleast_1d(np.asarray(function(x0), dtype=float))
    jac = np.empty((f0.size, x0.size))
    for j in range(x0.size):
        up, down = x0.copy(), x0.copy()
        up[j] += h[j]
        down[j] -= h[j]
        f_up = np.atleast_1d(np.asarray(function(up), dtype=float))
        f_down = np.atleast_1d(np.asarray(function(down), dtype=float))
        if not (np.all(np.isfinite(f_up)) and np.all(np.isfinite(f_down))):
            raise NumericalError(f"non-finite function value while differentiating coordinate {j}")
        jac[:, j] = (f_up - f_down) / (up[j] - down[j])
    return jac


class StackedEquations:
    """Per-dyad estimating functions for (theta, beta^s for s in strata).

    With ``fixed_theta`` the nameship coefficients are held at the given
    value and only the stage-2 equations are stacked.
    """

    def __init__(self, frames: Frames, strata=STRATA, link="additive",
                 config: ModelConfig | None = None, theta_like: NameshipParams | None = None,
                 fixed_theta: NameshipParams | None = None):
        if link not in ("additive", "multiplicative"):
            raise InvalidArgumentError(f"unknown link {link!r}")
        self.frames = frames
        self.strata = tuple(int(s) for s in strata)
        self.link = link
        self.config = config
        self.fixed_theta = fixed_theta
        like = fixed_theta or theta_like or NameshipParams.zeros(frames)
        self.theta_like = like
        self.k_theta = 0 if fixed_theta is not None else len(like.vector)
        names = [] if fixed_theta is not None else list(like.names)
        self.blocks = {}
        for s in self.strata:
            cols = design_names(frames, s, config)
            self.blocks[s] = slice(len(names), len(names) + len(cols))
            names += [f"s{s}:{c}" for c in cols]
        self.names = tuple(names)
        self.indicators = {s: (frames.s == s).astype(float) for s in self.strata}

    @property
    def dim(self):
        return len(self.names)

    def split(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.shape != (self.dim,):
            raise InvalidArgumentError(f"rho has shape {rho.shape}, expected ({self.dim},)")
        if self.fixed_theta is not None:
            theta = self.fixed_theta
        else:
            theta = NameshipParams.from_vector(rho[:self.k_theta], self.theta_like)
        return theta, {s: rho[sl] for s, sl in self.blocks.items()}

    def contributions(self, rho) -> np.ndarray:
        theta, betas = self.split(rho)
        parts = []
        if self.fixed_theta is None:
            parts.append(score_contributions(theta, self.frames))
        probs = category_probs(theta, self.frames)
        for s in self.strata:
            x = design_rows(self.frames, probs, s, self.config)
            lin = x @ betas[s]
            mu = lin if self.link == "additive" else np.exp(np.clip(lin, -700, 700))
            parts.append(x * ((self.frames.y - mu) * self.indicators[s])[:, None])
        return np.hstack(parts)

    def mean(self, rho) -> np.ndarray:
        return self.contributions(rho).mean(axis=0)

    def beta_bread(self, rho, s) -> np.ndarray:
        """Analytic -d mean(G_beta^s) / d beta^s, for cross-checking."""
        theta, betas = self.split(rho)
        x = design_rows(self.frames, category_probs(theta, self.frames), s, self.config)
        w = self.indicators[s]
        if self.link == "multiplicative":
            w = w * np.exp(x @ betas[s])
        return (x.T * w) @ x / len(self.frames)


def estimating_function(rho, frames, s=STRATA, link="additive", config=None, theta_like=None):
    """Stacked estimating function at ``rho``.

    For a :class:`Frames` input returns one row per dyad; for a single
    ``AnalysisFrame`` the row itself. ``s`` is one stratum or several.
    """
    from .core import AnalysisFrame

    strata = (s,) if np.isscalar(s) else tuple(s)
    if isinstance(frames, AnalysisFrame):
        if theta_like is None:
            raise InvalidArgumentError("a single frame needs theta_like for its layout")
        one = Frames(a=[frames.a], z=[frames.z], c=[frames.c], y=[frames.y], s=[int(frames.s)],
                     c1=[frames.c1], c2=[frames.c2],
                     c_names=_placeholder(len(frames.c), config, "c"),
                     c1_names=theta_like.names1[1:], c2_names=theta_like.names2[1:])
        return StackedEquations(one, strata, link, config, theta_like).contributions(rho)[0]
    return StackedEquations(frames, strata, link, config, theta_like).contributions(rho)


def _placeholder(k, config, _):
    if config is not None and len(config.outcome_covariates) == k:
        return config.outcome_covariates
    return tuple(f"c{i}" for i in range(k))


@dataclass(frozen=True)
class SandwichCov:
    """Sandwich covariance of sqrt(n)(rho_hat - rho) and its ingredients."""

    rho_hat: np.ndarray
    sigma: np.ndarray
    bread: np.ndarray
    meat: np.ndarray
    n: int
    names: tuple

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sigma) / self.n)

    def index(self, names):
        try:
            return [self.names.index(n) for n in names]
        except ValueError as exc:
            raise InvalidArgumentError(f"unknown coordinate: {exc}") from None

    def estimate(self, names) -> np.ndarray:
        return self.rho_hat[self.index(names)]

    def estimate_cov(self, names) -> np.ndarray:
        """Covariance of the named estimates (sigma / n)."""
        idx = self.index(names)
        return self.sigma[np.ix_(idx, idx)] / self.n

    def table(self):
        """(estimate, se, two-sided normal p) per coordinate."""
        z = self.rho_hat / self.se
        return self.rho_hat, self.se, 2 * norm.sf(np.abs(z))

    def to_json(self) -> dict:
        return {"names": list(self.names), "n": int(self.n),
                "estimate": [float(v) for v in self.rho_hat],
                "matrix": [[float(v) for v in row] for row in self.sigma / self.n]}


def sandwich_cov(frames: Frames, rho_hat, strata=STRATA, link="additive", config=None,
                 theta_like=None, fixed_theta=None, small_sample=False, step=None,
                 bread="hybrid") -> SandwichCov:
    """Sandwich covariance U^{-1} V U^{-T} at ``rho_hat``.

    U is minus the mean Jacobian of G, V the mean outer product of G. With
    ``bread="fd"`` every column of the Jacobian is taken by central
    differences; the default ``"hybrid"`` differences only the theta columns
    and uses the closed-form, block-diagonal stage-2 columns. With
    ``small_sample`` sigma is inflated by n / (n - dim).

    Dyads are put in ``dyad_id`` order first, so the result does not depend on
    the order in which rows were supplied.
    """
    strata = (strata,) if np.isscalar(strata) else tuple(strata)
    frames = frames.subset(np.argsort(np.asarray(frames.dyad_ids), kind="stable"))
    eq = StackedEquations(frames, strata, link, config, theta_like, fixed_theta)
    rho_hat = np.asarray(rho_hat, dtype=float)
    n = len(frames)
    if n <= eq.dim:
        raise InvalidArgumentError(f"{n} dyads cannot support {eq.dim} stacked parameters")
    g = eq.contributions(rho_hat)
    meat = g.T @ g / n
    if bread == "fd":
        bread = -jacobian_fd(eq.mean, rho_hat, step)
    elif bread == "hybrid":
        bread = _hybrid_bread(eq, rho_hat, step)
    else:
        raise InvalidArgumentError(f"unknown bread method {bread!r}")
    cond = np.linalg.cond(bread)
    if not np.isfinite(cond) or cond > BREAD_COND_MAX:
        raise SingularBreadError(f"bread matrix is singular (condition number {cond:.3e})",
                                 condition_number=cond)
    inv = np.linalg.inv(bread)
    sigma = inv @ meat @ inv.T
    sigma = (sigma + sigma.T) / 2
    if small_sample:
        sigma = sigma * n / (n - eq.dim)
    return SandwichCov(rho_hat=rho_hat, sigma=sigma, bread=bread, meat=meat, n=n, names=eq.names)


def _hybrid_bread(eq: StackedEquations, rho_hat, step):
    k = eq.k_theta
    out = np.zeros((eq.dim, eq.dim))
    if k:
        theta_step = None if step is None else np.broadcast_to(step, rho_hat.shape)[:k]

        def shifted(t):
            rho = rho_hat.copy()
            rho[:k] = t
            return eq.mean(rho)

        out[:, :k] = -jacobian_fd(shifted, rho_hat[:k], theta_step)
    for s, sl in eq.blocks.items():
        out[sl, sl] = eq.beta_bread(rho_hat, s)
    return out


def stack(theta: NameshipParams, fits) -> np.ndarray:
    """Concatenate theta and per-stratum coefficients in stratum order."""
    return np.concatenate([theta.vector] + [f.coef for f in fits])


def fit_cov(frames: Frames, theta: NameshipParams, fits, config=None, **kwargs) -> SandwichCov:
    """Joint sandwich for a nameship fit and the adjusted fits built on it."""
    fits = sorted(fits, key=lambda f: f.stratum)
    link = fits[0].link
    return sandwich_cov(frames, stack(theta, fits), [f.stratum for f in fits], link, config,
                        theta_like=theta, **kwargs)


def robust_cov(fit) -> np.ndarray:
    """Heteroskedasticity-robust (HC0) covariance of a stage-2 fit, theta held fixed."""
    x, y = fit.design, fit.response
    lin = x @ fit.coef
    mu = lin if fit.link == "additive" else np.exp(lin)
    w = np.ones_like(mu) if fit.link == "additive" else mu
    bread = np.linalg.inv((x.T * w) @ x)
    meat = (x.T * (y - mu) ** 2) @ x
    return bread @ meat @ bread
