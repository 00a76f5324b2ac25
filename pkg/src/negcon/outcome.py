"""Stage-2 outcome regressions.

The homophily-adjusted fit regresses Y within nameship stratum s on
``[1, A, C, Pr(S = k | A, C, Z; theta_hat) for k != s]``. The probability
columns are the *untruncated* category probabilities, including k = 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .core import Frames, ModelConfig
from .errors import (
    CollinearityError,
    DegenerateResponseError,
    EmptyStratumError,
    InsufficientDataError,
    InvalidArgumentError,
    SingularCovarianceError,
)
from .nameship import INTERCEPT, NameshipParams, category_probs

log = logging.getLogger(__name__)

RCOND_MIN = 1e-10
STRATA = (1, 2, 3)


def homophily_columns(s, config: ModelConfig | None = None) -> tuple:
    """Names of the probability regressors for stratum ``s``."""
    others = [k for k in range(4) if k != int(s)]
    names = [f"pr{k}" for k in others]
    if config is not None and config.homophily_form == "interact":
        names += [f"pr{k}:{col}" for k in others for col in config.homophily_interactions]
    return tuple(names)


def design_names(frames: Frames, s=None, config: ModelConfig | None = None) -> tuple:
    base = (INTERCEPT, "a") + tuple(frames.c_names)
    if s is None:
        return base
    return base + homophily_columns(s, config)


def design_rows(frames: Frames, probs, s, config: ModelConfig | None = None) -> np.ndarray:
    """Stage-2 regressors for every frame, using stratum ``s``'s column set.

    ``probs`` is the (n, 4) matrix of category probabilities, or None for the
    naive design.
    """
    n = len(frames)
    parts = [np.ones((n, 1)), frames.a[:, None], frames.c]
    if probs is not None:
        others = [k for k in range(4) if k != int(s)]
        parts.append(probs[:, others])
        if config is not None and config.homophily_form == "interact":
            idx = [frames.c_names.index(col) for col in config.homophily_interactions]
            for k in others:
                parts.append(probs[:, [k]] * frames.c[:, idx])
    return np.hstack(parts)


@dataclass(frozen=True)
class Stage2Design:
    x: np.ndarray
    y: np.ndarray
    names: tuple
    rows: np.ndarray


def stage2_design(frames: Frames, theta_hat: NameshipParams, s,
                  config: ModelConfig | None = None, check=True) -> Stage2Design:
    """Design matrix and response for the adjusted fit in stratum ``s``."""
    s = _stratum(s)
    rows = np.flatnonzero(frames.s == s)
    if rows.size == 0:
        raise EmptyStratumError(f"no dyads with nameship type {s}")
    sub = frames.subset(rows)
    x = design_rows(sub, category_probs(theta_hat, sub), s, config)
    names = design_names(frames, s, config)
    if check:
        _enough(x)
        check_rank(x, names)
    return Stage2Design(x=x, y=sub.y.copy(), names=names, rows=rows)


def _stratum(s):
    if s not in STRATA:
        raise InvalidArgumentError(f"stratum must be one of 1, 2, 3; got {s!r}")
    return int(s)


def check_rank(x, names):
    """Raise CollinearityError when the column-equilibrated design is rank deficient."""
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms == 0):
        dead = [n for n, v in zip(names, norms) if v == 0]
        raise CollinearityError(f"all-zero design column(s): {', '.join(dead)}", columns=dead)
    _, sv, vt = np.linalg.svd(x / norms, full_matrices=False)
    rcond = sv[-1] / sv[0]
    if rcond < RCOND_MIN:
        null = vt[sv / sv[0] < RCOND_MIN]
        involved = [n for j, n in enumerate(names) if np.any(np.abs(null[:, j]) > 0.05)]
        raise CollinearityError(
            f"design is rank deficient (reciprocal condition {rcond:.2e}); collinear columns: "
            + ", ".join(involved), columns=involved)
    return rcond


@dataclass(frozen=True)
class OutcomeFit:
    """Coefficients of one stage-2 regression.

    ``stratum`` is 1, 2, 3 or ``"pooled"``. ``names`` lists the design
    columns: intercept, ``a``, the outcome covariates, then for adjusted fits
    the homophily columns ``pr{k}`` ordered by k.
    """

    stratum: object
    link: str
    names: tuple
    coef: np.ndarray
    n_used: int
    kind: str = "adjusted"
    theta_used: NameshipParams | None = None
    homophily_names: tuple = ()
    converged: bool = True
    iterations: int = 0
    exposure_form: str = "linear"
    design: np.ndarray = field(default=None, repr=False, compare=False)
    response: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)
        if not np.all(np.isfinite(coef)):
            raise InvalidArgumentError("non-finite coefficients")

    def __getitem__(self, name):
        return float(self.coef[self.names.index(name)])

    @property
    def beta0(self) -> float:
        return self[INTERCEPT]

    @property
    def beta_a(self) -> float:
        return self["a"]

    @property
    def beta_c(self) -> np.ndarray:
        k = len(self.names) - 2 - len(self.homophily_names)
        return self.coef[2:2 + k].copy()

    @property
    def beta_hom(self) -> np.ndarray:
        return np.array([self[n] for n in self.homophily_names])

    @property
    def fitted(self) -> np.ndarray:
        lin = self.design @ self.coef
        return lin if self.link == "additive" else np.exp(lin)

    @property
    def residuals(self) -> np.ndarray:
        return self.response - self.fitted


def _ols(x, y):
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef


def fit_additive(frames: Frames, theta_hat: NameshipParams, s, config: ModelConfig | None = None) -> OutcomeFit:
    """Least-squares fit of the homophily-adjusted additive model in stratum s."""
    d = stage2_design(frames, theta_hat, s, config)
    _enough(d.x)
    return OutcomeFit(stratum=int(s), link="additive", names=d.names, coef=_ols(d.x, d.y),
                      n_used=len(d.y), theta_used=theta_hat,
                      homophily_names=homophily_columns(s, config), design=d.x, response=d.y)


def _enough(x):
    n, k = x.shape
    if n <= k:
        raise InsufficientDataError(f"{n} dyads cannot identify {k} coefficients")


def fit_loglinear(x, y, start=None, tol=1e-8, max_iter=100):
    """Solve sum x (y - exp(x'b)) = 0 by Newton steps with step halving.

    Returns (coef, converged, iterations). Step acceptance uses the Poisson
    quasi-log-likelihood, whose gradient is the moment condition. Converged
    means a negligible Newton step together with a mean moment of at most
    ``tol``, or a Newton step at rounding level (the scale-free version of
    the same test when the response is large).
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise InvalidArgumentError("multiplicative link needs a non-negative response")
    if not np.any(y > 0):
        raise DegenerateResponseError("response is identically zero in this stratum")
    n = len(y)
    if start is None:
        beta = np.zeros(x.shape[1])
        beta[0] = np.log(np.mean(y))
    else:
        beta = np.array(start, dtype=float)

    def quasi(b):
        lin = np.clip(x @ b, -700, 700)
        return float(y @ lin - np.exp(lin).sum())

    q = quasi(beta)
    for it in range(max_iter + 1):
        mu = np.exp(np.clip(x @ beta, -700, 700))
        grad = x.T @ (y - mu)
        info = (x.T * mu) @ x
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = grad / max(1.0, np.max(np.abs(grad)))
        size = np.max(np.abs(step)) / (1 + np.max(np.abs(beta)))
        if size <= 1e-8 and (np.max(np.abs(grad)) <= tol * n or size <= 1e-12):
            return beta, True, it
        if it == max_iter:
            break
        t = 1.0
        # near the root q changes by less than its rounding error, so allow
        # a rounding-sized decrease rather than halving the step to nothing
        slack = 1e-12 * (1 + abs(q))
        for _ in range(60):
            cand = beta + t * step
            q_new = quasi(cand)
            if np.isfinite(q_new) and q_new >= q - slack:
                break
            t *= 0.5
        else:
            return beta, bool(np.max(np.abs(grad)) <= tol * n), it
        beta, q = cand, q_new
    return beta, False, max_iter


def fit_multiplicative(frames: Frames, theta_hat: NameshipParams, s, config: ModelConfig | None = None,
                       start=None) -> OutcomeFit:
    """Log-link quasi-likelihood fit of the homophily-adjusted model in stratum s."""
    d = stage2_design(frames, theta_hat, s, config)
    _enough(d.x)
    coef, ok, it = fit_loglinear(d.x, d.y, start=start)
    if not ok:
        log.warning("log-link fit in stratum %s did not converge", s)
    return OutcomeFit(stratum=int(s), link="multiplicative", names=d.names, coef=coef,
                      n_used=len(d.y), theta_used=theta_hat,
                      homophily_names=homophily_columns(s, config), converged=ok, iterations=it,
                      design=d.x, response=d.y)


def fit_adjusted(frames, theta_hat, s, config: ModelConfig | None = None) -> OutcomeFit:
    link = config.link if config is not None else "additive"
    if link == "additive":
        return fit_additive(frames, theta_hat, s, config)
    return fit_multiplicative(frames, theta_hat, s, config)


def _fit_plain(sub: Frames, stratum, link):
    x = design_rows(sub, None, None)
    names = design_names(sub)
    _enough(x)
    check_rank(x, names)
    if link == "additive":
        coef, ok, it = _ols(x, sub.y), True, 0
    else:
        coef, ok, it = fit_loglinear(x, sub.y)
    return OutcomeFit(stratum=stratum, link=link, names=names, coef=coef, n_used=len(sub),
                      kind="naive", converged=ok, iterations=it, design=x, response=sub.y.copy())


def fit_naive(frames: Frames, config: ModelConfig | None = None, stratified=False, strata=STRATA):
    """Regression of Y on [1, A, C] ignoring homophily.

    Returns one pooled fit, or a dict of per-stratum fits when ``stratified``.
    """
    link = config.link if config is not None else "additive"
    if not stratified:
        return _fit_plain(frames, "pooled", link)
    fits = {}
    for s in strata:
        s = _stratum(s)
        rows = np.flatnonzero(frames.s == s)
        if rows.size == 0:
            raise EmptyStratumError(f"no dyads with nameship type {s}")
        fits[s] = _fit_plain(frames.subset(rows), s, link)
    return fits


def contagion_effect(fit: OutcomeFit) -> float:
    """Contagion effect implied by the exposure coefficient.

    Difference scale for the additive link, ratio scale for the log link.
    """
    if fit.exposure_form != "linear":
        raise InvalidArgumentError(f"unsupported exposure form {fit.exposure_form!r}")
    if fit.link == "additive":
        return fit.beta_a
    return float(np.exp(fit.beta_a))


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    hypothesis: str

    def to_json(self) -> dict:
        return {"hypothesis": self.hypothesis, "statistic": float(self.statistic),
                "df": int(self.df), "p_value": float(self.p_value)}


def wald_test(estimate, cov, hypothesis="all coefficients are zero") -> WaldResult:
    """Chi-square Wald test of ``estimate = 0`` given the estimate's covariance."""
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (estimate.size, estimate.size):
        raise InvalidArgumentError("covariance shape does not match the estimate")
    try:
        chol = np.linalg.cholesky((cov + cov.T) / 2)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("covariance block is not positive definite") from None
    if np.min(np.diag(chol)) <= 1e-12 * np.max(np.diag(chol)):
        raise SingularCovarianceError("covariance block is numerically singular")
    w = np.linalg.solve(chol, estimate)
    stat = float(w @ w)
    return WaldResult(statistic=stat, df=estimate.size, p_value=float(chi2.sf(stat, estimate.size)),
                      hypothesis=hypothesis)


def homophily_wald_test(fits, cov) -> WaldResult:
    """Test that every homophily coefficient of the given fits is zero.

    ``cov`` is a :class:`negcon.inference.SandwichCov` whose parameter
    vector includes the strata of ``fits``. One fit gives the per-stratum
    test; several give the joint test across strata.
    """
    if isinstance(fits, OutcomeFit):
        fits = [fits]
    names = [f"s{f.stratum}:{n}" for f in fits for n in f.homophily_names]
    if not names:
        raise InvalidArgumentError("fits carry no homophily coefficients")
    strata = ",".join(str(f.stratum) for f in fits)
    where = f"stratum {strata}" if len(fits) == 1 else f"strata {strata}"
    return wald_test(cov.estimate(names), cov.estimate_cov(names),
                     hypothesis=f"no homophily bias (beta^(s,k) = 0) in {where}")
