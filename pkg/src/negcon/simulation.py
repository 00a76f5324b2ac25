"""Forward simulation of dyads under homophily, plus numerical oracles.

Two constructions of the joint law of (A, C, Z, S, U2) are available:

``selection-first`` (default)
    Naming follows the product-of-logistics model exactly, then
    U2 | S = s, A, C, Z ~ N(m(C) - sigma2 * sum_k alpha_k p_k + sigma2 * alpha_s, sigma2)
    with p_k = Pr(S = k | A, C, Z). This satisfies, without approximation,
    the polytomous-logit tilting of S by U2, mean independence
    E(U2 | A, C, Z) = m(C), and a pure location shift of U2 across strata,
    so the adjusted regression is correctly specified with homophily
    coefficients sigma2 * (alpha_s - alpha_k).

``latent-first``
    U2 ~ N(m(C), sigma2) independently of (A, Z), then S from the softmax
    with log-odds alpha_s U2 + gamma_s(A, C, Z). The location-shift
    property then holds only to first order in alpha.

Random numbers come from counter-based Philox streams, one per block of
candidate dyads, so output does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .core import DyadRecord, Frames, ModelConfig, decode_nameship, frames_from_columns
from .errors import ConfigError, InvalidArgumentError, PrecisionError
from .nameship import INTERCEPT

MECHANISMS = ("selection-first", "latent-first")
FAMILIES = {"additive": ("gaussian",), "multiplicative": ("lognormal", "bernoulli", "poisson")}


@dataclass(frozen=True)
class CovariateLaw:
    """Marginal law of the observed covariates and traits.

    Sex is Bernoulli, ages normal (years). The alter's baseline trait loads
    on a latent alter factor U1; the follow-up trait Z adds drift, further
    U1 loading and fresh noise. The exposure is derived from the baseline
    trait by the model config's threshold rule.
    """

    p_female: float = 0.5
    age_mean: float = 45.0
    age_sd: float = 10.0
    age_corr: float = 0.0
    trait_mean: float = 27.0
    trait_sd: float = 4.5
    trait_sex_shift: float = 0.0
    trait_age_slope: float = 0.0
    latent_share: float = 0.8
    drift: float = 0.5
    z_loading: float = 0.0
    change_sd: float = 1.5

    def __post_init__(self):
        if not 0 <= self.p_female <= 1:
            raise ConfigError("law.p_female must lie in [0, 1]")
        if not -1 < self.age_corr < 1:
            raise ConfigError("law.age_corr must lie in (-1, 1)")
        if not 0 <= self.latent_share <= 1:
            raise ConfigError("law.latent_share must lie in [0, 1]")
        for name in ("age_sd", "trait_sd", "change_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"law.{name} must be non-negative")


def _coef_map(value, name):
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{name} must be a mapping of term name to coefficient")
    out = {}
    for k, v in value.items():
        try:
            out[str(k)] = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}[{k}] is not a number: {v!r}") from None
    return out


def _per_stratum(value, name):
    if np.isscalar(value):
        return (float(value),) * 3
    value = tuple(float(v) for v in value)
    if len(value) != 3:
        raise ConfigError(f"{name} needs one value or three (strata 1, 2, 3)")
    return value


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the homophily data-generating process.

    Coefficient maps are keyed by term names on the raw (uncentered) scale:
    ``(intercept)``, ``a``, ``z``, ``y2_b``, covariate names, or products
    ``u:v``. ``theta1``/``theta2`` drive naming under ``selection-first``;
    ``gamma`` (one map per s = 1, 2, 3) drives ``latent-first``.
    ``n_observed``, when set, keeps drawing candidates until that many dyads
    with S >= 1 have been retained.
    """

    n_candidate: int = 5000
    n_observed: int | None = None
    mechanism: str = "selection-first"
    sigma2: float = 1.0
    alpha: tuple = (0.0, 0.0, 0.0, 0.0)
    eta: Mapping = field(default_factory=dict)
    theta1: Mapping = field(default_factory=dict)
    theta2: Mapping = field(default_factory=dict)
    gamma: tuple = ({}, {}, {})
    link: str = "additive"
    outcome_family: str | None = None
    beta0: tuple = (0.0, 0.0, 0.0)
    beta_a: tuple = (0.0, 0.0, 0.0)
    beta_c: Mapping = field(default_factory=dict)
    noise_sd: float = 1.0
    law: CovariateLaw = field(default_factory=CovariateLaw)
    seed: int = 0
    block_size: int = 4096

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}")
        if self.link not in FAMILIES:
            raise ConfigError("link must be 'additive' or 'multiplicative'")
        family = self.outcome_family or FAMILIES[self.link][0]
        if family not in FAMILIES[self.link]:
            raise ConfigError(f"outcome_family {family!r} does not fit the {self.link} link")
        set_("outcome_family", family)
        alpha = tuple(float(a) for a in self.alpha)
        if len(alpha) != 4:
            raise ConfigError("alpha needs four entries (s = 0..3)")
        if alpha[0] != 0:
            raise ConfigError("alpha[0] must be 0 (reference category)")
        set_("alpha", alpha)
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if self.noise_sd < 0:
            raise InvalidArgumentError("noise_sd must be non-negative")
        if int(self.n_candidate) < 1:
            raise ConfigError("n_candidate must be at least 1")
        set_("n_candidate", int(self.n_candidate))
        if self.n_observed is not None:
            if int(self.n_observed) < 1:
                raise ConfigError("n_observed must be at least 1")
            set_("n_observed", int(self.n_observed))
        if int(self.block_size) < 1:
            raise ConfigError("block_size must be at least 1")
        set_("block_size", int(self.block_size))
        set_("seed", int(self.seed))
        for name in ("eta", "theta1", "theta2", "beta_c"):
            set_(name, _coef_map(getattr(self, name), name))
        gamma = tuple(_coef_map(g, f"gamma[{i + 1}]") for i, g in enumerate(self.gamma))
        if len(gamma) != 3:
            raise ConfigError("gamma needs three maps (s = 1, 2, 3)")
        set_("gamma", gamma)
        set_("beta0", _per_stratum(self.beta0, "beta0"))
        set_("beta_a", _per_stratum(self.beta_a, "beta_a"))
        if isinstance(self.law, Mapping):
            set_("law", CovariateLaw(**self.law))
        for term in self.theta2:
            if {"z", "y1_f"}.intersection(term.split(":")):
                raise ConfigError("theta2 (ego naming) must not depend on z")

    def to_json(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_json(cls, data: Mapping) -> SimConfig:
        data = dict(data)
        if "law" in data:
            data["law"] = CovariateLaw(**data["law"])
        for key in ("alpha", "gamma", "beta0", "beta_a"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def true_homophily(self, s) -> dict:
        """sigma2 * (alpha_s - alpha_k) for k != s, keyed like the fit columns.

        Exact under ``selection-first``; the small-tilting limit otherwise.
        """
        return {f"pr{k}": self.sigma2 * (self.alpha[s] - self.alpha[k]) for k in range(4) if k != s}


class SimOutput(NamedTuple):
    frames: Frames
    truth: SimConfig
    n_truncated: int
    columns: dict
    r1: np.ndarray
    r2: np.ndarray
    dyad_ids: tuple
    latent: np.ndarray
    n_clipped: int = 0

    @property
    def n_candidate(self):
        return self.n_truncated + len(self.frames)

    def records(self, model: ModelConfig | None = None) -> list[DyadRecord]:
        model = model or ModelConfig()
        cols = self.columns
        return [DyadRecord(dyad_id=self.dyad_ids[i], y1_b=float(cols["y1_b"][i]),
                           y1_f=float(cols["y1_f"][i]), y2_b=float(cols["y2_b"][i]),
                           y2_f=float(cols["y2_f"][i]), r1=int(self.r1[i]), r2=int(self.r2[i]),
                           x1=tuple(float(cols[c][i]) for c in model.alter_covariates),
                           x2=tuple(float(cols[c][i]) for c in model.ego_covariates))
                for i in range(len(self.frames))]


def _term(pool, term):
    if term == INTERCEPT:
        return np.ones_like(pool["y1_b"])
    col = 1.0
    for part in term.split(":"):
        if part not in pool:
            raise ConfigError(f"unknown term {term!r} in simulation coefficients")
        col = col * pool[part]
    return col


def _linear(pool, coefs):
    out = np.zeros_like(pool["y1_b"])
    for term, value in coefs.items():
        out = out + value * _term(pool, term)
    return out


def _block_rng(seed, block):
    # Philox is counter based: each block starts at its own counter offset.
    return np.random.Generator(np.random.Philox(key=seed % (1 << 128), counter=block << 128))


def _draw_covariates(law: CovariateLaw, model: ModelConfig, normals, uniforms):
    sex1 = (uniforms[:, 0] < law.p_female).astype(float)
    sex2 = (uniforms[:, 1] < law.p_female).astype(float)
    e_age1, e_age2 = normals[:, 0], normals[:, 1]
    age1 = law.age_mean + law.age_sd * e_age1
    age2 = law.age_mean + law.age_sd * (law.age_corr * e_age1 + np.sqrt(1 - law.age_corr**2) * e_age2)
    u1 = normals[:, 2]
    ls = law.latent_share
    y1_b = (law.trait_mean + law.trait_sex_shift * sex1 + law.trait_age_slope * (age1 - law.age_mean)
            + law.trait_sd * (ls * u1 + np.sqrt(1 - ls**2) * normals[:, 3]))
    y1_f = y1_b + law.drift + law.trait_sd * law.z_loading * u1 + law.change_sd * normals[:, 4]
    y2_b = (law.trait_mean + law.trait_sex_shift * sex2 + law.trait_age_slope * (age2 - law.age_mean)
            + law.trait_sd * normals[:, 5])
    pool = {"sex1": sex1, "age1": age1, "sex2": sex2, "age2": age2,
            "y1_b": y1_b, "y1_f": y1_f, "y2_b": y2_b}
    pool["a"] = model.exposure(y1_b)
    pool["z"] = y1_f
    return pool


def _selection_probs(config: SimConfig, pool):
    """Untruncated category probabilities under the product-of-logistics naming."""
    pi1 = expit(_linear(pool, config.theta1))
    pi2 = expit(_linear(pool, config.theta2))
    return np.column_stack([(1 - pi1) * (1 - pi2), (1 - pi1) * pi2, pi1 * (1 - pi2), pi1 * pi2])


def _gamma_logits(config: SimConfig, pool, u2):
    alpha = np.asarray(config.alpha)
    base = [np.zeros_like(u2)] + [_linear(pool, g) for g in config.gamma]
    return np.column_stack(base) + np.outer(u2, alpha)


def _simulate_block(config: SimConfig, model: ModelConfig, block: int, size: int):
    rng = _block_rng(config.seed, block)
    normals = rng.standard_normal((size, 8))
    uniforms = rng.random((size, 4))
    pool = _draw_covariates(config.law, model, normals, uniforms)
    sigma = np.sqrt(config.sigma2)
    alpha = np.asarray(config.alpha)
    m = _linear(pool, config.eta)
    if config.mechanism == "selection-first":
        probs = _selection_probs(config, pool)
        pi1 = probs[:, 2] + probs[:, 3]
        pi2 = probs[:, 1] + probs[:, 3]
        r1 = (uniforms[:, 2] < pi1).astype(int)
        r2 = (uniforms[:, 3] < pi2).astype(int)
        s = 2 * r1 + r2
        u2 = m - config.sigma2 * probs @ alpha + config.sigma2 * alpha[s] + sigma * normals[:, 6]
    else:
        u2 = m + sigma * normals[:, 6]
        cum = np.cumsum(softmax(_gamma_logits(config, pool, u2), axis=1), axis=1)
        s = np.minimum((uniforms[:, 2][:, None] >= cum).sum(axis=1), 3)
        r1, r2 = (s >= 2).astype(int), ((s == 1) | (s == 3)).astype(int)

    b0 = np.array((0.0,) + config.beta0)
    ba = np.array((0.0,) + config.beta_a)
    lin = u2 + b0[s] + ba[s] * pool["a"] + _linear(pool, config.beta_c)
    clipped = 0
    family = config.outcome_family
    if family == "gaussian":
        y = lin + config.noise_sd * normals[:, 7]
    elif family == "lognormal":
        y = np.exp(lin + config.noise_sd * normals[:, 7] - config.noise_sd**2 / 2)
    elif family == "bernoulli":
        mu = np.exp(lin)
        over = (mu > 1) & (s >= 1)
        clipped = int(over.sum())
        y = (rng.random(size) < np.minimum(mu, 1.0)).astype(float)
    else:
        y = rng.poisson(np.exp(np.minimum(lin, 700))).astype(float)
    pool["y2_f"] = y
    return pool, r1, r2, s, u2, clipped


def simulate(config: SimConfig, model: ModelConfig | None = None, n_jobs: int = 1) -> SimOutput:
    """Draw candidate dyads, discard null nameships and build analysis frames."""
    model = model or ModelConfig()
    size = config.block_size
    if config.n_observed is None:
        n_blocks = -(-config.n_candidate // size)
        sizes = [min(size, config.n_candidate - b * size) for b in range(n_blocks)]
        results = _run_blocks(config, model, range(n_blocks), sizes, n_jobs)
    else:
        results, kept, b = [], 0, 0
        while kept < config.n_observed:
            batch = range(b, b + max(1, n_jobs))
            out = _run_blocks(config, model, batch, [size] * len(batch), n_jobs)
            results += out
            kept += sum(int(np.sum(r[3] >= 1)) for r in out)
            b += len(batch)
            if b * size > 1000 * config.n_observed + 10**6:
                raise ConfigError("retention rate too low to reach n_observed")

    raw = ("y1_b", "y1_f", "y2_b", "y2_f") + tuple(dict.fromkeys(model.alter_covariates + model.ego_covariates))
    cat = lambda i: np.concatenate([r[i] for r in results])  # noqa: E731
    pools = [r[0] for r in results]
    columns = {name: np.concatenate([p[name] for p in pools]) for name in raw}
    r1, r2, s, u2 = cat(1), cat(2), cat(3), cat(4)
    n_cand = len(s)
    keep = s >= 1
    if config.n_observed is not None:
        last = np.flatnonzero(keep)[config.n_observed - 1]
        n_cand = last + 1
        keep[n_cand:] = False
    idx = np.flatnonzero(keep)
    clipped = sum(r[5] for r in results)
    columns = {k: v[idx] for k, v in columns.items()}
    ids = tuple(f"d{i:07d}" for i in idx)
    frames = frames_from_columns(columns, r1[idx], r2[idx], model, dyad_ids=ids)
    return SimOutput(frames=frames, truth=config, n_truncated=int(n_cand - idx.size),
                     columns=columns, r1=r1[idx], r2=r2[idx], dyad_ids=ids, latent=u2[idx],
                     n_clipped=int(clipped))


def _run_blocks(config, model, blocks, sizes, n_jobs):
    if n_jobs == 1:
        return [_simulate_block(config, model, b, m) for b, m in zip(blocks, sizes)]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(_simulate_block)(config, model, b, m)
                                   for b, m in zip(blocks, sizes))


def _point_pool(a, c, z):
    pool = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in dict(c).items()}
    pool["a"] = np.atleast_1d(float(a))
    pool["z"] = pool["y1_f"] = np.atleast_1d(float(z))
    pool.setdefault("y1_b", np.zeros(1))
    return pool


def oracle_conditional_mean(config: SimConfig, a, c: Mapping, z, s, nodes=64) -> float:
    """E(Y | A = a, C = c, Z = z, S = s) under the simulated joint law.

    ``c`` maps raw covariate names to values. Under ``latent-first`` the
    latent U2 is integrated out by Gauss-Hermite quadrature and the result is
    confirmed against a rule with twice as many nodes.
    """
    s = int(s)
    if s not in (0, 1, 2, 3):
        raise InvalidArgumentError("s must lie in 0..3")
    pool = _point_pool(a, c, z)
    m = float(_linear(pool, config.eta)[0])
    beta0 = (0.0,) + config.beta0
    beta_a = (0.0,) + config.beta_a
    rest = beta0[s] + beta_a[s] * float(a) + float(_linear(pool, config.beta_c)[0])
    alpha = np.asarray(config.alpha)
    sigma2 = config.sigma2
    if config.mechanism == "selection-first":
        probs = _selection_probs(config, pool)[0]
        mean_u = m - sigma2 * probs @ alpha + sigma2 * alpha[s]
        if config.link == "additive":
            return float(mean_u + rest)
        return float(np.exp(mean_u + sigma2 / 2 + rest))

    def integrate(k):
        x, w = np.polynomial.hermite_e.hermegauss(k)
        u = m + np.sqrt(sigma2) * x
        logits = _gamma_logits(config, {key: np.repeat(v, k) for key, v in pool.items()}, u)
        logw = np.log(w) + logits[:, s] - logsumexp(logits, axis=1)
        weights = np.exp(logw - logw.max())
        g = u if config.link == "additive" else np.exp(u)
        return float(weights @ g / weights.sum())

    coarse, fine = integrate(nodes), integrate(2 * nodes)
    if abs(fine - coarse) > 1e-8 * max(1.0, abs(fine)):
        raise PrecisionError(f"quadrature changed by {abs(fine - coarse):.3e} when doubling nodes")
    if config.link == "additive":
        return fine + rest
    return fine * float(np.exp(rest))


class TiltedMean(NamedTuple):
    estimate: float
    se: float


def tilted_normal_check(alpha_s, sigma2, n_draws=10**6, seed=0) -> TiltedMean:
    """Importance-weighted E[U exp(alpha U)] / E[exp(alpha U)] for U ~ N(0, sigma2).

    The exact value is sigma2 * alpha; ``se`` is the delta-method Monte
    Carlo standard error of the ratio estimate.
    """
    if n_draws < 10**5:
        raise InvalidArgumentError("n_draws must be at least 1e5")
    if not sigma2 > 0:
        raise InvalidArgumentError("sigma2 must be positive")
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, np.sqrt(sigma2), n_draws)
    logw = alpha_s * u
    w = np.exp(logw - logw.max())
    w /= w.sum()
    est = float(w @ u)
    se = float(np.sqrt(np.sum(w**2 * (u - est) ** 2)))
    return TiltedMean(est, se)


def example_config(**overrides) -> SimConfig:
    """Homophily scenario used throughout the validation suite.

    Alter naming depends strongly on Z, which shares the alter latent factor
    with the exposure; ego naming depends non-linearly on age.
    """
    base = dict(
        n_observed=5000,
        sigma2=1.0,
        alpha=(0.0, 0.5, 0.8, 1.2),
        theta1={INTERCEPT: -9.0, "sex1": 0.3, "age1": -0.01, "z": 0.35},
        theta2={INTERCEPT: -5.2, "sex2": 0.4, "age2": 0.12},
        beta0=2.0,
        beta_a=0.0,
        beta_c={"y2_b": 0.9, "sex2": 0.3, "age2": -0.02, "sex1": 0.1, "age1": 0.01,
                "age2:age1": 0.0005},
        noise_sd=1.0,
    )
    base.update(overrides)
    return SimConfig(**base)


def decode_strata(s):
    return np.array([decode_nameship(v) for v in np.asarray(s)])
