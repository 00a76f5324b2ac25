"""Two-step estimation: nameship MLE, adjusted stage-2 fits, joint sandwich."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Frames, ModelConfig
from .inference import SandwichCov, fit_cov
from .nameship import MleReport, NameshipParams, fit_nameship
from .outcome import STRATA, OutcomeFit, WaldResult, fit_adjusted, homophily_wald_test, wald_test


@dataclass(frozen=True)
class TwoStepResult:
    """Everything produced by one run of the two-step procedure.

    ``homophily`` holds the per-stratum Wald tests keyed by stratum and the
    joint test across all fitted strata under the key ``"joint"``.
    """

    mle: MleReport
    fits: dict
    cov: SandwichCov
    homophily: dict = field(default_factory=dict)

    @property
    def strata(self) -> tuple:
        return tuple(self.fits)

    def beta_a(self, s) -> float:
        return self.fits[s].beta_a

    def se(self, s, name="a") -> float:
        return float(self.cov.se[self.cov.index([f"s{s}:{name}"])[0]])

    def exposure_test(self, s) -> WaldResult:
        name = f"s{s}:a"
        return wald_test(self.cov.estimate([name]), self.cov.estimate_cov([name]),
                         hypothesis=f"no contagion (beta_a = 0) in stratum {s}")


def two_step(frames: Frames, config: ModelConfig | None = None, strata=STRATA,
             init: NameshipParams | None = None, small_sample=False) -> TwoStepResult:
    """Fit the nameship model, then the homophily-adjusted model per stratum.

    The covariance is one sandwich over theta and all requested strata, so
    first-stage uncertainty is carried into every stage-2 coefficient.
    """
    config = config or ModelConfig()
    strata = tuple(sorted({int(s) for s in strata}))
    mle = fit_nameship(frames, init=init)
    fits = {s: fit_adjusted(frames, mle.theta_hat, s, config) for s in strata}
    cov = fit_cov(frames, mle.theta_hat, fits.values(), config, small_sample=small_sample)
    tests = {s: homophily_wald_test(fits[s], cov) for s in strata}
    tests["joint"] = homophily_wald_test(list(fits.values()), cov)
    return TwoStepResult(mle=mle, fits=fits, cov=cov, homophily=tests)


def fit_only(frames: Frames, config: ModelConfig, strata, init=None) -> dict[int, OutcomeFit]:
    """Point estimates only (no covariance); used inside resampling loops."""
    mle = fit_nameship(frames, init=init)
    return {s: fit_adjusted(frames, mle.theta_hat, s, config) for s in strata}


@dataclass(frozen=True)
class BootstrapResult:
    """Dyad-bootstrap replicates of stage-2 coefficients, keyed by stratum."""

    names: dict
    replicates: dict

    def se(self, s, name="a") -> float:
        j = self.names[s].index(name)
        return float(np.std(self.replicates[s][:, j], ddof=1))


def bootstrap(frames: Frames, config: ModelConfig | None = None, n_boot=1000, seed=0,
              strata=STRATA, init: NameshipParams | None = None) -> BootstrapResult:
    """Nonparametric bootstrap resampling whole dyads with replacement.

    Both steps are refitted on every resample, started from ``init`` (the
    full-sample MLE is a good choice).
    """
    config = config or ModelConfig()
    strata = tuple(sorted({int(s) for s in strata}))
    rng = np.random.default_rng(seed)
    n = len(frames)
    reps = {s: [] for s in strata}
    names = {}
    for _ in range(int(n_boot)):
        fits = fit_only(frames.subset(rng.integers(0, n, n)), config, strata, init)
        for s, f in fits.items():
            reps[s].append(f.coef)
            names[s] = f.names
    return BootstrapResult(names=names, replicates={s: np.array(v) for s, v in reps.items()})
