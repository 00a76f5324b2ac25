"""Monte Carlo replication of the two-step procedure against simulated truth."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import ModelConfig
from .inference import robust_cov
from .outcome import STRATA, fit_naive
from .pipeline import two_step
from .simulation import SimConfig, simulate


def replicate(sim: SimConfig, model: ModelConfig, strata=STRATA, naive=True) -> dict:
    """Simulate one dataset and record the quantities used in validation.

    Keys: ``adj_a_s{s}``/``adj_se_s{s}`` (adjusted exposure coefficient and
    sandwich SE), ``adj_pr{k}_s{s}`` (homophily coefficients),
    ``naive_a_s{s}``/``naive_se_s{s}`` (stratified naive fit with HC0 SE),
    ``pooled_a``/``pooled_se``, ``hom_p_s{s}`` and ``hom_p_joint`` (homophily Wald p-values), ``n`` and ``n_clipped``.
    """
    out = simulate(sim, model)
    res = two_step(out.frames, model, strata)
    row = {"n": len(out.frames), "n_clipped": out.n_clipped,
           "hom_p_joint": res.homophily["joint"].p_value}
    for s in res.strata:
        row[f"adj_a_s{s}"] = res.beta_a(s)
        row[f"adj_se_s{s}"] = res.se(s)
        row[f"hom_p_s{s}"] = res.homophily[s].p_value
        for name, value in zip(res.fits[s].homophily_names, res.fits[s].beta_hom):
            row[f"adj_{name}_s{s}"] = float(value)
    if naive:
        pooled = fit_naive(out.frames, model)
        row["pooled_a"] = pooled.beta_a
        row["pooled_se"] = float(np.sqrt(robust_cov(pooled)[1, 1]))
        for s, fit in fit_naive(out.frames, model, stratified=True, strata=strata).items():
            row[f"naive_a_s{s}"] = fit.beta_a
            row[f"naive_se_s{s}"] = float(np.sqrt(robust_cov(fit)[1, 1]))
    return row


@dataclass(frozen=True)
class MonteCarloResult:
    """Per-replication records stored column-wise."""

    columns: dict

    @property
    def n_rep(self) -> int:
        return len(next(iter(self.columns.values())))

    def __getitem__(self, key) -> np.ndarray:
        return self.columns[key]

    def mean(self, key) -> float:
        return float(np.mean(self[key]))

    def mcse(self, key) -> float:
        """Monte Carlo standard error of the mean of ``key``."""
        return float(np.std(self[key], ddof=1) / np.sqrt(self.n_rep))

    def rejection_rate(self, est, se, level=0.05, null=0.0) -> float:
        from scipy.stats import norm

        z = (self[est] - null) / self[se]
        return float(np.mean(np.abs(z) > norm.isf(level / 2)))

    def coverage(self, est, se, truth, level=0.95) -> float:
        from scipy.stats import norm

        half = norm.isf((1 - level) / 2) * self[se]
        return float(np.mean(np.abs(self[est] - truth) <= half))


def monte_carlo(sim: SimConfig, model: ModelConfig | None = None, n_rep=500, seed=0,
                strata=STRATA, naive=True, n_jobs=1) -> MonteCarloResult:
    """Run ``n_rep`` replications; replication r uses simulation seed ``seed + r``.

    Results do not depend on ``n_jobs``.
    """
    model = model or ModelConfig()
    configs = [dataclasses.replace(sim, seed=seed + r) for r in range(int(n_rep))]
    if n_jobs == 1:
        rows = [replicate(c, model, strata, naive) for c in configs]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(delayed(replicate)(c, model, strata, naive) for c in configs)
    return MonteCarloResult({k: np.array([row[k] for row in rows]) for k in rows[0]})
