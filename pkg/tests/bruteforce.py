"""Independent brute-force reference likelihoods for the test suite.

Everything here is computed from first principles with scipy building
blocks: conditional densities given abundance n are assembled from
binom/poisson log-pmfs and elementary exponential-arrival formulas, then
mixed over a wide fixed Poisson grid with logsumexp. No adaptive
truncation, no shared code with the package kernels. Values are exact
joint log densities (the include_constants=True convention):

  * Count-with-times records are densities of the unordered time multiset,
    so no y! factor appears for CountT.
  * CountT1 carries the combinatorial y factor (the first of y detections
    can be any of them).
  * Poisson-process time variants are the usual point-process likelihoods.

Deliberately slow and transparent; keep instance sizes small.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom, poisson

from nmixtime.model import Family, ObservationProcess


def _log_diff_exp(a: float, b: float) -> float:
    """log(e^a - e^b) for a > b."""
    if b == -math.inf:
        return a
    return a + math.log1p(-math.exp(b - a))


def occasion_log_density_binomial(
    family: Family, y: int, t: np.ndarray, h: float, t_max: float, n: int
) -> float:
    """log f(one occasion's record | n) under per-individual exponential arrivals."""
    exposure = h * t_max
    if family is Family.BINARY:
        if y == 0:
            return -n * exposure
        return -math.inf if n == 0 else math.log(-math.expm1(-n * exposure))
    if family is Family.BINARY_T1:
        if y == 0:
            return -n * exposure
        if n == 0:
            return -math.inf
        return math.log(n * h) - n * h * float(t[0])
    if family is Family.COUNT:
        p = -math.expm1(-exposure)
        return float(binom.logpmf(y, n, p))
    if family is Family.COUNT_T:
        if y > n:
            return -math.inf
        choose = math.lgamma(n + 1) - math.lgamma(n - y + 1) - math.lgamma(y + 1)
        return choose + y * math.log(h) - h * float(np.sum(t)) - exposure * (n - y)
    # COUNT_T1: one of n individuals arrives first at t1, y-1 more of the
    # remaining n-1 arrive in (t1, t_max], the rest never do.
    if y == 0:
        return -n * exposure
    if y > n:
        return -math.inf
    t1 = float(t[0])
    log_between = _log_diff_exp(-h * t1, -exposure)
    choose = math.lgamma(n) - math.lgamma(n - y + 1) - math.lgamma(y)
    return (
        math.log(n * h)
        - h * t1
        + choose
        + (y - 1) * log_between
        - exposure * (n - y)
    )


def occasion_log_density_poisson(
    family: Family, y: int, t: np.ndarray, h: float, t_max: float, n: int
) -> float:
    """log f(one occasion's record | n) when each individual emits a Poisson stream."""
    mu = n * h * t_max
    if family is Family.BINARY:
        if y == 0:
            return -mu
        return -math.inf if mu == 0.0 else math.log(-math.expm1(-mu))
    if family is Family.BINARY_T1:
        if y == 0:
            return -mu
        if n == 0:
            return -math.inf
        return math.log(n * h) - n * h * float(t[0])
    if family is Family.COUNT:
        return float(poisson.logpmf(y, mu))
    if family is Family.COUNT_T:
        if y == 0:
            return -mu
        if n == 0:
            return -math.inf
        return y * math.log(n * h) - mu
    # COUNT_T1: first event at t1, then y-1 events anywhere in (t1, t_max].
    if y == 0:
        return -mu
    if n == 0:
        return -math.inf
    t1 = float(t[0])
    rest = float(poisson.logpmf(y - 1, n * h * (t_max - t1)))
    return math.log(n * h) - n * h * t1 + rest


def site_log_density(
    family: Family,
    process: ObservationProcess,
    counts,
    times,
    search_time,
    rate,
    lam: float,
    n_hi: int | None = None,
) -> float:
    """Exact log joint density of one site's records, mixed over n ~ Poisson(lam)."""
    counts = np.asarray(counts, dtype=np.int64)
    search_time = np.asarray(search_time, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if times is None:
        times = tuple(np.empty(0) for _ in counts)
    occasion_fn = (
        occasion_log_density_binomial
        if process is ObservationProcess.BINOMIAL_COUNT
        else occasion_log_density_poisson
    )
    if n_hi is None:
        n_hi = int(counts.max(initial=0) + math.ceil(lam + 20.0 * math.sqrt(lam)) + 80)
    terms = np.empty(n_hi + 1)
    for n in range(n_hi + 1):
        acc = float(poisson.logpmf(n, lam))
        for j in range(counts.size):
            if acc == -math.inf:
                break
            acc += occasion_fn(
                family, int(counts[j]), times[j], float(rate[j]), float(search_time[j]), n
            )
        terms[n] = acc
    return float(logsumexp(terms))


def dataset_log_density(dataset, params, n_hi: int | None = None) -> np.ndarray:
    """Per-site exact log densities for a whole dataset (constants included)."""
    log_lam, log_rate = params.resolve(dataset.design)
    out = np.empty(dataset.design.n_sites)
    for i, rec in enumerate(dataset.records):
        out[i] = site_log_density(
            dataset.protocol.family,
            dataset.protocol.process,
            rec.counts,
            rec.times if dataset.protocol.family.records_times else None,
            dataset.design.search_time[i],
            np.exp(log_rate[i]),
            float(np.exp(log_lam[i])),
            n_hi=n_hi,
        )
    return out
