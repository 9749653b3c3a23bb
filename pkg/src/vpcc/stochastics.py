"""Distribution toolbox: closed-form moments, exact samplers, MC certification.

Shipped families are Weibull, Beta, finite-support and constant, each with an
optional integer power transform applied to the variate. Raw moments of the
transformed variate are closed form, which is what the moment-propagation
machinery consumes; samplers are exact (inverse CDF for Weibull and
finite-support, a Gamma-ratio construction for Beta) and fully deterministic
on numpy seed streams.

Weibull parameters are ordered (scale, shape): ``weibull(5, 30)`` has CDF
``1 - exp(-(x/5)**30)`` and raw moments ``E[x^p] = scale**p * gamma(1 + p/shape)``.
The more common (shape, scale) reading gives wildly different numbers, so
double-check the order when importing parameter tables from elsewhere.

``mc_certify`` estimates the joint violation probability of a set of linear
state constraints under a fixed input sequence and reports an exact one-sided
99% Clopper-Pearson upper confidence bound (Wald intervals are invalid when
the violation count is near zero, which is the regime certification targets).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import special, stats

from .errors import DomainError, MomentUndefined

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, typing only
    from .moments import SystemSpec

FAMILIES = ("weibull", "beta", "finite", "constant")
_MC_BATCH = 1 << 15


@dataclass(frozen=True)
class DistributionSpec:
    """A scalar distribution plus an optional integer power transform.

    ``params`` by family:
      weibull:  (scale, shape), both > 0
      beta:     (a, b), both > 0
      finite:   (values, probabilities), probabilities summing to 1
      constant: (value,)

    ``power`` transforms the variate x -> x**power with power in {1, 2, 3};
    moments and samples always refer to the transformed variate.
    """

    family: str
    params: tuple
    power: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown distribution family {self.family!r}")
        if self.power not in (1, 2, 3):
            raise DomainError(f"power transform must be 1, 2 or 3, got {self.power}")
        if self.family == "weibull":
            scale, shape = self.params
            if scale <= 0 or shape <= 0:
                raise DomainError("weibull requires positive scale and shape")
        elif self.family == "beta":
            a, b = self.params
            if a <= 0 or b <= 0:
                raise DomainError("beta requires positive shape parameters")
        elif self.family == "finite":
            values, probs = self.params
            values = tuple(float(v) for v in values)
            probs = tuple(float(p) for p in probs)
            if len(values) != len(probs) or not values:
                raise DomainError("finite support needs matching, nonempty values/probs")
            if any(p < 0 for p in probs):
                raise DomainError("finite-support probabilities must be nonnegative")
            if abs(sum(probs) - 1.0) > 1e-12:
                raise DomainError("finite-support probabilities must sum to 1 within 1e-12")
            object.__setattr__(self, "params", (values, probs))
        elif self.family == "constant":
            (value,) = self.params
            object.__setattr__(self, "params", (float(value),))

    # -- moments --------------------------------------------------------

    def raw_moment(self, p: int) -> float:
        """E[x^p] of the transformed variate, exact closed form."""
        if not isinstance(p, (int, np.integer)) or p < 1:
            raise MomentUndefined(f"raw moment order must be a positive integer, got {p}")
        order = int(p) * self.power
        if self.family == "weibull":
            scale, shape = self.params
            return float(scale**order * special.gamma(1.0 + order / shape))
        if self.family == "beta":
            a, b = self.params
            out = 1.0
            for j in range(order):
                out *= (a + j) / (a + b + j)
            return float(out)
        if self.family == "finite":
            values, probs = self.params
            return float(sum(pr * v**order for v, pr in zip(values, probs)))
        (value,) = self.params
        return float(value**order)

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        m1 = self.raw_moment(1)
        m2 = self.raw_moment(2)
        return max(m2 - m1 * m1, 0.0)

    # -- sampling -------------------------------------------------------

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` transformed variates from ``rng``."""
        if count < 1:
            raise DomainError("sample count must be >= 1")
        if self.family == "weibull":
            scale, shape = self.params
            u = rng.random(count)
            base = scale * (-np.log1p(-u)) ** (1.0 / shape)
        elif self.family == "beta":
            a, b = self.params
            g1 = rng.gamma(a, 1.0, count)
            g2 = rng.gamma(b, 1.0, count)
            base = g1 / (g1 + g2)
        elif self.family == "finite":
            values, probs = self.params
            edges = np.cumsum(probs)
            idx = np.searchsorted(edges, rng.random(count), side="right")
            idx = np.minimum(idx, len(values) - 1)
            base = np.asarray(values, dtype=float)[idx]
        else:
            (value,) = self.params
            base = np.full(count, value, dtype=float)
        if self.power == 1:
            return base
        return base**self.power


def weibull(scale: float, shape: float, power: int = 1) -> DistributionSpec:
    return DistributionSpec("weibull", (float(scale), float(shape)), power)


def beta_dist(a: float, b: float, power: int = 1) -> DistributionSpec:
    return DistributionSpec("beta", (float(a), float(b)), power)


def finite_support(values: Sequence[float], probs: Sequence[float], power: int = 1) -> DistributionSpec:
    return DistributionSpec("finite", (tuple(values), tuple(probs)), power)


def constant(value: float) -> DistributionSpec:
    return DistributionSpec("constant", (float(value),))


def raw_moment(dist: DistributionSpec, p: int) -> float:
    return dist.raw_moment(p)


def sample(dist: DistributionSpec, seed_stream, count: int) -> np.ndarray:
    """Sample with an int seed, a SeedSequence, or an existing Generator."""
    rng = as_generator(seed_stream)
    return dist.sample(rng, count)


def as_generator(seed_stream) -> np.random.Generator:
    if isinstance(seed_stream, np.random.Generator):
        return seed_stream
    if isinstance(seed_stream, np.random.SeedSequence):
        return np.random.default_rng(seed_stream)
    return np.random.default_rng(np.random.SeedSequence(seed_stream))


def child_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Counter-based child stream: deterministic per (seed, index), order-free."""
    return np.random.SeedSequence(seed, spawn_key=(index,))


# ---------------------------------------------------------------------------
# Monte-Carlo certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McCertificate:
    """Joint-violation estimate with an exact upper confidence bound."""

    samples: int
    violations: int
    empirical_violation: float
    upper_ci_99: float
    alpha: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "violations": self.violations,
            "empirical_violation": self.empirical_violation,
            "upper_ci_99": self.upper_ci_99,
            "alpha": self.alpha,
            "passed": self.passed,
        }


def clopper_pearson_upper(violations: int, samples: int, confidence: float = 0.99) -> float:
    """Exact one-sided upper confidence bound on a binomial proportion."""
    if samples < 1 or violations < 0 or violations > samples:
        raise DomainError("need 0 <= violations <= samples, samples >= 1")
    if violations == samples:
        return 1.0
    return float(stats.beta.ppf(confidence, violations + 1, samples - violations))


def mc_certify(
    spec: "SystemSpec",
    jcc,
    U: np.ndarray,
    samples: int,
    seed: int,
    confidence: float = 0.99,
) -> McCertificate:
    """Simulate full-horizon trajectories under ``U`` and certify ``jcc``.

    ``jcc`` needs ``rows`` (objects with G, h, k) and ``alpha``. A trajectory
    counts as violating when any row fails strictly at its time step; the
    certificate passes when the one-sided Clopper-Pearson upper bound on the
    joint violation probability is at most alpha.

    Sampling is batched with counter-based child streams so the result is a
    pure function of (seed, samples).
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    U = np.asarray(U, dtype=float).reshape(spec.horizon, spec.m)
    rows_by_k: dict[int, list] = {}
    for row in jcc.rows:
        rows_by_k.setdefault(int(row.k), []).append(row)
    max_k = max(rows_by_k) if rows_by_k else 0

    violations = 0
    done = 0
    batch_index = 0
    while done < samples:
        count = min(_MC_BATCH, samples - done)
        rng = np.random.default_rng(child_seed(seed, batch_index))
        violated = np.zeros(count, dtype=bool)
        x = np.broadcast_to(spec.x0, (count, spec.n)).copy()
        for t in range(max_k):
            a_batch = spec.a_models[t].sample_batch(rng, count)
            x = np.einsum("sij,sj->si", a_batch, x) + spec.B @ U[t]
            for row in rows_by_k.get(t + 1, ()):
                violated |= x @ row.G > row.h
        violations += int(violated.sum())
        done += count
        batch_index += 1

    empirical = violations / samples
    upper = clopper_pearson_upper(violations, samples, confidence)
    return McCertificate(
        samples=samples,
        violations=violations,
        empirical_violation=empirical,
        upper_ci_99=upper,
        alpha=float(jcc.alpha),
        passed=bool(upper <= jcc.alpha),
    )
