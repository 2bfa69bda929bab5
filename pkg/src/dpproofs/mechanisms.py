"""Differential-privacy primitives.

Laplace noise is produced by inverting the Laplace CDF on a 53-bit uniform
drawn strictly inside (0, 1). This is adequate for statistical experiments; it
is not hardened against floating-point side channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

_TWO53 = float(1 << 53)
PASSTHROUGH_SCALE = 1e-15


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be positive")
        if not (0 <= self.delta < 1):
            raise ValueError("delta must lie in [0, 1)")


class NoiseSource:
    """Seeded, replayable stream of uniform and Laplace variates.

    Wraps a numpy ``Generator`` over PCG64. Children for concurrent trials come
    from :meth:`spawn`, which derives independent streams from the same
    ``SeedSequence``; a source must not be shared between workers.
    """

    def __init__(self, seed=None):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            if seed is not None and not (0 <= int(seed) < 2**64):
                raise ValueError("seed must be a 64-bit unsigned integer")
            self._seq = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    @property
    def seed(self):
        return self._seq.entropy

    def spawn(self, n: int) -> list["NoiseSource"]:
        return [NoiseSource(s) for s in self._seq.spawn(n)]

    def open_uniform(self, size=None):
        """Uniform variates in the open interval (0, 1)."""
        k = self.generator.integers(0, 1 << 53, size=size, dtype=np.int64)
        return (k + 0.5) / _TWO53

    def random(self, size=None):
        return self.generator.random(size)

    def unit_interval(self, size=None):
        """Uniform variates in (0, 1], the quantile convention used by the oracles."""
        return 1.0 - self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def bernoulli(self, p: float, size=None):
        return self.generator.random(size) < p

    def laplace(self, loc=0.0, scale=1.0, size=None):
        if scale < 0:
            raise ValueError("Laplace scale must be non-negative")
        v = self.open_uniform(size) - 0.5
        return loc - scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))

    def choice(self, n: int, size: int, replace: bool = True):
        return self.generator.choice(n, size=size, replace=replace)

    def token_bytes(self, n: int) -> bytes:
        return self.generator.bytes(n)


def laplace_release(value: float, scale: float, rng: NoiseSource) -> float:
    """``value`` plus Laplace(0, scale) noise."""
    if not (scale > 0):
        raise ValueError("Laplace scale must be positive")
    if scale < PASSTHROUGH_SCALE:
        return float(value)
    return float(rng.laplace(value, scale))


def ptr_threshold(delta_bound: float, params: PrivacyParams) -> float:
    margin = math.log(1.0 / params.delta) / params.epsilon
    if not (delta_bound > margin):
        raise ValueError(
            f"proposed bound {delta_bound!r} does not exceed the noise margin {margin!r}"
        )
    return delta_bound - margin


def ptr_gate(stat: float, delta_bound: float, params: PrivacyParams, rng: NoiseSource) -> bool:
    """Private test of a proposed sensitivity bound; True means the data passed.

    ``stat`` must have sensitivity 1. The gate rejects when
    ``stat + Lap(1/eps)`` exceeds ``delta_bound - log(1/delta)/eps``.
    """
    if stat < 0:
        raise ValueError("statistic must be non-negative")
    threshold = ptr_threshold(delta_bound, params)
    noisy = stat + float(rng.laplace(0.0, 1.0 / params.epsilon))
    return not noisy > threshold


def compose(eps_list: Sequence[float], delta_list: Sequence[float] | None = None) -> PrivacyParams:
    """Basic composition: epsilons and deltas add."""
    eps_list = list(eps_list)
    if not eps_list:
        raise ValueError("nothing to compose")
    delta_list = [0.0] * len(eps_list) if delta_list is None else list(delta_list)
    if len(delta_list) != len(eps_list):
        raise ValueError("epsilon and delta lists differ in length")
    return PrivacyParams(math.fsum(eps_list), math.fsum(delta_list))


def adjacent(x, x_prime) -> bool:
    """Swap-one adjacency: same length, exactly one differing position."""
    a = np.asarray(x)
    b = np.asarray(x_prime)
    return a.shape == b.shape and a.ndim == 1 and int(np.count_nonzero(a != b)) == 1


@dataclass
class AuditReport:
    p_hat: float
    p_hat_prime: float
    bound: float
    violated: bool
    trials: int
    epsilon: float
    delta: float
    checks: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _decisions(mechanism, x, rng: NoiseSource, trials: int) -> np.ndarray:
    batch = getattr(mechanism, "decide_many", None)
    if batch is not None:
        return np.asarray(batch(x, rng, trials), dtype=bool)
    return np.fromiter((bool(mechanism(x, rng)) for _ in range(trials)), dtype=bool, count=trials)


def audit_dp_decision(
    mechanism: Callable,
    x,
    x_prime,
    params: PrivacyParams,
    trials: int,
    rng: NoiseSource,
    slack_se: float = 4.0,
) -> AuditReport:
    """Empirically check the (eps, delta) inequality for an accept/reject map.

    Estimates the acceptance probability on both datasets and flags a
    violation when, for either ordering and either outcome,
    ``p > e^eps * p' + delta + slack_se * SE`` with SE the standard error of
    ``p - e^eps * p'``. A test utility, not a proof.
    """
    if trials < 10_000:
        raise ValueError("audits need at least 10^4 trials per dataset")
    if not adjacent(x, x_prime):
        raise ValueError("datasets are not adjacent (must differ in exactly one element)")
    r1, r2 = rng.spawn(2)
    p = float(_decisions(mechanism, x, r1, trials).mean())
    pp = float(_decisions(mechanism, x_prime, r2, trials).mean())
    k = math.exp(params.epsilon)
    checks = []
    for label, a, b in (
        ("accept x|x'", p, pp),
        ("accept x'|x", pp, p),
        ("reject x|x'", 1 - p, 1 - pp),
        ("reject x'|x", 1 - pp, 1 - p),
    ):
        se = math.sqrt(a * (1 - a) / trials + k * k * b * (1 - b) / trials)
        bound = k * b + params.delta + slack_se * se
        checks.append({"event": label, "p": a, "bound": bound, "violated": bool(a > bound)})
    return AuditReport(
        p_hat=p,
        p_hat_prime=pp,
        bound=checks[0]["bound"],
        violated=any(c["violated"] for c in checks),
        trials=trials,
        epsilon=params.epsilon,
        delta=params.delta,
        checks=checks,
    )
