"""From a one-round private-coin protocol to a public-coin one via replicability.

The private-coin verifier sends ``m = A(S, r)``; if ``A`` is replicable the
seed ``r`` alone pins down ``m`` with high probability, so the public-coin
verifier sends ``r`` and lets the prover compute ``m`` from its own sample.
The decision no longer sees which seed produced ``m``; it takes a majority
over all seeds consistent with ``m``. Seed spaces are small and enumerated
exactly, which is the whole cost of the construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import Distribution
from .mechanisms import NoiseSource
from .protocol import (
    CLAIM,
    PROVER,
    QUERY,
    RANDOM_STRING,
    MalformedMessage,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
    ReplayProver,
    wilson_interval,
)

MAX_SEED_SPACE = 1 << 16


@dataclass(frozen=True)
class MessageAlg:
    """``A(S, r)`` over an enumerable seed space ``range(seed_space)``."""

    fn: Callable
    seed_space: int

    def __post_init__(self):
        if not 1 <= self.seed_space <= MAX_SEED_SPACE:
            raise ValueError(f"seed space must have between 1 and {MAX_SEED_SPACE} seeds")

    def __call__(self, S, r):
        return self.fn(S, r)

    def all_messages(self, S) -> list:
        return [self.fn(S, r) for r in range(self.seed_space)]


@dataclass(frozen=True)
class DecisionAlg:
    """``A'(T, S, r, r') -> {0, 1}``."""

    fn: Callable

    def __call__(self, T, S, r, r_prime) -> int:
        return int(bool(self.fn(T, S, r, r_prime)))


@dataclass(frozen=True)
class PrivateCoinProtocolSpec:
    """A one-round private-coin protocol ``(A, f, A')`` with sample size ``n``."""

    A: MessageAlg
    f: Callable
    A_prime: DecisionAlg
    n: int
    rounds: int = 1
    message_bits: int = 0


@dataclass(frozen=True)
class ReplicabilityEstimate:
    rho: float
    ci_low: float
    ci_high: float
    trials: int


def measure_replicability(A: MessageAlg, D: Distribution, n: int, trials: int, rng: NoiseSource) -> ReplicabilityEstimate:
    """Estimate ``rho = Pr_{S,S',r}[A(S,r) != A(S',r)]`` with a Wilson interval."""
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    mismatches = 0
    for _ in range(trials):
        S = D.sample(rng, n)
        S2 = D.sample(rng, n)
        r = int(rng.integers(A.seed_space))
        mismatches += A(S, r) != A(S2, r)
    lo, hi = wilson_interval(mismatches, trials)
    return ReplicabilityEstimate(mismatches / trials, lo, hi, trials)


def conditional_accept_fraction(T, S, r_prime, A: MessageAlg, A_prime: DecisionAlg):
    """``Pr_r[A'(T,S,r,r') = 1 | A(S,r) = m]`` by enumeration; ``None`` if no seed yields ``m``."""
    m = T[0]
    matching = [r for r in range(A.seed_space) if A(S, r) == m]
    if not matching:
        return None
    return sum(A_prime(T, S, r, r_prime) for r in matching) / len(matching)


def derandomized_decision(T, S, r_prime, A: MessageAlg, A_prime: DecisionAlg) -> int:
    """Majority of ``A'`` over the seeds consistent with ``T``'s message; 0 when none is."""
    frac = conditional_accept_fraction(T, S, r_prime, A, A_prime)
    if frac is None:
        return 0
    return int(frac >= 0.5)


def _parse_transcript(payload):
    if not isinstance(payload, (tuple, list)) or len(payload) != 2:
        raise MalformedMessage("transcript must be a pair (m, m')")
    m, reply = payload
    if isinstance(m, (bool, np.bool_)) or not isinstance(m, (int, np.integer)):
        raise MalformedMessage("message component must be an integer")
    return int(m), reply


class PrivateCoinProtocol(Protocol):
    """The original protocol: the verifier's message depends on its sample."""

    name = "private-coin"

    def __init__(self, spec: PrivateCoinProtocolSpec):
        self.spec = spec

    def verify(self, channel, samples, rng):
        spec = self.spec
        S = samples.draw(spec.n)
        r = int(rng.integers(spec.A.seed_space))
        m = spec.A(S, r)
        reply = channel.exchange(QUERY, m, expect=CLAIM)
        r_prime = int(rng.integers(1 << 32))
        ok = spec.A_prime((m, reply), S, r, r_prime) == 1
        return Outcome(ok, None, "" if ok else "decision rejected")


class ConvertedAMProtocol(Protocol):
    """Public-coin version: send the seed, check the returned message, decide by seed majority."""

    name = "replicable-am"

    def __init__(self, spec: PrivateCoinProtocolSpec):
        self.spec = spec

    def verify(self, channel, samples, rng):
        spec = self.spec
        r = int(rng.integers(spec.A.seed_space))
        payload = channel.exchange(RANDOM_STRING, r, expect=CLAIM)
        m, reply = _parse_transcript(payload)
        channel.transcript.notes["communication_bits"] = math.ceil(math.log2(spec.A.seed_space)) + spec.message_bits
        S = samples.draw(spec.n)
        if spec.A(S, r) != m:
            return Outcome(False, None, "message does not match A(S, r)")
        r_prime = int(rng.integers(1 << 32))
        ok = derandomized_decision((m, reply), S, r_prime, spec.A, spec.A_prime) == 1
        return Outcome(ok, None, "" if ok else "seed-majority decision rejected")


def convert_to_am(private_protocol: PrivateCoinProtocolSpec) -> ConvertedAMProtocol:
    if private_protocol.rounds != 1:
        raise ValueError("only one-round protocols can be converted")
    return ConvertedAMProtocol(private_protocol)


class PrivateCoinProver(ProverStrategy):
    """Answers the verifier's message with ``f(m, D)``."""

    def __init__(self, f: Callable, name: str = "honest"):
        self.f = f
        self.name = name

    def respond(self, message, D, rng):
        return Message(PROVER, CLAIM, self.f(message.payload, D))


class AMProver(ProverStrategy):
    """Draws its own sample, computes ``m = A(S', r)`` and replies ``(m, f(m, D))``."""

    randomized = True

    def __init__(self, spec: PrivateCoinProtocolSpec, f: Callable | None = None, name: str = "honest",
                 message: Callable | None = None):
        self.spec = spec
        self.f = spec.f if f is None else f
        self.name = name
        self.message = message

    def respond(self, message, D, rng):
        r = int(message.payload)
        if self.message is None:
            m = self.spec.A(D.sample(rng, self.spec.n), r)
        else:
            m = self.message(r, rng)
        return Message(PROVER, CLAIM, (int(m), self.f(m, D)))


@dataclass(frozen=True)
class ToyFixture:
    """Verifies ``D(0) <= theta`` over ``[N]``.

    ``A`` rounds the empirical frequency of element 0 to a coarse grid of
    width ``width`` with a seed-dependent offset, so two samples agree on the
    bucket unless a grid edge falls between their frequencies. The honest
    prover claims ``D(0)``. ``A'`` accepts a claim at most ``theta`` that is
    within a seed-dependent tolerance of the empirical frequency and whose own
    bucket is next to ``m``.
    """

    N: int
    sigma: float
    n: int = 800
    theta: float = 0.1
    width: float = 0.5
    seeds: int = 16

    def offset(self, r: int) -> float:
        return (r + 0.5) * self.width / self.seeds

    def bucket(self, value: float, r: int) -> int:
        return int(math.floor((value + self.offset(r)) / self.width))

    def tolerance(self, r: int) -> float:
        return self.sigma / 4 + (self.sigma / 4) * r / max(1, self.seeds - 1)

    def frequency(self, S) -> float:
        return float(np.count_nonzero(np.asarray(S) == 0)) / len(S)

    def message(self, S, r) -> int:
        return self.bucket(self.frequency(S), r)

    def honest_reply(self, m, D: Distribution) -> float:
        return float(D.pmf[0])

    def decide(self, T, S, r, r_prime) -> int:
        m, claim = T
        if isinstance(claim, (bool, np.bool_)) or not isinstance(claim, (int, float, np.integer, np.floating)):
            return 0
        claim = float(claim)
        if not (math.isfinite(claim) and 0.0 <= claim <= 1.0):
            return 0
        if claim > self.theta:
            return 0
        if abs(self.frequency(S) - claim) > self.tolerance(r):
            return 0
        return int(abs(self.bucket(claim, r) - m) <= 1)

    def spec(self) -> PrivateCoinProtocolSpec:
        return PrivateCoinProtocolSpec(
            A=MessageAlg(self.message, self.seeds),
            f=self.honest_reply,
            A_prime=DecisionAlg(self.decide),
            n=self.n,
            message_bits=2 * 64,
        )

    def _instance(self, p0: float) -> Distribution:
        if self.N < 2:
            raise ValueError("need N >= 2")
        p = np.full(self.N, (1 - p0) / (self.N - 1))
        p[0] = p0
        return Distribution(p)

    def close_instance(self) -> Distribution:
        return self._instance(self.theta)

    def far_instance(self) -> Distribution:
        return self._instance(self.theta + self.sigma)


def toy_private_protocol(N: int = 64, sigma: float = 0.2, n: int = 800):
    """``(A, f, A')`` of the toy fixture, plus the fixture itself as the fourth item."""
    fx = ToyFixture(N, sigma, n)
    spec = fx.spec()
    return spec.A, spec.f, spec.A_prime, fx


class ConstantClaim:
    def __init__(self, value: float):
        self.value = value

    def __call__(self, m, D):
        return self.value


class ClaimFromMessage:
    """Claims the lower edge of the bucket it was sent."""

    def __init__(self, width: float):
        self.width = width

    def __call__(self, m, D):
        return max(0.0, (m - 0.5) * self.width)


class BucketOfClaim:
    """Announces the bucket the claimed value falls in under seed ``r``."""

    def __init__(self, fx: "ToyFixture", value: float):
        self.fx = fx
        self.value = value

    def __call__(self, r, rng):
        return self.fx.bucket(self.value, r)


class RandomBucket:
    def __init__(self, high: int = 3):
        self.high = high

    def __call__(self, r, rng):
        return int(rng.integers(0, self.high))


def private_coin_pool(fx: ToyFixture) -> list[ProverStrategy]:
    return [
        PrivateCoinProver(fx.honest_reply, "honest"),
        PrivateCoinProver(ConstantClaim(fx.theta), "claim-theta"),
        PrivateCoinProver(ConstantClaim(fx.theta - fx.sigma / 4), "claim-below-theta"),
        PrivateCoinProver(ClaimFromMessage(fx.width), "claim-from-message"),
        ReplayProver(),
    ]


def am_adversary_pool(fx: ToyFixture) -> list[ProverStrategy]:
    spec = fx.spec()
    return [
        AMProver(spec, name="honest"),
        AMProver(spec, f=ConstantClaim(fx.theta), name="claim-theta"),
        AMProver(spec, f=ConstantClaim(fx.theta - fx.sigma / 4), name="claim-below-theta"),
        AMProver(spec, f=ConstantClaim(fx.theta), name="claim-theta-matching-bucket",
                 message=BucketOfClaim(fx, fx.theta)),
        AMProver(spec, f=ConstantClaim(fx.theta), name="random-message", message=RandomBucket()),
        ReplayProver(),
    ]


def markov_doubling_terms(fx: ToyFixture, S, r_prime: int = 0):
    """``(1[A''=0], Pr_r[A'=0 | A(S,r)=m])`` for the honest transcript on ``S``.

    ``m`` is taken as ``A(S, r)`` for the first seed; returns ``None`` when
    that can not happen (never for a non-empty seed space).
    """
    spec = fx.spec()
    m = spec.A(S, 0)
    T = (m, fx.honest_reply(m, fx.close_instance()))
    frac = conditional_accept_fraction(T, S, r_prime, spec.A, spec.A_prime)
    if frac is None:
        return None
    decision = derandomized_decision(T, S, r_prime, spec.A, spec.A_prime)
    return int(decision == 0), 1.0 - frac
