"""Identity and closeness testers, plain and differentially private.

The non-private core is a plug-in statistic: the total variation distance
between the empirical distribution of the sample and the reference. Its
rejection threshold is the (1 - ALPHA) quantile of the same statistic under a
uniform null, estimated by Monte Carlo with a seed fixed by ``(N, s)``. The
uniform reference maximizes the expected plug-in distance, so one threshold
per ``(N, s)`` serves every reference distribution. The sample size is the
smallest point of the schedule ``ceil(c * sqrt(N) / sigma**2)`` (``c`` on a
geometric grid) whose threshold is at most ``sigma / 2``; a source that is
``sigma``-far then produces a statistic above the threshold unless the sample
deviates from its own source by more than the null quantile.

The private wrappers follow the block-sampling construction: draw
``m = ceil(6/eps)`` times the inner sample, run the inner tester on one random
block (or a random subsample for AM testers), and flip the answer with
probability 1/6.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .distributions import Distribution
from .mechanisms import NoiseSource
from .protocol import (
    CLAIM,
    PROVER,
    RANDOM_STRING,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
)

ALPHA = 0.05
NULL_REPS = 2000
FLIP_PROBABILITY = 1.0 / 6.0
INNER_ERROR_BOUND = 1.0 / 6.0
SAMPLE_CAP = 1 << 24
_GRID_STEPS_PER_DOUBLING = 4


def block_count(epsilon: float) -> int:
    """``ceil(6 / eps)``, robust to float noise in ``6 / eps``."""
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive")
    return max(1, math.ceil(round(6.0 / epsilon, 9)))


def _as_elements(sample, n: int) -> np.ndarray:
    xs = np.asarray(sample)
    if xs.ndim != 1:
        raise ValueError("sample must be one-dimensional")
    if xs.size == 0:
        raise ValueError("empty sample")
    if not np.issubdtype(xs.dtype, np.integer):
        raise ValueError("sample elements must be integers")
    xs = xs.astype(np.int64)
    if xs.min() < 0 or xs.max() >= n:
        raise ValueError(f"sample element outside the domain [0, {n})")
    return xs


def identity_statistic(sample, Q: Distribution) -> float:
    xs = _as_elements(sample, Q.domain_size)
    return kernels.tv_to_reference(kernels.element_counts(xs, Q.domain_size), Q.pmf, xs.size)


def closeness_statistic(sample_p, sample_q, n: int) -> float:
    a = _as_elements(sample_p, n)
    b = _as_elements(sample_q, n)
    return kernels.tv_two_sample(kernels.element_counts(a, n), kernels.element_counts(b, n), a.size, b.size)


@functools.lru_cache(maxsize=None)
def null_quantile(n: int, s: int, two_sample: bool = False, alpha: float = ALPHA, reps: int = NULL_REPS) -> float:
    """Upper ``alpha`` quantile of the plug-in statistic under a uniform null."""
    if n < 1 or s < 1:
        raise ValueError("need n >= 1 and s >= 1")
    gen = np.random.default_rng(np.random.SeedSequence([n, s, int(two_sample), 0x1D]))
    pvals = np.full(n, 1.0 / n)
    stats = np.empty(reps)
    chunk = max(1, min(reps, (1 << 22) // n))
    for lo in range(0, reps, chunk):
        hi = min(reps, lo + chunk)
        c1 = gen.multinomial(s, pvals, size=hi - lo)
        if two_sample:
            c2 = gen.multinomial(s, pvals, size=hi - lo)
            stats[lo:hi] = 0.5 * np.abs(c1 - c2).sum(axis=1) / s
        else:
            stats[lo:hi] = 0.5 * np.abs(c1 / s - 1.0 / n).sum(axis=1)
    return float(np.quantile(stats, 1.0 - alpha, method="higher"))


@dataclass(frozen=True)
class CalibrationRow:
    N: int
    sigma: float
    s: int
    threshold: float


@functools.lru_cache(maxsize=None)
def _calibrate(n: int, sigma: float, two_sample: bool) -> CalibrationRow:
    base = math.sqrt(n) / sigma**2
    k = 0
    while True:
        s = math.ceil(2 ** (k / _GRID_STEPS_PER_DOUBLING) * base)
        if s > SAMPLE_CAP:
            raise ValueError(f"no sample size up to {SAMPLE_CAP} meets the target at N={n}, sigma={sigma}")
        q = null_quantile(n, s, two_sample)
        if q <= sigma / 2:
            return CalibrationRow(n, sigma, s, q)
        k += 1


def _check_sigma(sigma):
    if not (0 < sigma < 1):
        raise ValueError("sigma must lie in (0, 1)")


def calibrate_identity(n: int, sigma: float) -> CalibrationRow:
    _check_sigma(sigma)
    return _calibrate(int(n), float(sigma), False)


def calibrate_closeness(n: int, sigma: float) -> CalibrationRow:
    _check_sigma(sigma)
    return _calibrate(int(n), float(sigma), True)


def sample_complexity(n: int, sigma: float) -> int:
    return calibrate_identity(n, sigma).s


def private_sample_complexity(n: int, sigma: float, epsilon: float) -> int:
    return block_count(epsilon) * sample_complexity(n, sigma)


CALIBRATION_COLUMNS = ("N", "sigma", "s", "threshold")


def write_calibration_csv(path, rows: Sequence[CalibrationRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_COLUMNS)
        for r in rows:
            w.writerow([r.N, repr(r.sigma), r.s, repr(r.threshold)])


def read_calibration_csv(path) -> list[CalibrationRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CALIBRATION_COLUMNS:
            raise ValueError(f"calibration file must have columns {CALIBRATION_COLUMNS}")
        return [CalibrationRow(int(r["N"]), float(r["sigma"]), int(r["s"]), float(r["threshold"])) for r in reader]


def identity_test_nonprivate(sample, Q: Distribution, sigma: float) -> bool:
    """Plug-in identity test; True means accept.

    The threshold is the null quantile for the given sample length, so the
    soundness guarantee needs at least :func:`sample_complexity` elements.
    """
    _check_sigma(sigma)
    xs = _as_elements(sample, Q.domain_size)
    return identity_statistic(xs, Q) <= null_quantile(Q.domain_size, xs.size)


def closeness_test_nonprivate(sample_p, sample_q, n: int, sigma: float) -> bool:
    """Two-sample plug-in test of equal sources; samples must have equal size."""
    _check_sigma(sigma)
    if len(sample_p) != len(sample_q):
        raise ValueError("closeness test needs equal sample sizes")
    return closeness_statistic(sample_p, sample_q, n) <= null_quantile(n, len(sample_p), True)


@dataclass(frozen=True)
class TesterSpec:
    """A tester: sample size, decision map and declared error probability.

    ``decide(sample, rng)`` returns True for accept. ``deterministic`` means
    the decision ignores ``rng``.
    """

    name: str
    sample_size: int
    decide: Callable
    error: float
    deterministic: bool = True

    def __call__(self, sample, rng) -> bool:
        return bool(self.decide(sample, rng))


def identity_tester(Q: Distribution, sigma: float) -> TesterSpec:
    row = calibrate_identity(Q.domain_size, sigma)
    threshold = row.threshold

    def decide(sample, rng=None):
        return identity_statistic(sample, Q) <= threshold

    return TesterSpec(f"identity-tv(N={Q.domain_size}, sigma={sigma})", row.s, decide, ALPHA)


def closeness_tester(n: int, sigma: float) -> TesterSpec:
    """Two-sample tester over paired rows: column 0 from one source, column 1 from the other."""
    row = calibrate_closeness(n, sigma)
    threshold = row.threshold

    def decide(pairs, rng=None):
        pairs = np.asarray(pairs)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("closeness tester expects an (s, 2) array of paired draws")
        return closeness_statistic(pairs[:, 0], pairs[:, 1], n) <= threshold

    return TesterSpec(f"closeness-tv(N={n}, sigma={sigma})", row.s, decide, ALPHA)


class PrivateTester:
    """Block-sampling private wrapper around a tester.

    Callable as ``wrapper(sample, rng) -> bool``; ``decide_many`` gives a
    batch of independent decisions on one fixed sample.
    """

    def __init__(self, inner: TesterSpec, epsilon: float, flip_probability: float = FLIP_PROBABILITY):
        if inner.error > INNER_ERROR_BOUND + 1e-12:
            raise ValueError("inner tester must have error probability at most 1/6")
        self.inner = inner
        self.epsilon = float(epsilon)
        self.m = block_count(epsilon)
        self.flip_probability = float(flip_probability)
        self.sample_size = self.m * inner.sample_size
        self.error = (1 - self.flip_probability) * inner.error + self.flip_probability

    def _blocks(self, sample):
        xs = np.asarray(sample)
        if xs.shape[0] < self.sample_size:
            raise ValueError(f"need {self.sample_size} samples, got {xs.shape[0]}")
        s = self.inner.sample_size
        return [xs[i * s:(i + 1) * s] for i in range(self.m)]

    def block_decisions(self, sample, rng=None) -> np.ndarray:
        return np.array([self.inner(b, rng) for b in self._blocks(sample)], dtype=bool)

    def __call__(self, sample, rng: NoiseSource) -> bool:
        blocks = self._blocks(sample)
        r = int(rng.integers(self.m))
        out = self.inner(blocks[r], rng)
        if rng.bernoulli(self.flip_probability):
            out = not out
        return bool(out)

    def decide_many(self, sample, rng: NoiseSource, trials: int) -> np.ndarray:
        if not self.inner.deterministic:
            return np.array([self(sample, rng) for _ in range(trials)], dtype=bool)
        per_block = self.block_decisions(sample)
        r = rng.integers(0, self.m, size=trials)
        flips = rng.bernoulli(self.flip_probability, size=trials)
        return per_block[r] ^ flips

    def acceptance_probability(self, sample) -> float:
        """Exact acceptance probability on a fixed sample (deterministic inner tester)."""
        if not self.inner.deterministic:
            raise ValueError("exact probability needs a deterministic inner tester")
        frac = float(self.block_decisions(sample).mean())
        f = self.flip_probability
        return (1 - f) * frac + f * (1 - frac)

    def spec(self) -> TesterSpec:
        return TesterSpec(f"private[{self.inner.name}, eps={self.epsilon}]", self.sample_size, self, self.error, False)


def privatize_tester(T: TesterSpec, epsilon: float) -> PrivateTester:
    return PrivateTester(T, epsilon)


def dp_identity_test(sample, Q: Distribution, sigma: float, epsilon: float, rng: NoiseSource) -> bool:
    """Private identity test; uses the first ``ceil(6/eps) * s`` sample elements."""
    return PrivateTester(identity_tester(Q, sigma), epsilon)(sample, rng)


def majority_identity_decision(tester: PrivateTester, sample, rng: NoiseSource, runs: int) -> bool:
    """Majority over an odd number of independent wrapper runs on one sample."""
    if runs < 1 or runs % 2 == 0:
        raise ValueError("majority needs an odd, positive number of runs")
    votes = sum(tester(sample, rng) for _ in range(runs))
    return votes * 2 > runs


@dataclass(frozen=True)
class AMTesterSpec:
    """A public-coin tester.

    The verifier sends one random string per entry of ``challenge_bytes``
    before it samples; the prover answers each with ``honest_reply``. After
    the exchange the verifier draws ``sample_size`` elements and calls
    ``decide(sample, challenges, replies, rng)``.
    """

    name: str
    sample_size: int
    challenge_bytes: tuple
    honest_reply: Callable
    decide: Callable
    error: float
    messages_depend_on_sample: bool = False

    @property
    def communication(self) -> int:
        return len(self.challenge_bytes)


class AMTesterProtocol(Protocol):
    def __init__(self, spec: AMTesterSpec):
        self.spec = spec
        self.name = spec.name

    def verify(self, channel, samples, rng):
        challenges, replies = [], []
        for nbytes in self.spec.challenge_bytes:
            ch = rng.token_bytes(nbytes)
            challenges.append(ch)
            replies.append(channel.exchange(RANDOM_STRING, ch, expect=CLAIM))
        sample = samples.draw(self.spec.sample_size)
        ok = bool(self.spec.decide(sample, tuple(challenges), tuple(replies), rng))
        return Outcome(ok, None, "" if ok else "tester rejected")


class AMHonestProver(ProverStrategy):
    name = "honest"

    def __init__(self, spec: AMTesterSpec):
        self.spec = spec

    def respond(self, message, D, rng):
        return Message(PROVER, CLAIM, self.spec.honest_reply(message.payload, D))


def privatize_am_tester(T: AMTesterSpec, epsilon: float, flip_probability: float = FLIP_PROBABILITY) -> AMTesterSpec:
    """Private AM tester: same challenges, inflated sample, random subsample, flip."""
    if T.messages_depend_on_sample:
        raise ValueError("verifier messages must be data-independent random strings sent before sampling")
    m = block_count(epsilon)
    s = T.sample_size

    def decide(sample, challenges, replies, rng):
        xs = np.asarray(sample)
        if xs.shape[0] < m * s:
            raise ValueError(f"need {m * s} samples, got {xs.shape[0]}")
        idx = rng.choice(m * s, s, replace=False)
        out = bool(T.decide(xs[idx], challenges, replies, rng))
        if rng.bernoulli(flip_probability):
            out = not out
        return out

    return AMTesterSpec(
        name=f"private[{T.name}, eps={epsilon}]",
        sample_size=m * s,
        challenge_bytes=T.challenge_bytes,
        honest_reply=T.honest_reply,
        decide=decide,
        error=1 - (1 - T.error) * (1 - flip_probability),
    )


def tester_as_am(T: TesterSpec) -> AMTesterSpec:
    """View a plain tester as an AM tester with no messages."""
    return AMTesterSpec(
        name=T.name,
        sample_size=T.sample_size,
        challenge_bytes=(),
        honest_reply=lambda challenge, D: None,
        decide=lambda sample, challenges, replies, rng: T(sample, rng),
        error=T.error,
    )


def boundary_pairs(tester: PrivateTester, Q: Distribution, count: int, rng: NoiseSource) -> list[tuple]:
    """Adjacent samples ``(x, x')`` on which one block's decision differs.

    Every block starts as a shuffled copy of the most balanced sample for
    ``Q``. One block then has elements moved onto a single target until its
    inner decision flips; the step before and the step after differ in one
    position. The boundary block and target vary with ``rng``.
    """
    if not tester.inner.deterministic:
        raise ValueError("boundary search needs a deterministic inner tester")
    s = tester.inner.sample_size
    base = np.repeat(np.arange(Q.domain_size), quantize_counts(Q.pmf, s))
    pairs = []
    while len(pairs) < count:
        blocks = [rng.generator.permutation(base) for _ in range(tester.m)]
        b = int(rng.integers(tester.m))
        target = int(rng.integers(Q.domain_size))
        block = blocks[b]
        before = tester.inner(block, None)
        movable = np.flatnonzero(block != target)
        rng.generator.shuffle(movable)
        for pos in movable:
            nxt = block.copy()
            nxt[pos] = target
            if tester.inner(nxt, None) != before:
                x = np.concatenate(blocks)
                blocks[b] = nxt
                pairs.append((x, np.concatenate(blocks)))
                break
            block = nxt
            blocks[b] = block
    return pairs


def quantize_counts(pmf, s: int) -> np.ndarray:
    """Integer counts summing to ``s`` closest to ``s * pmf`` (largest remainder)."""
    target = np.asarray(pmf, dtype=np.float64) * s
    counts = np.floor(target).astype(np.int64)
    short = s - int(counts.sum())
    if short > 0:
        counts[np.argsort(-(target - counts), kind="stable")[:short]] += 1
    return counts
