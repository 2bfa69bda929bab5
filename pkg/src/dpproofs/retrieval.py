"""Tagged-sample retrieval: the collision-count protocol and its private variant.

The verifier sends uniformly drawn seed elements, the prover tags each seed
with its claimed mass, and the verifier checks the tags bin by bin against
two- and three-way collision counts with fresh samples from ``D``. Tags are
grouped on a geometric grid: bin ``j`` holds tags in
``[e^{j tau}/N, e^{(j+1) tau}/N)`` and tag 0 forms the light bin.

The private variant caps seed multiplicity at 3, gates the local sensitivity
of the triple counts with propose-test-release, and releases every checked
count through the Laplace mechanism. All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .distributions import Distribution
from .mechanisms import NoiseSource, PrivacyParams, laplace_release, ptr_gate
from .protocol import (
    ELEMENT_LIST,
    PROVER,
    TAG_LIST,
    MalformedMessage,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
    ReplayProver,
)

EDGE_SLACK = 1e-12
PRIVATE_SEED_CAP = 3
LIGHT = "-inf"


@dataclass(frozen=True)
class RetrievalParams:
    epsilon: float
    delta: float
    sigma: float
    s: int
    N: int
    p_max: float
    p_min: float
    tau: float
    B: float
    b_min: float
    Delta: float

    @property
    def collision_cap(self) -> int:
        return PRIVATE_SEED_CAP

    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta)

    @property
    def ptr_margin(self) -> float:
        return math.log(1 / self.delta) / self.epsilon


def derive_params(epsilon: float, delta: float, sigma: float, s: int, N: int, strict: bool = True) -> RetrievalParams:
    """Constants of the private protocol.

    With ``strict`` the configuration must satisfy ``p_min < p_max``,
    ``B >= 1``, ``b_min >= 1`` and ``Delta > log(1/delta)/eps``.
    """
    if not (epsilon > 0 and sigma > 0 and s >= 1 and N >= 1):
        raise ValueError("epsilon, sigma, s and N must be positive")
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if not sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    lg = math.log(1 / delta)
    p_max = lg / (epsilon * s)
    p_min = sigma / N
    if not p_min < p_max:
        raise ValueError(f"infeasible regime: p_min={p_min:.3g} >= p_max={p_max:.3g}")
    tau = sigma**3
    B = math.log(p_max / p_min) / tau
    b_min = (sigma / (2 * B)) * s
    Delta = 3 * math.log(s) + 5 * lg / epsilon
    if strict:
        if B < 1:
            raise ValueError(f"B={B:.3g} < 1")
        if b_min < 1:
            raise ValueError(f"b_min={b_min:.3g} < 1")
        if not Delta > lg / epsilon:
            raise ValueError("Delta does not exceed the PTR noise margin")
    return RetrievalParams(epsilon, delta, sigma, int(s), int(N), p_max, p_min, tau, B, b_min, Delta)


@dataclass(frozen=True)
class NonPrivateParams:
    sigma: float
    s: int
    N: int
    p_max: float
    p_min: float
    tau: float

    @property
    def collision_cap(self) -> int:
        return max(1, math.ceil(math.log(self.N)))


def derive_nonprivate_params(sigma: float, s: int, N: int) -> NonPrivateParams:
    if not (0 < sigma < 1) or s < 1 or N < 2:
        raise ValueError("need sigma in (0,1), s >= 1, N >= 2")
    p_max = 1.0 / s
    p_min = sigma / (1000 * N)
    if not p_min < p_max:
        raise ValueError("infeasible regime: p_min >= p_max")
    return NonPrivateParams(sigma, int(s), int(N), p_max, p_min, sigma**3 / 80000)


@dataclass(frozen=True)
class TaggedSample:
    element: int
    tag: float


def draw_seed_elements(s: int, N: int, rng: NoiseSource, collision_cap: int):
    """``s`` uniform elements of ``[N]``, or ``None`` when some element exceeds the cap."""
    seeds = np.asarray(rng.integers(0, N, size=s), dtype=np.int64)
    if kernels.max_count(seeds, N) > collision_cap:
        return None
    return seeds


def honest_tags(D: Distribution, seeds, p_min: float) -> np.ndarray:
    masses = D.pmf[np.asarray(seeds, dtype=np.int64)]
    return np.where(masses >= p_min, masses, 0.0)


def honest_tag_prover(D: Distribution, seeds, p_min: float) -> np.ndarray:
    return honest_tags(D, seeds, p_min)


def max_multiplicity(seeds, T, N: int | None = None) -> int:
    """``max_k |{r : S_k = T_r}|``; 0 when no seed occurs in ``T``."""
    seeds = np.asarray(seeds, dtype=np.int64)
    T = np.asarray(T, dtype=np.int64)
    if seeds.size == 0 or T.size == 0:
        return 0
    n = int(max(seeds.max(), T.max())) + 1 if N is None else int(N)
    return kernels.max_multiplicity(seeds, T, n)


@dataclass(frozen=True)
class BinGeometry:
    """The geometric grid of tag bins for one parameter set."""

    tau: float
    N: int
    p_min: float
    p_max: float

    @property
    def j_min(self) -> int:
        return math.ceil(math.log(self.p_min * self.N) / self.tau - EDGE_SLACK)

    @property
    def j_max(self) -> int:
        return math.floor(math.log(self.p_max * self.N) / self.tau + EDGE_SLACK)

    @property
    def nbins(self) -> int:
        return max(0, self.j_max - self.j_min + 1)

    def lower_edge(self, j) -> np.ndarray:
        return np.exp(np.asarray(j) * self.tau) / self.N

    def raw_index(self, tags) -> np.ndarray:
        """``floor(ln(pi N) / tau)`` with a relative slack at the edges; tags must be positive."""
        v = np.log(np.asarray(tags, dtype=np.float64) * self.N) / self.tau
        return np.floor(v + EDGE_SLACK * np.maximum(1.0, np.abs(v))).astype(np.int64)

    def validate(self, tags) -> np.ndarray:
        """Return tags as a float array or raise MalformedMessage."""
        try:
            t = np.asarray(tags, dtype=np.float64)
        except (TypeError, ValueError):
            raise MalformedMessage("tags are not numeric") from None
        if t.ndim != 1:
            raise MalformedMessage("tags must be a flat list")
        if not np.all(np.isfinite(t)):
            raise MalformedMessage("non-finite tag")
        if np.any(t < 0):
            raise MalformedMessage("negative tag")
        nz = t[t != 0]
        if np.any(nz < self.p_min * (1 - EDGE_SLACK)):
            raise MalformedMessage("nonzero tag below p_min")
        if np.any(nz > self.p_max * (1 + EDGE_SLACK)):
            raise MalformedMessage("tag above p_max")
        return t

    def assign(self, tags) -> np.ndarray:
        """Bin offset ``j - j_min`` per tag; ``nbins`` marks the light bin.

        The outer bins are stretched to the validated range: the bottom bin
        starts at ``p_min`` and the top bin is closed at ``p_max``.
        """
        t = self.validate(tags)
        out = np.full(t.size, self.nbins, dtype=np.int64)
        pos = t != 0
        if np.any(pos):
            j = np.clip(self.raw_index(t[pos]), self.j_min, self.j_max)
            out[pos] = j - self.j_min
        return out

    def bins(self, tags) -> dict:
        """Membership lists ``{j: indices}`` plus ``LIGHT``; empty bins omitted."""
        ids = self.assign(tags)
        members = {}
        for off in np.unique(ids[(ids >= 0) & (ids < self.nbins)]):
            members[int(off) + self.j_min] = np.flatnonzero(ids == off)
        members[LIGHT] = np.flatnonzero(ids == self.nbins)
        return members


def params_geometry(params) -> BinGeometry:
    return BinGeometry(params.tau, params.N, params.p_min, params.p_max)


def collision_counts(bins: Mapping, seeds, T, T_prime, N: int | None = None) -> dict:
    """Exact pair and triple collision counts for each bin.

    ``bins`` maps a label to the seed indices it holds. Returns
    ``{label: (pair, triple)}`` where pair counts ``(k, r)`` with
    ``S_k = T_r`` and triple counts ``(k, r, r')`` with ``S_k = T_r = T'_{r'}``.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    T = np.asarray(T, dtype=np.int64)
    T_prime = np.asarray(T_prime, dtype=np.int64)
    everything = np.concatenate([seeds, T, T_prime])
    if everything.size and everything.min() < 0:
        raise ValueError("elements must be non-negative")
    n = (int(everything.max()) + 1 if everything.size else 1) if N is None else int(N)
    labels = list(bins)
    ids = np.full(seeds.size, -1, dtype=np.int64)
    for i, lab in enumerate(labels):
        idx = np.asarray(bins[lab], dtype=np.int64)
        if np.any(ids[idx] >= 0):
            raise ValueError("bins overlap")
        ids[idx] = i
    pair, triple = kernels.binned_collisions(seeds, ids, max(1, len(labels)), T, T_prime, n)
    return {lab: (int(pair[i]), int(triple[i])) for i, lab in enumerate(labels)}


@dataclass
class CheckRecord:
    bin: object
    size: int
    kind: str
    value: float
    low: float
    high: float
    passed: bool


class TaggedRetrievalProtocol(Protocol):
    """Verifier for tagged-sample retrieval; ``private`` selects the variant."""

    def __init__(self, params, private: bool = True):
        if private and not isinstance(params, RetrievalParams):
            raise TypeError("private retrieval needs RetrievalParams")
        if not private and not isinstance(params, NonPrivateParams):
            raise TypeError("non-private retrieval needs NonPrivateParams")
        self.params = params
        self.private = private
        self.geometry = params_geometry(params)
        self.name = "tagged-retrieval-private" if private else "tagged-retrieval"

    def config(self):
        p = self.params
        cfg = {"N": p.N, "sigma": p.sigma, "s": p.s}
        if self.private:
            cfg.update(eps=p.epsilon, delta=p.delta)
        return cfg

    def verify(self, channel, samples, rng):
        p = self.params
        notes = channel.transcript.notes
        seed_rng, noise_rng = rng.spawn(2)
        seeds = draw_seed_elements(p.s, p.N, seed_rng, p.collision_cap)
        if seeds is None:
            notes["stage"] = "seed-cap"
            return Outcome(False, None, f"a seed element appears more than {p.collision_cap} times")
        tags = channel.exchange(ELEMENT_LIST, seeds, expect=TAG_LIST)
        tags = self.geometry.validate(tags)
        if tags.size != p.s:
            raise MalformedMessage(f"expected {p.s} tags, got {tags.size}")
        ids = self.geometry.assign(tags)
        T = samples.draw(p.s)
        T2 = samples.draw(p.s)

        if self.private:
            m = max(kernels.max_multiplicity(seeds, T, p.N), kernels.max_multiplicity(seeds, T2, p.N))
            notes["m"] = int(m)
            if not ptr_gate(m, p.Delta, p.privacy, noise_rng):
                notes["stage"] = "ptr"
                return Outcome(False, None, "propose-test-release gate rejected")

        # the grid can hold millions of bins; count only the occupied ones
        nb = self.geometry.nbins
        occupied = np.unique(ids[(ids >= 0) & (ids < nb)])
        compact = np.full(ids.size, -1, dtype=np.int64)
        compact[ids == nb] = occupied.size
        inside = (ids >= 0) & (ids < nb)
        compact[inside] = np.searchsorted(occupied, ids[inside])
        pair, triple = kernels.binned_collisions(seeds, compact, occupied.size + 1, T, T2, p.N)
        sizes = np.bincount(compact[compact >= 0], minlength=occupied.size + 1)
        checks = []
        ok = True
        for c, off in enumerate(occupied.tolist()):
            size = int(sizes[c])
            if size < self._bin_threshold(off + self.geometry.j_min):
                continue
            j = off + self.geometry.j_min
            level = math.exp(j * p.tau) / p.N
            slack = p.tau if self.private else 4 * p.tau
            for kind, count, centre, scale in (
                ("pair", pair[c], p.s * size * level, 3 / p.epsilon if self.private else None),
                ("triple", triple[c], p.s**2 * size * level**2, 3 * p.Delta / p.epsilon if self.private else None),
            ):
                value = laplace_release(float(count), scale, noise_rng) if self.private else float(count)
                lo, hi = (1 - slack) * centre, (1 + slack) * centre
                passed = lo <= value <= hi
                checks.append(CheckRecord(j, size, kind, value, lo, hi, passed))
                ok = ok and passed
        light = occupied.size
        light_size = int(sizes[light])
        if self.private:
            value = laplace_release(float(pair[light]), 3 / p.epsilon, noise_rng)
            bound = 2 * p.p_min * p.s**2
        else:
            value = float(pair[light])
            bound = p.s * light_size * p.sigma / (50 * p.N)
        light_ok = value <= bound
        checks.append(CheckRecord(LIGHT, light_size, "pair", value, -math.inf, bound, light_ok))
        ok = ok and light_ok
        notes["checks"] = [c.__dict__ for c in checks]
        if not ok:
            notes["stage"] = "collision-checks"
            return Outcome(False, None, "collision check failed")
        notes["stage"] = "accepted"
        return Outcome(True, [TaggedSample(int(x), float(t)) for x, t in zip(seeds, tags)], "")

    def _bin_threshold(self, j: int) -> float:
        p = self.params
        if self.private:
            return p.b_min
        return math.exp(-j * p.tau) * p.s * p.sigma * p.tau / (100 * math.log(p.N))


def run_tagged_retrieval_private(D: Distribution, params: RetrievalParams, prover: ProverStrategy, rng: NoiseSource):
    """One private run; returns the tagged samples or ``None`` on reject."""
    from .protocol import run_protocol

    return run_protocol(TaggedRetrievalProtocol(params, True), prover, D, rng).output


def run_tagged_retrieval_nonprivate(D: Distribution, sigma: float, s: int, prover: ProverStrategy, rng: NoiseSource):
    from .protocol import run_protocol

    params = derive_nonprivate_params(sigma, s, D.domain_size)
    return run_protocol(TaggedRetrievalProtocol(params, False), prover, D, rng).output


class HonestTagProver(ProverStrategy):
    name = "honest"

    def __init__(self, p_min: float):
        self.p_min = p_min

    def tags(self, D, seeds, rng):
        return honest_tags(D, seeds, self.p_min)

    def respond(self, message, D, rng):
        seeds = np.asarray(message.payload, dtype=np.int64)
        return Message(PROVER, TAG_LIST, self.tags(D, seeds, rng))


class ScaledTagProver(HonestTagProver):
    """Multiplies every nonzero honest tag by ``gamma``."""

    def __init__(self, p_min: float, gamma: float):
        super().__init__(p_min)
        self.gamma = gamma
        self.name = f"{'inflate' if gamma >= 1 else 'deflate'}({gamma:g})"

    def tags(self, D, seeds, rng):
        return honest_tags(D, seeds, self.p_min) * self.gamma


class SwapTagProver(HonestTagProver):
    """Honest tags, randomly permuted among the seeds."""

    name = "swap-tags"
    randomized = True

    def tags(self, D, seeds, rng):
        return rng.generator.permutation(honest_tags(D, seeds, self.p_min))


class ZeroTagProver(HonestTagProver):
    name = "zero-tags"

    def tags(self, D, seeds, rng):
        return np.zeros(len(seeds))


class BinShuffleProver(HonestTagProver):
    """Moves each nonzero tag to a uniformly chosen different bin, same offset within the bin."""

    name = "bin-shuffle"
    randomized = True

    def __init__(self, p_min: float, geometry: BinGeometry):
        super().__init__(p_min)
        self.geometry = geometry

    def tags(self, D, seeds, rng):
        t = honest_tags(D, seeds, self.p_min)
        g = self.geometry
        if g.nbins < 2:
            return t
        nz = np.flatnonzero(t)
        j = np.clip(g.raw_index(t[nz]), g.j_min, g.j_max)
        shift = rng.integers(1, g.nbins, size=nz.size)
        new_j = g.j_min + (j - g.j_min + shift) % g.nbins
        out = t.copy()
        moved = t[nz] * np.exp((new_j - j) * g.tau)
        out[nz] = np.clip(moved, g.p_min, g.p_max)
        return out


class RandomBinProver(HonestTagProver):
    """Log-uniform random tags over ``[p_min, p_max]``."""

    name = "random-bin"
    randomized = True

    def __init__(self, p_min: float, p_max: float):
        super().__init__(p_min)
        self.p_max = p_max

    def tags(self, D, seeds, rng):
        lo, hi = math.log(self.p_min), math.log(self.p_max)
        return np.exp(lo + (hi - lo) * rng.random(len(seeds)))


class WrongLengthProver(HonestTagProver):
    name = "wrong-length"

    def tags(self, D, seeds, rng):
        return honest_tags(D, seeds, self.p_min)[:-1]


def retrieval_adversary_pool(params) -> list[ProverStrategy]:
    g = params_geometry(params)
    pool: list[ProverStrategy] = [HonestTagProver(params.p_min)]
    pool += [ScaledTagProver(params.p_min, gamma) for gamma in (1.5, 2.0, 4.0)]
    pool += [ScaledTagProver(params.p_min, 1 / gamma) for gamma in (1.5, 2.0, 4.0)]
    pool += [
        SwapTagProver(params.p_min),
        ZeroTagProver(params.p_min),
        RandomBinProver(params.p_min, params.p_max),
        BinShuffleProver(params.p_min, g),
        ReplayProver(),
    ]
    return pool


def tag_quality(tagged: Sequence[TaggedSample], D: Distribution, sigma: float, N: int, heavy_cut: float | None = None):
    """``(heavy_error, light_mass)`` of a tagged output.

    Tags at or above ``heavy_cut`` (default ``sigma / N``) count as heavy.
    ``heavy_error`` averages ``1 - min(pi/D, D/pi)`` over heavy tags and
    ``light_mass`` averages ``D(S_i)`` over the rest, both normalized by ``s``.
    """
    if not tagged:
        return 0.0, 0.0
    cut = sigma / N if heavy_cut is None else heavy_cut
    xs = np.array([t.element for t in tagged], dtype=np.int64)
    pis = np.array([t.tag for t in tagged], dtype=np.float64)
    d = D.pmf[xs]
    s = len(tagged)
    heavy = pis >= cut
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.minimum(np.where(d > 0, pis / d, 0.0), np.where(pis > 0, d / pis, 0.0))
    heavy_error = float(np.sum(1.0 - ratio[heavy]) / s)
    light_mass = float(np.sum(d[~heavy]) / s)
    return heavy_error, light_mass


@dataclass
class Histogram:
    """Approximate histogram: bucket levels with estimated element counts and masses."""

    N: int
    tau: float
    buckets: dict = field(default_factory=dict)
    light_elements: float = 0.0
    light_mass: float = 0.0
    samples: int = 0

    @property
    def empty(self) -> bool:
        return self.samples == 0

    def masses(self) -> dict:
        return {j: b["mass"] for j, b in self.buckets.items()}

    def occupied(self) -> list:
        return sorted(j for j, b in self.buckets.items() if b["count"] > 0)


def approximate_histogram(tagged: Sequence[TaggedSample], tau: float, N: int, p_min: float, p_max: float,
                          sampling: str = "uniform") -> Histogram:
    """Bucket tagged samples on the ``e^{j tau}/N`` grid.

    ``sampling="uniform"`` is for seeds drawn uniformly from ``[N]`` (the
    retrieval protocols); ``sampling="distribution"`` is for elements drawn
    from the distribution itself (the oracle-backed argument output). Each
    bucket records the sample count, the mean tag, an estimated number of
    domain elements and their estimated total mass.
    """
    if sampling not in ("uniform", "distribution"):
        raise ValueError("sampling must be 'uniform' or 'distribution'")
    hist = Histogram(N=N, tau=tau, samples=len(tagged))
    if not tagged:
        return hist
    geom = BinGeometry(tau, N, p_min, p_max)
    pis = np.array([t.tag for t in tagged], dtype=np.float64)
    s = pis.size
    nz = pis > 0
    if np.any(nz):
        j = geom.raw_index(pis[nz])
        for jj in np.unique(j):
            sel = pis[nz][j == jj]
            level = float(sel.mean())
            frac = sel.size / s
            if sampling == "uniform":
                elements = N * frac
                mass = elements * level
            else:
                mass = frac
                elements = frac / level
            hist.buckets[int(jj)] = {"count": int(sel.size), "level": level, "elements": elements, "mass": mass}
    heavy_mass = sum(b["mass"] for b in hist.buckets.values())
    heavy_elements = sum(b["elements"] for b in hist.buckets.values())
    hist.light_mass = max(0.0, 1.0 - heavy_mass)
    hist.light_elements = max(0.0, N - heavy_elements) if sampling == "distribution" else N * (s - int(nz.sum())) / s
    return hist


def estimate_distance_to_uniform(hist: Histogram) -> float:
    if hist.empty:
        return 1.0
    u = 1.0 / hist.N
    tv = sum(b["elements"] * abs(b["level"] - u) for b in hist.buckets.values())
    tv += abs(hist.light_elements * u - hist.light_mass)
    return min(1.0, 0.5 * tv)


def decide_distance_to_uniform(hist: Histogram, threshold: float) -> str:
    """``"close"`` when the estimated TV to uniform is at most ``threshold``; empty input is ``"far"``."""
    if hist.empty:
        return "far"
    return "close" if estimate_distance_to_uniform(hist) <= threshold else "far"


def two_level(N: int, heavy_fraction: float = 0.25, heavy_mass: float = 0.5) -> Distribution:
    """``heavy_fraction`` of the atoms share ``heavy_mass``; the rest share the remainder."""
    k = max(1, int(round(N * heavy_fraction)))
    if k >= N:
        raise ValueError("need at least one light atom")
    p = np.empty(N)
    p[:k] = heavy_mass / k
    p[k:] = (1 - heavy_mass) / (N - k)
    return Distribution(p)


@dataclass(frozen=True)
class CalibrationPoint:
    s: int
    valid: bool
    rate: float
    note: str = ""


def calibrate_retrieval(N: int, sigma: float, epsilon: float, delta: float, trials: int, seed: int,
                        s_grid: Sequence[int] | None = None, D: Distribution | None = None, jobs: int = 1,
                        target: float = 0.75):
    """Honest acceptance over a power-of-two grid of sample sizes.

    Returns ``(s, points)`` with ``s`` the smallest grid point reaching
    ``target``, or ``None`` when no point does. Grid points whose derived constants
    violate the parameter invariants or whose ``p_max`` is below ``max D`` are
    reported as invalid and not run.
    """
    from .protocol import estimate_acceptance

    D = Distribution.uniform(N) if D is None else D
    grid = s_grid if s_grid is not None else [1 << k for k in range(3, 15)]
    points = []
    for s in grid:
        try:
            params = derive_params(epsilon, delta, sigma, s, N)
        except ValueError as exc:
            points.append(CalibrationPoint(s, False, float("nan"), str(exc)))
            continue
        if D.pmf.max() > params.p_max:
            points.append(CalibrationPoint(s, False, float("nan"), "max D(x) exceeds p_max"))
            continue
        est = estimate_acceptance(TaggedRetrievalProtocol(params), HonestTagProver(params.p_min), D, trials, seed, jobs)
        points.append(CalibrationPoint(s, True, est.rate))
    passing = [p for p in points if p.valid and p.rate >= target]
    if passing:
        return min(passing, key=lambda p: p.s).s, points
    return None, points
