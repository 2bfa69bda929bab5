"""Independence verification and the uniformity-via-independence reduction.

The independence protocol is one-message: the prover sends the concatenated
marginals, the verifier builds the induced product distribution and runs the
private identity test against it. The reduction embeds a distribution over
``[N]`` into ``{0,1}^d`` (padding with uniform mass, then binary encoding),
runs the independence protocol there, and finally checks that every empirical
marginal frequency sits within ``2 sqrt(ln d) / sqrt(s)`` of one half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import (
    NORMALIZATION_TOL,
    Distribution,
    Marginals,
    ProductDomain,
    marginals_of,
    pad_to_power_of_two,
    product_from_marginals,
)
from .identity import PrivateTester, identity_tester
from .mechanisms import NoiseSource
from .protocol import (
    MARGINALS,
    PROVER,
    MalformedMessage,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
    ReplayProver,
    run_protocol,
)

GRID_STEP = 0.01


@dataclass(frozen=True)
class IndependenceInstance:
    dom: ProductDomain
    D: Distribution
    sigma: float

    def __post_init__(self):
        if not (0 < self.sigma < 1):
            raise ValueError("sigma must lie in (0, 1)")
        if self.D.domain_size != self.dom.size:
            raise ValueError("distribution size does not match the product domain")

    @classmethod
    def from_json_obj(cls, obj: dict) -> "IndependenceInstance":
        dom = ProductDomain(obj["attribute_sizes"])
        return cls(dom, Distribution(obj["pmf"]), float(obj["sigma"]))


def honest_marginal_prover(D: Distribution, dom: ProductDomain) -> Marginals:
    return marginals_of(D, dom)


def parse_marginals(payload, dom: ProductDomain) -> Marginals:
    """Validate a marginals message; any defect raises MalformedMessage."""
    try:
        flat = np.asarray(payload, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedMessage("marginals are not a numeric vector") from None
    if flat.ndim != 1 or flat.size != dom.marginal_length:
        raise MalformedMessage(f"expected {dom.marginal_length} marginal entries")
    if not np.all(np.isfinite(flat)) or np.any(flat < 0):
        raise MalformedMessage("marginal entries must be finite and non-negative")
    cuts = np.cumsum(dom.attribute_sizes)[:-1]
    for block in np.split(flat, cuts):
        if abs(block.sum() - 1.0) > NORMALIZATION_TOL:
            raise MalformedMessage("a marginal block does not sum to one")
    return Marginals.from_flat(flat, dom)


def _independence_tester(Dp: Distribution, sigma: float, epsilon: float) -> PrivateTester:
    return PrivateTester(identity_tester(Dp, sigma), epsilon)


def verify_independence(M, sample, sigma: float, epsilon: float, dom: ProductDomain, rng: NoiseSource) -> bool:
    """Accept iff the private identity test finds the sample consistent with the product of ``M``."""
    try:
        marg = M if isinstance(M, Marginals) else parse_marginals(M, dom)
    except MalformedMessage:
        return False
    if marg.domain != dom:
        return False
    tester = _independence_tester(product_from_marginals(marg, dom), sigma, epsilon)
    return tester(sample, rng)


def independence_sample_size(dom: ProductDomain, sigma: float, epsilon: float) -> int:
    return _independence_tester(Distribution.uniform(dom.size), sigma, epsilon).sample_size


class IndependenceProtocol(Protocol):
    name = "independence"

    def __init__(self, dom: ProductDomain, sigma: float, epsilon: float):
        if not (0 < sigma < 1):
            raise ValueError("sigma must lie in (0, 1)")
        self.dom = dom
        self.sigma = float(sigma)
        self.epsilon = float(epsilon)

    def config(self):
        return {"N": self.dom.size, "sigma": self.sigma, "eps": self.epsilon,
                "s": independence_sample_size(self.dom, self.sigma, self.epsilon)}

    def verify(self, channel, samples, rng):
        payload = channel.receive(expect=MARGINALS)
        marg = parse_marginals(payload, self.dom)
        channel.transcript.notes["communication"] = self.dom.marginal_length
        tester = _independence_tester(product_from_marginals(marg, self.dom), self.sigma, self.epsilon)
        sample = samples.draw(tester.sample_size)
        ok = tester(sample, rng)
        return Outcome(ok, None, "" if ok else "identity test rejected")


class HonestMarginalProver(ProverStrategy):
    name = "honest"

    def __init__(self, dom: ProductDomain):
        self.dom = dom

    def respond(self, message, D, rng):
        return Message(PROVER, MARGINALS, honest_marginal_prover(D, self.dom).flat())


class FixedMarginalProver(ProverStrategy):
    """Sends the same marginals regardless of the distribution."""

    def __init__(self, marginals: Marginals, name: str = "fixed-marginals"):
        self.marginals = marginals
        self.name = name

    def respond(self, message, D, rng):
        return Message(PROVER, MARGINALS, self.marginals.flat())


class SkewedMarginalProver(ProverStrategy):
    """Pushes every true marginal toward its first value by ``shift``."""

    def __init__(self, dom: ProductDomain, shift: float = 0.3):
        self.dom = dom
        self.shift = shift
        self.name = f"skewed-marginals({shift})"

    def respond(self, message, D, rng):
        blocks = []
        for b in honest_marginal_prover(D, self.dom).blocks:
            b = (1 - self.shift) * b
            b[0] += self.shift
            blocks.append(b)
        return Message(PROVER, MARGINALS, np.concatenate(blocks))


class RandomMarginalProver(ProverStrategy):
    name = "random-marginals"
    randomized = True

    def __init__(self, dom: ProductDomain):
        self.dom = dom

    def respond(self, message, D, rng):
        blocks = [rng.generator.dirichlet(np.ones(n)) for n in self.dom.attribute_sizes]
        return Message(PROVER, MARGINALS, np.concatenate(blocks))


class ModeProductProver(ProverStrategy):
    """Point-mass marginals on the most likely tuple of ``D``."""

    name = "mode-product"

    def __init__(self, dom: ProductDomain):
        self.dom = dom

    def respond(self, message, D, rng):
        top = self.dom.unflatten(int(np.argmax(D.pmf)))
        blocks = []
        for a, n in zip(top, self.dom.attribute_sizes):
            b = np.zeros(n)
            b[a] = 1.0
            blocks.append(b)
        return Message(PROVER, MARGINALS, np.concatenate(blocks))


def independence_adversary_pool(dom: ProductDomain) -> list[ProverStrategy]:
    uniform = Marginals([np.full(n, 1.0 / n) for n in dom.attribute_sizes], dom)
    return [
        HonestMarginalProver(dom),
        FixedMarginalProver(uniform, "uniform-marginals"),
        SkewedMarginalProver(dom, 0.3),
        RandomMarginalProver(dom),
        ModeProductProver(dom),
        ReplayProver(),
    ]


def correlated_bits(d: int) -> Distribution:
    """Half the mass on the all-zeros tuple, half on all-ones."""
    p = np.zeros(1 << d)
    p[0] = p[-1] = 0.5
    return Distribution(p)


def random_product(dom: ProductDomain, rng) -> Distribution:
    gen = getattr(rng, "generator", rng)
    blocks = [gen.dirichlet(np.ones(n)) for n in dom.attribute_sizes]
    return product_from_marginals(Marginals(blocks, dom), dom)


def boolean_product_grid(d: int, step: float = GRID_STEP) -> tuple[np.ndarray, np.ndarray]:
    """All product distributions over ``{0,1}^d`` with P(bit i = 1) on a grid.

    Returns ``(params, pmfs)`` with one row per grid point.
    """
    k = int(round(1 / step))
    axis = np.arange(k + 1) / k
    params = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pmfs = np.ones((params.shape[0], 1))
    for i in range(d):
        p1 = params[:, i:i + 1]
        pmfs = np.einsum("ra,rb->rab", pmfs, np.concatenate([1 - p1, p1], axis=1)).reshape(params.shape[0], -1)
    return params, pmfs


def closest_product_distance(D: Distribution, d: int, step: float = GRID_STEP):
    """Brute-force minimum TV from ``D`` to Boolean product distributions on the grid."""
    if D.domain_size != 1 << d:
        raise ValueError("distribution is not over {0,1}^d")
    params, pmfs = boolean_product_grid(d, step)
    tv = 0.5 * np.abs(pmfs - D.pmf).sum(axis=1)
    i = int(np.argmin(tv))
    return float(tv[i]), params[i]


def marginal_radius(d: int, s: int) -> float:
    """Half-width ``2 sqrt(ln d) / sqrt(s)`` of the accepted marginal band (``d`` floored at 2)."""
    return 2.0 * math.sqrt(math.log(max(d, 2))) / math.sqrt(s)


def marginal_range_check(sample_bits: np.ndarray, s: int | None = None) -> bool:
    """True iff every attribute's empirical frequency of 1 lies in ``1/2 ± radius``."""
    bits = np.asarray(sample_bits)
    n, d = bits.shape
    s = n if s is None else s
    freq = bits.mean(axis=0)
    return bool(np.all(np.abs(freq - 0.5) <= marginal_radius(d, s)))


def uniform_far_radius(sigma: float, n: int, s: int) -> float:
    """Distance from uniform beyond which the reduction must reject (natural logs)."""
    ln = math.log(n)
    return sigma * (1 + 3 * math.sqrt(ln) / 2) + 4 * ln * math.sqrt(max(math.log(ln), 0.0)) / math.sqrt(s)


class _PaddedAccess:
    """Sample access to the padded distribution built from access to ``D``."""

    def __init__(self, samples, n: int, rng: NoiseSource):
        self._samples = samples
        self._n = n
        self._full = 1 << (n - 1).bit_length()
        self._rng = rng
        self.drawn_elements = []

    @property
    def domain_size(self):
        return self._full

    def draw(self, k: int) -> np.ndarray:
        k = int(k)
        if self._full == self._n:
            out = np.asarray(self._samples.draw(k), dtype=np.int64)
        else:
            from_d = self._rng.random(k) < self._n / self._full
            out = self._rng.integers(self._n, self._full, size=k).astype(np.int64)
            out[from_d] = self._samples.draw(int(from_d.sum()))
        self.drawn_elements.append(out)
        return out


def binary_encode(xs, d: int) -> np.ndarray:
    """Big-endian bits of each element; the bijection ``[2^d] -> {0,1}^d``."""
    return ProductDomain.boolean(d).unflatten_many(xs)


class UniformityViaIndependence(Protocol):
    """Uniformity over ``[N]`` verified through the Boolean independence protocol."""

    name = "uniformity-via-independence"

    def __init__(self, n: int, sigma: float, epsilon: float):
        if n < 2:
            raise ValueError("need N >= 2")
        self.n = int(n)
        self.d = (self.n - 1).bit_length()
        self.dom = ProductDomain.boolean(self.d)
        self.inner = IndependenceProtocol(self.dom, sigma, epsilon)

    def config(self):
        cfg = self.inner.config()
        cfg["N"] = self.n
        return cfg

    def verify(self, channel, samples, rng):
        inner_rng, pad_rng = rng.spawn(2)
        padded = _PaddedAccess(samples, self.n, pad_rng)
        outcome = self.inner.verify(channel, padded, inner_rng)
        if not outcome.accepted:
            return outcome
        xs = np.concatenate(padded.drawn_elements)
        if not marginal_range_check(binary_encode(xs, self.d)):
            return Outcome(False, None, "empirical marginal outside the allowed band")
        return Outcome(True, None, "")


class PaddedProver(ProverStrategy):
    """Runs an independence prover against the padded, binary-encoded distribution."""

    def __init__(self, inner: ProverStrategy):
        self.inner = inner
        self.name = inner.name
        self.randomized = inner.randomized

    def reset(self):
        self.inner.reset()

    def respond(self, message, D, rng):
        return self.inner.respond(message, pad_to_power_of_two(D), rng)


def uniformity_adversary_pool(n: int) -> list[ProverStrategy]:
    d = (n - 1).bit_length()
    return [PaddedProver(p) for p in independence_adversary_pool(ProductDomain.boolean(d))]


def verify_uniformity_via_independence(D: Distribution, sigma: float, epsilon: float, prover: ProverStrategy,
                                       rng: NoiseSource) -> bool:
    """One run of the reduction; ``prover`` speaks the independence protocol for ``{0,1}^d``."""
    proto = UniformityViaIndependence(D.domain_size, sigma, epsilon)
    return run_protocol(proto, PaddedProver(prover), D, rng).accepted
