"""Finite discrete distributions, product domains and distance primitives.

Elements of a domain of size ``N`` are the integers ``0 .. N-1``. Tuples in a
product domain are flattened in lexicographic order with the first attribute
most significant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NORMALIZATION_TOL = 1e-9
RENORMALIZE_TOL = 1e-6


class Distribution:
    """An explicit probability mass function over ``{0, ..., N-1}``.

    The pmf is copied and frozen on construction. A vector whose total is
    within ``RENORMALIZE_TOL`` of one is rescaled; anything further off is
    rejected.
    """

    __slots__ = ("_pmf", "_cdf")

    def __init__(self, pmf):
        p = np.array(pmf, dtype=np.float64).ravel()
        if p.size == 0:
            raise ValueError("distribution needs a non-empty domain")
        if not np.all(np.isfinite(p)):
            raise ValueError("pmf entries must be finite")
        if np.any(p < 0):
            raise ValueError("pmf entries must be non-negative")
        total = p.sum()
        if abs(total - 1.0) > RENORMALIZE_TOL:
            raise ValueError(f"pmf sums to {total!r}, not 1")
        if abs(total - 1.0) > 0:
            p = p / total
        p.setflags(write=False)
        self._pmf = p
        self._cdf = None

    @classmethod
    def uniform(cls, n: int) -> "Distribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, n: int, x: int) -> "Distribution":
        p = np.zeros(n)
        p[x] = 1.0
        return cls(p)

    @property
    def pmf(self) -> np.ndarray:
        return self._pmf

    @property
    def domain_size(self) -> int:
        return int(self._pmf.size)

    def __len__(self):
        return self.domain_size

    def __getitem__(self, x):
        return self._pmf[x]

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.domain_size == other.domain_size and np.array_equal(self._pmf, other._pmf)

    def __hash__(self):
        return hash(self._pmf.tobytes())

    def __repr__(self):
        return f"Distribution(N={self.domain_size})"

    @property
    def cdf(self) -> np.ndarray:
        if self._cdf is None:
            c = np.cumsum(self._pmf)
            c.setflags(write=False)
            self._cdf = c
        return self._cdf

    def sample(self, rng, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. elements using ``rng`` (a NoiseSource or numpy Generator)."""
        gen = getattr(rng, "generator", rng)
        u = gen.random(size)
        idx = np.searchsorted(self.cdf, u * self.cdf[-1], side="right")
        return np.minimum(idx, self.domain_size - 1).astype(np.int64)

    def to_json(self) -> str:
        return json.dumps({"domain_size": self.domain_size, "pmf": self._pmf.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Distribution":
        obj = json.loads(text)
        d = cls(obj["pmf"])
        if d.domain_size != int(obj["domain_size"]):
            raise ValueError("domain_size does not match pmf length")
        return d


def _check_same_domain(p: Distribution, q: Distribution):
    if p.domain_size != q.domain_size:
        raise ValueError(f"domain mismatch: {p.domain_size} vs {q.domain_size}")


def tv_distance(p: Distribution, q: Distribution) -> float:
    _check_same_domain(p, q)
    return float(0.5 * np.abs(p.pmf - q.pmf).sum())


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """KL(p || q) in nats; infinite when p puts mass where q has none."""
    _check_same_domain(p, q)
    support = p.pmf > 0
    if np.any(q.pmf[support] == 0):
        return math.inf
    pp = p.pmf[support]
    # rounding can leave a tiny negative sum for near-equal inputs
    return max(0.0, float(np.sum(pp * np.log(pp / q.pmf[support]))))


@dataclass(frozen=True)
class ProductDomain:
    attribute_sizes: tuple

    def __init__(self, attribute_sizes: Sequence[int]):
        sizes = tuple(int(a) for a in attribute_sizes)
        if not sizes or any(a < 1 for a in sizes):
            raise ValueError("attribute sizes must be positive integers")
        object.__setattr__(self, "attribute_sizes", sizes)

    @classmethod
    def boolean(cls, d: int) -> "ProductDomain":
        return cls([2] * d)

    @property
    def dimension(self) -> int:
        return len(self.attribute_sizes)

    @property
    def size(self) -> int:
        return math.prod(self.attribute_sizes)

    @property
    def marginal_length(self) -> int:
        return sum(self.attribute_sizes)

    def flatten(self, tup: Sequence[int]) -> int:
        if len(tup) != self.dimension:
            raise ValueError("tuple has the wrong number of coordinates")
        idx = 0
        for a, n in zip(tup, self.attribute_sizes):
            if not 0 <= a < n:
                raise ValueError(f"coordinate {a} out of range for attribute of size {n}")
            idx = idx * n + int(a)
        return idx

    def unflatten(self, idx: int) -> tuple:
        if not 0 <= idx < self.size:
            raise ValueError("flat index out of range")
        out = []
        for n in reversed(self.attribute_sizes):
            idx, a = divmod(idx, n)
            out.append(a)
        return tuple(reversed(out))

    def unflatten_many(self, idx) -> np.ndarray:
        """Vectorized :meth:`unflatten`; returns an array of shape (len(idx), d)."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty((idx.size, self.dimension), dtype=np.int64)
        rest = idx.copy()
        for i in range(self.dimension - 1, -1, -1):
            n = self.attribute_sizes[i]
            out[:, i] = rest % n
            rest //= n
        return out

    def to_json(self) -> str:
        return json.dumps({"attribute_sizes": list(self.attribute_sizes)})

    @classmethod
    def from_json(cls, text: str) -> "ProductDomain":
        return cls(json.loads(text)["attribute_sizes"])


class Marginals:
    """Per-attribute probability vectors, stored concatenated."""

    __slots__ = ("domain", "blocks")

    def __init__(self, blocks: Sequence, domain: ProductDomain):
        if len(blocks) != domain.dimension:
            raise ValueError("number of marginal blocks does not match the domain")
        out = []
        for b, n in zip(blocks, domain.attribute_sizes):
            arr = np.array(b, dtype=np.float64).ravel()
            if arr.size != n:
                raise ValueError(f"marginal block of length {arr.size}, expected {n}")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("marginal entries must be finite and non-negative")
            total = arr.sum()
            if abs(total - 1.0) > RENORMALIZE_TOL:
                raise ValueError(f"marginal block sums to {total!r}, not 1")
            arr = arr / total
            arr.setflags(write=False)
            out.append(arr)
        self.domain = domain
        self.blocks = tuple(out)

    @classmethod
    def from_flat(cls, flat, domain: ProductDomain) -> "Marginals":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != domain.marginal_length:
            raise ValueError(f"expected {domain.marginal_length} numbers, got {flat.size}")
        cuts = np.cumsum(domain.attribute_sizes)[:-1]
        return cls(np.split(flat, cuts), domain)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    def __eq__(self, other):
        if not isinstance(other, Marginals):
            return NotImplemented
        return self.domain == other.domain and all(
            np.allclose(a, b, atol=NORMALIZATION_TOL, rtol=0) for a, b in zip(self.blocks, other.blocks)
        )


def product_from_marginals(m: Marginals, dom: ProductDomain) -> Distribution:
    if m.domain != dom:
        raise ValueError("marginals were built for a different product domain")
    pmf = np.ones(1)
    for block in m.blocks:
        pmf = np.outer(pmf, block).ravel()
    return Distribution(pmf)


def marginals_of(D: Distribution, dom: ProductDomain) -> Marginals:
    if D.domain_size != dom.size:
        raise ValueError(f"distribution has {D.domain_size} atoms, domain has {dom.size}")
    cube = D.pmf.reshape(dom.attribute_sizes)
    blocks = []
    for i in range(dom.dimension):
        axes = tuple(j for j in range(dom.dimension) if j != i)
        blocks.append(cube.sum(axis=axes) if axes else cube)
    return Marginals(blocks, dom)


def _quantile_index(block: np.ndarray, cdf: np.ndarray, u: float):
    a = int(np.searchsorted(cdf, u, side="left"))
    if a >= block.size:
        a = int(np.flatnonzero(block)[-1])
    lower = cdf[a - 1] if a > 0 else 0.0
    return a, lower


def sample_product_by_quantile(m: Marginals, dom: ProductDomain, u: float) -> tuple:
    """Lexicographic quantile of the product distribution at ``u``.

    One binary search per attribute; the residual quantile is rescaled into the
    chosen atom before moving to the next coordinate.
    """
    if not (0.0 < u <= 1.0):
        raise ValueError("u must lie in (0, 1]")
    if m.domain != dom:
        raise ValueError("marginals were built for a different product domain")
    out = []
    for block in m.blocks:
        cdf = np.cumsum(block)
        a, lower = _quantile_index(block, cdf, u)
        out.append(a)
        u = (u - lower) / block[a]
        u = min(max(u, np.nextafter(0.0, 1.0)), 1.0)
    return tuple(out)


def sample_product_by_quantile_many(m: Marginals, dom: ProductDomain, us) -> np.ndarray:
    """Vectorized :func:`sample_product_by_quantile`; returns flat indices."""
    us = np.asarray(us, dtype=np.float64).copy()
    if np.any(~(us > 0)) or np.any(us > 1):
        raise ValueError("quantiles must lie in (0, 1]")
    flat = np.zeros(us.size, dtype=np.int64)
    tiny = np.nextafter(0.0, 1.0)
    for block, n in zip(m.blocks, dom.attribute_sizes):
        cdf = np.cumsum(block)
        a = np.searchsorted(cdf, us, side="left")
        last = int(np.flatnonzero(block)[-1])
        a = np.minimum(a, last)
        lower = np.where(a > 0, cdf[np.maximum(a - 1, 0)], 0.0)
        us = np.clip((us - lower) / block[a], tiny, 1.0)
        flat = flat * n + a
    return flat


def pad_to_power_of_two(D: Distribution) -> Distribution:
    """Mix ``D`` with the uniform distribution on the pad range ``[N, 2^d)``.

    Weight ``N / 2^d`` goes to ``D`` where ``2^d`` is the least power of two
    not below ``N``; this rescales the distance to uniform by exactly that
    factor.
    """
    n = D.domain_size
    d = (n - 1).bit_length()
    size = 1 << d
    if size == n:
        return D
    pmf = np.zeros(size)
    pmf[:n] = D.pmf * (n / size)
    pmf[n:] = 1.0 / size
    return Distribution(pmf)


def sample_padded(D: Distribution, rng, size: int) -> np.ndarray:
    """Sample the padded distribution using only sample access to ``D``."""
    n = D.domain_size
    full = 1 << (n - 1).bit_length()
    gen = getattr(rng, "generator", rng)
    from_d = gen.random(size) < n / full
    out = gen.integers(n, full, size=size) if full > n else np.zeros(size, dtype=np.int64)
    k = int(from_d.sum())
    out[from_d] = D.sample(rng, k)
    return out.astype(np.int64)
