"""Private verified distribution oracle backed by a hash commitment.

The prover commits to an explicit distribution ``Q`` with a Merkle-style
tree whose labels carry subtree masses. The verifier turns quantile queries
into authenticated draws from ``Q``, checks ``Q`` against its own sample of
``D`` with a private two-sample test, and then draws the output set from the
oracle alone.

Masses are committed as multiples of ``2**-52`` so that parent sums and CDF
values are exact in double precision; the committed ``Q`` is that rounded
distribution.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import Distribution
from .identity import PrivateTester, block_count, closeness_tester
from .mechanisms import NoiseSource, PrivacyParams, compose
from .protocol import (
    COMMITMENT_ROOT,
    OPENING,
    PROVER,
    QUERY,
    RANDOM_STRING,
    MalformedMessage,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
    ReplayProver,
    run_protocol,
)
from .retrieval import TaggedSample

UNIT_BITS = 52
UNIT = 1 << UNIT_BITS
KEY_BYTES = 16
HASH_BYTES = 32
LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"
DEFAULT_OUTPUT_SIZE = 200


def quantize_dyadic(pmf) -> np.ndarray:
    """Integer masses in units of ``2**-52`` summing to exactly ``2**52``.

    Floors every entry and hands the leftover units to the largest fractional
    parts, ties to the lower index.
    """
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("pmf must be a non-empty vector of finite non-negative numbers")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("distribution is not normalized")
    scaled = p / p.sum() * UNIT
    units = np.floor(scaled).astype(np.int64)
    short = UNIT - int(units.sum())
    if short > 0:
        order = np.lexsort((np.arange(p.size), -(scaled - units)))
        units[order[:short]] += 1
    elif short < 0:
        order = np.lexsort((np.arange(p.size), scaled - units))
        order = order[units[order] > 0]
        units[order[:-short]] -= 1
    return units


def _mass_bytes(p: float) -> bytes:
    return struct.pack(">d", p)


def leaf_hash(key: bytes, p: float) -> bytes:
    return hashlib.sha256(key + LEAF_TAG + _mass_bytes(p)).digest()


def node_hash(key: bytes, left: "Label", right: "Label") -> bytes:
    return hashlib.sha256(key + NODE_TAG + left.serialize() + right.serialize()).digest()


@dataclass(frozen=True)
class Label:
    p: float
    h: bytes

    def serialize(self) -> bytes:
        return _mass_bytes(self.p) + self.h

    def to_json_obj(self) -> dict:
        return {"p": self.p, "h": self.h.hex()}

    @classmethod
    def from_json_obj(cls, obj) -> "Label":
        return cls(float(obj["p"]), bytes.fromhex(obj["h"]))


@dataclass(frozen=True)
class Opening:
    """Leaf ``x`` with its mass, CDF value and sibling labels from the root down."""

    x: int
    q: float
    phi: float
    path: tuple

    def to_json_obj(self) -> dict:
        return {"x": self.x, "q": self.q, "phi": self.phi, "path": [s.to_json_obj() for s in self.path]}

    def to_dict(self) -> dict:
        return self.to_json_obj()

    @classmethod
    def from_json_obj(cls, obj) -> "Opening":
        return cls(int(obj["x"]), float(obj["q"]), float(obj["phi"]),
                   tuple(Label.from_json_obj(s) for s in obj["path"]))


@dataclass(frozen=True)
class OpeningBatch:
    """Answers to a batch of quantile queries.

    Query ``i`` is answered by ``openings[index[i]]``; repeated leaves share
    one opening.
    """

    openings: tuple
    index: np.ndarray

    def to_dict(self) -> dict:
        return {"openings": [o.to_json_obj() for o in self.openings], "index": np.asarray(self.index).tolist()}


class CommitmentTree:
    """Complete binary tree over ``2**depth >= N`` leaves, zero-padded."""

    def __init__(self, Q: Distribution, key: bytes):
        units = quantize_dyadic(Q.pmf)
        self.N = Q.domain_size
        self.depth = max(0, math.ceil(math.log2(self.N))) if self.N > 1 else 0
        width = 1 << self.depth
        leaves = np.zeros(width, dtype=np.int64)
        leaves[: self.N] = units
        self.key = bytes(key)
        self.units = [leaves]
        for _ in range(self.depth):
            lv = self.units[-1]
            self.units.append(lv[0::2] + lv[1::2])
        self.units.reverse()
        self.masses = [u.astype(np.float64) / UNIT for u in self.units]
        bottom = [leaf_hash(self.key, float(p)) for p in self.masses[-1]]
        hashes = [bottom]
        for level in range(self.depth, 0, -1):
            below, ps = hashes[-1], self.masses[level]
            hashes.append([
                node_hash(self.key, Label(float(ps[i]), below[i]), Label(float(ps[i + 1]), below[i + 1]))
                for i in range(0, len(below), 2)
            ])
        hashes.reverse()
        self.hashes = hashes
        self.cdf = np.cumsum(self.units[-1]).astype(np.float64) / UNIT
        self.Q = Distribution(self.masses[-1][: self.N])

    @property
    def root(self) -> Label:
        return self.label(0, 0)

    @property
    def leaf_count(self) -> int:
        return 1 << self.depth

    def label(self, level: int, i: int) -> Label:
        return Label(float(self.masses[level][i]), self.hashes[level][i])

    def mass(self, x: int) -> float:
        return float(self.masses[-1][x])

    def opening(self, x: int) -> Opening:
        path = []
        for level in range(1, self.depth + 1):
            node = x >> (self.depth - level)
            path.append(self.label(level, node ^ 1))
        return Opening(int(x), self.mass(x), float(self.cdf[x]), tuple(path))


def build_commitment(Q: Distribution, hash_key: bytes):
    """``(tree, root label)``; raises ``ValueError`` on a non-normalized ``Q``."""
    tree = CommitmentTree(Q, hash_key)
    return tree, tree.root


def _check_mu(mu):
    if not (0.0 < mu <= 1.0):
        raise ValueError("mu must lie in (0, 1]")


def open_quantile(tree: CommitmentTree, mu: float) -> Opening:
    """Walk down by subtree mass to the leaf whose CDF interval contains ``mu``."""
    _check_mu(mu)
    node, offset = 0, 0
    for level in range(1, tree.depth + 1):
        left = 2 * node
        left_units = int(tree.units[level][left])
        if mu <= (offset + left_units) / UNIT:
            node = left
        else:
            node = left + 1
            offset += left_units
    return tree.opening(node)


def leaf_for_quantiles(tree: CommitmentTree, mus) -> np.ndarray:
    mus = np.asarray(mus, dtype=np.float64)
    if mus.size and (mus.min() <= 0.0 or mus.max() > 1.0):
        raise ValueError("mu must lie in (0, 1]")
    return np.minimum(np.searchsorted(tree.cdf, mus, side="left"), tree.leaf_count - 1)


def open_quantiles(tree: CommitmentTree, mus) -> OpeningBatch:
    """Vectorized :func:`open_quantile`; same leaves as the walk."""
    xs = leaf_for_quantiles(tree, mus)
    uniq, index = np.unique(xs, return_inverse=True)
    return OpeningBatch(tuple(tree.opening(int(x)) for x in uniq), index.astype(np.int64))


def _is_real(v) -> bool:
    return isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, (bool, np.bool_))


def _valid_label(lab) -> bool:
    return (isinstance(lab, Label) and _is_real(lab.p) and math.isfinite(lab.p) and lab.p >= 0
            and isinstance(lab.h, bytes) and len(lab.h) == HASH_BYTES)


def _path_consistent(root: Label, opening: Opening, key: bytes) -> bool:
    """Checks (b), (c) and (d): hashes, parent sums and the CDF along the path."""
    if not isinstance(opening, Opening) or not isinstance(opening.path, tuple):
        return False
    if not (_is_real(opening.q) and _is_real(opening.phi) and isinstance(opening.x, (int, np.integer))):
        return False
    q, phi, x = float(opening.q), float(opening.phi), int(opening.x)
    depth = len(opening.path)
    if not (math.isfinite(q) and math.isfinite(phi) and q >= 0 and 0 <= x < (1 << depth)):
        return False
    if not all(_valid_label(s) for s in opening.path):
        return False
    cur = Label(q, leaf_hash(key, q))
    left_mass = 0.0
    for level in range(depth, 0, -1):
        sib = opening.path[level - 1]
        bit = (x >> (depth - level)) & 1
        if bit:
            left_mass += sib.p
            left, right = sib, cur
        else:
            left, right = cur, sib
        cur = Label(left.p + right.p, node_hash(key, left, right))
    if cur.p != root.p or cur.h != root.h:
        return False
    return phi == left_mass + q


def verify_opening(root: Label, mu: float, opening: Opening, hash_key: bytes) -> bool:
    """True iff ``mu`` is in ``(phi - q, phi]`` and the path authenticates against ``root``."""
    try:
        if not _valid_label(root) or not isinstance(opening, Opening):
            return False
        if not (_is_real(mu) and 0.0 < mu <= 1.0):
            return False
        if not (_is_real(opening.q) and _is_real(opening.phi)):
            return False
        if not (opening.phi - opening.q < mu <= opening.phi):
            return False
        return _path_consistent(root, opening, hash_key)
    except (TypeError, ValueError, OverflowError, AttributeError):
        return False


class OpeningVerifier:
    """Memoizes path checks by opening content within one session."""

    def __init__(self, root: Label, key: bytes):
        self.root = root
        self.key = key
        self._seen: dict = {}

    def path_ok(self, opening) -> bool:
        try:
            hit = self._seen.get(opening)
        except TypeError:
            return False
        if hit is None:
            try:
                hit = _path_consistent(self.root, opening, self.key)
            except (TypeError, ValueError, OverflowError, AttributeError):
                hit = False
            self._seen[opening] = hit
        return hit

    def batch(self, mus: np.ndarray, batch) -> np.ndarray | None:
        """Elements of a fully valid batch in query order, or ``None``."""
        if not isinstance(batch, OpeningBatch) or not isinstance(batch.openings, tuple):
            return None
        index = np.asarray(batch.index)
        if index.shape != mus.shape or not np.issubdtype(index.dtype, np.integer):
            return None
        if index.size and (index.min() < 0 or index.max() >= len(batch.openings)):
            return None
        ops = batch.openings
        for o in ops:
            if not self.path_ok(o):
                return None
        q = np.array([float(o.q) for o in ops])
        phi = np.array([float(o.phi) for o in ops])
        x = np.array([int(o.x) for o in ops], dtype=np.int64)
        lo, hi = phi[index] - q[index], phi[index]
        if not np.all((lo < mus) & (mus <= hi)):
            return None
        return x[index]


class RevocableSample:
    """Holds the verifier's sample of ``D`` until the test step ends."""

    def __init__(self, data: np.ndarray):
        self._data = data
        self.revoked = False

    def get(self) -> np.ndarray:
        if self.revoked:
            raise RuntimeError("sample has been revoked")
        return self._data

    def revoke(self) -> np.ndarray:
        """Drop the reference and hand the buffer back (for tamper tests)."""
        data, self._data = self._data, None
        self.revoked = True
        return data


def argument_repetitions(sigma: float) -> int:
    """``ceil(ln(1/sigma))`` bumped to the next odd integer."""
    if not (0 < sigma < 1):
        raise ValueError("sigma must lie in (0, 1)")
    k = max(1, math.ceil(math.log(1.0 / sigma)))
    return k if k % 2 else k + 1


class ArgumentProtocol(Protocol):
    """Verifier side; the output is a list of :class:`TaggedSample`."""

    name = "argument"

    def __init__(self, N: int, sigma: float, epsilon: float, output_size: int = DEFAULT_OUTPUT_SIZE,
                 after_test: Callable | None = None):
        self.N = int(N)
        self.sigma = float(sigma)
        self.epsilon = float(epsilon)
        self.output_size = int(output_size)
        self.k = argument_repetitions(sigma)
        self.after_test = after_test

    @property
    def privacy(self) -> PrivacyParams:
        return compose([self.epsilon / self.k] * self.k)

    def tester(self) -> PrivateTester:
        return PrivateTester(closeness_tester(self.N, self.sigma), self.epsilon / self.k)

    @property
    def sample_size(self) -> int:
        return block_count(self.epsilon / self.k) * closeness_tester(self.N, self.sigma).sample_size

    def config(self) -> dict:
        return {"N": self.N, "sigma": self.sigma, "eps": self.epsilon, "s": self.sample_size}

    def _draw_from_oracle(self, channel, verifier: OpeningVerifier, rng, count: int, stage: str):
        mus = rng.unit_interval(count)
        batch = channel.exchange(QUERY, mus, expect=OPENING)
        xs = verifier.batch(mus, batch)
        if xs is None:
            raise MalformedMessage(f"invalid opening during {stage}")
        return xs, batch

    def verify(self, channel, samples, rng):
        if samples.domain_size != self.N:
            raise ValueError("domain size does not match the protocol")
        key = rng.token_bytes(KEY_BYTES)
        root = channel.exchange(RANDOM_STRING, key, expect=COMMITMENT_ROOT)
        if not _valid_label(root) or root.p != 1.0:
            raise MalformedMessage("root label must carry mass exactly 1")
        verifier = OpeningVerifier(root, key)
        tester = self.tester()
        m_s = tester.sample_size

        q_sample, _ = self._draw_from_oracle(channel, verifier, rng, m_s, "testing")
        if q_sample.size and q_sample.max() >= self.N:
            raise MalformedMessage("opened leaf lies in the padding")
        held = RevocableSample(samples.draw(m_s))
        pairs = np.column_stack([held.get(), q_sample])
        passed = sum(bool(tester(pairs, rng)) for _ in range(self.k)) * 2 > self.k
        dropped = held.revoke()
        del pairs
        if self.after_test is not None:
            self.after_test(dropped)
        del dropped
        channel.transcript.notes["privacy_epsilon"] = self.privacy.epsilon
        if not passed:
            return Outcome(False, None, "identity test rejected")

        xs, batch = self._draw_from_oracle(channel, verifier, rng, self.output_size, "output")
        q_of = {int(o.x): float(o.q) for o in batch.openings}
        out = [TaggedSample(int(x), q_of[int(x)]) for x in xs]
        return Outcome(True, out, "")


class CommittingProver(ProverStrategy):
    """Commits to ``Q`` (or to ``D`` when ``Q`` is None) and answers openings honestly."""

    def __init__(self, Q: Distribution | None = None, name: str | None = None):
        self.Q = Q
        self.name = name or ("honest" if Q is None else "far-commit")
        self.tree = None

    def reset(self):
        self.tree = None

    def respond(self, message, D, rng):
        if message.kind == RANDOM_STRING:
            self.tree = CommitmentTree(self.Q if self.Q is not None else D, message.payload)
            return Message(PROVER, COMMITMENT_ROOT, self.tree.root)
        return Message(PROVER, OPENING, self.answer(np.asarray(message.payload), rng))

    def answer(self, mus, rng) -> OpeningBatch:
        return open_quantiles(self.tree, mus)


def honest_prover() -> CommittingProver:
    return CommittingProver(None, "honest")


def far_commit_prover(Q: Distribution) -> CommittingProver:
    return CommittingProver(Q, "far-commit")


class EquivocatingProver(CommittingProver):
    """Commits to ``Q_a`` but answers each query from ``Q_b``'s tree with probability ``fraction``."""

    def __init__(self, Q_a: Distribution, Q_b: Distribution, fraction: float = 0.5):
        super().__init__(Q_a, "equivocate")
        self.Q_b = Q_b
        self.fraction = float(fraction)
        self.tree_b = None

    def reset(self):
        super().reset()
        self.tree_b = None

    def respond(self, message, D, rng):
        if message.kind == RANDOM_STRING:
            self.tree_b = CommitmentTree(self.Q_b, message.payload)
        return super().respond(message, D, rng)

    def answer(self, mus, rng) -> OpeningBatch:
        from_b = np.asarray(rng.bernoulli(self.fraction, size=mus.size), dtype=bool)
        xa = leaf_for_quantiles(self.tree, mus)
        xb = leaf_for_quantiles(self.tree_b, mus)
        width = self.tree.leaf_count
        codes = np.where(from_b, width + xb, xa)
        uniq, index = np.unique(codes, return_inverse=True)
        trees = (self.tree, self.tree_b)
        openings = tuple(trees[int(c) // width].opening(int(c) % width) for c in uniq)
        return OpeningBatch(openings, index.astype(np.int64))


def equivocating_adversary(tree_a, tree_b, fraction: float = 0.5) -> EquivocatingProver:
    """Accepts trees or distributions; trees are rebuilt under the session key."""
    qa = tree_a.Q if isinstance(tree_a, CommitmentTree) else tree_a
    qb = tree_b.Q if isinstance(tree_b, CommitmentTree) else tree_b
    return EquivocatingProver(qa, qb, fraction)


class WrongRootProver(CommittingProver):
    """Sends a root whose hash is not the tree's."""

    def __init__(self, Q: Distribution | None = None):
        super().__init__(Q, "wrong-root")

    def respond(self, message, D, rng):
        reply = super().respond(message, D, rng)
        if reply.kind == COMMITMENT_ROOT:
            return Message(PROVER, COMMITMENT_ROOT, Label(1.0, rng.token_bytes(HASH_BYTES)))
        return reply


def argument_adversary_pool(D: Distribution, far_Q: Distribution) -> list[ProverStrategy]:
    return [
        far_commit_prover(far_Q),
        EquivocatingProver(far_Q, D, 0.5),
        WrongRootProver(far_Q),
        ReplayProver(),
    ]


def run_argument_protocol(D: Distribution, sigma: float, epsilon: float, prover: ProverStrategy, rng: NoiseSource,
                          output_size: int = DEFAULT_OUTPUT_SIZE):
    """The tagged output list, or ``None`` on reject."""
    tr = run_protocol(ArgumentProtocol(D.domain_size, sigma, epsilon, output_size), prover, D, rng)
    return tr.output if tr.accepted else None


def far_instance(N: int, support_fraction: float = 0.25) -> Distribution:
    """Uniform over the first ``support_fraction`` of ``[N]``; TV to uniform is ``1 - support_fraction``."""
    k = max(1, int(round(N * support_fraction)))
    p = np.zeros(N)
    p[:k] = 1.0 / k
    return Distribution(p)
