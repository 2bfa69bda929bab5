"""Two-party protocol substrate.

Parties talk through an in-process :class:`Channel`. The verifier side of a
protocol is a :class:`Protocol` subclass whose :meth:`Protocol.verify` method
drives the exchange; provers are :class:`ProverStrategy` objects with full
read access to the true distribution. Every execution yields a
:class:`Transcript`, the unit over which privacy is defined.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .distributions import Distribution
from .mechanisms import NoiseSource

VERIFIER = "verifier"
PROVER = "prover"

RANDOM_STRING = "random-string"
ELEMENT_LIST = "element-list"
TAG_LIST = "tag-list"
MARGINALS = "marginals"
COMMITMENT_ROOT = "commitment-root"
OPENING = "opening"
QUERY = "query"
CLAIM = "claim"
DECISION = "decision"

PAYLOAD_KINDS = frozenset(
    {RANDOM_STRING, ELEMENT_LIST, TAG_LIST, MARGINALS, COMMITMENT_ROOT, OPENING, QUERY, CLAIM, DECISION}
)

ACCEPT = "accept"
REJECT = "reject"

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version", "protocol", "prover", "N", "sigma", "eps", "delta", "s",
    "trials", "rate", "ci_low", "ci_high", "seed",
)


class MalformedMessage(Exception):
    """A prover message broke the protocol's schema. The verifier rejects."""


@dataclass(frozen=True)
class Message:
    sender: str
    kind: str
    payload: Any = None

    def __post_init__(self):
        if self.sender not in (VERIFIER, PROVER):
            raise ValueError(f"unknown sender {self.sender!r}")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return repr(obj)
        return obj
    if isinstance(obj, (bytes, bytearray)):
        return obj.hex()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj):
        return _jsonable(dataclasses.asdict(obj))
    return obj


@dataclass
class Transcript:
    messages: list = field(default_factory=list)
    decision: str | None = None
    reason: str = ""
    output: Any = None
    notes: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.decision == ACCEPT

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({"sender": m.sender, "kind": m.kind, "payload": _jsonable(m.payload)}, sort_keys=True)
            for m in self.messages
        ]
        lines.append(json.dumps(
            {
                "kind": DECISION,
                "decision": self.decision,
                "reason": self.reason,
                "output": _jsonable(self.output),
                "notes": _jsonable(self.notes),
            },
            sort_keys=True,
        ))
        return "\n".join(lines) + "\n"


@dataclass
class Outcome:
    accepted: bool
    output: Any = None
    reason: str = ""


class ProverStrategy:
    """Base prover. Subclasses override :meth:`respond`.

    ``message`` is ``None`` when the prover speaks first (MA protocols).
    Honest strategies are deterministic unless ``randomized`` is set; the
    ``rng`` passed in is private to the prover.
    """

    name = "prover"
    randomized = False

    def respond(self, message: Message | None, D: Distribution, rng: NoiseSource) -> Message:
        raise NotImplementedError

    def reset(self):
        """Called before every execution; stateful strategies clear state here."""

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class ReplayProver(ProverStrategy):
    """Echoes the verifier's last message back, or an empty claim when asked to speak first."""

    name = "replay"

    def respond(self, message, D, rng):
        if message is None:
            return Message(PROVER, CLAIM, None)
        return Message(PROVER, message.kind, message.payload)


class SampleAccess:
    """The verifier's only handle on the unknown distribution: fresh i.i.d. draws."""

    def __init__(self, D: Distribution, rng: NoiseSource):
        self._D = D
        self._rng = rng
        self.drawn = 0

    @property
    def domain_size(self) -> int:
        return self._D.domain_size

    def draw(self, n: int) -> np.ndarray:
        self.drawn += int(n)
        return self._D.sample(self._rng, int(n))


class Channel:
    """Function-call message passing that records the transcript."""

    def __init__(self, prover: ProverStrategy, D: Distribution, prover_rng: NoiseSource, transcript: Transcript):
        self._prover = prover
        self._D = D
        self._rng = prover_rng
        self.transcript = transcript

    def _ask_prover(self, message, expect):
        try:
            reply = self._prover.respond(message, self._D, self._rng)
        except Exception as exc:  # the prover is adversarial; a crash on its side is its failure
            raise MalformedMessage(f"prover failed to answer: {exc!r}") from None
        if not isinstance(reply, Message) or reply.sender != PROVER:
            raise MalformedMessage("prover reply is not a prover message")
        self.transcript.messages.append(reply)
        if reply.kind != expect:
            raise MalformedMessage(f"expected {expect!r}, prover sent {reply.kind!r}")
        return reply.payload

    def send(self, kind: str, payload=None) -> Message:
        msg = Message(VERIFIER, kind, payload)
        self.transcript.messages.append(msg)
        return msg

    def exchange(self, kind: str, payload, expect: str):
        """Send a verifier message and return the payload of the prover's reply."""
        return self._ask_prover(self.send(kind, payload), expect)

    def receive(self, expect: str):
        """Let the prover speak first and return its payload."""
        return self._ask_prover(None, expect)


class Protocol:
    """Verifier side of a protocol. Subclasses implement :meth:`verify`."""

    name = "protocol"

    def verify(self, channel: Channel, samples: SampleAccess, rng: NoiseSource) -> Outcome:
        raise NotImplementedError

    def config(self) -> dict:
        """Parameters reported in result rows."""
        return {}


def run_protocol(protocol: Protocol, prover: ProverStrategy, D: Distribution, rng: NoiseSource) -> Transcript:
    """Execute one protocol run; malformed prover messages end in a reject."""
    transcript = Transcript()
    verifier_rng, prover_rng, sample_rng = rng.spawn(3)
    prover.reset()
    channel = Channel(prover, D, prover_rng, transcript)
    samples = SampleAccess(D, sample_rng)
    try:
        outcome = protocol.verify(channel, samples, verifier_rng)
    except MalformedMessage as exc:
        outcome = Outcome(False, None, f"malformed: {exc}")
    transcript.decision = ACCEPT if outcome.accepted else REJECT
    transcript.reason = outcome.reason
    transcript.output = outcome.output if outcome.accepted else None
    transcript.messages.append(Message(VERIFIER, DECISION, transcript.decision))
    transcript.notes.setdefault("samples_drawn", samples.drawn)
    return transcript


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the endpoints are exact at the extremes; rounding would leave 1e-17 residue
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class AcceptanceEstimate:
    rate: float
    ci_low: float
    ci_high: float
    accepted: int
    trials: int

    def __iter__(self):
        return iter((self.rate, self.ci_low, self.ci_high))

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def trial_sources(seed: int, trials: int) -> list[NoiseSource]:
    return [NoiseSource(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def _run_chunk(args):
    protocol, prover, D, seed, trials, start, stop = args
    seqs = np.random.SeedSequence(seed).spawn(trials)[start:stop]
    return [run_protocol(protocol, prover, D, NoiseSource(s)).accepted for s in seqs]


def acceptance_flags(protocol, prover, D, trials: int, seed: int, jobs: int = 1) -> list[bool]:
    """Per-trial accept flags in trial order; trial ``i`` uses child seed ``i``."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if jobs <= 1:
        return _run_chunk((protocol, prover, D, seed, trials, 0, trials))
    bounds = np.linspace(0, trials, jobs + 1).astype(int)
    tasks = [(protocol, prover, D, seed, trials, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_run_chunk, tasks))
    return [flag for part in parts for flag in part]


def estimate_acceptance(protocol, prover, D, trials: int, seed: int, jobs: int = 1) -> AcceptanceEstimate:
    """Fraction of accepting runs with a 95% Wilson interval."""
    if trials < 1:
        raise ValueError("need at least one trial")
    flags = acceptance_flags(protocol, prover, D, trials, seed, jobs)
    k = int(sum(flags))
    lo, hi = wilson_interval(k, trials)
    return AcceptanceEstimate(k / trials, lo, hi, k, trials)


@dataclass
class AdversaryReport:
    best_name: str
    best_rate: float
    rates: dict

    def __iter__(self):
        return iter((self.best_name, self.best_rate))


def best_adversary_acceptance(protocol, adversary_pool: Sequence[ProverStrategy], D, trials: int,
                              seed: int = 0, jobs: int = 1) -> AdversaryReport:
    if not adversary_pool:
        raise ValueError("adversary pool is empty")
    rates = {}
    for i, prover in enumerate(adversary_pool):
        name = prover.name
        if name in rates:
            name = f"{name}#{i}"
        rates[name] = estimate_acceptance(protocol, prover, D, trials, seed + i, jobs)
    best = max(rates, key=lambda k: rates[k].rate)
    return AdversaryReport(best, rates[best].rate, rates)


def result_row(protocol_name: str, prover_name: str, est: AcceptanceEstimate, seed: int, **params) -> dict:
    row = {c: "" for c in CSV_COLUMNS}
    row.update(
        schema_version=CSV_SCHEMA_VERSION,
        protocol=protocol_name,
        prover=prover_name,
        trials=est.trials,
        rate=f"{est.rate:.6f}",
        ci_low=f"{est.ci_low:.6f}",
        ci_high=f"{est.ci_high:.6f}",
        seed=seed,
    )
    for key in ("N", "sigma", "eps", "delta", "s"):
        if params.get(key) is not None:
            row[key] = params[key]
    return row


def write_results_csv(stream, rows: Sequence[dict]):
    writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
