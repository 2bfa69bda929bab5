import io
import json

import numpy as np
import pytest

from dpproofs.distributions import Distribution
from dpproofs.mechanisms import NoiseSource
from dpproofs.protocol import (
    CLAIM,
    CSV_COLUMNS,
    DECISION,
    PROVER,
    QUERY,
    MalformedMessage,
    Message,
    Outcome,
    Protocol,
    ProverStrategy,
    ReplayProver,
    best_adversary_acceptance,
    estimate_acceptance,
    result_row,
    run_protocol,
    wilson_interval,
    write_results_csv,
)


class AlwaysAccept(Protocol):
    name = "always"

    def verify(self, channel, samples, rng):
        return Outcome(True)


class Coin(Protocol):
    """Accepts with probability ``p`` using verifier coins only."""

    def __init__(self, p=0.5):
        self.p = p

    def verify(self, channel, samples, rng):
        return Outcome(bool(rng.random() < self.p))


class EchoCheck(Protocol):
    """Asks the prover for the mean of a small sample it cannot see."""

    def verify(self, channel, samples, rng):
        x = samples.draw(5)
        reply = channel.exchange(QUERY, int(rng.integers(0, 1000)), expect=CLAIM)
        if not isinstance(reply, int):
            raise MalformedMessage("claim must be an int")
        return Outcome(reply >= 0, output=x.tolist())


class Honest(ProverStrategy):
    name = "honest"

    def respond(self, message, D, rng):
        return Message(PROVER, CLAIM, int(message.payload))


class WrongKind(ProverStrategy):
    name = "wrong-kind"

    def respond(self, message, D, rng):
        return Message(PROVER, QUERY, 3)


class Crashes(ProverStrategy):
    name = "crashes"

    def respond(self, message, D, rng):
        raise RuntimeError("boom")


class NotAMessage(ProverStrategy):
    name = "junk"

    def respond(self, message, D, rng):
        return {"kind": CLAIM}


D = Distribution.uniform(8)


def test_message_sender_checked():
    with pytest.raises(ValueError):
        Message("eve", CLAIM, 1)


def test_honest_run_accepts_and_decision_last():
    t = run_protocol(EchoCheck(), Honest(), D, NoiseSource(1))
    assert t.accepted
    assert t.messages[-1].kind == DECISION
    assert sum(m.kind == DECISION for m in t.messages) == 1
    assert len(t.output) == 5


@pytest.mark.parametrize("prover", [WrongKind(), Crashes(), NotAMessage(), ReplayProver()])
def test_malformed_replies_reject(prover):
    t = run_protocol(EchoCheck(), prover, D, NoiseSource(2))
    assert not t.accepted
    assert t.reason.startswith("malformed")
    assert t.output is None


def test_replay_determinism():
    a = run_protocol(EchoCheck(), Honest(), D, NoiseSource(77)).to_jsonl()
    b = run_protocol(EchoCheck(), Honest(), D, NoiseSource(77)).to_jsonl()
    c = run_protocol(EchoCheck(), Honest(), D, NoiseSource(78)).to_jsonl()
    assert a == b
    assert a != c


def test_jsonl_lines_parse():
    lines = run_protocol(EchoCheck(), Honest(), D, NoiseSource(3)).to_jsonl().splitlines()
    objs = [json.loads(line) for line in lines]
    assert objs[-1]["decision"] == "accept"
    assert objs[0]["sender"] == "verifier"


def test_estimate_acceptance_examples():
    assert estimate_acceptance(AlwaysAccept(), Honest(), D, 200, seed=0).rate == 1.0
    est = estimate_acceptance(Coin(0.5), Honest(), D, 10_000, seed=1)
    assert abs(est.rate - 0.5) <= 0.02
    assert est.ci_low < 0.5 < est.ci_high
    with pytest.raises(ValueError):
        estimate_acceptance(Coin(), Honest(), D, 0, seed=0)


def test_estimate_acceptance_parallel_matches_serial():
    a = estimate_acceptance(Coin(0.3), Honest(), D, 300, seed=9, jobs=1)
    b = estimate_acceptance(Coin(0.3), Honest(), D, 300, seed=9, jobs=3)
    assert a == b


def test_wilson_coverage():
    # 200 independent Bernoulli(p) estimates; the 95% interval should cover p
    p, n = 0.3, 400
    gen = np.random.default_rng(12)
    covered = 0
    for _ in range(200):
        k = int((gen.random(n) < p).sum())
        lo, hi = wilson_interval(k, n)
        covered += lo <= p <= hi
    assert covered >= 186


def test_wilson_edges():
    lo, hi = wilson_interval(0, 50)
    assert lo == 0.0 and 0 < hi < 0.1
    lo, hi = wilson_interval(50, 50)
    assert hi == 1.0 and lo > 0.9


def test_best_adversary():
    rep = best_adversary_acceptance(EchoCheck(), [Honest()], D, 100)
    assert rep.best_name == "honest" and rep.best_rate == 1.0
    rep = best_adversary_acceptance(EchoCheck(), [WrongKind(), Honest(), Crashes()], D, 100)
    assert rep.best_name == "honest"
    assert rep.rates["wrong-kind"].rate == 0.0
    with pytest.raises(ValueError):
        best_adversary_acceptance(EchoCheck(), [], D, 100)


def test_duplicate_names_kept_apart():
    rep = best_adversary_acceptance(EchoCheck(), [Honest(), Honest()], D, 100)
    assert set(rep.rates) == {"honest", "honest#1"}


def test_results_csv_columns():
    est = estimate_acceptance(Coin(0.5), Honest(), D, 100, seed=4)
    buf = io.StringIO()
    write_results_csv(buf, [result_row("coin", "honest", est, 4, N=8, sigma=0.3, s=10)])
    header, row = buf.getvalue().splitlines()
    assert header.split(",") == list(CSV_COLUMNS)
    for col in ("protocol", "N", "sigma", "eps", "delta", "s", "trials", "rate", "ci_low", "ci_high", "seed"):
        assert col in CSV_COLUMNS
    assert row.split(",")[CSV_COLUMNS.index("N")] == "8"
