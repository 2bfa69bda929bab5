import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dpproofs.distributions import Distribution
from dpproofs.mechanisms import NoiseSource
from dpproofs.protocol import CLAIM, PROVER, Message, ProverStrategy, estimate_acceptance, run_protocol
from dpproofs.replicable import (
    MAX_SEED_SPACE,
    AMProver,
    DecisionAlg,
    MessageAlg,
    PrivateCoinProtocol,
    PrivateCoinProtocolSpec,
    PrivateCoinProver,
    ToyFixture,
    am_adversary_pool,
    conditional_accept_fraction,
    convert_to_am,
    derandomized_decision,
    markov_doubling_terms,
    measure_replicability,
    private_coin_pool,
    toy_private_protocol,
)

FX = ToyFixture(64, 0.2)


def test_seed_space_bounds():
    MessageAlg(lambda S, r: 0, 1)
    MessageAlg(lambda S, r: 0, MAX_SEED_SPACE)
    for bad in (0, MAX_SEED_SPACE + 1):
        with pytest.raises(ValueError):
            MessageAlg(lambda S, r: 0, bad)


def test_replicability_extremes():
    D = Distribution.uniform(1000)
    rng = NoiseSource(1)
    const = measure_replicability(MessageAlg(lambda S, r: r % 3, 16), D, 20, 1000, rng)
    assert const.rho == 0.0 and const.ci_low == 0.0
    verbatim = measure_replicability(MessageAlg(lambda S, r: tuple(S.tolist()), 16), D, 20, 1000, rng)
    assert verbatim.rho == 1.0
    with pytest.raises(ValueError):
        measure_replicability(MessageAlg(lambda S, r: 0, 4), D, 5, 999, rng)


def test_toy_message_is_replicable():
    A, f, A_prime, fx = toy_private_protocol()
    est = measure_replicability(A, fx.close_instance(), fx.n, 2000, NoiseSource(2))
    assert est.rho <= 0.05
    assert est.ci_low <= est.rho <= est.ci_high


def test_derandomized_example():
    # seeds 0..2 produce message 0, seed 3 produces message 1
    A = MessageAlg(lambda S, r: int(r == 3), 4)
    votes = [1, 1, 0, 1]
    A_prime = DecisionAlg(lambda T, S, r, rp: votes[r])
    T = (0, None)
    assert conditional_accept_fraction(T, None, 0, A, A_prime) == pytest.approx(2 / 3)
    assert derandomized_decision(T, None, 0, A, A_prime) == 1
    assert derandomized_decision((7, None), None, 0, A, A_prime) == 0
    assert conditional_accept_fraction((7, None), None, 0, A, A_prime) is None


def test_derandomized_constant_decisions():
    A = MessageAlg(lambda S, r: r % 2, 8)
    yes = DecisionAlg(lambda *a: 1)
    no = DecisionAlg(lambda *a: 0)
    assert derandomized_decision((1, "x"), None, 0, A, yes) == 1
    assert derandomized_decision((1, "x"), None, 0, A, no) == 0
    assert derandomized_decision((2, "x"), None, 0, A, yes) == 0


def test_tie_goes_to_accept():
    A = MessageAlg(lambda S, r: 0, 4)
    half = DecisionAlg(lambda T, S, r, rp: r < 2)
    assert derandomized_decision((0, None), None, 0, A, half) == 1


def test_convert_rejects_multi_round():
    spec = FX.spec()
    bad = PrivateCoinProtocolSpec(spec.A, spec.f, spec.A_prime, spec.n, rounds=2)
    with pytest.raises(ValueError):
        convert_to_am(bad)


def test_sample_independent_message_is_decision_equivalent():
    """With A ignoring S the seed majority only smooths A' over r."""
    A = MessageAlg(lambda S, r: 0, 16)
    A_prime = DecisionAlg(lambda T, S, r, rp: float(np.mean(S == 0)) <= T[1])
    gen = NoiseSource(3)
    D = FX.close_instance()
    for _ in range(200):
        S = D.sample(gen, 100)
        T = (0, 0.12)
        assert derandomized_decision(T, S, 0, A, A_prime) == A_prime(T, S, 0, 0)


def test_communication_bits():
    proto = convert_to_am(FX.spec())
    t = run_protocol(proto, AMProver(FX.spec()), FX.close_instance(), NoiseSource(4))
    assert t.notes["communication_bits"] == 4 + 128
    assert t.messages[0].kind == "random-string"
    assert 0 <= t.messages[0].payload < 16


def test_toy_rates_quick():
    private = PrivateCoinProtocol(FX.spec())
    am = convert_to_am(FX.spec())
    hon = private_coin_pool(FX)[0]
    assert estimate_acceptance(private, hon, FX.close_instance(), 300, seed=1).rate >= 0.97
    assert estimate_acceptance(private, hon, FX.far_instance(), 300, seed=2).rate <= 0.03
    assert estimate_acceptance(am, AMProver(FX.spec()), FX.close_instance(), 300, seed=3).rate >= 0.93
    for p in am_adversary_pool(FX):
        assert estimate_acceptance(am, p, FX.far_instance(), 200, seed=4).rate <= 0.05, p.name


def test_markov_doubling_exhaustive():
    gen = NoiseSource(5)
    D = FX.close_instance()
    lhs = rhs = 0.0
    runs = 400
    for _ in range(runs):
        S = D.sample(gen, FX.n)
        terms = markov_doubling_terms(FX, S)
        assert terms is not None
        rejected, p_reject = terms
        # pointwise: the majority rejects only if more than half the seeds reject
        assert rejected <= 2 * p_reject + 1e-12
        lhs += rejected
        rhs += p_reject
    assert lhs / runs <= 2 * rhs / runs + 1e-12


def test_fixture_decide_rejects_bad_claims():
    S = np.zeros(FX.n, dtype=int)
    S[: int(0.1 * FX.n)] = 0
    S[int(0.1 * FX.n):] = 1
    m = FX.message(S, 0)
    assert FX.decide((m, 0.1), S, 0, 0) == 1
    for claim in (float("nan"), -0.1, 1.5, "0.1", True, None, FX.theta + 0.01):
        assert FX.decide((m, claim), S, 0, 0) == 0
    assert FX.decide((m + 3, 0.1), S, 0, 0) == 0


class FixedPayload(ProverStrategy):
    def __init__(self, payload):
        self.payload = payload
        self.name = "fixed"

    def respond(self, message, D, rng):
        return Message(PROVER, CLAIM, self.payload)


class Recording:
    """Wraps A and remembers the value checked against the prover's message."""

    def __init__(self, fx):
        self.fx = fx
        self.calls = []

    def __call__(self, S, r):
        v = self.fx.message(S, r)
        self.calls.append(v)
        return v


payloads = st.one_of(
    st.tuples(st.integers(-3, 5), st.floats(allow_nan=True, allow_infinity=True)),
    st.tuples(st.integers(-3, 5), st.floats(0, 0.2)),
    st.lists(st.integers(-2, 3), max_size=3),
    st.none(),
    st.text(max_size=3),
    st.tuples(st.booleans(), st.floats(0, 0.2)),
)


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(payloads, st.integers(0, 2**32 - 1))
def test_reject_on_mismatch_fuzz(payload, seed):
    rec = Recording(FX)
    base = FX.spec()
    spec = PrivateCoinProtocolSpec(MessageAlg(rec, FX.seeds), base.f, base.A_prime, base.n, message_bits=128)
    t = run_protocol(convert_to_am(spec), FixedPayload(payload), FX.close_instance(), NoiseSource(seed))
    if t.accepted:
        assert rec.calls and payload[0] == rec.calls[0]
    elif rec.calls and isinstance(payload, tuple) and payload[0] != rec.calls[0]:
        assert "does not match" in t.reason
