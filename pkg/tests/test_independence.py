import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpproofs.distributions import (
    Distribution,
    Marginals,
    ProductDomain,
    kl_divergence,
    marginals_of,
    product_from_marginals,
    tv_distance,
)
from dpproofs.independence import (
    FixedMarginalProver,
    HonestMarginalProver,
    IndependenceInstance,
    IndependenceProtocol,
    UniformityViaIndependence,
    binary_encode,
    boolean_product_grid,
    closest_product_distance,
    correlated_bits,
    honest_marginal_prover,
    independence_adversary_pool,
    independence_sample_size,
    marginal_radius,
    marginal_range_check,
    parse_marginals,
    random_product,
    uniform_far_radius,
    uniformity_adversary_pool,
    verify_independence,
    verify_uniformity_via_independence,
)
from dpproofs.mechanisms import NoiseSource
from dpproofs.protocol import MalformedMessage, best_adversary_acceptance, estimate_acceptance, run_protocol

DOM3 = ProductDomain.boolean(3)


def test_honest_marginals_examples():
    dom2 = ProductDomain.boolean(2)
    m = honest_marginal_prover(Distribution([0.5, 0, 0, 0.5]), dom2)
    assert np.allclose(m.flat(), [0.5, 0.5, 0.5, 0.5])
    one = ProductDomain([5])
    D = Distribution([0.1, 0.2, 0.3, 0.2, 0.2])
    assert np.allclose(honest_marginal_prover(D, one).flat(), D.pmf)
    P = random_product(DOM3, NoiseSource(1))
    assert np.allclose(product_from_marginals(honest_marginal_prover(P, DOM3), DOM3).pmf, P.pmf, atol=1e-12)


@pytest.mark.parametrize("payload", [
    [0.5, 0.5, 0.5, 0.5, 0.5],
    [0.5, 0.5, 0.5, 0.5, 0.5, 0.6],
    [0.5, 0.5, 0.5, 0.5, float("nan"), 0.5],
    [1.5, -0.5, 0.5, 0.5, 0.5, 0.5],
    "marginals",
    None,
    [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
    {"a": 1},
])
def test_malformed_marginals(payload):
    with pytest.raises(MalformedMessage):
        parse_marginals(payload, DOM3)
    assert not verify_independence(payload, np.zeros(10, dtype=int), 0.5, 1.0, DOM3, NoiseSource(0))


def test_instance_validation():
    inst = IndependenceInstance.from_json_obj({"attribute_sizes": [2, 2], "pmf": [0.25] * 4, "sigma": 0.3})
    assert inst.dom.size == 4
    with pytest.raises(ValueError):
        IndependenceInstance(DOM3, Distribution.uniform(8), 1.0)
    with pytest.raises(ValueError):
        IndependenceInstance(DOM3, Distribution.uniform(4), 0.3)


def test_communication_is_sum_of_attribute_sizes():
    dom = ProductDomain([2, 3, 4])
    proto = IndependenceProtocol(dom, 0.6, 6.0)
    D = random_product(dom, NoiseSource(2))
    t = run_protocol(proto, HonestMarginalProver(dom), D, NoiseSource(3))
    assert t.notes["communication"] == 9
    assert len(t.messages[0].payload) == 9


def test_small_protocol_completeness_and_soundness():
    sigma, eps = 0.5, 1.0
    proto = IndependenceProtocol(DOM3, sigma, eps)
    P = random_product(DOM3, NoiseSource(4))
    honest = estimate_acceptance(proto, HonestMarginalProver(DOM3), P, 300, seed=1)
    assert honest.rate >= 0.75
    rep = best_adversary_acceptance(proto, independence_adversary_pool(DOM3), correlated_bits(3), 300, seed=2)
    assert rep.best_rate <= 0.25


def test_sample_size_uses_wrapper_inflation():
    s1 = independence_sample_size(DOM3, 0.5, 6.0)
    assert independence_sample_size(DOM3, 0.5, 1.0) == 6 * s1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(0.05, 0.95)), min_size=1, max_size=5))
def test_kl_factorizes_over_product(pairs):
    d = len(pairs)
    dom = ProductDomain.boolean(d)
    Q = product_from_marginals(Marginals([[1 - a, a] for a, _ in pairs], dom), dom)
    R = product_from_marginals(Marginals([[1 - b, b] for _, b in pairs], dom), dom)
    parts = sum(kl_divergence(Distribution([1 - a, a]), Distribution([1 - b, b])) for a, b in pairs)
    assert kl_divergence(Q, R) == pytest.approx(parts, rel=1e-9, abs=1e-12)


def test_product_grid_rows_are_products():
    params, pmfs = boolean_product_grid(2, step=0.25)
    assert params.shape == (25, 2)
    i = 7  # p1 = 0.25, p2 = 0.5
    a, b = params[i]
    assert np.allclose(pmfs[i], [(1 - a) * (1 - b), (1 - a) * b, a * (1 - b), a * b])


def test_soundness_lever_on_correlated_bits():
    """No marginal message brings the induced product closer than the grid minimum."""
    D = correlated_bits(2)
    grid_min, _ = closest_product_distance(D, 2)
    # both bits with P(1) = 1 - 1/sqrt(2) match one atom exactly; tv = sqrt(2) - 1
    assert math.sqrt(2) - 1 <= grid_min <= math.sqrt(2) - 1 + 0.01
    gen = np.random.default_rng(3)
    dom = ProductDomain.boolean(2)
    for _ in range(500):
        a, b = gen.random(2)
        M = Marginals([[1 - a, a], [1 - b, b]], dom)
        assert tv_distance(D, product_from_marginals(M, dom)) >= grid_min - 0.01


def test_closest_product_gap_small_sample():
    gen = np.random.default_rng(5)
    bound = 1 + 3 * math.sqrt(3) / 2
    for _ in range(5):
        D = Distribution(gen.dirichlet(np.full(8, 5.0)))
        same = product_from_marginals(marginals_of(D, DOM3), DOM3)
        grid_min, _ = closest_product_distance(D, 3)
        assert tv_distance(D, same) <= bound * grid_min + 0.02


# -- uniformity reduction ----------------------------------------------------

def test_binary_encoding_is_big_endian():
    assert binary_encode([0, 1, 5, 7], 3).tolist() == [[0, 0, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1]]


def test_marginal_radius_and_far_radius():
    assert marginal_radius(8, 400) == pytest.approx(2 * math.sqrt(math.log(8)) / 20)
    assert marginal_radius(1, 100) == marginal_radius(2, 100)
    n, s = 256, 1000
    ln = math.log(n)
    expect = 0.1 * (1 + 1.5 * math.sqrt(ln)) + 4 * ln * math.sqrt(math.log(ln)) / math.sqrt(s)
    assert uniform_far_radius(0.1, n, s) == pytest.approx(expect)
    assert uniform_far_radius(0.1, 2, s) == pytest.approx(0.1 * (1 + 1.5 * math.sqrt(math.log(2))))


def test_marginal_check_passes_on_uniform():
    d, s = 8, 2000
    gen = NoiseSource(6)
    runs = 1000
    ok = [marginal_range_check(binary_encode(gen.integers(0, 1 << d, size=s), d)) for _ in range(runs)]
    assert np.mean(ok) >= 0.85


def test_marginal_check_catches_biased_bit():
    d, s = 8, 2000
    gen = np.random.default_rng(7)
    runs = 1000
    fails = 0
    for _ in range(runs):
        bits = gen.integers(0, 2, size=(s, d))
        bits[:, 3] = gen.random(s) < 0.9
        fails += not marginal_range_check(bits)
    assert fails / runs >= 1 - 1 / d**2


def test_reduction_on_uniform_and_point_mass():
    n, sigma, eps = 8, 0.5, 1.0
    proto = UniformityViaIndependence(n, sigma, eps)
    assert proto.config()["N"] == n
    hon = estimate_acceptance(proto, uniformity_adversary_pool(n)[0], Distribution.uniform(n), 200, seed=3)
    assert hon.rate >= 0.75
    rep = best_adversary_acceptance(proto, uniformity_adversary_pool(n), Distribution.point_mass(n, 0), 200, seed=4)
    assert rep.best_rate == 0.0


def test_reduction_pads_non_power_of_two():
    n = 6
    proto = UniformityViaIndependence(n, 0.5, 6.0)
    t = run_protocol(proto, uniformity_adversary_pool(n)[0], Distribution.uniform(n), NoiseSource(8))
    assert t.notes["communication"] == 6  # three Boolean attributes
    runs = [verify_uniformity_via_independence(Distribution.point_mass(n, 2), 0.5, 6.0,
                                               HonestMarginalProver(ProductDomain.boolean(3)), r)
            for r in NoiseSource(9).spawn(50)]
    assert not any(runs)
    with pytest.raises(ValueError):
        UniformityViaIndependence(1, 0.5, 1.0)


def test_fixed_prover_ignores_distribution():
    M = Marginals([[0.5, 0.5]] * 3, DOM3)
    p = FixedMarginalProver(M)
    a = p.respond(None, correlated_bits(3), NoiseSource(0)).payload
    b = p.respond(None, Distribution.uniform(8), NoiseSource(0)).payload
    assert np.array_equal(a, b)
