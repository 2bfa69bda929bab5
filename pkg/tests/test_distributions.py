import itertools
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
    pad_to_power_of_two,
    product_from_marginals,
    sample_padded,
    sample_product_by_quantile,
    sample_product_by_quantile_many,
    tv_distance,
)
from dpproofs.mechanisms import NoiseSource


def pmfs(n_min=2, n_max=12, floor=0.0):
    @st.composite
    def build(draw, n=None):
        k = n or draw(st.integers(n_min, n_max))
        w = draw(st.lists(st.floats(floor, 1.0), min_size=k, max_size=k))
        w = np.asarray(w) + 1e-3
        return w / w.sum()

    return build


# -- construction ----------------------------------------------------------

def test_rejects_negative_and_unnormalized():
    with pytest.raises(ValueError):
        Distribution([0.5, -0.1, 0.6])
    with pytest.raises(ValueError):
        Distribution([0.5, 0.4])
    with pytest.raises(ValueError):
        Distribution([])


def test_renormalizes_tiny_drift():
    d = Distribution([0.5 + 5e-7, 0.5])
    assert abs(d.pmf.sum() - 1.0) <= 1e-12


def test_pmf_is_read_only():
    d = Distribution.uniform(4)
    with pytest.raises(ValueError):
        d.pmf[0] = 1.0


def test_json_round_trip():
    d = Distribution([0.1, 0.2, 0.7])
    assert Distribution.from_json(d.to_json()) == d
    dom = ProductDomain([2, 3, 4])
    assert ProductDomain.from_json(dom.to_json()) == dom


# -- tv / kl ---------------------------------------------------------------

def test_tv_examples():
    p = Distribution([0.5, 0.5])
    assert tv_distance(p, p) == 0.0
    assert tv_distance(Distribution.point_mass(3, 1), Distribution.point_mass(3, 2)) == 1.0
    assert tv_distance(p, Distribution([0.75, 0.25])) == pytest.approx(0.25, abs=1e-15)


def test_tv_domain_mismatch():
    with pytest.raises(ValueError):
        tv_distance(Distribution.uniform(2), Distribution.uniform(3))
    with pytest.raises(ValueError):
        kl_divergence(Distribution.uniform(2), Distribution.uniform(3))


def test_kl_examples():
    p = Distribution([0.5, 0.5])
    assert kl_divergence(p, p) == 0.0
    closed = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
    assert kl_divergence(p, Distribution([0.25, 0.75])) == pytest.approx(closed, rel=1e-12)
    assert kl_divergence(Distribution.point_mass(2, 0), p) == pytest.approx(math.log(2), rel=1e-12)
    assert kl_divergence(p, Distribution.point_mass(2, 0)) == math.inf


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_tv_is_a_metric(data):
    n = data.draw(st.integers(2, 10))
    p, q, r = (Distribution(data.draw(pmfs()(n))) for _ in range(3))
    assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-15)
    assert tv_distance(p, r) <= tv_distance(p, q) + tv_distance(q, r) + 1e-12
    assert tv_distance(p, p) == 0.0
    assert 0.0 <= tv_distance(p, q) <= 1.0
    if not np.array_equal(p.pmf, q.pmf):
        assert tv_distance(p, q) > 0


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_pinsker(data):
    n = data.draw(st.integers(2, 10))
    p = Distribution(data.draw(pmfs()(n)))
    q = Distribution(data.draw(pmfs(floor=0.05)(n)))
    assert tv_distance(p, q) <= math.sqrt(kl_divergence(p, q) / 2) + 1e-12


# -- product structure -----------------------------------------------------

def test_lex_order_round_trip():
    dom = ProductDomain([2, 3, 4])
    tuples = list(itertools.product(range(2), range(3), range(4)))
    assert [dom.flatten(t) for t in tuples] == list(range(dom.size))
    assert [dom.unflatten(i) for i in range(dom.size)] == tuples
    assert np.array_equal(dom.unflatten_many(np.arange(dom.size)), np.array(tuples))
    with pytest.raises(ValueError):
        dom.flatten((2, 0, 0))
    with pytest.raises(ValueError):
        dom.unflatten(24)


def test_product_examples():
    dom = ProductDomain.boolean(2)
    m = Marginals([[0.3, 0.7], [0.5, 0.5]], dom)
    # tuple order is (0,0), (0,1), (1,0), (1,1)
    expected = [0.3 * 0.5, 0.3 * 0.5, 0.7 * 0.5, 0.7 * 0.5]
    assert np.allclose(product_from_marginals(m, dom).pmf, expected, atol=1e-15)

    uni = Marginals([[0.5, 0.5]] * 3, ProductDomain.boolean(3))
    assert product_from_marginals(uni, uni.domain) == Distribution.uniform(8)

    one = ProductDomain([3])
    single = Marginals([[0.2, 0.3, 0.5]], one)
    assert np.allclose(product_from_marginals(single, one).pmf, [0.2, 0.3, 0.5])


def test_product_of_bern_03_bern_05_matches_listed_pmf():
    dom = ProductDomain.boolean(2)
    m = Marginals([[0.7, 0.3], [0.5, 0.5]], dom)
    assert np.allclose(product_from_marginals(m, dom).pmf, [0.35, 0.35, 0.15, 0.15], atol=1e-15)


def test_marginal_errors():
    dom = ProductDomain.boolean(2)
    with pytest.raises(ValueError):
        Marginals([[0.5, 0.5]], dom)
    with pytest.raises(ValueError):
        Marginals([[0.5, 0.4], [0.5, 0.5]], dom)
    with pytest.raises(ValueError):
        Marginals.from_flat([0.5, 0.5, 1.0], dom)
    with pytest.raises(ValueError):
        marginals_of(Distribution.uniform(3), dom)


def test_marginals_of_examples():
    dom = ProductDomain.boolean(2)
    m = marginals_of(Distribution([0.5, 0, 0, 0.5]), dom)
    assert np.allclose(m.flat(), [0.5, 0.5, 0.5, 0.5])
    u = marginals_of(Distribution.uniform(12), ProductDomain([3, 4]))
    assert np.allclose(u.blocks[0], 1 / 3) and np.allclose(u.blocks[1], 1 / 4)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_marginals_round_trip(data):
    sizes = data.draw(st.lists(st.integers(1, 4), min_size=1, max_size=4))
    dom = ProductDomain(sizes)
    m = Marginals([data.draw(pmfs()(n)) if n > 1 else [1.0] for n in sizes], dom)
    assert marginals_of(product_from_marginals(m, dom), dom) == m


def _brute_quantile(pmf, u):
    acc = 0.0
    for i, p in enumerate(pmf):
        acc += p
        if u <= acc + 1e-15:
            return i
    return len(pmf) - 1


def test_quantile_examples():
    dom = ProductDomain.boolean(2)
    m = Marginals([[0.5, 0.5], [0.5, 0.5]], dom)
    assert sample_product_by_quantile(m, dom, 0.1) == (0, 0)
    assert sample_product_by_quantile(m, dom, 1.0) == (1, 1)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            sample_product_by_quantile(m, dom, bad)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_quantile_matches_flat_inverse_cdf(data):
    sizes = data.draw(st.lists(st.integers(2, 4), min_size=1, max_size=3))
    dom = ProductDomain(sizes)
    m = Marginals([data.draw(pmfs()(n)) for n in sizes], dom)
    pmf = product_from_marginals(m, dom).pmf
    u = data.draw(st.floats(1e-6, 1.0))
    got = dom.flatten(sample_product_by_quantile(m, dom, u))
    cdf = np.cumsum(pmf)
    # avoid atom boundaries where rounding may legitimately pick either side
    if np.min(np.abs(cdf - u)) > 1e-9:
        assert got == _brute_quantile(pmf, u)
    assert sample_product_by_quantile_many(m, dom, [u])[0] == got


def test_quantile_constant_within_atom():
    dom = ProductDomain([3, 2])
    m = Marginals([[0.2, 0.3, 0.5], [0.4, 0.6]], dom)
    pmf = product_from_marginals(m, dom).pmf
    cdf = np.concatenate([[0.0], np.cumsum(pmf)])
    for i in range(dom.size):
        us = np.linspace(cdf[i], cdf[i + 1], 7)[1:-1]
        assert {dom.flatten(sample_product_by_quantile(m, dom, u)) for u in us} == {i}


def test_quantile_sampling_frequencies(rng):
    dom = ProductDomain([3, 2, 2])
    m = Marginals([[0.2, 0.3, 0.5], [0.9, 0.1], [0.4, 0.6]], dom)
    pmf = product_from_marginals(m, dom).pmf
    n = 100_000
    idx = sample_product_by_quantile_many(m, dom, rng.unit_interval(n))
    freq = np.bincount(idx, minlength=dom.size) / n
    se = np.sqrt(pmf * (1 - pmf) / n)
    assert np.all(np.abs(freq - pmf) <= 4 * se)


# -- padding ---------------------------------------------------------------

def test_pad_examples():
    d = Distribution.uniform(4)
    assert pad_to_power_of_two(d) is d
    p = pad_to_power_of_two(Distribution.uniform(3))
    mix = 0.75 * np.array([1 / 3, 1 / 3, 1 / 3, 0]) + 0.25 * np.array([0, 0, 0, 1])
    assert np.allclose(p.pmf, mix, atol=1e-15)
    assert np.allclose(p.pmf, 0.25)


def test_pad_tv_identity_point_mass():
    d = Distribution.point_mass(3, 0)
    lhs = 0.75 * tv_distance(d, Distribution.uniform(3))
    rhs = tv_distance(pad_to_power_of_two(d), Distribution.uniform(4))
    assert lhs == pytest.approx(0.5, abs=1e-12)
    assert rhs == pytest.approx(lhs, abs=1e-9)


@settings(max_examples=150, deadline=None)
@given(pmfs(1, 40)())
def test_pad_tv_identity(pmf):
    d = Distribution(pmf)
    n = d.domain_size
    full = 1 << (n - 1).bit_length()
    lhs = n / full * tv_distance(d, Distribution.uniform(n))
    rhs = tv_distance(pad_to_power_of_two(d), Distribution.uniform(full))
    assert abs(lhs - rhs) <= 1e-9


def test_padded_sampler_matches_padded_pmf():
    rng = NoiseSource(5)
    d = Distribution([0.6, 0.1, 0.1, 0.1, 0.1])
    target = pad_to_power_of_two(d).pmf
    n = 100_000
    freq = np.bincount(sample_padded(d, rng, n), minlength=8) / n
    assert np.all(np.abs(freq - target) <= 4 * np.sqrt(target * (1 - target) / n) + 1e-12)


def test_sampling_matches_pmf():
    rng = NoiseSource(11)
    d = Distribution([0.0, 0.25, 0.05, 0.7])
    x = d.sample(rng, 100_000)
    assert not np.any(x == 0)
    freq = np.bincount(x, minlength=4) / x.size
    assert np.all(np.abs(freq - d.pmf) <= 4 * np.sqrt(d.pmf * (1 - d.pmf) / x.size) + 1e-12)


def test_kl_of_identical_is_zero():
    u = Distribution(np.full(9, 1 / 9))
    assert kl_divergence(u, u) == 0.0
