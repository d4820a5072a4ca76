import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dobrushin import oracles
from dobrushin.exact import (
    ExactEngineError,
    LEMMA1_CASES,
    check_lemma1,
    check_lemma2,
    check_prop3,
    exact_mean_var,
    increment_mean_residual,
    lemma4_decay,
    marginals,
    martingale_decomposition,
    partial_variance,
    sum_distribution,
    window,
)
from dobrushin.kernel import Kernel, two_state
from dobrushin.schedule import build_bd, build_example, from_kernels, homogeneous

seeds = st.integers(0, 2 ** 32 - 1)


def small_schedule(seed, lattice=False):
    rng = np.random.default_rng(seed)
    size, n = int(rng.integers(2, 4)), int(rng.integers(2, 9))
    make = oracles.random_lattice_schedule if lattice else oracles.random_schedule
    return make(rng, size, n)


def reference_schedules(n):
    for ex in (1, 2, 3, 4):
        yield build_example(ex, n)
    yield build_bd(n)[0]


# -- marginals ------------------------------------------------------------------------

def test_marginals_constant_rows():
    nu = np.array([0.1, 0.2, 0.7])
    s = homogeneous(Kernel.constant(nu), 6, initial=[1.0, 0, 0])
    m = marginals(s)
    assert len(m) == 6 and m[1].tolist() == [1.0, 0, 0]
    for i in range(2, 7):
        assert np.allclose(m[i], nu, rtol=0, atol=1e-15)


def test_marginals_bd_after_reset():
    s, p = build_bd(1000)
    k1 = p.breakpoints[1]
    assert marginals(s)[k1 + 1].tolist() == [0.5, 0.5]


def test_marginals_example1_hand_computed():
    s = build_example(1, 10, beta=0.2)
    assert np.allclose(marginals(s)[2], [0.15, 0.175, 0.3, 0.375], rtol=0, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_marginals_recursion(seed):
    s = oracles.random_schedule(np.random.default_rng(seed), 4, 40, distinct=5)
    nu = s.marginal_array
    assert np.array_equal(nu[0], s.initial_law)
    for i in range(1, s.n):
        assert np.abs(nu[i] - nu[i - 1] @ s.kernel_at(i).rows).max() <= 1e-10
    assert np.abs(nu.sum(axis=1) - 1).max() <= 1e-10


# -- mean and variance ----------------------------------------------------------------

def test_independent_case_variance():
    nu = np.array([0.2, 0.5, 0.3])
    f = np.array([1.0, -2.0, 0.5])
    s = homogeneous(Kernel.constant(nu), 50, observable=f, initial=nu)
    var = nu @ f ** 2 - (nu @ f) ** 2
    assert exact_mean_var(s).DSn == pytest.approx(50 * var, rel=1e-12)


def test_single_step_variance():
    s = from_kernels([], observable=np.array([0.0, 3.0]), initial=[0.25, 0.75])
    mv = exact_mean_var(s)
    assert mv.DSn == pytest.approx(9 * 0.25 * 0.75, rel=1e-14)
    assert mv.per_step_var[0] == mv.DSn


def test_variance_matches_path_enumeration_3x8():
    rng = np.random.default_rng(8)
    for _ in range(10):
        s = oracles.random_schedule(rng, 3, 8)
        mean_p, var_p = oracles.path_mean_var(s)
        mv = exact_mean_var(s)
        assert mv.DSn == pytest.approx(var_p, rel=1e-10)
        assert mv.ESn == pytest.approx(mean_p, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seeds, st.booleans())
def test_streaming_matches_pairwise_covariances(seed, center):
    rng = np.random.default_rng(seed)
    s = oracles.random_schedule(rng, int(rng.integers(2, 6)), int(rng.integers(1, 40)),
                                center=center)
    ESn, DSn = oracles.naive_mean_var(s)
    mv = exact_mean_var(s)
    assert mv.ESn == pytest.approx(ESn, rel=1e-10, abs=1e-12)
    assert mv.DSn == pytest.approx(DSn, rel=1e-10, abs=1e-12)


def test_partial_variance_window():
    rng = np.random.default_rng(3)
    s = oracles.random_schedule(rng, 3, 9)
    w = window(s, 3, 7)
    assert w.n == 5 and np.allclose(w.initial_law, s.marginal_array[2])
    paths, probs = oracles.enumerate_paths(s)
    F = s.observable_table
    part = F[np.arange(2, 7)[None, :], paths[:, 2:7]].sum(axis=1)
    m = math.fsum(probs * part)
    assert partial_variance(s, 3, 7) == pytest.approx(math.fsum(probs * (part - m) ** 2),
                                                      rel=1e-10)
    with pytest.raises(ExactEngineError):
        window(s, 5, 4)


def test_streaming_is_fast_at_large_n():
    s = build_example(2, 10 ** 6)
    assert exact_mean_var(s).DSn > 0


# -- martingale decomposition ---------------------------------------------------------

def test_Z_last_is_f_last():
    s = build_example(2, 300)
    dec = martingale_decomposition(s)
    assert np.array_equal(dec.Z[-1], s.observable_table[-1])


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_Z_matches_definition(seed):
    s = small_schedule(seed)
    dec = martingale_decomposition(s)
    assert np.abs(dec.Z - oracles.definitional_Z(s)).max() <= 1e-12


def test_independent_case_decomposition():
    nu = np.array([0.3, 0.7])
    s = homogeneous(Kernel.constant(nu), 20, observable=np.array([1.0, 4.0]), initial=nu)
    dec = martingale_decomposition(s)
    var = nu @ np.array([1.0, 16.0]) - (nu @ np.array([1.0, 4.0])) ** 2
    assert np.allclose(dec.xi_var, var, rtol=1e-12)
    assert dec.Z1_var == pytest.approx(var, rel=1e-12)
    assert dec.total == pytest.approx(20 * var, rel=1e-12)


@pytest.mark.parametrize("s", list(reference_schedules(4096)), ids=lambda s: s.name)
def test_decomposition_identity_examples(s):
    dec = martingale_decomposition(s)
    assert abs(dec.total - dec.DSn) <= 1e-8 * dec.DSn
    assert increment_mean_residual(s, dec) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_decomposition_identity_random(seed):
    rng = np.random.default_rng(seed)
    s = oracles.random_schedule(rng, int(rng.integers(2, 6)), int(rng.integers(1, 80)))
    dec = martingale_decomposition(s)
    assert abs(dec.total - dec.DSn) <= 1e-8 * max(dec.DSn, 1e-300) + 1e-15
    assert increment_mean_residual(s, dec) <= 1e-12
    assert dec.conditional_variance_sum(s.marginal_array) == pytest.approx(
        1 - dec.Z1_var / dec.DSn, rel=1e-9, abs=1e-12)


def test_increment_variances_match_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(20):
        s = oracles.random_schedule(rng, 3, 7)
        dec = martingale_decomposition(s)
        xi, z1 = oracles.path_increment_variances(s)
        assert np.abs(dec.xi_var - xi).max() <= 1e-10
        assert dec.Z1_var == pytest.approx(z1, abs=1e-10)


def test_decomposition_needs_centering():
    s = homogeneous(two_state(0.3), 10, center=False)
    with pytest.raises(ExactEngineError, match="centered"):
        martingale_decomposition(s)


def test_normalized_increments_vanish_for_example2():
    sups = [martingale_decomposition(build_example(2, n)).normalized_increment_sup()
            for n in (2 ** 10, 2 ** 14, 2 ** 18)]
    assert sups[0] > sups[1] > sups[2]


# -- exact law of S_n -----------------------------------------------------------------

def test_two_fair_coins():
    s = homogeneous(two_state(0.5), 2, center=False)
    d = sum_distribution(s)
    assert d.values.tolist() == [0.0, 1.0, 2.0]
    assert d.masses.tolist() == [0.25, 0.5, 0.25]


def test_sum_distribution_moments_random():
    rng = np.random.default_rng(5)
    for _ in range(100):
        s = oracles.random_lattice_schedule(rng, int(rng.integers(2, 5)),
                                            int(rng.integers(2, 60)))
        d = sum_distribution(s)
        mv = exact_mean_var(s)
        assert abs(d.masses.sum() - 1) <= 1e-9
        assert d.mean() == pytest.approx(mv.ESn, abs=1e-8)
        assert d.var() == pytest.approx(mv.DSn, rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_sum_distribution_matches_enumeration(seed):
    s = small_schedule(seed, lattice=True)
    law_p = oracles.path_sum_law(s)
    d = sum_distribution(s)
    law = {}
    for v, m in zip(d.values, d.masses):
        if m > 0:
            key = round(float(v), 9)
            law[key] = law.get(key, 0.0) + m
    for key in set(law) | set(law_p):
        assert abs(law.get(key, 0.0) - law_p.get(key, 0.0)) <= 1e-10


def test_sum_distribution_centered_indicator_offsets():
    s, _ = build_bd(500)
    d = sum_distribution(s)
    mv = exact_mean_var(s)
    assert d.lattice_step == pytest.approx(1.0)
    assert d.mean() == pytest.approx(0.0, abs=1e-9)
    assert d.var() == pytest.approx(mv.DSn, rel=1e-8)


def test_sum_distribution_errors():
    s = homogeneous(two_state(0.3), 5, observable=np.array([0.0, 1.0]), center=False)
    irrational = s.with_observable(np.array([[0.0, 1.0]] * 4 + [[0.0, math.pi]]))
    with pytest.raises(ExactEngineError, match="lattice"):
        sum_distribution(irrational)
    with pytest.raises(ExactEngineError, match="budget"):
        sum_distribution(build_bd(5000)[0], max_lattice=10 ** 6)


def test_sum_distribution_csv(tmp_path):
    p = tmp_path / "law.csv"
    sum_distribution(homogeneous(two_state(0.5), 2, center=False)).to_csv(p)
    assert p.read_text().splitlines() == ["lattice_value,mass", "0.0,0.25", "1.0,0.5",
                                          "2.0,0.25"]


def test_bd_exact_ks_exceeds_example2():
    n = 2000
    ks = {}
    for name, s in (("bd", build_bd(n)[0]), ("ex2", build_example(2, n))):
        mv = exact_mean_var(s)
        ks[name] = sum_distribution(s).ks_to_normal(mv.ESn, math.sqrt(mv.DSn))
    assert ks["bd"] >= 2 * ks["ex2"]


# -- lemma 1, lemma 2, proposition 3 ---------------------------------------------------

def test_lemma1_diagonal_triples_trivial():
    s = build_example(2, 200)
    triples = [(l, i, i) for l, i in [(1, 2), (5, 9), (100, 150), (198, 199)]]
    r = check_lemma1(s, triples=triples)
    assert r.passed and r.details["cases"]["sup"]["count"] == 4


def test_lemma1_constant_rows_kills_oscillation():
    rng = np.random.default_rng(2)
    s = homogeneous(Kernel.constant([0.2, 0.3, 0.5]), 30,
                    observable=rng.normal(size=(30, 3)))
    F = s.observable_table
    for i, j in [(3, 4), (3, 10), (20, 30)]:
        g = s.transition(i, j).rows @ F[j - 1]
        assert np.ptp(g) == pytest.approx(0.0, abs=1e-15)
    assert check_lemma1(s, 200).passed


def test_lemma1_example2_4096():
    r = check_lemma1(build_example(2, 4096), trials=500)
    assert r.passed
    assert r.max_violation <= 1e-10
    assert set(r.to_dict()) >= {"check", "n", "max_violation", "slack", "pass"}


def test_lemma1_covers_all_cases():
    r = check_lemma1(build_example(3, 1000), trials=500, seed=4)
    assert all(r.details["cases"][c]["count"] > 0 for c in LEMMA1_CASES)
    assert r.passed


@pytest.mark.parametrize("s", list(reference_schedules(4096)), ids=lambda s: s.name)
def test_lemmas_on_reference_schedules(s):
    assert check_lemma1(s, trials=200, seed=1).passed
    assert check_lemma2(s).passed
    assert check_prop3(s).passed


def test_lemma1_detects_violations(monkeypatch):
    # With alpha misreported as 0.99 the bounds are too tight and must trip.
    import dobrushin.exact as ex

    class Fake:
        alpha_n = alpha2_n = 0.99

    monkeypatch.setattr(ex, "series_coefficients", lambda s: Fake())
    r = check_lemma1(homogeneous(two_state(0.05), 50), 200)
    assert not r.passed and "first_violation" in r.details


def test_lemma2_constant_rows():
    s = homogeneous(Kernel.constant([0.5, 0.5]), 20, observable=np.array([0.0, 2.0]))
    r = check_lemma2(s)
    assert r.passed and r.details["max_Z"] == pytest.approx(1.0)


def test_lemma2_needs_positive_alpha2():
    s = homogeneous(Kernel.identity(2), 10, observable=np.array([0.0, 1.0]))
    with pytest.raises(ExactEngineError, match="alpha"):
        check_lemma2(s)


def test_prop3_example1_trivial():
    r = check_prop3(build_example(1, 300, beta=0.2))
    assert r.passed and r.details["bound"] == 0.0


def test_prop3_iid():
    s = homogeneous(Kernel.constant([0.4, 0.6]), 40, initial=[0.4, 0.6])
    r = check_prop3(s)
    assert r.details["alpha_n"] == 1.0
    assert r.details["DSn"] == pytest.approx(4 * r.details["bound"], rel=1e-12)


def test_prop3_random_schedules():
    rng = np.random.default_rng(7)
    for _ in range(500):
        s = oracles.random_schedule(rng, 4, int(rng.integers(2, 51)))
        assert check_prop3(s).passed


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 2, 3, 4]), st.integers(70, 3000), seeds)
def test_bounds_hold_on_every_example_schedule(ex, n, seed):
    s = build_example(ex, n)
    assert check_lemma1(s, 30, seed).passed
    assert check_lemma2(s).passed
    assert check_prop3(s).passed


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 3000), st.floats(0.05, 0.5), seeds)
def test_bounds_hold_on_every_bd_schedule(n, exponent, seed):
    try:
        s = build_bd(n, exponent)[0]
    except ValueError:
        return
    assert check_lemma1(s, 30, seed).passed
    assert check_lemma2(s).passed
    assert check_prop3(s).passed


# -- lemma 4 ---------------------------------------------------------------------------

def test_lemma4_constant_rows_zero():
    rng = np.random.default_rng(0)
    s = homogeneous(Kernel.constant([0.2, 0.3, 0.5]), 30, observable=rng.normal(size=(30, 3)))
    assert lemma4_decay(s).max() == pytest.approx(0.0, abs=1e-15)


def test_lemma4_matches_enumeration():
    rng = np.random.default_rng(9)
    for _ in range(20):
        s = oracles.random_schedule(rng, 3, int(rng.integers(3, 8)))
        got = np.asarray(lemma4_decay(s))
        for l in range(2, s.n):
            ref = oracles.path_lemma4(s, l)
            live = ~np.isnan(ref)
            assert got[l - 2] == pytest.approx(np.ptp(ref[live]), abs=1e-10)


def test_lemma4_n3():
    s = oracles.random_schedule(np.random.default_rng(1), 3, 3)
    ref = oracles.path_lemma4(s, 2)
    assert np.asarray(lemma4_decay(s))[0] == pytest.approx(np.ptp(ref[~np.isnan(ref)]),
                                                           abs=1e-10)


def test_lemma4_trend_example2():
    small = lemma4_decay(build_example(2, 2 ** 12)).max()
    large = lemma4_decay(build_example(2, 2 ** 18)).max()
    assert large < small


def test_lemma4_degenerate():
    s = homogeneous(two_state(0.3), 10, observable=np.zeros(2))
    with pytest.raises(ExactEngineError):
        lemma4_decay(s)
