import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from needlestream.streams import (CHUNK, LocalNeedleModel, MostlyEqModel, NeedleModel, NeedleParams, UniformModel,
                                  exact_pmf, gen_coin, gen_local_needle, gen_mostlyeq, gen_needle,
                                  gen_strict_turnstile_counter, gen_t_coins, gen_uniform, is_good, order_of,
                                  read_binary, read_text, went_negative, write_binary, write_text)


# --- parameters -----------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(t=0, n=1), dict(t=2, n=-1), dict(t=2, n=1, p=1.5), dict(t=2.5, n=1)])
def test_params_reject_bad_values(kw):
    with pytest.raises(ValueError):
        NeedleParams(**kw)


def test_sample_regime():
    NeedleParams(1000, 10).check_sample_regime()
    with pytest.raises(ValueError):
        NeedleParams(1000, 11).check_sample_regime()


# --- uniform ---------------------------------------------------------------------


def test_single_symbol_domain():
    assert gen_uniform(NeedleParams(1, 3), seed=9).to_array().tolist() == [1, 1, 1]


def test_empty_stream():
    s = gen_uniform(NeedleParams(100, 0), seed=1)
    assert len(s) == 0 and s.to_array().size == 0 and list(s) == []


def test_uniform_chi_square():
    x = gen_uniform(NeedleParams(10, 10 ** 5), seed=2).to_array()
    counts = np.bincount(x, minlength=11)[1:]
    assert chisquare(counts).pvalue > 1e-4


def test_replay_is_bit_identical_across_chunks():
    params = NeedleParams(10 ** 9, 3 * CHUNK + 17, 0.01)
    a = gen_needle(params, seed=5)
    b = gen_needle(params, seed=5)
    assert a.alpha == b.alpha
    assert np.array_equal(a.to_array(), b.to_array())
    assert np.array_equal(a.to_array(), np.fromiter(iter(b), dtype=np.int64))
    cur = b.cursor()
    pieces = [cur.take(1000), cur.take(CHUNK), cur.take(10 ** 7)]
    assert np.array_equal(np.concatenate(pieces), a.to_array())
    assert cur.remaining == 0


# --- needle ----------------------------------------------------------------------


def test_needle_p_one_is_constant():
    s = gen_needle(NeedleParams(10 ** 6, 50, 1.0), seed=3)
    assert (s.to_array() == s.alpha).all()
    assert s.label.truth == 1


def test_needle_p_zero_matches_uniform_exactly():
    u = exact_pmf(UniformModel(NeedleParams(2, 2)))
    d = exact_pmf(NeedleModel(NeedleParams(2, 2, 0.0)))
    assert set(u) == set(d)
    for k in u:
        assert d[k] == pytest.approx(u[k], abs=1e-15)
    assert u[(1, 2)] == pytest.approx(0.25)


def test_needle_mean_occurrences():
    t, n, p, trials = 1000, 1000, 0.1, 10 ** 4
    params = NeedleParams(t, n, p)
    counts = np.array([(gen_needle(params, seed=s).to_array() == gen_needle(params, seed=s).alpha).sum()
                       for s in range(trials)])
    q = p + (1 - p) / t
    sigma = math.sqrt(n * q * (1 - q) / trials)
    assert abs(counts.mean() - n * q) <= 3 * sigma


# --- local needle and the mixture identity ------------------------------------------


def test_local_needle_empty_set_is_uniform():
    u = exact_pmf(UniformModel(NeedleParams(2, 2)))
    d = exact_pmf(LocalNeedleModel(NeedleParams(2, 2, 0.3), []))
    for k in u:
        assert d[k] == pytest.approx(u[k], abs=1e-15)


def test_local_needle_full_set_hits_half_the_time():
    n = 4000
    s = gen_local_needle(NeedleParams(10 ** 9, n, 0.0), range(1, n + 1), seed=4)
    frac = (s.to_array() == s.alpha).mean()
    assert abs(frac - 0.5) < 4 * math.sqrt(0.25 / n)


def test_local_needle_rejects_out_of_range():
    with pytest.raises(ValueError):
        gen_local_needle(NeedleParams(10, 3), [0], seed=0)
    with pytest.raises(ValueError):
        gen_local_needle(NeedleParams(10, 3), [4], seed=0)


def test_mixture_identity_exact():
    t, n, p = 2, 2, 0.25
    params = NeedleParams(t, n, p)
    d1 = exact_pmf(NeedleModel(params), with_latent=True)
    mix: dict = {}
    for bits in product([0, 1], repeat=n):
        S = [j + 1 for j in range(n) if bits[j]]
        a_S = (2 * p) ** len(S) * (1 - 2 * p) ** (n - len(S))
        for k, v in exact_pmf(LocalNeedleModel(params, S), with_latent=True).items():
            mix[k] = mix.get(k, 0.0) + a_S * v
    assert set(mix) == set(d1)
    assert max(abs(mix[k] - d1[k]) for k in d1) <= 1e-12


# --- coins and turnstile ------------------------------------------------------------


def test_coin_clt():
    sums = np.array([gen_coin(10 ** 4, seed=s).to_array().sum() for s in range(10 ** 4)])
    n = 10 ** 4
    assert abs(sums.mean()) <= 3 * math.sqrt(n / 10 ** 4)
    assert abs(sums.var() / n - 1) <= 0.1


def test_coin_empty_and_replay():
    assert gen_coin(0, seed=1).to_array().size == 0
    assert np.array_equal(gen_coin(100, seed=1).to_array(), gen_coin(100, seed=1).to_array())


def test_turnstile_huge_prefix_never_negative():
    s = gen_strict_turnstile_counter(100, 20.0, seed=0)
    assert s.model.prefix > 100
    assert not went_negative(s)


def test_turnstile_negative_when_first_update_drops():
    seed = next(s for s in range(100) if gen_strict_turnstile_counter(10, 0.0, seed=s).to_array()[0] == -1)
    assert went_negative(gen_strict_turnstile_counter(10, 0.0, seed=seed))


def test_turnstile_negativity_rare_with_large_prefix():
    neg = sum(went_negative(gen_strict_turnstile_counter(10 ** 4, 10.0, seed=s)) for s in range(1000))
    assert neg / 1000 <= 0.02


# --- t coins and good orders --------------------------------------------------------


@pytest.mark.parametrize("n,t,k", [(4, 3, 1), (9, 5, 2), (16, 2, 2)])
def test_round_robin_is_good(n, t, k):
    s = gen_t_coins(n, t, k, "round_robin", seed=0)
    assert is_good(order_of(s), n, t, k)


def test_single_instance_order_is_not_good():
    assert not is_good(np.ones(4 * 3, dtype=int), 4, 3, 2)


def test_random_order_mostly_good():
    n, t, k = 2 ** 14, 8, 2
    good = sum(is_good(order_of(gen_t_coins(n, t, k, "random", seed=s)), n, t, k) for s in range(100))
    assert good >= 95


def test_t_coins_encoding():
    s = gen_t_coins(5, 3, 1, "round_robin", seed=1)
    x = s.to_array()
    assert set(np.abs(x).tolist()) == {1, 2, 3}
    assert order_of(s).tolist() == [1, 2, 3] * 5


# --- MostlyEq -----------------------------------------------------------------------


@pytest.mark.parametrize("which", ["P_U", "P_Eq"])
def test_mostlyeq_single_symbol(which):
    assert gen_mostlyeq(5, 1, which, seed=0).to_array().tolist() == [1] * 5


def test_mostlyeq_eq_fraction():
    m, t = 10 ** 4, 10 ** 6
    fr = []
    for s in range(30):
        st_ = gen_mostlyeq(m, t, "P_Eq", seed=s)
        fr.append((st_.to_array() == st_.alpha).mean())
    q = 0.5 + 1 / (2 * t)
    assert abs(np.mean(fr) - q) <= 3 * math.sqrt(q * (1 - q) / (30 * m))


def test_mostlyeq_uniform_pair_collision_exact():
    pmf = exact_pmf(MostlyEqModel(2, 2, "P_U"))
    assert sum(v for k, v in pmf.items() if k[0] == k[1]) == pytest.approx(0.5, abs=1e-15)


def test_mostlyeq_labels():
    assert gen_mostlyeq(3, 5, "P_Eq", 0).label.truth == 1
    assert gen_mostlyeq(3, 5, "P_U", 0).label.truth == 0
    with pytest.raises(ValueError):
        gen_mostlyeq(3, 5, "nope", 0)


# --- serialization ------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10 ** 12), st.integers(0, 300), st.floats(0, 1), st.integers(0, 10 ** 6))
def test_text_and_binary_round_trip(tmp_path_factory, t, n, p, seed):
    d = tmp_path_factory.mktemp("ser")
    s = gen_needle(NeedleParams(t, n, p), seed)
    write_text(s, d / "s.txt")
    write_binary(s, d / "s.bin")
    meta_t, xt = read_text(d / "s.txt")
    meta_b, xb = read_binary(d / "s.bin")
    assert np.array_equal(xt, s.to_array()) and np.array_equal(xb, xt)
    assert meta_t == {"t": t, "n": n, "p": p} == meta_b


def test_binary_round_trip_negative_items(tmp_path):
    s = gen_coin(50, seed=2)
    write_binary(s, tmp_path / "c.bin")
    _, x = read_binary(tmp_path / "c.bin")
    assert np.array_equal(x, s.to_array())


def test_binary_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"XXXX" + b"\0" * 24)
    with pytest.raises(ValueError):
        read_binary(tmp_path / "x.bin")
