import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from needlestream.apr import AprConfig, as_kpass, range_widths
from needlestream.kpass import (ZOO, KPassAlgorithm, StateOverflowError, constant, dump_table, exact_sum, load_table,
                                majority_bit_only, parity_compare, peak_memory_bits, run_k_pass, sampled_counter,
                                state_bits, store_first, sum_mod, threshold, with_frozen_pass)
from needlestream.rng import RandomTape


@pytest.mark.parametrize("m,bits", [(0, 1), (1, 1), (255, 8), (256, 9), (-1, 2), (None, 1), (True, 1),
                                    ((3, -2, 0), 2 + 3 + 1), ((), 1)])
def test_state_bits(m, bits):
    assert state_bits(m) == bits


def test_state_bits_rejects_unknown():
    with pytest.raises(TypeError):
        state_bits("x")


def test_constant_never_changes():
    tr = run_k_pass(constant(3), [1, -1, 1, 1])
    assert all(m == 0 for row in tr.states for m in row)
    assert tr.peak_bits == state_bits(0)


def test_exact_sum_arithmetic():
    assert run_k_pass(exact_sum(3), [1, -1, 1]).final() == 1


def test_exact_counter_width():
    assert run_k_pass(exact_sum(255), [1] * 255, record=False).peak_bits == 8


def _parity_reference(x):
    pass1, par = [0], 0
    for v in x:
        par ^= int(v > 0)
        pass1.append(par)
    P = par
    pass2, pre = [P], 0
    for v in x:
        pre ^= int(v > 0)
        pass2.append(2 * P + (P ^ pre))
    return [pass1, pass2], P


@pytest.mark.parametrize("x", list(product([-1, 1], repeat=3)))
def test_parity_compare_matches_hand_table(x):
    tr = run_k_pass(parity_compare(), list(x))
    ref, out = _parity_reference(x)
    assert tr.states == ref
    assert tr.output == out
    assert tr.m(2, 0) == tr.m(1, 3)


def test_transcript_indexing():
    tr = run_k_pass(store_first(2), [1, -1])
    assert tr.k == 2 and tr.n == 2
    assert tr.m(1, 0) == 0 and tr.m(1, 1) == 1
    with pytest.raises(IndexError):
        tr.m(0, 0)
    assert peak_memory_bits(tr) == tr.peak_bits


def test_overflow_detected():
    alg = KPassAlgorithm("grow", 1, 2, 0, lambda i, j, x, m, r: m + 1)
    with pytest.raises(StateOverflowError):
        run_k_pass(alg, [1] * 5)


def test_randomized_algorithms_need_a_tape():
    alg = sampled_counter(3, 1)
    with pytest.raises(ValueError):
        run_k_pass(alg, [1, 1])
    a = run_k_pass(alg, [1] * 6, tape=RandomTape.keyed(1, "t"))
    b = run_k_pass(alg, [1] * 6, tape=RandomTape.keyed(1, "t"))
    assert a.states == b.states and a.rand == b.rand


def test_bad_randomness_rejected():
    with pytest.raises(ValueError):
        KPassAlgorithm("bad", 1, 1, 0, lambda *a: 0, randomness=((0, 0.5), (1, 0.4)))
    with pytest.raises(ValueError):
        KPassAlgorithm("bad", 0, 1, 0, lambda *a: 0)


def test_frozen_pass_keeps_memory():
    alg = with_frozen_pass(sum_mod(2, 1))
    tr = run_k_pass(alg, [1, 1, -1, 1])
    assert alg.k == 2 and alg.frozen_last_pass
    assert len(set(tr.states[1])) == 1


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=12))
def test_majority_bit_only_reports_sign(x):
    # ties count as +1
    assert run_k_pass(majority_bit_only(len(x)), x).output == (1 if sum(x) >= 0 else -1)


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=10), st.integers(1, 3))
def test_zoo_semantics(x, k):
    n = len(x)
    plus = sum(v > 0 for v in x)
    assert run_k_pass(store_first(k), x).final() == x[0]
    assert run_k_pass(sum_mod(2, k), x).final() == (k * plus) % 4
    assert run_k_pass(threshold(2, k), x).output == int(plus >= 2)
    for name, make in ZOO.items():
        run_k_pass(make(n, k), x)       # within declared memory


def test_apr_as_kpass_width_within_ranges():
    cfg = AprConfig(256, 0.5, 20.0)
    alg = as_kpass(cfg)
    x = [1, -1, 0, 1] * 64
    tr = run_k_pass(alg, x, tape=RandomTape.keyed(0, "a"), record=False)
    top = min(math.floor(20 * math.log2(cfg.n) * cfg.p_sample * cfg.B) + 1, cfg.n)
    assert tr.peak_bits <= state_bits(-top) + state_bits(top) + state_bits(-cfg.n) == range_widths(cfg)


TABLE = """
name xor_first_two
passes 1
states 2
initial 0
alphabet -1 1
T 1 1 1 * 1     # first +1 sets the bit
T 1 2 1 0 1
T 1 2 1 1 0
T * * * * *
"""


def test_load_table_wildcards():
    with pytest.raises(ValueError):
        load_table(TABLE)
    text = TABLE.replace("T * * * * *", "T * * * 0 0\nT * * * 1 1")
    alg = load_table(text)
    assert run_k_pass(alg, [1, 1, -1]).final() == 0
    assert run_k_pass(alg, [1, -1, -1]).final() == 1
    assert run_k_pass(alg, [-1, 1, 1]).final() == 1


def test_load_table_errors():
    with pytest.raises(ValueError):
        load_table("passes 1\nstates 2\n")
    with pytest.raises(ValueError):
        load_table("passes 1\nstates 2\ninitial 0\nbogus 3\n")
    alg = load_table("passes 1\nstates 2\ninitial 0\nT 1 1 1 0 1\n")
    with pytest.raises(KeyError):
        run_k_pass(alg, [-1])


@pytest.mark.parametrize("make", [lambda: parity_compare(), lambda: sum_mod(2, 2), lambda: threshold(2, 1)])
def test_dump_then_load_round_trip(make, tmp_path):
    alg = make()
    n = 4
    path = tmp_path / "alg.tbl"
    path.write_text(dump_table(alg, n))
    again = load_table(str(path))
    for x in product([-1, 1], repeat=n):
        assert run_k_pass(again, list(x)).output == run_k_pass(alg, list(x)).output


def test_dump_table_rejects_randomized():
    with pytest.raises(ValueError):
        dump_table(sampled_counter(2, 1), 3)
