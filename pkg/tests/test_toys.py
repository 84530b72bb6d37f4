from fractions import Fraction

import numpy as np
import pytest

from lorentz_lab.toys import (B_, E, F_, L_, N, R_, S, W, DIRS, RotatorLaw, Recurrent, Undecided, WalkState, baker,
                              binomial_1d, blocking_loop_check, ex1_exit, ex1_step, ex2_exit, ex3_exit, ex3_sweep,
                              ex3_walk, ex3_walks_batch, exact_distribution, exact_paths, frozen_env,
                              left_right_distribution, srw_distribution, toy_walks, wilson_interval)


def const(label):
    return lambda cell: label


def test_baker_maps_exact():
    assert baker(4, (Fraction(3, 10), Fraction(1, 2))) == (Fraction(1, 5), Fraction(3, 8))
    assert baker(2, (Fraction(3, 4), Fraction(1, 2))) == (Fraction(1, 2), Fraction(3, 4))


def test_baker_float_matches_rational_on_dyadics():
    y = (0.375, 0.625)
    assert baker(4, y) == tuple(float(c) for c in baker(4, tuple(Fraction(c) for c in y)))


def test_ex1_exit_table():
    assert ex1_exit((0.0, 0.0), E, 1) == N
    y1, i = ex1_step((Fraction(3, 10), Fraction(1, 2)), E, 1)
    assert y1 == (Fraction(1, 5), Fraction(3, 8))
    assert i == ex1_exit((0.3, 0.5), E, 1) == W  # j = 1


def test_ex1_exit_uniform_over_digits():
    for i in DIRS:
        for w in (1, 2, 3):
            assert sorted(ex1_exit((j / 4, 0.0), i, w) for j in range(4)) == [1, 2, 3, 4]


def test_ex2_exit_table():
    assert ex2_exit((0.25, 0.0), E, 2) == N  # left turn
    assert ex2_exit((0.75, 0.0), E, 2) == S  # right turn
    assert ex2_exit((0.25, 0.0), E, 1) == S


def test_ex3_exit():
    assert ex3_exit(1, 2) == 3
    for i in DIRS:
        assert ex3_exit(i, 4) == i
        assert ex3_exit(i, L_) == i % 4 + 1


@pytest.mark.parametrize("seed", range(10))
def test_ex1_law_is_simple_random_walk(seed):
    env = frozen_env(seed, (1, 2, 3))
    for n in range(1, 7):
        assert exact_distribution(1, n, env) == srw_distribution(n)


def test_ex1_return_at_two():
    assert exact_distribution(1, 2, frozen_env(0, (1, 2, 3)))[(0, 0)] == Fraction(1, 4)


@pytest.mark.parametrize("seed", range(4))
def test_ex2_small_times(seed):
    env = frozen_env(seed, (1, 2))
    assert exact_distribution(2, 2, env).get((0, 0), 0) == 0
    for i in DIRS:
        assert exact_distribution(2, 4, env, start_dirs=(i,))[(0, 0)] == Fraction(1, 4)


def test_ex2_is_left_right_walk():
    env = frozen_env(3, (1, 2))
    for n in range(1, 9):
        assert exact_distribution(2, n, env) == left_right_distribution(n)


@pytest.mark.parametrize("start", [E, W, N, S])
def test_ex2_direction_parity(start):
    env = frozen_env(1, (1, 2))
    horizontal = {E, W}
    for n, rects in enumerate(exact_paths(2, 8, env, start)):
        for R in rects:
            assert (R.direction in horizontal) == ((start in horizontal) == (n % 2 == 0))


def test_ex2_even_times_are_products_of_one_dimensional_walks():
    env = frozen_env(5, (1, 2))
    for n in (2, 4, 6, 8):
        k = n // 2
        one = binomial_1d(k)
        for start in (E, N):
            dist = exact_distribution(2, n, env, start_dirs=(start,))
            # one horizontal and one vertical step per pair, each +-1 with probability 1/2
            expect = {(a, b): pa * pb for a, pa in one.items() for b, pb in one.items()}
            assert dist == expect


def test_exact_weights_sum_to_one():
    d = exact_distribution(1, 5, frozen_env(2, (1, 2, 3)))
    assert sum(d.values()) == 1


def test_toy_walk_monte_carlo_matches_exact():
    S = toy_walks(1, 2, 20000, 1)
    p = np.mean((S[:, 2] == 0).all(axis=1))
    assert abs(p - 0.25) < 4 * np.sqrt(0.25 * 0.75 / 20000)
    S2 = toy_walks(2, 4, 20000, 1)
    assert not (S2[:, 2] == 0).all(axis=1).any()
    p4 = np.mean((S2[:, 4] == 0).all(axis=1))
    assert abs(p4 - 0.25) < 4 * np.sqrt(0.25 * 0.75 / 20000)


def test_toy_walks_unit_steps_and_reproducible():
    S = toy_walks(2, 50, 100, 9)
    assert (np.abs(np.diff(S, axis=1)).sum(axis=2) == 1).all()
    assert np.array_equal(S, toy_walks(2, 50, 100, 9))


def test_all_backward_cells_give_period_two():
    res = ex3_walk(const(B_), WalkState((0, 0), E), 100)
    assert res == Recurrent(2, 2)


def test_all_forward_cells_never_close():
    assert isinstance(ex3_walk(const(F_), WalkState((0, 0), E), 10_000), Undecided)


def test_all_left_cells_go_round_a_square():
    res = ex3_walk(const(L_), WalkState((0, 0), E), 100)
    assert isinstance(res, Recurrent) and res.period == 4


def test_batch_rotator_agrees_with_scalar():
    law = RotatorLaw(0.2, 0.5, 0.2, 0.1)
    seeds = np.arange(1, 60)
    dirs = (np.arange(59) % 4) + 1
    period, first = ex3_walks_batch(seeds, law, dirs, 5000)
    for s, d, p, f in zip(seeds, dirs, period, first):
        res = ex3_walk(frozen_env(int(s), (L_, B_, R_, F_), law.weights), WalkState((0, 0), int(d)), 5000)
        if isinstance(res, Recurrent):
            assert p == res.period and f == res.first_return_to_origin
        else:
            assert p == -1


def test_ring_of_backward_cells_is_found():
    ring = {(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)} - {(0, 0)}
    found, loop, label, interior = blocking_loop_check(lambda c: B_ if c in ring else F_, radius=5)
    assert found and label == B_
    assert set(loop) == ring
    assert interior == {(0, 0)}


def test_no_loop_in_forward_world():
    assert blocking_loop_check(const(F_), radius=20)[0] is False


def test_walk_stays_inside_blocking_loop():
    law = RotatorLaw.sweep_point(0.6)
    hits = 0
    for s in range(150):
        env = frozen_env(s, (L_, B_, R_, F_), law.weights)
        found, loop, _, interior = blocking_loop_check(env, radius=30)
        if not found:
            continue
        hits += 1
        res = ex3_walk(env, WalkState((0, 0), E), 100_000, track_cells=True)
        assert isinstance(res, Recurrent)
        assert res.visited <= interior | set(loop)
    assert hits > 20


def test_sweep_rows():
    rows = ex3_sweep([RotatorLaw.sweep_point(p) for p in (0.5, 1.0)], 100, 10_000, 3)
    assert rows[1].fraction == 1.0
    assert rows[0].trials == 100
    lo, hi = rows[0].wilson
    assert lo <= rows[0].fraction <= hi


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)
    assert wilson_interval(0, 10)[0] == 0.0


def test_rotator_law_validation():
    with pytest.raises(ValueError):
        RotatorLaw(0.5, 0.5, 0.5, 0.0)
    law = RotatorLaw.sweep_point(0.7)
    assert sum(law.weights) == pytest.approx(1.0)
    assert law.pi_l == law.pi_r == pytest.approx(0.1)
