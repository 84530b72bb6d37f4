import json
import math

import numpy as np
import pytest
from scipy import stats

from lorentz_lab.batch import DiscBatch, starts_from_points, to_cross_section_point
from lorentz_lab.ensemble import (DiscLaw, Environment, FiniteLaw, hex_disc_law, periodic_env, shift,
                                  square_ellipse_law)
from lorentz_lab.hashing import derive_seed
from lorentz_lab.lattice import Lattice
from lorentz_lab.skewprod import (CrossSectionPoint, SkewState, cell_exit_map, cocycle, cross_section,
                                  equivalence_check, equivalence_test, full_plane_trace, sample_mu1, skew_step,
                                  trace_to_csv, trace_to_jsonl)

HEX = hex_disc_law()
EMPTY = FiniteLaw(Lattice("square"), ("empty",), (1.0,))
WEST_MID = CrossSectionPoint(2, 2.5, math.pi / 2)  # square edges E, N, W, S from arc 0


def _pos_of_empty(x):
    cs = cross_section(EMPTY)
    return cs.position(x.segment, x.r), cs.velocity(x.segment, x.phi)


def test_empty_cell_straight_crossing():
    p, v = _pos_of_empty(WEST_MID)
    assert np.allclose(p, (-0.5, 0.0)) and np.allclose(v, (1, 0))
    ev = cell_exit_map(WEST_MID, "empty", EMPTY)
    assert ev.direction == (1, 0)
    assert ev.collisions == 0
    assert ev.path_length == pytest.approx(1.0)
    assert ev.exit_point.segment == 2
    assert ev.exit_point.r == pytest.approx(2.5)
    assert ev.exit_point.phi == pytest.approx(math.pi / 2)


def test_centred_disc_bounces_straight_back():
    law = DiscLaw(Lattice("square"), 0.3, 0.0)
    ev = cell_exit_map(WEST_MID, (0.0, 0.0), law)
    assert ev.direction == (-1, 0)
    assert ev.collisions == 1
    assert ev.path_length == pytest.approx(0.4)


def test_skew_step_in_empty_periodic_environment():
    env = periodic_env(EMPTY, {(0, 0): "empty"})
    state, ev = skew_step(SkewState(WEST_MID, env))
    assert state.env == shift(env, (1, 0))
    assert state.point.segment == WEST_MID.segment
    assert state.point.r == pytest.approx(WEST_MID.r)


def test_cocycle_zero_steps():
    tr = cocycle(SkewState(sample_mu1(HEX, np.random.default_rng(0)), Environment(HEX, 1)), 0)
    assert tr.partial_sums.tolist() == [[0, 0]]
    assert tr.events == [] and tr.first_return is None


def test_cocycle_is_ballistic_in_empty_environment():
    env = periodic_env(EMPTY, {(0, 0): "empty"})
    tr = cocycle(SkewState(WEST_MID, env), 25)
    assert tr.partial_sums.tolist() == [[k, 0] for k in range(26)]


def test_cocycle_is_additive():
    env = Environment(HEX, 12)
    x = sample_mu1(HEX, np.random.default_rng(12))
    whole = cocycle(SkewState(x, env), 60)
    head = cocycle(SkewState(x, env), 25)
    tail = cocycle(head.final, 35)
    assert np.array_equal(whole.partial_sums, np.vstack([head.partial_sums, head.partial_sums[-1] + tail.partial_sums[1:]]))


def test_exit_sequence_reverses_under_time_reversal():
    """Running backwards from the reversed final state retraces the path."""
    env = Environment(HEX, 3)
    x = sample_mu1(HEX, np.random.default_rng(3))
    fwd = cocycle(SkewState(x, env), 40)
    cs = cross_section(HEX)
    end = fwd.final
    p = cs.position(end.point.segment, end.point.r)
    v = -cs.velocity(end.point.segment, end.point.phi)
    # the reversed particle leaves through the wall it came in by; step back into the previous cell
    last = fwd.events[-1].direction
    p = p + HEX.lattice.to_plane(last)
    k = int(np.argmin([abs(float(p @ e.normal) - e.offset) for e in HEX.lattice.edges]))
    seg, r = cs.locate(k, p)
    back = cocycle(SkewState(CrossSectionPoint(seg, r, cs.angle(k, v)), shift(end.env, (-last[0], -last[1]))), 39)
    fwd_dirs = [ev.direction for ev in fwd.events][:-1]
    back_dirs = [tuple(-d for d in ev.direction) for ev in back.events]
    assert back_dirs == fwd_dirs[::-1]


def test_mu1_sin_phi_mean():
    rng = np.random.default_rng(5)
    s = np.array([math.sin(sample_mu1(HEX, rng).phi) for _ in range(100_000)])
    sigma = math.sqrt(2 / 3 - math.pi**2 / 16) / math.sqrt(len(s))
    assert abs(s.mean() - math.pi / 4) < 3 * sigma


def test_mu1_position_uniform_on_wall():
    law = square_ellipse_law()
    cs = cross_section(law)
    rng = np.random.default_rng(6)
    starts = np.concatenate([[0.0], np.cumsum(cs.lengths)])
    u = []
    for _ in range(5000):
        x = sample_mu1(law, rng)
        seg = cs.segments[x.segment]
        u.append((starts[x.segment] + x.r - seg.lo) / cs.total_length)
    assert stats.kstest(u, "uniform").pvalue > 0.001


def test_corner_discs_cover_the_cell_corners():
    cs = cross_section(square_ellipse_law())
    assert len(cs.segments) == 4
    assert cs.total_length == pytest.approx(4 * (1 - 2 * 0.36), rel=1e-9)


def test_exit_map_pushes_mu1_forward_to_itself():
    """The exit point of a mu1 x Pi sample is again mu1-distributed."""
    cs = cross_section(HEX)
    starts = np.concatenate([[0.0], np.cumsum(cs.lengths)])
    rng = np.random.default_rng(7)
    u, c = [], []
    for t in range(4000):
        env = Environment(HEX, derive_seed(7, t))
        st, _ = skew_step(SkewState(sample_mu1(HEX, rng), env))
        seg = cs.segments[st.point.segment]
        u.append((starts[st.point.segment] + st.point.r - seg.lo) / cs.total_length)
        c.append(math.cos(st.point.phi))
    assert stats.kstest(u, "uniform").pvalue > 0.001
    assert stats.kstest(c, stats.uniform(-1, 2).cdf).pvalue > 0.001


def test_full_plane_trace_in_empty_environment():
    env = periodic_env(EMPTY, {(0, 0): "empty"})
    cr = full_plane_trace((0.0, 0.1), (1.0, 0.0), env, 5)
    assert [c.cell for c in cr] == [(k, 0) for k in range(1, 6)]


@pytest.mark.parametrize("law", [HEX, square_ellipse_law()], ids=["hex", "ellipse"])
def test_skew_product_matches_full_plane(law):
    rep = equivalence_test(law, range(3), 150)
    assert rep.direction_mismatches == 0
    assert rep.max_point_error <= 1e-9
    assert rep.match


def test_free_running_oracle_agrees_for_a_while():
    env = Environment(HEX, 0)
    _, _, _, _, agree = equivalence_check(env, sample_mu1(HEX, np.random.default_rng(0)), 200)
    assert agree >= 10


def test_trace_exports():
    tr = cocycle(SkewState(sample_mu1(HEX, np.random.default_rng(1)), Environment(HEX, 1)), 5)
    text = trace_to_csv(tr)
    lines = text.splitlines()
    assert lines[0] == "# schema=lorentz-lab/trace/1"
    assert lines[1] == "step,gamma_i,gamma_j,r,phi,collisions,path_length"
    assert len(lines) == 7
    recs = [json.loads(x) for x in trace_to_jsonl(tr).splitlines()]
    assert [(r["gamma_i"], r["gamma_j"]) for r in recs] == [ev.direction for ev in tr.events]
    assert float(lines[2].split(",")[3]) == recs[0]["r"]


def test_batch_agrees_with_scalar_exit_map():
    law = HEX
    rng = np.random.default_rng(4)
    n = 50
    seeds = np.array([derive_seed(4, t) for t in range(n)])
    points = [sample_mu1(law, rng) for _ in range(n)]
    P, V = starts_from_points(law, points)
    res = DiscBatch(law).run(seeds, P, V, 15)  # short enough that chaos has not amplified rounding
    for t in range(n):
        tr = cocycle(SkewState(points[t], Environment(law, int(seeds[t]))), 15)
        if res.truncated_at[t] < 0 and tr.truncated is None:
            assert np.array_equal(res.partial_sums[t], tr.partial_sums)
            fin = to_cross_section_point(law, res.positions[t], res.velocities[t])
            assert fin.segment == tr.final.point.segment
            assert abs(fin.r - tr.final.point.r) < 1e-6
    assert (res.truncated_at < 0).mean() > 0.9


def test_batch_single_steps_match_exit_map():
    law = HEX
    rng = np.random.default_rng(8)
    batch = DiscBatch(law)
    seeds = np.array([derive_seed(8, t) for t in range(200)])
    cells = rng.integers(-50, 50, (200, 2))
    points = [sample_mu1(law, rng) for _ in range(200)]
    P, V = starts_from_points(law, points)
    edge, P1, V1, bad = batch.step(seeds, cells, P, V)
    for t in np.flatnonzero(~bad):
        env = shift(Environment(law, int(seeds[t])), tuple(int(c) for c in cells[t]))
        ev = cell_exit_map(points[t], None, law, env.cell_shapes((0, 0)))
        assert ev.direction == law.lattice.edges[edge[t]].neighbor
        x = to_cross_section_point(law, P1[t], V1[t])
        assert (x.segment, x.r, x.phi) == pytest.approx((ev.exit_point.segment, ev.exit_point.r, ev.exit_point.phi), abs=1e-11)
    assert bad.sum() <= 2
