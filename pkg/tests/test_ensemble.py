from collections import Counter

import numpy as np
import pytest
from scipy import stats

from lorentz_lab.ensemble import (DiscLaw, Environment, FiniteLaw, cell_state, cell_states_v, d_clg, d_omega,
                                  finite_modification, hex_disc_law, periodic_env, scatterers_near,
                                  square_ellipse_law, shift, with_overrides)
from lorentz_lab.errors import MarginViolation, Overlap, SchemaError
from lorentz_lab.geometry import Disc
from lorentz_lab.lattice import Lattice
from lorentz_lab.serialize import dump_kv, dumps_env, loads_env, parse_kv

HEX = hex_disc_law()


def test_cell_state_is_deterministic():
    env = Environment(HEX, 42)
    assert cell_state(env, (3, -2)) == cell_state(Environment(HEX, 42), (3, -2))
    assert cell_state(env, (3, -2)) != cell_state(Environment(HEX, 43), (3, -2))


def test_finite_law_frequencies_pass_chi_square():
    law = FiniteLaw(Lattice("square"), ("a", "b", "c", "d"), (0.25, 0.25, 0.25, 0.25))
    env = Environment(law, 2024)
    counts = Counter(cell_state(env, (i, j)) for i in range(100) for j in range(100))
    assert stats.chisquare([counts[k] for k in "abcd"]).pvalue > 0.001


def test_disc_centres_uniform_in_offset_ball():
    env = Environment(HEX, 9)
    i, j = np.meshgrid(np.arange(-50, 50), np.arange(-50, 50))
    c = cell_states_v(env, i.ravel(), j.ravel())
    rho = np.hypot(c[:, 0], c[:, 1]) / HEX.offset_radius
    assert rho.max() <= 1.0
    assert stats.kstest(rho**2, "uniform").pvalue > 0.001
    assert stats.kstest((np.arctan2(c[:, 1], c[:, 0]) / (2 * np.pi)) % 1, "uniform").pvalue > 0.001


def test_vector_states_match_scalar():
    env = shift(Environment(HEX, 5), (2, 7))
    i = np.arange(-5, 5)
    j = np.arange(10, 20)
    v = cell_states_v(env, i, j)
    for a, b, w in zip(i, j, v):
        assert tuple(w) == pytest.approx(cell_state(env, (int(a), int(b))), abs=0)


def test_shift_is_a_group_action():
    env = Environment(HEX, 1)
    assert shift(env, (0, 0)) == env
    assert shift(shift(env, (2, -1)), (-3, 5)) == shift(env, (-1, 4))
    s = shift(env, (4, 4))
    assert cell_state(s, (1, 2)) == cell_state(env, (5, 6))


def test_overrides_follow_the_shift():
    env = with_overrides(Environment(HEX, 1), {(0, 0): (0.0, 0.0)})
    assert cell_state(env, (0, 0)) == (0.0, 0.0)
    assert cell_state(shift(env, (-1, 0)), (1, 0)) == (0.0, 0.0)


def test_scatterers_near_cell_zero_lists_the_neighbourhood():
    env = Environment(HEX, 3)
    lat = HEX.lattice
    lo, hi = lat.vertices.min(axis=0), lat.vertices.max(axis=0)
    near = scatterers_near(env, lo, hi)
    cells = {s.cell for s in near}
    assert {(0, 0), *lat.neighbors} <= cells
    assert all(lat.norm(g) < 2.5 for g in cells)
    assert len(near) == len(cells)  # one random disc per cell, no fixed scatterers


def test_scatterers_near_count_includes_fixed():
    law = square_ellipse_law()
    near = scatterers_near(Environment(law, 3), (-0.5, -0.5), (0.5, 0.5))
    cells = {s.cell for s in near}
    assert len(near) == 2 * len(cells)


def test_scatterers_near_is_shift_equivariant():
    env = Environment(HEX, 8)
    eta = (3, -2)
    off = HEX.lattice.to_plane(eta)
    a = scatterers_near(shift(env, eta), (-1, -1), (1, 1))
    b = scatterers_near(env, (-1 + off[0], -1 + off[1]), (1 + off[0], 1 + off[1]))
    sa = sorted((round(s.shape.center[0], 9), round(s.shape.center[1], 9)) for s in a)
    sb = sorted((round(s.shape.center[0] - off[0], 9), round(s.shape.center[1] - off[1], 9)) for s in b)
    assert sa == sb


def test_d_omega_properties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        w1 = HEX.sample(rng.random(2))
        w2 = HEX.sample(rng.random(2))
        assert d_omega(HEX, w1, w2) == d_omega(HEX, w2, w1)
        assert d_omega(HEX, w1, w1) == 0
    assert d_omega(HEX, (0.01, 0.0), (0.0, -0.005)) == pytest.approx(0.01)


def test_d_clg_zero_on_itself_and_single_cell_term():
    env = Environment(HEX, 4)
    v, tail = d_clg(env, env, 5.0)
    assert v == 0 and 0 < tail < 0.1
    w = cell_state(env, (0, 0))
    other = (w[0] + 0.003, w[1])
    v, _ = d_clg(env, with_overrides(env, {(0, 0): other}), 5.0)
    assert v == pytest.approx(0.003)


def test_d_clg_tail_shrinks_with_radius():
    env = Environment(HEX, 4)
    assert d_clg(env, env, 10.0)[1] < d_clg(env, env, 3.0)[1]


def test_empty_modification_changes_nothing():
    env = Environment(HEX, 6)
    mod = finite_modification(env)
    a = scatterers_near(env, (-3, -3), (3, 3))
    b = scatterers_near(mod, (-3, -3), (3, 3))
    assert [s.shape for s in a] == [s.shape for s in b]


def test_removal_drops_one_scatterer():
    env = Environment(HEX, 6)
    before = scatterers_near(env, (-2, -2), (2, 2))
    target = before[0]
    mod = finite_modification(env, removals=[(target.cell, target.index)])
    after = scatterers_near(mod, (-2, -2), (2, 2))
    assert len(after) == len(before) - 1
    assert target.shape not in [s.shape for s in after]
    # the removed disc is gone from the cell seen by the dynamics too
    assert len(shift(mod, target.cell).cell_shapes((0, 0))) == 0


def test_overlapping_addition_rejected():
    env = Environment(HEX, 6)
    with pytest.raises(Overlap):
        finite_modification(env, additions=[Disc((0.3, 0.0), 0.1)])


def test_addition_in_an_emptied_cell():
    env = Environment(HEX, 6)
    near = scatterers_near(env, (-0.1, -0.1), (0.1, 0.1))
    home = next(s for s in near if s.cell == (0, 0))
    mod = finite_modification(env, removals=[(home.cell, home.index)], additions=[Disc((0.05, 0.0), 0.2)])
    shapes = mod.cell_shapes((0, 0))
    assert len(shapes) == 1 and shapes[0].radius == 0.2
    assert shift(mod, (1, 0)).cell_shapes((-1, 0)) == shapes


def test_periodic_env():
    law = HEX
    const = periodic_env(law, {(0, 0): (0.0, 0.0)})
    assert {cell_state(const, (i, j)) for i in range(-3, 3) for j in range(-3, 3)} == {(0.0, 0.0)}
    two = periodic_env(law, {(0, 0): (0.01, 0.0), (1, 0): (-0.01, 0.0)}, block=(2, 1))
    for i in range(-4, 4):
        assert cell_state(two, (i, 7)) == ((0.01, 0.0) if i % 2 == 0 else (-0.01, 0.0))
    with pytest.raises(ValueError):
        periodic_env(law, {(0, 0): (0.0, 0.0)}, block=(2, 1))


def test_margin_violation_on_construction():
    with pytest.raises(MarginViolation):
        DiscLaw(Lattice("hex"), 0.49, 0.02)


def test_validate_rejects_states_outside_the_margin():
    with pytest.raises(MarginViolation):
        HEX.validate((0.05, 0.0))
    HEX.validate((0.01, 0.01))


def test_shipped_laws_certify_finite():
    for law in (HEX, square_ellipse_law()):
        cert = law.certify(n_samples=3000)
        assert cert.horizon == "finite"
        assert cert.tau_max <= law.tau_bound
        assert cert.tau_min > 0


def test_env_text_round_trip():
    env = Environment(HEX, 77, shift_offset=(2, -1))
    env = with_overrides(env, {(1, 1): (0.005, -0.002)})
    near = scatterers_near(env, (-0.1, -0.1), (0.1, 0.1))
    home = next(s for s in near if s.cell == (0, 0))
    env = finite_modification(env, removals=[(home.cell, home.index)], additions=[Disc((0.0, 0.0), 0.3)])
    text = dumps_env(env)
    assert loads_env(text) == env
    assert dumps_env(loads_env(text)) == text


def test_ellipse_and_finite_laws_round_trip():
    for env in (Environment(square_ellipse_law(), 1),
                periodic_env(FiniteLaw(Lattice("square"), (1, 2), (0.5, 0.5)), {(0, 0): 1, (0, 1): 2}, (1, 2))):
        assert loads_env(dumps_env(env)) == env


def test_kv_parsing():
    d = parse_kv("# comment\nlaw = disc\nlattice = hex\nradius = 0.47\noverride = [[0, 0], [0.0, 0.0]]\n"
                 "override = [[1, 0], [0.0, 0.01]]\n")
    assert d["law"] == "disc" and d["radius"] == 0.47 and len(d["override"]) == 2
    assert parse_kv(dump_kv(d)) == d
    with pytest.raises(SchemaError):
        parse_kv("radius = 1\nradius = 2\n")
    with pytest.raises(SchemaError):
        parse_kv("no equals sign\n")


def test_unknown_key_rejected():
    with pytest.raises(SchemaError):
        loads_env("law = disc\nlattice = hex\nradius = 0.47\noffset_radius = 0.02\nseed = 1\ncolour = 3\n")
    with pytest.raises(SchemaError):
        loads_env("law = disc\nlattice = hex\nradius = 0.47\noffset_radius = 0.02\n")
