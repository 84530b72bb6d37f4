import math

import numpy as np
import pytest

from lorentz_lab.billiard import (PhasePoint, Ray, billiard_map, certify_bounds, certify_disc_lattice,
                                  first_intersection, involution, jacobian, mu_density, phase_to_ray, reflect)
from lorentz_lab.errors import Escape, Tangency
from lorentz_lab.geometry import Disc, Ellipse
from lorentz_lab.lattice import Lattice


def test_normal_emission():
    ray = phase_to_ray(PhasePoint(Disc((0, 0), 1.0), 0.0, math.pi / 2))
    assert np.allclose(ray.origin, (1, 0))
    assert np.allclose(ray.direction, (1, 0))


def test_small_angle_points_along_tangent():
    ray = phase_to_ray(PhasePoint(Disc((0, 0), 1.0), 0.0, 1e-9))
    assert np.allclose(ray.direction, (0, 1), atol=1e-8)


def test_reflect_head_on_and_mirror():
    assert np.allclose(reflect((-1, 0), (1, 0)), (1, 0))
    s = 1 / math.sqrt(2)
    assert np.allclose(reflect((s, -s), (0, 1)), (s, s))


def test_first_intersection_raises_on_grazing():
    with pytest.raises(Tangency):
        first_intersection(Ray(np.array([-2.0, 1 - 1e-15]), np.array([1.0, 0.0])), [Disc((0, 0), 1.0)])


def test_mu_density():
    d = Disc((0, 0), 1.0)
    assert mu_density(PhasePoint(d, 0.0, math.pi / 2)) == pytest.approx(1.0)
    assert mu_density(PhasePoint(d, 0.0, math.pi / 6)) == pytest.approx(0.5)


def test_axis_shot_between_two_discs():
    a, b = Disc((0, 0), 1.0), Disc((4, 0), 1.0)
    x1, tau = billiard_map(PhasePoint(a, 0.0, math.pi / 2), [a, b])
    assert x1.scatterer == b
    assert tau == pytest.approx(2.0)
    assert np.allclose(b.boundary_point(x1.r).position, (3, 0))
    assert x1.phi == pytest.approx(math.pi / 2)


def _march(origin, direction, shapes, step=1e-6):
    """Crude oracle: walk along the ray until the first point inside a shape."""
    t = 0.0
    while t < 10:
        t += step
        p = origin + t * direction
        if any(s.contains(p) for s in shapes):
            return p
    raise AssertionError("no hit")


def test_off_normal_shot_agrees_with_ray_marching():
    a, b = Disc((0, 0), 1.0), Disc((4, 0), 1.0)
    x = PhasePoint(a, 0.05, math.pi / 2 + 0.1)
    ray = phase_to_ray(x)
    x1, tau = billiard_map(x, [a, b])
    # bracket with the march, then bisect the last step
    p = _march(ray.origin + 1e-3 * ray.direction, ray.direction, [b], step=1e-4)
    lo, hi = p - 1e-4 * ray.direction, p
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if b.contains(mid) else (mid, hi)
    assert np.linalg.norm(b.boundary_point(x1.r).position - hi) < 1e-8


def test_escape_when_nothing_is_hit():
    d = Disc((0, 0), 1.0)
    with pytest.raises(Escape):
        billiard_map(PhasePoint(d, 0.0, math.pi / 2), [d])


def _hex_window():
    lat = Lattice("hex")
    return [Disc(tuple(lat.to_plane((i, j))), 0.45) for i in range(-4, 5) for j in range(-4, 5)]


def test_time_reversal_returns_to_start():
    shapes = _hex_window()
    centre = next(s for s in shapes if s.center == (0.0, 0.0))
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = PhasePoint(centre, rng.uniform(0, centre.perimeter), math.acos(1 - 2 * rng.random()))
        x1, _ = billiard_map(x, shapes)
        back, _ = billiard_map(involution(x1), shapes)
        y = involution(back)
        assert y.scatterer == centre
        assert abs(y.r - x.r) < 1e-9 and abs(y.phi - x.phi) < 1e-9


def test_jacobian_preserves_sin_phi_measure():
    shapes = _hex_window()
    centre = next(s for s in shapes if s.center == (0.0, 0.0))
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(60):
        x = PhasePoint(centre, rng.uniform(0, centre.perimeter), math.acos(1 - 2 * rng.random()))
        J = jacobian(x, shapes)
        if J is None:
            continue
        x1, _ = billiard_map(x, shapes)
        assert abs(J * math.sin(x1.phi) / math.sin(x.phi) - 1) < 1e-4
        checked += 1
    assert checked > 50


def test_jacobian_on_ellipses():
    shapes = [Ellipse((float(i), float(j)), 0.3, 0.2, 0.3 * i + 0.1 * j) for i in range(-3, 4) for j in range(-3, 4)]
    centre = shapes[len(shapes) // 2]
    rng = np.random.default_rng(2)
    for _ in range(30):
        x = PhasePoint(centre, rng.uniform(0, centre.perimeter), math.acos(1 - 2 * rng.random()))
        J = jacobian(x, shapes)
        if J is None:
            continue
        x1, _ = billiard_map(x, shapes)
        assert abs(J * math.sin(x1.phi) / math.sin(x.phi) - 1) < 1e-4


def test_hex_lattice_with_large_discs_has_finite_horizon():
    lat = Lattice("hex")
    cert = certify_disc_lattice(0.45, lat.basis, n_samples=4000)
    assert cert.horizon == "finite"
    assert cert.tau_max < 2 * lat.circumradius
    assert cert.k_min == cert.k_max == pytest.approx(1 / 0.45)
    assert cert.tau_min == pytest.approx(1 - 0.9)


def test_square_lattice_has_axis_corridors():
    cert = certify_disc_lattice(0.45, Lattice("square").basis)
    assert cert.horizon == "infinite"
    assert math.isinf(cert.tau_max)
    dirs = {c.direction for c in cert.corridors}
    assert {(1, 0), (0, 1)} <= dirs or {(1, 0), (0, 1)} <= {(abs(a), abs(b)) for a, b in dirs}
    axis = [c for c in cert.corridors if c.direction in ((1, 0), (0, 1))]
    assert all(c.width == pytest.approx(0.1) for c in axis)


def test_single_disc_has_infinite_horizon():
    cert = certify_bounds([Disc((0, 0), 1.0)])
    assert cert.horizon == "infinite"


def test_certificate_dict_is_plain():
    d = certify_disc_lattice(0.45, Lattice("square").basis).as_dict()
    assert d["horizon"] == "infinite"
    assert isinstance(d["corridors"][0], dict)
