import math

import numpy as np
import pytest

from abflux import classical as cl
from abflux.core import PhysicalParams

P = PhysicalParams()


@pytest.mark.parametrize("v, expected", [(1.0, 0.25), (4.0, 1.0)])
def test_larmor_radius_examples(v, expected):
    assert cl.larmor_radius(v, 2.0, 0.5, P) == pytest.approx(expected, rel=1e-14)


def test_larmor_radius_linear_in_speed():
    assert cl.larmor_radius(2.6, 1.3, 0.4, P) == pytest.approx(2 * cl.larmor_radius(1.3, 1.3, 0.4, P))
    assert math.isinf(cl.larmor_radius(1.0, 0.0, 0.5, P))


@pytest.mark.parametrize("px, expected", [(1.0, True), (3.0, False), (2.0, False)])
def test_reflects_normal(px, expected):
    assert cl.reflects_normal(px, 2.0, P) is expected


@pytest.mark.parametrize("px, py, phi, expected", [(0.6, 0.6, 2.0, True), (1.0, 1.0, 2.0, False),
                                                   (0.1, 0.0, 0.0, False)])
def test_reflects_any_angle(px, py, phi, expected):
    assert cl.reflects_any_angle(px, py, phi, P) is expected


@pytest.mark.parametrize("q, expected", [(1.0, -2.0), (-1.0, 2.0)])
def test_wall_crossing_kick(q, expected):
    assert cl.wall_crossing_kick(2.0, PhysicalParams(q=q)) == expected


def test_free_motion_is_a_straight_line():
    s = cl.ClassicalState(0.0, 0.0, 1.0, 0.0)
    tr = cl.integrate(s, cl.FieldRegionSet(), 0.1, 50, P)
    assert np.allclose(tr.states[:, 0], tr.t)
    assert np.allclose(tr.states[:, 1], 0.0)


def test_cyclotron_orbit_radius_and_speed():
    # q = B = 1: the force at (0, 1) moving +x points to -y, so the orbit is centred on the origin
    s = cl.ClassicalState(0.0, 1.0, 1.0, 0.0)
    tr = cl.integrate(s, cl.FieldRegionSet.uniform(1.0), 0.01, 100_000, P)
    r = np.hypot(tr.states[:, 0], tr.states[:, 1])
    assert np.abs(r - 1.0).max() < 1e-9
    speed = np.hypot(tr.states[:, 2], tr.states[:, 3])
    assert np.abs(speed - 1.0).max() < 1e-12


def test_finite_wall_reflection_geometry():
    """w = 0.5, B = 4: an arc of radius 1/4 turns the charge back inside the wall."""
    enc = cl.encounter_wall(1.0, 0.0, 2.0, 0.5, P)
    assert enc.reflected
    assert enc.outgoing.px == pytest.approx(-1.0, abs=1e-12)
    assert enc.outgoing.py == pytest.approx(0.0, abs=1e-12)
    # deepest penetration equals the Larmor radius
    depth = enc.trajectory.states[:, 0].max()
    assert depth == pytest.approx(0.25, abs=1e-9) or depth < 0.25 + 1e-9


def test_finite_wall_crossing_kick():
    enc = cl.encounter_wall(3.0, 0.0, 2.0, 0.5, P)
    assert not enc.reflected
    assert enc.delta_py == pytest.approx(-2.0, abs=1e-9)
    assert enc.outgoing.px == pytest.approx(math.sqrt(5.0), abs=1e-9)


@pytest.mark.parametrize("angle", [30.0, 60.0])
def test_oblique_crossings_kick(angle):
    enc = cl.encounter_wall(5.0, math.radians(angle), 2.0, 0.0, P)
    assert not enc.reflected
    assert enc.delta_py == pytest.approx(-2.0, abs=1e-9)


def test_sheet_verdict_matches_threshold_exactly():
    for px in np.linspace(0.1, 3.9, 39):
        if abs(px - 2.0) < 1e-12:
            continue
        enc = cl.encounter_wall(px, 0.0, 2.0, 0.0, P)
        assert enc.reflected == (px < 2.0)


def test_mirror_reflection():
    fields = cl.FieldRegionSet(mirrors=(cl.Mirror(1.0),))
    s = cl.ClassicalState(0.0, 0.0, 0.5, 1.0)
    tr = cl.integrate(s, fields, 0.1, 20, P)
    assert tr.states[:, 1].max() <= 1.0 + 1e-12
    assert tr.final().py == pytest.approx(-1.0)


def test_overlapping_regions_rejected():
    with pytest.raises(ValueError):
        cl.FieldRegionSet(regions=(cl.FieldRegion(0, 2, 1.0), cl.FieldRegion(1, 3, 1.0)))


def test_cavity_trapped_for_small_momentum():
    init = cl.ClassicalState(0.1, 0.05, 0.3, 0.25)  # |p| ~ 0.39
    res = cl.simulate_cavity(1.0, 2.0, 2.0, init, P, t_max=200.0)
    assert res.trapped and res.exit_time is None
    speed = np.hypot(res.trajectory.states[:, 2], res.trajectory.states[:, 3])
    assert np.abs(speed - speed[0]).max() < 1e-12


def test_cavity_escape_on_first_hit():
    res = cl.simulate_cavity(1.0, 2.0, 2.0, cl.ClassicalState(0.0, 0.0, 3.0, 0.0), P, t_max=50.0)
    assert not res.trapped
    assert res.exit_time == pytest.approx(1.0 / 3.0, rel=1e-9)


def test_cavity_without_field_escapes():
    res = cl.simulate_cavity(1.0, 2.0, 0.0, cl.ClassicalState(0.0, 0.0, 0.2, 0.3), P, t_max=50.0)
    assert not res.trapped


def test_trajectory_csv(tmp_path):
    tr = cl.integrate(cl.ClassicalState(0, 0, 1, 0), cl.FieldRegionSet.uniform(1.0), 0.1, 10, P)
    path = tr.write_csv(tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == ["t", "x", "y", "px", "py"]
    assert len(lines) == 12


def test_invalid_states():
    with pytest.raises(ValueError):
        cl.ClassicalState(float("nan"), 0, 0, 0)
    with pytest.raises(ValueError):
        cl.encounter_wall(1.0, math.pi, 2.0, 0.0, P)
    with pytest.raises(ValueError):
        cl.simulate_cavity(1.0, 2.0, 2.0, cl.ClassicalState(5.0, 0, 1, 0), P)
