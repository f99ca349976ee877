import math

import numpy as np
import pytest

from abflux.core import (FluxGrid, FluxLine, FluxLineLattice, GaugeError, LatticeGrid, LinkPhaseField,
                         PhysicalParams, UniformField, UniformWall, compile_flux_lines, compile_gauge,
                         fluxon, gauge_from_dict, gauge_to_dict, plaquette_flux, plaquette_fluxes,
                         reduce_flux)

P = PhysicalParams()


def centre(g, i, j):
    return g.x_origin + (i + 0.5) * g.a, g.y_origin + (j + 0.5) * g.a


@pytest.mark.parametrize("q, expected", [(1.0, 2 * math.pi), (2.0, math.pi), (0.5, 4 * math.pi)])
def test_fluxon(q, expected):
    assert fluxon(PhysicalParams(q=q)) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("phi, expected", [(7.0, 7 - 2 * math.pi), (-1.0, 2 * math.pi - 1),
                                           (2 * math.pi, 0.0)])
def test_reduce_flux(phi, expected):
    assert reduce_flux(phi, P) == pytest.approx(expected, abs=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        PhysicalParams(q=0.0)
    with pytest.raises(ValueError):
        PhysicalParams(m=-1.0)
    with pytest.raises(ValueError):
        PhysicalParams(hbar=0.0)


def test_flux_line_holonomy_is_local():
    g = LatticeGrid(12, 10, 1.0)
    links = compile_gauge(FluxLine(math.pi, *centre(g, 4, 6)), g, P)
    h = links.holonomy()
    assert h[4, 6] == pytest.approx(math.pi, abs=1e-14)
    mask = np.ones_like(h, dtype=bool)
    mask[4, 6] = False
    assert np.abs(h[mask]).max() < 1e-14


def test_plaquette_flux_examples():
    g = LatticeGrid(12, 12, 1.0)
    links = compile_gauge(FluxLine(1.0, *centre(g, 5, 5)), g, P)
    assert plaquette_flux(links, 5, 5, P) == pytest.approx(1.0, abs=1e-14)
    assert plaquette_flux(links, 6, 5, P) == pytest.approx(0.0, abs=1e-14)
    chi = np.random.default_rng(3).uniform(-5, 5, g.shape)
    again = links.regauge(chi)
    for ij in [(5, 5), (6, 5), (0, 0)]:
        a, b = plaquette_flux(links, *ij, P), plaquette_flux(again, *ij, P)
        assert math.isclose(math.remainder(a - b, 2 * math.pi), 0.0, abs_tol=1e-12)
    with pytest.raises(IndexError):
        plaquette_flux(links, 11, 0, P)


def test_sheet_wall_phases():
    g = LatticeGrid(16, 10, 0.5)
    x0 = centre(g, 6, 0)[0]
    links = compile_gauge(UniformWall(2.0, x0), g, P)
    right = g.x > x0
    assert np.allclose(links.phase_y[right, :-1], 2.0 * g.a)
    assert np.allclose(links.phase_y[~right], 0.0)
    h = links.holonomy()
    cols = np.nonzero(np.abs(h).max(axis=1) > 1e-12)[0]
    assert list(cols) == [6]
    assert np.allclose(h[6], 2.0 * g.a)


def test_finite_wall_total_flux_per_row():
    g = LatticeGrid(40, 10, 0.25)
    links = compile_gauge(UniformWall(1.5, 2.0, 3.0), g, P)
    # every row of plaquettes carries phi_B * a of flux
    assert np.allclose(links.holonomy().sum(axis=0), 1.5 * g.a)


def test_zero_flux_specs_give_zero_phases():
    g = LatticeGrid(12, 12, 1.0)
    for spec in (FluxLine(0.0, *centre(g, 2, 2)), UniformWall(0.0, 3.0), FluxGrid(0.0, 2.0),
                 UniformField(0.0)):
        links = compile_gauge(spec, g, P)
        assert not np.any(links.phase_x) and not np.any(links.phase_y)
    assert not np.any(plaquette_fluxes(LinkPhaseField.zeros(g), P))


def test_flux_line_must_sit_on_plaquette_centre():
    g = LatticeGrid(12, 12, 1.0)
    with pytest.raises(GaugeError):
        compile_gauge(FluxLine(1.0, 3.0, 3.0), g, P)
    with pytest.raises(GaugeError):
        compile_gauge(FluxLine(1.0, 100.5, 3.5), g, P)


def test_periodic_x_is_rejected_for_cut_gauges():
    g = LatticeGrid(12, 12, 1.0, boundary_x="periodic")
    with pytest.raises(GaugeError):
        compile_gauge(FluxLine(1.0, *centre(g, 2, 2)), g, P)


def test_superposition_adds_fluxes():
    g = LatticeGrid(14, 12, 0.5)
    specs = [FluxLine(0.7, *centre(g, 3, 3)), FluxLine(-0.2, *centre(g, 3, 3)),
             FluxLine(1.1, *centre(g, 8, 5))]
    links = compile_gauge(specs, g, P)
    h = links.holonomy()
    assert h[3, 3] == pytest.approx(0.5)
    assert h[8, 5] == pytest.approx(1.1)
    direct = compile_flux_lines([centre(g, 3, 3), centre(g, 8, 5)], [0.5, 1.1], g, P)
    assert np.allclose(direct.phase_y, links.phase_y)


def test_flux_line_lattice_and_grid():
    g = LatticeGrid(32, 32, 0.125, boundary_y="periodic")
    links = compile_gauge(FluxLineLattice(1.0, 1.0, centre(g, 10, 0)[0], centre(g, 0, 3)[1]), g, P)
    h = links.holonomy()
    rows = np.nonzero(np.abs(h[10]) > 1e-12)[0]
    assert list(rows) == [3, 11, 19, 27]
    assert np.abs(np.delete(h, 10, axis=0)).max() < 1e-12
    g2 = LatticeGrid(33, 33, 0.25)
    grid_links = compile_gauge(FluxGrid(0.1, 1.0), g2, P)
    assert FluxGrid(0.1, 1.0).effective_B(P) == pytest.approx(0.1)
    assert np.count_nonzero(np.abs(grid_links.holonomy()) > 1e-12) > 0


def test_uniform_field_flux_per_plaquette():
    g = LatticeGrid(20, 16, 0.2)
    links = compile_gauge(UniformField(0.8), g, P)
    assert np.allclose(links.holonomy(), 0.8 * g.a**2)


def test_gauge_dict_roundtrip():
    for spec in (UniformWall(2.0, 1.0, 0.5), FluxLine(1.0, 0.5, 0.5), FluxLineLattice(1.0, 1.0, 0.5),
                 FluxGrid(0.2, 0.5, (0.25, 0.25)), UniformField(1.0, (0, 1, 0, 1))):
        assert gauge_from_dict(gauge_to_dict(spec)) == spec
    with pytest.raises(ValueError):
        gauge_from_dict({"kind": "bogus"})


def test_box_grid_geometry():
    g = LatticeGrid.box(2.0, 1.0, 0.1)
    assert g.shape == (19, 9)
    # the box walls are ghost sites, so the first and last sites sit one spacing inside
    assert g.x[0] == pytest.approx(0.1) and g.x[-1] == pytest.approx(1.9)
    assert g.y[-1] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        LatticeGrid(4, 10, 1.0)
