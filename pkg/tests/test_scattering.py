import math

import numpy as np
import pytest

from abflux import scattering as sc
from abflux.core import FluxLineLattice, PhysicalParams, compile_gauge, fluxon
from abflux.lattice import build_hamiltonian, gaussian_packet

P = PhysicalParams()
SMALL = sc.DiffractionSetup(L=1.0, periods=4, a=1 / 8, sigma_x=2.0, room=10)


def test_step_oracle_examples():
    assert sc.step_transmission_oracle(3.0, 0.0, 0.0, P) == 1.0
    # step of height pi^2/2 under E = 2 pi^2: k_out = sqrt(3) pi
    expected = 8 * math.sqrt(3) / (2 + math.sqrt(3)) ** 2
    assert sc.step_transmission_oracle(2 * math.pi, 0.0, math.pi, P) == pytest.approx(expected, rel=1e-12)
    assert sc.step_transmission_oracle(2.0, 0.0, 2.0, P) == 0.0
    assert sc.step_transmission_oracle(1.9, 0.0, 2.0, P) == 0.0
    # k_y = q phi_B / 2 makes the step vanish
    assert sc.step_transmission_oracle(0.3, 1.0, 2.0, P) == pytest.approx(1.0)


def test_step_oracle_monotone_above_threshold():
    ks = np.linspace(2.01, 8, 50)
    T = [sc.step_transmission_oracle(k, 0.0, 2.0, P) for k in ks]
    assert np.all(np.diff(T) > 0)
    assert T[-1] < 1


@pytest.mark.parametrize("Phi, L, expected", [(math.pi / 2, 1.0, math.pi / 2), (3 * math.pi / 2, 1.0, math.pi / 2),
                                              (math.pi, 1.0, math.pi)])
def test_minimum_deflection(Phi, L, expected):
    assert sc.minimum_deflection(Phi, L, P) == pytest.approx(expected, rel=1e-14)


def test_minimum_deflection_needs_reduced_flux():
    with pytest.raises(ValueError):
        sc.minimum_deflection(7.0, 1.0, P)


@pytest.mark.parametrize("Px2, Py2, expected", [(0.5, 0.4, True), (2.0, 2.0, False), (0.0, 0.0, True)])
def test_guaranteed_reflection_quantum(Px2, Py2, expected):
    assert sc.guaranteed_reflection_quantum(Px2, Py2, 2.0, P) is expected


def test_momentum_comb():
    comb = sc.momentum_comb([-1, 0, 1], math.pi / 2, 1.0, P)
    np.testing.assert_allclose(comb, [-2.5 * math.pi, -0.5 * math.pi, 1.5 * math.pi])
    # adding a fluxon shifts the comb by exactly one tooth
    shifted = sc.momentum_comb([0, 1, 2], math.pi / 2 + fluxon(P), 1.0, P)
    np.testing.assert_allclose(shifted, comb)


def test_zero_flux_lattice_is_transparent():
    res = sc.simulate_diffraction(0.0, (3.0, 0.0), SMALL, P)
    assert [p.order for p in res.spectrum.peaks] == [0]
    assert res.spectrum.peaks[0].dp == pytest.approx(0.0, abs=1e-9)
    assert res.run.transmission == pytest.approx(1.0, abs=1e-3)


def test_half_fluxon_splits_symmetrically():
    res = sc.simulate_diffraction(math.pi, (5.0, 0.0), SMALL, P)
    peaks = {p.order: p for p in res.spectrum.peaks}
    assert set(peaks) == {0, 1}
    assert peaks[0].dp == pytest.approx(-math.pi, abs=res.spectrum.bin_width)
    assert peaks[1].dp == pytest.approx(math.pi, abs=res.spectrum.bin_width)
    assert peaks[0].weight == pytest.approx(peaks[1].weight, rel=0.05)


def test_quarter_fluxon_mirrors_three_quarters():
    a = sc.simulate_diffraction(math.pi / 2, (3.0, 0.0), SMALL, P).spectrum
    b = sc.simulate_diffraction(3 * math.pi / 2, (3.0, 0.0), SMALL, P).spectrum
    assert all(abs(p.offset) <= a.bin_width for p in a.peaks + b.peaks)
    d_dp, d_w = sc.mirror_mismatch(a, b)
    assert d_dp <= a.bin_width
    assert d_w < 1e-6


def test_wall_momentum_audit_small():
    audit = sc.wall_momentum_audit(k=(3.0, 0.5), phi_B=1.0, a=0.2, nx=400, ny=96)
    assert audit.max_P_y_drift < 1e-6
    assert audit.prob_right > 0.99
    assert audit.kinematic_shift == pytest.approx(-1.0, rel=0.02)


def test_wall_transmission_below_threshold_is_small():
    setup = sc.WallSetup(phi_B=2.0, ny=8)
    res = sc.simulate_wall(1.6, setup, P)
    assert res.oracle == 0.0
    assert res.transmission < 1e-2
    assert res.transmission + res.run.reflection == pytest.approx(1.0, abs=1e-6)


def test_flux_line_lattice_reflects_slow_packets():
    """|P| < |q Phi_B| / 2L: every comb order is evanescent, so the packet bounces."""
    Phi, L = math.pi, 1.0
    k = 0.6 * abs(P.q * Phi) / (2 * L)
    setup = sc.DiffractionSetup(L=L, periods=4, a=1 / 8, sigma_x=4.0, room=10)
    g = setup.grid()
    x_lat = sc.snap_to_plaquette_x(g, 40.0)
    links = compile_gauge(FluxLineLattice(Phi, L, x_lat, g.y_origin + 0.5 * g.a), g, P)
    ham = build_hamiltonian(g, links, P)
    state = gaussian_packet((20.0, g.y[0]), (k, 0.0), (4.0, None), g, P)
    run = sc.scatter(ham, state, 0.05, int(40.0 / k / 0.05), x_lat)
    assert run.transmission < 0.1
    with pytest.raises(sc.ScatteringError):
        sc.momentum_transfer_spectrum(run.state, links, L, 0.0, Phi, P, x_lat, min_probability=0.1)


def test_wall_setup_too_short():
    with pytest.raises(sc.ScatteringError):
        sc.simulate_wall(3.0, sc.WallSetup(nx=64, ny=8), P)
