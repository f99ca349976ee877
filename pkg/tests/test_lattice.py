import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from abflux import scattering as sc
from abflux.core import FluxLine, LatticeGrid, LinkPhaseField, PhysicalParams, UniformWall, compile_gauge
from abflux.lattice import (CayleyPropagator, LatticeHamiltonian, QuantumState, build_hamiltonian,
                            crossing_blocked, evolve, gaussian_packet, hopping, mean_momentum, measure,
                            perturbative_energy_increase, write_snapshot)
from abflux.spectral import lowest_eigenpairs

P = PhysicalParams()


def free(g):
    return build_hamiltonian(g, LinkPhaseField.zeros(g), P)


def test_box_ground_energy_continuum_limit():
    g = LatticeGrid.box(1.0, 1.0, 1.0 / 65)
    assert g.shape == (64, 64)
    e0 = lowest_eigenpairs(free(g), 1).eigenvalues[0]
    assert e0 == pytest.approx(math.pi**2, rel=0.01)


def test_hermitian_and_real_without_flux():
    g = LatticeGrid(20, 16, 0.1)
    h = free(g)
    assert h.hermiticity_residual() < 1e-12
    assert np.abs(h.matrix.imag).max() == 0.0
    links = compile_gauge([FluxLine(2.3, g.x_origin + 5.5 * g.a, g.y_origin + 7.5 * g.a),
                           UniformWall(1.1, 1.0, 0.4)], g, P)
    assert build_hamiltonian(g, links, P).hermiticity_residual() < 1e-12


def test_absorbing_layer_is_not_hermitian():
    g = LatticeGrid(40, 8, 0.1, boundary_x="absorbing-layer")
    h = free(g)
    assert not h.hermitian
    w = h.absorber
    assert w[0] > 0 and w[-1] > 0 and w[20] == 0
    assert np.allclose(h.hermitian_part().toarray(), h.hermitian_part().conj().T.toarray())


def test_packet_moments_and_norm():
    g = LatticeGrid(160, 160, 0.05)
    s = gaussian_packet((4.0, 4.0), (2.0, 0.0), (0.8, 0.8), g, P)
    assert s.norm2 == pytest.approx(1.0, abs=1e-10)
    r = measure(s, free(g))
    assert r.p_x == pytest.approx(2.0, rel=0.01)
    assert abs(r.p_y) < 0.02
    assert r.prob_left + r.prob_right == pytest.approx(1.0, abs=1e-10)
    cx, cy = s.centroid()
    assert (cx, cy) == pytest.approx((4.0, 4.0), abs=1e-6)
    sx, sy = s.widths()
    assert (sx, sy) == pytest.approx((0.8, 0.8), rel=1e-5)


def test_transverse_mode_energy():
    """<H> = k^2/2 + pi^2/(2 L^2) + 1/(8 sigma^2) with sigma the width of |psi|^2."""
    L_cav, sig, k = 1.0, 1.0, 2.0
    g = LatticeGrid.box(16.0, L_cav, 1.0 / 40)
    s = gaussian_packet((8.0, 0.5), (k, 0.0), (sig, None), g, P, transverse_mode=True)
    e = measure(s, free(g)).energy
    expected = k**2 / 2 + math.pi**2 / (2 * L_cav**2) + 1 / (8 * sig**2)
    assert e == pytest.approx(expected, rel=0.02)


def test_plane_wave_canonical_momentum():
    ly = 4 * math.pi
    g = LatticeGrid(64, 128, ly / 128, boundary_y="periodic")
    s = gaussian_packet((3.2, 0.0), (0.0, 1.5), (0.5, None), g, P)
    assert mean_momentum(s)[1] == pytest.approx(1.5, rel=0.01)
    assert measure(s, free(g)).P_y == pytest.approx(1.5, rel=0.01)


def test_kinematic_momentum_is_gauge_covariant_for_wall():
    g = LatticeGrid(120, 64, 0.1, boundary_y="periodic")
    links = compile_gauge(UniformWall(1.0, 3.05), g, P)
    h = build_hamiltonian(g, links, P)
    s = gaussian_packet((8.0, 3.2), (1.0, 0.5), (1.0, 0.6), g, P, links=links)
    r = measure(s, h)
    # beyond the wall P_y = p_y + q phi_B
    assert r.p_y == pytest.approx(0.5, rel=0.01)
    assert r.P_y - r.p_y == pytest.approx(1.0, abs=1e-2)


def test_zero_hamiltonian_leaves_state_unchanged():
    g = LatticeGrid(20, 20, 0.2)
    zero = LatticeHamiltonian(sp.csr_matrix((g.n_sites, g.n_sites), dtype=complex), g, P,
                              LinkPhaseField.zeros(g))
    s = gaussian_packet((2.0, 2.0), (1.0, 1.0), (0.5, 0.5), g, P)
    out = evolve(s, zero, 0.1, 10)
    assert np.array_equal(out.psi, s.psi)


def test_free_packet_spreading():
    """sigma(t)^2 = sigma0^2 + (t / (2 sigma0))^2 at the width-doubling time."""
    g = LatticeGrid(480, 8, 0.1, boundary_y="periodic")
    sig0 = 1.0
    s = gaussian_packet((24.0, 0.0), (0.0, 0.0), (sig0, None), g, P)
    t_double = 2 * math.sqrt(3) * sig0**2
    n = 400
    out = evolve(s, free(g), t_double / n, n)
    assert out.widths()[0] == pytest.approx(2 * sig0, rel=0.01)


def test_stationary_state_only_picks_up_a_phase():
    g = LatticeGrid(24, 20, 0.1)
    links = compile_gauge(FluxLine(1.3, g.x_origin + 10.5 * g.a, g.y_origin + 9.5 * g.a), g, P)
    h = build_hamiltonian(g, links, P)
    eig = lowest_eigenpairs(h, 2).eigenstates[1]
    out = evolve(eig, h, 0.01, 50)
    assert abs(eig.inner(out)) == pytest.approx(1.0, abs=1e-8)


def test_modal_and_direct_propagators_agree():
    g = LatticeGrid(60, 32, 0.2, boundary_y="periodic")
    links = compile_gauge(UniformWall(0.7, 5.9), g, P)
    h = build_hamiltonian(g, links, P)
    s = gaussian_packet((4.0, 3.2), (1.5, 0.4), (1.0, 0.5), g, P, links=links)
    fast = CayleyPropagator(h, 0.05)
    assert fast.modal
    psi_fast = s.psi
    for _ in range(10):
        psi_fast = fast.step(psi_fast)
    # the same map solved on the full operator
    eye = sp.identity(g.n_sites, format="csc")
    tau = 0.025
    psi = s.psi.ravel()
    for _ in range(10):
        psi = sp.linalg.spsolve((eye + 1j * tau * h.matrix).tocsc(), (eye - 1j * tau * h.matrix) @ psi)
    assert np.abs(psi.reshape(g.shape) - psi_fast).max() < 1e-10


@pytest.mark.parametrize("k", [1.6, 5.0])
def test_absorber_reflection_below_1e3(k):
    setup = sc.WallSetup(phi_B=0.0, ny=8)
    res = sc.simulate_wall(k, setup, P)
    assert res.run.reflection < 1e-3
    assert res.run.absorbed_right > 0.99


@pytest.mark.parametrize("Px2, Py, expected", [(1.0, 0.0, True), (10.0, 1.5, False), (1.0, 0.5, True)])
def test_crossing_blocked(Px2, Py, expected):
    assert crossing_blocked(Px2, Py, 2.0, P) is expected


def test_perturbative_energy_increase():
    assert perturbative_energy_increase(math.sqrt(2), 0.01, P, 0.05) == pytest.approx(2e-3, rel=1e-12)
    assert perturbative_energy_increase(math.sqrt(2), 0.0, P, 0.05) == 0.0
    assert perturbative_energy_increase(1.0, 0.02, P, 0.05) == pytest.approx(
        4 * perturbative_energy_increase(1.0, 0.01, P, 0.05))


def test_perturbative_energy_matches_frozen_mode_shift():
    """A weak flux line cuts the box mode along its +x branch cut.

    Holding the state fixed, the energy rises by eps^2 |psi_y(0)|^2 / (2a)
    times the probability on the cut side.
    """
    L_cav, a, eps = 1.0, 1.0 / 31, 0.01
    g = LatticeGrid.box(3.0, L_cav, a, y0=-0.5)
    ground = lowest_eigenpairs(free(g), 1)
    fl = FluxLine(eps, *g.nearest_plaquette_center(1.5, 0.0))
    assert fl.y0 == pytest.approx(0.0, abs=1e-12)
    h = build_hamiltonian(g, compile_gauge(fl, g, P), P)
    psi0 = ground.eigenstates[0]
    shift = measure(psi0, h).energy - ground.eigenvalues[0]
    cut_side = psi0.probability_in(fl.x0, np.inf)
    expected = perturbative_energy_increase(math.sqrt(2 / L_cav), eps, P, a) * cut_side
    assert shift == pytest.approx(expected, rel=0.01)
    # letting the state relax can only lower the cost
    relaxed = lowest_eigenpairs(h, 1).eigenvalues[0] - ground.eigenvalues[0]
    assert 0 < relaxed < shift


def test_snapshot_roundtrip(tmp_path):
    g = LatticeGrid(24, 24, 0.25)
    s = gaussian_packet((3.0, 3.0), (1.0, 0.0), (0.5, 0.5), g, P)
    csv_path, meta_path = write_snapshot(s, tmp_path / "snap.csv", t=0.5, report=measure(s, free(g)))
    rho = np.loadtxt(csv_path, delimiter=",")
    assert rho.shape == g.shape
    assert np.allclose(rho, s.density)
    meta = json.loads(meta_path.read_text())
    assert meta["time"] == 0.5 and meta["grid"]["nx"] == 24


def test_packet_preconditions():
    g = LatticeGrid(16, 16, 0.25)
    with pytest.raises(ValueError):
        gaussian_packet((2.0, 2.0), (1, 0), (0.1, 0.5), g, P)
    with pytest.raises(ValueError):
        gaussian_packet((0.5, 2.0), (1, 0), (0.5, 0.5), g, P)
    with pytest.raises(ValueError):
        gaussian_packet((2.0, 2.0), (1, 0), (0.5, None), g, P)
    with pytest.raises(ValueError):
        QuantumState(np.zeros((3, 3)), g, P)
    assert hopping(g, P) == pytest.approx(8.0)
