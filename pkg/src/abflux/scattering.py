"""Wave-packet scattering off walls and flux-line lattices, plus analytic oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import (ABSORBING, HARD_WALL, PERIODIC, FluxLineLattice, LatticeGrid, LinkPhaseField,
                   PhysicalParams, UniformWall, compile_gauge, fluxon, reduce_flux)
from .lattice import (CayleyPropagator, LatticeHamiltonian, ObservableReport, QuantumState,
                      absorber_sites, build_hamiltonian, gaussian_packet, hopping, measure,
                      momentum_distribution)


class ScatteringError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# analytic relations


def step_transmission_oracle(k_x: float, k_y: float, phi_B: float, params: PhysicalParams) -> float:
    """Transmission through a widthless wall at fixed canonical k_y.

    At fixed P_y = hbar*k_y the wall is a potential step of height
    (q^2 phi_B^2 - 2 q phi_B hbar k_y) / 2m for the x motion.
    """
    hb, q, m = params.hbar, params.q, params.m
    k_x = abs(k_x)
    step = (q**2 * phi_B**2 - 2 * q * phi_B * hb * k_y) / (2 * m)
    e_x = (hb * k_x) ** 2 / (2 * m)
    if e_x <= step or k_x == 0:
        return 0.0
    k_out = math.sqrt(2 * m * (e_x - step)) / hb
    return 4 * k_x * k_out / (k_x + k_out) ** 2


def minimum_deflection(Phi_B: float, L: float, params: PhysicalParams) -> float:
    """Smallest transverse momentum transfer through a flux-line lattice."""
    period = abs(fluxon(params))
    if Phi_B < 0 or Phi_B >= period:
        raise ValueError("reduce the flux into [0, Phi0) first")
    if Phi_B <= period / 2:
        return abs(params.q) * Phi_B / L
    return 2 * math.pi * params.hbar / L - abs(params.q) * Phi_B / L


def guaranteed_reflection_quantum(Px2: float, Py2: float, phi_B: float, params: PhysicalParams) -> bool:
    return math.sqrt(Px2 + Py2) < abs(params.q * phi_B) / 2


def momentum_comb(n, Phi_B: float, L: float, params: PhysicalParams):
    """Allowed transverse kicks 2*pi*hbar*n/L - q*Phi_B/L."""
    return 2 * math.pi * params.hbar * np.asarray(n) / L - params.q * Phi_B / L


# ---------------------------------------------------------------------------
# generic open scattering run


@dataclass
class ScatteringRun:
    state: QuantumState
    divider: float
    time: float
    transmission: float
    reflection: float
    absorbed_left: float
    absorbed_right: float
    initial: ObservableReport
    final: ObservableReport
    history: list = field(default_factory=list)


def scatter(ham: LatticeHamiltonian, state: QuantumState, dt: float, nsteps: int, divider: float,
            record_every: int = 0) -> ScatteringRun:
    """Evolve and split probability into transmitted/reflected parts.

    Probability removed by the absorbing layers is attributed to the side it
    was removed on, so ``transmission`` counts what reached the right
    absorber as well as what is still right of ``divider``.
    """
    prop = CayleyPropagator(ham, dt)
    g = ham.grid
    a2 = g.a**2
    w = ham.absorber if ham.absorber is not None else np.zeros(g.nx)
    right_cols = g.x > divider
    wl, wr = np.where(right_cols, 0.0, w), np.where(right_cols, w, 0.0)
    absorbed_l = absorbed_r = 0.0
    psi = state.psi
    col = (np.abs(psi) ** 2).sum(axis=1) * a2
    initial = measure(state, ham, divider)
    history = []
    for n in range(1, nsteps + 1):
        psi = prop.step(psi)
        new_col = (np.abs(psi) ** 2).sum(axis=1) * a2
        loss = col.sum() - new_col.sum()
        if loss > 0:
            # the trapezoid weights only decide the left/right split of the exact loss
            lw = (wl * (col + new_col)).sum()
            rw = (wr * (col + new_col)).sum()
            if lw + rw > 0:
                absorbed_l += loss * lw / (lw + rw)
                absorbed_r += loss * rw / (lw + rw)
        col = new_col
        if record_every and n % record_every == 0:
            s = QuantumState(psi, g, state.params)
            history.append((n * dt, measure(s, ham, divider)))
    final_state = QuantumState(psi, g, state.params)
    final = measure(final_state, ham, divider)
    return ScatteringRun(final_state, divider, nsteps * dt,
                         final.prob_right + absorbed_r, final.prob_left + absorbed_l,
                         absorbed_l, absorbed_r, initial, final, history)


def snap_to_plaquette_x(grid: LatticeGrid, x: float) -> float:
    return grid.x_origin + (math.floor((x - grid.x_origin) / grid.a) + 0.5) * grid.a


# ---------------------------------------------------------------------------
# wall scattering


@dataclass(frozen=True)
class WallSetup:
    """Geometry of a normal-incidence wall run (plane wave along periodic y)."""
    phi_B: float = 2.0
    nx: int = 512
    ny: int = 256
    a: float = 0.125
    sigma_x: float = 4.5
    absorb_margin: float = 0.15
    absorb_ratio: float = 0.15  # W_max / hopping
    courant: float = 0.5  # dt = courant * a / max(k, 1)
    clearance: float = 4.0

    def grid(self) -> LatticeGrid:
        return LatticeGrid(self.nx, self.ny, self.a, ABSORBING, PERIODIC)


@dataclass
class WallResult:
    k_x: float
    k_y: float
    transmission: float
    oracle: float
    run: ScatteringRun


def simulate_wall(k_x: float, setup: WallSetup = WallSetup(), params: PhysicalParams = PhysicalParams(),
                  k_y: float = 0.0) -> WallResult:
    """Send a y plane wave with wave vector (k_x, k_y) at a widthless wall."""
    g = setup.grid()
    a, sig = g.a, setup.sigma_x
    x_lo, x_hi, _, _ = g.extent
    n_abs = absorber_sites(g, setup.absorb_margin)
    x_start = x_lo + n_abs * a + setup.clearance * sig
    x_wall = snap_to_plaquette_x(g, x_start + 4.2 * sig)
    if x_wall >= x_hi - n_abs * a:
        raise ScatteringError("grid too short for the requested packet width")
    links = compile_gauge(UniformWall(setup.phi_B, x_wall), g, params)
    ham = build_hamiltonian(g, links, params, setup.absorb_ratio * hopping(g, params), setup.absorb_margin)
    state = gaussian_packet((x_start, g.y[0]), (k_x, k_y), (sig, None), g, params,
                            absorb_margin=setup.absorb_margin, clearance=setup.clearance)
    v = params.hbar * abs(k_x) / params.m
    sigma_k = 1.0 / (2 * sig)
    v_slow = params.hbar * max(abs(k_x) - 4 * sigma_k, 0.3 * abs(k_x)) / params.m
    t_end = (x_wall - x_start + 6 * sig) / v_slow + 2 * sig / v
    dt = setup.courant * a / max(abs(k_x), 1.0) * params.m / params.hbar
    nsteps = int(math.ceil(t_end / dt))
    run = scatter(ham, state, dt, nsteps, x_wall)
    return WallResult(k_x, k_y, run.transmission,
                      step_transmission_oracle(k_x, k_y, setup.phi_B, params), run)


def transmission_curve(ks, setup: WallSetup = WallSetup(), params: PhysicalParams = PhysicalParams()):
    return [simulate_wall(k, setup, params) for k in ks]


def half_transmission_momentum(setup: WallSetup = WallSetup(), params: PhysicalParams = PhysicalParams(),
                               bracket: tuple[float, float] | None = None, tol: float = 1e-3) -> float:
    """Incident momentum hbar*k at which simulated transmission crosses 0.5."""
    p_th = abs(params.q * setup.phi_B)
    if bracket is None:
        bracket = (0.9 * p_th / params.hbar, 1.2 * p_th / params.hbar)
    f = lambda k: simulate_wall(k, setup, params).transmission - 0.5
    k_half = brentq(f, *bracket, xtol=tol * p_th / params.hbar)
    return params.hbar * k_half


@dataclass
class MomentumAudit:
    """Canonical and kinematic transverse momentum before and after a wall."""
    P_y: tuple[float, float]
    p_y: tuple[float, float]
    prob_right: float
    max_P_y_drift: float
    oracle_T: float

    @property
    def kinematic_shift(self) -> float:
        return self.p_y[1] - self.p_y[0]


def wall_momentum_audit(k: tuple[float, float] = (3.0, 0.5), phi_B: float = 1.0,
                        params: PhysicalParams = PhysicalParams(), a: float = 0.1, nx: int = 800,
                        ny: int = 192, sigma: tuple[float, float] = (3.0, 2.0), x_start: float = 15.0,
                        x_wall: float = 30.0, travel: float = 42.0, courant: float = 0.5,
                        record_every: int = 10) -> MomentumAudit:
    """Track <P_y> and <p_y> while a packet crosses a widthless wall.

    Hard walls in x (no absorber, so the norm is exactly conserved) and a
    periodic y axis.  ``travel`` is the centroid displacement at the end.
    """
    g = LatticeGrid(nx, ny, a, HARD_WALL, PERIODIC)
    xw = snap_to_plaquette_x(g, x_wall)
    links = compile_gauge(UniformWall(phi_B, xw), g, params)
    ham = build_hamiltonian(g, links, params)
    y0 = g.y[ny // 2]
    state = gaussian_packet((x_start, y0), k, sigma, g, params)
    v = params.hbar * abs(k[0]) / params.m
    if x_start + travel + 4 * sigma[0] > g.extent[1]:
        raise ScatteringError("packet would reach the far x wall")
    dt = courant * a / max(abs(k[0]), 1.0) * params.m / params.hbar
    nsteps = int(math.ceil(travel / v / dt))
    run = scatter(ham, state, dt, nsteps, xw, record_every=record_every)
    Ps = [run.initial.P_y] + [r.P_y for _, r in run.history] + [run.final.P_y]
    drift = max(abs(P - run.initial.P_y) for P in Ps)
    return MomentumAudit((run.initial.P_y, run.final.P_y), (run.initial.p_y, run.final.p_y),
                         run.final.prob_right, drift,
                         step_transmission_oracle(k[0], k[1], phi_B, params))


# ---------------------------------------------------------------------------
# flux-line lattice diffraction


@dataclass(frozen=True)
class DiffractionSetup:
    L: float = 1.0
    periods: int = 8
    a: float = 1.0 / 16
    sigma_x: float = 2.0
    room: float = 10.0  # multiples of sigma_x in x, wall to wall
    courant: float = 0.5

    def grid(self) -> LatticeGrid:
        ny = int(round(self.periods * self.L / self.a))
        nx = int(round(self.room * self.sigma_x * 2.0 / self.a))
        return LatticeGrid(nx, ny, self.a, HARD_WALL, PERIODIC, 0.0, 0.0)


@dataclass
class Peak:
    order: int
    dp: float
    weight: float
    offset: float  # distance from the nearest comb tooth


@dataclass
class DiffractionSpectrum:
    peaks: list[Peak]
    bin_width: float
    dp: np.ndarray
    weight: np.ndarray
    transmitted: float

    def rows(self):
        return [(p.order, p.dp, p.weight) for p in self.peaks]

    def weight_of(self, order: int) -> float:
        return sum(p.weight for p in self.peaks if p.order == order)


def momentum_transfer_spectrum(state: QuantumState, links: LinkPhaseField, L: float, k_y: float,
                               Phi_B: float, params: PhysicalParams, x_min: float,
                               min_probability: float = 1e-3, noise_floor: float = 1e-3) -> DiffractionSpectrum:
    """Transverse kinematic momentum transfer of the part of ``state`` beyond ``x_min``.

    Orders follow dp = 2*pi*hbar*n/L - q*Phi_B/L.  Peaks are local maxima
    of the binned distribution holding more than ``noise_floor`` probability.
    """
    g = state.grid
    if not g.periodic_y:
        raise ValueError("diffraction spectra need a periodic y axis")
    part = np.where((g.x > x_min)[:, None], state.psi, 0.0)
    sub = QuantumState(part, g, state.params)
    if sub.norm2 < min_probability:
        raise ScatteringError(f"only {sub.norm2:.2e} probability beyond the lattice")
    k, w = momentum_distribution(sub, axis=1, links=links)
    hb = params.hbar
    bin_width = 2 * math.pi * hb / g.length_y
    dp = hb * k - hb * k_y
    # the grid is uniform in dp per column up to a column-wise shift; bin on it
    idx = np.round(dp / bin_width).astype(int)
    lo, hi = idx.min(), idx.max()
    weights = np.bincount((idx - lo).ravel(), weights=w.ravel(), minlength=hi - lo + 1)
    centers = (np.arange(lo, hi + 1)) * bin_width
    peaks = []
    for b in range(len(weights)):
        left = weights[b - 1] if b > 0 else 0.0
        right = weights[b + 1] if b + 1 < len(weights) else 0.0
        if weights[b] > noise_floor and weights[b] >= left and weights[b] >= right:
            # centroid of the bin's content keeps sub-bin offsets honest
            mask = idx == lo + b
            c = float((dp[mask] * w[mask]).sum() / w[mask].sum())
            n = int(round((c + params.q * Phi_B / L) * L / (2 * math.pi * hb)))
            off = c - float(momentum_comb(n, Phi_B, L, params))
            peaks.append(Peak(n, c, float(weights[b]), off))
    return DiffractionSpectrum(peaks, bin_width, centers, weights, sub.norm2)


@dataclass
class DiffractionResult:
    Phi_B: float
    spectrum: DiffractionSpectrum
    run: ScatteringRun
    x_lattice: float


def simulate_diffraction(Phi_B: float, k: tuple[float, float], setup: DiffractionSetup = DiffractionSetup(),
                         params: PhysicalParams = PhysicalParams()) -> DiffractionResult:
    """Send a y plane wave through a column of flux lines (spacing L, periodic y)."""
    g = setup.grid()
    sig = setup.sigma_x
    x_lo, x_hi, _, _ = g.extent
    x_start = x_lo + 4 * sig
    x_lat = snap_to_plaquette_x(g, x_start + 4 * sig)
    y0 = g.y_origin + 0.5 * g.a
    links = compile_gauge(FluxLineLattice(Phi_B, setup.L, x_lat, y0), g, params)
    ham = build_hamiltonian(g, links, params)
    state = gaussian_packet((x_start, g.y[0]), k, (sig, None), g, params)
    kx = abs(k[0])
    v = params.hbar * kx / params.m
    t_end = (x_lat - x_start + 5 * sig) / v
    front = x_start + v * t_end + 4 * sig
    if front > x_hi:
        raise ScatteringError("transmitted packet would reach the far wall; enlarge room")
    dt = setup.courant * g.a / max(kx, 1.0) * params.m / params.hbar
    nsteps = int(math.ceil(t_end / dt))
    run = scatter(ham, state, dt, nsteps, x_lat)
    spec = momentum_transfer_spectrum(run.state, links, setup.L, k[1], Phi_B, params, x_lat)
    return DiffractionResult(Phi_B, spec, run, x_lat)


def mirror_mismatch(a: DiffractionSpectrum, b: DiffractionSpectrum,
                    weight_tol: float = 1e-3) -> tuple[float, float]:
    """Worst position and weight mismatch between ``a`` and ``b`` mirrored (dp -> -dp).

    Every peak of either spectrum above ``weight_tol`` is matched to the
    nearest mirrored peak of the other.
    """
    worst_dp = worst_w = 0.0
    for x, y in ((a, b), (b, a)):
        for p in x.peaks:
            if p.weight < weight_tol:
                continue
            match = min(y.peaks, key=lambda q: abs(p.dp + q.dp), default=None)
            if match is None:
                return math.inf, math.inf
            worst_dp = max(worst_dp, abs(p.dp + match.dp))
            worst_w = max(worst_w, abs(p.weight - match.weight))
    return worst_dp, worst_w
