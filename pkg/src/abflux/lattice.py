"""Magnetic Schroedinger operator on a 2D lattice and its time evolution.

The Hamiltonian is the five-point stencil with Peierls phases,

    (H psi)(r) = t * [4 psi(r) - sum_d exp(-i theta(r -> r+d)) psi(r+d)],
    t = hbar^2 / (2 m a^2),

which is the lattice form of (P - qA)^2 / 2m.  Wave functions are arrays of
shape ``(nx, ny)``; the flattened site index is ``i * ny + j``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ABSORBING, LatticeGrid, LinkPhaseField, PhysicalParams

DEFAULT_ABSORB_MARGIN = 0.15


class SolverError(RuntimeError):
    """A linear or eigen solve failed to produce a usable result."""


def hopping(grid: LatticeGrid, params: PhysicalParams) -> float:
    return params.hbar**2 / (2.0 * params.m * grid.a**2)


def absorber_profile(grid: LatticeGrid, strength: float, margin: float = DEFAULT_ABSORB_MARGIN) -> np.ndarray:
    """Quadratic ramp W(x) >= 0 over ``margin * nx`` sites at each x end."""
    n = max(1, int(round(margin * grid.nx)))
    w = np.zeros(grid.nx)
    depth = (np.arange(n)[::-1] + 1.0) / n
    w[:n] = strength * depth**2
    w[-n:] = strength * depth[::-1] ** 2
    return w


def absorber_sites(grid: LatticeGrid, margin: float = DEFAULT_ABSORB_MARGIN) -> int:
    return max(1, int(round(margin * grid.nx)))


@dataclass(eq=False)
class LatticeHamiltonian:
    matrix: sp.csr_matrix
    grid: LatticeGrid
    params: PhysicalParams
    links: LinkPhaseField
    absorber: np.ndarray | None = None  # W(x) per column, H gets -iW

    @property
    def hermitian(self) -> bool:
        return self.absorber is None or not np.any(self.absorber)

    @property
    def dim(self) -> int:
        return self.grid.n_sites

    def hermiticity_residual(self) -> float:
        d = self.matrix - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return (self.matrix @ psi.ravel()).reshape(self.grid.shape)

    def hermitian_part(self) -> sp.csr_matrix:
        if self.hermitian:
            return self.matrix
        w = np.repeat(self.absorber, self.grid.ny)
        return (self.matrix + 1j * sp.diags(w)).tocsr()


def build_hamiltonian(grid: LatticeGrid, links: LinkPhaseField, params: PhysicalParams,
                      absorb_strength: float | None = None,
                      absorb_margin: float = DEFAULT_ABSORB_MARGIN) -> LatticeHamiltonian:
    """Assemble the sparse Peierls Hamiltonian.

    An ``absorbing-layer`` x boundary adds a -iW(x) quadratic ramp over
    ``absorb_margin`` of the columns on each side; ``absorb_strength`` is the
    peak W and defaults to ``default_absorb_strength``.
    """
    if links.grid != grid:
        raise ValueError("link field was compiled on a different grid")
    nx, ny = grid.shape
    t = hopping(grid, params)
    idx = np.arange(grid.n_sites).reshape(nx, ny)
    rows, cols, vals = [], [], []

    def add_links(src, dst, theta):
        h = -t * np.exp(-1j * theta)
        rows.extend((src.ravel(), dst.ravel()))
        cols.extend((dst.ravel(), src.ravel()))
        vals.extend((h.ravel(), np.conj(h).ravel()))

    if grid.periodic_x:
        add_links(idx, np.roll(idx, -1, axis=0), links.phase_x)
    else:
        add_links(idx[:-1], idx[1:], links.phase_x[:-1])
    if grid.periodic_y:
        add_links(idx, np.roll(idx, -1, axis=1), links.phase_y)
    else:
        add_links(idx[:, :-1], idx[:, 1:], links.phase_y[:, :-1])

    diag = np.full(grid.n_sites, 4.0 * t, dtype=complex)
    absorber = None
    if grid.boundary_x == ABSORBING:
        strength = default_absorb_strength(grid, params) if absorb_strength is None else absorb_strength
        absorber = absorber_profile(grid, strength, absorb_margin)
        diag -= 1j * np.repeat(absorber, ny)
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append(diag)
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.n_sites, grid.n_sites)).tocsr()
    m.sum_duplicates()
    return LatticeHamiltonian(m, grid, params, links, absorber)


def default_absorb_strength(grid: LatticeGrid, params: PhysicalParams) -> float:
    # a ramp of this height absorbs packets with k*a in roughly [0.1, 1]
    return 0.15 * hopping(grid, params)


# ---------------------------------------------------------------------------
# states


@dataclass(eq=False)
class QuantumState:
    psi: np.ndarray
    grid: LatticeGrid
    params: PhysicalParams

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != self.grid.shape:
            raise ValueError("amplitude array must have the grid shape")

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    @property
    def norm2(self) -> float:
        return float(self.density.sum() * self.grid.a**2)

    def normalized(self) -> "QuantumState":
        n2 = self.norm2
        if not n2 > 0 or not math.isfinite(n2):
            raise ValueError("state has zero or non-finite norm")
        return QuantumState(self.psi / math.sqrt(n2), self.grid, self.params)

    def inner(self, other: "QuantumState") -> complex:
        return complex(np.vdot(self.psi, other.psi) * self.grid.a**2)

    def copy(self) -> "QuantumState":
        return QuantumState(self.psi.copy(), self.grid, self.params)

    def regauge(self, chi: np.ndarray) -> "QuantumState":
        return QuantumState(self.psi * np.exp(1j * chi), self.grid, self.params)

    def centroid(self) -> tuple[float, float]:
        X, Y = self.grid.mesh()
        rho = self.density
        s = rho.sum()
        return float((X * rho).sum() / s), float((Y * rho).sum() / s)

    def widths(self) -> tuple[float, float]:
        X, Y = self.grid.mesh()
        rho = self.density / self.density.sum()
        cx, cy = (X * rho).sum(), (Y * rho).sum()
        return (float(np.sqrt(((X - cx) ** 2 * rho).sum())),
                float(np.sqrt(((Y - cy) ** 2 * rho).sum())))

    def probability_in(self, x1: float, x2: float, y1: float = -np.inf, y2: float = np.inf) -> float:
        X, Y = self.grid.mesh()
        mask = (X > x1) & (X < x2) & (Y > y1) & (Y < y2)
        return float(self.density[mask].sum() * self.grid.a**2)


def transport_phase(links: LinkPhaseField, i0: int, j0: int) -> np.ndarray:
    """Site phases accumulated by parallel transport from site (i0, j0).

    Transport runs along row j0 first and then up/down each column, so
    ``exp(i * phase) * f`` has small covariant derivative wherever ``f``
    is smooth.  Wrap-around links are never used.
    """
    nx, ny = links.grid.shape
    lam = np.zeros((nx, ny))
    tx, ty = links.phase_x, links.phase_y
    row = np.zeros(nx)
    row[i0 + 1:] = np.cumsum(tx[i0:nx - 1, j0])
    row[:i0] = -np.cumsum(tx[:i0, j0][::-1])[::-1]
    lam[:, j0] = row
    if j0 + 1 < ny:
        lam[:, j0 + 1:] = row[:, None] + np.cumsum(ty[:, j0:ny - 1], axis=1)
    if j0 > 0:
        lam[:, :j0] = row[:, None] - np.cumsum(ty[:, :j0][:, ::-1], axis=1)[:, ::-1]
    return lam


def gaussian_packet(center: tuple[float, float], k: tuple[float, float],
                    sigma: tuple[float, float | None], grid: LatticeGrid, params: PhysicalParams,
                    transverse_mode: bool = False, links: LinkPhaseField | None = None,
                    clearance: float = 4.0, absorb_margin: float = DEFAULT_ABSORB_MARGIN,
                    coherent_B: float | None = None) -> QuantumState:
    """Normalized Gaussian packet with mean wave vector ``k``.

    ``sigma`` are standard deviations of |psi|^2.  ``sigma[1] = None`` gives
    a plane wave along a periodic y axis; ``transverse_mode`` replaces the y
    profile by the ground mode of the hard-wall y box.  With ``links`` the
    packet is parallel-transported from its centre so that ``k`` is its
    kinematic wave vector in any gauge.  Transport runs along x first, which
    leaves the packet in an axial gauge about its centre; ``coherent_B`` adds
    the phase that turns it into the symmetric-gauge (non-spreading) coherent
    state of a uniform field B when ``sigma`` equals the magnetic length.
    """
    xc, yc = center
    sx, sy = sigma
    a = grid.a
    x_lo, x_hi, y_lo, y_hi = grid.extent
    if grid.boundary_x == ABSORBING:
        n = absorber_sites(grid, absorb_margin)
        x_lo, x_hi = x_lo + n * a, x_hi - n * a
    if sx < 2 * a:
        raise ValueError(f"sigma_x={sx} must be at least two lattice spacings")
    if xc - clearance * sx < x_lo or xc + clearance * sx > x_hi:
        raise ValueError("packet clipped by the x boundary")
    X, Y = grid.mesh()
    psi = np.exp(-((X - xc) ** 2) / (4 * sx**2) + 1j * k[0] * (X - xc))
    if transverse_mode:
        if grid.periodic_y:
            raise ValueError("transverse box mode needs a hard-wall y boundary")
        width = grid.length_y
        psi = psi * np.sqrt(2.0 / width) * np.cos(np.pi * (Y - 0.5 * (y_lo + y_hi)) / width)
        psi = psi * np.exp(1j * k[1] * (Y - yc))
    elif sy is None:
        if not grid.periodic_y:
            raise ValueError("a y plane wave needs a periodic y boundary")
        n = k[1] * grid.length_y / (2 * np.pi)
        if abs(n - round(n)) > 1e-9:
            raise ValueError("k_y is not commensurate with the periodic y length")
        psi = psi * np.exp(1j * k[1] * (Y - yc))
    else:
        if sy < 2 * a:
            raise ValueError(f"sigma_y={sy} must be at least two lattice spacings")
        if not grid.periodic_y and (yc - clearance * sy < y_lo or yc + clearance * sy > y_hi):
            raise ValueError("packet clipped by the y boundary")
        if grid.periodic_y and 2 * clearance * sy > grid.length_y:
            raise ValueError("packet wider than the periodic y cell")
        psi = psi * np.exp(-((Y - yc) ** 2) / (4 * sy**2) + 1j * k[1] * (Y - yc))
    if links is not None:
        i0 = int(np.clip(round((xc - grid.x_origin) / a), 0, grid.nx - 1))
        j0 = int(np.clip(round((yc - grid.y_origin) / a), 0, grid.ny - 1))
        if coherent_B is not None:
            xs, ys = grid.x_origin + i0 * a, grid.y_origin + j0 * a
            psi = psi * np.exp(-0.5j * params.q * coherent_B * (X - xs) * (Y - ys) / params.hbar)
        psi = psi * np.exp(1j * transport_phase(links, i0, j0))
    elif coherent_B is not None:
        raise ValueError("coherent_B needs the link field")
    return QuantumState(psi, grid, params).normalized()


# ---------------------------------------------------------------------------
# time evolution


class CayleyPropagator:
    """One implicit step psi -> (1 + i tau H)^-1 (1 - i tau H) psi, tau = dt/(2 hbar).

    For a Hermitian H the map is unitary, so norm and <H> are conserved to
    round-off.  Operators that are translation invariant along a periodic y
    axis are solved mode by mode after a y-FFT; this is the same linear map,
    just block-diagonalised.
    """

    def __init__(self, ham: LatticeHamiltonian, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.ham = ham
        self.dt = dt
        self.tau = dt / (2.0 * ham.params.hbar)
        grid = ham.grid
        self.modal = grid.periodic_y and ham.links.is_y_uniform()
        if self.modal:
            m = self._modal_operator()
        else:
            m = ham.matrix
        eye = sp.identity(m.shape[0], dtype=complex, format="csc")
        self._rhs = (eye - 1j * self.tau * m).tocsr()
        try:
            self._lu = spla.splu((eye + 1j * self.tau * m).tocsc())
        except RuntimeError as exc:
            raise SolverError(f"factorisation failed: {exc}") from exc

    def _modal_operator(self) -> sp.csr_matrix:
        """Block-diagonal H in (k_y mode, i) ordering."""
        ham, grid = self.ham, self.ham.grid
        nx, ny = grid.shape
        t = hopping(grid, ham.params)
        ka = 2 * np.pi * np.fft.fftfreq(ny)
        theta_y = ham.links.phase_y[:, 0]
        theta_x = ham.links.phase_x[:, 0]
        diag = 4 * t - 2 * t * np.cos(ka[:, None] - theta_y[None, :])
        if ham.absorber is not None:
            diag = diag - 1j * ham.absorber[None, :]
        off = np.broadcast_to(-t * np.exp(-1j * theta_x[:-1]), (ny, nx - 1))
        n = nx * ny
        upper = np.zeros((ny, nx), dtype=complex)
        upper[:, :-1] = off
        lower = np.zeros((ny, nx), dtype=complex)
        lower[:, 1:] = np.conj(off)
        # zero the couplings across block boundaries
        return sp.diags([lower.ravel()[1:], diag.ravel(), upper.ravel()[:-1]], [-1, 0, 1],
                        shape=(n, n), format="csr")

    def step(self, psi: np.ndarray) -> np.ndarray:
        nx, ny = self.ham.grid.shape
        if self.modal:
            v = np.fft.fft(psi, axis=1).T.ravel()
            v = self._lu.solve(self._rhs @ v)
            out = np.fft.ifft(v.reshape(ny, nx).T, axis=1)
        else:
            out = self._lu.solve(self._rhs @ psi.ravel()).reshape(nx, ny)
        if not np.all(np.isfinite(out)):
            raise SolverError("linear solve produced non-finite amplitudes")
        return out


def evolve(state: QuantumState, ham: LatticeHamiltonian, dt: float, nsteps: int,
           propagator: CayleyPropagator | None = None,
           callback: Callable[[int, QuantumState], None] | None = None) -> QuantumState:
    """Advance ``nsteps`` Cayley steps; ``callback(step, state)`` sees every step."""
    if state.grid != ham.grid:
        raise ValueError("state and Hamiltonian live on different grids")
    if propagator is None:
        propagator = CayleyPropagator(ham, dt)
    elif propagator.ham is not ham or propagator.dt != dt:
        raise ValueError("propagator was built for a different operator or dt")
    psi = state.psi.copy()
    for n in range(1, nsteps + 1):
        psi = propagator.step(psi)
        if callback is not None:
            callback(n, QuantumState(psi, state.grid, state.params))
    return QuantumState(psi, state.grid, state.params)


# ---------------------------------------------------------------------------
# observables


def _axis_spectrum(psi: np.ndarray, theta: np.ndarray | None, a: float, periodic: bool, axis: int):
    """Momentum weights along one axis, per line of the other axis.

    With ``theta`` (link phases along the axis) the amplitude is parallel
    transported first, which yields the kinematic momentum; without it the
    canonical one.  Open axes get one ghost zero appended so the transform
    sees the wall.  Returns (k, weights) with weights summing to sum|psi|^2.
    """
    if axis == 0:
        psi = psi.T
        theta = None if theta is None else theta.T
    if theta is not None:
        lam = np.zeros(psi.shape)
        lam[:, 1:] = np.cumsum(theta[:, :-1], axis=1)
        psi = psi * np.exp(-1j * lam)
    if periodic:
        n = psi.shape[1]
        k = np.broadcast_to(2 * np.pi * np.fft.fftfreq(n, d=a), psi.shape)
        if theta is not None:
            total = lam[:, -1] + theta[:, -1]
            psi = psi * np.exp(1j * np.outer(total, np.arange(n)) / n)
            k = k - total[:, None] / (n * a)
            k = (k + np.pi / a) % (2 * np.pi / a) - np.pi / a
    else:
        psi = np.concatenate([psi, np.zeros((psi.shape[0], 1))], axis=1)
        n = psi.shape[1]
        k = np.broadcast_to(2 * np.pi * np.fft.fftfreq(n, d=a), psi.shape)
    w = np.abs(np.fft.fft(psi, axis=1)) ** 2 / n
    return k, w


def momentum_distribution(state: QuantumState, axis: int, links: LinkPhaseField | None = None):
    """(k, weight) arrays of shape (lines, n); kinematic if ``links`` is given."""
    g = state.grid
    theta = None
    if links is not None:
        theta = links.phase_x if axis == 0 else links.phase_y
    periodic = g.periodic_x if axis == 0 else g.periodic_y
    k, w = _axis_spectrum(state.psi, theta, g.a, periodic, axis)
    return k, w * g.a**2


def _moments(state: QuantumState, axis: int, links: LinkPhaseField | None):
    k, w = momentum_distribution(state, axis, links)
    total = w.sum()
    hb = state.params.hbar
    return hb * float((k * w).sum() / total), hb**2 * float((k**2 * w).sum() / total)


def mean_momentum(state: QuantumState, links: LinkPhaseField | None = None) -> tuple[float, float]:
    """Mean momentum per unit norm: kinematic with ``links``, canonical without."""
    return _moments(state, 0, links)[0], _moments(state, 1, links)[0]


@dataclass
class ObservableReport:
    norm2: float
    energy: float
    P_x: float
    P_x2: float
    P_y: float
    P_y2: float
    p_x: float
    p_x2: float
    p_y: float
    p_y2: float
    prob_left: float
    prob_right: float
    centroid: tuple[float, float] = (0.0, 0.0)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def measure(state: QuantumState, ham: LatticeHamiltonian, divider: float | None = None) -> ObservableReport:
    """Energy, canonical (P) and kinematic (p) momentum moments, region probabilities.

    Expectation values are per unit norm; probabilities are absolute
    (sum |psi|^2 a^2 left/right of ``divider``).
    """
    g = state.grid
    n2 = state.norm2
    h = ham.hermitian_part()
    v = state.psi.ravel()
    energy = float(np.real(np.vdot(v, h @ v)) * g.a**2 / n2)
    Px, Px2 = _moments(state, 0, None)
    Py, Py2 = _moments(state, 1, None)
    px, px2 = _moments(state, 0, ham.links)
    py, py2 = _moments(state, 1, ham.links)
    if divider is None:
        divider = 0.5 * (g.extent[0] + g.extent[1])
    right = float(state.density[g.x > divider].sum() * g.a**2)
    left = float(state.density[g.x <= divider].sum() * g.a**2)
    return ObservableReport(n2, energy, Px, Px2, Py, Py2, px, px2, py, py2, left, right,
                            state.centroid())


def crossing_blocked(Px2_i: float, Py_i: float, phi_B: float, params: PhysicalParams) -> bool:
    """True when the incident moments cannot pay for a full wall crossing."""
    q = params.q
    return Px2_i < q**2 * phi_B**2 - 2 * q * phi_B * Py_i


def perturbative_energy_increase(psi_y0: float, eps: float, params: PhysicalParams, a: float) -> float:
    """Energy cost of a weak flux line (flux ``eps``) cutting a transverse mode.

    ``psi_y0`` is the transverse amplitude at the cut; the squared delta
    function is regularised on the lattice as delta(0) = 1/a.
    """
    return (eps**2 * params.q**2 / (2 * params.m)) * abs(psi_y0) ** 2 / a


# ---------------------------------------------------------------------------
# snapshot export


def write_snapshot(state: QuantumState, path: str | Path, t: float = 0.0,
                   report: ObservableReport | None = None, fmt: str = "csv") -> tuple[Path, Path]:
    """Write |psi|^2 as CSV (or .npy) plus a JSON sidecar with grid metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        data = path.with_suffix(".csv")
        np.savetxt(data, state.density, delimiter=",", fmt="%.17g")
    elif fmt == "npy":
        data = path.with_suffix(".npy")
        np.save(data, state.density)
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    meta = {"grid": state.grid.to_dict(), "params": asdict(state.params), "time": t,
            "layout": "rows are x index, columns are y index", "data": data.name}
    if report is not None:
        meta["observables"] = report.to_dict()
    side = path.with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return data, side
