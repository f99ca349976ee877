"""Low-lying eigenpairs of lattice Hamiltonians.

Covers the two-flux-line cavity (topological bound states) and Landau levels
recovered from a grid of thin flux lines.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as sla

from .core import (FluxGrid, GaugeError, LatticeGrid, LinkPhaseField, PhysicalParams,
                   centered_flux, compile_flux_lines, compile_gauge)
from .lattice import LatticeHamiltonian, QuantumState, SolverError, build_hamiltonian, hopping

RESIDUAL_TOL = 1e-8


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenstates: list[QuantumState]
    residuals: np.ndarray
    localization: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)

    def overlap_matrix(self) -> np.ndarray:
        V = np.stack([s.psi.ravel() for s in self.eigenstates], axis=1)
        a2 = self.eigenstates[0].grid.a ** 2
        return V.conj().T @ V * a2

    def localize(self, name: str, region: tuple[float, float, float, float]) -> np.ndarray:
        """Probability of each eigenstate inside the open rectangle ``region``."""
        x1, x2, y1, y2 = region
        p = np.array([s.probability_in(x1, x2, y1, y2) for s in self.eigenstates])
        self.localization[name] = p
        return p

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(e) for e in self.eigenvalues],
            "residuals": [float(r) for r in self.residuals],
            "localization": {k: [float(x) for x in v] for k, v in self.localization.items()},
            "metadata": self.metadata,
        }

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    def write_states(self, path: str | Path) -> Path:
        """Dump eigenstate amplitudes as an (k, nx, ny) complex .npy array."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, np.stack([s.psi for s in self.eigenstates]))
        return path


def lowest_eigenpairs(ham: LatticeHamiltonian, k: int, sigma: float | None = None, seed: int = 0,
                      maxiter: int | None = None, tol: float = 0.0) -> SpectrumResult:
    """The k lowest eigenpairs via shift-invert Lanczos below the spectrum.

    The spectrum of the lattice operator is non-negative, so a shift slightly
    below zero makes the lowest states the dominant ones of the inverse.  The
    converged subspace is polished by a Rayleigh-Ritz step so the states are
    orthonormal to machine precision.
    """
    if not ham.hermitian:
        raise ValueError("eigensolver needs a Hermitian Hamiltonian (no absorbing layer)")
    n = ham.dim
    if not 0 < k < n - 1:
        raise ValueError(f"k must be in [1, {n - 2}]")
    t = hopping(ham.grid, ham.params)
    if sigma is None:
        sigma = -1e-3 * t
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    H = ham.matrix.astype(complex)
    try:
        w, V = sla.eigsh(H, k=k, sigma=sigma, which="LM", v0=v0, maxiter=maxiter, tol=tol)
    except sla.ArpackNoConvergence as exc:
        raise SolverError(f"eigensolver did not converge ({len(exc.eigenvalues)} of {k} pairs)") from exc
    Q, _ = np.linalg.qr(V)
    Hk = Q.conj().T @ (H @ Q)
    w, U = la.eigh(0.5 * (Hk + Hk.conj().T))
    V = Q @ U
    res = np.linalg.norm(H @ V - V * w, axis=0)
    if np.any(res > RESIDUAL_TOL):
        raise SolverError(f"eigen residual {res.max():.2e} above tolerance")
    a = ham.grid.a
    states = [QuantumState((V[:, i] / a).reshape(ham.grid.shape), ham.grid, ham.params) for i in range(k)]
    # residuals reported for unit-norm states in the physical normalisation
    return SpectrumResult(np.asarray(w), states, res, metadata={"k": k, "sigma": sigma, "seed": seed})


# ---------------------------------------------------------------------------
# analytic references


def box_ground_energy(L_cav: float, D: float, params: PhysicalParams) -> float:
    if not (L_cav > 0 and D > 0):
        raise ValueError("box sides must be positive")
    c = math.pi**2 * params.hbar**2 / (2 * params.m)
    return c / L_cav**2 + c / D**2


def crossing_energy(L_cav: float, phi_B: float, params: PhysicalParams) -> float:
    if not L_cav > 0:
        raise ValueError("cavity width must be positive")
    return (math.pi**2 * params.hbar**2 / (2 * params.m * L_cav**2)
            + (params.q * phi_B) ** 2 / (2 * params.m))


def bound_state_threshold(phi_B: float, params: PhysicalParams) -> float:
    """Wall separation above which bound states are guaranteed."""
    if phi_B == 0:
        return math.inf
    return math.pi * params.hbar / abs(params.q * phi_B)


def bound_states_exist(D: float, phi_B: float, params: PhysicalParams) -> bool:
    return D > bound_state_threshold(phi_B, params)


def landau_reference(B: float, params: PhysicalParams, n_max: int) -> list[float]:
    if B == 0:
        raise ValueError("Landau levels need a non-zero field")
    wc = abs(params.q * B) / params.m
    return [params.hbar * wc * (n + 0.5) for n in range(n_max + 1)]


def magnetic_length(B: float, params: PhysicalParams) -> float:
    return math.sqrt(params.hbar / abs(params.q * B))


# ---------------------------------------------------------------------------
# two-flux-line cavity


@dataclass(frozen=True)
class CavityConfig:
    """Channel of width L_cav with flux lines Phi_B at (+-D/2, 0) on its axis.

    The channel is closed by hard walls ``outer`` beyond each flux line.
    Resolution is ``a`` (sites per unit length 1/a); L_cav/a must be odd so
    the axis falls on plaquette centres.
    """
    L_cav: float = 1.0
    D: float = 2.0
    Phi_B: float = math.pi
    a: float = 1.0 / 33
    outer: float = 1.5

    def __post_init__(self):
        if not (self.L_cav > 0 and self.D > 0 and self.a > 0 and self.outer > 0):
            raise ValueError("cavity dimensions must be positive")

    @property
    def phi_B(self) -> float:
        return self.Phi_B / self.L_cav

    def grid(self) -> LatticeGrid:
        lx = self.D + 2 * self.outer
        return LatticeGrid.box(lx, self.L_cav, self.a, x0=-lx / 2, y0=-self.L_cav / 2)

    def links(self, params: PhysicalParams) -> LinkPhaseField:
        g = self.grid()
        pos = [(-self.D / 2, 0.0), (self.D / 2, 0.0)]
        pos = [g.nearest_plaquette_center(*p) for p in pos]
        if any(abs(py) > 1e-9 for _, py in pos):
            raise GaugeError("flux lines must sit on the cavity axis; choose L_cav/a odd")
        return compile_flux_lines(pos, [self.Phi_B, self.Phi_B], g, params)

    def inter_flux_region(self, params: PhysicalParams) -> tuple[float, float, float, float]:
        g = self.grid()
        x1 = g.nearest_plaquette_center(-self.D / 2, 0.0)[0]
        x2 = g.nearest_plaquette_center(self.D / 2, 0.0)[0]
        return (x1, x2, -self.L_cav / 2, self.L_cav / 2)


@dataclass
class BoundStateReport:
    spectrum: SpectrumResult
    crossing_energy: float
    threshold_D: float
    bound_index: int | None

    @property
    def found(self) -> bool:
        return self.bound_index is not None

    def to_dict(self) -> dict:
        d = self.spectrum.to_dict()
        d.update(crossing_energy=self.crossing_energy, threshold_D=self.threshold_D,
                 bound_index=self.bound_index, found=self.found)
        return d


def cavity_spectrum(cfg: CavityConfig, params: PhysicalParams = PhysicalParams(), k: int = 10,
                    min_inside: float = 0.9, seed: int = 0) -> BoundStateReport:
    """Solve the cavity and flag the lowest sub-threshold state localised between the lines."""
    g = cfg.grid()
    ham = build_hamiltonian(g, cfg.links(params), params)
    spec = lowest_eigenpairs(ham, k, seed=seed)
    inside = spec.localize("inter_flux", cfg.inter_flux_region(params))
    e_cross = crossing_energy(cfg.L_cav, cfg.phi_B, params)
    hit = [i for i in range(k) if spec.eigenvalues[i] < e_cross and inside[i] >= min_inside]
    spec.metadata.update(L_cav=cfg.L_cav, D=cfg.D, Phi_B=cfg.Phi_B, a=cfg.a, outer=cfg.outer,
                         grid=g.to_dict())
    return BoundStateReport(spec, e_cross, bound_state_threshold(cfg.phi_B, params),
                            hit[0] if hit else None)


# ---------------------------------------------------------------------------
# Landau levels from a flux grid


@dataclass
class LandauResult:
    spectrum: SpectrumResult
    B_eff: float
    levels: np.ndarray
    reference: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        n = min(len(self.levels), len(self.reference))
        return np.abs(self.levels[:n] - self.reference[:n]) / self.reference[:n]

    def to_dict(self) -> dict:
        d = self.spectrum.to_dict()
        d.update(B_eff=self.B_eff, levels=[float(x) for x in self.levels],
                 reference=[float(x) for x in self.reference],
                 relative_errors=[float(x) for x in self.errors])
        return d


def flux_grid_spectrum(Phi_B: float, L: float, domain: float, params: PhysicalParams = PhysicalParams(),
                       k: int = 60, a: float | None = None, seed: int = 0) -> SpectrumResult:
    """Eigenpairs of a hard-wall square of side ``domain`` threaded by a flux grid.

    Lines of flux Phi_B sit on a square grid of spacing L (centred in the
    box); the effective field is Phi_B / L^2 using the flux reduced to
    (-Phi0/2, Phi0/2).
    """
    if a is None:
        a = L / 2
    spec_g = FluxGrid(Phi_B, L)
    if abs(centered_flux(Phi_B, params)) >= abs(params.fluxon) / 2:
        raise GaugeError("flux-grid lines must carry less than half a fluxon (mod Phi0)")
    g = LatticeGrid.box(domain, domain, a, x0=-domain / 2, y0=-domain / 2)
    links = compile_gauge(spec_g, g, params)
    ham = build_hamiltonian(g, links, params)
    spec = lowest_eigenpairs(ham, k, seed=seed)
    spec.metadata.update(Phi_B=Phi_B, L=L, domain=domain, a=a,
                         B_eff=spec_g.effective_B(params), grid=g.to_dict())
    return spec


def landau_levels(spec: SpectrumResult, B: float, params: PhysicalParams, n_levels: int = 3,
                  bulk_margin: float | None = None, bulk_fraction: float = 0.3) -> np.ndarray:
    """Distinct bulk Landau levels from a finite-box spectrum.

    Edge states fill the gaps of a finite box, so only states with at least
    ``bulk_fraction`` of their weight further than ``bulk_margin`` (default
    3 magnetic lengths) from every wall are kept.  Degenerate bulk states mix
    freely, so the fraction is set well below one but far above what an edge
    state carries.  Their energies are then
    clustered: a gap larger than a third of hbar*omega_c starts a new level,
    and each level is the median of its cluster.
    """
    g = spec.eigenstates[0].grid
    lb = magnetic_length(B, params)
    margin = 3 * lb if bulk_margin is None else bulk_margin
    x_lo, x_hi, y_lo, y_hi = g.extent
    region = (x_lo + margin, x_hi - margin, y_lo + margin, y_hi - margin)
    if region[0] >= region[1] or region[2] >= region[3]:
        raise ValueError("domain too small for the bulk margin")
    inside = spec.localize("bulk", region)
    e = np.sort(spec.eigenvalues[inside >= bulk_fraction])
    if len(e) == 0:
        return np.array([])
    hw = params.hbar * abs(params.q * B) / params.m
    splits = np.where(np.diff(e) > hw / 3)[0] + 1
    clusters = np.split(e, splits)
    return np.array([float(np.median(c)) for c in clusters[:n_levels]])


def landau_from_flux_grid(B: float, L: float, domain: float = 10.0,
                          params: PhysicalParams = PhysicalParams(), k: int = 60,
                          a: float | None = None, n_levels: int = 3, seed: int = 0) -> LandauResult:
    """Flux-grid spectrum at target field B and its lowest distinct bulk levels."""
    Phi_B = B * L**2
    spec = flux_grid_spectrum(Phi_B, L, domain, params, k=k, a=a, seed=seed)
    levels = landau_levels(spec, B, params, n_levels)
    ref = np.array(landau_reference(B, params, n_levels - 1))
    spec.metadata["levels"] = [float(x) for x in levels]
    return LandauResult(spec, Phi_B / L**2, levels, ref)
