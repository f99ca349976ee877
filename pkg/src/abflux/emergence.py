"""Lorentz force from Aharonov-Bohm kicks.

A smooth field B(x, y) z_hat is cut into small cells; each cell's flux is
shared by an M x N block of thin flux lines.  A charge that crosses n1 of
the M rows (moving in y) and n2 of the N columns (moving in x) picks up

    dp_x = q B (n1/M) dy,    dp_y = -q B (n2/N) dx,

which summed along a path is q v x B integrated in time.  The quantum
experiment evolves a packet through such a flux-line field and compares the
coarse-grained d<p>/dt with q <v> x B.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import GaugeError, LatticeGrid, PhysicalParams, compile_flux_lines
from .lattice import (CayleyPropagator, QuantumState, build_hamiltonian, gaussian_packet,
                      mean_momentum)

FieldFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class EmergenceError(ValueError):
    """Packet spread constraints cannot be met on the requested grid."""


@dataclass(frozen=True)
class CellDecomposition:
    """Midpoint-sampled cell fluxes on [x0, x1] x [y0, y1].

    ``flux[i, j]`` belongs to the cell with lower-left corner
    (x0 + i*dx, y0 + j*dy); each cell carries M horizontal and N vertical
    layers of flux lines.
    """
    x0: float
    y0: float
    dx: float
    dy: float
    M: int
    N: int
    flux: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.flux.shape

    @property
    def total_flux(self) -> float:
        return float(self.flux.sum())

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return self.x0 + (i + 0.5) * self.dx, self.y0 + (j + 0.5) * self.dy

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        i = int(math.floor((x - self.x0) / self.dx))
        j = int(math.floor((y - self.y0) / self.dy))
        nx, ny = self.shape
        return min(max(i, 0), nx - 1), min(max(j, 0), ny - 1)

    def cell_field(self, i: int, j: int) -> float:
        return float(self.flux[i, j] / (self.dx * self.dy))

    def flux_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions (K, 2) and fluxes (K,) of the M x N lines in every cell."""
        nx, ny = self.shape
        sx = (np.arange(self.N) + 0.5) * self.dx / self.N
        sy = (np.arange(self.M) + 0.5) * self.dy / self.M
        X = (self.x0 + np.arange(nx)[:, None] * self.dx + sx[None, :]).ravel()
        Y = (self.y0 + np.arange(ny)[:, None] * self.dy + sy[None, :]).ravel()
        XX, YY = np.meshgrid(X, Y, indexing="ij")
        per = np.repeat(np.repeat(self.flux / (self.M * self.N), self.N, axis=0), self.M, axis=1)
        return np.column_stack([XX.ravel(), YY.ravel()]), per.ravel()


def _cells(extent: float, step: float, what: str) -> int:
    n = extent / step
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        raise ValueError(f"{what} does not hold an integer number of cells")
    return int(round(n))


def decompose_field(B: FieldFn, domain: tuple[float, float, float, float], dx: float, dy: float,
                    M: int, N: int, params: PhysicalParams) -> CellDecomposition:
    """Cut ``B`` on ``domain`` = (x0, x1, y0, y1) into dx x dy cells of M x N lines."""
    if not (dx > 0 and dy > 0):
        raise ValueError("cell sizes must be positive")
    if M < 1 or N < 1:
        raise ValueError("each cell needs at least one layer per direction")
    x0, x1, y0, y1 = domain
    nx = _cells(x1 - x0, dx, "x extent")
    ny = _cells(y1 - y0, dy, "y extent")
    xc = x0 + (np.arange(nx) + 0.5) * dx
    yc = y0 + (np.arange(ny) + 0.5) * dy
    Bc = np.broadcast_to(np.asarray(B(xc[:, None], yc[None, :]), dtype=float), (nx, ny))
    if not np.all(np.isfinite(Bc)):
        raise ValueError("field is not bounded on the domain")
    flux = Bc * dx * dy
    per_point = np.abs(flux) / (M * N)
    if np.any(per_point >= abs(params.fluxon) / 2):
        raise GaugeError("flux per line must stay below half a fluxon")
    return CellDecomposition(x0, y0, dx, dy, M, N, flux.copy())


# ---------------------------------------------------------------------------
# kick bookkeeping


def cell_kick(cell: tuple[float, float, float], n1: int, n2: int, M: int, N: int,
              params: PhysicalParams) -> tuple[float, float]:
    """Kinematic momentum change from crossing n1 of M rows and n2 of N columns.

    ``cell`` is (B, dx, dy).  Counts are signed by direction (+y for n1,
    +x for n2).
    """
    B, dx, dy = cell
    if abs(n1) > M or abs(n2) > N:
        raise ValueError(f"crossing counts ({n1}, {n2}) exceed the layers ({M}, {N})")
    q = params.q
    return q * B * (n1 / M) * dy, -q * B * (n2 / N) * dx


def emergent_force(v: tuple[float, float], B: float, params: PhysicalParams) -> tuple[float, float]:
    """q v x B for B along z."""
    return params.q * B * v[1], -params.q * B * v[0]


@dataclass
class KickLedger:
    """Per-cell signed crossing counts and the momentum they deliver."""
    decomposition: CellDecomposition
    n1: np.ndarray = None
    n2: np.ndarray = None
    dp: np.ndarray = None

    def __post_init__(self):
        shape = self.decomposition.shape
        self.n1 = np.zeros(shape, dtype=int) if self.n1 is None else self.n1
        self.n2 = np.zeros(shape, dtype=int) if self.n2 is None else self.n2
        self.dp = np.zeros(shape + (2,)) if self.dp is None else self.dp

    def record(self, i: int, j: int, n1: int, n2: int, params: PhysicalParams):
        """Book one pass through cell (i, j)."""
        d = self.decomposition
        kick = cell_kick((d.cell_field(i, j), d.dx, d.dy), n1, n2, d.M, d.N, params)
        self.n1[i, j] += n1
        self.n2[i, j] += n2
        self.dp[i, j] += kick

    @property
    def total(self) -> tuple[float, float]:
        return float(self.dp[..., 0].sum()), float(self.dp[..., 1].sum())

    @classmethod
    def from_path(cls, decomposition: CellDecomposition, xs, ys, params: PhysicalParams) -> "KickLedger":
        """Count layer crossings along the polyline (xs, ys)."""
        d = decomposition
        led = cls(d)
        hx, hy = d.dx / d.N, d.dy / d.M
        # layers sit at the sub-cell centres, i.e. offset by half a sub-spacing
        ux = lambda x: (x - d.x0) / hx - 0.5
        uy = lambda y: (y - d.y0) / hy - 0.5
        for xa, ya, xb, yb in zip(xs[:-1], ys[:-1], xs[1:], ys[1:]):
            for (x1, y1, x2, y2) in _split_at_cells(d, xa, ya, xb, yb):
                i, j = d.cell_of(0.5 * (x1 + x2), 0.5 * (y1 + y2))
                n2 = math.floor(ux(x2)) - math.floor(ux(x1))
                n1 = math.floor(uy(y2)) - math.floor(uy(y1))
                if n1 or n2:
                    led.record(i, j, n1, n2, params)
        return led


def _split_at_cells(d: CellDecomposition, xa, ya, xb, yb):
    """Break a straight segment at cell boundaries."""
    ts = [0.0, 1.0]
    for start, delta, step, origin in ((xa, xb - xa, d.dx, d.x0), (ya, yb - ya, d.dy, d.y0)):
        if delta == 0:
            continue
        lo, hi = sorted((start, start + delta))
        k0 = math.ceil((lo - origin) / step)
        k1 = math.floor((hi - origin) / step)
        for k in range(k0, k1 + 1):
            t = (origin + k * step - start) / delta
            if 0 < t < 1:
                ts.append(t)
    ts = sorted(set(ts))
    pts = [(xa + t * (xb - xa), ya + t * (yb - ya)) for t in ts]
    return [(p[0], p[1], r[0], r[1]) for p, r in zip(pts[:-1], pts[1:])]


# ---------------------------------------------------------------------------
# quantum experiment


@dataclass(frozen=True)
class EmergenceConfig:
    """Packet in B(x, y) = B0 (1 + alpha x) built from flux lines of spacing L.

    The packet starts at the top of the classical orbit centred on
    ``orbit_center`` with speed ``speed`` along +x (for q B > 0) and
    probability width ``sigma`` (default: the magnetic length, which keeps
    the packet coherent).
    """
    B0: float = 1.0
    alpha: float = 0.0
    L: float = 0.05
    a: float = 0.025
    domain: float = 10.0
    cell: float = 0.5
    speed: float = 1.0
    sigma: float | None = None
    orbit_center: tuple[float, float] = (0.0, 0.0)
    duration: float | None = None  # default one cyclotron period
    dt: float = 0.025
    window_crossings: int = 10
    min_spacings: float = 8.0
    max_spread_ratio: float = 0.5

    def field(self) -> FieldFn:
        B0, al = self.B0, self.alpha
        return lambda x, y: B0 * (1.0 + al * x) + 0.0 * y

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EmergenceReport:
    config: EmergenceConfig
    t: np.ndarray
    r: np.ndarray  # (n, 2) centroid
    p: np.ndarray  # (n, 2) kinematic momentum
    width: np.ndarray  # (n,) rms radius of the packet
    norm2: np.ndarray
    t_mid: np.ndarray
    force: np.ndarray  # windowed d<p>/dt
    lorentz: np.ndarray  # q <v> x B at the same times
    rel_deviation: np.ndarray
    pre_spreading: np.ndarray  # mask over t_mid
    fitted_radius: float | None
    fitted_center: tuple[float, float] | None
    expected_radius: float | None
    ledger_dp: tuple[float, float]
    metadata: dict = field(default_factory=dict)

    @property
    def max_rel_deviation(self) -> float:
        m = self.pre_spreading
        vals = self.rel_deviation[m]
        return float(np.nanmax(vals)) if np.isfinite(vals).any() else math.nan

    @property
    def max_abs_residual(self) -> float:
        return float(np.abs(self.force - self.lorentz).max())

    @property
    def radius_error(self) -> float | None:
        if self.fitted_radius is None or not self.expected_radius:
            return None
        return abs(self.fitted_radius - self.expected_radius) / self.expected_radius

    def summary(self) -> dict:
        return {
            "max_rel_deviation": self.max_rel_deviation,
            "max_abs_residual": self.max_abs_residual,
            "fitted_radius": self.fitted_radius,
            "fitted_center": self.fitted_center,
            "expected_radius": self.expected_radius,
            "radius_error": self.radius_error,
            "ledger_dp": self.ledger_dp,
            "measured_dp": [float(v) for v in self.p[-1] - self.p[0]],
            "final_norm2": float(self.norm2[-1]),
        }

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "summary": self.summary(),
            "series": {
                "t": self.t.tolist(), "x": self.r[:, 0].tolist(), "y": self.r[:, 1].tolist(),
                "p_x": self.p[:, 0].tolist(), "p_y": self.p[:, 1].tolist(),
                "width": self.width.tolist(),
            },
            "force": {
                "t": self.t_mid.tolist(),
                "F_x": self.force[:, 0].tolist(), "F_y": self.force[:, 1].tolist(),
                "lorentz_x": self.lorentz[:, 0].tolist(), "lorentz_y": self.lorentz[:, 1].tolist(),
                "rel_deviation": self.rel_deviation.tolist(),
                "pre_spreading": self.pre_spreading.tolist(),
            },
            "metadata": self.metadata,
        }

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def fit_circle(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Algebraic least-squares circle (centre x, centre y, radius)."""
    A = np.column_stack([x, y, np.ones_like(x)])
    b = x**2 + y**2
    (c0, c1, c2), *_ = np.linalg.lstsq(A, b, rcond=None)
    xc, yc = c0 / 2, c1 / 2
    return float(xc), float(yc), float(math.sqrt(c2 + xc**2 + yc**2))


def _field_scale(B: FieldFn, x: float, y: float, h: float = 1e-3) -> float:
    b = float(B(np.array(x), np.array(y)))
    gx = float(B(np.array(x + h), np.array(y)) - B(np.array(x - h), np.array(y))) / (2 * h)
    gy = float(B(np.array(x), np.array(y + h)) - B(np.array(x), np.array(y - h))) / (2 * h)
    g = math.hypot(gx, gy)
    return math.inf if g == 0 else abs(b) / g


def build_flux_field(cfg: EmergenceConfig, params: PhysicalParams):
    """Grid, link phases and decomposition for the configured field."""
    half = cfg.domain / 2
    grid = LatticeGrid.box(cfg.domain, cfg.domain, cfg.a, x0=-half, y0=-half)
    M = N = int(round(cfg.cell / cfg.L))
    if abs(M * cfg.L - cfg.cell) > 1e-9:
        raise ValueError("cell size must be a multiple of the line spacing")
    if abs(cfg.L / cfg.a - round(cfg.L / cfg.a)) > 1e-9:
        raise ValueError("line spacing must be a multiple of the lattice spacing")
    decomp = decompose_field(cfg.field(), (-half, half, -half, half), cfg.cell, cfg.cell, M, N, params)
    pos, flux = decomp.flux_points()
    # lines snap to the plaquette centre at or below them (a uniform a/2 shift at most)
    snapped = np.column_stack([
        grid.x_origin + (np.floor((pos[:, 0] - grid.x_origin) / cfg.a + 1e-9) + 0.5) * cfg.a,
        grid.y_origin + (np.floor((pos[:, 1] - grid.y_origin) / cfg.a + 1e-9) + 0.5) * cfg.a,
    ])
    px, py = grid.plaquette_counts
    keep = ((snapped[:, 0] > grid.x_origin) & (snapped[:, 0] < grid.x_origin + px * cfg.a)
            & (snapped[:, 1] > grid.y_origin) & (snapped[:, 1] < grid.y_origin + py * cfg.a))
    links = compile_flux_lines(snapped[keep], flux[keep], grid, params)
    return grid, links, decomp


def run_emergence_experiment(cfg: EmergenceConfig = EmergenceConfig(),
                             params: PhysicalParams = PhysicalParams(),
                             progress: Callable[[int, int], None] | None = None) -> EmergenceReport:
    """Evolve a packet through the flux-line field and compare d<p>/dt with q<v>xB."""
    B = cfg.field()
    xc0, yc0 = cfg.orbit_center
    B_at_c = float(B(np.array(xc0), np.array(yc0)))
    m, q, hb = params.m, params.q, params.hbar
    if B_at_c != 0:
        R = m * cfg.speed / abs(q * B_at_c)
        lb = math.sqrt(hb / abs(q * B_at_c))
        # q B > 0 circulates clockwise: start on top moving +x
        s = 1.0 if q * B_at_c > 0 else -1.0
        start = (xc0, yc0 + s * R)
        period = 2 * math.pi * m / abs(q * B_at_c)
    else:
        R, lb, start, period = None, 1.0, (xc0, yc0), cfg.domain / 4 / max(cfg.speed, 1e-12)
    sigma = lb if cfg.sigma is None else cfg.sigma
    if sigma < cfg.min_spacings * cfg.L:
        raise EmergenceError(f"packet width {sigma} is below {cfg.min_spacings} line spacings")
    scale = _field_scale(B, *start)
    if sigma > scale / 4:
        raise EmergenceError(f"packet width {sigma} is not small against the field scale {scale:.3g}")
    duration = period if cfg.duration is None else cfg.duration

    grid, links, decomp = build_flux_field(cfg, params)
    ham = build_hamiltonian(grid, links, params)
    k = (m * cfg.speed / hb, 0.0)
    state = gaussian_packet(start, k, (sigma, sigma), grid, params, links=links,
                           coherent_B=B_at_c if cfg.sigma is None else None)
    prop = CayleyPropagator(ham, cfg.dt)
    nsteps = int(round(duration / cfg.dt))

    def sample(st: QuantumState):
        cx, cy = st.centroid()
        X, Y = grid.mesh()
        rho = st.density / st.density.sum()
        w = math.sqrt(float((((X - cx) ** 2 + (Y - cy) ** 2) * rho).sum()))
        return (cx, cy), mean_momentum(st, links), w, st.norm2

    rows = [sample(state)]
    psi = state.psi
    for n in range(1, nsteps + 1):
        psi = prop.step(psi)
        rows.append(sample(QuantumState(psi, grid, params)))
        if progress is not None:
            progress(n, nsteps)
    t = cfg.dt * np.arange(nsteps + 1)
    r = np.array([row[0] for row in rows])
    p = np.array([row[1] for row in rows])
    width = np.array([row[2] for row in rows])
    norm2 = np.array([row[3] for row in rows])

    # windowed centred differences over ~window_crossings line crossings
    win = cfg.window_crossings * cfg.L / max(cfg.speed, 1e-12)
    h = max(1, int(round(win / cfg.dt / 2)))
    if 2 * h >= len(t):
        raise EmergenceError("run too short for the coarse-graining window")
    W = 2 * h * cfg.dt
    force = (p[2 * h:] - p[:-2 * h]) / W
    vel = (r[2 * h:] - r[:-2 * h]) / W
    r_mid = r[h:-h]
    t_mid = t[h:-h]
    Bm = np.asarray(B(r_mid[:, 0], r_mid[:, 1]), dtype=float) * np.ones(len(t_mid))
    lorentz = np.column_stack([q * Bm * vel[:, 1], -q * Bm * vel[:, 0]])
    norm_l = np.linalg.norm(lorentz, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(norm_l > 0, np.linalg.norm(force - lorentz, axis=1) / norm_l, np.nan)
    grown = width[h:-h] / width[0] - 1.0
    pre = (grown < cfg.max_spread_ratio) & (t_mid <= 0.5 * period + 1e-12)

    if R is not None:
        fx, fy, fr = fit_circle(r[:, 0], r[:, 1])
        fitted, center = fr, (fx, fy)
    else:
        fitted = center = None
    ledger = KickLedger.from_path(decomp, r[:, 0], r[:, 1], params)
    meta = {"grid": grid.to_dict(), "steps": nsteps, "window": W, "period": period,
            "sigma": sigma, "lines": int(decomp.M * decomp.N * decomp.flux.size),
            "total_flux": decomp.total_flux}
    return EmergenceReport(cfg, t, r, p, width, norm2, t_mid, force, lorentz, rel, pre,
                           fitted, center, R, ledger.total, meta)
