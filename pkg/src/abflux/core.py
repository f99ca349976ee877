"""Units, lattice geometry and gauge fields compiled to Peierls link phases.

Conventions used throughout the package:

* natural units by default (hbar = q = m = 1), overridable via ``PhysicalParams``;
* site ``(i, j)`` of a ``LatticeGrid`` sits at ``(x_origin + i*a, y_origin + j*a)``;
* ``phase_x[i, j]`` is the phase on the link ``(i, j) -> (i+1, j)`` and
  ``phase_y[i, j]`` the phase on ``(i, j) -> (i, j+1)``, both equal to
  ``(q/hbar) * integral of A.dl`` along the link;
* plaquette ``(i, j)`` has lower-left corner at site ``(i, j)``;
* flux lines sit at plaquette centres and their branch cut runs in +x.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

HARD_WALL = "hard-wall"
PERIODIC = "periodic"
ABSORBING = "absorbing-layer"
BOUNDARIES = (HARD_WALL, PERIODIC, ABSORBING)

_SNAP_TOL = 1e-9


class GaugeError(ValueError):
    """Raised when a gauge specification cannot be realised on a grid."""


@dataclass(frozen=True)
class PhysicalParams:
    hbar: float = 1.0
    q: float = 1.0
    m: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise ValueError(f"hbar must be positive and finite, got {self.hbar}")
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValueError(f"m must be positive and finite, got {self.m}")
        if self.q == 0 or not math.isfinite(self.q):
            raise ValueError(f"q must be nonzero and finite, got {self.q}")

    @property
    def fluxon(self) -> float:
        return fluxon(self)


def fluxon(params: PhysicalParams) -> float:
    """Flux quantum 2*pi*hbar/q."""
    return 2.0 * math.pi * params.hbar / params.q


def reduce_flux(flux: float, params: PhysicalParams) -> float:
    """Reduce a flux into [0, |Phi0|)."""
    period = abs(fluxon(params))
    r = math.fmod(flux, period)
    if r < 0:
        r += period
    # fmod of values a hair below a multiple of the period can round up to it
    if r >= period:
        r -= period
    return r


def centered_flux(flux: float, params: PhysicalParams) -> float:
    """Reduce a flux into (-Phi0/2, Phi0/2]."""
    period = abs(fluxon(params))
    r = reduce_flux(flux, params)
    return r - period if r > period / 2 else r


@dataclass(frozen=True)
class LatticeGrid:
    nx: int
    ny: int
    a: float
    boundary_x: str = HARD_WALL
    boundary_y: str = HARD_WALL
    x_origin: float = 0.0
    y_origin: float = 0.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs at least 8 sites per axis, got {self.nx}x{self.ny}")
        if not self.a > 0:
            raise ValueError("lattice spacing must be positive")
        for b in (self.boundary_x, self.boundary_y):
            if b not in BOUNDARIES:
                raise ValueError(f"unknown boundary {b!r}; expected one of {BOUNDARIES}")
        if self.boundary_y == ABSORBING:
            raise ValueError("absorbing layers are only supported along x")

    @classmethod
    def box(cls, lx: float, ly: float, a: float, x0: float = 0.0, y0: float = 0.0,
            boundary_x: str = HARD_WALL) -> "LatticeGrid":
        """Hard-wall box [x0, x0+lx] x [y0, y0+ly]; the walls are ghost sites."""
        nx = _as_count(lx / a) - 1
        ny = _as_count(ly / a) - 1
        return cls(nx, ny, a, boundary_x, HARD_WALL, x0 + a, y0 + a)

    @property
    def n_sites(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x(self) -> np.ndarray:
        return self.x_origin + self.a * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y_origin + self.a * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def periodic_x(self) -> bool:
        return self.boundary_x == PERIODIC

    @property
    def periodic_y(self) -> bool:
        return self.boundary_y == PERIODIC

    @property
    def length_y(self) -> float:
        """Transverse extent: the period if periodic, else wall-to-wall width."""
        return self.ny * self.a if self.periodic_y else (self.ny + 1) * self.a

    @property
    def length_x(self) -> float:
        return self.nx * self.a if self.periodic_x else (self.nx + 1) * self.a

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) of the region the wave function lives in."""
        a = self.a
        if self.periodic_x:
            x_lo, x_hi = self.x_origin, self.x_origin + self.nx * a
        else:
            x_lo, x_hi = self.x_origin - a, self.x_origin + self.nx * a
        if self.periodic_y:
            y_lo, y_hi = self.y_origin, self.y_origin + self.ny * a
        else:
            y_lo, y_hi = self.y_origin - a, self.y_origin + self.ny * a
        return x_lo, x_hi, y_lo, y_hi

    @property
    def plaquette_counts(self) -> tuple[int, int]:
        px = self.nx if self.periodic_x else self.nx - 1
        py = self.ny if self.periodic_y else self.ny - 1
        return px, py

    def plaquette_index(self, x: float, y: float) -> tuple[int, int]:
        """Index of the plaquette centred at (x, y); GaugeError if off-centre."""
        fi = (x - self.x_origin) / self.a - 0.5
        fj = (y - self.y_origin) / self.a - 0.5
        i, j = round(fi), round(fj)
        if abs(fi - i) > _SNAP_TOL or abs(fj - j) > _SNAP_TOL:
            raise GaugeError(f"point ({x}, {y}) is not a plaquette centre")
        px, py = self.plaquette_counts
        if not (0 <= i < px and 0 <= j < py):
            raise GaugeError(f"point ({x}, {y}) lies outside the grid")
        return i, j

    def nearest_plaquette_center(self, x: float, y: float) -> tuple[float, float]:
        i = math.floor((x - self.x_origin) / self.a)
        j = math.floor((y - self.y_origin) / self.a)
        return (self.x_origin + (i + 0.5) * self.a, self.y_origin + (j + 0.5) * self.a)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_count(v: float) -> int:
    n = round(v)
    if abs(v - n) > 1e-6:
        raise ValueError(f"length is not an integer number of lattice spacings ({v})")
    return int(n)


# ---------------------------------------------------------------------------
# gauge specifications


@dataclass(frozen=True)
class UniformWall:
    """Wall of uniform field between x0 and x0+w; A = phi_B * ramp(x) y_hat."""
    phi_B: float
    x0: float
    w: float = 0.0
    kind: str = field(default="uniform-wall", init=False)

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("wall width must be >= 0")


@dataclass(frozen=True)
class FluxLine:
    Phi_B: float
    x0: float
    y0: float
    kind: str = field(default="flux-line", init=False)


@dataclass(frozen=True)
class FluxLineLattice:
    """Column of flux lines at (x0, y0 + s*L)."""
    Phi_B: float
    L: float
    x0: float
    y0: float | None = None
    kind: str = field(default="flux-line-lattice", init=False)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("lattice spacing L must be positive")


@dataclass(frozen=True)
class FluxGrid:
    """Square grid of flux lines at origin + (n*L, s*L) covering the grid."""
    Phi_B: float
    L: float
    origin: tuple[float, float] | None = None
    kind: str = field(default="flux-grid", init=False)

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("grid spacing L must be positive")

    def effective_B(self, params: PhysicalParams) -> float:
        return centered_flux(self.Phi_B, params) / self.L**2


@dataclass(frozen=True)
class UniformField:
    """Uniform B inside region (x1, x2, y1, y2), or everywhere when region is None."""
    B: float
    region: tuple[float, float, float, float] | None = None
    kind: str = field(default="uniform-field", init=False)


GaugeSpec = Union[UniformWall, FluxLine, FluxLineLattice, FluxGrid, UniformField]
_KINDS = {cls.__dataclass_fields__["kind"].default: cls
          for cls in (UniformWall, FluxLine, FluxLineLattice, FluxGrid, UniformField)}


def gauge_to_dict(spec: GaugeSpec) -> dict:
    d = asdict(spec)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def gauge_from_dict(d: dict) -> GaugeSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown gauge kind {kind!r}")
    for k in ("origin", "region"):
        if d.get(k) is not None:
            d[k] = tuple(float(v) for v in d[k])
    return _KINDS[kind](**d)


@dataclass(frozen=True, eq=False)
class LinkPhaseField:
    grid: LatticeGrid
    phase_x: np.ndarray
    phase_y: np.ndarray

    def __post_init__(self):
        if self.phase_x.shape != self.grid.shape or self.phase_y.shape != self.grid.shape:
            raise ValueError("link phase arrays must have the grid shape")
        self.phase_x.setflags(write=False)
        self.phase_y.setflags(write=False)

    @classmethod
    def zeros(cls, grid: LatticeGrid) -> "LinkPhaseField":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    def __add__(self, other: "LinkPhaseField") -> "LinkPhaseField":
        if other.grid != self.grid:
            raise ValueError("cannot add link fields on different grids")
        return LinkPhaseField(self.grid, self.phase_x + other.phase_x, self.phase_y + other.phase_y)

    def holonomy(self) -> np.ndarray:
        """Counter-clockwise phase sum around every plaquette (not reduced)."""
        px, py = self.grid.plaquette_counts
        tx, ty = self.phase_x, self.phase_y
        up = np.roll(tx, -1, axis=1)
        right = np.roll(ty, -1, axis=0)
        return (tx + right - up - ty)[:px, :py]

    def regauge(self, chi: np.ndarray) -> "LinkPhaseField":
        """Pure gauge transformation: phase += chi(head) - chi(tail)."""
        chi = np.asarray(chi, dtype=float)
        if chi.shape != self.grid.shape:
            raise ValueError("site phase array must have the grid shape")
        dx = np.roll(chi, -1, axis=0) - chi
        dy = np.roll(chi, -1, axis=1) - chi
        if not self.grid.periodic_x:
            dx[-1, :] = 0.0
        if not self.grid.periodic_y:
            dy[:, -1] = 0.0
        return LinkPhaseField(self.grid, self.phase_x + dx, self.phase_y + dy)

    def is_y_uniform(self) -> bool:
        return bool(np.all(np.ptp(self.phase_x, axis=1) == 0)
                    and np.all(np.ptp(self.phase_y, axis=1) == 0))


def plaquette_flux(links: LinkPhaseField, i: int, j: int, params: PhysicalParams) -> float:
    """Flux through plaquette (i, j), reduced modulo the fluxon."""
    px, py = links.grid.plaquette_counts
    if not (0 <= i < px and 0 <= j < py):
        raise IndexError(f"plaquette ({i}, {j}) outside {px}x{py}")
    h = links.holonomy()[i, j]
    return reduce_flux(h * params.hbar / params.q, params)


def plaquette_fluxes(links: LinkPhaseField, params: PhysicalParams) -> np.ndarray:
    """All plaquette fluxes reduced into [0, |Phi0|)."""
    period = abs(fluxon(params))
    return np.mod(links.holonomy() * params.hbar / params.q, period)


# ---------------------------------------------------------------------------
# compilation


def compile_gauge(spec: GaugeSpec | Sequence[GaugeSpec], grid: LatticeGrid,
                  params: PhysicalParams) -> LinkPhaseField:
    """Compile one spec, or the superposition of several, into link phases."""
    if isinstance(spec, (list, tuple)):
        out = LinkPhaseField.zeros(grid)
        for s in spec:
            out = out + compile_gauge(s, grid, params)
        return out
    kind = getattr(spec, "kind", None)
    if kind == "uniform-wall":
        return _compile_wall(spec, grid, params)
    if kind == "flux-line":
        return compile_flux_lines([(spec.x0, spec.y0)], [spec.Phi_B], grid, params)
    if kind == "flux-line-lattice":
        return _compile_line_lattice(spec, grid, params)
    if kind == "flux-grid":
        return _compile_flux_grid(spec, grid, params)
    if kind == "uniform-field":
        return _compile_uniform(spec, grid, params)
    raise TypeError(f"not a gauge spec: {spec!r}")


def _require_open_x(grid: LatticeGrid):
    if grid.periodic_x:
        raise GaugeError("fields with a +x gauge ramp need a non-periodic x boundary")


def _compile_wall(spec: UniformWall, grid: LatticeGrid, params: PhysicalParams) -> LinkPhaseField:
    if spec.phi_B == 0:
        return LinkPhaseField.zeros(grid)
    _require_open_x(grid)
    x_lo, x_hi, _, _ = grid.extent
    if not (x_lo <= spec.x0 and spec.x0 + spec.w <= x_hi):
        raise GaugeError(f"wall [{spec.x0}, {spec.x0 + spec.w}] outside grid x-range")
    x = grid.x
    if spec.w == 0:
        ramp = (x > spec.x0).astype(float)
    else:
        ramp = np.clip((x - spec.x0) / spec.w, 0.0, 1.0)
    col = params.q * spec.phi_B * grid.a / params.hbar * ramp
    phase_y = np.repeat(col[:, None], grid.ny, axis=1)
    if not grid.periodic_y:
        phase_y[:, -1] = 0.0
    return LinkPhaseField(grid, np.zeros(grid.shape), phase_y)


def compile_flux_lines(positions: Iterable[tuple[float, float]], fluxes: Iterable[float],
                       grid: LatticeGrid, params: PhysicalParams) -> LinkPhaseField:
    """Flux lines at plaquette centres with branch cuts running in +x."""
    _require_open_x(grid)
    pos = np.asarray(list(positions), dtype=float).reshape(-1, 2)
    flux = np.asarray(list(fluxes), dtype=float).ravel()
    if len(pos) != len(flux):
        raise ValueError("positions and fluxes differ in length")
    fi = (pos[:, 0] - grid.x_origin) / grid.a - 0.5
    fj = (pos[:, 1] - grid.y_origin) / grid.a - 0.5
    i, j = np.rint(fi).astype(int), np.rint(fj).astype(int)
    bad = (np.abs(fi - i) > _SNAP_TOL) | (np.abs(fj - j) > _SNAP_TOL)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise GaugeError(f"point ({pos[k, 0]}, {pos[k, 1]}) is not a plaquette centre")
    px, py = grid.plaquette_counts
    out = (i < 0) | (i >= px) | (j < 0) | (j >= py)
    if np.any(out):
        k = int(np.argmax(out))
        raise GaugeError(f"point ({pos[k, 0]}, {pos[k, 1]}) lies outside the grid")
    per_plaquette = np.zeros((px, py))
    np.add.at(per_plaquette, (i, j), flux)
    phase_y = np.zeros(grid.shape)
    # the cut of a line in plaquette column i' crosses every y-link at column > i'
    phase_y[1:, :py] = (params.q / params.hbar) * np.cumsum(per_plaquette, axis=0)
    return LinkPhaseField(grid, np.zeros(grid.shape), phase_y)


def _line_indices(offset: float, origin: float, a: float, spacing: float,
                  n_plaquettes: int, n_sites: int, periodic: bool) -> np.ndarray:
    """Plaquette indices along one axis hit by a comb of lines."""
    steps = spacing / a
    if abs(steps - round(steps)) > 1e-9:
        raise GaugeError(f"spacing {spacing} is not a multiple of the lattice spacing {a}")
    steps = int(round(steps))
    k0 = (offset - origin) / a - 0.5
    if abs(k0 - round(k0)) > _SNAP_TOL:
        raise GaugeError(f"offset {offset} is not on a plaquette centre")
    if periodic and n_sites % steps:
        raise GaugeError("periodic period must hold an integer number of spacings")
    return np.arange(int(round(k0)) % steps, n_plaquettes, steps)


def _compile_line_lattice(spec: FluxLineLattice, grid: LatticeGrid,
                          params: PhysicalParams) -> LinkPhaseField:
    y0 = grid.y_origin + 0.5 * grid.a if spec.y0 is None else spec.y0
    _, py = grid.plaquette_counts
    rows = _line_indices(y0, grid.y_origin, grid.a, spec.L, py, grid.ny, grid.periodic_y)
    yc = grid.y_origin + (rows + 0.5) * grid.a
    return compile_flux_lines([(spec.x0, y) for y in yc], [spec.Phi_B] * len(yc), grid, params)


def _compile_flux_grid(spec: FluxGrid, grid: LatticeGrid, params: PhysicalParams) -> LinkPhaseField:
    period = abs(fluxon(params))
    if abs(centered_flux(spec.Phi_B, params)) >= period / 2:
        raise GaugeError("flux-grid lines must carry less than half a fluxon (mod Phi0)")
    if spec.origin is None:
        origin = (grid.x_origin + 0.5 * grid.a, grid.y_origin + 0.5 * grid.a)
    else:
        origin = spec.origin
    _require_open_x(grid)
    px, py = grid.plaquette_counts
    cols = _line_indices(origin[0], grid.x_origin, grid.a, spec.L, px, grid.nx, False)
    rows = _line_indices(origin[1], grid.y_origin, grid.a, spec.L, py, grid.ny, grid.periodic_y)
    phase_y = np.zeros(grid.shape)
    # number of columns strictly left of each site column
    left = np.searchsorted(cols, np.arange(grid.nx), side="left")
    phase_y[:, rows] += (params.q * spec.Phi_B / params.hbar) * left[:, None]
    return LinkPhaseField(grid, np.zeros(grid.shape), phase_y)


def _compile_uniform(spec: UniformField, grid: LatticeGrid, params: PhysicalParams) -> LinkPhaseField:
    if spec.B == 0:
        return LinkPhaseField.zeros(grid)
    _require_open_x(grid)
    x, y, a = grid.x, grid.y, grid.a
    x_lo, x_hi, y_lo, y_hi = grid.extent
    if spec.region is None:
        xr = 0.5 * (x_lo + x_hi)
        fx = x - xr
        overlap = np.full(grid.ny, a)
    else:
        x1, x2, y1, y2 = spec.region
        if x1 >= x2 or y1 >= y2:
            raise GaugeError("empty field region")
        if x1 < x_lo or x2 > x_hi or y1 < y_lo or y2 > y_hi:
            raise GaugeError("field region outside grid")
        fx = np.clip(x - x1, 0.0, x2 - x1)
        overlap = np.clip(np.minimum(y + a, y2) - np.maximum(y, y1), 0.0, None)
    phase_y = (params.q * spec.B / params.hbar) * fx[:, None] * overlap[None, :]
    if not grid.periodic_y:
        phase_y[:, -1] = 0.0
    return LinkPhaseField(grid, np.zeros(grid.shape), phase_y)
