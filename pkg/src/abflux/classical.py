"""Point charges in piecewise-uniform magnetic fields.

Motion is integrated event by event: inside a uniform region the orbit is an
exact circular arc, outside it is a straight line, and the step is split at
every region edge, widthless wall ("sheet") or specular mirror it meets.
Widthless walls apply the kick dp_y = -q*phi_B (crossing in +x) when the
post-kick state conserves |p|, and reflect specularly otherwise.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import PhysicalParams

_INF = math.inf


@dataclass(frozen=True)
class ClassicalState:
    x: float
    y: float
    px: float
    py: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.px, self.py)):
            raise ValueError("classical state components must be finite")

    @property
    def speed_momentum(self) -> float:
        return math.hypot(self.px, self.py)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.px, self.py])


@dataclass(frozen=True)
class FieldRegion:
    """Uniform B*z_hat on the rectangle [x_min, x_max] x [y_min, y_max]."""
    x_min: float
    x_max: float
    B: float
    y_min: float = -_INF
    y_max: float = _INF

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("field region must have positive extent")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def phi_B(self) -> float:
        return self.B * self.width

    def contains(self, x: float, y: float) -> bool:
        return self.x_min < x < self.x_max and self.y_min < y < self.y_max

    @classmethod
    def wall(cls, x0: float, w: float, phi_B: float) -> "FieldRegion":
        return cls(x0, x0 + w, phi_B / w)


@dataclass(frozen=True)
class FieldSheet:
    """Widthless wall at x = x0 carrying flux phi_B per unit length."""
    x0: float
    phi_B: float
    y_min: float = -_INF
    y_max: float = _INF


@dataclass(frozen=True)
class Mirror:
    """Specular hard wall along y = y0 for x in [x_min, x_max]."""
    y0: float
    x_min: float = -_INF
    x_max: float = _INF


@dataclass(frozen=True)
class FieldRegionSet:
    regions: tuple[FieldRegion, ...] = ()
    sheets: tuple[FieldSheet, ...] = ()
    mirrors: tuple[Mirror, ...] = ()

    def __post_init__(self):
        rs = self.regions
        for i in range(len(rs)):
            for j in range(i + 1, len(rs)):
                a, b = rs[i], rs[j]
                if a.x_min < b.x_max and b.x_min < a.x_max and a.y_min < b.y_max and b.y_min < a.y_max:
                    raise ValueError("field regions overlap")

    @classmethod
    def wall(cls, x0: float, w: float, phi_B: float) -> "FieldRegionSet":
        """A single wall of flux per length phi_B and width w (w = 0 is a sheet)."""
        if w == 0:
            return cls(sheets=(FieldSheet(x0, phi_B),))
        return cls(regions=(FieldRegion.wall(x0, w, phi_B),))

    @classmethod
    def uniform(cls, B: float) -> "FieldRegionSet":
        return cls(regions=(FieldRegion(-_INF, _INF, B),))

    def field_at(self, x: float, y: float) -> float:
        for r in self.regions:
            if r.contains(x, y):
                return r.B
        return 0.0


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (n, 4): x, y, px, py

    def __post_init__(self):
        if np.any(np.diff(self.t) < 0):
            raise ValueError("trajectory timestamps must be monotone")

    def __len__(self):
        return len(self.t)

    def final(self) -> ClassicalState:
        return ClassicalState(*self.states[-1])

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "px", "py"])
            for t, s in zip(self.t, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s])
        return path


# ---------------------------------------------------------------------------
# analytic verdicts


def larmor_radius(v: float, phi_B: float, w: float, params: PhysicalParams) -> float:
    """Radius m*v*w/|q*phi_B| of the arc inside a wall; inf when phi_B = 0."""
    if phi_B == 0:
        return _INF
    return params.m * v * w / abs(params.q * phi_B)


def reflects_normal(px: float, phi_B: float, params: PhysicalParams) -> bool:
    return px < abs(params.q * phi_B)


def reflects_any_angle(px: float, py: float, phi_B: float, params: PhysicalParams) -> bool:
    return math.hypot(px, py) < abs(params.q * phi_B) / 2


def wall_crossing_kick(phi_B: float, params: PhysicalParams) -> float:
    """Transverse kinematic momentum change for a +x crossing."""
    return -params.q * phi_B


# ---------------------------------------------------------------------------
# event-driven integration


def _arc(state: ClassicalState, omega: float, t: float, m: float) -> ClassicalState:
    vx, vy = state.px / m, state.py / m
    if omega == 0.0:
        return ClassicalState(state.x + vx * t, state.y + vy * t, state.px, state.py)
    th = omega * t
    s, c = math.sin(th), math.cos(th)
    omc = 2.0 * math.sin(0.5 * th) ** 2  # 1 - cos, without cancellation
    x = state.x + (vx * s + vy * omc) / omega
    y = state.y + (vy * s - vx * omc) / omega
    px, py = state.px * c + state.py * s, state.py * c - state.px * s
    # c^2 + s^2 misses 1 by an ulp with a fixed sign; rescale so |p| cannot drift over many steps
    p0, p1 = math.hypot(state.px, state.py), math.hypot(px, py)
    if p1 > 0:
        px, py = px * (p0 / p1), py * (p0 / p1)
    return ClassicalState(x, y, px, py)


def _crossing_times(c0: float, A: float, C: float, omega: float, target: float) -> list[float]:
    """Positive times at which c(t) = target.

    Linear motion: c = c0 + A t.  Arc: c = c0 + (A sin wt + C (1 - cos wt)) / w.
    """
    if omega == 0.0:
        if A == 0.0:
            return []
        t = (target - c0) / A
        return [t] if t > 0 else []
    R = math.hypot(A, C)
    if R == 0.0:
        return []
    s = (omega * (target - c0) - C) / R
    if abs(s) > 1.0:
        return []
    s = max(-1.0, min(1.0, s))
    delta = math.atan2(C, A)
    period = 2 * math.pi / abs(omega)
    out = []
    for th in (delta + math.asin(s), delta + math.pi - math.asin(s)):
        t0 = (th / omega) % period
        out.append(t0)
        out.append(t0 + period)
    return out


@dataclass
class _Edge:
    kind: str  # "region", "sheet", "mirror"
    vertical: bool
    at: float
    lo: float
    hi: float
    obj: object = None
    key: int = 0


def _edges(fields: FieldRegionSet) -> list[_Edge]:
    out = []
    key = 0
    for r in fields.regions:
        for xv in (r.x_min, r.x_max):
            if math.isfinite(xv):
                out.append(_Edge("region", True, xv, r.y_min, r.y_max, r, key)); key += 1
        for yv in (r.y_min, r.y_max):
            if math.isfinite(yv):
                out.append(_Edge("region", False, yv, r.x_min, r.x_max, r, key)); key += 1
    for s in fields.sheets:
        out.append(_Edge("sheet", True, s.x0, s.y_min, s.y_max, s, key)); key += 1
    for mr in fields.mirrors:
        out.append(_Edge("mirror", False, mr.y0, mr.x_min, mr.x_max, mr, key)); key += 1
    return out


class _Integrator:
    def __init__(self, fields: FieldRegionSet, params: PhysicalParams):
        self.fields = fields
        self.params = params
        self.edges = _edges(fields)
        self.last_keys: set[int] = set()
        self.events = 0

    def _field(self, st: ClassicalState) -> float:
        p = st.speed_momentum
        if p == 0:
            return self.fields.field_at(st.x, st.y)
        h = 1e-9
        return self.fields.field_at(st.x + h * st.px / p, st.y + h * st.py / p)

    def advance(self, st: ClassicalState, dt: float, max_events: int = 1_000_000) -> ClassicalState:
        m, q = self.params.m, self.params.q
        remaining = dt
        for _ in range(max_events):
            omega = q * self._field(st) / m
            vx, vy = st.px / m, st.py / m
            hits = []
            for e in self.edges:
                if e.vertical:
                    times = _crossing_times(st.x, vx, vy, omega, e.at)
                else:
                    times = _crossing_times(st.y, vy, -vx, omega, e.at)
                floor = 1e-9 * dt if e.key in self.last_keys else 1e-15
                for t in times:
                    # events a hair past the step end still belong to this step
                    if t <= floor or t > remaining + 1e-12 * dt:
                        continue
                    hit = _arc(st, omega, t, m)
                    other = hit.y if e.vertical else hit.x
                    if e.lo - 1e-12 <= other <= e.hi + 1e-12:
                        hits.append((t, e))
            if not hits:
                return _arc(st, omega, remaining, m)
            best_t = min(t for t, _ in hits)
            # simultaneous events (corners) are applied together
            tied = {e.key: e for t, e in hits if t <= best_t + 1e-12 * max(best_t, dt)}
            st = _arc(st, omega, best_t, m)
            remaining -= best_t
            self.events += 1
            self.last_keys = set(tied)
            for e in sorted(tied.values(), key=lambda e: e.kind != "mirror"):
                st = self._apply(st, e)
            if remaining <= 0:
                return st
        raise RuntimeError("event budget exhausted in a single step")

    def _apply(self, st: ClassicalState, e: _Edge) -> ClassicalState:
        if e.kind == "mirror":
            return ClassicalState(st.x, e.at, st.px, -st.py)
        if e.kind == "sheet":
            x = e.at
            direction = 1.0 if st.px > 0 else -1.0
            py_new = st.py - direction * self.params.q * e.obj.phi_B
            p2 = st.px**2 + st.py**2
            # at exact threshold the charge crosses with p_x = 0 and glides along the sheet
            if py_new**2 <= p2:
                px_new = direction * math.sqrt(p2 - py_new**2)
                return ClassicalState(x, st.y, px_new, py_new)
            return ClassicalState(x, st.y, -st.px, st.py)
        # region edge: snap onto the edge, velocity unchanged
        if e.vertical:
            return ClassicalState(e.at, st.y, st.px, st.py)
        return ClassicalState(st.x, e.at, st.px, st.py)


def step_charge(state: ClassicalState, fields: FieldRegionSet, dt: float,
                params: PhysicalParams) -> ClassicalState:
    """Advance one step of length dt exactly (arcs, lines and wall events)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _Integrator(fields, params).advance(state, dt)


def integrate(state: ClassicalState, fields: FieldRegionSet, dt: float, nsteps: int,
              params: PhysicalParams, stop=None) -> Trajectory:
    """Record ``nsteps`` exact steps; ``stop(state)`` ends the run early."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    integ = _Integrator(fields, params)
    ts, xs = [0.0], [state.as_array()]
    st = state
    for n in range(1, nsteps + 1):
        st = integ.advance(st, dt)
        ts.append(n * dt)
        xs.append(st.as_array())
        if stop is not None and stop(st):
            break
    return Trajectory(np.array(ts), np.array(xs))


# ---------------------------------------------------------------------------
# experiments


@dataclass
class WallEncounter:
    reflected: bool
    incoming: ClassicalState
    outgoing: ClassicalState
    trajectory: Trajectory

    @property
    def delta_py(self) -> float:
        return self.outgoing.py - self.incoming.py


def encounter_wall(p: float, angle: float, phi_B: float, w: float, params: PhysicalParams,
                   x0: float = 0.0, lead: float = 1.0, dt: float | None = None) -> WallEncounter:
    """Fire a charge with momentum ``p`` at ``angle`` (radians from +x) at a wall.

    The charge starts ``lead`` to the left of the wall and is followed until
    it is back at the start line (reflected) or ``lead`` past the far edge.
    """
    fields = FieldRegionSet.wall(x0, w, phi_B)
    inc = ClassicalState(x0 - lead, 0.0, p * math.cos(angle), p * math.sin(angle))
    if inc.px <= 0:
        raise ValueError("the charge must move towards the wall")
    v = p / params.m
    vx = inc.px / params.m
    if dt is None:
        dt = lead / vx / 4
    x_far = x0 + w + lead
    stop = lambda s: s.x <= x0 - lead or s.x >= x_far
    # canonical P_y is conserved, so a crossing charge leaves with this p_x
    px_out2 = p**2 - (inc.py - params.q * phi_B) ** 2
    vx_out = math.sqrt(px_out2) / params.m if px_out2 > 0 else vx
    # the longest stay inside a wall is one cyclotron turn
    budget = lead / vx + lead / min(vx, vx_out)
    budget += 2 * math.pi * params.m * w / abs(params.q * phi_B) if phi_B and w else 0.0
    traj = integrate(inc, fields, dt, int(math.ceil(4 * budget / dt)) + 8, params, stop=stop)
    out = traj.final()
    if not stop(out):
        # exactly at threshold the charge ends up gliding along the far edge with p_x = 0
        if abs(out.px) <= 1e-9 * p and out.x >= x0 + w - 1e-9:
            return WallEncounter(False, inc, out, traj)
        raise RuntimeError("charge neither crossed nor returned within the time budget")
    return WallEncounter(out.x < x0, inc, out, traj)


@dataclass
class CavityResult:
    trajectory: Trajectory
    trapped: bool
    exit_time: float | None


def cavity_fields(L_cav: float, D: float, phi_B: float, w: float = 0.0) -> FieldRegionSet:
    """Two walls bounding (-D/2, D/2) inside a channel |y| < L_cav/2."""
    mirrors = (Mirror(-L_cav / 2), Mirror(L_cav / 2))
    if w == 0:
        sheets = (FieldSheet(-D / 2, phi_B), FieldSheet(D / 2, phi_B))
        return FieldRegionSet(sheets=sheets, mirrors=mirrors)
    if phi_B == 0:
        return FieldRegionSet(mirrors=mirrors)
    regions = (FieldRegion(-D / 2 - w, -D / 2, phi_B / w), FieldRegion(D / 2, D / 2 + w, phi_B / w))
    return FieldRegionSet(regions=regions, mirrors=mirrors)


def simulate_cavity(L_cav: float, D: float, phi_B: float, initial: ClassicalState, params: PhysicalParams,
                    w: float = 0.0, t_max: float | None = None, n_record: int = 2000) -> CavityResult:
    """Follow a charge between two walls in a channel; trapped if it never leaves."""
    if not (-D / 2 < initial.x < D / 2 and -L_cav / 2 < initial.y < L_cav / 2):
        raise ValueError("initial state must lie between the walls inside the cavity")
    p = initial.speed_momentum
    if p == 0:
        raise ValueError("charge at rest")
    v = p / params.m
    if t_max is None:
        if w > 0 and phi_B != 0:
            t_max = 1000 * 2 * math.pi * params.m * w / abs(params.q * phi_B)
        else:
            t_max = 1000 * (D + L_cav) / v
    fields = cavity_fields(L_cav, D, phi_B, w)
    edge = D / 2 + w
    escaped = lambda s: abs(s.x) > edge
    dt = t_max / n_record
    traj = integrate(initial, fields, dt, n_record, params, stop=escaped)
    out = traj.final()
    trapped = not escaped(out)
    if trapped:
        return CavityResult(traj, True, None)
    # outside the walls the motion is free and mirrors leave v_x alone, so back up exactly
    t_exit = float(traj.t[-1]) - (abs(out.x) - edge) / abs(out.px / params.m)
    return CavityResult(traj, False, t_exit)
