"""Scenario runners behind the CLI.

Each runner takes a validated config and an output directory, writes its
data files (and figures when asked) and returns an :class:`Outcome` with
scalar summary metrics and per-invariant verdicts.  ``check`` builds the
model objects without solving anything so precondition violations surface
as config errors before any output is written.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classical as cl
from . import emergence as em
from . import scattering as sc
from . import spectral as spc
from .config import ConfigError
from .core import GaugeError, PhysicalParams, fluxon


@dataclass
class Outcome:
    summary: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)


def params_of(cfg: dict) -> PhysicalParams:
    u = cfg["units"]
    return PhysicalParams(hbar=u["hbar"], q=u["q"], m=u["m"])


def _as_list(v) -> list[float]:
    return [float(x) for x in (v if isinstance(v, list) else [v])]


def _tol(cfg: dict, name: str, default: float) -> float:
    return float(cfg["run"]["tolerances"].get(name, default))


def _write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return path


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float))
    return path


# ---------------------------------------------------------------------------
# classical


def _classical_wall(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    phi, w, x0 = m["phi_B"], m["w"], m["x0"]
    tol = _tol(cfg, "classical", 1e-9)
    rows, encs = [], []
    law_ok = angle_ok = kick_ok = True
    for p in _as_list(m["momenta"]):
        for ang in _as_list(m["angles_deg"]):
            th = math.radians(ang)
            enc = cl.encounter_wall(p, th, phi, w, P, x0=x0, lead=m["lead"])
            encs.append(enc)
            px = p * math.cos(th)
            if ang == 0.0:
                law_ok &= enc.reflected == cl.reflects_normal(px, phi, P)
            if cl.reflects_any_angle(px, p * math.sin(th), phi, P):
                law_ok &= enc.reflected
            o = enc.outgoing
            if enc.reflected:
                ang_out = math.atan2(o.py, -o.px)
                angle_ok &= abs(ang_out - th) < tol
            else:
                kick_ok &= abs(enc.delta_py - cl.wall_crossing_kick(phi, P)) < tol
            rows.append([p, ang, int(enc.reflected), o.px, o.py, enc.delta_py])
    files = [_write_csv(out / "encounters.csv",
                        ["p", "angle_deg", "reflected", "px_out", "py_out", "delta_py"], rows)]
    traj_rows = []
    for n, enc in enumerate(encs):
        for t, s in zip(enc.trajectory.t, enc.trajectory.states):
            traj_rows.append([n, t, *s])
    files.append(_write_csv(out / "trajectories.csv", ["id", "t", "x", "y", "px", "py"], traj_rows))
    if cfg["output"]["figures"]:
        from .plotting import plot_wall_encounters
        files.append(plot_wall_encounters(encs, (x0, w), out / "trajectories.png"))
    summary = {"encounters": len(rows), "reflected": sum(r[2] for r in rows),
               "larmor_radius_at_threshold": cl.larmor_radius(abs(P.q * phi) / P.m, phi, w, P)}
    return Outcome(summary, {"reflection_law": law_ok, "specular_angle": angle_ok,
                             "universal_kick": kick_ok}, files)


def _classical_cavity_check(cfg):
    m = cfg["model"]
    x, y, _, _ = m["initial"]
    if not (-m["D"] / 2 < x < m["D"] / 2 and -m["L_cav"] / 2 < y < m["L_cav"] / 2):
        raise ConfigError("model.initial must start between the walls inside the channel")


def _classical_cavity(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    st = cl.ClassicalState(*m["initial"])
    res = cl.simulate_cavity(m["L_cav"], m["D"], m["phi_B"], st, P, w=m["w"],
                             t_max=m.get("t_max"), n_record=m["n_record"])
    files = [res.trajectory.write_csv(out / "trajectory.csv")]
    if cfg["output"]["figures"]:
        from .plotting import plot_trajectory
        walls = (-m["D"] / 2, m["D"] / 2)
        if m["w"] > 0:
            walls += (-m["D"] / 2 - m["w"], m["D"] / 2 + m["w"])
        files.append(plot_trajectory(res.trajectory, out / "trajectory.png", walls,
                                     (-m["L_cav"] / 2, m["L_cav"] / 2)))
    p = st.speed_momentum
    s = res.trajectory.states
    drift = float(np.max(np.abs(np.hypot(s[:, 2], s[:, 3]) - p)))
    # below |q phi_B|/2 no incidence angle gets through either wall
    guaranteed = cl.reflects_any_angle(p, 0.0, m["phi_B"], P)
    inv = {"speed_conserved": drift < _tol(cfg, "speed", 1e-9)}
    if guaranteed:
        inv["trapped_when_guaranteed"] = res.trapped
    return Outcome({"trapped": res.trapped, "exit_time": res.exit_time, "speed_drift": drift}, inv, files)


# ---------------------------------------------------------------------------
# quantum wall


def _wall_setup(m) -> sc.WallSetup:
    keys = ("nx", "ny", "a", "sigma_x", "absorb_margin", "absorb_ratio", "courant", "clearance")
    return sc.WallSetup(phi_B=m["phi_B"], **{k: m[k] for k in keys})


def _quantum_wall_check(cfg):
    m = cfg["model"]
    setup = _wall_setup(m)
    g = setup.grid()
    n_abs = sc.absorber_sites(g, setup.absorb_margin)
    span = (g.nx - 2 * n_abs) * g.a
    # simulate_wall places the packet clearance*sigma past the absorber and the wall 4.2 sigma beyond it
    if span <= (setup.clearance + 4.2) * setup.sigma_x:
        raise ConfigError("grid too short for the packet width and absorbing layers")


def _quantum_wall(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    setup = _wall_setup(m)
    ks = _as_list(m["k_x"])
    res = [sc.simulate_wall(k, setup, P, m["k_y"]) for k in ks]
    tol = _tol(cfg, "transmission", 1e-2)
    rows = [[r.k_x, r.k_y, r.transmission, r.oracle, r.run.reflection,
             r.run.absorbed_left + r.run.absorbed_right] for r in res]
    files = [_write_csv(out / "transmission.csv",
                        ["k_x", "k_y", "transmission", "oracle", "reflection", "absorbed"], rows)]
    worst = max((abs(r.transmission - r.oracle) for r in res), default=0.0)
    summary = {"max_oracle_deviation": worst,
               "transmission": res[0].transmission if len(res) == 1 else None}
    inv = {"oracle_match": worst < tol,
           "probability_accounted": all(abs(r.transmission + r.run.reflection - 1) < 1e-6 for r in res)}
    th = abs(P.q * m["phi_B"])
    if m["threshold"]:
        p_half = sc.half_transmission_momentum(setup, P)
        summary["half_transmission_momentum"] = p_half
        summary["threshold_ratio"] = p_half / th
        inv["threshold_within_5pct"] = abs(p_half / th - 1) < _tol(cfg, "threshold", 0.05)
    files.append(_write_json(out / "summary.json", summary))
    if cfg["output"]["figures"] and res:
        from .plotting import plot_transmission
        oracle = np.vectorize(lambda k: sc.step_transmission_oracle(k, m["k_y"], m["phi_B"], P))
        files.append(plot_transmission(ks, [r.transmission for r in res], oracle, th / P.hbar,
                                       out / "transmission.png"))
    return Outcome(summary, inv, files)


# ---------------------------------------------------------------------------
# flux-line cavity


def _cavity_cfg(m, Phi_B=None) -> spc.CavityConfig:
    return spc.CavityConfig(m["L_cav"], m["D"], m["Phi_B"] if Phi_B is None else Phi_B, m["a"], m["outer"])


def _flux_cavity_check(cfg, P):
    c = _cavity_cfg(cfg["model"])
    try:
        c.links(P)
    except GaugeError as exc:
        raise ConfigError(f"model: {exc}") from None


def _flux_cavity(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    seed = cfg["run"]["seed"]
    c = _cavity_cfg(m)
    rep = spc.cavity_spectrum(c, P, k=m["k"], min_inside=m["min_inside"], seed=seed)
    files = [_write_json(out / "spectrum.json", rep.to_dict())]
    loc = rep.spectrum.localization["inter_flux"]
    rows = [[i, e, loc[i], r] for i, (e, r) in enumerate(zip(rep.spectrum.eigenvalues, rep.spectrum.residuals))]
    files.append(_write_csv(out / "spectrum.csv", ["index", "energy", "inter_flux_probability", "residual"], rows))
    summary = {"bound_state_found": rep.found, "crossing_energy": rep.crossing_energy,
               "threshold_D": rep.threshold_D, "D_over_threshold": m["D"] / rep.threshold_D,
               "ground_energy": float(rep.spectrum.eigenvalues[0])}
    inv = {"residuals": bool(np.all(rep.spectrum.residuals < spc.RESIDUAL_TOL)),
           "orthonormal": bool(np.abs(rep.spectrum.overlap_matrix() - np.eye(m["k"])).max() < 1e-8)}
    if spc.bound_states_exist(m["D"], c.phi_B, P) and m["D"] >= 2 * rep.threshold_D:
        inv["bound_state"] = rep.found
    if rep.found:
        summary["bound_energy"] = float(rep.spectrum.eigenvalues[rep.bound_index])
        summary["bound_inter_flux_probability"] = float(loc[rep.bound_index])
    if m["control_fluxon"]:
        ctrl = spc.cavity_spectrum(_cavity_cfg(m, m["Phi_B"] + fluxon(P)), P, k=m["k"],
                                   min_inside=m["min_inside"], seed=seed)
        files.append(_write_json(out / "spectrum_control.json", ctrl.to_dict()))
        summary["control_bound_state_found"] = ctrl.found
        inv["fluxon_periodicity"] = bool(np.allclose(ctrl.spectrum.eigenvalues, rep.spectrum.eigenvalues,
                                                     atol=1e-9 * max(1.0, rep.spectrum.eigenvalues[-1])))
        zero = spc.cavity_spectrum(_cavity_cfg(m, fluxon(P)), P, k=m["k"], min_inside=m["min_inside"], seed=seed)
        summary["full_fluxon_bound_state_found"] = zero.found
        inv["no_state_at_full_fluxon"] = not zero.found
    if cfg["output"]["states"]:
        files.append(rep.spectrum.write_states(out / "eigenstates.npy"))
    if cfg["output"]["figures"]:
        from .plotting import plot_density
        i = rep.bound_index if rep.found else 0
        g = c.grid()
        files.append(plot_density(rep.spectrum.eigenstates[i].psi, g, out / "bound_state.png",
                                  f"E = {rep.spectrum.eigenvalues[i]:.4f}",
                                  [(-m["D"] / 2, 0.0), (m["D"] / 2, 0.0)]))
    return Outcome(summary, inv, files)


# ---------------------------------------------------------------------------
# diffraction


def _diff_setup(m) -> sc.DiffractionSetup:
    return sc.DiffractionSetup(m["L"], m["periods"], m["a"], m["sigma_x"], m["room"], m["courant"])


def _diffraction_check(cfg, P):
    m = cfg["model"]
    g = _diff_setup(m).grid()
    n = m["L"] / m["a"]
    if abs(n - round(n)) > 1e-9:
        raise ConfigError("model.L must be a multiple of model.a")
    ky = m["k"][1] * g.length_y / (2 * math.pi)
    if abs(ky - round(ky)) > 1e-9:
        raise ConfigError("model.k[1] must be commensurate with the periodic y length")


def _diffraction(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    setup = _diff_setup(m)
    k = tuple(m["k"])
    res = sc.simulate_diffraction(m["Phi_B"], k, setup, P)
    spec = res.spectrum
    rows = [[p.order, p.dp, p.weight, p.offset] for p in spec.peaks]
    files = [_write_csv(out / "spectrum.csv", ["order", "dp", "weight", "comb_offset"], rows),
             _write_csv(out / "distribution.csv", ["dp", "weight"], zip(spec.dp, spec.weight))]
    worst = max((abs(p.offset) for p in spec.peaks), default=0.0)
    summary = {"transmitted": spec.transmitted, "peaks": len(spec.peaks), "max_comb_offset": worst,
               "bin_width": spec.bin_width,
               "min_deflection": sc.minimum_deflection(m["Phi_B"], m["L"], P)}
    inv = {"on_comb": worst <= spec.bin_width}
    spectra = {f"Phi_B={m['Phi_B']:.4g}": spec}
    if m["mirror"]:
        mirror_flux = fluxon(P) - m["Phi_B"]
        if not math.isclose(mirror_flux, m["Phi_B"], rel_tol=1e-12):
            other = sc.simulate_diffraction(mirror_flux, (k[0], -k[1]), setup, P).spectrum
            _write_csv(out / "spectrum_mirror.csv", ["order", "dp", "weight", "comb_offset"],
                       [[p.order, p.dp, p.weight, p.offset] for p in other.peaks])
            files.append(out / "spectrum_mirror.csv")
            spectra[f"Phi_B={mirror_flux:.4g}"] = other
        else:
            other = spec
        d_dp, d_w = sc.mirror_mismatch(spec, other)
        summary.update(mirror_dp_mismatch=d_dp, mirror_weight_mismatch=d_w)
        inv["mirror_symmetry"] = d_dp <= spec.bin_width
    files.append(_write_json(out / "summary.json", summary))
    if cfg["output"]["figures"]:
        from .plotting import plot_diffraction
        n = np.arange(-4, 5)
        files.append(plot_diffraction(spectra, sc.momentum_comb(n, m["Phi_B"], m["L"], P),
                                      out / "spectrum.png"))
    return Outcome(summary, inv, files)


# ---------------------------------------------------------------------------
# Landau levels


def _landau_check(cfg, P):
    m = cfg["model"]
    Phi = m["B"] * m["L"] ** 2
    if abs(Phi) >= abs(fluxon(P)) / 2:
        raise ConfigError("B * L^2 must stay below half a fluxon")
    a = m.get("a", m["L"] / 2)
    if abs(m["L"] / a - round(m["L"] / a)) > 1e-9:
        raise ConfigError("model.L must be a multiple of model.a")
    if m["B"] != 0 and m["domain"] < 6 * spc.magnetic_length(m["B"], P):
        raise ConfigError("domain must span at least 6 magnetic lengths")


def _landau(cfg, out: Path, P: PhysicalParams) -> Outcome:
    m = cfg["model"]
    res = spc.landau_from_flux_grid(m["B"], m["L"], m["domain"], P, k=m["k"], a=m.get("a"),
                                    n_levels=m["n_levels"], seed=cfg["run"]["seed"])
    spec = res.spectrum
    files = [_write_json(out / "spectrum.json", res.to_dict()),
             _write_csv(out / "levels.csv", ["n", "level", "reference", "relative_error"],
                        [[n, lv, rf, e] for n, (lv, rf, e) in
                         enumerate(zip(res.levels, res.reference, res.errors))])]
    errs = res.errors
    summary = {"B_eff": res.B_eff, "max_level_error": float(errs.max()) if len(errs) else math.nan,
               "levels_found": len(res.levels)}
    for n, e in enumerate(errs):
        summary[f"level_{n}_error"] = float(e)
    inv = {"residuals": bool(np.all(spec.residuals < spc.RESIDUAL_TOL)),
           "levels_within_5pct": len(res.levels) >= m["n_levels"] and bool(np.all(errs < _tol(cfg, "landau", 0.05)))}
    if cfg["output"]["states"]:
        files.append(spec.write_states(out / "eigenstates.npy"))
    if cfg["output"]["figures"]:
        from .plotting import plot_levels
        files.append(plot_levels(spec.eigenvalues, res.reference, out / "levels.png"))
    return Outcome(summary, inv, files)


# ---------------------------------------------------------------------------
# emergence


def _emergence_cfg(m) -> em.EmergenceConfig:
    d = dict(m)
    if "orbit_center" in d:
        d["orbit_center"] = tuple(d["orbit_center"])
    return em.EmergenceConfig(**d)


def _emergence_check(cfg, P):
    c = _emergence_cfg(cfg["model"])
    if abs(c.cell / c.L - round(c.cell / c.L)) > 1e-9:
        raise ConfigError("model.cell must be a multiple of model.L")
    if abs(c.L / c.a - round(c.L / c.a)) > 1e-9:
        raise ConfigError("model.L must be a multiple of model.a")
    B = c.B0
    sigma = c.sigma if c.sigma is not None else (math.sqrt(P.hbar / abs(P.q * B)) if B else None)
    if sigma is None:
        raise ConfigError("model.sigma is required when B0 = 0")
    if sigma < c.min_spacings * c.L:
        raise ConfigError(f"packet width {sigma} is below {c.min_spacings} line spacings")


def _emergence(cfg, out: Path, P: PhysicalParams) -> Outcome:
    c = _emergence_cfg(cfg["model"])
    rep = em.run_emergence_experiment(c, P)
    files = [rep.write_json(out / "report.json"),
             _write_csv(out / "series.csv", ["t", "x", "y", "p_x", "p_y", "width", "norm2"],
                        zip(rep.t, rep.r[:, 0], rep.r[:, 1], rep.p[:, 0], rep.p[:, 1], rep.width, rep.norm2)),
             _write_csv(out / "force.csv", ["t", "F_x", "F_y", "lorentz_x", "lorentz_y", "rel_deviation"],
                        zip(rep.t_mid, rep.force[:, 0], rep.force[:, 1], rep.lorentz[:, 0],
                            rep.lorentz[:, 1], rep.rel_deviation))]
    summary = rep.summary()
    summary = {k: v for k, v in summary.items() if not isinstance(v, (list, tuple))}
    inv = {"norm_conserved": bool(abs(rep.norm2[-1] - 1) < 1e-8)}
    if c.B0 != 0:
        inv["force_within_10pct"] = rep.max_rel_deviation < _tol(cfg, "force", 0.10)
        if c.alpha == 0:
            inv["radius_within_5pct"] = rep.radius_error < _tol(cfg, "radius", 0.05)
    else:
        inv["free_motion"] = rep.max_abs_residual < _tol(cfg, "free_force", 1e-3)
    if cfg["output"]["figures"]:
        from .plotting import plot_emergence
        files.append(plot_emergence(rep, out / "emergence.png"))
    return Outcome(summary, inv, files)


# ---------------------------------------------------------------------------

RUNNERS = {
    "classical-wall": _classical_wall,
    "classical-cavity": _classical_cavity,
    "quantum-wall": _quantum_wall,
    "flux-line-cavity": _flux_cavity,
    "lattice-diffraction": _diffraction,
    "flux-grid-landau": _landau,
    "emergence": _emergence,
}


def check(cfg: dict) -> None:
    """Raise ConfigError when the config violates a model precondition."""
    try:
        P = params_of(cfg)
    except ValueError as exc:
        raise ConfigError(f"units: {exc}") from None
    kind = cfg["scenario"]
    try:
        if kind == "classical-cavity":
            _classical_cavity_check(cfg)
        elif kind == "quantum-wall":
            _quantum_wall_check(cfg)
        elif kind == "flux-line-cavity":
            _flux_cavity_check(cfg, P)
        elif kind == "lattice-diffraction":
            _diffraction_check(cfg, P)
        elif kind == "flux-grid-landau":
            _landau_check(cfg, P)
        elif kind == "emergence":
            _emergence_check(cfg, P)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None


def run(cfg: dict, out: Path) -> Outcome:
    return RUNNERS[cfg["scenario"]](cfg, out, params_of(cfg))
