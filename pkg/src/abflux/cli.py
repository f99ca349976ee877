"""Command line entry point.

    abflux run <config|preset> [--out DIR]
    abflux sweep <config|preset> --param model.k_x --values 1.5,2,2.5 [--workers N]
    abflux presets list
    abflux validate <config|preset>

Outputs go under $ABFLUX_OUTPUT_ROOT (default ./abflux-runs).  Exit codes:
0 success, 2 config/schema error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from . import scenarios
from .config import (CONFIG_SCHEMA, MODEL_SCHEMAS, ConfigError, config_hash, load_config,
                     set_path, validate_config)

OUTPUT_ENV = "ABFLUX_OUTPUT_ROOT"
DEFAULT_ROOT = "abflux-runs"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _json_default(o):
    return o.item() if hasattr(o, "item") else str(o)


@dataclass
class RunManifest:
    name: str
    scenario: str
    config_hash: str
    code_version: str
    wall_clock_s: float
    status: str
    invariants: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # relative path -> sha256
    error: str | None = None

    def write(self, path: Path) -> Path:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default))
        return path


# ---------------------------------------------------------------------------
# presets


def _preset_dir():
    return resources.files("abflux") / "presets"


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in _preset_dir().iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    f = _preset_dir() / f"{name}.json"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; see `presets list`")
    return validate_config(json.loads(f.read_text()))


def resolve_config(ref: str) -> dict:
    """A config file path, or the name of a shipped preset."""
    p = Path(ref)
    if p.exists():
        cfg = load_config(p)
    elif ref in preset_names():
        cfg = load_preset(ref)
    else:
        raise ConfigError(f"no such config file or preset: {ref}")
    scenarios.check(cfg)
    return cfg


# ---------------------------------------------------------------------------
# running


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_ROOT))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_config(cfg: dict, out: Path) -> RunManifest:
    """Execute one validated config into ``out``; always writes manifest.json."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    t0 = time.perf_counter()
    try:
        res = scenarios.run(cfg, out)
        status, err = ("ok" if all(res.invariants.values()) else "invariant-failed"), None
    except Exception as exc:  # preconditions were checked up front, so this is a solver failure
        res, status, err = scenarios.Outcome(), "solver-error", f"{type(exc).__name__}: {exc}"
    files = {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in res.files}
    man = RunManifest(cfg["name"], cfg["scenario"], config_hash(cfg), __version__,
                      round(time.perf_counter() - t0, 3), status, res.invariants, res.summary,
                      dict(sorted(files.items())), err)
    man.write(out / "manifest.json")
    return man


def _run_dir(cfg: dict, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg["output"].get("dir"):
        return output_root() / cfg["output"]["dir"]
    return output_root() / f"{cfg['name']}-{config_hash(cfg)[:12]}"


def _exit_for(man: RunManifest) -> int:
    if man.status == "solver-error":
        return EXIT_SOLVER
    return EXIT_OK


def _print_manifest(man: RunManifest, out: Path):
    print(f"{man.name} [{man.scenario}] {man.status} in {man.wall_clock_s:.1f}s -> {out}")
    for k, v in man.invariants.items():
        print(f"  {'PASS' if v else 'FAIL'} {k}")
    if man.error:
        print(f"  error: {man.error}", file=sys.stderr)


# ---------------------------------------------------------------------------
# sweeps


def parse_values(text: str) -> list:
    """JSON list (``[1, 2]``) or comma-separated numbers; empty string gives []."""
    text = text.strip()
    if not text:
        return []
    if text.startswith("["):
        try:
            vals = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--values: {exc}") from None
        if not isinstance(vals, list):
            raise ConfigError("--values must be a list")
        return vals
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(json.loads(tok))
        except json.JSONDecodeError:
            out.append(tok)
    return out


def check_param_path(cfg: dict, path: str):
    """Reject dotted paths the schema does not know about."""
    keys = path.split(".")
    if len(keys) == 2 and keys[0] == "model":
        props = MODEL_SCHEMAS[cfg["scenario"]]["properties"]
    elif len(keys) == 2 and keys[0] in ("units", "run", "output"):
        props = CONFIG_SCHEMA["properties"][keys[0]]["properties"]
    else:
        props = {}
    if keys[-1] not in props:
        raise ConfigError(f"unknown parameter path {path!r} for {cfg['scenario']}")


def _flat_scalars(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if hasattr(v, "item") and not hasattr(v, "__len__"):
            v = v.item()  # numpy scalars
        if isinstance(v, (int, float, bool, str)) or v is None:
            out[k] = v
    return out


def _sweep_row(args):
    cfg, out = args
    return run_config(cfg, out)


def sweep(cfg: dict, param: str, values: list, out: Path, workers: int = 1) -> tuple[Path, list[dict]]:
    """One run per value of ``param``; writes sweep.csv and returns its rows."""
    check_param_path(cfg, param)
    jobs, rows = [], []
    for i, v in enumerate(values):
        try:
            sub = validate_config(set_path(cfg, param, v))
            sub["name"] = f"{cfg['name']}-{i:03d}"
            scenarios.check(sub)
        except ConfigError as exc:
            rows.append((i, {"value": json.dumps(v), "status": "config-error", "error": str(exc)}))
            continue
        jobs.append((i, v, sub, out / f"row-{i:03d}"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            mans = list(ex.map(_sweep_row, [(c, o) for _, _, c, o in jobs]))
    else:
        mans = [_sweep_row((c, o)) for _, _, c, o in jobs]
    for (i, v, _, _), man in zip(jobs, mans):
        row = {"value": json.dumps(v), "status": man.status, "error": man.error or ""}
        row.update(_flat_scalars(man.summary))
        row.update({f"inv_{k}": bool(v) for k, v in man.invariants.items()})
        rows.append((i, row))
    rows = [r for _, r in sorted(rows, key=lambda t: t[0])]
    out.mkdir(parents=True, exist_ok=True)
    cols = ["value", "status", "error"]
    for r in rows:
        cols += [k for k in r if k not in cols]
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return path, rows


# ---------------------------------------------------------------------------


def _cmd_run(ns) -> int:
    cfg = resolve_config(ns.config)
    out = _run_dir(cfg, ns.out)
    man = run_config(cfg, out)
    _print_manifest(man, out)
    return _exit_for(man)


def _cmd_sweep(ns) -> int:
    cfg = resolve_config(ns.config)
    values = parse_values(ns.values)
    check_param_path(cfg, ns.param)
    if ns.out:
        out = Path(ns.out)
    else:
        tag = hashlib.sha256(json.dumps([config_hash(cfg), ns.param, values]).encode()).hexdigest()[:12]
        out = output_root() / f"{cfg['name']}-sweep-{tag}"
    workers = ns.workers or cfg["run"]["workers"]
    path, rows = sweep(cfg, ns.param, values, out, workers)
    print(f"{len(rows)} rows -> {path}")
    for r in rows:
        print(f"  {r['value']}: {r['status']}")
    return EXIT_OK


def _cmd_presets(ns) -> int:
    for name in preset_names():
        cfg = load_preset(name)
        budget = cfg["run"].get("budget_s")
        b = f" (budget {budget:.0f}s)" if budget else ""
        print(f"{name:24s} {cfg['scenario']:20s}{b} {cfg['description']}")
    return EXIT_OK


def _cmd_validate(ns) -> int:
    cfg = resolve_config(ns.config)
    print(f"ok: {cfg['name']} [{cfg['scenario']}] hash {config_hash(cfg)[:12]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="abflux", description="Aharonov-Bohm flux-line scenarios")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config or preset")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default under $%s)" % OUTPUT_ENV)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="dotted path, e.g. model.k_x")
    p.add_argument("--values", required=True, help="comma list or JSON list")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("presets", help="shipped scenario presets")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=_cmd_presets)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
