"""Command-line front end: config handling, sweeps and run manifests.

Every command resolves a TOML config (file values, then flag overrides, then
defaults), validates it against a JSON schema, writes its CSV outputs plus a
``manifest.json`` into the output directory, and exits with

    0 success, 1 failed audit, 2 config error, 3 non-convergence, 4 grid support.

Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from cavityqc import __version__
from cavityqc import classical as cl
from cavityqc import dynamics as dy
from cavityqc.gridplan import PlanError, plan_grid
from cavityqc.grids import AxisGrid, GridError, ProductGrid, fast_size, ho_eigenfunction_on_grid
from cavityqc.hamiltonians import (
    GAUGE_ALIASES,
    GAUGES,
    DenseCapError,
    GridSupportError,
    canonical_gauge,
    apply_ma_unitary,
    build_operator,
)
from cavityqc.params import (
    ParameterError,
    PhysicalParams,
    classify_regime,
    dressed_params,
)
from cavityqc.potentials import PotentialError, PotentialModel
from cavityqc import spectra as sp

OUT_ENV = "CAVITYQC_OUT"
DEFAULT_OUT = "cavityqc_out"
SWEEP_COLUMNS = ("epsilon", "hbar_eff", "quantity", "index", "value", "status")

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_SUPPORT = 0, 1, 2, 3, 4

POTENTIAL_DEFAULTS = {
    "harmonic": {"omega0": 1.0, "mass": 1.0},
    "quartic_double_well": {"V_b": 2.0, "a": 1.0},
    "morse": {"D": 1.0, "alpha": 1.0, "x_e": 0.0},
    "polynomial": {"coefficients": [0.0, 0.0, 0.5]},
}

DEFAULTS = {
    "seed": 0,
    "gauge": "AG",
    "physical": {"m": 1.0, "omega": 1.0, "hbar": 1.0, "epsilon": 0.0},
    "potential": {"kind": "quartic_double_well", **POTENTIAL_DEFAULTS["quartic_double_well"]},
    "grid": {"n_levels": 10, "resolution": 1.0, "extent": 1.0, "spare_levels": 3,
             "dense_cap": 16384},
    "spectrum": {"k": 10, "method": "auto", "certify": False},
    "gauge_check": {"k": 10, "tol": 1e-8},
    "propagate": {"x0": 1.0, "p0": 0.0, "sigma": 0.0, "frame": "MG", "dt": 0.0,
                  "steps": 1000, "record_every": 10, "snapshot_every": 0},
    "sweep": {"task": "tunneling", "epsilons": [], "epsilon_log": "", "k": 6, "workers": 0},
    "classical": {"system": "henon_heiles", "mode": "fraction", "lam": 1.0, "energy": 0.125,
                  "n_seeds": 50, "dt": 0.05, "t_max": 1000.0, "n_crossings": 200,
                  "x0": 1.0, "p0": 0.0, "sigma": 0.1, "n_traj": 1000, "steps": 1000},
    "compare": {"x0": 1.0, "p0": 0.0, "sigma": 0.0, "n_traj": 20000, "t_max": 20.0,
                "record_dt": 0.05, "dt_classical": 0.01, "threshold": 0.1},
    "husimi": {"state": 0, "n_states": 0, "energy": 0.0, "threshold": 0.5, "sigma": 0.0,
               "nx": 201, "np": 241},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer"}
_posint = {"type": "integer", "minimum": 1}
_nonnegint = {"type": "integer", "minimum": 0}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


def _potential_schema() -> dict:
    variants = []
    shapes = {
        "harmonic": {"omega0": _pos, "mass": _pos},
        "quartic_double_well": {"V_b": _pos, "a": _pos},
        "morse": {"D": _pos, "alpha": _pos, "x_e": _num},
        "polynomial": {"coefficients": {"type": "array", "items": _num, "minItems": 1}},
    }
    for kind, props in shapes.items():
        v = _block({"kind": {"const": kind}, **props})
        v["required"] = ["kind", *props]
        variants.append(v)
    return {"oneOf": variants}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cavityqc run config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "gauge": {"enum": list(GAUGES) + list(GAUGE_ALIASES)},
        "physical": _block({"m": _pos, "omega": _pos, "hbar": _pos, "epsilon": _nonneg}),
        "potential": _potential_schema(),
        "grid": _block({"n_levels": _posint, "resolution": _pos, "extent": _pos,
                        "spare_levels": _nonnegint, "dense_cap": _posint}),
        "spectrum": _block({"k": _posint, "method": {"enum": ["auto", "dense", "krylov"]},
                            "certify": {"type": "boolean"}}),
        "gauge_check": _block({"k": _posint, "tol": _pos}),
        "propagate": _block({"x0": _num, "p0": _num, "sigma": _nonneg,
                             "frame": {"enum": ["MG", "native"]}, "dt": _nonneg,
                             "steps": _nonnegint, "record_every": _posint,
                             "snapshot_every": _nonnegint}),
        "sweep": _block({"task": {"enum": ["tunneling", "spectrum", "params"]},
                         "epsilons": {"type": "array", "items": _nonneg},
                         "epsilon_log": {"type": "string"}, "k": _posint,
                         "workers": _nonnegint}),
        "classical": _block({"system": {"enum": ["henon_heiles", "potential"]},
                             "mode": {"enum": ["fraction", "section", "ensemble"]},
                             "lam": _num, "energy": _num, "n_seeds": _posint, "dt": _pos,
                             "t_max": _pos, "n_crossings": _posint, "x0": _num, "p0": _num,
                             "sigma": _pos, "n_traj": _posint, "steps": _nonnegint}),
        "compare": _block({"x0": _num, "p0": _num, "sigma": _nonneg, "n_traj": _posint,
                           "t_max": _pos, "record_dt": _pos, "dt_classical": _pos,
                           "threshold": _pos}),
        "husimi": _block({"state": _nonnegint, "n_states": _nonnegint, "energy": _num,
                          "threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                          "sigma": _nonneg, "nx": {"type": "integer", "minimum": 2},
                          "np": {"type": "integer", "minimum": 2}}),
    },
}


class ConfigError(ValueError):
    pass


class AuditFailure(RuntimeError):
    pass


# --- config ---------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key == "potential" and isinstance(val, dict):
            current = out.get("potential", {})
            kind = val.get("kind", current.get("kind"))
            start = current if kind == current.get("kind") else {
                "kind": kind, **POTENTIAL_DEFAULTS.get(kind, {})}
            out["potential"] = {**start, **val}
        elif isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _normalize(cfg: dict) -> dict:
    """Ints where the schema asks for numbers become floats, so the resolved
    config has one canonical JSON form."""
    def walk(node, schema):
        if isinstance(node, dict):
            props = schema.get("properties", {})
            if "oneOf" in schema:
                props = next((v["properties"] for v in schema["oneOf"]
                              if v["properties"]["kind"]["const"] == node.get("kind")), {})
            return {k: walk(v, props.get(k, {})) for k, v in node.items()}
        if isinstance(node, list):
            return [walk(v, schema.get("items", {})) for v in node]
        if schema.get("type") == "number" and isinstance(node, int) and not isinstance(node, bool):
            return float(node)
        return node
    out = walk(cfg, SCHEMA)
    if "gauge" in out:
        out["gauge"] = canonical_gauge(out["gauge"])
    return out


def validate(cfg: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {e.message}")


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- file values <- overrides, validated, with every default filled in."""
    if not isinstance(file_values or {}, dict):
        raise ConfigError("config must be a table of sections")
    cfg = _merge(_merge(DEFAULTS, file_values or {}), overrides or {})
    validate(cfg)
    cfg = _normalize(cfg)
    return cfg


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            if path.suffix == ".json":
                return json.load(fh)
            return tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def parse_epsilon_log(text: str) -> list[float]:
    """'a:b:n' -> n log-spaced couplings from a to b inclusive."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError as exc:
        raise ConfigError(f"epsilon_log must be 'a:b:n', got {text!r}") from exc
    if a <= 0 or b <= 0 or n < 1:
        raise ConfigError("epsilon_log needs a, b > 0 and n >= 1")
    return [float(v) for v in np.geomspace(a, b, n)]


def sweep_epsilons(cfg: dict) -> list[float]:
    s = cfg["sweep"]
    if s["epsilon_log"]:
        if s["epsilons"]:
            raise ConfigError("give either sweep.epsilons or sweep.epsilon_log, not both")
        return parse_epsilon_log(s["epsilon_log"])
    if not s["epsilons"]:
        raise ConfigError("sweep needs sweep.epsilons or sweep.epsilon_log")
    return [float(e) for e in s["epsilons"]]


def physical_of(cfg: dict, epsilon: float | None = None) -> PhysicalParams:
    p = PhysicalParams(**cfg["physical"])
    return p if epsilon is None else p.with_epsilon(epsilon)


def potential_of(cfg: dict) -> PotentialModel:
    return PotentialModel.from_dict(cfg["potential"])


def subseed(seed: int, tag: int) -> int:
    """Independent 32-bit stream derived from the run seed."""
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def output_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v: float) -> str:
    return repr(float(v))


# --- shared builders ------------------------------------------------------------

def _grid(cfg: dict, gauge: str, physical: PhysicalParams, potential: PotentialModel,
          n_levels: int):
    g = cfg["grid"]
    return plan_grid(gauge, physical, potential, n_levels, g["resolution"], g["extent"],
                     g["spare_levels"])


def _operator(cfg: dict, gauge: str, physical: PhysicalParams, potential: PotentialModel,
              grid):
    return build_operator(gauge, physical, potential, grid, dense_cap=cfg["grid"]["dense_cap"])


def _dressed_entry(p: PhysicalParams) -> dict:
    d = dressed_params(p)
    r = classify_regime(p)
    return {"epsilon": p.epsilon, **d.to_dict(), "regime": r.label, "ratio": r.ratio}


class Run:
    """Collects outputs and metadata for the manifest."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.outputs: list[str] = []
        self.dressed: list[dict] = []
        self.certifications: list[dict] = []
        self.results: dict = {}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def manifest(self, wall: float) -> dict:
        return {
            "artifact": "cavityqc",
            "version": __version__,
            "command": self.command,
            "config": self.cfg,
            "dressed": self.dressed,
            "certifications": self.certifications,
            "results": self.results,
            "wall_clock_s": wall,
            "outputs": {n: sha256_of(self.out / n) for n in sorted(set(self.outputs))},
        }


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


# --- commands -------------------------------------------------------------------

def cmd_params(run: Run) -> int:
    p = physical_of(run.cfg)
    entry = _dressed_entry(p)
    run.dressed.append(entry)
    run.results = entry
    print(f"epsilon={p.epsilon:.5g} epsilon_max={entry['epsilon_max']:.5g} "
          f"ratio={entry['ratio']:.5g} regime={entry['regime']}")
    print(f"zeta={entry['zeta']:.5g} M={entry['M']:.5g} hbar_eff={entry['hbar_eff']:.5g}")
    print(f"mu={entry['mu']:.5g} Omega={entry['Omega']:.5g} xi={entry['xi']:.5g} "
          f"varsigma={entry['varsigma']:.5g}")
    return EXIT_OK


def _solve(cfg: dict, gauge: str, p: PhysicalParams, V: PotentialModel, k: int,
           method: str, certify: bool, seed: int):
    grid = _grid(cfg, gauge, p, V, k)
    op = _operator(cfg, gauge, p, V, grid)
    res = sp.eigen(op, k + 4 if certify else k, method=method, seed=seed)
    if not res.converged:
        raise sp.SpectrumConvergenceError(
            f"{gauge}: eigen solver did not converge", res.residual_norms)
    if certify:
        res.certification = sp.certify_convergence(
            lambda g: _operator(cfg, gauge, p, V, g), res, k, grid=grid)
    return res


def cmd_spectrum(run: Run) -> int:
    cfg = run.cfg
    p, V = physical_of(cfg), potential_of(cfg)
    gauge = cfg["gauge"]
    s = cfg["spectrum"]
    run.dressed.append(_dressed_entry(p))
    res = _solve(cfg, gauge, p, V, s["k"], s["method"], s["certify"], subseed(cfg["seed"], 1))
    k = s["k"]
    sp.write_spectrum_csv(run.path("spectrum.csv"),
                          [(p.epsilon, i, res.eigenvalues[i], gauge, res.residual_norms[i])
                           for i in range(k)])
    run.results = {"method": res.method, "grid": res.grid,
                   "eigenvalues": [float(e) for e in res.eigenvalues[:k]]}
    for i in range(k):
        print(f"{i:4d} {res.eigenvalues[i]: .12g}")
    if res.certification is not None:
        run.certifications.append({"epsilon": p.epsilon, "gauge": gauge,
                                   **res.certification.to_dict()})
        if not res.certification.passed:
            raise sp.SpectrumConvergenceError(
                f"certification failed: max bound {res.certification.max_bound:.3e}")
    return EXIT_OK


def cmd_gauge_check(run: Run) -> int:
    cfg = run.cfg
    p, V = physical_of(cfg), potential_of(cfg)
    k, tol = cfg["gauge_check"]["k"], cfg["gauge_check"]["tol"]
    run.dressed.append(_dressed_entry(p))
    seed = subseed(cfg["seed"], 2)
    mg = _solve(cfg, "MG", p, V, k, "dense", False, seed)
    ag = _solve(cfg, "AG", p, V, k, "dense", False, seed)
    e_mg, e_ag = mg.eigenvalues[:k], ag.eigenvalues[:k]
    rel = np.abs(e_ag - e_mg) / np.maximum(np.abs(e_mg), 1e-300)
    worst = float(np.max(rel))
    ok = worst < tol
    rows = [(p.epsilon, i, e, g, r) for g, res in (("MG", mg), ("AG", ag))
            for i, (e, r) in enumerate(zip(res.eigenvalues[:k], res.residual_norms[:k]))]
    sp.write_spectrum_csv(run.path("spectrum.csv"), rows)
    print(f"{'level':>5} {'E_MG':>20} {'E_AG':>20} {'rel_delta':>10}  status")
    for i in range(k):
        flag = "PASS" if rel[i] < tol else "FAIL"
        print(f"{i:5d} {e_mg[i]:20.12f} {e_ag[i]:20.12f} {rel[i]:10.2e}  {flag}")
    print(f"{'PASS' if ok else 'FAIL'} max relative delta {worst:.3e} (tol {tol:.1e})")
    run.results = {"max_rel_delta": worst, "tol": tol, "passed": ok}
    if not ok:
        raise AuditFailure(f"MG and AG spectra differ by {worst:.3e} (tol {tol:.1e})")
    return EXIT_OK


def sweep_point(task: str, cfg: dict, epsilon: float) -> list[tuple]:
    """Rows for one coupling; failures become status rows, not exceptions."""
    p = physical_of(cfg, epsilon)
    d = dressed_params(p)
    hb = d.hbar_eff

    def row(q, i, v, status="ok"):
        return (epsilon, hb, q, i, float(v), status)

    try:
        if task == "params":
            return [row(k, 0, v) for k, v in d.to_dict().items()]
        V = potential_of(cfg)
        k = cfg["sweep"]["k"]
        if task == "tunneling":
            grid = _grid(cfg, "semiclassical", p, V, k)
            ts = sp.tunneling_splitting(_operator(cfg, "semiclassical", p, V, grid))
            return [row("delta_E", 0, ts.delta, "ok"), row("E_even", 0, ts.e_even),
                    row("E_odd", 0, ts.e_odd)]
        res = _solve(cfg, cfg["gauge"], p, V, k, cfg["spectrum"]["method"], False,
                     subseed(cfg["seed"], 3))
        return [row("energy", i, e) for i, e in enumerate(res.eigenvalues[:k])]
    except sp.NoDoubletError:
        return [row("delta_E", 0, math.nan, "no_doublet")]
    except (sp.SpectrumConvergenceError, ArithmeticError):
        return [row(task, 0, math.nan, "not_converged")]
    except (GridSupportError, DenseCapError, PlanError, GridError):
        return [row(task, 0, math.nan, "grid_support")]


def _sweep_job(args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return sweep_point(*args)


def cmd_sweep(run: Run) -> int:
    cfg = run.cfg
    task = cfg["sweep"]["task"]
    eps = sweep_epsilons(cfg)
    if task == "tunneling":
        V = potential_of(cfg)
        if V.barrier is None:
            raise ConfigError("the tunneling sweep needs a quartic_double_well potential")
    workers = cfg["sweep"]["workers"] or os.cpu_count() or 1
    jobs = [(task, cfg, e) for e in eps]
    if workers == 1 or len(jobs) == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_job, jobs))
    # single writer, rows in coupling order
    with open(run.path("sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for rows in results:
            for e, hb, q, i, v, status in rows:
                w.writerow([_fmt(e), _fmt(hb), q, i, _fmt(v), status])
    for e in eps:
        run.dressed.append(_dressed_entry(physical_of(cfg, e)))
    status = {}
    for rows in results:
        for r in rows:
            status[r[5]] = status.get(r[5], 0) + 1
    run.results = {"task": task, "n_points": len(eps), "status_counts": status}
    if task == "tunneling":
        strong = [(r[0], r[4]) for rows in results for r in rows
                  if r[2] == "delta_E" and r[5] == "ok"
                  and classify_regime(physical_of(cfg, r[0])).label == "strong"]
        vals = [v for _, v in strong]
        mono = bool(all(b < a for a, b in zip(vals, vals[1:])))
        run.results["strong_regime_monotone_decreasing"] = mono
        print(f"{len(eps)} couplings; delta_E strictly decreasing over the "
              f"{len(vals)} strong-coupling points: {mono}")
    else:
        print(f"{len(eps)} couplings written to sweep.csv")
    return EXIT_OK


def initial_state(cfg: dict, gauge: str, p: PhysicalParams, V: PotentialModel, grid):
    """Gaussian matter packet times the bare cavity vacuum.

    With frame "MG" the product is formed in minimal-coupling coordinates and
    mapped into the acceleration gauges; "native" forms it directly on the grid.
    """
    c = cfg["propagate"]
    hb = p.hbar
    if gauge == "semiclassical":
        hb = dressed_params(p).hbar_eff
        sigma = c["sigma"] or dy.local_width(V, p.m, hb)
        return dy.gaussian_1d(grid, c["x0"], c["p0"], sigma, hb)
    sigma = c["sigma"] or dy.local_width(V, p.m, hb)
    matter = dy.gaussian_1d(grid.matter, c["x0"], c["p0"], sigma, hb)
    cavity = ho_eigenfunction_on_grid(0, grid.cavity, *_cavity_vacuum(p, grid.cavity.label), hb)
    psi = dy.product_state(matter, cavity, grid).values
    if c["frame"] == "MG" and gauge in ("AG", "AG_rescaled", "AG_weak"):
        psi = apply_ma_unitary(psi, p, grid, direction=-1)
    return psi / math.sqrt(np.sum(np.abs(psi) ** 2) * grid.cell)


def _packet_cover(grid: ProductGrid, cfg: dict, gauge: str, p: PhysicalParams,
                  V: PotentialModel) -> ProductGrid:
    """Widen and refine the matter axis until it also holds the initial packet.

    In the acceleration gauges the packet is sheared by the cavity coordinate,
    so the reach of zeta*q over the cavity axis is added.
    """
    c = cfg["propagate"]
    d = dressed_params(p)
    sigma = c["sigma"] or dy.local_width(V, p.m, p.hbar)
    packet = dy.packet_grid(V, p.m, p.hbar, c["x0"], c["p0"], sigma)
    reach = 0.0
    if gauge in ("AG", "AG_weak", "AG_rescaled"):
        coupling = d.xi if gauge == "AG_rescaled" else d.zeta
        reach = abs(coupling) * grid.cavity.x_max
    matter = _cover(grid.matter, packet.x_min - reach, packet.x_max + reach, packet.dx)
    # bare cavity vacuum, 7 widths in position and momentum
    cm, cf = _cavity_vacuum(p, grid.cavity.label)
    sc = dy.coherent_width(cm, cf, p.hbar)
    sp_ = p.hbar / (2.0 * sc)
    cavity = _cover(grid.cavity, -7.0 * sc, 7.0 * sc, math.pi * p.hbar / (7.0 * sp_))
    return ProductGrid(matter, cavity)


def _cover(axis: AxisGrid, lo: float, hi: float, dx: float) -> AxisGrid:
    """Smallest change of ``axis`` that contains [lo, hi] at spacing <= dx."""
    lo = min(axis.x_min, lo)
    hi = max(axis.x_max, hi)
    dx = min(axis.dx, dx)
    if lo == axis.x_min and hi == axis.x_max and dx == axis.dx:
        return axis
    half = max(-lo, hi)
    return AxisGrid.centered(half, fast_size(int(math.ceil(2.0 * half / dx))), axis.label)


def _cavity_vacuum(p: PhysicalParams, label: str) -> tuple[float, float]:
    """(mass, frequency) whose oscillator ground state is the bare cavity vacuum."""
    if label == "Q":
        # exp(-omega q**2/2hbar) with q = s*Q
        s = dressed_params(p).cavity_scale
        return p.omega * s * s, 1.0
    return 1.0, p.omega


def cmd_propagate(run: Run) -> int:
    cfg = run.cfg
    p, V = physical_of(cfg), potential_of(cfg)
    d = dressed_params(p)
    gauge = cfg["gauge"]
    c = cfg["propagate"]
    run.dressed.append(_dressed_entry(p))
    if gauge == "semiclassical":
        sigma = c["sigma"] or dy.local_width(V, p.m, d.hbar_eff)
        g = cfg["grid"]
        grid = dy.packet_grid(V, p.m, d.hbar_eff, c["x0"], c["p0"], sigma)
        if g["resolution"] != 1.0 or g["extent"] != 1.0:
            grid = AxisGrid.centered(grid.length / 2 * g["extent"],
                                     int(round(grid.n * g["resolution"] * g["extent"])))
    else:
        grid = _packet_cover(_grid(cfg, gauge, p, V, cfg["grid"]["n_levels"]), cfg, gauge, p, V)
    op = _operator(cfg, gauge, p, V, grid)
    psi = initial_state(cfg, gauge, p, V, grid)
    dt = c["dt"] or 0.25 * op.hbar / float(np.ptp(op.kinetic) + np.ptp(op.potential))
    shift = {"AG": d.zeta, "AG_weak": d.zeta, "AG_rescaled": d.xi}.get(gauge, 0.0)
    snap = c["snapshot_every"] or None
    rec = dy.propagate(op, psi, dt, c["steps"], c["record_every"],
                       dressed=None if gauge == "semiclassical" else d, x_shift=shift,
                       snapshot_every=snap, snapshot_dir=str(run.out) if snap else None)
    rec.to_csv(run.path("propagation.csv"))
    for s in rec.snapshots:
        run.outputs.append(Path(s).name)
    run.results = {"dt": dt, "steps": c["steps"], "grid": op.grid.to_dict(),
                   "norm_drift": rec.norm_drift(), "energy_drift": rec.energy_drift(),
                   "final_x_mean": float(rec.x_mean[-1]), "final_x_var": float(rec.x_var[-1])}
    print(f"dt={dt:.4g} steps={c['steps']} norm drift {rec.norm_drift():.2e} "
          f"energy drift {rec.energy_drift():.2e}")
    return EXIT_OK


def _classical_system(cfg: dict) -> cl.ClassicalSystem:
    c = cfg["classical"]
    if c["system"] == "henon_heiles":
        return cl.ClassicalSystem.henon_heiles(c["lam"])
    return cl.ClassicalSystem.from_potential(potential_of(cfg), cfg["physical"]["m"])


def cmd_classical(run: Run) -> int:
    cfg = run.cfg
    c = cfg["classical"]
    system = _classical_system(cfg)
    seed = subseed(cfg["seed"], 4)
    if c["mode"] == "ensemble":
        rng = np.random.default_rng(seed)
        hb = dressed_params(physical_of(cfg)).hbar_eff
        x0 = [c["x0"]] + [0.0] * (system.dim - 1)
        p0 = [c["p0"]] + [0.0] * (system.dim - 1)
        q, pp = cl.wigner_gaussian_samples(x0, p0, c["sigma"], hb, c["n_traj"], rng)
        rec = cl.run_ensemble(system, q, pp, c["dt"], c["steps"], order=4,
                              sampling={"kind": "wigner_gaussian", "x0": x0, "p0": p0,
                                        "sigma": c["sigma"], "hbar": hb})
        rec.to_csv(run.path("ensemble.csv"))
        worst = float(np.max(rec.energy_error))
        run.results = {"max_energy_error": worst}
        print(f"{c['n_traj']} trajectories, max relative energy error {worst:.2e}")
        return EXIT_OK
    if system.dim != 2:
        raise ConfigError(f"classical mode {c['mode']!r} needs a 2D system")
    if c["mode"] == "fraction":
        res = cl.chaotic_fraction(system, c["energy"], c["n_seeds"], seed=seed, dt=c["dt"],
                                  t_max=c["t_max"])
        run.results = res.to_dict()
        _write_rows(run.path("fraction.csv"), ["seed_id", "sali", "class"],
                    [(i, _fmt(v), lab) for i, (v, lab) in enumerate(zip(res.sali, res.labels))])
        print(f"E={c['energy']:.6g} chaotic fraction {res.fraction:.3f} +- {res.stderr:.3f} "
              f"({res.n_indeterminate} indeterminate)")
        return EXIT_OK
    rng = np.random.default_rng(seed)
    q0, p0 = cl.seeds_on_section(system, c["energy"], c["n_seeds"], rng)
    section = cl.poincare_section(system, c["energy"], q0, p0, min(c["dt"], 0.01),
                                  c["n_crossings"])
    values = cl.sali(system, q0, p0, c["dt"], c["t_max"], rng=rng)
    labels = cl.classify_sali(values)
    labels[section.escaped] = "escaped"
    section.labels = labels
    section.to_csv(run.path("section.csv"))
    run.results = {"n_points": int(len(section.points)), "residual": section.residual,
                   "n_escaped": int(np.sum(section.escaped)),
                   "thresholds": {"chaotic_below": cl.SALI_CHAOTIC,
                                  "regular_above": cl.SALI_REGULAR}}
    print(f"{len(section.points)} section points from {c['n_seeds']} seeds, "
          f"max |y| at crossings {section.residual:.1e}")
    return EXIT_OK


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    p, V = physical_of(cfg), potential_of(cfg)
    d = dressed_params(p)
    c = cfg["compare"]
    run.dressed.append(_dressed_entry(p))
    hb = d.hbar_eff
    sigma = c["sigma"] or dy.local_width(V, p.m, hb)
    grid = dy.packet_grid(V, p.m, hb, c["x0"], c["p0"], sigma)
    op = _operator(cfg, "semiclassical", p, V, grid)
    system = cl.ClassicalSystem.from_potential(V, p.m)
    res = dy.spread_study(op, system, c["x0"], c["p0"], sigma, c["n_traj"],
                          subseed(cfg["seed"], 5), c["t_max"], record_dt=c["record_dt"],
                          dt_classical=c["dt_classical"], threshold=c["threshold"],
                          stop_at_divergence=False)
    _write_rows(run.path("compare.csv"), ["time", "quantum_var", "classical_var", "rel_diff"],
                [[_fmt(v) for v in r] for r in res.rows()])
    t_div = res.divergence_time
    run.results = {"divergence_time": t_div if math.isfinite(t_div) else "inf",
                   "threshold": c["threshold"], "hbar_eff": hb, "sigma": sigma}
    print(f"hbar_eff={hb:.5g} divergence time ({c['threshold']:.0%} criterion): "
          f"{t_div:.4g}" if math.isfinite(t_div) else
          f"hbar_eff={hb:.5g}: no divergence up to t={c['t_max']:.4g}")
    return EXIT_OK


def _allowed_span(V: PotentialModel, energy: float) -> tuple[float, float]:
    """Bounds of the region V < energy (all wells)."""
    x0, _ = V.minimum()
    width = 1.0
    while True:
        x = x0 + np.linspace(-width, width, 4001)
        with np.errstate(over="ignore"):
            v = V.value(x)
        if v[0] > energy and v[-1] > energy:
            break
        width *= 2.0
        if width > 1e6:
            raise ConfigError("the region V < energy is unbounded")
    x = x0 + np.linspace(-2.0 * width, 2.0 * width, 16001)
    with np.errstate(over="ignore"):
        inside = x[V.value(x) < energy]
    return float(inside.min()), float(inside.max())


def cmd_husimi(run: Run) -> int:
    cfg = run.cfg
    p, V = physical_of(cfg), potential_of(cfg)
    d = dressed_params(p)
    h = cfg["husimi"]
    run.dressed.append(_dressed_entry(p))
    hb = d.hbar_eff
    energy = h["energy"] or (V.barrier if V.barrier is not None else 0.0)
    if energy <= V.minimum()[1]:
        raise ConfigError("husimi.energy must lie above the potential minimum "
                          "(it defaults to the barrier top only for double wells)")
    # default: the Weyl estimate of the states in the region plus a margin
    area0 = cl.phase_area_1d(V, p.m, energy, *_allowed_span(V, energy))
    n = max(h["n_states"] or int(area0 / (2.0 * math.pi * hb)) + 6, h["state"] + 1)
    grid = _grid(cfg, "semiclassical", p, V, n)
    op = _operator(cfg, "semiclassical", p, V, grid)
    res = sp.eigen(op, n, seed=subseed(cfg["seed"], 6))
    sigma = h["sigma"] or dy.local_width(V, p.m, hb)
    xs = np.linspace(grid.x_min, grid.x_max, h["nx"])
    p_max = math.sqrt(2.0 * p.m * (energy - V.minimum()[1])) + 4.0 * hb / (2.0 * sigma)
    ps = np.linspace(-p_max, p_max, h["np"])
    q = dy.husimi(res.eigenvectors[h["state"]], grid, hb, xs, ps, sigma)
    with open(run.path("husimi.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "p", "husimi"])
        for i, x in enumerate(xs):
            for j, pv in enumerate(ps):
                w.writerow([_fmt(x), _fmt(pv), _fmt(q[i, j])])

    def inside(X, P):
        return P**2 / (2.0 * p.m) + V.value(X) < energy

    loc = dy.husimi_localized_count(res.eigenvectors, grid, hb, inside, xs, ps, sigma,
                                    h["threshold"])
    area = area0
    pred = cl.count_from_area(area, hb)
    run.results = {"state": h["state"], "energy": energy, "sigma": sigma,
                   "husimi_norm": dy.husimi_norm(q, xs, ps), "threshold": h["threshold"],
                   "localized_count": loc.count, "predicted_count": pred.count,
                   "region_area": area, "masses": [float(m) for m in loc.masses]}
    print(f"hbar_eff={hb:.5g} region H<{energy:.5g}: area/(2 pi hbar_eff)={pred.count:.2f}, "
          f"states with Husimi mass > {h['threshold']:.0%}: {loc.count} of {n}")
    if loc.count == n:
        print("every computed state is localized; raise husimi.n_states for a full count")
    return EXIT_OK


COMMANDS = {
    "params": cmd_params,
    "spectrum": cmd_spectrum,
    "gauge-check": cmd_gauge_check,
    "sweep": cmd_sweep,
    "propagate": cmd_propagate,
    "classical": cmd_classical,
    "compare": cmd_compare,
    "husimi": cmd_husimi,
}


# --- argument parsing -----------------------------------------------------------

# (flag, config path, type)
_COMMON_FLAGS = [
    ("--seed", "seed", int),
    ("--gauge", "gauge", str),
    ("--m", "physical.m", float),
    ("--omega", "physical.omega", float),
    ("--hbar", "physical.hbar", float),
    ("--epsilon", "physical.epsilon", float),
    ("--potential", "potential.kind", str),
    ("--V-b", "potential.V_b", float),
    ("--a", "potential.a", float),
    ("--omega0", "potential.omega0", float),
    ("--mass", "potential.mass", float),
    ("--D", "potential.D", float),
    ("--alpha", "potential.alpha", float),
    ("--x-e", "potential.x_e", float),
    ("--coefficients", "potential.coefficients", "floats"),
    ("--n-levels", "grid.n_levels", int),
    ("--resolution", "grid.resolution", float),
    ("--extent", "grid.extent", float),
    ("--dense-cap", "grid.dense_cap", int),
]

_COMMAND_FLAGS = {
    "spectrum": [("--k", "spectrum.k", int), ("--method", "spectrum.method", str),
                 ("--certify", "spectrum.certify", "flag")],
    "gauge-check": [("--k", "gauge_check.k", int), ("--tol", "gauge_check.tol", float)],
    "sweep": [("--task", "sweep.task", str), ("--epsilons", "sweep.epsilons", "floats"),
              ("--epsilon-log", "sweep.epsilon_log", str), ("--k", "sweep.k", int),
              ("--workers", "sweep.workers", int), ("--method", "spectrum.method", str)],
    "propagate": [("--x0", "propagate.x0", float), ("--p0", "propagate.p0", float),
                  ("--sigma", "propagate.sigma", float), ("--frame", "propagate.frame", str),
                  ("--dt", "propagate.dt", float), ("--steps", "propagate.steps", int),
                  ("--record-every", "propagate.record_every", int),
                  ("--snapshot-every", "propagate.snapshot_every", int)],
    "classical": [("--system", "classical.system", str), ("--mode", "classical.mode", str),
                  ("--lam", "classical.lam", float), ("--energy", "classical.energy", float),
                  ("--n-seeds", "classical.n_seeds", int), ("--dt", "classical.dt", float),
                  ("--t-max", "classical.t_max", float),
                  ("--n-crossings", "classical.n_crossings", int),
                  ("--x0", "classical.x0", float), ("--p0", "classical.p0", float),
                  ("--sigma", "classical.sigma", float), ("--n-traj", "classical.n_traj", int),
                  ("--steps", "classical.steps", int)],
    "compare": [("--x0", "compare.x0", float), ("--p0", "compare.p0", float),
                ("--sigma", "compare.sigma", float), ("--n-traj", "compare.n_traj", int),
                ("--t-max", "compare.t_max", float), ("--record-dt", "compare.record_dt", float),
                ("--threshold", "compare.threshold", float)],
    "husimi": [("--state", "husimi.state", int), ("--n-states", "husimi.n_states", int),
               ("--energy", "husimi.energy", float), ("--threshold", "husimi.threshold", float),
               ("--sigma", "husimi.sigma", float), ("--nx", "husimi.nx", int),
               ("--np", "husimi.np", int)],
}


COMMAND_HELP = {
    "params": "print dressed parameters and the coupling regime",
    "spectrum": "lowest eigenvalues in one gauge (optionally certified)",
    "gauge-check": "compare MG and AG spectra; exit 1 above tolerance",
    "sweep": "tunneling splitting, spectra or parameters over an epsilon list",
    "propagate": "split-operator propagation of a Gaussian packet",
    "classical": "chaotic fraction, Poincare section or trajectory ensemble",
    "compare": "quantum vs classical position variance",
    "husimi": "Husimi distribution and localized-state count",
}


def _dest(path: str) -> str:
    return "cfg__" + path.replace(".", "__")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _add_flags(parser: argparse.ArgumentParser, flags) -> None:
    for flag, path, kind in flags:
        if kind == "flag":
            parser.add_argument(flag, dest=_dest(path), action="store_true", default=None,
                                help=f"sets {path}")
        else:
            parser.add_argument(flag, dest=_dest(path), default=None,
                                metavar="X,Y,..." if kind == "floats" else path.split(".")[-1].upper(),
                                type=_floats if kind == "floats" else kind,
                                help=f"sets {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cavityqc", description="Cavity-coupled matter in the momentum and acceleration gauges.")
    parser.add_argument("--version", action="version", version=f"cavityqc {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = subs.add_parser(name, help=COMMAND_HELP[name], description=COMMAND_HELP[name])
        sp_.add_argument("--config", help="TOML (or JSON) run config")
        sp_.add_argument("--from-manifest", help="rerun the config recorded in a manifest.json")
        sp_.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        _add_flags(sp_, _COMMON_FLAGS)
        _add_flags(sp_, _COMMAND_FLAGS.get(name, []))
    sch = subs.add_parser("schema", help="print the JSON schema of the run config")
    sch.add_argument("--defaults", action="store_true", help="print the default config instead")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    out: dict = {}
    for key, val in vars(args).items():
        if not key.startswith("cfg__") or val is None:
            continue
        parts = key[len("cfg__"):].split("__")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return out


def _error(kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def run_command(command: str, cfg: dict, out: Path) -> tuple[int, dict]:
    run = Run(command, cfg, out)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        code = COMMANDS[command](run)
    except AuditFailure:
        code = EXIT_AUDIT
    manifest = run.manifest(time.perf_counter() - t0)
    manifest["exit_code"] = code
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, allow_nan=False, default=str)
        fh.write("\n")
    return code, manifest


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "schema":
        print(json.dumps(DEFAULTS if args.defaults else SCHEMA, indent=2))
        return EXIT_OK
    try:
        command = args.command
        if args.from_manifest:
            with open(args.from_manifest) as fh:
                recorded = json.load(fh)
            if recorded.get("command") != command:
                raise ConfigError(f"manifest was written by {recorded.get('command')!r}, "
                                  f"not {command!r}")
            file_values = recorded["config"]
        elif args.config:
            file_values = load_config_file(args.config)
        else:
            file_values = {}
        cfg = resolve_config(file_values, overrides_from_args(args))
        out = output_dir(args.out)
        code, _ = run_command(command, cfg, out)
        return code
    except (ConfigError, ParameterError, PotentialError, PlanError, OSError,
            json.JSONDecodeError, KeyError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except (sp.SpectrumConvergenceError, sp.NoDoubletError,
            cl.ClassicalIntegrationError, cl.SectionError) as exc:
        return _error("convergence", exc, EXIT_CONVERGENCE)
    except (GridSupportError, DenseCapError, GridError) as exc:
        return _error("grid_support", exc, EXIT_SUPPORT)


if __name__ == "__main__":
    sys.exit(main())
