"""Command line: scenario ingestion, task dispatch, JSON/CSV output and SVG heatmaps.

Exit codes: 0 success, 1 invalid input or unsupported request, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys as _sys
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import born_bayes, instantlaws, mott, records
from .configspace import KineticMetric, catalog_generator, select_preferred
from .dynamics import ConstrainedSystem, make_potential
from .errors import InputError, TimelessError, UnsupportedFeatureError
from .expr import parse_expression
from .semiclassical import ShootingConfig, find_extremals, semiclassical_amplitude
from .spectral import (ExtendedSystem, GridHilbert, SourceFilter, SpectralWindow, build_hamiltonian, extended_grid,
                       projector_amplitude)

TASKS = ("propagate", "records", "mott", "bayes", "closure", "conserve", "heatmap")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 1}
_point = {"type": "array", "items": _num, "minItems": 1}
_box = {"type": "array", "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}, "minItems": 1}


def _obj(props: dict, required: Sequence[str] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCENARIO_SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "system": _obj({
        "dim": _int,
        "potential": {"type": "string"},
        "params": {"type": "object", "additionalProperties": {"anyOf": [_num, _point]}},
        "energy": _num,
        "hbar": _pos,
        "mass": {"anyOf": [_pos, {"type": "array", "items": _pos, "minItems": 1}]},
        "metric": {"type": "array", "items": {"type": "array", "items": {"anyOf": [_num, {"type": "string"}]}},
                   "minItems": 1},
        "snap_energy": {"type": "boolean"},
    }, ["dim", "potential"]),
    "grid": _obj({
        "axes": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                 "minItems": 1},
        "boundary": {"enum": ["periodic", "dirichlet"]},
        "kinetic": {"enum": ["fd", "spectral"]},
        "time": _obj({"points": {"type": "integer", "minimum": 8}, "spacing": _pos}, ["points", "spacing"]),
    }, ["axes"]),
    "window": _obj({"kind": {"enum": ["gaussian", "sharp"]}, "width": _pos, "source_filter": {"type": "boolean"}}),
    "shooting": _obj({
        "n_starts": _int, "bvp_tol": _pos, "max_newton_iters": _int, "max_time": _pos, "min_time": _pos,
        "dt": _pos, "polish_dt": _pos, "fd_step": _pos, "dedupe_distance": _pos, "domain_diameter": _pos,
    }),
    "records": _obj({"epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    "qstar": _obj({
        "point": _point,
        "candidates": {"type": "array", "items": _point, "minItems": 1},
        "generators": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "n_particles": _int,
        "space_dim": _int,
        "tol": _pos,
    }),
    "theory": _obj({"id": {"type": "string"}, "prior": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
                   ["id", "prior"]),
    "mott": _obj({
        "rings": _int, "radii": {"type": "array", "items": _pos}, "sigma_theta": _pos, "k": _pos,
        "quadrature_points": {"type": "integer", "minimum": 256}, "n": _int, "n_prime": _int, "bend": _num,
        "bends": {"type": "array", "items": _num},
    }),
    "tasks": _obj({
        "propagate": _obj({"targets": {"type": "array", "items": _point}}),
        "records": _obj({"q": _point, "q_r": _point, "kernel": {"type": "boolean"}}, ["q", "q_r"]),
        "conserve": _obj({"q_r": _point, "region": _obj({"box": _box}, ["box"])}, ["q_r"]),
        "closure": _obj({
            "generators": {"type": "array", "items": {"type": "string"}, "minItems": 2},
            "n_particles": _int, "space_dim": _int, "dim": _int, "samples": {"type": "integer", "minimum": 20},
            "tol": _pos,
        }, ["generators"]),
        "heatmap": _obj({"quantity": {"enum": ["density", "kernel"]}}),
    }),
}, ["system"])

OBSERVATIONS_SCHEMA = _obj({
    "qstar": _point,
    "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "chain": {"type": "array", "items": _obj({"box": _box}, ["box"]), "minItems": 2},
}, ["qstar", "chain"])

_float_or_null = {"type": ["number", "null"]}

OUTPUT_SCHEMAS = {
    "propagate": _obj({
        "task": {"const": "propagate"}, "backend": {"enum": ["spectral", "semiclassical"]}, "qstar": _point,
        "nodes": {"type": "integer"}, "max_abs": _num, "norm2": _float_or_null, "measure": _float_or_null,
        "window": {"type": ["object", "null"]}, "system": {"type": "string"}, "energy": _num,
    }, ["task", "backend", "qstar", "nodes", "max_abs"]),
    "records": _obj({
        "task": {"const": "records"}, "qstar": _point, "q": _point, "epsilon": _num, "exhaustive": {"type": "boolean"},
        "tubes": {"type": "array", "items": _obj({
            "radius": _num, "rho_min": _num, "rho_max": _num, "action": _num, "traversal_time": _num,
            "van_vleck": _num})},
        "verdict": _obj({
            "candidate": _point, "contained_in_all": {"type": "boolean"},
            "per_tube": {"type": "array", "items": _obj({"radius": _num, "distance": _num}, ["radius", "distance"])},
            "factorization_residual": _float_or_null,
            "normalization": {"anyOf": [_num, {"type": "null"}, {"type": "array", "items": _num}]},
        }, ["candidate", "contained_in_all", "per_tube"]),
    }, ["task", "qstar", "q", "epsilon", "exhaustive", "tubes", "verdict"]),
    "conserve": _obj({
        "task": {"const": "conserve"}, "q_r": _point, "region_nodes": {"type": "integer"}, "lhs": _num, "rhs": _num,
        "holds": {"type": "boolean"}, "saturation": _num, "vacuous": {"type": "boolean"},
        "p_region": _float_or_null, "p_factorized": _float_or_null, "p_bound": _float_or_null,
    }, ["task", "lhs", "rhs", "holds", "saturation"]),
    "mott": _obj({
        "task": {"const": "mott"}, "model": {"type": "object"}, "n": {"type": "integer"},
        "n_prime": {"type": "integer"}, "bend": _num, "collinearity_ratio": _float_or_null,
        "P_n": _num, "P_n_prime": _num, "P_conditional": _num, "conditional_residual": _num,
    }, ["task", "collinearity_ratio", "conditional_residual"]),
    "closure": _obj({
        "task": {"const": "closure"}, "generators": {"type": "array"}, "report": {"type": "object"},
        "instant": {"type": "array"},
    }, ["task", "generators", "report", "instant"]),
    "bayes": _obj({
        "task": {"const": "bayes"},
        "theories": {"type": "array", "items": _obj({
            "theory_id": {"type": "string"}, "prior": _num, "likelihood": _num, "posterior": _num},
            ["theory_id", "prior", "likelihood", "posterior"])},
        "chain": {"type": ["object", "null"]},
    }, ["task", "theories"]),
    "heatmap": _obj({
        "task": {"const": "heatmap"}, "quantity": {"type": "string"}, "min": _num, "max": _num,
        "shape": {"type": "array", "items": {"type": "integer"}},
    }, ["task", "quantity", "min", "max", "shape"]),
}


# -- scenario loading ----------------------------------------------------------------


def _validate(doc, schema, label: str) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        loc = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise InputError("cli.run_scenario", f"{label}: at {loc}: {e.message}")


def load_json(path: str, schema: dict, label: Optional[str] = None) -> dict:
    label = label or os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except FileNotFoundError:
        raise InputError("cli.run_scenario", f"{label}: file not found") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError("cli.run_scenario", f"{label}: not valid JSON ({e})") from None
    _validate(doc, schema, label)
    return doc


def build_metric(block: dict) -> Optional[KineticMetric]:
    dim = block["dim"]
    if "metric" in block:
        rows = block["metric"]
        if len(rows) != dim or any(len(r) != dim for r in rows):
            raise InputError("cli.run_scenario", f"system/metric must be {dim}×{dim}")
        if all(not isinstance(x, str) for r in rows for x in r):
            return KineticMetric.from_matrix(rows)
        names = [f"q{i + 1}" for i in range(dim)]
        cells = [[parse_expression(str(x), names).compile(names) for x in r] for r in rows]

        def ev(q, cells=cells):
            return np.array([[float(c(*q)) for c in r] for r in cells])

        return KineticMetric(ev, dim)
    if "mass" in block:
        m = np.broadcast_to(np.asarray(block["mass"], dtype=float), (dim,))
        return KineticMetric.from_matrix(np.diag(m))
    return KineticMetric.identity(dim)


def build_system(block: dict) -> ConstrainedSystem:
    if "metric" in block and "mass" in block:
        raise InputError("cli.run_scenario", "system: give either metric or mass, not both")
    dim = block["dim"]
    pot = make_potential(block["potential"], dim, block.get("params"))
    return ConstrainedSystem(dim, build_metric(block), pot, float(block.get("energy", 0.0)),
                             float(block.get("hbar", 1.0)), (), block["potential"])


def build_grid(doc: dict) -> GridHilbert:
    if "grid" not in doc:
        raise InputError("cli.run_scenario", "missing required key 'grid'")
    g = doc["grid"]
    if "time" in g:
        return extended_grid(g["axes"], g["time"]["points"], g["time"]["spacing"])
    return GridHilbert(tuple(tuple(a) for a in g["axes"]), g.get("boundary", "periodic"))


def build_shooting(doc: dict, seed: int) -> ShootingConfig:
    return ShootingConfig(rng_seed=seed, **doc.get("shooting", {}))


def _scenario_system(doc: dict, grid: Optional[GridHilbert]):
    base = build_system(doc["system"])
    system = ExtendedSystem(base) if "grid" in doc and "time" in doc["grid"] else base
    if doc["system"].get("snap_energy"):
        if grid is None:
            raise InputError("cli.run_scenario", "system/snap_energy needs a grid")
        from .spectral import snap_energy

        system = snap_energy(system, grid, doc["grid"].get("kinetic", "fd"))
    return system


def build_kernel(doc: dict, system, grid: GridHilbert):
    w = doc.get("window")
    window = None if w is None or "kind" not in w else SpectralWindow(w["kind"], w.get("width", 0.1))
    filt = SourceFilter() if (w or {}).get("source_filter") else None
    op = build_hamiltonian(system, grid, doc["grid"].get("kinetic", "fd"))
    return projector_amplitude(op, window, grid, filt)


def resolve_qstar(doc: dict, dim: int) -> np.ndarray:
    block = doc.get("qstar")
    if block is None:
        raise InputError("cli.run_scenario", "missing required key 'qstar'")
    if "point" in block:
        q = np.asarray(block["point"], dtype=float)
    elif "candidates" in block and "generators" in block:
        npart = block.get("n_particles", 1)
        sdim = block.get("space_dim", dim // npart)
        gens = [catalog_generator(nm, npart, sdim) for nm in block["generators"]]
        q = select_preferred(gens, block["candidates"], block.get("tol", 1e-9)).coords
    else:
        raise InputError("cli.run_scenario", "qstar needs 'point' or both 'candidates' and 'generators'")
    if q.size != dim:
        raise InputError("cli.run_scenario", f"qstar has {q.size} coordinates, system has {dim}")
    return q


def _epsilon(doc: dict) -> float:
    return float(doc.get("records", {}).get("epsilon", 0.1))


def _task(doc: dict, name: str) -> dict:
    tasks = doc.get("tasks", {})
    if name not in tasks:
        raise InputError("cli.run_scenario", f"missing required key 'tasks/{name}'")
    return tasks[name]


# -- output ------------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


def write_json(path: str, obj) -> None:
    text = json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_csv(path: str, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _ramp(t: float) -> str:
    """Linear ramp from dark blue (0) to yellow (1)."""
    lo = np.array([0x20, 0x1a, 0x6b])
    hi = np.array([0xf5, 0xe0, 0x2a])
    c = np.rint(lo + (hi - lo) * min(max(t, 0.0), 1.0)).astype(int)
    return "#%02x%02x%02x" % tuple(c)


def emit_heatmap(values, out: str, axes: Optional[Sequence] = None, title: str = "", labels=("q1", "q2"),
                 cell: int = 6) -> str:
    """Standalone SVG heatmap of 1D or 2D data with a linear color ramp.

    Axis 0 runs left to right, axis 1 bottom to top. ``axes`` optionally
    gives the (lo, hi) extent of each axis for the labels.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
        one_d = True
    elif v.ndim == 2:
        one_d = False
    else:
        raise UnsupportedFeatureError("cli.emit_heatmap", f"heatmaps need 1D or 2D data, got {v.ndim}D")
    if not np.all(np.isfinite(v)):
        raise InputError("cli.emit_heatmap", "heatmap data must be finite")
    nx, ny = v.shape
    vmin, vmax = float(v.min()), float(v.max())
    span = vmax - vmin
    cy = cell if not one_d else 4 * cell
    left, top, bottom, right = 60, 30, 50, 20
    W = left + nx * cell + right
    H = top + ny * cy + bottom
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<text x="{left}" y="18" font-family="sans-serif" font-size="12">{_esc(title)}</text>',
        '<g id="cells" shape-rendering="crispEdges">',
    ]
    for i in range(nx):
        for j in range(ny):
            t = 0.0 if span == 0 else (v[i, j] - vmin) / span
            y = top + (ny - 1 - j) * cy
            parts.append(f'<rect x="{left + i * cell}" y="{y}" width="{cell}" height="{cy}" fill="{_ramp(t)}"/>')
    parts.append("</g>")
    base = top + ny * cy
    parts.append(f'<text x="{left + nx * cell / 2:g}" y="{base + 18}" font-family="sans-serif" font-size="12" '
                 f'text-anchor="middle">{_esc(labels[0])}</text>')
    if not one_d:
        parts.append(f'<text x="14" y="{top + ny * cy / 2:g}" font-family="sans-serif" font-size="12" '
                     f'text-anchor="middle" transform="rotate(-90 14 {top + ny * cy / 2:g})">{_esc(labels[1])}</text>')
    if axes is not None:
        (x0, x1) = axes[0]
        parts.append(f'<text x="{left}" y="{base + 12}" font-family="sans-serif" font-size="9">{x0:g}</text>')
        parts.append(f'<text x="{left + nx * cell}" y="{base + 12}" font-family="sans-serif" font-size="9" '
                     f'text-anchor="end">{x1:g}</text>')
        if not one_d:
            (y0, y1) = axes[1]
            parts.append(f'<text x="{left - 4}" y="{base}" font-family="sans-serif" font-size="9" '
                         f'text-anchor="end">{y0:g}</text>')
            parts.append(f'<text x="{left - 4}" y="{top + 9}" font-family="sans-serif" font-size="9" '
                         f'text-anchor="end">{y1:g}</text>')
    note = f"min = max = {vmin:.6g}" if span == 0 else f"min = {vmin:.6g}, max = {vmax:.6g}"
    parts.append(f'<text id="range" x="{left}" y="{H - 8}" font-family="sans-serif" font-size="11">{note}</text>')
    parts.append("</svg>")
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return out


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _grid_rows(grid: GridHilbert, *cols) -> list:
    pts = grid.points
    flat = [np.asarray(c).reshape(-1) for c in cols]
    return [list(p) + [c[i] for c in flat] for i, p in enumerate(pts)]


def _axis_names(n: int, extended: bool) -> list:
    return (["t"] if extended else []) + [f"q{i + 1}" for i in range(n - (1 if extended else 0))]


# -- tasks -------------------------------------------------------------------------


def task_propagate(doc: dict, args) -> list:
    grid = build_grid(doc) if "grid" in doc else None
    system = _scenario_system(doc, grid)
    qstar = resolve_qstar(doc, system.dim)
    out = args.out
    extended = isinstance(system, ExtendedSystem)
    summary = {"task": "propagate", "backend": args.backend, "qstar": qstar, "system": system_name(system),
               "energy": 0.0 if extended else system.energy}
    if args.backend == "spectral":
        if grid is None:
            raise InputError("cli.run_scenario", "missing required key 'grid'")
        W = build_kernel(doc, system, grid)
        row = W.row(qstar)
        names = _axis_names(grid.ndim, extended)
        write_csv(os.path.join(out, "kernel.csv"), names + ["re", "im", "abs"],
                  _grid_rows(grid, row.real, row.imag, np.abs(row)))
        summary.update(nodes=grid.size, max_abs=float(np.max(np.abs(row))),
                       norm2=float(np.sum(np.abs(row) ** 2) * W.mu), measure=W.mu,
                       window={"kind": W.window.kind, "width": W.window.width})
        return _finish(out, "propagate", summary, ["kernel.csv"])
    if extended:
        raise UnsupportedFeatureError("cli.run_scenario", "the semiclassical backend works on the base system only")
    cfg = build_shooting(doc, args.seed)
    targets = doc.get("tasks", {}).get("propagate", {}).get("targets")
    if targets is None:
        if grid is None:
            raise InputError("cli.run_scenario", "semiclassical propagate needs tasks/propagate/targets or a grid")
        targets = grid.points
    rows = []
    for x in np.asarray(targets, dtype=float):
        if x.size != system.dim:
            raise InputError("cli.run_scenario", f"target {x.tolist()} has the wrong dimension")
        paths = find_extremals(system, qstar, x, cfg)
        amp = semiclassical_amplitude(paths, system.hbar) if paths else 0j
        rows.append(list(x) + [amp.real, amp.imag, abs(amp), len(paths)])
    write_csv(os.path.join(out, "kernel.csv"), _axis_names(system.dim, False) + ["re", "im", "abs", "paths"], rows)
    summary.update(nodes=len(rows), max_abs=max(r[-2] for r in rows), norm2=None, measure=None, window=None)
    return _finish(out, "propagate", summary, ["kernel.csv"])


def system_name(system) -> str:
    return f"extended({system.base.name})" if isinstance(system, ExtendedSystem) else system.name


def task_records(doc: dict, args) -> list:
    grid = build_grid(doc) if "grid" in doc else None
    system = _scenario_system(doc, grid)
    if isinstance(system, ExtendedSystem):
        raise UnsupportedFeatureError("cli.run_scenario", "records work on the base system only")
    qstar = resolve_qstar(doc, system.dim)
    t = _task(doc, "records")
    eps = _epsilon(doc)
    cfg = build_shooting(doc, args.seed)
    cg = records.build_coarse_graining(system, qstar, t["q"], eps, cfg)
    W = None
    if t.get("kernel"):
        if grid is None:
            raise InputError("cli.run_scenario", "tasks/records/kernel needs a grid")
        W = build_kernel(doc, system, grid)
    verdict = records.detect_record(cg, t["q_r"], W)
    tubes = [{"radius": tb.radius, "rho_min": tb.rho_min, "rho_max": tb.rho_max, "action": tb.seed.action,
              "traversal_time": tb.seed.traversal_time, "van_vleck": tb.seed.van_vleck} for tb in cg.tubes]
    summary = {"task": "records", "qstar": qstar, "q": t["q"], "epsilon": eps, "exhaustive": cg.exhaustive,
               "tubes": tubes, "verdict": verdict.to_json()}
    return _finish(args.out, "records", summary, [])


def task_conserve(doc: dict, args) -> list:
    grid = build_grid(doc)
    system = _scenario_system(doc, grid)
    t = _task(doc, "conserve")
    W = build_kernel(doc, system, grid)
    qstar = resolve_qstar(doc, system.dim) if "qstar" in doc else None
    if "region" in t:
        mask = grid.as_mask(t["region"])
    else:
        if isinstance(system, ExtendedSystem):
            raise InputError("cli.run_scenario", "extended grids need an explicit tasks/conserve/region")
        if qstar is None:
            raise InputError("cli.run_scenario", "missing required key 'qstar'")
        mask = records.record_region(system, qstar, t["q_r"], grid, _epsilon(doc), build_shooting(doc, args.seed))
    rep = records.conservation_check(W, t["q_r"], mask, grid, qstar)
    summary = {"task": "conserve", "q_r": t["q_r"], "region_nodes": int(np.count_nonzero(mask))}
    summary.update(rep.to_json())
    return _finish(args.out, "conserve", summary, [])


def task_mott(doc: dict, args) -> list:
    block = dict(doc.get("mott", {}))
    quad = block.pop("quadrature_points", mott.DEFAULT_QUADRATURE)
    n = block.pop("n", None)
    n_prime = block.pop("n_prime", 2)
    bends = block.pop("bends", None)
    model = mott.MottModel.default(**{k: (tuple(v) if k == "radii" else v) for k, v in block.items()
                                      if k not in ("bend",)})
    n = model.rings if n is None else n
    if n < 2:
        raise InputError("cli.run_scenario", "mott/n must be at least 2")
    bend = float(block.get("bend", 4 * model.sigma_theta))
    ratio = mott.collinearity_ratio(model, n, bend, quad)
    cond = mott.mott_conditional(model, n, min(n_prime, n), 0.0, quad)
    bends = bends if bends is not None else list(np.linspace(0.0, 8 * model.sigma_theta, 17))
    sweep = mott.bend_sweep(model, n, bends, quad)
    write_csv(os.path.join(args.out, "bend_sweep.csv"), ["bend", "probability"], sweep)
    summary = {"task": "mott", "model": {"rings": model.rings, "radii": list(model.radii),
                                         "sigma_theta": model.sigma_theta, "k": model.k},
               "n": n, "n_prime": cond.n_prime, "bend": bend, "collinearity_ratio": ratio, "P_n": cond.P_n,
               "P_n_prime": cond.P_n_prime, "P_conditional": cond.P_conditional,
               "conditional_residual": 0.0 if cond.n == cond.n_prime else cond.residual}
    return _finish(args.out, "mott", summary, ["bend_sweep.csv"])


def _generator(name: str, t: dict) -> instantlaws.GeneratorFunctional:
    if any(ch in name for ch in "+-*/^()") or name.startswith(("q", "p")) and name[1:].isdigit():
        npart = t.get("n_particles", 1)
        dim = t.get("dim", npart * t.get("space_dim", 1))
        return instantlaws.from_expression(name, dim)
    return instantlaws.catalog_functional(name, t.get("n_particles", 1), t.get("space_dim", 3))


def task_closure(doc: dict, args) -> list:
    t = _task(doc, "closure")
    gens = [_generator(g, t) for g in t["generators"]]
    rep = instantlaws.closure_check(gens, t.get("samples", 100), args.seed, t.get("tol", 1e-8))
    instant = []
    for g in gens:
        a = instantlaws.is_instant_law(g, 20, args.seed)
        b = instantlaws.is_split_law(g, 20, args.seed)
        instant.append({"name": g.name, "momentum_degree": g.momentum_degree, "instant_law": a.instant_law,
                        "evidence": a.evidence, "split_law": b.instant_law, "split_evidence": b.evidence})
    summary = {"task": "closure", "generators": [g.name for g in gens], "report": rep.to_json(), "instant": instant}
    return _finish(args.out, "closure", summary, [])


def task_heatmap(doc: dict, args) -> list:
    grid = build_grid(doc)
    system = _scenario_system(doc, grid)
    qstar = resolve_qstar(doc, system.dim)
    quantity = doc.get("tasks", {}).get("heatmap", {}).get("quantity", "density")
    if grid.ndim > 2:
        raise UnsupportedFeatureError("cli.emit_heatmap", f"heatmaps need 1D or 2D data, got {grid.ndim}D")
    W = build_kernel(doc, system, grid)
    row = W.row(qstar)
    vals = born_bayes.born_density(W, qstar).values if quantity == "density" else np.abs(row)
    names = _axis_names(grid.ndim, isinstance(system, ExtendedSystem))
    write_csv(os.path.join(args.out, f"heatmap_{quantity}.csv"), names + [quantity], _grid_rows(grid, vals))
    extents = [(float(grid.axis_nodes(a)[0]), float(grid.axis_nodes(a)[-1])) for a in range(grid.ndim)]
    title = "|W(q*, q)|^2" if quantity == "density" else "|W(q*, q)|"
    emit_heatmap(vals, os.path.join(args.out, "heatmap.svg"), extents, title, tuple(names) + ("",))
    summary = {"task": "heatmap", "quantity": quantity, "min": float(vals.min()), "max": float(vals.max()),
               "shape": list(grid.shape)}
    return _finish(args.out, "heatmap", summary, [f"heatmap_{quantity}.csv", "heatmap.svg"])


def task_bayes(docs: list, obs: dict, args) -> list:
    theories, kernels = [], []
    grid = None
    for d in docs:
        if "theory" not in d:
            raise InputError("cli.run_scenario", "missing required key 'theory' in a theory scenario")
        g = build_grid(d)
        if grid is not None and g != grid:
            raise InputError("cli.run_scenario", "all theory scenarios must share one grid")
        grid = g
        system = _scenario_system(d, g)
        if isinstance(system, ExtendedSystem):
            raise UnsupportedFeatureError("cli.run_scenario", "Bayesian comparison works on base systems only")
        theories.append(born_bayes.TheoryModel(d["theory"]["id"], system, d["theory"]["prior"]))
        kernels.append(build_kernel(d, system, g))
    if len({t.id for t in theories}) != len(theories):
        raise InputError("cli.run_scenario", "theory ids must be distinct")
    cfg = build_shooting(docs[0], args.seed)
    eps = float(obs.get("epsilon", 0.1))
    chain = obs["chain"]
    qstar = obs["qstar"]
    if len(chain) == 2:
        L = [born_bayes.likelihood(t, chain[1], chain[0], grid, qstar, eps, cfg, W) for t, W in zip(theories, kernels)]
        post = born_bayes.posterior(theories, L)
        comp = None
    else:
        c = born_bayes.sequential_vs_joint(theories, chain, grid, qstar, eps, cfg, kernels)
        L = [float(np.prod(row)) for row in c.likelihoods]
        post = c.joint
        comp = {"step_likelihoods": c.likelihoods, "sequential": c.sequential, "joint": c.joint,
                "max_difference": c.max_difference, "factorization_residuals": c.factorization_residuals}
    rows = [{"theory_id": t.id, "prior": t.prior, "likelihood": l, "posterior": p}
            for t, l, p in zip(theories, L, post)]
    return _finish(args.out, "bayes", {"task": "bayes", "theories": rows, "chain": comp}, [])


def _finish(out: str, task: str, summary: dict, files: list) -> list:
    clean = _clean(summary)
    _validate(clean, OUTPUT_SCHEMAS[task], f"{task} output")
    write_json(os.path.join(out, f"{task}.json"), clean)
    return files + [f"{task}.json"]


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="timeless", description="Timeless transition amplitudes on desk-scale systems.")
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--scenario", action="append", required=True,
                    help="scenario JSON (repeat once per theory for bayes)")
    ap.add_argument("--observations", help="observation chain JSON (bayes only)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--backend", choices=("spectral", "semiclassical"), default="spectral")
    return ap


def run_scenario(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.task == "bayes":
            if len(args.scenario) < 2 or not args.observations:
                raise InputError("cli.run_scenario", "bayes needs two or more --scenario files and --observations")
            docs = [load_json(p, SCENARIO_SCHEMA) for p in args.scenario]
            obs = load_json(args.observations, OBSERVATIONS_SCHEMA)
            files = task_bayes(docs, obs, args)
        else:
            if len(args.scenario) != 1:
                raise InputError("cli.run_scenario", f"{args.task} takes exactly one --scenario")
            doc = load_json(args.scenario[0], SCENARIO_SCHEMA)
            files = _DISPATCH[args.task](doc, args)
    except TimelessError as e:
        print(f"error: {e}", file=_sys.stderr)
        return e.exit_code
    except (ValueError, TypeError, KeyError, IndexError, OverflowError, ZeroDivisionError,
            np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"error: cli.run_scenario: {type(e).__name__}: {e}", file=_sys.stderr)
        return 2
    for f in files:
        print(os.path.join(args.out, f))
    return 0


_DISPATCH = {
    "propagate": task_propagate,
    "records": task_records,
    "mott": task_mott,
    "closure": task_closure,
    "conserve": task_conserve,
    "heatmap": task_heatmap,
}


def main() -> None:
    raise SystemExit(run_scenario())


if __name__ == "__main__":
    main()
