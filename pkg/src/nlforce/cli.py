"""Batch front end: TOML scenarios in; field arrays, force records,
diagnostics and sweep tables out.

Exit status is 0 when every requested check passes, 1 when a check fails,
2 on an invalid scenario, 3 when the solver does not converge and 4 for an
inadmissible law/charge combination.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .closedform import force_1d, large_charge_force, radial_field, two_body_force_conformal
from .diagnostics import (FAIL, INAPPLICABLE, PASS, Check, DiagnosticsReport, conformal_virial, decay_exponent,
                          outward_gradient_check, scalar_virial_identity, sign_check, virial_scalar,
                          virial_vector_U)
from .forces import dalembert_check, fitted_box, force_surface, force_volume
from .grid import Grid
from .media import InadmissibleError, MediumLaw, builtin_law, nu_inverse
from .solver import (BoundaryCondition, ConvergenceError, FieldSolution, RadialPotential, energy, solve_grid,
                     solve_radial)
from .sources import (Box, ChargeConfiguration, ConfigError, DensityField, DirichletBody, MediumInclusion,
                      NeumannBody, PointCharge, RadialProfile, Sphere, SphereBody, read_density_file,
                      write_array_file)

EXIT_OK, EXIT_CHECKS, EXIT_INVALID, EXIT_NOCONV, EXIT_INADMISSIBLE = 0, 1, 2, 3, 4
CHECK_NAMES = ("residual", "energy", "scalar-virial", "virial", "conformal-virial", "vector-virial", "decay",
               "dalembert", "outward-gradient")
_MISSING = object()


# -- scenario parsing ------------------------------------------------------------------


def _get(table: dict, key: str, path: str, kind=None, default=_MISSING):
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    if key not in table:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}" if path else key, "required field missing")
        return default
    v = table[key]
    where = f"{path}.{key}" if path else key
    if kind == "num":
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(where, f"expected a finite number, got {v!r}")
        return float(v)
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(where, f"expected an integer, got {v!r}")
        return int(v)
    if kind == "str":
        if not isinstance(v, str):
            raise ConfigError(where, f"expected a string, got {v!r}")
        return v
    if kind == "vec":
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(where, f"expected a list of numbers, got {v!r}")
        return tuple(float(x) for x in v)
    if kind == "table":
        if not isinstance(v, dict):
            raise ConfigError(where, "expected a table")
        return v
    return v


def _vec(table, key, path, D, default=_MISSING):
    v = _get(table, key, path, "vec", default)
    if v is default and default is not _MISSING:
        return v
    if len(v) != D:
        raise ConfigError(f"{path}.{key}", f"expected {D} components, got {len(v)}")
    return v


def _law(table: dict, path: str, D: int, a0=None, G=None) -> MediumLaw:
    kind = _get(table, "kind", path, "str")
    params = _get(table, "params", path, "table", {})
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.params.{k}", "law parameters must be numbers")
    a0 = _get(table, "a0", path, "num", 1.0) if a0 is None else a0
    G = _get(table, "G", path, "num", None) if G is None else G
    try:
        return builtin_law(kind, params, a0=a0, G=G, D=D)
    except InadmissibleError:
        raise
    except ValueError as exc:
        field = f"{path}.kind" if "unknown" in str(exc) else path
        raise ConfigError(field, str(exc)) from None


def _region(table, path, D):
    shape = _get(table, "shape", path, "str")
    if shape == "sphere":
        r = _get(table, "radius", path, "num")
        if not r > 0:
            raise ConfigError(f"{path}.radius", "must be positive")
        return Sphere(_vec(table, "center", path, D), r)
    if shape == "box":
        lo, hi = _vec(table, "lo", path, D), _vec(table, "hi", path, D)
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigError(path, "box needs lo < hi on every axis")
        return Box(lo, hi)
    raise ConfigError(f"{path}.shape", f"unknown region shape {shape!r} (sphere, box)")


def _body(table, path, D, ambient: MediumLaw, base_dir: Path):
    kind = _get(table, "type", path, "str")
    bid = _get(table, "id", path, "str")
    if kind == "point":
        width = _get(table, "width", path, "num")
        if not width > 0:
            raise ConfigError(f"{path}.width", "regularisation width must be positive")
        return PointCharge(bid, _get(table, "q", path, "num"), _vec(table, "position", path, D), width)
    if kind == "sphere":
        R = _get(table, "radius", path, "num")
        prof = _get(table, "profile", path, "str", "uniform")
        try:
            if "q" in table:
                p = RadialProfile.with_charge(prof, _get(table, "q", path, "num"), R, D)
            else:
                p = RadialProfile(prof, _get(table, "rho0", path, "num"), R)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        return SphereBody(bid, _vec(table, "position", path, D), p)
    if kind == "density":
        fname = _get(table, "file", path, "str")
        try:
            values = read_density_file(base_dir / fname)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}.file", str(exc)) from None
        if values.ndim != D:
            raise ConfigError(f"{path}.file", f"array has {values.ndim} dimensions, expected {D}")
        return DensityField(bid, values, _vec(table, "origin", path, D), _vec(table, "spacing", path, D))
    if kind == "dirichlet":
        return DirichletBody(bid, _region(_get(table, "region", path, "table"), f"{path}.region", D),
                             _get(table, "value", path, "num", 0.0))
    if kind == "neumann":
        return NeumannBody(bid, _region(_get(table, "region", path, "table"), f"{path}.region", D))
    if kind == "inclusion":
        law = _law(_get(table, "law", path, "table"), f"{path}.law", D, a0=ambient.a0, G=ambient.G)
        return MediumInclusion(bid, _region(_get(table, "region", path, "table"), f"{path}.region", D), law)
    raise ConfigError(f"{path}.type", f"unknown body type {kind!r} (point, sphere, density, dirichlet, "
                                      "neumann, inclusion)")


def _grid(table, D) -> Grid:
    lo, hi = _vec(table, "lo", "grid", D), _vec(table, "hi", "grid", D)
    if any(b <= a for a, b in zip(lo, hi)):
        raise ConfigError("grid", "needs lo < hi on every axis")
    if "cells" in table:
        cells = _get(table, "cells", "grid")
        if isinstance(cells, int) and not isinstance(cells, bool):
            cells = [cells] * D
        if (not isinstance(cells, list) or len(cells) != D
                or not all(isinstance(c, int) and not isinstance(c, bool) and c >= 2 for c in cells)):
            raise ConfigError("grid.cells", f"expected {D} integers >= 2")
    elif "h" in table:
        h = _get(table, "h", "grid", "num")
        if not h > 0:
            raise ConfigError("grid.h", "must be positive")
        cells = [int(round((b - a) / h)) for a, b in zip(lo, hi)]
        if any(c < 2 for c in cells):
            raise ConfigError("grid.h", "spacing leaves fewer than 2 cells on an axis")
        hi = tuple(a + c * h for a, c in zip(lo, cells))
    else:
        raise ConfigError("grid", "give either cells or h")
    return Grid.from_box(lo, hi, cells)


def _boundary(table, D) -> BoundaryCondition:
    kind = _get(table, "kind", "boundary", "str", "decay")
    g0 = _vec(table, "g0", "boundary", D, None)
    values = _get(table, "values", "boundary", "num", None)
    mirrors = _get(table, "mirrors", "boundary", None, None)
    if mirrors is not None:
        if not isinstance(mirrors, list) or len(mirrors) != D:
            raise ConfigError("boundary.mirrors", f"expected {D} [low, high] pairs")
        out = []
        for k, pair in enumerate(mirrors):
            if not isinstance(pair, list) or len(pair) != 2 or any(s not in ("none", "even", "odd") for s in pair):
                raise ConfigError(f"boundary.mirrors[{k}]", 'expected a pair of "none", "even" or "odd"')
            out.append(tuple(None if s == "none" else s for s in pair))
        mirrors = tuple(out)
    try:
        return BoundaryCondition(kind, g0, values, mirrors)
    except ValueError as exc:
        raise ConfigError("boundary", str(exc)) from None


@dataclass
class Scenario:
    """A validated scenario: everything needed to solve and report."""

    law: MediumLaw
    config: ChargeConfiguration
    bc: BoundaryCondition
    grid: Grid
    tol: float = 1e-8
    max_iter: int = 60
    initial: object = None
    force_bodies: list = field(default_factory=list)
    force_method: str = "surface"
    margin_cells: int = 3
    expect: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    sweep: Optional[dict] = None
    raw: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def parse_scenario(raw: dict, base_dir: Path = Path(".")) -> Scenario:
    """Validate a scenario table.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field.
    """
    law_t = _get(raw, "law", "", "table")
    D = _get(law_t, "D", "law", "int", 3)
    if D < 1:
        raise ConfigError("law.D", "dimension must be >= 1")
    law = _law(law_t, "law", D)
    bodies_raw = _get(raw, "bodies", "", None, [])
    if not isinstance(bodies_raw, list):
        raise ConfigError("bodies", "expected an array of tables")
    bodies = [_body(b, f"bodies[{i}]", D, law, base_dir) for i, b in enumerate(bodies_raw)]
    config = ChargeConfiguration(D, bodies)
    grid = _grid(_get(raw, "grid", "", "table"), D)
    bc = _boundary(_get(raw, "boundary", "", "table", {}), D)
    sol_t = _get(raw, "solver", "", "table", {})
    tol = _get(sol_t, "tol", "solver", "num", 1e-8)
    if not 0 < tol < 1:
        raise ConfigError("solver.tol", "must lie in (0, 1)")
    max_iter = _get(sol_t, "max_iter", "solver", "int", 60)
    if max_iter < 1:
        raise ConfigError("solver.max_iter", "must be >= 1")
    init = _get(sol_t, "initial", "solver", "str", "linear")
    seed = _get(sol_t, "seed", "solver", "int", 0)
    initial = {"linear": None, "zero": "zero", "random": ("random", seed)}.get(init, _MISSING)
    if initial is _MISSING:
        raise ConfigError("solver.initial", f"unknown initial field {init!r} (linear, zero, random)")

    f_t = _get(raw, "forces", "", "table", {})
    ids = [b.id for b in bodies]
    default_ids = [b.id for b in bodies if b.kind in ("point", "sphere", "density-field")]
    force_bodies = _get(f_t, "bodies", "forces", None, default_ids)
    for i, bid in enumerate(force_bodies):
        if bid not in ids:
            raise ConfigError(f"forces.bodies[{i}]", f"no body with id {bid!r}")
    method = _get(f_t, "method", "forces", "str", "surface")
    if method not in ("surface", "volume", "both"):
        raise ConfigError("forces.method", "expected surface, volume or both")
    margin = _get(f_t, "margin_cells", "forces", "int", 3)
    expect = []
    for i, e in enumerate(_get(f_t, "expect", "forces", None, [])):
        p = f"forces.expect[{i}]"
        bid = _get(e, "body", p, "str")
        if bid not in ids:
            raise ConfigError(f"{p}.body", f"no body with id {bid!r}")
        d = _vec(e, "direction", p, D)
        if not any(d):
            raise ConfigError(f"{p}.direction", "must be nonzero")
        sgn = _get(e, "sign", p, "num")
        if sgn not in (1.0, -1.0):
            raise ConfigError(f"{p}.sign", "expected +1 or -1")
        expect.append({"body": bid, "direction": d, "sign": sgn})

    c_t = _get(raw, "checks", "", "table", {})
    default_checks = ["residual", "energy"] + (["dalembert"] if bc.kind == "uniform-gradient" else [])
    checks = _get(c_t, "run", "checks", None, default_checks)
    for i, c in enumerate(checks):
        if c not in CHECK_NAMES:
            raise ConfigError(f"checks.run[{i}]", f"unknown check {c!r}; known: {', '.join(CHECK_NAMES)}")
    tolerances = _get(c_t, "tolerances", "checks", "table", {})
    for k, v in tolerances.items():
        if k not in CHECK_NAMES or isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"checks.tolerances.{k}", "expected a known check name with a positive number")

    sweep = None
    if "sweep" in raw:
        s_t = _get(raw, "sweep", "", "table")
        axis = _get(s_t, "axis", "sweep", "str")
        values = _get(s_t, "values", "sweep", "vec")
        if not values:
            raise ConfigError("sweep.values", "needs at least one value")
        _axis_target(raw, axis)
        sweep = {"axis": axis, "values": list(values)}
    return Scenario(law, config, bc, grid, tol, max_iter, initial, list(force_bodies), method, margin, expect,
                    list(checks), dict(tolerances), sweep, raw)


def load_scenario(path: Path, tol: Optional[float] = None, max_iter: Optional[int] = None) -> Scenario:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), str(exc)) from None
    _apply_overrides(raw, tol, max_iter)
    return parse_scenario(raw, Path(path).parent)


def _apply_overrides(raw, tol, max_iter):
    if tol is not None or max_iter is not None:
        s = raw.setdefault("solver", {})
        if tol is not None:
            s["tol"] = float(tol)
        if max_iter is not None:
            s["max_iter"] = int(max_iter)


def _split_axis(axis: str) -> list:
    out = []
    for part in axis.split("."):
        out.append(int(part) if part.isdigit() else part)
    return out


def _axis_target(raw: dict, axis: str):
    """Container and key addressed by a dotted sweep axis (``bodies.1.position.0``)."""
    keys = _split_axis(axis)
    node = raw
    for k in keys[:-1]:
        try:
            node = node[k]
        except (KeyError, IndexError, TypeError):
            raise ConfigError("sweep.axis", f"{axis!r} does not name a scenario field") from None
    last = keys[-1]
    try:
        cur = node[last]
    except (KeyError, IndexError, TypeError):
        raise ConfigError("sweep.axis", f"{axis!r} does not name a scenario field") from None
    numeric = (isinstance(cur, (int, float)) and not isinstance(cur, bool)) or (
        isinstance(cur, list) and cur and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in cur))
    if not numeric:
        raise ConfigError("sweep.axis", f"{axis!r} is not numeric")
    return node, last, cur


def _set_axis(raw: dict, axis: str, value: float) -> dict:
    out = copy.deepcopy(raw)
    node, last, cur = _axis_target(out, axis)
    if isinstance(cur, list):
        node[last] = [type(x)(value) if isinstance(x, int) else float(value) for x in cur]
    elif isinstance(cur, int):
        if float(value) != int(value):
            raise ConfigError("sweep.values", f"{axis!r} takes integers, got {value}")
        node[last] = int(value)
    else:
        node[last] = float(value)
    out.pop("sweep", None)
    return out


# -- running -----------------------------------------------------------------------------


def run_solve(sc: Scenario) -> FieldSolution:
    return solve_grid(sc.law, sc.config, sc.bc, sc.grid, tol=sc.tol, max_iter=sc.max_iter, initial=sc.initial)


def run_forces(sc: Scenario, sol: FieldSolution) -> list:
    reports = []
    for bid in sc.force_bodies:
        body = sc.config.body(bid)
        if sc.force_method in ("surface", "both"):
            reports.append(force_surface(sol, fitted_box(sol, body, sc.margin_cells), bid))
        if sc.force_method in ("volume", "both"):
            reports.append(force_volume(sol, body, sc.law))
    return reports


def _tol(sc: Scenario, name: str, default: float) -> float:
    return float(sc.tolerances.get(name, default))


def _inner_box(sol: FieldSolution, cells: int = 2):
    g = sol.grid
    lo = [g.lo[k] + (0 if sol.sides[k][0] != "data" else cells * g.h[k]) for k in range(g.D)]
    hi = [g.hi[k] - (0 if sol.sides[k][1] != "data" else cells * g.h[k]) for k in range(g.D)]
    return lo, hi


def run_checks(sc: Scenario, sol: FieldSolution, forces: list) -> DiagnosticsReport:
    rep = DiagnosticsReport()
    law = sol.law
    for name in sc.checks:
        if name == "residual":
            t = _tol(sc, name, sc.tol)
            rep.add(Check("residual", sol.residual, 0.0, t, PASS if sol.residual <= t else FAIL,
                          basis="field equation"))
        elif name == "energy":
            e = energy(sol)
            t = _tol(sc, name, 5 * sc.tol)
            rep.add(Check("energy", e.discrepancy, 0.0, t, PASS if e.discrepancy <= t else FAIL,
                          basis="on-shell energy", detail=asdict(e)))
        elif name == "scalar-virial":
            v = scalar_virial_identity(sol)
            t = _tol(sc, name, 5 * sc.tol)
            st = INAPPLICABLE if not v.applicable else (PASS if v.residual <= t else FAIL)
            rep.add(Check("scalar-virial", v.residual, 0.0, t, st, basis="scalar virial identity",
                          detail=asdict(v)))
        elif name in ("virial", "conformal-virial"):
            if sol.bc.kind != "decay" or sol.D < 2:
                rep.add(Check(name, math.nan, None, 0.0, INAPPLICABLE, basis="virial",
                              detail={"reason": "needs the decay boundary condition in D >= 2"}))
                continue
            v = virial_scalar(sol)
            if name == "virial":
                t = _tol(sc, name, 5 * sc.tol)
                rep.add(Check("virial", v.residual, 0.0, t, PASS if v.residual <= t else FAIL,
                              basis="virial stress form", detail=asdict(v)))
            else:
                t = _tol(sc, name, 0.02)
                if v.conformal_limit is None:
                    rep.add(Check(name, v.lhs, None, t, INAPPLICABLE, basis="conformal virial",
                                  detail={"reason": "law is not conformal"}))
                else:
                    rel = abs(v.lhs - v.conformal_limit) / abs(v.conformal_limit)
                    rep.add(Check(name, v.lhs, v.conformal_limit, t, PASS if rel <= t else FAIL,
                                  error_bar=rel, basis="conformal virial"))
        elif name == "vector-virial":
            if sol.bc.kind != "decay" or sol.D < 2:
                rep.add(Check(name, math.nan, None, 0.0, INAPPLICABLE, basis="vector virial",
                              detail={"reason": "needs the decay boundary condition in D >= 2"}))
                continue
            u = virial_vector_U(sol)
            t = _tol(sc, name, 5 * sc.tol)
            rep.add(Check(name, u.residual, 0.0, t, PASS if u.residual <= t else FAIL, basis="vector virial",
                          detail={"lhs": u.lhs.tolist(), "rhs": u.rhs.tolist(), "V": u.V}))
        elif name == "decay":
            try:
                fit = decay_exponent(sol)
            except ValueError as exc:
                rep.add(Check(name, math.nan, None, 0.0, INAPPLICABLE, basis="decay rate",
                              detail={"reason": str(exc)}))
                continue
            t = _tol(sc, name, 0.1)
            if fit.reference is None:
                rep.add(Check(name, fit.slope, None, t, INAPPLICABLE, fit.stderr, "decay rate",
                              {"reason": "no reference exponent for this law and charge"}))
            else:
                ok = abs(fit.slope - fit.reference) <= t + 3 * fit.stderr
                rep.add(Check(name, fit.slope, fit.reference, t, PASS if ok else FAIL, fit.stderr, "decay rate",
                              {"quantity": fit.quantity, "r_range": list(fit.r_range)}))
        elif name == "dalembert":
            if sol.bc.kind != "uniform-gradient":
                rep.add(Check(name, math.nan, None, 0.0, INAPPLICABLE, basis="whole-system force",
                              detail={"reason": "needs the uniform-gradient boundary condition"}))
                continue
            d = dalembert_check(sol, sc.config)
            t = _tol(sc, name, 0.02)
            rep.add(Check(name, d.relative, 0.0, t, PASS if d.relative <= t else FAIL, basis="whole-system force",
                          detail=asdict(d)))
        elif name == "outward-gradient":
            lo, hi = _inner_box(sol)
            rep.add(outward_gradient_check(sol, lo, hi))
    for i, e in enumerate(sc.expect):
        fr = next((r for r in forces if r.body_id == e["body"] and r.method.startswith("surface")), None)
        if fr is None:
            body = sc.config.body(e["body"])
            fr = force_surface(sol, fitted_box(sol, body, sc.margin_cells), e["body"])
        rep.add(sign_check(f"force-sign[{i}]:{e['body']}", fr, e["direction"], e["sign"]))
    return rep


# -- outputs -----------------------------------------------------------------------------


def _stamp(sc: Scenario) -> dict:
    return {"tool": "nlforce", "version": __version__, "scenario_hash": sc.digest}


def _finite(obj):
    """Replace non-finite floats by ``None`` so that outputs stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _dumps(obj, **kw) -> str:
    return json.dumps(_finite(obj), sort_keys=True, allow_nan=False, default=_json_default, **kw)


def _dump(obj) -> str:
    return _dumps(obj, indent=2) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def _saturation_note(law: MediumLaw, Q: float) -> Optional[str]:
    if Q == 0 or law.D < 2:
        return None
    if law.w_max is not None and math.isfinite(law.w_max):
        r = (abs(law.G * Q) / law.a0) ** (1.0 / (law.D - 1))
        return f"saturation radius {r:.6g} (field strength within a factor of order one of its ceiling inside)"
    sup = law.nu_sup()
    if math.isfinite(sup):
        r = (abs(law.G * Q) / (law.a0 * sup)) ** (1.0 / (law.D - 1))
        return f"nu saturates inside radius {r:.6g}: point charges are inadmissible"
    return None


def write_solution(out: Path, sc: Scenario, sol: FieldSolution) -> None:
    stamp = f"nlforce {__version__} scenario {sc.digest}"
    write_array_file(out / "phi.txt", sol.phi, stamp)
    write_array_file(out / "rho.txt", sol.rho, stamp)
    e = energy(sol)
    meta = dict(_stamp(sc), solution=sol.metadata(), energy=asdict(e),
                energy_history=[float(v) for v in sol.energy_history])
    (out / "solution.json").write_text(_dump(meta))


def write_forces(out: Path, sc: Scenario, reports: list) -> None:
    with open(out / "forces.jsonl", "w") as fh:
        for r in reports:
            fh.write(_dumps(dict(_stamp(sc), **asdict(r))) + "\n")


def write_diagnostics(out: Path, sc: Scenario, rep: DiagnosticsReport) -> None:
    body = {"passed": rep.passed, "checks": [asdict(c) for c in rep.checks]}
    (out / "diagnostics.json").write_text(_dump(dict(_stamp(sc), **body)))
    (out / "diagnostics.csv").write_text(f"# nlforce {__version__} scenario {sc.digest}\n" + rep.to_csv())


def summary_text(sc: Scenario, sol: FieldSolution, forces: list, rep: Optional[DiagnosticsReport]) -> str:
    lines = [f"nlforce {__version__}  scenario {sc.digest}",
             f"law {sol.law.name} {dict(sol.law.params)}  a0={sol.law.a0:g} G={sol.law.G:g} D={sol.D}",
             f"grid {'x'.join(str(n) for n in sol.grid.n)}  h={max(sol.grid.h):.4g}  boundary {sol.bc.kind}",
             f"converged in {sol.iterations} Newton steps, relative residual {sol.residual:.3e}",
             f"total charge {sol.total_charge:.6g}"]
    note = _saturation_note(sol.law, sol.total_charge)
    if note:
        lines.append(note)
    e = energy(sol)
    lines.append(f"energy {e.direct:.10g} (on-shell form {e.on_shell + e.boundary_term:.10g})")
    for r in forces:
        f = ", ".join(f"{v:.6g}" for v in r.force)
        lines.append(f"force on {r.body_id} [{r.method}]: ({f})  deviation {r.deviation:.3g}")
    if rep is not None:
        for c in rep.checks:
            ref = "" if c.reference is None else f" ref {c.reference:.6g}"
            lines.append(f"check {c.name}: {c.status}  measured {c.measured:.6g}{ref} tol {c.tolerance:.3g}")
    return "\n".join(lines) + "\n"


# -- subcommands ------------------------------------------------------------------------


def _prepare(args) -> Scenario:
    if not args.scenario:
        raise ConfigError("--scenario", "a scenario file is required")
    return load_scenario(Path(args.scenario), args.tol, args.max_iter)


def _outdir(args) -> Path:
    out = Path(args.out or "nlforce-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    sc = _prepare(args)
    sol = run_solve(sc)
    out = _outdir(args)
    write_solution(out, sc, sol)
    text = summary_text(sc, sol, [], None)
    (out / "summary.txt").write_text(text)
    _emit(args, text)
    return EXIT_OK


def cmd_force(args) -> int:
    sc = _prepare(args)
    sol = run_solve(sc)
    forces = run_forces(sc, sol)
    rep = DiagnosticsReport()
    if sc.expect:
        sc_e = copy.copy(sc)
        sc_e.checks = []
        rep = run_checks(sc_e, sol, forces)
    out = _outdir(args)
    write_solution(out, sc, sol)
    write_forces(out, sc, forces)
    if rep.checks:
        write_diagnostics(out, sc, rep)
    text = summary_text(sc, sol, forces, rep if rep.checks else None)
    (out / "summary.txt").write_text(text)
    _emit(args, text)
    return EXIT_OK if rep.passed else EXIT_CHECKS


def cmd_check(args) -> int:
    sc = _prepare(args)
    sol = run_solve(sc)
    forces = run_forces(sc, sol) if sc.expect else []
    rep = run_checks(sc, sol, forces)
    out = _outdir(args)
    write_solution(out, sc, sol)
    if forces:
        write_forces(out, sc, forces)
    write_diagnostics(out, sc, rep)
    text = summary_text(sc, sol, forces, rep)
    (out / "summary.txt").write_text(text)
    _emit(args, text)
    return EXIT_OK if rep.passed else EXIT_CHECKS


def sweep_rows(sc: Scenario, axis: str, values) -> tuple:
    """Solve, force and check every sweep point; rows ordered by parameter value."""
    rows, worst = [], EXIT_OK
    for v in sorted(float(x) for x in values):
        row = {"axis": axis, "value": v}
        try:
            pt = parse_scenario(_set_axis(sc.raw, axis, v))
            sol = run_solve(pt)
            row.update(status="ok", residual=sol.residual, iterations=sol.iterations)
            forces = run_forces(pt, sol)
            for r in forces:
                for k, f in enumerate(r.force):
                    row[f"F_{r.body_id}_{r.method}_{k}"] = f
                row[f"dev_{r.body_id}_{r.method}"] = r.deviation
            rep = run_checks(pt, sol, forces)
            for c in rep.checks:
                row[f"{c.name}_measured"] = c.measured
                row[f"{c.name}_status"] = c.status
            if not rep.passed:
                worst = max(worst, EXIT_CHECKS)
        except ConvergenceError as exc:
            row.update(status="no-convergence", error=str(exc))
            worst = max(worst, EXIT_NOCONV)
        except InadmissibleError as exc:
            row.update(status="inadmissible", error=str(exc))
            worst = max(worst, EXIT_INADMISSIBLE)
        except ValueError as exc:
            # e.g. bodies that overlap at this value
            row.update(status="invalid", error=str(exc))
            worst = max(worst, EXIT_INVALID)
        rows.append(row)
    return rows, worst


def sweep_csv(sc: Scenario, rows: list) -> str:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    buf.write(f"# nlforce {__version__} scenario {sc.digest}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for r in rows:
        wr.writerow([_cell(r.get(c, "")) for c in cols])
    return buf.getvalue()


def _cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def cmd_sweep(args) -> int:
    sc = _prepare(args)
    axis = args.axis or (sc.sweep or {}).get("axis")
    values = args.values or (sc.sweep or {}).get("values")
    if not axis or not values:
        raise ConfigError("sweep", "give an axis and values (scenario [sweep] table or --axis/--values)")
    _axis_target(sc.raw, axis)
    rows, worst = sweep_rows(sc, axis, values)
    out = _outdir(args)
    text = sweep_csv(sc, rows)
    (out / "sweep.csv").write_text(text)
    _emit(args, text)
    return worst


def _cli_law(args) -> MediumLaw:
    params = {}
    for item in args.param or []:
        k, _, v = item.partition("=")
        try:
            params[k] = float(v)
        except ValueError:
            raise ConfigError(f"--param {item}", "expected name=number") from None
    try:
        return builtin_law(args.law, params, a0=args.a0, G=args.G, D=args.D)
    except InadmissibleError:
        raise
    except ValueError as exc:
        raise ConfigError("--law", str(exc)) from None


def _floats(text: str, name: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}") from None


def cmd_calc(args) -> int:
    if args.what == "twobody":
        f = two_body_force_conformal(args.D, args.q1, args.q2, args.ell, args.G if args.G is not None else 1.0,
                                     args.a0)
        result = {"calc": "twobody", "D": args.D, "q1": args.q1, "q2": args.q2, "ell": args.ell,
                  "force": f, "attractive": f > 0}
    else:
        law = _cli_law(args)
        if args.what == "radial":
            r = np.asarray(_floats(args.r, "--r"))
            if r.size == 0 or np.any(r <= 0):
                raise ConfigError("--r", "radii must be positive")
            if args.R > 0:
                prof = RadialProfile.with_charge(args.profile, args.q, args.R, law.D)
                rs = solve_radial(law, prof, np.unique(r))
                g = np.interp(r, rs.r, rs.g)
            else:
                g = np.atleast_1d(radial_field(law, lambda x: np.full_like(x, args.q), r))
            result = {"calc": "radial", "law": law.name, "q": args.q, "R": args.R, "r": r.tolist(),
                      "g": [float(v) for v in g]}
            if args.R == 0 and law.D >= 2:
                pot = RadialPotential(law, args.q, float(r.min()) * 0.5, float(r.max()) * 2)
                result["phi"] = [float(v) for v in pot(r)]
            note = _saturation_note(law, args.q)
            if note:
                result["note"] = note
        elif args.what == "force1d":
            if law.D != 1:
                raise ConfigError("--D", "force1d needs D = 1")
            result = dict(calc="force1d", law=law.name, **force_1d(law, args.q, args.Q).as_dict())
        else:
            pos = np.asarray(_floats(args.position, "--position"))
            cen = np.asarray(_floats(args.test_center, "--test-center"))
            if pos.size != law.D or cen.size != law.D:
                raise ConfigError("--position", f"expected {law.D} components")
            prof = RadialProfile.with_charge("bump", args.test_q, args.test_radius, law.D)
            res = large_charge_force(law, args.q, pos, lambda p: prof(np.linalg.norm(p - cen, axis=1)),
                                     cen - args.test_radius, cen + args.test_radius)
            result = dict(calc="largecharge", law=law.name, q=args.q, **asdict(res))
    text = _dumps(result) + "\n"
    if args.out:
        out = _outdir(args)
        (out / f"calc-{args.what}.json").write_text(
            _dump(dict(result, tool="nlforce", version=__version__)))
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario TOML file")
    common.add_argument("--out", help="output directory (default nlforce-out)")
    common.add_argument("--tol", type=float, help="override solver.tol")
    common.add_argument("--max-iter", type=int, help="override solver.max_iter")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")

    p = argparse.ArgumentParser(prog="nlforce", description="Nonlinear-medium field solver and force analysis.")
    p.add_argument("--version", action="version", version=f"nlforce {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve a scenario and write the field")
    sub.add_parser("force", parents=[common], help="solve and compute forces on bodies")
    sub.add_parser("check", parents=[common], help="solve and run diagnostics")
    sw = sub.add_parser("sweep", parents=[common], help="scan one numeric scenario field")
    sw.add_argument("--axis", help="dotted scenario path, e.g. bodies.1.position.0")
    sw.add_argument("--values", type=lambda s: _floats(s, "--values"), help="comma-separated values")

    calc = sub.add_parser("calc", help="closed-form calculators")
    csub = calc.add_subparsers(dest="what", required=True)

    def law_args(sp):
        sp.add_argument("--law", default="linear", help="builtin law kind")
        sp.add_argument("--param", action="append", help="law parameter name=value (repeatable)")
        sp.add_argument("--a0", type=float, default=1.0)
        sp.add_argument("--G", type=float, default=None)

    for name in ("radial", "force1d", "twobody", "largecharge"):
        sp = csub.add_parser(name, parents=[common])
        if name != "twobody":
            law_args(sp)
        if name == "radial":
            sp.add_argument("--D", type=int, default=3)
            sp.add_argument("--q", type=float, default=1.0)
            sp.add_argument("--R", type=float, default=0.0, help="source radius (0 for a point charge)")
            sp.add_argument("--profile", default="uniform")
            sp.add_argument("--r", default="1", help="comma-separated radii")
        elif name == "force1d":
            sp.add_argument("--D", type=int, default=1)
            sp.add_argument("--q", type=float, required=True)
            sp.add_argument("--Q", type=float, required=True)
        elif name == "twobody":
            sp.add_argument("--D", type=int, default=3)
            sp.add_argument("--q1", type=float, required=True)
            sp.add_argument("--q2", type=float, required=True)
            sp.add_argument("--ell", type=float, required=True)
            sp.add_argument("--G", type=float, default=1.0)
            sp.add_argument("--a0", type=float, default=1.0)
        else:
            sp.add_argument("--D", type=int, default=3)
            sp.add_argument("--q", type=float, required=True)
            sp.add_argument("--position", required=True, help="comma-separated position of the large charge")
            sp.add_argument("--test-q", type=float, default=1.0)
            sp.add_argument("--test-radius", type=float, default=0.5, help="radius of the smooth test bump")
            sp.add_argument("--test-center", required=True)
    return p


COMMANDS = {"solve": cmd_solve, "force": cmd_force, "check": cmd_check, "sweep": cmd_sweep, "calc": cmd_calc}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except InadmissibleError as exc:
        sys.stderr.write(f"nlforce: inadmissible: {exc}\n")
        return EXIT_INADMISSIBLE
    except ConvergenceError as exc:
        sys.stderr.write(f"nlforce: {exc}\n")
        return EXIT_NOCONV
    except ValueError as exc:
        sys.stderr.write(f"nlforce: invalid scenario: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
