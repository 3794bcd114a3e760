"""Forces on bodies from the field stress tensor.

The stress tensor is ``P = -(a0^2 / 2 alpha G) F I + (1 / alpha G) mu grad(phi) grad(phi)``
and the force on a body is ``-∮ P . ds`` over any closed surface enclosing it
and no other body.  Box surfaces are aligned with grid faces and use the
solver's own face gradients, which keeps surface independence tight.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .grid import EVEN, ODD, cell_gradient_padded, interpolate_cells, plane_face_gradients, unfold_cells
from .media import MediumLaw
from .solver import FieldSolution


@dataclass
class StressSample:
    position: Optional[tuple]
    P: np.ndarray
    e: np.ndarray
    eig_along: float
    eig_transverse: float

    @property
    def trace(self) -> float:
        return float(np.trace(self.P))


def stress_tensor(gradphi, law: MediumLaw, position=None) -> StressSample:
    """Stress tensor at one point; zero at vanishing field."""
    g = np.asarray(gradphi, float)
    D = law.D
    if g.shape != (D,):
        raise ValueError(f"gradient must have {D} components")
    gn = float(np.linalg.norm(g))
    w = gn / law.a0
    law.check_admissible(w)
    c = law.a0 ** 2 / (2 * law.alphaD * law.G)
    if gn == 0:
        e = np.zeros(D)
        e[0] = 1.0
        return StressSample(position, np.zeros((D, D)), e, 0.0, 0.0)
    e = g / gn
    Fv = float(law.F(np.array(w * w)))
    mu = float(law.mu(np.array(w)))
    P = -c * Fv * np.eye(D) + mu * np.outer(g, g) / (law.alphaD * law.G)
    along = -c * Fv + mu * gn * gn / (law.alphaD * law.G)
    return StressSample(position, P, e, float(along), float(-c * Fv))


def stress_vectors(g: np.ndarray, normal: np.ndarray, mu: np.ndarray, Fv: np.ndarray,
                   law: MediumLaw) -> np.ndarray:
    """``P . n`` for arrays of gradients ``g`` (..., D) with unit normals (..., D)."""
    c = law.a0 ** 2 / (2 * law.alphaD * law.G)
    gn = np.sum(g * normal, axis=-1)
    return -c * Fv[..., None] * normal + (mu * gn)[..., None] * g / (law.alphaD * law.G)


# -- surfaces ---------------------------------------------------------------------


@dataclass(frozen=True)
class BoxSurface:
    lo: tuple
    hi: tuple
    kind: str = field(default="box", init=False)

    def grown(self, d: float) -> "BoxSurface":
        return BoxSurface(tuple(v - d for v in self.lo), tuple(v + d for v in self.hi))

    def describe(self) -> dict:
        return {"kind": "box", "lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}


@dataclass(frozen=True)
class SphereSurface:
    center: tuple
    radius: float
    resolution: int = 48
    kind: str = field(default="sphere", init=False)

    def grown(self, d: float) -> "SphereSurface":
        return SphereSurface(self.center, self.radius + d, self.resolution)

    def describe(self) -> dict:
        return {"kind": "sphere", "center": [float(v) for v in self.center], "radius": float(self.radius)}


Surface = Union[BoxSurface, SphereSurface]


@dataclass
class ForceReport:
    body_id: str
    force: list
    method: str
    surfaces: list = field(default_factory=list)
    deviation: float = 0.0
    quadrature_error: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.force, float)

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.force))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class SurfaceError(ValueError):
    pass


def full_solution(solution: FieldSolution) -> FieldSolution:
    if any(s in (EVEN, ODD) for pair in solution.sides for s in pair):
        return solution.unfold()
    return solution


def _snap_box(sol: FieldSolution, box: BoxSurface):
    g = sol.grid
    ilo, ihi = [], []
    for k in range(g.D):
        a = int(round((box.lo[k] - g.lo[k]) / g.h[k]))
        b = int(round((box.hi[k] - g.lo[k]) / g.h[k]))
        if a < 0 or b > g.n[k] or b <= a:
            raise SurfaceError(f"surface exits grid along axis {k}")
        ilo.append(a)
        ihi.append(b)
    return ilo, ihi


def _box_plane_data(sol: FieldSolution, ilo, ihi, pad: np.ndarray):
    """Yield ``(g, normal, points, dA)`` for each of the 2D box faces."""
    g = sol.grid
    D = g.D
    for k in range(D):
        others = [j for j in range(D) if j != k]
        dA = float(np.prod([g.h[j] for j in others])) if others else 1.0
        for side, i in ((-1.0, ilo[k]), (1.0, ihi[k])):
            grads = plane_face_gradients(pad, g.h, k, i)
            sl = tuple(slice(ilo[j], ihi[j]) for j in others)
            grads = grads[sl] if others else grads
            grads = grads.reshape(-1, D)
            axes = [g.axis_centers(j)[ilo[j]:ihi[j]] for j in others]
            if others:
                mesh = np.meshgrid(*axes, indexing="ij")
                cols = {j: m.ravel() for j, m in zip(others, mesh)}
            else:
                cols = {}
            npts = len(grads)
            pts = np.empty((npts, D))
            for j in range(D):
                pts[:, j] = g.lo[k] + i * g.h[k] if j == k else cols[j]
            normal = np.zeros((npts, D))
            normal[:, k] = side
            yield grads, normal, pts, dA


def _box_cell_plane(sol: FieldSolution, ilo, ihi, cellgrad: np.ndarray):
    """Same face set as ``_box_plane_data`` but with cell-centred gradients averaged."""
    g = sol.grid
    D = g.D
    for k in range(D):
        others = [j for j in range(D) if j != k]
        for i in (ilo[k], ihi[k]):
            a = np.take(cellgrad, max(i - 1, 0), axis=k)
            b = np.take(cellgrad, min(i, g.n[k] - 1), axis=k)
            avg = 0.5 * (a + b)
            sl = tuple(slice(ilo[j], ihi[j]) for j in others)
            yield (avg[sl] if others else avg).reshape(-1, D)


def _box_force(sol: FieldSolution, box: BoxSurface, pad=None, with_error: bool = False):
    law = sol.law
    ilo, ihi = _snap_box(sol, box)
    pad = sol.padded() if pad is None else pad
    total = np.zeros(sol.D)
    alt = np.zeros(sol.D)
    cellgrad = cell_gradient_padded(pad, sol.grid.h) if with_error else None
    alt_iter = _box_cell_plane(sol, ilo, ihi, cellgrad) if with_error else None
    for grads, normal, pts, dA in _box_plane_data(sol, ilo, ihi, pad):
        w = np.linalg.norm(grads, axis=1) / law.a0
        mu = sol.mu_at(pts, w)
        Fv = sol.F_at(pts, w)
        total -= stress_vectors(grads, normal, mu, Fv, law).sum(0) * dA
        if with_error:
            ga = next(alt_iter)
            wa = np.linalg.norm(ga, axis=1) / law.a0
            alt -= stress_vectors(ga, normal, sol.mu_at(pts, wa), sol.F_at(pts, wa), law).sum(0) * dA
    err = float(np.linalg.norm(total - alt)) if with_error else 0.0
    return total, err


def _sphere_points(surface: SphereSurface, D: int):
    c = np.asarray(surface.center, float)
    R = surface.radius
    n = surface.resolution
    if D == 2:
        t = (np.arange(2 * n) + 0.5) * np.pi / n
        nrm = np.stack([np.cos(t), np.sin(t)], axis=1)
        wts = np.full(len(t), R * np.pi / n)
    elif D == 3:
        x, wx = np.polynomial.legendre.leggauss(n)
        ph = (np.arange(2 * n) + 0.5) * np.pi / n
        X, P = np.meshgrid(x, ph, indexing="ij")
        s = np.sqrt(1 - X ** 2)
        nrm = np.stack([s * np.cos(P), s * np.sin(P), X], axis=-1).reshape(-1, 3)
        wts = (wx[:, None] * np.full(2 * n, np.pi / n)[None, :]).ravel() * R * R
    else:
        raise SurfaceError("sphere surfaces need D = 2 or 3")
    return c + R * nrm, nrm, wts


def _sphere_force(sol: FieldSolution, surface: SphereSurface, cellgrad=None, with_error: bool = False):
    law = sol.law
    g = sol.grid
    pts, nrm, wts = _sphere_points(surface, g.D)
    lo, hi = np.asarray(g.lo), np.asarray(g.hi)
    if np.any(pts < lo + 0.5 * np.asarray(g.h)) or np.any(pts > hi - 0.5 * np.asarray(g.h)):
        raise SurfaceError("surface exits grid")
    if cellgrad is None:
        cellgrad = cell_gradient_padded(sol.padded(), g.h)
    grads = np.stack([interpolate_cells(cellgrad[..., a], g, pts) for a in range(g.D)], axis=1)
    w = np.linalg.norm(grads, axis=1) / law.a0
    F = -(stress_vectors(grads, nrm, sol.mu_at(pts, w), sol.F_at(pts, w), law) * wts[:, None]).sum(0)
    err = 0.0
    if with_error:
        coarse = SphereSurface(surface.center, surface.radius, max(surface.resolution // 2, 4))
        err = float(np.linalg.norm(F - _sphere_force(sol, coarse, cellgrad)[0]))
    return F, err


def surface_force(solution: FieldSolution, surface: Surface, with_error: bool = False):
    sol = full_solution(solution)
    if surface.kind == "box":
        return _box_force(sol, surface, with_error=with_error)
    return _sphere_force(sol, surface, with_error=with_error)


def _surface_bounds(surface: Surface):
    if surface.kind == "box":
        return np.asarray(surface.lo, float), np.asarray(surface.hi, float)
    c = np.asarray(surface.center, float)
    return c - surface.radius, c + surface.radius


def _encloses(surface: Surface, body) -> bool:
    lo, hi = body.bounds()
    if surface.kind == "box":
        return bool(np.all(lo > np.asarray(surface.lo)) and np.all(hi < np.asarray(surface.hi)))
    c = np.asarray(surface.center, float)
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(len(lo), -1).T
    return bool(np.all(np.linalg.norm(corners - c, axis=1) < surface.radius))


def _disjoint(surface: Surface, body) -> bool:
    lo, hi = body.bounds()
    slo, shi = _surface_bounds(surface)
    if surface.kind == "sphere":
        c = np.asarray(surface.center, float)
        nearest = np.clip(c, lo, hi)
        far = np.where(np.abs(lo - c) > np.abs(hi - c), lo, hi)
        return bool(np.linalg.norm(nearest - c) > surface.radius or np.linalg.norm(far - c) < surface.radius)
    inside = np.all(lo > slo) and np.all(hi < shi)
    outside = np.any(hi < slo) or np.any(lo > shi)
    return bool(inside or outside)


def _check_surface(solution: FieldSolution, surface: Surface, body_id: Optional[str]):
    cfg = solution.config
    if cfg is None:
        return
    enclosed = []
    for b in cfg.bodies:
        if not _disjoint(surface, b):
            raise SurfaceError(f"surface intersects body {b.id!r}")
        if _encloses(surface, b):
            enclosed.append(b.id)
    if body_id is not None and enclosed != [body_id]:
        raise SurfaceError(f"surface must enclose exactly body {body_id!r}, encloses {enclosed}")


def default_box(solution: FieldSolution, body, margin_cells: int = 3) -> BoxSurface:
    """Grid-aligned box around ``body`` with ``margin_cells`` of clearance."""
    sol = full_solution(solution)
    g = sol.grid
    lo, hi = body.bounds()
    blo, bhi = [], []
    for k in range(g.D):
        a = math.floor((lo[k] - g.lo[k]) / g.h[k]) - margin_cells
        b = math.ceil((hi[k] - g.lo[k]) / g.h[k]) + margin_cells
        blo.append(g.lo[k] + max(a, 0) * g.h[k])
        bhi.append(g.lo[k] + min(b, g.n[k]) * g.h[k])
    return BoxSurface(tuple(blo), tuple(bhi))


def fitted_box(solution: FieldSolution, body, margin_cells: int = 3) -> BoxSurface:
    """:func:`default_box` with the largest clearance up to ``margin_cells`` that
    encloses ``body`` alone.

    Raises
    ------
    SurfaceError
        If not even a one-cell clearance fits.
    """
    for m in range(margin_cells, 0, -1):
        box = default_box(solution, body, m)
        try:
            _check_surface(solution, box, body.id)
        except SurfaceError:
            continue
        return box
    raise SurfaceError(f"no grid-aligned box isolates body {body.id!r}; refine the grid")


def force_surface(solution: FieldSolution, surface: Surface, body_id: Optional[str] = None,
                  second: Optional[Surface] = None, grow_cells: int = 2) -> ForceReport:
    """Force ``-∮ P . ds`` on the region inside ``surface``.

    A second surface (``surface`` grown by ``grow_cells`` cells, or shrunk
    if growing would hit another body or the grid edge) gives the
    cross-surface deviation.
    """
    _check_surface(solution, surface, body_id)
    F1, qerr = surface_force(solution, surface, with_error=True)
    h = max(solution.grid.h)
    if second is None:
        second = None
        steps = [grow_cells, -grow_cells] + ([1, -1] if grow_cells > 1 else [])
        for d in steps:
            cand = surface.grown(d * h)
            try:
                _check_surface(solution, cand, body_id)
                surface_force(solution, cand)
            except SurfaceError:
                continue
            second = cand
            break
    surfaces = [surface.describe()]
    dev = math.nan
    if second is not None:
        _check_surface(solution, second, body_id)
        F2 = surface_force(solution, second)[0]
        dev = float(np.linalg.norm(F1 - F2))
        surfaces.append(second.describe())
    return ForceReport(body_id=body_id or "enclosed", force=[float(v) for v in F1], method="surface",
                       surfaces=surfaces, deviation=dev, quadrature_error=qerr)


def flux_through_box(solution: FieldSolution, lo, hi, linear: bool = False) -> float:
    """``∮ mu grad(phi) . ds`` over a grid-aligned box (``mu = 1`` if ``linear``)."""
    sol = full_solution(solution)
    box = BoxSurface(tuple(lo), tuple(hi))
    ilo, ihi = _snap_box(sol, box)
    total = 0.0
    for grads, normal, pts, dA in _box_plane_data(sol, ilo, ihi, sol.padded()):
        gn = np.sum(grads * normal, axis=1)
        if linear:
            total += float(gn.sum()) * dA
        else:
            w = np.linalg.norm(grads, axis=1) / sol.law.a0
            total += float(np.sum(sol.mu_at(pts, w) * gn)) * dA
    return total


def box_normal_gradients(solution: FieldSolution, lo, hi) -> np.ndarray:
    """Outward normal components of the face gradients on a grid-aligned box."""
    sol = full_solution(solution)
    ilo, ihi = _snap_box(sol, BoxSurface(tuple(lo), tuple(hi)))
    out = [np.sum(g * n, axis=1) for g, n, _, _ in _box_plane_data(sol, ilo, ihi, sol.padded())]
    return np.concatenate(out)


def force_volume(solution: FieldSolution, body, ambient: Optional[MediumLaw] = None,
                 margin_cells: int = 2) -> ForceReport:
    """Force ``-∫_v rho* grad(phi)`` with the effective charge density of the body."""
    from .sources import effective_charge_density

    if solution.disc is None:
        raise ValueError("force_volume needs a solution with its discretisation")
    rho_star = unfold_cells(effective_charge_density(solution, ambient), solution.sides)
    sol = full_solution(solution)
    g = sol.grid
    lo, hi = body.bounds()
    h = np.asarray(g.h)
    if np.any((hi - lo) < 2 * h) and body.kind != "point":
        raise ValueError(f"body {body.id!r} is unresolved by the grid")
    pts = g.points()
    m = np.all((pts > lo - margin_cells * h) & (pts < hi + margin_cells * h), axis=1)
    grad = cell_gradient_padded(sol.padded(), g.h).reshape(-1, g.D)
    F = -(rho_star.ravel()[m, None] * grad[m]).sum(0) * g.cell_volume
    # sensitivity to the region margin as the error estimate
    m2 = np.all((pts > lo - (margin_cells + 1) * h) & (pts < hi + (margin_cells + 1) * h), axis=1)
    F2 = -(rho_star.ravel()[m2, None] * grad[m2]).sum(0) * g.cell_volume
    return ForceReport(body_id=body.id, force=[float(v) for v in F], method="volume",
                       deviation=float(np.linalg.norm(F - F2)), quadrature_error=float(np.linalg.norm(F - F2)))


@dataclass
class DalembertReport:
    force: list
    expected: list
    deviation: float
    scale: float
    relative: float


def dalembert_check(solution: FieldSolution, config=None, g0: Optional[Sequence[float]] = None,
                    margin_cells: int = 3) -> DalembertReport:
    """Force on the whole system in a uniform external field against ``Q g0``.

    Zero-charge systems are measured against ``|g0| * sum |q|`` (or ``|g0|``
    times the body volume charge scale when no sources exist).
    """
    if solution.bc.kind != "uniform-gradient":
        raise ValueError("dalembert_check needs a uniform-gradient solution")
    config = config or solution.config
    g0 = np.asarray(solution.bc.g0 if g0 is None else g0, float)
    sol = full_solution(solution)
    g = sol.grid
    lo = [g.lo[k] + margin_cells * g.h[k] for k in range(g.D)]
    hi = [g.hi[k] - margin_cells * g.h[k] for k in range(g.D)]
    box = BoxSurface(tuple(lo), tuple(hi))
    F, _ = surface_force(sol, box)
    Q = config.total_charge() if config is not None else 0.0
    expected = Q * g0
    dev = float(np.linalg.norm(F - expected))
    scale = abs(Q) * float(np.linalg.norm(g0))
    if scale == 0 and config is not None:
        scale = config.abs_charge() * float(np.linalg.norm(g0))
    rel = dev / scale if scale > 0 else dev
    return DalembertReport(force=[float(v) for v in F], expected=[float(v) for v in expected],
                           deviation=dev, scale=scale, relative=rel)
