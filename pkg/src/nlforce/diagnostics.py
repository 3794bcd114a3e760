"""Theorem checks on solved fields: virial identities, decay rates, the
comparison principle and force-sign batteries.

Every check yields a :class:`Check` with measured value, reference,
tolerance and status (``pass``, ``fail`` or ``inapplicable``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forces import (BoxSurface, ForceReport, _box_plane_data, _snap_box, box_normal_gradients, fitted_box,
                     flux_through_box, force_surface, full_solution)
from .grid import cell_gradient_padded
from .media import MediumLaw, sample_w
from .solver import FieldSolution

PASS, FAIL, INAPPLICABLE = "pass", "fail", "inapplicable"


@dataclass
class Check:
    name: str
    measured: float
    reference: Optional[float]
    tolerance: float
    status: str
    error_bar: float = 0.0
    basis: str = ""
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS


@dataclass
class DiagnosticsReport:
    checks: list = field(default_factory=list)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def to_json(self) -> str:
        return json.dumps({"passed": self.passed, "checks": [asdict(c) for c in self.checks]},
                          sort_keys=True, indent=2, default=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["name", "measured", "reference", "tolerance", "status", "error_bar", "basis"])
        for c in self.checks:
            wr.writerow([c.name, repr(float(c.measured)), "" if c.reference is None else repr(float(c.reference)),
                         repr(float(c.tolerance)), c.status, repr(float(c.error_bar)), c.basis])
        return buf.getvalue()


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _full_fields(solution: FieldSolution):
    sol = full_solution(solution)
    grad = cell_gradient_padded(sol.padded(), sol.grid.h)
    return sol, grad


def _inner_box(sol: FieldSolution, margin_cells: int = 2) -> BoxSurface:
    g = sol.grid
    return BoxSurface(tuple(g.lo[k] + margin_cells * g.h[k] for k in range(g.D)),
                      tuple(g.hi[k] - margin_cells * g.h[k] for k in range(g.D)))


def _cells_in_box(sol: FieldSolution, box: BoxSurface) -> tuple:
    ilo, ihi = _snap_box(sol, box)
    return tuple(slice(a, b) for a, b in zip(ilo, ihi))


def _check_converged(solution: FieldSolution) -> None:
    if not solution.converged:
        raise ValueError("diagnostics need a converged solution")


# -- virial relations --------------------------------------------------------------


@dataclass
class VirialResult:
    lhs: float
    rhs: float
    volume_term: float
    surface_term: float
    conformal_limit: Optional[float]

    @property
    def residual(self) -> float:
        scale = max(abs(self.lhs), abs(self.volume_term), abs(self.surface_term), 1e-300)
        return abs(self.lhs - self.rhs) / scale


def conformal_virial(law: MediumLaw, Q: float) -> float:
    """Virial of a charge ``Q`` in the conformal medium: ``|G_hat Q|^d / (d G_hat)``."""
    D = law.D
    d = D / (D - 1.0)
    Gh = law.G_hat
    return abs(Gh * Q) ** d / (d * Gh)


def virial_scalar(solution: FieldSolution, surface: Optional[BoxSurface] = None,
                  origin: Optional[Sequence[float]] = None) -> VirialResult:
    """``V = int rho r . grad(phi)`` and its volume-plus-surface stress form."""
    _check_converged(solution)
    sol, grad = _full_fields(solution)
    law = sol.law
    D = sol.D
    box = surface or _inner_box(sol)
    x0 = np.zeros(D) if origin is None else np.asarray(origin, float)
    sl = _cells_in_box(sol, box)
    pts = sol.grid.points().reshape(sol.grid.shape + (D,))[sl] - x0
    g = grad[sl]
    rho = sol.rho[sl]
    dv = sol.grid.cell_volume
    lhs = float(np.sum(rho * np.sum(pts * g, axis=-1))) * dv
    w = np.linalg.norm(g, axis=-1) / law.a0
    flat_pts = pts.reshape(-1, D) + x0
    mu = sol.mu_at(flat_pts, w.ravel()).reshape(w.shape)
    Fv = sol.F_at(flat_pts, w.ravel()).reshape(w.shape)
    c = law.a0 ** 2 / (2 * law.alphaD * law.G)
    # F (D - 2 F_hat) = D F - 2 mu w^2
    vol = c * float(np.sum(D * Fv - 2 * mu * w * w)) * dv
    surf = 0.0
    ilo, ihi = _snap_box(sol, box)
    for gr, nrm, p, dA in _box_plane_data(sol, ilo, ihi, sol.padded()):
        ww = np.linalg.norm(gr, axis=1) / law.a0
        m = sol.mu_at(p, ww)
        Ff = sol.F_at(p, ww)
        r = p - x0
        Pn = -c * Ff[:, None] * nrm + (m * np.sum(gr * nrm, axis=1))[:, None] * gr / (law.alphaD * law.G)
        surf += float(np.sum(r * Pn)) * dA
    conf = None
    if D >= 2 and abs(law.beta0 - (D - 2)) < 1e-12 and law.name in ("power", "linear"):
        conf = conformal_virial(law, sol.total_charge)
    return VirialResult(lhs=lhs, rhs=vol + surf, volume_term=vol, surface_term=surf, conformal_limit=conf)


@dataclass
class VectorVirialResult:
    """``lhs`` and ``rhs`` of the vector identity; ``length`` is the rms radius
    of the charge about the origin, so ``|V| * length`` is the natural size of ``U``
    (``U`` itself vanishes for centred symmetric configurations)."""

    lhs: np.ndarray
    rhs: np.ndarray
    V: float
    length: float = 0.0

    @property
    def residual(self) -> float:
        scale = max(float(np.linalg.norm(self.lhs)), float(np.linalg.norm(self.rhs)),
                    abs(self.V) * self.length, 1e-300)
        return float(np.linalg.norm(self.lhs - self.rhs)) / scale


def virial_vector_U(solution: FieldSolution, surface: Optional[BoxSurface] = None,
                    origin: Optional[Sequence[float]] = None) -> VectorVirialResult:
    """``U = int rho [r (r . grad phi) - r^2 grad(phi) / 2]`` and its stress form.

    The stress form is ``∮ (r r - r^2 I / 2) . P . ds - int r tr(P)``.
    """
    _check_converged(solution)
    sol, grad = _full_fields(solution)
    law = sol.law
    D = sol.D
    box = surface or _inner_box(sol)
    x0 = np.zeros(D) if origin is None else np.asarray(origin, float)
    sl = _cells_in_box(sol, box)
    pts = sol.grid.points().reshape(sol.grid.shape + (D,))[sl] - x0
    g = grad[sl]
    rho = sol.rho[sl]
    dv = sol.grid.cell_volume
    rg = np.sum(pts * g, axis=-1)
    r2 = np.sum(pts * pts, axis=-1)
    integrand = pts * rg[..., None] - 0.5 * r2[..., None] * g
    lhs = (rho[..., None] * integrand).reshape(-1, D).sum(0) * dv
    V = float(np.sum(rho * rg)) * dv
    w = np.linalg.norm(g, axis=-1) / law.a0
    flat_pts = pts.reshape(-1, D) + x0
    mu = sol.mu_at(flat_pts, w.ravel()).reshape(w.shape)
    Fv = sol.F_at(flat_pts, w.ravel()).reshape(w.shape)
    c = law.a0 ** 2 / (2 * law.alphaD * law.G)
    trP = -c * (D * Fv - 2 * mu * w * w)
    vol = -(pts * trP[..., None]).reshape(-1, D).sum(0) * dv
    surf = np.zeros(D)
    ilo, ihi = _snap_box(sol, box)
    for gr, nrm, p, dA in _box_plane_data(sol, ilo, ihi, sol.padded()):
        ww = np.linalg.norm(gr, axis=1) / law.a0
        m = sol.mu_at(p, ww)
        Ff = sol.F_at(p, ww)
        r = p - x0
        Pn = -c * Ff[:, None] * nrm + (m * np.sum(gr * nrm, axis=1))[:, None] * gr / (law.alphaD * law.G)
        rr2 = np.sum(r * r, axis=1)
        surf += (r * np.sum(r * Pn, axis=1)[:, None] - 0.5 * rr2[:, None] * Pn).sum(0) * dA
    arho = np.abs(rho)
    length = math.sqrt(float(np.sum(arho * r2)) / float(np.sum(arho))) if arho.sum() > 0 else 0.0
    return VectorVirialResult(lhs=lhs, rhs=vol + surf, V=V, length=length)


@dataclass
class ScalarVirialResult:
    source_term: float
    field_term: float
    boundary_term: float
    residual: float
    applicable: bool
    reason: str = ""


def scalar_virial_identity(solution: FieldSolution, phi: Optional[np.ndarray] = None) -> ScalarVirialResult:
    """Relative residual of ``int rho phi + (alpha G)^-1 int mu |grad phi|^2 = 0``.

    On a finite box the boundary flux term ``(alpha G)^-1 ∮ mu phi grad(phi) . ds``
    is included in its discrete form.  ``phi`` overrides the solution's
    potential (for perturbation studies).
    """
    law = solution.law
    D = law.D
    disc = solution.disc
    if disc is None:
        raise ValueError("scalar_virial_identity needs the solution's discretisation")
    reason = ""
    if solution.bc.kind != "decay":
        reason = "needs the decay boundary condition"
    elif D >= 2 and law.beta0 > D - 2:
        reason = "beta0 > D - 2"
    elif D >= 2 and law.beta0 == D - 2 and solution.total_charge != 0:
        reason = "beta0 = D - 2 with nonzero total charge"
    elif disc.fixed.any() and D > 1:
        reason = "Dirichlet bodies present"
    p = solution.phi.ravel() if phi is None else np.asarray(phi, float).ravel()
    g = disc.face_gradients(p)
    mu = disc.mu_faces(g)
    aG = law.alphaD * law.G
    src = float(np.dot(solution.rho.ravel(), p)) * solution.grid.cell_volume
    fld = float(np.sum(disc.weights * mu * np.sum(g * g, axis=0))) / aG
    bnd = -float(np.sum(disc.weights * mu * np.sum(g * disc.b, axis=0))) / aG
    # 1D prescribed-slope ends contribute their linear work term
    bnd += law.sign_G * float(np.dot(disc.work, p))
    total = src + fld + bnd
    scale = max(abs(src), abs(fld), abs(bnd), 1e-300)
    res = abs(total) / scale if scale > 1e-300 else 0.0
    return ScalarVirialResult(src, fld, bnd, res, applicable=not reason, reason=reason)


# -- decay rates -------------------------------------------------------------------


@dataclass
class DecayFit:
    slope: float
    reference: Optional[float]
    quantity: str
    r_range: tuple
    n_points: int
    stderr: float


def decay_exponent(solution: FieldSolution, direction: Optional[Sequence[float]] = None,
                   shell: tuple = (0.5, 0.8), center: Optional[Sequence[float]] = None,
                   cone: float = 0.95) -> DecayFit:
    """Log-log slope of ``|grad phi|`` (or of ``|phi|`` for zero total charge).

    Fits cells in the shell ``shell * half-width`` around ``center``, within
    the cone ``cos(angle) > cone`` around ``direction`` when given.

    Raises
    ------
    ValueError
        If the shell holds too few points or spans too small a radius ratio.
    """
    sol, grad = _full_fields(solution)
    law = sol.law
    g = sol.grid
    D = g.D
    c = np.asarray(center if center is not None else
                   (sol.origin if sol.origin is not None else np.zeros(D)), float)
    half = 0.5 * min(g.hi[k] - g.lo[k] for k in range(D))
    pts = g.points() - c
    r = np.linalg.norm(pts, axis=1)
    m = (r >= shell[0] * half) & (r <= shell[1] * half)
    if direction is not None:
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        with np.errstate(invalid="ignore", divide="ignore"):
            m &= (pts @ d) / np.where(r > 0, r, 1.0) > cone
    Q = sol.total_charge
    if Q != 0:
        y = np.linalg.norm(grad.reshape(-1, D), axis=1)
        quantity = "|grad phi|"
        ref = -law.gamma0 * (D - 1) if D >= 2 and law.beta0 <= D - 2 else None
    else:
        y = np.abs(sol.phi.ravel())
        quantity = "|phi|"
        ref = -1.0 if D >= 2 and abs(law.beta0 - (D - 2)) < 1e-12 and law.name in ("power", "linear") else None
    m &= y > 0
    if m.sum() < 8:
        raise ValueError(f"decay shell too thin for a stable fit ({int(m.sum())} points)")
    lr, ly = np.log(r[m]), np.log(y[m])
    if lr.max() - lr.min() < 0.2:
        raise ValueError("decay shell spans too small a radius ratio")
    A = np.stack([lr, np.ones_like(lr)], axis=1)
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    var = float(resid @ resid) / max(len(ly) - 2, 1)
    se = math.sqrt(var / float(np.sum((lr - lr.mean()) ** 2)))
    return DecayFit(slope=float(coef[0]), reference=ref, quantity=quantity,
                    r_range=(float(r[m].min()), float(r[m].max())), n_points=int(m.sum()), stderr=se)


# -- comparison principle ---------------------------------------------------------------


@dataclass
class ComparisonVerdict:
    status: str
    max_violation: float
    worst_index: Optional[tuple]
    tolerance: float
    reason: str = ""


def _boundary_ghosts(sol: FieldSolution) -> np.ndarray:
    pad = sol.padded()
    mask = np.zeros(pad.shape, bool)
    for k in range(sol.D):
        for side in (0, 1):
            if sol.sides[k][side] == "data":
                idx = [slice(None)] * sol.D
                idx[k] = 0 if side == 0 else -1
                mask[tuple(idx)] = True
    return pad[mask]


def comparison_check(sol1: FieldSolution, sol2: FieldSolution, tol_factor: float = 10.0) -> ComparisonVerdict:
    """Ordered densities give ordered potentials.

    With ``G > 0``: ``rho1 >= rho2`` and ``phi1 <= phi2`` on the boundary
    imply ``phi1 <= phi2`` everywhere; signs of ``phi`` flip for ``G < 0``.
    Passes iff the worst violation is below ``tol_factor * tol`` times the
    potential scale.
    """
    if sol1.grid != sol2.grid or sol1.sides != sol2.sides:
        return ComparisonVerdict(INAPPLICABLE, math.nan, None, math.nan, "different grids")
    if sol1.law.name != sol2.law.name or sol1.law.G != sol2.law.G:
        return ComparisonVerdict(INAPPLICABLE, math.nan, None, math.nan, "different laws")
    s = sol1.law.sign_G
    scale = max(float(np.max(np.abs(sol1.phi))), float(np.max(np.abs(sol2.phi))), 1e-300)
    tol = tol_factor * max(sol1.tol, sol2.tol) * scale
    drho = sol1.rho - sol2.rho
    if np.min(drho) < -1e-12 * max(float(np.max(np.abs(sol1.rho))), 1e-300):
        return ComparisonVerdict(INAPPLICABLE, math.nan, None, tol, "density ordering fails")
    db = s * (_boundary_ghosts(sol1) - _boundary_ghosts(sol2))
    if db.size and np.max(db) > tol:
        return ComparisonVerdict(INAPPLICABLE, math.nan, None, tol, "boundary ordering fails")
    diff = s * (sol1.phi - sol2.phi)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    mv = float(diff[worst])
    return ComparisonVerdict(_status(mv <= tol), mv, tuple(int(i) for i in worst), tol)


def outward_gradient_check(solution: FieldSolution, lo, hi) -> Check:
    """For uniform-sign sources, ``s(G rho) grad(phi) . n > 0`` on an enclosing box."""
    rho = solution.rho
    if np.any(rho > 0) and np.any(rho < 0):
        return Check("outward-gradient", math.nan, 0.0, 0.0, INAPPLICABLE, basis="comparison corollary",
                     detail={"reason": "mixed-sign sources"})
    s = solution.law.sign_G * (1.0 if rho.sum() >= 0 else -1.0)
    gn = s * box_normal_gradients(solution, lo, hi)
    mn = float(gn.min())
    return Check("outward-gradient", mn, 0.0, 0.0, _status(mn > 0), basis="comparison corollary",
                 detail={"samples": int(gn.size)})


# -- force-sign batteries ------------------------------------------------------------


def sign_check(name: str, report: ForceReport, direction: Sequence[float], expected: float,
               factor: float = 3.0) -> Check:
    """Asserts ``sign(F . direction) == expected`` once ``|F . d|`` clears ``factor`` x deviation."""
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    comp = float(np.dot(report.vector, d))
    bar = float(report.deviation) if math.isfinite(report.deviation) else 0.0
    bar = max(bar, float(report.quadrature_error))
    if abs(comp) <= factor * bar:
        return Check(name, comp, expected, factor * bar, INAPPLICABLE, bar, "force sign",
                     {"reason": "force within numerical noise"})
    return Check(name, comp, expected, factor * bar, _status(np.sign(comp) == np.sign(expected)), bar, "force sign")


@dataclass
class PushPullScenario:
    """One solved layout and the separating-plane normals to test.

    ``toward`` lists unit vectors; the force on ``body_id`` must have a
    positive component along each (toward like-sign companions, away from
    opposite-sign ones).
    """

    name: str
    law: MediumLaw
    config: object
    bc: object
    grid: object
    body_id: str
    toward: list
    tol: float = 1e-8
    margin_cells: int = 3


def pushpull_battery(scenarios: Sequence[PushPullScenario], factor: float = 3.0) -> DiagnosticsReport:
    from .solver import solve_grid

    report = DiagnosticsReport()
    for sc in scenarios:
        sol = solve_grid(sc.law, sc.config, sc.bc, sc.grid, tol=sc.tol)
        body = sc.config.body(sc.body_id)
        fr = force_surface(sol, fitted_box(sol, body, sc.margin_cells), sc.body_id)
        for i, t in enumerate(sc.toward):
            report.add(sign_check(f"{sc.name}/plane{i}", fr, t, 1.0, factor))
    return report


# -- charge bound ------------------------------------------------------------------


@dataclass
class ChargeBound:
    Q: float
    Q_star: float
    status: str
    reason: str = ""


def charge_bound_check(solution: FieldSolution, lo, hi, rel_tol: float = 1e-3) -> ChargeBound:
    """Enclosed charge from the flux versus the linear-theory charge ``Q*``.

    For uniform-sign sources and ``mu <= 1``: ``|Q| <= |Q*|``.
    """
    rho = solution.rho
    if np.any(rho > 0) and np.any(rho < 0):
        raise ValueError("charge_bound_check needs uniform-sign sources")
    law = solution.law
    aG = law.alphaD * law.G
    Q = flux_through_box(solution, lo, hi) / aG
    Qs = flux_through_box(solution, lo, hi, linear=True) / aG
    w = sample_w(law, 200, 1e-4, 1e4)
    if np.any(law.mu(w) > 1 + 1e-12):
        return ChargeBound(Q, Qs, INAPPLICABLE, "law has mu > 1")
    ok = abs(Q) <= abs(Qs) * (1 + rel_tol) + 1e-300
    return ChargeBound(Q, Qs, _status(ok))
