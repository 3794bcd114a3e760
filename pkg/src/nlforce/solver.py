"""Field solvers: exact radial and 1D solutions, and a variational grid solver.

The grid solver minimises the discrete energy

    J(phi) = s(G) sum_i h^D rho_i phi_i
             + a0^2 / (2 alpha_D |G|) sum_f w_f F(|g_f|^2 / a0^2)

whose stationarity condition is the discrete field equation.  For G > 0 this
is the physical energy, for G < 0 its negative, so J is always convex and the
same damped Newton iteration serves both signs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy import integrate, interpolate
from scipy.sparse.linalg import LinearOperator, cg

from .grid import (DATA, EVEN, NEUMANN, ODD, FaceLayout, GhostMap, Grid, face_gradients_padded,
                   face_operator_padded, face_weights)
from .media import InadmissibleError, MediumLaw, alpha_D, nu_inverse
from .sources import ChargeConfiguration, RadialProfile

log = logging.getLogger(__name__)

MU_HAT_FLOOR = 1e-8      # w floor inside mu_hat
HESSIAN_W_FLOOR = 1e-3   # relative w floor for mu in the Newton matrix, mu(0)=0 laws
GAP_FRACTION = 0.1       # a Newton step keeps at least this share of each face's gap to w_max
OBSTACLE_EPS = 1e-6      # permeability ratio realising a rigid (zero-flux) obstacle


class ConvergenceError(RuntimeError):
    """Newton iteration failed; the last iterate is attached."""

    def __init__(self, message: str, solution: "FieldSolution"):
        super().__init__(message)
        self.solution = solution


# -- boundary conditions -----------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCondition:
    """Far-field condition on the outer box.

    ``kind`` is ``decay`` (field vanishes at infinity), ``uniform-gradient``
    (``phi -> -g0 . r``) or ``dirichlet-box`` (``values``: constant or a
    function of the points).  ``mirrors`` optionally replaces box sides by
    symmetry planes: one ``(low, high)`` pair per axis with entries ``None``,
    ``"even"`` or ``"odd"``.
    """

    kind: str = "decay"
    g0: Optional[tuple] = None
    values: Union[float, Callable, None] = None
    mirrors: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("decay", "uniform-gradient", "dirichlet-box"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "uniform-gradient" and self.g0 is None:
            raise ValueError("uniform-gradient boundary condition needs g0")

    def sides(self, D: int) -> tuple:
        out = []
        for k in range(D):
            pair = (None, None) if self.mirrors is None else self.mirrors[k]
            out.append(tuple(DATA if s is None else s for s in pair))
        return tuple(out)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.g0 is not None:
            d["g0"] = [float(v) for v in self.g0]
        if self.values is not None and not callable(self.values):
            d["values"] = float(self.values)
        if self.mirrors is not None:
            d["mirrors"] = [list(p) for p in self.mirrors]
        return d


class RadialPotential:
    """Potential of a total charge ``Q`` seen from far away (exact radial field).

    ``g(r) = s(GQ) a0 nu^-1(|GQ| / (a0 r^(D-1)))``; the potential is
    ``-int_r^inf g`` when that converges and ``int_1^r g`` otherwise.
    """

    def __init__(self, law: MediumLaw, Q: float, r_min: float, r_max: float, n: int = 4001):
        self.law = law
        self.Q = float(Q)
        D = law.D
        self.convergent = law.beta0 < D - 2 if D >= 2 else False
        r_min = max(float(r_min), 1e-12)
        r_max = max(float(r_max), 2 * r_min)
        if not self.convergent:
            r_min = min(r_min, 0.5)
            r_max = max(r_max, 2.0)
        self.r = np.geomspace(r_min, r_max, n)
        gr = self.g(self.r)
        # integrate in log r: d phi / d ln r = r g
        t = np.log(self.r)
        cum = integrate.cumulative_simpson(self.r * gr, x=t, initial=0.0)
        if self.convergent:
            tail, _ = integrate.quad(lambda rr: float(self.g(np.array([rr]))[0]), r_max, np.inf,
                                     epsrel=1e-12, limit=200)
            self.phi = cum - cum[-1] - tail
        else:
            self.phi = cum - np.interp(0.0, t, cum)
        self._t = t
        # Hermite interpolation with the exact slope d phi / d ln r = r g
        self._spline = interpolate.CubicHermiteSpline(t, self.phi, self.r * gr)

    def g(self, r):
        r = np.asarray(r, float)
        law = self.law
        if self.Q == 0:
            return np.zeros_like(r)
        z = abs(law.G * self.Q) / (law.a0 * r ** (law.D - 1))
        return np.sign(law.G * self.Q) * law.a0 * np.asarray(nu_inverse(law, z), float)

    def __call__(self, r):
        r = np.asarray(r, float)
        t = np.log(np.clip(r, self.r[0], self.r[-1]))
        return self._spline(t)


def uniform_gradient_perturbation(law: MediumLaw, g0: np.ndarray, Q: float, x: np.ndarray) -> np.ndarray:
    """Leading far-field correction of a charge ``Q`` in the uniform field ``g0``.

    Solves the linearised (anisotropic) equation about ``-g0 . r``.
    """
    D = law.D
    g0 = np.asarray(g0, float)
    if Q == 0:
        return np.zeros(len(x))
    w0 = float(np.linalg.norm(g0)) / law.a0
    law.check_admissible(w0)
    if w0 > 0:
        mu0 = float(law.mu(np.array(w0)))
        mh0 = float(law.mu_hat(np.array(max(w0, MU_HAT_FLOOR))))
        e0 = g0 / np.linalg.norm(g0)
    else:
        mu0 = float(law.mu(np.array(MU_HAT_FLOOR))) if law.beta0 > 0 else float(law.mu(np.array(0.0)))
        mh0 = 0.0
        e0 = np.zeros(D)
    K = mu0 * (np.eye(D) + mh0 * np.outer(e0, e0))
    Kinv = np.linalg.inv(K)
    sq = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", x, Kinv, x), 1e-300))
    det = math.sqrt(np.linalg.det(K))
    GQ = law.G * Q
    if D >= 3:
        return -GQ / ((D - 2) * det * sq ** (D - 2))
    if D == 2:
        return GQ / det * np.log(sq)
    raise ValueError("uniform-gradient boundary data needs D >= 2")


# -- discretisation --------------------------------------------------------------


def amg_preconditioner(A):
    """Smoothed-aggregation V-cycle, reproducible from run to run."""
    import pyamg

    # pyamg draws spectral-radius start vectors from the global RNG; pin it and restore the caller's state
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=400)
    finally:
        np.random.set_state(state)
    return ml.aspreconditioner(cycle="V")


def obstacle_law(law: MediumLaw, eps: float = OBSTACLE_EPS) -> MediumLaw:
    """Ambient law with permeability scaled by ``eps`` (rigid-obstacle limit)."""
    from dataclasses import replace

    mu, F = law.mu, law.F
    return replace(law, name=f"{law.name}-obstacle", mu=lambda w: eps * mu(w), F=lambda y: eps * F(y),
                   nu_inv_fn=None)


class Discretization:
    """Sparse discrete energy for one grid, law map and boundary data.

    Parameters
    ----------
    grid : Grid
    law : MediumLaw
        Ambient law (also supplies ``a0``, ``G``, ``D``).
    sides : per-axis ``(low, high)`` ghost kinds.
    data_fn, normal_fn : boundary data for ``data`` and ``neumann`` sides.
    face_laws : list of ``(MediumLaw, mask over faces)`` overriding the ambient law.
    fixed : boolean cell mask of cells held at ``fixed_values``.
    """

    def __init__(self, grid: Grid, law: MediumLaw, sides, data_fn=None, normal_fn=None,
                 face_laws: Sequence = (), fixed: Optional[np.ndarray] = None,
                 fixed_values: Optional[np.ndarray] = None):
        if law.D != grid.D:
            raise ValueError(f"law dimension {law.D} != grid dimension {grid.D}")
        self.grid = grid
        self.law = law
        self.sides = tuple(tuple(s) for s in sides)
        if grid.D > 1 and any(NEUMANN in s for s in self.sides):
            raise ValueError("prescribed-slope sides are only supported in one dimension")
        # the wide tangential stencil next to data sides needs a second ghost layer
        self.extended = grid.D > 1
        self.ghost = GhostMap(grid, self.sides, data_fn, normal_fn, layers=2 if self.extended else 1)
        Bp = face_operator_padded(grid, self.ghost.layers, self.extended)
        self.B = (Bp @ self.ghost.P).tocsr()
        self.Bt = self.B.T.tocsr()
        self.layout = FaceLayout(grid, self.extended)
        nf = self.layout.nf
        self.nf = nf
        self.b = (Bp @ self.ghost.c).reshape(grid.D, nf)
        self.weights = face_weights(grid, self.sides, self.extended)
        keep = self.weights > 0
        if not keep.all():
            # drop zero-weight faces so later sums see only live faces
            idx = np.flatnonzero(keep)
            rows = np.concatenate([a * nf + idx for a in range(grid.D)])
            self.B = self.B[rows].tocsr()
            self.Bt = self.B.T.tocsr()
            self.b = self.b[:, idx]
            self.weights = self.weights[idx]
            self.face_index = idx
        else:
            self.face_index = np.arange(nf)
        family = self.layout.family[self.face_index]
        nf = self.nf = len(self.face_index)
        self.group = np.zeros(nf, dtype=np.int32)
        self.laws = [law]
        for i, (flaw, mask) in enumerate(face_laws, start=1):
            self.group[np.asarray(mask, bool)[self.face_index]] = i
            self.laws.append(flaw)
        N = grid.N
        self.fixed = np.zeros(N, bool) if fixed is None else np.asarray(fixed, bool).ravel()
        self.fixed_values = np.zeros(N) if fixed_values is None else np.asarray(fixed_values, float).ravel()
        self.free = np.flatnonzero(~self.fixed)
        # 1D prescribed-slope sides: linear work term closing the variational problem
        self.work = np.zeros(N)
        for k in range(grid.D):
            for side in (0, 1):
                if self.sides[k][side] == NEUMANN:
                    pts = grid.axis_centers(k, ghost=True)[[0 if side == 0 else -1]][:, None]
                    s_out = float(normal_fn(pts, k, np.array([-1 if side == 0 else 1]))[0])
                    w_f = grid.cell_volume / grid.D
                    flux = law.a0 * float(law.nu(np.array(abs(s_out) / law.a0))) * np.sign(s_out)
                    cell = 0 if side == 0 else N - 1
                    self.work[cell] -= (w_f / grid.h[k]) * flux / (law.alphaD * abs(law.G))
        # normal-normal blocks for the preconditioner
        rows = np.concatenate([a * nf + np.flatnonzero(family == a) for a in range(grid.D)])
        self.Bn = self.B[rows][:, self.free].tocsr()
        self.BnT = self.Bn.T.tocsr()
        self.normal_axis = family.astype(int)
        self.c_scale = 1.0 / (law.alphaD * abs(law.G))

    # -- pointwise law evaluation ------------------------------------------------

    def _by_group(self, fn_name: str, arg: np.ndarray, law: Optional[MediumLaw] = None) -> np.ndarray:
        if law is not None:
            return getattr(law, fn_name)(arg)
        out = np.empty_like(arg)
        for i, lw in enumerate(self.laws):
            m = self.group == i
            if m.any():
                out[m] = getattr(lw, fn_name)(arg[m])
        return out

    def _safe_w(self, w: np.ndarray) -> np.ndarray:
        # mu diverges at w = 0 when beta0 < 0
        return np.maximum(w, 1e-300) if self.law.beta0 < 0 else w

    def full(self, x: np.ndarray) -> np.ndarray:
        phi = self.fixed_values.copy()
        phi[self.free] = x
        return phi

    def face_gradients(self, phi: np.ndarray) -> np.ndarray:
        """Face gradients, shape ``(D, nf)``."""
        return (self.B @ np.asarray(phi).ravel()).reshape(self.grid.D, self.nf) + self.b

    def face_w(self, g: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(g * g, axis=0)) / self.law.a0

    def mu_faces(self, g: np.ndarray, law: Optional[MediumLaw] = None) -> np.ndarray:
        return self._by_group("mu", self._safe_w(self.face_w(g)), law)

    def admissible(self, w: np.ndarray) -> bool:
        active = self.weights > 0
        for i, lw in enumerate(self.laws):
            if lw.w_max is not None:
                m = (self.group == i) & active
                if np.any(w[m] >= lw.w_max) or not np.all(np.isfinite(w[m])):
                    return False
        return True

    def keeps_gap(self, w_new: np.ndarray, w_old: np.ndarray, frac: float = GAP_FRACTION) -> bool:
        """True if no face closes more than ``1 - frac`` of its gap to ``w_max``."""
        active = self.weights > 0
        for i, lw in enumerate(self.laws):
            if lw.w_max is not None:
                m = (self.group == i) & active
                if np.any(lw.w_max - w_new[m] < frac * (lw.w_max - w_old[m])):
                    return False
        return True

    # -- energy, gradient, Hessian -------------------------------------------------------------

    def energy_terms(self, phi: np.ndarray, rho: np.ndarray):
        g = self.face_gradients(phi)
        w = self.face_w(g)
        if not self.admissible(w):
            return math.inf, math.inf
        a0 = self.law.a0
        Fv = self._by_group("F", w * w)
        field_e = 0.5 * a0 * a0 * self.c_scale * float(np.dot(self.weights, Fv))
        src = float(np.dot(rho.ravel(), phi.ravel())) * self.grid.cell_volume
        return src, field_e

    def J(self, phi: np.ndarray, rho: np.ndarray) -> float:
        src, fe = self.energy_terms(phi, rho)
        if not math.isfinite(fe):
            return math.inf
        return self.law.sign_G * src + fe + float(np.dot(self.work, phi.ravel()))

    def flux(self, g: np.ndarray) -> np.ndarray:
        return (self.weights * self.mu_faces(g)) * g

    def gradient(self, phi: np.ndarray, rho: np.ndarray) -> np.ndarray:
        g = self.face_gradients(phi)
        out = self.c_scale * (self.Bt @ self.flux(g).ravel())
        out += self.law.sign_G * self.grid.cell_volume * rho.ravel() + self.work
        return out

    def hessian_coefficients(self, g: np.ndarray):
        w = self.face_w(g)
        if self.law.beta0 > 0 and w.size:
            w_h = np.maximum(w, HESSIAN_W_FLOOR * max(float(w.max()), MU_HAT_FLOOR))
        else:
            w_h = self._safe_w(w)
        mu_h = self._by_group("mu", w_h)
        mh = self._by_group("mu_hat", np.maximum(w, MU_HAT_FLOOR))
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(w > 0, g / np.where(w > 0, w * self.law.a0, 1.0), 0.0)
        c = self.c_scale * self.weights * mu_h
        return c, mh, e

    def hessian_operator(self, g: np.ndarray) -> LinearOperator:
        c, mh, e = self.hessian_coefficients(g)
        D, nf = self.grid.D, self.nf
        free = self.free
        N = self.grid.N

        def mv(v):
            x = np.zeros(N)
            x[free] = np.ravel(v)
            u = (self.B @ x).reshape(D, nf)
            eu = np.sum(e * u, axis=0)
            fl = c * (u + mh * eu * e)
            return (self.Bt @ fl.ravel())[free]

        n = len(free)
        return LinearOperator((n, n), matvec=mv, dtype=float)

    def preconditioner(self, g: np.ndarray):
        c, mh, e = self.hessian_coefficients(g)
        en = e[self.normal_axis, np.arange(self.nf)]
        k = self.grid.D * c * (1.0 + mh * en * en)
        A = (self.BnT @ sp.diags(k) @ self.Bn).tocsr()
        A.eliminate_zeros()
        # cells decoupled from every face (isolated by fixed neighbours) keep an identity row
        diag = A.diagonal()
        iso = diag <= 0
        if iso.any():
            A = A + sp.diags(iso.astype(float))
        return amg_preconditioner(A)

    def residual_vector(self, phi: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """``div(mu grad phi) - alpha G rho`` per cell (zero on fixed cells)."""
        g = self.gradient(phi, rho)
        r = -(self.law.alphaD * abs(self.law.G) / self.grid.cell_volume) * g
        r[self.fixed] = 0.0
        return r

    def residual_scale(self, phi: np.ndarray, rho: np.ndarray) -> float:
        g = self.face_gradients(phi)
        fl = np.abs(self.flux(g)).ravel()
        div_abs = (abs(self.Bt) @ fl) / self.grid.cell_volume
        src = self.law.alphaD * abs(self.law.G) * np.abs(rho.ravel())
        m = ~self.fixed
        return float(np.linalg.norm(src[m]) + np.linalg.norm(div_abs[m]))

    def relative_residual(self, phi: np.ndarray, rho: np.ndarray) -> float:
        r = self.residual_vector(phi, rho)
        scale = self.residual_scale(phi, rho)
        nr = float(np.linalg.norm(r))
        if scale == 0:
            return nr
        return nr / scale


# -- solutions -------------------------------------------------------------------


@dataclass
class FieldSolution:
    """Converged (or last) grid potential with everything needed downstream."""

    grid: Grid
    phi: np.ndarray
    law: MediumLaw
    bc: BoundaryCondition
    sides: tuple
    rho: np.ndarray
    residual: float
    iterations: int
    converged: bool
    tol: float
    energy_history: list = field(default_factory=list)
    config: Optional[ChargeConfiguration] = field(default=None, repr=False)
    disc: Optional[Discretization] = field(default=None, repr=False)
    padded_phi: Optional[np.ndarray] = field(default=None, repr=False)
    face_law_fn: Optional[Callable] = field(default=None, repr=False)
    total_charge: float = 0.0
    origin: Optional[np.ndarray] = None

    @property
    def D(self) -> int:
        return self.grid.D

    @property
    def symmetry_factor(self) -> int:
        return 2 ** sum(s in (EVEN, ODD) for pair in self.sides for s in pair)

    def padded(self) -> np.ndarray:
        if self.padded_phi is not None:
            return self.padded_phi
        pad = self.disc.ghost.pad(self.phi)
        k = self.disc.ghost.layers - 1
        return pad[tuple(slice(k, s - k) for s in pad.shape)] if k else pad

    def face_gradients(self) -> list:
        """Per-family face gradients, each of shape ``family_shape + (D,)``."""
        return face_gradients_padded(self.padded(), self.grid.h)

    def law_at(self, pts: np.ndarray) -> list:
        """Per-point law assignment ``[(law, mask), ...]`` (ambient first)."""
        if self.face_law_fn is None:
            return [(self.law, np.ones(len(pts), bool))]
        return self.face_law_fn(pts)

    def mu_at(self, pts: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.empty_like(w)
        for lw, m in self.law_at(pts):
            if m.any():
                out[m] = lw.mu(w[m])
        return out

    def F_at(self, pts: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = np.empty_like(w)
        for lw, m in self.law_at(pts):
            if m.any():
                out[m] = lw.F(w[m] ** 2)
        return out

    def unfold(self) -> "FieldSolution":
        """Reflect a mirror-reduced solution onto the full box."""
        pad = self.padded()
        grid = self.grid
        lo, n = list(grid.lo), list(grid.n)
        sides = [list(p) for p in self.sides]
        rho = self.rho
        phi = self.phi
        for k in range(grid.D):
            for side in (0, 1):
                kind = sides[k][side]
                if kind not in (EVEN, ODD):
                    continue
                sgn = 1.0 if kind == EVEN else -1.0
                if side == 0:
                    refl = sgn * np.flip(np.take(pad, range(1, pad.shape[k]), axis=k), axis=k)
                    pad = np.concatenate([refl, np.take(pad, range(1, pad.shape[k]), axis=k)], axis=k)
                    phi = np.concatenate([sgn * np.flip(phi, axis=k), phi], axis=k)
                    rho = np.concatenate([sgn * np.flip(rho, axis=k), rho], axis=k)
                    lo[k] -= n[k] * grid.h[k]
                else:
                    body = np.take(pad, range(0, pad.shape[k] - 1), axis=k)
                    refl = sgn * np.flip(body, axis=k)
                    pad = np.concatenate([body, refl], axis=k)
                    phi = np.concatenate([phi, sgn * np.flip(phi, axis=k)], axis=k)
                    rho = np.concatenate([rho, sgn * np.flip(rho, axis=k)], axis=k)
                n[k] *= 2
                sides[k][side] = DATA
        # a reflected pad has the mirror-side ghost of the opposite end; rebuild both ends
        if tuple(n) == tuple(grid.n):
            return self
        new_grid = Grid(tuple(lo), tuple(n), grid.h)
        return FieldSolution(new_grid, phi, self.law, self.bc, tuple(tuple(p) for p in sides), rho,
                             self.residual, self.iterations, self.converged, self.tol,
                             list(self.energy_history), self.config, None, pad, self.face_law_fn,
                             self.total_charge, self.origin)

    def metadata(self) -> dict:
        return {
            "D": self.D,
            "lo": list(self.grid.lo),
            "hi": list(self.grid.hi),
            "cells": list(self.grid.n),
            "h": list(self.grid.h),
            "law": self.law.name,
            "law_params": dict(self.law.params),
            "a0": self.law.a0,
            "G": self.law.G,
            "boundary": self.bc.describe(),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "tol": self.tol,
            "total_charge": self.total_charge,
        }


def residual_norm(solution: FieldSolution) -> float:
    """Relative discrete L2 residual of the field equation on free cells."""
    disc = solution.disc
    if disc is None:
        raise ValueError("residual_norm needs the solution's discretisation (not an unfolded copy)")
    return disc.relative_residual(solution.phi.ravel(), solution.rho)


@dataclass
class EnergyReport:
    direct: float
    on_shell: float
    boundary_term: float
    discrepancy: float
    extremum: str
    divergent: bool


def energy(solution: FieldSolution) -> EnergyReport:
    """Direct energy and its on-shell form ``-(a0^2/2 alpha G) int chi``.

    ``boundary_term`` is the finite-box surface contribution
    ``(alpha G)^-1 sum mu g . b`` separating the two on a finite box;
    ``discrepancy`` compares ``direct`` with ``on_shell + boundary_term``.
    """
    disc = solution.disc
    law = solution.law
    phi = solution.phi.ravel()
    src, fe = disc.energy_terms(phi, solution.rho)
    direct_red = src + law.sign_G * fe
    g = disc.face_gradients(phi)
    w = disc.face_w(g)
    chi = disc._by_group("chi", w)
    on_shell_red = -0.5 * law.a0 ** 2 * float(np.dot(disc.weights, chi)) / (law.alphaD * law.G)
    mu = disc.mu_faces(g)
    bterm_red = float(np.sum(disc.weights * mu * np.sum(g * disc.b, axis=0))) / (law.alphaD * law.G)
    f = solution.symmetry_factor
    direct, on_shell, bterm = f * direct_red, f * on_shell_red, f * bterm_red
    scale = max(abs(direct), abs(on_shell), 1e-300)
    D = law.D
    divergent = bool(solution.total_charge != 0 and D >= 2 and law.beta0 >= D - 2
                     and solution.bc.kind == "decay")
    return EnergyReport(direct=direct, on_shell=on_shell, boundary_term=bterm,
                        discrepancy=abs(direct - on_shell - bterm) / scale if scale > 1e-300 else 0.0,
                        extremum="minimum" if law.G > 0 else "maximum", divergent=divergent)


# -- grid solver -------------------------------------------------------------------


def _boundary_functions(law: MediumLaw, config: ChargeConfiguration, bc: BoundaryCondition, grid: Grid):
    D = grid.D
    Q = config.total_charge() if config is not None else 0.0
    x0 = config.centroid() if config is not None else np.zeros(D)
    lo, hi = np.asarray(grid.lo), np.asarray(grid.hi)
    corners = np.array(np.meshgrid(*[[a - h, b + h] for a, b, h in zip(lo, hi, grid.h)], indexing="ij"))
    r_far = float(np.max(np.linalg.norm(corners.reshape(D, -1).T - x0, axis=1))) * 1.01
    r_near = max(float(np.min(np.abs(np.concatenate([x0 - lo, hi - x0])))) * 0.5, min(grid.h) * 0.25)
    if bc.kind == "dirichlet-box":
        vals = 0.0 if bc.values is None else bc.values
        if callable(vals):
            return vals, None
        return (lambda pts: np.full(len(pts), float(vals))), None
    if D == 1:
        # symmetric far field: equal outward slopes on both ends
        if bc.kind != "decay":
            raise ValueError("one-dimensional grids support the symmetric decay condition only")
        flux = abs(law.G * Q)
        s = math.copysign(law.a0 * float(nu_inverse(law, flux / law.a0)), law.G * Q) if Q != 0 else 0.0
        return None, (lambda pts, k, side: np.full(len(pts), s))
    if bc.kind == "decay":
        if Q == 0:
            return (lambda pts: np.zeros(len(pts))), None
        rp = RadialPotential(law, Q, r_near, r_far)
        return (lambda pts: rp(np.linalg.norm(pts - x0, axis=1))), None
    g0 = np.asarray(bc.g0, float)
    if g0.shape != (D,):
        raise ValueError(f"g0 must have {D} components")

    def data(pts):
        return -(pts @ g0) + uniform_gradient_perturbation(law, g0, Q, pts - x0)

    return data, None


def _face_law_fn(law: MediumLaw, config: Optional[ChargeConfiguration]):
    if config is None:
        return None
    overrides = []
    for b in config.bodies:
        if b.kind == "medium-inclusion":
            overrides.append((b.law.with_constants(a0=law.a0, G=law.G, D=law.D), b.region))
        elif b.kind == "boundary-neumann":
            overrides.append((obstacle_law(law), b.region))
    if not overrides:
        return None

    def fn(pts):
        used = np.zeros(len(pts), bool)
        out = []
        for lw, region in overrides:
            m = region.contains(pts) & ~used
            used |= m
            out.append((lw, m))
        return [(law, ~used)] + out

    return fn


def build_discretization(law: MediumLaw, config: Optional[ChargeConfiguration], bc: BoundaryCondition,
                         grid: Grid) -> Discretization:
    sides = bc.sides(grid.D)
    if grid.D == 1 and bc.kind == "decay":
        sides = tuple(tuple(NEUMANN if s == DATA else s for s in pair) for pair in sides)
    data_fn, normal_fn = _boundary_functions(law, config, bc, grid)
    fixed = np.zeros(grid.shape, bool)
    fixed_values = np.zeros(grid.shape)
    if config is not None:
        pts = grid.points()
        for b in config.bodies:
            if b.kind == "boundary-dirichlet":
                m = b.region.contains(pts).reshape(grid.shape)
                fixed |= m
                fixed_values[m] = b.value
    if grid.D == 1 and bc.kind == "decay" and not fixed.any():
        fixed[0] = True  # remove the constant null space
    face_laws = []
    fn = _face_law_fn(law, config)
    if fn is not None:
        centers = FaceLayout(grid, extended=grid.D > 1).centers()
        face_laws = [(lw, m) for lw, m in fn(centers)[1:]]
    return Discretization(grid, law, sides, data_fn, normal_fn, face_laws, fixed, fixed_values)


def _initial_guess(disc: Discretization, rho: np.ndarray) -> np.ndarray:
    """Linear-medium (mu = 1) solution with the same data.

    The boundary-data part and the source part are solved separately; the
    source part is scaled down until the field is admissible.
    """
    free = disc.free
    N = disc.grid.N
    D, nf = disc.grid.D, disc.nf
    c = disc.c_scale * disc.weights
    base = disc.fixed_values.copy()

    def mv(v):
        x = np.zeros(N)
        x[free] = v
        u = (disc.B @ x).reshape(D, nf)
        return (disc.Bt @ (c * u).ravel())[free]

    k = disc.grid.D * c
    A = (disc.BnT @ sp.diags(k) @ disc.Bn).tocsr()
    diag = A.diagonal()
    if np.any(diag <= 0):
        A = A + sp.diags((diag <= 0).astype(float))
    M = amg_preconditioner(A)
    op = LinearOperator((len(free), len(free)), matvec=mv, dtype=float)
    g_base = disc.face_gradients(base)
    rhs_data = -(disc.c_scale * (disc.Bt @ (disc.weights * g_base).ravel()) + disc.work)[free]
    rhs_src = -(disc.law.sign_G * disc.grid.cell_volume * rho.ravel())[free]
    x_data, _ = cg(op, rhs_data, rtol=1e-6, maxiter=300, M=M)
    x_src = np.zeros_like(x_data)
    if np.any(rhs_src):
        x_src, _ = cg(op, rhs_src, rtol=1e-6, maxiter=300, M=M)
    for t in np.concatenate([[1.0], 0.5 ** np.arange(1, 40)]):
        trial = base.copy()
        trial[free] = x_data + t * x_src
        if math.isfinite(disc.J(trial, rho)):
            return trial
    raise InadmissibleError(f"{disc.law.name}: no admissible starting field (boundary data saturates the law)")


def solve_grid(law: MediumLaw, config: Optional[ChargeConfiguration], bc: BoundaryCondition, grid: Grid,
               tol: float = 1e-8, max_iter: int = 60, initial=None, sub: int = 3,
               rho: Optional[np.ndarray] = None, check_resolution: bool = True) -> FieldSolution:
    """Damped Newton minimisation of the discrete energy.

    Each step solves the linearised anisotropic problem by conjugate
    gradients (AMG-preconditioned, relative tolerance 0.1x the current
    residual) and backtracks on the energy until the Armijo condition holds.

    Parameters
    ----------
    initial : None, ``"zero"``, an array, or ``("random", seed)``
        Starting field; ``None`` uses the linear-medium solution.
    rho : optional density overriding ``config.density_on(grid)``.

    Raises
    ------
    ConvergenceError
        Residual above ``tol`` after ``max_iter`` steps.
    InadmissibleError
        The law cannot support the configuration (saturation or w >= w_max).
    """
    if config is not None and config.D != grid.D:
        raise ValueError(f"configuration dimension {config.D} != grid dimension {grid.D}")
    if check_resolution and config is not None:
        for b in config.bodies:
            if b.kind == "point" and b.width < 4 * max(grid.h) * (1 - 1e-9):
                raise ValueError(f"body {b.id!r}: regularisation width {b.width} spans fewer than 4 cells")
    if config is not None and law.D > 1 and law.nu_sup() < math.inf:
        for b in config.sources:
            # a point charge needs unbounded nu near its centre
            if b.kind == "point" and b.q != 0:
                raise InadmissibleError(f"{law.name}: body {b.id!r} point-charge inadmissible "
                                        f"(nu saturation, sup nu = {law.nu_sup():.6g})")
            if b.kind == "sphere":
                # flux through any ball is at most a0 sup(nu) times its area
                r = np.linspace(b.profile_.R / 200, b.profile_.R, 200)
                z = np.abs(law.G * b.profile_.enclosed(r, law.D)) / (law.a0 * r ** (law.D - 1))
                if np.max(z) >= law.nu_sup():
                    raise InadmissibleError(f"{law.name}: body {b.id!r} inadmissible (nu saturation: "
                                            f"enclosed flux {np.max(z):.6g} >= sup nu = {law.nu_sup():.6g})")
    disc = build_discretization(law, config, bc, grid)
    if rho is None:
        rho = config.density_on(grid, sub) if config is not None else np.zeros(grid.shape)
    rho = np.asarray(rho, float).reshape(grid.shape)
    free = disc.free

    if initial is None:
        phi = _initial_guess(disc, rho)
    elif isinstance(initial, str) and initial == "zero":
        phi = disc.fixed_values.copy()
    elif isinstance(initial, tuple) and initial and initial[0] == "random":
        base = _initial_guess(disc, rho)
        rng = np.random.default_rng(initial[1])
        amp = 0.1 * (float(np.std(base)) + 1e-3)
        phi = base.copy()
        phi[free] += amp * rng.standard_normal(len(free))
        if not math.isfinite(disc.J(phi, rho)):
            phi = base
    else:
        phi = np.asarray(initial, float).ravel().copy()
        phi[disc.fixed] = disc.fixed_values[disc.fixed]

    Jc = disc.J(phi, rho)
    if not math.isfinite(Jc):
        raise InadmissibleError(f"{law.name}: initial field outside the admissible range (w >= w_max)")
    history = [Jc]
    res = disc.relative_residual(phi, rho)
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        grad = disc.gradient(phi, rho)[free]
        g = disc.face_gradients(phi)
        H = disc.hessian_operator(g)
        M = disc.preconditioner(g)
        p, info = cg(H, -grad, rtol=min(0.1, 0.1 * res), maxiter=400, M=M)
        slope = float(np.dot(grad, p))
        if not slope < 0:
            p = -grad
            slope = -float(np.dot(grad, grad))
        t = 1.0
        accepted = False
        w_old = disc.face_w(g)
        while t > 1e-12:
            trial = phi.copy()
            trial[free] += t * p
            if not disc.keeps_gap(disc.face_w(disc.face_gradients(trial)), w_old):
                t *= 0.5
                continue
            Jt = disc.J(trial, rho)
            if Jt <= Jc + 1e-4 * t * slope:
                accepted = True
                break
            # energy flat to round-off: accept if the residual still falls
            if math.isfinite(Jt) and abs(Jt - Jc) <= 1e-13 * (abs(Jc) + 1e-300) * 10:
                if disc.relative_residual(trial, rho) < res:
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            log.debug("line search stalled at iteration %d", it)
            break
        phi, Jc = trial, min(Jt, Jc)
        history.append(Jt)
        res = disc.relative_residual(phi, rho)
        log.debug("newton %d: J=%.15g res=%.3e step=%.3g cg_info=%d", it, Jt, res, t, info)

    sol = FieldSolution(grid=grid, phi=phi.reshape(grid.shape), law=law, bc=bc, sides=disc.sides, rho=rho,
                        residual=res, iterations=it, converged=res < tol, tol=tol,
                        energy_history=history, config=config, disc=disc,
                        face_law_fn=_face_law_fn(law, config),
                        total_charge=config.total_charge() if config is not None else 0.0,
                        origin=config.centroid() if config is not None else None)
    if not sol.converged:
        raise ConvergenceError(f"no convergence after {it} Newton steps (residual {res:.3e} > tol {tol:.1e})", sol)
    return sol


# -- exact radial and 1D solutions ------------------------------------------------------


@dataclass
class RadialSolution:
    r: np.ndarray
    enclosed: np.ndarray
    w: np.ndarray
    g: np.ndarray
    phi: np.ndarray


def solve_radial(law: MediumLaw, profile, r_grid) -> RadialSolution:
    """Exact field of a spherically symmetric density (Gauss's theorem at every radius).

    ``profile`` is a :class:`RadialProfile` or a callable returning the
    enclosed charge ``M(r)``.  The potential is fixed at the outer radius by
    the point-charge far field of the total charge.

    Raises
    ------
    InadmissibleError
        If the law saturates; the message names the largest failing radius.
    """
    r = np.asarray(r_grid, float)
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be positive and increasing")
    D = law.D
    if isinstance(profile, RadialProfile):
        M = profile.enclosed(r, D)
        Q = profile.total(D)
    else:
        M = np.asarray(profile(r), float)
        Q = float(np.asarray(profile(np.array([r[-1] * 1e6])))[0])
    z = np.abs(law.G * M) / (law.a0 * r ** (D - 1))
    sup = law.nu_sup()
    bad = z >= sup
    if np.any(bad):
        r_sat = float(r[np.flatnonzero(bad)[-1]])
        raise InadmissibleError(f"{law.name}: nu saturation for r <= {r_sat:.6g} (sup nu = {sup:.6g}); "
                                "point-charge inadmissible")
    w = np.asarray(nu_inverse(law, z), float)
    g = np.sign(law.G * M) * law.a0 * w
    phi_out = float(RadialPotential(law, Q, r[-1] * 0.5, r[-1] * 2)(np.array([r[-1]]))[0]) if Q != 0 else 0.0
    if D == 1:
        phi_out = 0.0
    cum = integrate.cumulative_simpson(g, x=r, initial=0.0) if len(r) > 2 else \
        integrate.cumulative_trapezoid(g, r, initial=0.0)
    phi = phi_out - (cum[-1] - cum)
    return RadialSolution(r=r, enclosed=M, w=w, g=g, phi=phi)


@dataclass
class LineSolution:
    """Piecewise-linear potential of point charges on a line."""

    positions: np.ndarray
    charges: np.ndarray
    flux: np.ndarray       # mu phi' on the len(charges)+1 segments
    w: np.ndarray
    slope: np.ndarray
    phi_at: np.ndarray     # potential at the charge positions (phi = 0 at the first)
    law: MediumLaw

    def __call__(self, x):
        x = np.asarray(x, float)
        seg = np.searchsorted(self.positions, x)
        ref = np.clip(seg - 1, 0, len(self.positions) - 1)
        return self.phi_at[ref] + self.slope[seg] * (x - self.positions[ref])

    def stress(self) -> np.ndarray:
        """Stress ``(a0^2 / 2 alpha_1 G) chi(w)`` on every segment."""
        law = self.law
        return law.a0 ** 2 / (2 * law.alphaD * law.G) * law.chi(self.w)

    def force(self, i: int) -> float:
        """Force on charge ``i`` from the stress on either side (positive = +x)."""
        P = self.stress()
        return float(P[i] - P[i + 1])


def solve_1d(law: MediumLaw, charges: Sequence[tuple]) -> LineSolution:
    """Exact 1D solution for ordered point charges with symmetric far field.

    ``charges`` is a sequence of ``(position, q)``.  The flux on each segment
    follows from Gauss's theorem and the symmetric condition
    ``phi'(inf) = -phi'(-inf)``.
    """
    if law.D != 1:
        raise ValueError("solve_1d needs a D = 1 law")
    items = sorted((float(x), float(q)) for x, q in charges)
    if not items:
        raise ValueError("no charges")
    xs = np.array([x for x, _ in items])
    if np.any(np.diff(xs) <= 0):
        raise ValueError("charge positions must be distinct")
    qs = np.array([q for _, q in items])
    cum = np.concatenate([[0.0], np.cumsum(qs)])
    Q = cum[-1]
    flux = law.alphaD * law.G * (cum - 0.5 * Q)
    z = np.abs(flux) / law.a0
    sup = law.nu_sup()
    if np.any(z >= sup):
        k = int(np.flatnonzero(z >= sup)[0])
        raise InadmissibleError(f"{law.name}: nu saturation on segment {k}; point-charge inadmissible")
    w = np.asarray(nu_inverse(law, z), float)
    slope = np.sign(flux) * law.a0 * w
    phi_at = np.concatenate([[0.0], np.cumsum(slope[1:-1] * np.diff(xs))])
    return LineSolution(xs, qs, flux, w, slope, phi_at, law)
