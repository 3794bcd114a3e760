"""Closed-form fields and forces, used as oracles and as calculators."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .media import MediumLaw, nu_inverse
from .solver import RadialPotential, solve_1d


def sign(x: float) -> float:
    return 1.0 if x > 0 else (-1.0 if x < 0 else 0.0)


def radial_field(law: MediumLaw, enclosed_charge: Callable, r):
    """Radial field ``g(r) = s(GM) a0 nu^-1(|G M(r)| / (a0 r^(D-1)))``."""
    r = np.asarray(r, float)
    if np.any(r <= 0):
        raise ValueError("radial_field needs r > 0")
    M = np.asarray(enclosed_charge(r), float) * np.ones_like(r)
    z = np.abs(law.G * M) / (law.a0 * r ** (law.D - 1))
    out = np.sign(law.G * M) * law.a0 * np.asarray(nu_inverse(law, z), float)
    return float(out) if out.ndim == 0 else out


# -- one dimension -------------------------------------------------------------------


@dataclass
class Force1D:
    """1D force on a charge ``q`` with ``Q`` = (charge to its right) - (charge to its left).

    ``literal`` evaluates the published closed form as written, with
    prefactor ``a0^2/(8G)`` and ``w = nu^-1(|G||q +- Q| / (2 a0))``.
    ``oracle`` integrates the stress on either side of the charge in the
    exact 1D solution.  ``prefactor_literal`` applies the published
    prefactor to the oracle's field strengths.  Positive means +x.
    """

    q: float
    Q: float
    literal: float
    oracle: float
    prefactor_literal: float
    w_plus: float
    w_minus: float
    w_plus_literal: float
    w_minus_literal: float

    @property
    def composite_ratio(self) -> float:
        return self.oracle / self.literal if self.literal != 0 else math.nan

    @property
    def prefactor_ratio(self) -> float:
        return self.oracle / self.prefactor_literal if self.prefactor_literal != 0 else math.nan

    def as_dict(self) -> dict:
        d = asdict(self)
        d["composite_ratio"] = self.composite_ratio
        d["prefactor_ratio"] = self.prefactor_ratio
        return d


def force_1d_literal(law: MediumLaw, q: float, Q: float) -> float:
    wp = float(nu_inverse(law, abs(law.G) * abs(q + Q) / (2 * law.a0)))
    wm = float(nu_inverse(law, abs(law.G) * abs(q - Q) / (2 * law.a0)))
    return law.a0 ** 2 / (8 * law.G) * float(law.chi(wp) - law.chi(wm))


def force_1d_oracle(law: MediumLaw, q: float, Q: float) -> float:
    """Stress-integral force from the exact 1D solution (``Q`` placed to the right)."""
    if q == 0 or Q == 0:
        return 0.0
    sol = solve_1d(law, [(0.0, q), (1.0, Q)])
    return sol.force(0)


def force_1d(law: MediumLaw, q: float, Q: float) -> Force1D:
    if law.D != 1:
        raise ValueError("force_1d needs a D = 1 law")
    wpl = float(nu_inverse(law, abs(law.G) * abs(q + Q) / (2 * law.a0)))
    wml = float(nu_inverse(law, abs(law.G) * abs(q - Q) / (2 * law.a0)))
    literal = law.a0 ** 2 / (8 * law.G) * float(law.chi(wpl) - law.chi(wml))
    # the flux on either side of q is |G| |q +- Q| (Gauss with alpha_1 = 2, symmetric far field)
    wp = float(nu_inverse(law, abs(law.G) * abs(q + Q) / law.a0))
    wm = float(nu_inverse(law, abs(law.G) * abs(q - Q) / law.a0))
    pref = law.a0 ** 2 / (8 * law.G) * float(law.chi(wp) - law.chi(wm))
    return Force1D(q=q, Q=Q, literal=literal, oracle=force_1d_oracle(law, q, Q), prefactor_literal=pref,
                   w_plus=wp, w_minus=wm, w_plus_literal=wpl, w_minus_literal=wml)


# -- large charge ----------------------------------------------------------------


def effective_green_gradient(law: MediumLaw, q: float, r_vec: np.ndarray) -> np.ndarray:
    """Gradient of the effective Green's function of a large charge ``q``."""
    r_vec = np.atleast_2d(np.asarray(r_vec, float))
    r = np.linalg.norm(r_vec, axis=1)
    z = abs(q * law.G) / (law.a0 * r ** (law.D - 1))
    w = np.asarray(nu_inverse(law, z), float)
    return sign(q * law.G) * law.a0 * w[:, None] * r_vec / r[:, None]


def effective_green_laplacian(law: MediumLaw, q: float, r) -> np.ndarray:
    """``(D-1) s(qG) a0 w mu_hat / ((1 + mu_hat) r)`` with ``w = nu^-1(z)``."""
    r = np.asarray(r, float)
    z = abs(q * law.G) / (law.a0 * r ** (law.D - 1))
    w = np.asarray(nu_inverse(law, z), float)
    mh = law.mu_hat(np.maximum(w, 1e-300))
    return sign(q * law.G) * (law.D - 1) * law.a0 * w * mh / ((1 + mh) * r)


def _midpoint_slabs(lo, hi, n):
    """Midpoint nodes in slabs along the first axis (bounded memory)."""
    D = len(lo)
    h = (np.asarray(hi) - np.asarray(lo)) / n
    axes = [lo[k] + (np.arange(n) + 0.5) * h[k] for k in range(D)]
    dv = float(np.prod(h))
    if D == 1:
        yield axes[0][:, None], dv
        return
    rest = np.meshgrid(*axes[1:], indexing="ij")
    rest = np.stack([m.ravel() for m in rest], axis=1)
    for x in axes[0]:
        yield np.column_stack([np.full(len(rest), x), rest]), dv


@dataclass
class LargeChargeResult:
    force: list
    potential: float
    n_cells: int
    rel_change: float


def large_charge_force(law: MediumLaw, q: float, R: Sequence[float], density: Callable,
                       lo: Sequence[float], hi: Sequence[float], rtol: float = 1e-6,
                       n0: int = 8, n_max: Optional[int] = None) -> LargeChargeResult:
    """Force on a large charge ``q`` at ``R`` from a small distribution.

    Midpoint quadrature of ``density`` over the box ``[lo, hi]`` with
    Richardson extrapolation, refined until successive extrapolants agree
    to ``rtol`` or ``n_max`` nodes per axis (default 2048, 512, 128 for
    D = 1, 2, 3+) is reached.  Smooth densities are assumed.  Also returns the effective potential energy
    ``int rho G_q(|r - R|)``.

    Raises
    ------
    ValueError
        If the charge lies inside the distribution's box (overlap).
    """
    R = np.asarray(R, float)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if np.all(R >= lo) and np.all(R <= hi):
        raise ValueError("large charge overlaps the distribution")
    D = law.D
    if n_max is None:
        n_max = {1: 2048, 2: 512}.get(D, 128)
    pot = RadialPotential(law, q, max(float(np.min(np.linalg.norm(np.clip(R, lo, hi) - R))), 1e-9) * 0.5,
                          float(np.max(np.abs(np.concatenate([lo - R, hi - R])))) * 2 * math.sqrt(D))

    def quad(n):
        F, E = np.zeros(D), 0.0
        for pts, dv in _midpoint_slabs(lo, hi, n):
            rho = np.asarray(density(pts), float)
            m = rho != 0
            if not m.any():
                continue
            rv = pts[m] - R
            # force on q is minus the force on the distribution
            F += (rho[m, None] * effective_green_gradient(law, q, rv)).sum(0) * dv
            E += float(np.sum(rho[m] * pot(np.linalg.norm(rv, axis=1)))) * dv
        return F, E

    n = n0
    F_prev, E_prev = quad(n)
    best, bestE, change = F_prev, E_prev, math.inf
    R_prev = None
    while n < n_max:
        n *= 2
        F_n, E_n = quad(n)
        F_r = (4 * F_n - F_prev) / 3
        E_r = (4 * E_n - E_prev) / 3
        if R_prev is not None:
            change = float(np.linalg.norm(F_r - R_prev)) / max(float(np.linalg.norm(F_r)), 1e-300)
            best, bestE = F_r, E_r
            if change < rtol:
                break
        R_prev = F_r
        F_prev, E_prev = F_n, E_n
        best, bestE = F_r, E_r
    return LargeChargeResult(force=[float(v) for v in best], potential=bestE, n_cells=n, rel_change=change)


# -- two bodies ------------------------------------------------------------------------


@dataclass
class TwoBodyQuery:
    q1: float
    q2: float
    ell: float
    law: MediumLaw

    def __post_init__(self):
        if abs(self.q1) > abs(self.q2):
            self.q1, self.q2 = self.q2, self.q1
        if self.q2 == 0:
            raise ValueError("at least one charge must be nonzero")
        if not self.ell > 0:
            raise ValueError("separation must be positive")

    @property
    def eta(self) -> float:
        return self.q1 / self.q2

    @property
    def z(self) -> float:
        law = self.law
        return abs(law.G * self.q2) / (law.a0 * self.ell ** (law.D - 1))

    @property
    def d(self) -> float:
        return self.law.D / (self.law.D - 1)

    @property
    def G_hat(self) -> float:
        return self.law.G_hat


def two_body_force_conformal(D: int, q1: float, q2: float, ell: float, G: float = 1.0, a0: float = 1.0) -> float:
    """Two-point-charge force in the conformal medium (``mu = w^(D-2)``); positive = attraction."""
    if D < 2:
        raise ValueError("the conformal two-body force needs D >= 2")
    if not ell > 0:
        raise ValueError("separation must be positive")
    d = D / (D - 1.0)
    Gh = abs(G * a0 ** (D - 2))
    return sign(G) / ell / d * Gh ** (d - 1) * (abs(q1 + q2) ** d - abs(q1) ** d - abs(q2) ** d)


@dataclass
class ScalingResult:
    f_hat: float
    exponent: Optional[float]


def test_force_scaling(law: MediumLaw, eta: float, z: float) -> ScalingResult:
    """Small-``eta`` reduced force ``nu^-1(z)``; power laws also give the ``ell`` exponent."""
    exponent = None
    if law.name == "power" or law.name == "linear":
        beta = float(law.params.get("beta", 0.0)) if law.name == "power" else 0.0
        exponent = -(law.D - 1) / (1.0 + beta)
    return ScalingResult(f_hat=float(nu_inverse(law, z)), exponent=exponent)


test_force_scaling.__test__ = False  # not a pytest test
