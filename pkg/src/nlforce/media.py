"""Medium laws (F, mu) for the nonlinear Poisson equation.

A law is a Lagrangian-density shape ``F(y)`` with ``y = w**2`` and its
response coefficient ``mu(w) = dF/dy``.  Everything else (``nu``, ``mu_hat``,
``F_hat``, ``chi``) is derived.  All callables accept numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

ArrayFn = Callable[[np.ndarray], np.ndarray]

__all__ = [
    "MediumLaw",
    "MediumSample",
    "EllipticityReport",
    "InadmissibleError",
    "LawRangeError",
    "alpha_D",
    "builtin_law",
    "BUILTIN_KINDS",
    "custom_law",
    "medium_eval",
    "nu_inverse",
    "ellipticity_report",
]


class InadmissibleError(ValueError):
    """A field strength or charge that the law cannot support."""


class LawRangeError(InadmissibleError):
    """``w`` outside the admissible range of a law."""


def alpha_D(D: int) -> float:
    """Complete solid angle of the unit sphere in ``D`` dimensions."""
    return 2.0 * math.pi ** (D / 2.0) / math.gamma(D / 2.0)


@dataclass(frozen=True)
class MediumLaw:
    """Immutable medium law plus the constants ``a0``, ``G`` and ``D``.

    ``mu_hat`` and ``nu_inv`` are optional analytic shortcuts; when absent the
    finite-difference / bisection fallbacks are used.
    """

    name: str
    F: ArrayFn
    mu: ArrayFn
    beta0: float = 0.0
    a0: float = 1.0
    G: float = 1.0
    D: int = 3
    w_max: Optional[float] = None
    mu_hat_fn: Optional[ArrayFn] = field(default=None, repr=False)
    nu_inv_fn: Optional[ArrayFn] = field(default=None, repr=False)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.a0 > 0:
            raise ValueError(f"a0 must be positive, got {self.a0}")
        if self.G == 0:
            raise ValueError("G must be nonzero")
        if int(self.D) != self.D or self.D < 1:
            raise ValueError(f"D must be a positive integer, got {self.D}")

    @property
    def alphaD(self) -> float:
        return alpha_D(self.D)

    @property
    def gamma0(self) -> float:
        return 1.0 / (1.0 + self.beta0)

    @property
    def sign_G(self) -> float:
        return 1.0 if self.G > 0 else -1.0

    @property
    def G_hat(self) -> float:
        return self.G * self.a0 ** self.beta0

    def with_constants(self, *, a0=None, G=None, D=None) -> "MediumLaw":
        kw = {}
        if a0 is not None:
            kw["a0"] = a0
        if G is not None:
            kw["G"] = G
        if D is not None:
            kw["D"] = D
        return replace(self, **kw)

    # -- vectorized derived quantities -------------------------------------

    def nu(self, w):
        w = np.asarray(w, dtype=float)
        return w * self.mu(w)

    def mu_hat(self, w):
        """d ln(mu) / d ln(w); centered difference when no closed form."""
        w = np.asarray(w, dtype=float)
        if self.mu_hat_fn is not None:
            return self.mu_hat_fn(w)
        return _fd_mu_hat(self, w)

    def F_hat(self, w):
        """y F'(y) / F(y) at y = w**2, with its w -> 0 limit."""
        w = np.asarray(w, dtype=float)
        y = w * w
        Fv = self.F(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(Fv > 0, y * self.mu(w) / np.where(Fv > 0, Fv, 1.0), 0.0)
        return np.where(w == 0, (2.0 + self.beta0) / 2.0, out)

    def chi(self, w):
        w = np.asarray(w, dtype=float)
        return 2.0 * self.mu(w) * w * w - self.F(w * w)

    def nu_sup(self) -> float:
        """Supremum of nu over the admissible range (inf when unbounded)."""
        if self.w_max is not None:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                near = float(self.nu(self.w_max * (1 - 1e-8)))
                nearer = float(self.nu(self.w_max * (1 - 1e-12)))
                edge = float(self.nu(np.nextafter(self.w_max, 0.0)))
            # nu blowing up at the ceiling (Born-Infeld) is unbounded, not saturating
            return math.inf if not math.isfinite(nearer) or nearer > 10 * near else edge
        with np.errstate(over="ignore", invalid="ignore"):
            big = self.nu(1e12)
        return math.inf if big > 1e9 else float(big)

    def check_admissible(self, w) -> None:
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise LawRangeError(f"{self.name}: negative field strength")
        if self.w_max is not None and np.any(w >= self.w_max):
            raise LawRangeError(
                f"{self.name}: w={float(np.max(w)):.6g} outside admissible range "
                f"w < w_max={self.w_max:.6g}"
            )


_FD_STEP = 1e-6


def _fd_mu_hat(law: MediumLaw, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    wp = w * (1.0 + _FD_STEP)
    wm = w * (1.0 - _FD_STEP)
    if law.w_max is not None:
        wp = np.minimum(wp, np.nextafter(law.w_max, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.log(law.mu(wp)) - np.log(law.mu(wm))
        out = num / (np.log(wp) - np.log(wm))
    return np.where(w > 0, out, law.beta0)


@dataclass(frozen=True)
class MediumSample:
    w: float
    y: float
    F: float
    mu: float
    mu_hat: float
    nu: float
    F_hat: float
    chi: float


def medium_eval(law: MediumLaw, w: float) -> MediumSample:
    """Evaluate every derived quantity of ``law`` at field strength ``w``."""
    w = float(w)
    law.check_admissible(w)
    y = w * w
    if w == 0.0:
        mu0 = float(law.mu(np.array(0.0))) if law.beta0 <= 0 else 0.0
        return MediumSample(0.0, 0.0, 0.0, mu0, float(law.beta0), 0.0,
                            (2.0 + law.beta0) / 2.0, 0.0)
    return MediumSample(
        w=w,
        y=y,
        F=float(law.F(np.array(y))),
        mu=float(law.mu(np.array(w))),
        mu_hat=float(law.mu_hat(np.array(w))),
        nu=float(law.nu(np.array(w))),
        F_hat=float(law.F_hat(np.array(w))),
        chi=float(law.chi(np.array(w))),
    )


def nu_inverse(law: MediumLaw, z):
    """Unique ``w`` with ``w mu(w) = z``.

    Raises
    ------
    InadmissibleError
        If ``z`` exceeds the supremum of ``nu`` (point charges are then not
        admitted by the law).
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0):
        raise ValueError("nu_inverse requires z >= 0")
    sup = law.nu_sup()
    if np.any(z_arr >= sup):
        raise InadmissibleError(
            f"{law.name}: nu={float(np.max(z_arr)):.6g} exceeds sup nu={sup:.6g}; "
            "point-charge inadmissible (nu saturation)"
        )
    if law.nu_inv_fn is not None:
        out = law.nu_inv_fn(z_arr)
    else:
        out = np.vectorize(lambda zz: _bisect_nu(law, zz), otypes=[float])(z_arr)
    return float(out) if np.ndim(out) == 0 else out


def _bisect_nu(law: MediumLaw, z: float) -> float:
    if z == 0.0:
        return 0.0
    hi = law.w_max if law.w_max is not None else max(1.0, z)
    if law.w_max is None:
        with np.errstate(over="ignore"):
            while law.nu(hi) < z:
                hi *= 2.0
    lo = 0.0
    # relative tolerance 1e-12 on w
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        with np.errstate(over="ignore"):
            below = law.nu(mid) < z
        if below:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class EllipticityReport:
    w: np.ndarray
    mu_hat: np.ndarray
    failed: np.ndarray
    min_two_F_hat_minus_one: float

    @property
    def passed(self) -> bool:
        return not bool(np.any(self.failed)) and self.min_two_F_hat_minus_one > 0


def ellipticity_report(law: MediumLaw, w_grid) -> EllipticityReport:
    """Per-point ``mu_hat`` with every ``mu_hat <= -1`` flagged."""
    w = np.asarray(w_grid, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("ellipticity_report needs a non-empty grid")
    law.check_admissible(w)
    mh = np.asarray(law.mu_hat(w), dtype=float)
    fh = np.asarray(law.F_hat(w), dtype=float)
    return EllipticityReport(w=w, mu_hat=mh, failed=mh <= -1.0,
                             min_two_F_hat_minus_one=float(np.min(2 * fh - 1)))


# -- builtin laws -----------------------------------------------------------


def _power(beta: float):
    e = (2.0 + beta) / 2.0

    def F(y):
        return (2.0 / (2.0 + beta)) * np.power(np.asarray(y, float), e)

    def mu(w):
        w = np.asarray(w, float)
        with np.errstate(divide="ignore"):
            return np.power(w, beta)

    return dict(
        F=F, mu=mu, beta0=beta,
        mu_hat_fn=lambda w: np.full_like(np.asarray(w, float), beta),
        nu_inv_fn=lambda z: np.power(z, 1.0 / (1.0 + beta)),
    )


def _linear():
    return dict(
        F=lambda y: np.asarray(y, float) * 1.0,
        mu=lambda w: np.ones_like(np.asarray(w, float)),
        beta0=0.0,
        mu_hat_fn=lambda w: np.zeros_like(np.asarray(w, float)),
        nu_inv_fn=lambda z: np.asarray(z, float) * 1.0,
    )


def _area_min():
    def nu_inv(z):
        z = np.asarray(z, float)
        return 2.0 * z / np.sqrt(1.0 - 4.0 * z * z)

    return dict(
        F=lambda y: np.asarray(y, float) / (np.sqrt(1.0 + np.asarray(y, float)) + 1.0),
        mu=lambda w: 0.5 / np.sqrt(1.0 + np.asarray(w, float) ** 2),
        beta0=0.0,
        mu_hat_fn=lambda w: -(np.asarray(w, float) ** 2) / (1.0 + np.asarray(w, float) ** 2),
        nu_inv_fn=nu_inv,
    )


def _born_infeld():
    return dict(
        F=lambda y: 2.0 * np.asarray(y, float) / (1.0 + np.sqrt(1.0 - np.asarray(y, float))),
        mu=lambda w: 1.0 / np.sqrt(1.0 - np.asarray(w, float) ** 2),
        beta0=0.0,
        w_max=1.0,
        mu_hat_fn=lambda w: np.asarray(w, float) ** 2 / (1.0 - np.asarray(w, float) ** 2),
        nu_inv_fn=lambda z: np.asarray(z, float) / np.sqrt(1.0 + np.asarray(z, float) ** 2),
    )


def _mond_simple():
    def F(y):
        y = np.asarray(y, float)
        w = np.sqrt(y)
        return y - 2.0 * w + 2.0 * np.log1p(w)

    return dict(
        F=F,
        mu=lambda w: np.asarray(w, float) / (1.0 + np.asarray(w, float)),
        beta0=1.0,
        mu_hat_fn=lambda w: 1.0 / (1.0 + np.asarray(w, float)),
        nu_inv_fn=lambda z: 0.5 * (np.asarray(z, float) + np.sqrt(np.asarray(z, float) ** 2 + 4.0 * np.asarray(z, float))),
    )


def _ideal_gas(gamma: float):
    if gamma < 1:
        raise ValueError(f"ideal-gas-flow requires gamma >= 1, got {gamma}")
    if gamma == 1.0:
        # isothermal limit: density exp(-u^2/2c^2), with a0 = c
        return dict(
            F=lambda y: -2.0 * np.expm1(-0.5 * np.asarray(y, float)),
            mu=lambda w: np.exp(-0.5 * np.asarray(w, float) ** 2),
            beta0=0.0,
            w_max=1.0,
            mu_hat_fn=lambda w: -(np.asarray(w, float) ** 2),
        )
    k = 1.0 / (gamma - 1.0)

    def F(y):
        y = np.asarray(y, float)
        return -np.expm1((k + 1.0) * np.log1p(-y)) / (k + 1.0)

    def mu(w):
        return np.power(1.0 - np.asarray(w, float) ** 2, k)

    def mu_hat(w):
        w2 = np.asarray(w, float) ** 2
        return -2.0 * k * w2 / (1.0 - w2)

    return dict(F=F, mu=mu, beta0=0.0, w_max=math.sqrt((gamma - 1.0) / (gamma + 1.0)),
                mu_hat_fn=mu_hat)


def _negative_compressibility():
    return dict(
        F=lambda y: 2.0 * np.expm1(0.5 * np.asarray(y, float)),
        mu=lambda w: np.exp(0.5 * np.asarray(w, float) ** 2),
        beta0=0.0,
        mu_hat_fn=lambda w: np.asarray(w, float) ** 2,
    )


BUILTIN_KINDS = (
    "linear",
    "power",
    "area-min",
    "born-infeld",
    "mond-simple",
    "ideal-gas-flow",
    "negative-compressibility-flow",
)

_DEFAULT_SIGN = {"born-infeld": -1.0}
_FLOW_KINDS = ("ideal-gas-flow", "negative-compressibility-flow")


def builtin_law(kind: str, params: Optional[dict] = None, *, a0: float = 1.0,
                G: Optional[float] = None, D: int = 3) -> MediumLaw:
    """Construct one of the builtin laws and validate its invariants.

    Flow laws use ``mu = rho(u)/rho(0)`` and ``a0 = u0``; their ``G`` defaults
    to ``1/alpha_D``.  Born-Infeld defaults to ``G = -1``.
    """
    params = dict(params or {})
    if kind == "linear":
        forms = _linear()
    elif kind == "power":
        beta = float(params.get("beta", 1.0))
        if not beta > -1.0:
            raise InadmissibleError(f"power law needs beta > -1 for ellipticity, got {beta}")
        forms = _power(beta)
    elif kind == "area-min":
        forms = _area_min()
    elif kind == "born-infeld":
        forms = _born_infeld()
    elif kind == "mond-simple":
        forms = _mond_simple()
    elif kind == "ideal-gas-flow":
        forms = _ideal_gas(float(params.get("gamma", 1.4)))
    elif kind == "negative-compressibility-flow":
        forms = _negative_compressibility()
    else:
        raise ValueError(f"unknown medium law kind {kind!r}; known: {', '.join(BUILTIN_KINDS)}")

    if G is None:
        G = 1.0 / alpha_D(D) if kind in _FLOW_KINDS else _DEFAULT_SIGN.get(kind, 1.0)
    if kind == "area-min" and G <= 0:
        raise ValueError("area-min law requires G > 0")
    if kind == "born-infeld" and G >= 0:
        raise ValueError("born-infeld law requires G < 0")
    law = MediumLaw(name=kind, a0=a0, G=G, D=D, params=params, **forms)
    _validate(law)
    return law


def custom_law(name: str, *, mu: ArrayFn, F: Optional[ArrayFn] = None, beta0: float = 0.0,
               a0: float = 1.0, G: float = 1.0, D: int = 3, w_max: Optional[float] = None,
               validate: bool = True) -> MediumLaw:
    """Build a law from ``mu`` alone (``F`` by quadrature) or from both."""
    if F is None:
        F = _quadrature_F(mu)
    law = MediumLaw(name=name, F=F, mu=mu, beta0=beta0, a0=a0, G=G, D=D, w_max=w_max)
    if validate:
        _validate(law)
    return law


def _quadrature_F(mu: ArrayFn) -> ArrayFn:
    def F_scalar(y):
        if y <= 0:
            return 0.0
        val, _ = integrate.quad(lambda s: float(mu(np.sqrt(s))), 0.0, y,
                                epsrel=1e-10, epsabs=0.0, limit=200)
        return val

    def F(y):
        y = np.asarray(y, float)
        return np.vectorize(F_scalar, otypes=[float])(y)

    return F


def sample_w(law: MediumLaw, n: int = 100, lo: float = 1e-3, hi: float = 1e2) -> np.ndarray:
    """Log-spaced admissible field strengths (kept where F and mu are finite)."""
    if law.w_max is not None:
        hi = min(hi, law.w_max * (1.0 - 1e-3))
    with np.errstate(over="ignore", invalid="ignore"):
        while hi > lo and not (np.isfinite(law.F(np.array(hi * hi))) and np.isfinite(law.mu(np.array(hi)))
                               and float(law.F(np.array(hi * hi))) < 1e300):
            hi *= 0.5
    return np.geomspace(lo, hi, n)


def _validate(law: MediumLaw) -> None:
    w = sample_w(law, 60)
    mu = law.mu(w)
    if np.any(~(mu > 0)):
        raise InadmissibleError(f"{law.name}: mu must be positive for w > 0")
    if np.any(np.diff(law.nu(w)) <= 0):
        raise InadmissibleError(f"{law.name}: nu(w) = w mu(w) is not increasing (ellipticity lost)")
    if np.any(law.mu_hat(w) <= -1.0):
        raise InadmissibleError(f"{law.name}: mu_hat <= -1 (ellipticity lost)")
    if abs(float(law.F(np.array(0.0)))) > 1e-14:
        raise InadmissibleError(f"{law.name}: F(0) must vanish")


def dF_dy_fd(law: MediumLaw, w) -> np.ndarray:
    """Centred finite difference of F in y at y = w**2 (one Richardson step)."""
    w = np.asarray(w, float)
    y = w ** 2
    # step relative to the scale on which mu varies
    h = 1e-3 * y / (1.0 + np.abs(law.mu_hat(w)))
    if law.w_max is not None:
        h = np.minimum(h, 0.25 * (law.w_max ** 2 - y))

    def d(hh):
        return (law.F(y + hh) - law.F(y - hh)) / (2 * hh)

    return (4 * d(h / 2) - d(h)) / 3


def brentq_nu_inverse(law: MediumLaw, z: float) -> float:
    """Independent root-finding inverse of nu (used as a cross-check)."""
    if z == 0:
        return 0.0
    hi = law.w_max * (1 - 1e-15) if law.w_max is not None else 1.0
    while law.w_max is None and law.nu(hi) < z:
        hi *= 2
    return optimize.brentq(lambda w: (float(law.nu(w)) if w > 0 else 0.0) - z, 0.0, hi, xtol=1e-15, rtol=1e-14)
