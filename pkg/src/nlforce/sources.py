"""Charge configurations: point charges, spheres, gridded densities and bodies
defined by boundary conditions or by a different medium law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .grid import Grid
from .media import MediumLaw, alpha_D

if TYPE_CHECKING:  # pragma: no cover
    from .solver import FieldSolution


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- regions -----------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.sum((pts - np.asarray(self.center)) ** 2, axis=-1) <= self.radius ** 2

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.all((pts >= np.asarray(self.lo)) & (pts <= np.asarray(self.hi)), axis=-1)

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    @property
    def center(self):
        return tuple(0.5 * (np.asarray(self.lo) + np.asarray(self.hi)))


Region = Union[Sphere, Box]


# -- radial profiles -----------------------------------------------------------


def bump_norm(D: int) -> float:
    """Normalisation of ``(1 - s^2)^3`` on the unit ball in ``D`` dimensions."""
    beta = math.gamma(D / 2) * math.gamma(4) / math.gamma(D / 2 + 4)
    return 1.0 / (alpha_D(D) * 0.5 * beta)


@dataclass(frozen=True)
class RadialProfile:
    """Spherically symmetric density supported on ``r <= R``.

    ``kind`` is one of ``uniform`` (rho0), ``parabolic`` (rho0 (1 - r^2/R^2)),
    ``bump`` (rho0 (1 - r^2/R^2)^3).  All are non-increasing in ``r``.
    """

    kind: str
    rho0: float
    R: float

    def __post_init__(self):
        if self.kind not in ("uniform", "parabolic", "bump"):
            raise ValueError(f"unknown radial profile {self.kind!r}")
        if not self.R > 0:
            raise ValueError("profile radius must be positive")

    def __call__(self, r):
        r = np.asarray(r, float)
        s2 = np.clip(r * r / (self.R * self.R), 0.0, 1.0)
        inside = r <= self.R
        if self.kind == "uniform":
            v = np.ones_like(r)
        elif self.kind == "parabolic":
            v = 1.0 - s2
        else:
            v = (1.0 - s2) ** 3
        return np.where(inside, self.rho0 * v, 0.0)

    def shape_integral(self, D: int) -> float:
        """Integral of the unit-amplitude profile over all space."""
        if self.kind == "uniform":
            m = 1.0 / D
        elif self.kind == "parabolic":
            m = 1.0 / D - 1.0 / (D + 2)
        else:
            m = 0.5 * math.gamma(D / 2) * math.gamma(4) / math.gamma(D / 2 + 4)
        return alpha_D(D) * self.R ** D * m

    def total(self, D: int) -> float:
        return self.rho0 * self.shape_integral(D)

    def enclosed(self, r, D: int):
        """Charge inside radius ``r`` (vectorized, closed form)."""
        r = np.minimum(np.asarray(r, float), self.R)
        s = r / self.R
        aD = alpha_D(D)
        if self.kind == "uniform":
            m = s ** D / D
        elif self.kind == "parabolic":
            m = s ** D / D - s ** (D + 2) / (D + 2)
        else:
            m = s ** D / D - 3 * s ** (D + 2) / (D + 2) + 3 * s ** (D + 4) / (D + 4) - s ** (D + 6) / (D + 6)
        return self.rho0 * aD * self.R ** D * m

    @property
    def is_nonincreasing(self) -> bool:
        return self.rho0 >= 0

    @classmethod
    def with_charge(cls, kind: str, q: float, R: float, D: int) -> "RadialProfile":
        unit = cls(kind, 1.0, R)
        return cls(kind, q / unit.shape_integral(D), R)


# -- bodies ----------------------------------------------------------------------


@dataclass(frozen=True)
class PointCharge:
    """Point charge regularised by the C2 bump of width ``width``."""

    id: str
    q: float
    position: tuple
    width: float
    kind: str = field(default="point", init=False)

    def profile(self, D: int) -> RadialProfile:
        return RadialProfile.with_charge("bump", self.q, self.width, D)

    def density(self, pts: np.ndarray, D: int) -> np.ndarray:
        r = np.sqrt(np.sum((pts - np.asarray(self.position)) ** 2, axis=-1))
        return self.profile(D)(r)

    def bounds(self):
        c = np.asarray(self.position, float)
        return c - self.width, c + self.width

    @property
    def center(self):
        return tuple(self.position)

    def total_charge(self, D: int) -> float:
        return float(self.q)


@dataclass(frozen=True)
class SphereBody:
    id: str
    position: tuple
    profile_: RadialProfile
    kind: str = field(default="sphere", init=False)

    def density(self, pts: np.ndarray, D: int) -> np.ndarray:
        r = np.sqrt(np.sum((pts - np.asarray(self.position)) ** 2, axis=-1))
        return self.profile_(r)

    def profile(self, D: int) -> RadialProfile:
        return self.profile_

    def bounds(self):
        c = np.asarray(self.position, float)
        return c - self.profile_.R, c + self.profile_.R

    @property
    def center(self):
        return tuple(self.position)

    def total_charge(self, D: int) -> float:
        return float(self.profile_.total(D))


@dataclass(frozen=True)
class DensityField:
    """Gridded density: ``values[i, j, ...]`` at ``origin + (i + 1/2) * spacing``."""

    id: str
    values: np.ndarray
    origin: tuple
    spacing: tuple
    kind: str = field(default="density-field", init=False)

    def density(self, pts: np.ndarray, D: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        shape = np.asarray(self.values.shape)
        idx = np.floor((pts - np.asarray(self.origin)) / np.asarray(self.spacing)).astype(int)
        inside = np.all((idx >= 0) & (idx < shape), axis=-1)
        idx = np.clip(idx, 0, shape - 1)
        return np.where(inside, self.values[tuple(idx.T)], 0.0)

    def bounds(self):
        o = np.asarray(self.origin, float)
        return o, o + np.asarray(self.values.shape) * np.asarray(self.spacing)

    @property
    def center(self):
        lo, hi = self.bounds()
        w = np.abs(self.values)
        if w.sum() == 0:
            return tuple(0.5 * (lo + hi))
        axes = np.meshgrid(*[self.origin[k] + (np.arange(self.values.shape[k]) + 0.5) * self.spacing[k]
                             for k in range(self.values.ndim)], indexing="ij")
        return tuple(float((a * w).sum() / w.sum()) for a in axes)

    def total_charge(self, D: int) -> float:
        return float(self.values.sum() * np.prod(self.spacing))


@dataclass(frozen=True)
class DirichletBody:
    """Region whose potential is held at ``value`` (a conductor)."""

    id: str
    region: Region
    value: float = 0.0
    kind: str = field(default="boundary-dirichlet", init=False)

    def bounds(self):
        return self.region.bounds()

    @property
    def center(self):
        return tuple(self.region.center)


@dataclass(frozen=True)
class NeumannBody:
    """Rigid obstacle: zero normal flux on its surface."""

    id: str
    region: Region
    kind: str = field(default="boundary-neumann", init=False)

    def bounds(self):
        return self.region.bounds()

    @property
    def center(self):
        return tuple(self.region.center)

    def total_charge(self, D: int) -> float:
        return 0.0


@dataclass(frozen=True)
class MediumInclusion:
    """Region filled with a different medium law and no sources."""

    id: str
    region: Region
    law: MediumLaw
    kind: str = field(default="medium-inclusion", init=False)

    def bounds(self):
        return self.region.bounds()

    @property
    def center(self):
        return tuple(self.region.center)

    def total_charge(self, D: int) -> float:
        return 0.0


Body = Union[PointCharge, SphereBody, DensityField, DirichletBody, NeumannBody, MediumInclusion]
SOURCE_KINDS = ("point", "sphere", "density-field")


@dataclass
class ChargeConfiguration:
    D: int
    bodies: list
    clearance: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = set()
        for i, b in enumerate(self.bodies):
            if b.id in ids:
                raise ConfigError(f"bodies[{i}].id", f"duplicate body id {b.id!r}")
            ids.add(b.id)
            lo, hi = b.bounds()
            if len(lo) != self.D:
                raise ConfigError(f"bodies[{i}]", f"body dimension {len(lo)} != D={self.D}")
            if b.kind == "point" and not b.width > 0:
                raise ConfigError(f"bodies[{i}].width", "point charges need a positive regularisation width")
        for i in range(len(self.bodies)):
            for j in range(i + 1, len(self.bodies)):
                lo1, hi1 = self.bodies[i].bounds()
                lo2, hi2 = self.bodies[j].bounds()
                if _boxes_overlap(lo1, hi1, lo2, hi2, self.clearance) and _really_overlap(
                        self.bodies[i], self.bodies[j], self.clearance):
                    raise ConfigError(f"bodies[{j}]", f"overlaps bodies[{i}] ({self.bodies[i].id!r})")

    def body(self, body_id: str):
        for b in self.bodies:
            if b.id == body_id:
                return b
        raise KeyError(body_id)

    @property
    def sources(self) -> list:
        return [b for b in self.bodies if b.kind in SOURCE_KINDS]

    def total_charge(self) -> float:
        return float(sum(b.total_charge(self.D) for b in self.sources))

    def abs_charge(self) -> float:
        return float(sum(abs(b.total_charge(self.D)) for b in self.sources))

    def centroid(self) -> np.ndarray:
        """Charge centre used for far-field data (falls back to |q| weights)."""
        src = self.sources
        if not src:
            return np.zeros(self.D)
        qs = np.array([b.total_charge(self.D) for b in src])
        xs = np.array([b.center for b in src], float)
        Q = qs.sum()
        if abs(Q) > 0.5 * np.abs(qs).sum():
            return (qs[:, None] * xs).sum(0) / Q
        w = np.abs(qs)
        if w.sum() == 0:
            return xs.mean(0)
        return (w[:, None] * xs).sum(0) / w.sum()

    # -- grid realisation ------------------------------------------------------

    def density_on(self, grid: Grid, sub: int = 3) -> np.ndarray:
        rho = np.zeros(grid.shape)
        for b in self.sources:
            rho += sample_body(b, grid, self.D, sub)
        return rho

    def region_mask(self, grid: Grid, kind: str) -> np.ndarray:
        pts = grid.points()
        mask = np.zeros(grid.N, bool)
        for b in self.bodies:
            if b.kind == kind:
                mask |= b.region.contains(pts)
        return mask.reshape(grid.shape)


def _boxes_overlap(lo1, hi1, lo2, hi2, clearance) -> bool:
    return bool(np.all(lo1 - clearance < hi2) and np.all(lo2 - clearance < hi1))


def _really_overlap(b1, b2, clearance) -> bool:
    # sphere-like bodies: compare centre distance with radii
    r1 = _ball_radius(b1)
    r2 = _ball_radius(b2)
    if r1 is None or r2 is None:
        return True
    d = np.linalg.norm(np.asarray(b1.center, float) - np.asarray(b2.center, float))
    return d < r1 + r2 + clearance


def _ball_radius(b) -> Optional[float]:
    if b.kind == "point":
        return b.width
    if b.kind == "sphere":
        return b.profile_.R
    if getattr(b, "region", None) is not None and isinstance(b.region, Sphere):
        return b.region.radius
    return None


def sample_body(b, grid: Grid, D: int, sub: int = 3) -> np.ndarray:
    """Cell-averaged density of one body, renormalised to its exact charge.

    The normalisation is taken over the infinite lattice aligned with
    ``grid`` so that bodies cut by mirror planes keep their image-consistent
    share of charge.
    """
    lo, hi = b.bounds()
    h = np.asarray(grid.h)
    glo = np.asarray(grid.lo)
    ilo = np.floor((lo - glo) / h).astype(int) - 1
    ihi = np.ceil((hi - glo) / h).astype(int) + 1
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    axes_c = [glo[k] + (np.arange(ilo[k], ihi[k]) + 0.5) * h[k] for k in range(D)]
    shape = tuple(len(a) for a in axes_c)
    acc = np.zeros(shape)
    for combo in np.ndindex(*(sub,) * D):
        axes = [axes_c[k] + offs[combo[k]] * h[k] for k in range(D)]
        full = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([f.ravel() for f in full], axis=1)
        acc += b.density(pts, D).reshape(shape)
    acc /= sub ** D
    vol = float(np.prod(h))
    lattice_total = acc.sum() * vol
    exact = b.total_charge(D)
    if lattice_total != 0 and exact != 0:
        acc *= exact / lattice_total
    out = np.zeros(grid.shape)
    src, dst = [], []
    for k in range(D):
        a0 = max(ilo[k], 0)
        a1 = min(ihi[k], grid.n[k])
        if a1 <= a0:
            return out
        src.append(slice(a0 - ilo[k], a1 - ilo[k]))
        dst.append(slice(a0, a1))
    out[tuple(dst)] = acc[tuple(src)]
    return out


def read_density_file(path) -> np.ndarray:
    """Plain-text array: a header line with the dimensions, then row-major values.

    Leading ``#`` comment lines are skipped.
    """
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        header = line.split()
        dims = tuple(int(v) for v in header)
        data = np.array(fh.read().split(), dtype=float)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: header dims {dims} do not match {data.size} values")
    return data.reshape(dims)


def write_array_file(path, arr: np.ndarray, comment: Optional[str] = None) -> None:
    arr = np.asarray(arr, float)
    with open(path, "w") as fh:
        if comment:
            fh.write("".join(f"# {c}\n" for c in comment.splitlines()))
        fh.write(" ".join(str(s) for s in arr.shape) + "\n")
        flat = arr.ravel()
        for i in range(0, flat.size, 8):
            fh.write(" ".join(repr(float(v)) for v in flat[i:i + 8]) + "\n")


# -- charges of bodies -------------------------------------------------------------


def total_charge(body, D: int, solution: Optional["FieldSolution"] = None) -> float:
    """Total charge of a body.

    Boundary-defined bodies have charge only through the field they imply,
    so Dirichlet bodies need a ``solution`` (flux through a surrounding box).
    """
    if body.kind in ("point", "sphere", "density-field"):
        return body.total_charge(D)
    if body.kind in ("boundary-neumann", "medium-inclusion"):
        return 0.0
    if solution is None:
        raise ValueError("the charge of a Dirichlet body follows from the field; pass a solution")
    from .forces import flux_through_box

    lo, hi = body.bounds()
    pad = 2.0 * max(solution.grid.h)
    return flux_through_box(solution, lo - pad, hi + pad) / (solution.law.alphaD * solution.law.G)


def effective_charge_density(solution: "FieldSolution", ambient: Optional[MediumLaw] = None) -> np.ndarray:
    """``(alpha_D G)^-1 div(mu_ambient grad phi)`` on every cell.

    Evaluated with the ambient law on every face, so bodies defined by
    boundary conditions or inclusions show up as equivalent charge layers.
    """
    ambient = ambient or solution.law
    if ambient.D != solution.grid.D:
        raise ValueError(f"law dimension {ambient.D} != solution dimension {solution.grid.D}")
    disc = solution.disc
    g = disc.face_gradients(solution.phi)
    mu = disc.mu_faces(g, law=ambient)
    flux = (disc.weights * mu) * g
    div = -(disc.Bt @ flux.ravel()) / disc.grid.cell_volume
    return (div / (ambient.alphaD * ambient.G)).reshape(disc.grid.shape)


def scale_configuration(solution: "FieldSolution", rho: np.ndarray, lam: float):
    """Scaled consistent pair ``phi_l(r) = l phi(r/l)``, ``rho_l(r) = rho(r/l)/l``.

    Returns ``(grid_l, phi_l, rho_l)`` on the grid stretched by ``lam``;
    charges scale as ``lam**(D-1)``.
    """
    if not lam > 0:
        raise ValueError("scale factor must be positive")
    return solution.grid.scaled(lam), lam * np.asarray(solution.phi), np.asarray(rho) / lam
