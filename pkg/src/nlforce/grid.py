"""Cell-centred grids, ghost layers and face-gradient operators.

Potentials live at cell centres.  Ghost layers close the grid; each ghost
value is either prescribed data evaluated at the ghost centre, a mirror
image of an interior value (even or odd), or an interior value shifted by a
prescribed normal derivative.

Face gradients combine the normal difference across the face with the
average of the centred tangential differences of the two adjacent cells.
That tangential stencil is wide, so next to data sides the faces of the
first ghost layer also enter the energy (this needs a second ghost layer).
The operator ``g = B @ phi + b`` is assembled once as a sparse matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

DATA = "data"
EVEN = "even"
ODD = "odd"
NEUMANN = "neumann"
SIDE_KINDS = (DATA, EVEN, ODD, NEUMANN)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on the box ``[lo, lo + n*h]``."""

    lo: tuple
    n: tuple
    h: tuple

    def __post_init__(self):
        if not (len(self.lo) == len(self.n) == len(self.h)):
            raise ValueError("lo, n and h must have the same length")
        if any(int(k) < 2 for k in self.n):
            raise ValueError("need at least 2 cells per axis")
        if any(not hh > 0 for hh in self.h):
            raise ValueError("grid spacing must be positive")

    @classmethod
    def from_box(cls, lo: Sequence[float], hi: Sequence[float], cells: Sequence[int]) -> "Grid":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        n = tuple(int(c) for c in cells)
        h = tuple((b - a) / c for a, b, c in zip(lo, hi, n))
        return cls(lo, n, h)

    @property
    def D(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return tuple(int(k) for k in self.n)

    @property
    def N(self) -> int:
        return int(np.prod(self.shape))

    @property
    def hi(self) -> tuple:
        return tuple(a + k * hh for a, k, hh in zip(self.lo, self.n, self.h))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_centers(self, k: int, ghost: bool = False) -> np.ndarray:
        if ghost:
            return self.lo[k] + (np.arange(self.n[k] + 2) - 0.5) * self.h[k]
        return self.lo[k] + (np.arange(self.n[k]) + 0.5) * self.h[k]

    def axis_faces(self, k: int) -> np.ndarray:
        return self.lo[k] + np.arange(self.n[k] + 1) * self.h[k]

    def mesh(self, ghost: bool = False) -> list:
        axes = [self.axis_centers(k, ghost) for k in range(self.D)]
        return np.meshgrid(*axes, indexing="ij", sparse=True)

    def points(self, ghost: bool = False) -> np.ndarray:
        axes = [self.axis_centers(k, ghost) for k in range(self.D)]
        full = np.meshgrid(*axes, indexing="ij")
        return np.stack([f.ravel() for f in full], axis=1)

    def scaled(self, lam: float) -> "Grid":
        return Grid(tuple(lam * v for v in self.lo), self.n, tuple(lam * v for v in self.h))

    def index_of(self, x: Sequence[float]) -> tuple:
        return tuple(int(np.clip(np.floor((xi - a) / hh), 0, k - 1))
                     for xi, a, hh, k in zip(x, self.lo, self.h, self.n))


def default_sides(D: int) -> tuple:
    return tuple((DATA, DATA) for _ in range(D))


class GhostMap:
    """Affine map from interior values to the padded (ghost-layer) array.

    ``padded = P @ phi + c`` with ``phi`` flattened in C order and
    ``layers`` ghost layers on every side.
    """

    def __init__(self, grid: Grid, sides: Sequence[Sequence[str]],
                 data_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 normal_fn: Optional[Callable[[np.ndarray, int, int], np.ndarray]] = None,
                 layers: int = 1):
        self.grid = grid
        self.layers = int(layers)
        self.sides = tuple(tuple(s) for s in sides)
        if len(self.sides) != grid.D:
            raise ValueError("one (low, high) side pair per axis required")
        for pair in self.sides:
            for s in pair:
                if s not in SIDE_KINDS:
                    raise ValueError(f"unknown side kind {s!r}")
        if self.layers > min(grid.n):
            raise ValueError("more ghost layers than cells")
        self.data_fn = data_fn
        self.normal_fn = normal_fn
        self.P, self.c = self._build()

    @property
    def padded_shape(self) -> tuple:
        return tuple(k + 2 * self.layers for k in self.grid.shape)

    def centers(self, k: int) -> np.ndarray:
        L = self.layers
        return self.grid.lo[k] + (np.arange(self.grid.n[k] + 2 * L) - L + 0.5) * self.grid.h[k]

    def _build(self):
        g = self.grid
        D = g.D
        L = self.layers
        idx_axes, sign_axes, data_axes, neu_axes = [], [], [], []
        for k in range(D):
            n = g.n[k]
            j = np.arange(n + 2 * L) - L          # interior index, ghosts outside [0, n)
            idx = np.clip(j, 0, n - 1)
            sign = np.ones(n + 2 * L)
            is_data = np.zeros(n + 2 * L, bool)
            neu = np.zeros(n + 2 * L)             # signed distance (in cells) of a slope ghost
            for side in (0, 1):
                kind = self.sides[k][side]
                ghost = j < 0 if side == 0 else j >= n
                if kind == DATA:
                    is_data[ghost] = True
                elif kind in (EVEN, ODD):
                    # mirror plane on the box face
                    idx[ghost] = (-1 - j[ghost]) if side == 0 else (2 * n - 1 - j[ghost])
                    if kind == ODD:
                        sign[ghost] = -1.0
                elif kind == NEUMANN:
                    neu[ghost] = (-j[ghost]) if side == 0 else (j[ghost] - n + 1)
                    neu[ghost] *= -1 if side == 0 else 1
            idx_axes.append(idx)
            sign_axes.append(sign)
            data_axes.append(is_data)
            neu_axes.append(neu)

        shape_p = self.padded_shape
        grids = np.meshgrid(*[np.arange(s) for s in shape_p], indexing="ij")
        data_mask = np.zeros(shape_p, bool)
        sign = np.ones(shape_p)
        flat_idx = np.zeros(shape_p, dtype=np.int64)
        for k in range(D):
            data_mask |= data_axes[k][grids[k]]
            sign = sign * sign_axes[k][grids[k]]
            flat_idx = flat_idx * g.n[k] + idx_axes[k][grids[k]]

        c = np.zeros(shape_p)
        if data_mask.any():
            if self.data_fn is None:
                raise ValueError("data sides present but no boundary data function")
            pts = np.stack([self.centers(k)[grids[k][data_mask]] for k in range(D)], axis=1)
            c[data_mask] = self.data_fn(pts)
        for k in range(D):
            mask = (neu_axes[k][grids[k]] != 0) & ~data_mask
            if mask.any():
                if self.normal_fn is None:
                    raise ValueError("neumann sides present but no normal-derivative function")
                dist = neu_axes[k][grids[k][mask]]
                side = np.sign(dist).astype(int)
                pts = np.stack([self.centers(kk)[grids[kk][mask]] for kk in range(D)], axis=1)
                # ghost = interior + distance * h * (outward normal derivative)
                c[mask] += np.abs(dist) * g.h[k] * self.normal_fn(pts, k, side)

        rows = np.flatnonzero(~data_mask.ravel())
        cols = flat_idx.ravel()[rows]
        vals = sign.ravel()[rows]
        P = sp.csr_matrix((vals, (rows, cols)), shape=(int(np.prod(shape_p)), g.N))
        return P, c.ravel()

    def pad(self, phi: np.ndarray) -> np.ndarray:
        return (self.P @ np.asarray(phi).ravel() + self.c).reshape(self.padded_shape)


def _d_normal(n: int, h: float, L: int = 1) -> sp.csr_matrix:
    # faces 0..n between padded cells f + L - 1 and f + L
    i = np.arange(n + 1)
    rows = np.concatenate([i, i])
    cols = np.concatenate([i + L - 1, i + L])
    vals = np.concatenate([-np.ones(n + 1), np.ones(n + 1)]) / h
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 2 * L))


def _avg(n: int, L: int = 1) -> sp.csr_matrix:
    i = np.arange(n + 1)
    return sp.csr_matrix((np.full(2 * (n + 1), 0.5), (np.concatenate([i, i]),
                                                      np.concatenate([i + L - 1, i + L]))),
                         shape=(n + 1, n + 2 * L))


def _sel(n: int, L: int = 1, e: int = 0) -> sp.csr_matrix:
    # cells -e..n-1+e (e = 1 adds the first ghost layer)
    j = np.arange(n + 2 * e)
    return sp.csr_matrix((np.ones(n + 2 * e), (j, j + L - e)), shape=(n + 2 * e, n + 2 * L))


def _d_center(n: int, h: float, L: int = 1, e: int = 0) -> sp.csr_matrix:
    j = np.arange(n + 2 * e)
    rows = np.concatenate([j, j])
    cols = np.concatenate([j + L - e - 1, j + L - e + 1])
    vals = np.concatenate([-np.ones(n + 2 * e), np.ones(n + 2 * e)]) / (2 * h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 2 * e, n + 2 * L))


def _kron_all(mats):
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


class FaceLayout:
    """Face families of a grid: counts, centres and normal axes.

    With ``extended`` every family also holds the faces of the first ghost
    layer along its tangential axes (needed by the wide tangential stencil
    next to data boundaries).
    """

    def __init__(self, grid: Grid, extended: bool = False):
        self.grid = grid
        self.extended = bool(extended)
        e = 1 if extended else 0
        D = grid.D
        self.family_shapes = []
        for d in range(D):
            s = [k + 2 * e for k in grid.shape]
            s[d] = grid.shape[d] + 1
            self.family_shapes.append(tuple(s))
        self.family_sizes = [int(np.prod(s)) for s in self.family_shapes]
        self.offsets = np.concatenate([[0], np.cumsum(self.family_sizes)]).astype(int)
        self.nf = int(self.offsets[-1])
        fam = np.empty(self.nf, dtype=np.int8)
        for d in range(D):
            fam[self.offsets[d]:self.offsets[d + 1]] = d
        self.family = fam

    def _tangential_axis(self, k: int) -> np.ndarray:
        g = self.grid
        if self.extended:
            return g.axis_centers(k, ghost=True)
        return g.axis_centers(k)

    def centers(self) -> np.ndarray:
        g = self.grid
        out = []
        for d in range(g.D):
            axes = [g.axis_faces(k) if k == d else self._tangential_axis(k) for k in range(g.D)]
            full = np.meshgrid(*axes, indexing="ij")
            out.append(np.stack([f.ravel() for f in full], axis=1))
        return np.concatenate(out, axis=0)

    def split(self, arr: np.ndarray) -> list:
        """Split a per-face array into family arrays of their natural shapes."""
        return [arr[self.offsets[d]:self.offsets[d + 1]].reshape(self.family_shapes[d] + arr.shape[1:])
                for d in range(self.grid.D)]


def face_operator_padded(grid: Grid, layers: int = 1, extended: bool = False) -> sp.csr_matrix:
    """Sparse map from the padded array to face gradients.

    Rows are component-major: row ``a * nf + f`` is component ``a`` of the
    gradient on global face ``f``.  ``extended`` (needs ``layers >= 2``)
    adds the ghost-layer faces of :class:`FaceLayout`.
    """
    D = grid.D
    n, h = grid.n, grid.h
    L = int(layers)
    e = 1 if extended else 0
    if extended and L < 2:
        raise ValueError("extended faces need two ghost layers")
    blocks = []
    for a in range(D):
        fam_blocks = []
        for d in range(D):
            mats = []
            for k in range(D):
                if k == d:
                    mats.append(_d_normal(n[k], h[k], L) if a == d else _avg(n[k], L))
                elif k == a:
                    mats.append(_d_center(n[k], h[k], L, e))
                else:
                    mats.append(_sel(n[k], L, e))
            fam_blocks.append(_kron_all(mats))
        blocks.append(sp.vstack(fam_blocks, format="csr"))
    return sp.vstack(blocks, format="csr")


def face_weights(grid: Grid, sides, extended: bool = False) -> np.ndarray:
    """Dual-volume quadrature weight of every face (cell volume / D).

    Faces lying on a mirror plane carry half weight.  Extended ghost-layer
    faces keep full weight beside data sides and zero weight elsewhere.
    """
    layout = FaceLayout(grid, extended)
    w = np.full(layout.nf, grid.cell_volume / grid.D)
    parts = layout.split(w)
    for d in range(grid.D):
        for k in range(grid.D):
            for side, pos in ((0, 0), (1, -1)):
                sl = [slice(None)] * grid.D
                sl[k] = pos
                if k == d:
                    if sides[k][side] in (EVEN, ODD):
                        parts[d][tuple(sl)] *= 0.5
                elif extended and sides[k][side] != DATA:
                    parts[d][tuple(sl)] = 0.0
    return np.concatenate([p.ravel() for p in parts])


def face_gradients_padded(phi_pad: np.ndarray, h: Sequence[float]) -> list:
    """Face gradients from a padded array by array slicing.

    Returns one array per family with shape ``family_shape + (D,)``; agrees
    with :func:`face_operator_padded` exactly.
    """
    D = phi_pad.ndim
    out = []
    for d in range(D):
        comps = []
        for a in range(D):
            if a == d:
                lo = [slice(0, -1) if k == d else slice(1, -1) for k in range(D)]
                hi = [slice(1, None) if k == d else slice(1, -1) for k in range(D)]
                comps.append((phi_pad[tuple(hi)] - phi_pad[tuple(lo)]) / h[d])
            else:
                def cs(shift_d, shift_a):
                    s = []
                    for k in range(D):
                        if k == d:
                            s.append(slice(shift_d, phi_pad.shape[k] - 1 + shift_d))
                        elif k == a:
                            s.append(slice(shift_a, phi_pad.shape[k] - 2 + shift_a))
                        else:
                            s.append(slice(1, -1))
                    return phi_pad[tuple(s)]
                ca = (cs(0, 2) - cs(0, 0) + cs(1, 2) - cs(1, 0)) / (4 * h[a])
                comps.append(ca)
        out.append(np.stack(comps, axis=-1))
    return out


def cell_gradient_padded(phi_pad: np.ndarray, h: Sequence[float]) -> np.ndarray:
    """Centred-difference gradient at cell centres, shape ``n + (D,)``."""
    D = phi_pad.ndim
    comps = []
    for a in range(D):
        hi = tuple(slice(2, None) if k == a else slice(1, -1) for k in range(D))
        lo = tuple(slice(0, -2) if k == a else slice(1, -1) for k in range(D))
        comps.append((phi_pad[hi] - phi_pad[lo]) / (2 * h[a]))
    return np.stack(comps, axis=-1)


def interpolate_cells(values: np.ndarray, grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of cell-centred data (clamped at the edge)."""
    from scipy.interpolate import RegularGridInterpolator

    axes = [grid.axis_centers(k) for k in range(grid.D)]
    interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=False, fill_value=None)
    return interp(pts)


def plane_face_gradients(phi_pad: np.ndarray, h: Sequence[float], k: int, i: int) -> np.ndarray:
    """Gradients on the faces of family ``k`` lying in plane ``i`` (0..n_k).

    Same stencil as :func:`face_operator_padded`; returns an array of shape
    ``(n_j for j != k) + (D,)``.
    """
    D = phi_pad.ndim

    def sl(kidx, a=None, shift=0):
        s = []
        for j in range(D):
            if j == k:
                s.append(kidx)
            elif j == a:
                s.append(slice(1 + shift, phi_pad.shape[j] - 1 + shift))
            else:
                s.append(slice(1, -1))
        return phi_pad[tuple(s)]

    comps = []
    for a in range(D):
        if a == k:
            comps.append((sl(i + 1) - sl(i)) / h[k])
        else:
            d0 = sl(i, a, 1) - sl(i, a, -1)
            d1 = sl(i + 1, a, 1) - sl(i + 1, a, -1)
            comps.append((d0 + d1) / (4 * h[a]))
    return np.stack(comps, axis=-1)


def unfold_cells(arr: np.ndarray, sides) -> np.ndarray:
    """Reflect a cell array across its mirror sides (odd sides flip the sign)."""
    out = np.asarray(arr)
    for k, pair in enumerate(sides):
        for side in (0, 1):
            kind = pair[side]
            if kind not in (EVEN, ODD):
                continue
            refl = (1.0 if kind == EVEN else -1.0) * np.flip(out, axis=k)
            out = np.concatenate([refl, out] if side == 0 else [out, refl], axis=k)
    return out
