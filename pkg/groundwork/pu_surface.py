"""Partition-of-unity blending of a hole-free slope grid into one smooth ground surface.

Every cell contributes its plane, weighted by a 1D basis along each axis
centered on the cell center. The B-spline basis gives a C2 surface, the
exponential basis a C-infinity one with a sharper transition between cells.

Coordinates are in scaled grid units: cell ``(i, j)`` of a level-0 grid spans
``[i, i + 1) x [j, j + 1)``.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

from groundwork.errors import ConfigError, DomainError
from groundwork.grid_model import EDGE_TOL, Slope, SlopeGrid

EXP_CLAMP = 700.0
BASES = ("bspline", "exponential")


def _cardinal(t):
    """Cubic B-spline on unit knots centered at 0, with its first and second derivative."""
    t = np.asarray(t, dtype=float)
    r = np.abs(t)
    inner, outer = r < 1, (r >= 1) & (r < 2)
    q = 2 - r

    value = np.where(inner, (4 - 6 * t**2 + 3 * r**3) / 6, np.where(outer, q**3 / 6, 0.0))
    d1 = np.where(inner, -2 * t + 1.5 * t * r, np.where(outer, -np.sign(t) * q**2 / 2, 0.0))
    d2 = np.where(inner, -2 + 3 * r, np.where(outer, q, 0.0))
    return value, d1, d2


def _bspline(u, h=0.5):
    """Half, full, half combination of three B-splines on knots spaced ``h`` apart."""
    value = np.zeros_like(np.asarray(u, dtype=float))
    d1, d2 = value.copy(), value.copy()
    for shift, w in ((-h, 0.5), (0.0, 1.0), (h, 0.5)):
        v, dv, ddv = _cardinal((u - shift) / h)
        value = value + w * v
        d1 = d1 + w * dv / h
        d2 = d2 + w * ddv / h**2
    return value, d1, d2


def bspline_phi(i: int, x):
    """Basis ``i`` at ``x``, centered on the knot ``t_{2i} = i``. Returns value, first and second derivative."""
    return _bspline(np.asarray(x, dtype=float) - i)


def _exp_parts(x, s: float, a: float):
    x = np.asarray(x, dtype=float)
    r = np.abs(x) / a
    inside = (r > 0) & (r < 1)
    rr = np.where(inside, r, 0.5)

    # r near 0 or 1 overflows E; those entries are masked by the clamp
    with np.errstate(divide="ignore", over="ignore", under="ignore", invalid="ignore"):
        E = s * (1 / (1 - rr) - 1 / rr)
        value = np.where(r == 0, 1.0, np.where(inside, expit(-E), 0.0))
        value = np.where(inside & (E > EXP_CLAMP), 0.0, value)
        value = np.where(inside & (E < -EXP_CLAMP), 1.0, value)

        dE = s * (1 / (1 - rr) ** 2 + 1 / rr**2)
        live = inside & (np.abs(E) <= EXP_CLAMP)
        d1 = np.where(live, -value * (1 - value) * dE * np.sign(x) / a, 0.0)
    return value, d1


def exp_phi(x, s: float = 1.0, a: float = 1.0):
    """Compactly supported exponential bump: 1 at 0, 0 for ``|x| >= a``, 1/2 at ``a/2``."""
    return _exp_parts(x, s, a)[0]


def exp_dphi(x, s: float = 1.0, a: float = 1.0):
    return _exp_parts(x, s, a)[1]


class BSplinePU:
    name = "bspline"
    reach = 1
    partition = True

    def phi(self, u):
        return _bspline(u)[0]

    def dphi(self, u):
        return _bspline(u)[1]

    def __repr__(self):
        return "BSplinePU()"


class ExpPU:
    name = "exponential"

    def __init__(self, s: float = 1.0, a: float = 1.0):
        if not s > 0:
            raise ConfigError(f"exponential smoothing s must be positive, got {s}")
        if not a > 0.5:
            raise ConfigError(f"exponential support a must exceed half a cell, got {a}")
        self.s = s
        self.a = a
        # farthest neighbor whose center lies within ``a`` of some point of the cell
        self.reach = int(np.ceil(a + 0.5)) - 1
        # the raw weights sum to one only for a = 1; other supports are normalized in the blend
        self.partition = a == 1.0

    def phi(self, u):
        return exp_phi(u, self.s, self.a)

    def dphi(self, u):
        return exp_dphi(u, self.s, self.a)

    def __repr__(self):
        return f"ExpPU(s={self.s}, a={self.a})"


def local_plane_eval(slope: Slope, x, y) -> Tuple[np.ndarray, np.ndarray]:
    """Height of the slope plane at ``(x, y)`` and its constant gradient."""
    return slope.height(x, y), slope.gradient


# cubic pieces of the cardinal B-spline on [k, k + 1), in units of 1/6
_CARDINAL_PIECES = {
    -2: (8.0, 12.0, 6.0, 1.0),
    -1: (4.0, 0.0, -6.0, -3.0),
    0: (4.0, 0.0, -6.0, 3.0),
    1: (8.0, -12.0, 6.0, -1.0),
}


def _half_cell_pieces() -> np.ndarray:
    """Cubic coefficients of the three live B-spline weights on each half cell.

    Indexed ``[parity, k, power]``: on the half cell starting at ``i + parity / 2``,
    in the local variable ``t`` in ``[0, 1/2)``, the weight of cell ``i - 1 + k``.
    """
    pieces = np.zeros((2, 3, 4))
    for parity in (0, 1):
        for k in range(3):
            u0 = 0.5 * parity + 0.5 - k
            for shift, w in ((-0.5, 0.5), (0.0, 1.0), (0.5, 0.5)):
                # the cardinal argument (u - shift) / h runs over [start, start + 1)
                start = int(round(2 * (u0 - shift)))
                if start not in _CARDINAL_PIECES:
                    continue
                piece = Polynomial(np.array(_CARDINAL_PIECES[start]) / 6)(Polynomial([start, 2.0]))
                pieces[parity, k, : len(piece.coef)] += w * piece.coef
    return pieces


@dataclass(frozen=True, eq=False)
class GroundSurface:
    """The blended surface ``g(x, y)`` over a hole-free grid.

    .. code-block:: python

        surface = GroundSurface(filled, basis="bspline")
        z = surface(x, y)
        gx, gy = blend_gradient(surface, x, y)

    ``precomputed=True`` tabulates one bivariate polynomial per half cell for the
    B-spline basis; values agree with direct blending to rounding.
    """

    grid: SlopeGrid
    basis: str = "bspline"
    s: float = 1.0
    a: float = 1.0
    precomputed: bool = False
    pu: object = field(init=False, repr=False)
    planes: np.ndarray = field(init=False, repr=False)
    table: Optional[np.ndarray] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.basis == "exp":
            object.__setattr__(self, "basis", "exponential")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}, got {self.basis!r}")
        if not self.grid.is_full:
            raise ValueError(f"the grid still has {self.grid.hole_count} holes; fill them first")

        pu = BSplinePU() if self.basis == "bspline" else ExpPU(self.s, self.a)
        object.__setattr__(self, "pu", pu)
        object.__setattr__(self, "planes", self.grid.plane_coefficients())

        if self.precomputed:
            if self.basis != "bspline":
                raise ConfigError("precomputed tables exist for the B-spline basis only")
            object.__setattr__(self, "table", self._tabulate())

    @property
    def dims(self) -> Tuple[int, int]:
        return self.grid.dims

    @property
    def extent(self) -> Tuple[float, float]:
        nx, ny = self.dims
        cs = self.grid.cell_size
        return float(nx * cs), float(ny * cs)

    def __call__(self, x, y):
        return blend_eval(self, x, y)

    def _clamped_planes(self, half_x, half_y):
        """Planes of the 3 x 3 neighbors of every half cell, shape (2Nx, 2Ny, 3, 3, 3)."""
        nx, ny = self.dims
        ia = np.clip(half_x[:, None] // 2 - 1 + np.arange(3), 0, nx - 1)
        jb = np.clip(half_y[:, None] // 2 - 1 + np.arange(3), 0, ny - 1)
        return self.planes[ia[:, None, :, None], jb[None, :, None, :]]

    def _tabulate(self) -> np.ndarray:
        nx, ny = self.dims
        cs = self.grid.cell_size
        pieces = _half_cell_pieces()

        def axis_tables(n_half):
            h = np.arange(n_half)
            W = np.zeros((n_half, 3, 5))
            W[..., :4] = pieces[h % 2]
            # x = cs * (h / 2 + t)
            XW = np.zeros_like(W)
            XW[..., :4] += cs * (h / 2)[:, None, None] * pieces[h % 2]
            XW[..., 1:] += cs * pieces[h % 2]
            return W, XW

        U, XU = axis_tables(2 * nx)
        V, YV = axis_tables(2 * ny)
        planes = self._clamped_planes(np.arange(2 * nx), np.arange(2 * ny))
        a, b, d = planes[..., 0], planes[..., 1], planes[..., 2]
        return (
            np.einsum("pkm,qln,pqkl->pqmn", XU, V, a)
            + np.einsum("pkm,qln,pqkl->pqmn", U, YV, b)
            + np.einsum("pkm,qln,pqkl->pqmn", U, V, d)
        )


def _locate(surface: GroundSurface, x, y):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    cs = surface.grid.cell_size
    X, Y = x / cs, y / cs
    nx, ny = surface.dims

    outside = (X < -EDGE_TOL) | (X > nx + EDGE_TOL) | (Y < -EDGE_TOL) | (Y > ny + EDGE_TOL) | ~np.isfinite(X + Y)
    if outside.any():
        k = np.argmax(outside.reshape(-1))
        raise DomainError(
            f"({x.reshape(-1)[k]:.17g}, {y.reshape(-1)[k]:.17g}) lies outside the surface domain "
            f"[0, {nx * cs}] x [0, {ny * cs}]"
        )
    return x, y, X, Y


def _blend(surface: GroundSurface, x, y, gradient: bool):
    x, y, X, Y = _locate(surface, x, y)
    nx, ny = surface.dims
    cs = surface.grid.cell_size
    pu, r = surface.pu, surface.pu.reach

    i = np.clip(np.floor(X).astype(int), 0, nx - 1)
    j = np.clip(np.floor(Y).astype(int), 0, ny - 1)

    z = np.zeros(x.shape)
    gx, gy = np.zeros(x.shape), np.zeros(x.shape)
    w, wx, wy = np.zeros(x.shape), np.zeros(x.shape), np.zeros(x.shape)
    for da in range(-r, r + 1):
        alpha = i + da
        u = X - (alpha + 0.5)
        wa, dwa = pu.phi(u), pu.dphi(u) / cs
        alpha = np.clip(alpha, 0, nx - 1)
        for db in range(-r, r + 1):
            beta = j + db
            v = Y - (beta + 0.5)
            wb, dwb = pu.phi(v), pu.dphi(v) / cs
            plane = surface.planes[alpha, np.clip(beta, 0, ny - 1)]
            local = plane[..., 0] * x + plane[..., 1] * y + plane[..., 2]
            z += local * wa * wb
            if gradient:
                gx += plane[..., 0] * wa * wb + local * dwa * wb
                gy += plane[..., 1] * wa * wb + local * wa * dwb
            w += wa * wb
            wx += dwa * wb
            wy += wa * dwb

    if not pu.partition:
        # Shepard normalization by the summed weights
        if gradient:
            gx = (gx - z / w * wx) / w
            gy = (gy - z / w * wy) / w
        z = z / w

    if gradient:
        return np.stack([gx, gy], axis=-1)
    return z


def _from_table(surface: GroundSurface, x, y, gradient: bool):
    x, y, X, Y = _locate(surface, x, y)
    nx, ny = surface.dims
    hx = np.clip(np.floor(2 * X).astype(int), 0, 2 * nx - 1)
    hy = np.clip(np.floor(2 * Y).astype(int), 0, 2 * ny - 1)
    t, v = X - hx / 2, Y - hy / 2

    C = surface.table[hx, hy]
    powers = np.arange(5)
    T, V = t[..., None] ** powers, v[..., None] ** powers
    if not gradient:
        return np.einsum("...m,...mn,...n->...", T, C, V)

    cs = surface.grid.cell_size
    dT = np.zeros_like(T)
    dT[..., 1:] = powers[1:] * t[..., None] ** powers[:-1]
    dV = np.zeros_like(V)
    dV[..., 1:] = powers[1:] * v[..., None] ** powers[:-1]
    gx = np.einsum("...m,...mn,...n->...", dT, C, V) / cs
    gy = np.einsum("...m,...mn,...n->...", T, C, dV) / cs
    return np.stack([gx, gy], axis=-1)


def blend_eval(surface: GroundSurface, x, y):
    """Surface height at ``(x, y)``; scalars or broadcastable arrays.

    Raises :class:`DomainError` outside ``[0, Nx] x [0, Ny]``.
    """
    if surface.table is not None:
        return _from_table(surface, x, y, gradient=False)
    return _blend(surface, x, y, gradient=False)


def blend_gradient(surface: GroundSurface, x, y):
    """Analytic gradient of the surface, shape ``(..., 2)``."""
    if surface.table is not None:
        return _from_table(surface, x, y, gradient=True)
    return _blend(surface, x, y, gradient=True)


def sample_surface(surface: GroundSurface, nx_samples: int, ny_samples: int) -> np.ndarray:
    """Uniform (ny_samples, nx_samples, 3) raster of ``(x, y, z)`` over the closed domain, rows along y."""
    if nx_samples < 2 or ny_samples < 2:
        raise ValueError(f"need at least 2 samples per axis, got {nx_samples} x {ny_samples}")
    lx, ly = surface.extent
    x, y = np.meshgrid(np.linspace(0, lx, nx_samples), np.linspace(0, ly, ny_samples))
    return np.stack([x, y, blend_eval(surface, x, y)], axis=-1)
