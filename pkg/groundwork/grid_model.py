"""Local ground slopes on a regular grid.

A slope is the total least squares plane of the points falling in one grid
cell, stored as a centroid plus a unit normal pointing up. Cells without enough
points are holes. Holes are filled hierarchically: the grid is coarsened by
re-fitting planes to the corner vertices of the four children until a level has
no holes, then the coarse planes are projected back down into the empty fine
cells, with a 3x3 mean filter applied on the way.

All coordinates are in scaled grid units, so level-0 cells are unit squares
``[i, i + 1) x [j, j + 1)``. Coarser levels keep the level-0 frame: a level ``L``
cell spans ``[2^L i, 2^L (i + 1))``.
"""

from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from groundwork.errors import GridBoundsError, NoGroundDataError

MIN_POINTS = 4
NZ_MIN = 1e-3
EDGE_TOL = 1e-9
TIE_TOL = 1e-10

Footprint = Tuple[float, float, float, float]


def plane_height(centroid, normal, x, y):
    """Height of the plane through ``centroid`` with ``normal`` at ``(x, y)``. Broadcasts."""
    centroid = np.asarray(centroid, dtype=float)
    normal = np.asarray(normal, dtype=float)
    cx, cy, cz = centroid[..., 0], centroid[..., 1], centroid[..., 2]
    nx, ny, nz = normal[..., 0], normal[..., 1], normal[..., 2]
    return cz - (nx * (x - cx) + ny * (y - cy)) / nz


@dataclass(frozen=True, eq=False)
class Slope:
    centroid: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=float).reshape(3))
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=float).reshape(3))

    @property
    def gradient(self) -> np.ndarray:
        return -self.normal[:2] / self.normal[2]

    def height(self, x, y):
        return plane_height(self.centroid, self.normal, x, y)

    def __repr__(self):
        c, n = self.centroid, self.normal
        return f"Slope(centroid=({c[0]:.6g}, {c[1]:.6g}, {c[2]:.6g}), normal=({n[0]:.6g}, {n[1]:.6g}, {n[2]:.6g}))"


@dataclass(frozen=True, eq=False)
class CellAccumulator:
    """Count, coordinate sums and centered scatter of the points in one cell.

    The scatter is kept centered on the cell mean so that merging and the
    covariance do not suffer from cancellation on large coordinates.
    """

    count: int = 0
    sum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scatter: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    @classmethod
    def from_points(cls, points) -> "CellAccumulator":
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            return cls()
        d = points - points.mean(axis=0)
        return cls(len(points), points.sum(axis=0), d.T @ d)

    @property
    def mean(self) -> np.ndarray:
        return self.sum / max(self.count, 1)

    def covariance(self) -> np.ndarray:
        return self.scatter / max(self.count, 1)

    def merge(self, other: "CellAccumulator") -> "CellAccumulator":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        scatter = self.scatter + other.scatter + np.outer(delta, delta) * (self.count * other.count / n)
        return CellAccumulator(n, self.sum + other.sum, scatter)


@dataclass(frozen=True, eq=False)
class GridAccumulator:
    """Per-cell accumulators of a whole grid, stored as dense arrays."""

    count: np.ndarray
    sum: np.ndarray
    scatter: np.ndarray

    @property
    def dims(self) -> Tuple[int, int]:
        return self.count.shape

    def __getitem__(self, ij) -> CellAccumulator:
        return CellAccumulator(int(self.count[ij]), self.sum[ij].copy(), self.scatter[ij].copy())

    def merge(self, other: "GridAccumulator") -> "GridAccumulator":
        """Combine the accumulators of two disjoint batches of points."""
        na, nb = self.count.astype(float), other.count.astype(float)
        n = na + nb
        mean_a = self.sum / np.maximum(na, 1)[..., None]
        mean_b = other.sum / np.maximum(nb, 1)[..., None]
        delta = mean_b - mean_a
        weight = np.divide(na * nb, n, out=np.zeros_like(n), where=n > 0)
        scatter = self.scatter + other.scatter + delta[..., :, None] * delta[..., None, :] * weight[..., None, None]
        return GridAccumulator(self.count + other.count, self.sum + other.sum, scatter)


@dataclass(frozen=True, eq=False)
class SlopeGrid:
    """A grid of optional slopes. Holes carry NaN centroids and normals.

    Index as ``grid[i, j]`` to get a :class:`Slope` or ``None``.
    """

    centroids: np.ndarray
    normals: np.ndarray
    level: int = 0
    min_points: int = MIN_POINTS
    nz_min: float = NZ_MIN
    counts: Optional[np.ndarray] = None

    @property
    def dims(self) -> Tuple[int, int]:
        return self.centroids.shape[:2]

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1]

    @property
    def filled(self) -> np.ndarray:
        return ~np.isnan(self.centroids[..., 2])

    @property
    def holes(self) -> np.ndarray:
        return np.isnan(self.centroids[..., 2])

    @property
    def hole_count(self) -> int:
        return int(self.holes.sum())

    @property
    def is_full(self) -> bool:
        return self.hole_count == 0

    @property
    def cell_size(self) -> int:
        return 2**self.level

    def __getitem__(self, ij) -> Optional[Slope]:
        if np.isnan(self.centroids[ij][2]):
            return None
        return Slope(self.centroids[ij], self.normals[ij])

    def footprint(self, i: int, j: int) -> Footprint:
        s = self.cell_size
        return i * s, j * s, (i + 1) * s, (j + 1) * s

    def gradients(self) -> np.ndarray:
        """(Nx, Ny, 2) plane gradients ``(-nx/nz, -ny/nz)``."""
        return -self.normals[..., :2] / self.normals[..., 2:3]

    def plane_coefficients(self) -> np.ndarray:
        """(Nx, Ny, 3) coefficients ``(a, b, d)`` of ``z = a x + b y + d`` per cell."""
        g = self.gradients()
        c = self.centroids
        d = c[..., 2] - g[..., 0] * c[..., 0] - g[..., 1] * c[..., 1]
        return np.concatenate([g, d[..., None]], axis=-1)

    def with_slopes(self, centroids, normals) -> "SlopeGrid":
        return replace(self, centroids=centroids, normals=normals)


@dataclass(frozen=True, eq=False)
class SlopePyramid:
    levels: Tuple[SlopeGrid, ...]

    @property
    def top(self) -> SlopeGrid:
        return self.levels[-1]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level) -> SlopeGrid:
        return self.levels[level]

    def __iter__(self) -> Iterator[SlopeGrid]:
        return iter(self.levels)


class HoleClasses(NamedTuple):
    interior: np.ndarray
    """holes enclosed by data, filled by interpolation"""
    outskirts: np.ndarray
    """holes connected to the grid border, filled by extrapolation"""


def _as_points(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "points", cloud), dtype=float).reshape(-1, 3)


def bin_points(cloud, dims: Tuple[int, int]) -> GridAccumulator:
    """Accumulate scaled points into the cells ``(floor(u), floor(v))``.

    Points on the right or top edge of the grid are closed into the last cell.
    """
    points = _as_points(cloud)
    nx, ny = dims
    u, v = points[:, 0], points[:, 1]

    outside = (u < -EDGE_TOL) | (u > nx + EDGE_TOL) | (v < -EDGE_TOL) | (v > ny + EDGE_TOL)
    if outside.any():
        k = int(np.argmax(outside))
        raise GridBoundsError(f"point {k} at ({u[k]:.17g}, {v[k]:.17g}) lies outside the {nx}x{ny} grid")

    i = np.clip(np.floor(u).astype(np.int64), 0, nx - 1)
    j = np.clip(np.floor(v).astype(np.int64), 0, ny - 1)
    flat = i * ny + j
    size = nx * ny

    count = np.bincount(flat, minlength=size)
    sums = np.stack([np.bincount(flat, weights=points[:, k], minlength=size) for k in range(3)], axis=-1)

    # second pass on centered coordinates
    mean = sums / np.maximum(count, 1)[:, None]
    d = points - mean[flat]
    scatter = np.zeros((size, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            scatter[:, a, b] = scatter[:, b, a] = np.bincount(flat, weights=d[:, a] * d[:, b], minlength=size)

    return GridAccumulator(count.reshape(nx, ny), sums.reshape(nx, ny, 3), scatter.reshape(nx, ny, 3, 3))


def _fit_planes(count, sums, scatter, min_points: int, nz_min: float):
    """Vectorized total least squares over any leading shape.

    Returns centroids and normals, NaN where the fit is declined.
    """
    count = np.asarray(count)
    shape = count.shape
    centroids = np.full(shape + (3,), np.nan)
    normals = np.full(shape + (3,), np.nan)

    ok = count >= max(min_points, 3)
    if not ok.any():
        return centroids, normals

    n = count[ok].astype(float)
    mean = sums[ok] / n[:, None]
    w, V = np.linalg.eigh(scatter[ok] / n[:, None, None])
    normal = V[:, :, 0].copy()

    # a repeated smallest eigenvalue leaves the normal free inside the eigenspace,
    # so take the direction in it closest to the vertical.
    scale = np.maximum(w[:, 2], np.finfo(float).tiny)
    tied = np.flatnonzero(w[:, 1] - w[:, 0] <= TIE_TOL * scale)
    if len(tied):
        Vt = V[tied]
        proj = np.einsum("nik,nk->ni", Vt[:, :, :2], Vt[:, 2, :2])
        isotropic = w[tied, 2] - w[tied, 0] <= TIE_TOL * scale[tied]
        proj[isotropic] = (0.0, 0.0, 1.0)
        norm = np.linalg.norm(proj, axis=1)
        usable = norm > 1e-12
        normal[tied[usable]] = proj[usable] / norm[usable, None]

    normal *= np.where(normal[:, 2] < 0, -1.0, 1.0)[:, None]
    normal /= np.linalg.norm(normal, axis=1)[:, None]

    steep = normal[:, 2] < nz_min
    mean[steep] = np.nan
    normal[steep] = np.nan

    centroids[ok] = mean
    normals[ok] = normal
    return centroids, normals


def fit_plane_total_lsqr(acc: CellAccumulator, min_points: int = MIN_POINTS, nz_min: float = NZ_MIN) -> Optional[Slope]:
    """Fit the plane minimizing orthogonal distances, or ``None`` for a hole."""
    centroids, normals = _fit_planes(
        np.array([acc.count]), np.asarray(acc.sum, float)[None], np.asarray(acc.scatter, float)[None], min_points, nz_min
    )
    if np.isnan(centroids[0, 2]):
        return None
    return Slope(centroids[0], normals[0])


def fit_grid(cloud, dims: Tuple[int, int], min_points: int = MIN_POINTS, nz_min: float = NZ_MIN) -> SlopeGrid:
    """Level-0 slopes of a scaled cloud. Raises :class:`NoGroundDataError` when every cell is a hole."""
    acc = bin_points(cloud, dims)
    centroids, normals = _fit_planes(acc.count, acc.sum, acc.scatter, min_points, nz_min)
    grid = SlopeGrid(centroids, normals, level=0, min_points=min_points, nz_min=nz_min, counts=acc.count)
    if grid.hole_count == grid.size:
        raise NoGroundDataError(f"all {grid.size} cells hold fewer than {min_points} usable points")
    return grid


def slope_vertices(slope: Slope, footprint: Footprint) -> np.ndarray:
    """The four corners of ``footprint`` lifted onto the slope's plane, as a (4, 3) array.

    Corner order is ``(x0, y0), (x1, y0), (x0, y1), (x1, y1)``.
    """
    x0, y0, x1, y1 = footprint
    x = np.array([x0, x1, x0, x1], dtype=float)
    y = np.array([y0, y0, y1, y1], dtype=float)
    return np.stack([x, y, slope.height(x, y)], axis=-1)


def coarsen(grid: SlopeGrid) -> SlopeGrid:
    """Next coarser level: re-fit one plane to the vertices of the (up to four) child slopes."""
    nx, ny = grid.dims
    mx, my = -(-nx // 2), -(-ny // 2)
    s = grid.cell_size

    centroids = np.full((2 * mx, 2 * my, 3), np.nan)
    normals = np.full((2 * mx, 2 * my, 3), np.nan)
    centroids[:nx, :ny] = grid.centroids
    normals[:nx, :ny] = grid.normals

    x0 = (np.arange(2 * mx) * s)[:, None, None]
    y0 = (np.arange(2 * my) * s)[None, :, None]
    cx = np.broadcast_to(x0 + np.array([0, s, 0, s]), (2 * mx, 2 * my, 4))
    cy = np.broadcast_to(y0 + np.array([0, 0, s, s]), (2 * mx, 2 * my, 4))
    cz = plane_height(centroids[:, :, None, :], normals[:, :, None, :], cx, cy)

    vertices = np.stack([cx, cy, cz], axis=-1)
    vertices = vertices.reshape(mx, 2, my, 2, 4, 3).transpose(0, 2, 1, 3, 4, 5).reshape(mx, my, 16, 3)
    valid = ~np.isnan(vertices[..., 2])

    count = valid.sum(axis=-1)
    sums = np.where(valid[..., None], vertices, 0.0).sum(axis=-2)
    mean = sums / np.maximum(count, 1)[..., None]
    d = np.where(valid[..., None], vertices - mean[..., None, :], 0.0)
    scatter = np.einsum("xyka,xykb->xyab", d, d)

    coarse_c, coarse_n = _fit_planes(count, sums, scatter, 3, grid.nz_min)

    # a re-fit steeper than nz_min falls back to the mean of the child slopes
    fallback = (count > 0) & np.isnan(coarse_c[..., 2])
    if fallback.any():
        kids_c = centroids.reshape(mx, 2, my, 2, 3).transpose(0, 2, 1, 3, 4).reshape(mx, my, 4, 3)
        kids_n = normals.reshape(mx, 2, my, 2, 3).transpose(0, 2, 1, 3, 4).reshape(mx, my, 4, 3)
        mean_n = np.nanmean(kids_n[fallback], axis=1)
        coarse_c[fallback] = np.nanmean(kids_c[fallback], axis=1)
        coarse_n[fallback] = mean_n / np.linalg.norm(mean_n, axis=-1, keepdims=True)

    return SlopeGrid(coarse_c, coarse_n, level=grid.level + 1, min_points=grid.min_points, nz_min=grid.nz_min)


def build_pyramid(grid: SlopeGrid) -> SlopePyramid:
    """Coarsen until the first level without holes."""
    if grid.hole_count == grid.size:
        raise NoGroundDataError("can not build a pyramid over a grid of holes")
    levels = [grid]
    while not levels[-1].is_full:
        levels.append(coarsen(levels[-1]))
    return SlopePyramid(tuple(levels))


def kernel_smooth(grid: SlopeGrid) -> SlopeGrid:
    """3x3 mean filter over the non-hole neighbors of each non-hole cell.

    Centroids are averaged componentwise, normals are averaged then renormalized.
    Holes stay holes.
    """
    filled = grid.filled
    kernel = np.ones((3, 3))
    weight = ndimage.correlate(filled.astype(float), kernel, mode="constant", cval=0.0)

    def window_sum(values):
        values = np.where(filled[..., None], values, 0.0)
        return np.stack(
            [ndimage.correlate(values[..., k], kernel, mode="constant", cval=0.0) for k in range(3)], axis=-1
        )

    with np.errstate(invalid="ignore", divide="ignore"):
        centroids = window_sum(grid.centroids) / weight[..., None]
        normals = window_sum(grid.normals)
        normals /= np.linalg.norm(normals, axis=-1, keepdims=True)

    centroids[~filled] = np.nan
    normals[~filled] = np.nan
    return grid.with_slopes(centroids, normals)


def project_holes(coarse: SlopeGrid, fine: SlopeGrid) -> SlopeGrid:
    """Fill the holes of ``fine`` from the planes of its parent cells in ``coarse``.

    The synthesized slope sits at the hole's cell center, on the parent plane,
    with the parent normal. Non-hole cells are left untouched.
    """
    if coarse.level != fine.level + 1:
        raise ValueError(f"level {coarse.level} is not the parent of level {fine.level}")

    i, j = np.nonzero(fine.holes)
    parent_c = coarse.centroids[i // 2, j // 2]
    parent_n = coarse.normals[i // 2, j // 2]
    if np.isnan(parent_c).any():
        raise ValueError(f"level {coarse.level} has holes over the holes of level {fine.level}")

    s = fine.cell_size
    x, y = (i + 0.5) * s, (j + 0.5) * s
    centroids = fine.centroids.copy()
    normals = fine.normals.copy()
    centroids[i, j] = np.stack([x, y, plane_height(parent_c, parent_n, x, y)], axis=-1)
    normals[i, j] = parent_n
    return fine.with_slopes(centroids, normals)


def fill_holes_hierarchical(pyramid: Union[SlopePyramid, Sequence[SlopeGrid]]) -> SlopeGrid:
    """Hole-free level-0 grid: smooth the top, then project and smooth down to level 0."""
    levels = list(pyramid)
    current = kernel_smooth(levels[-1])
    for fine in reversed(levels[:-1]):
        current = kernel_smooth(project_holes(current, fine))
    return current


def classify_holes(grid: SlopeGrid) -> HoleClasses:
    """Split holes into interior holes and outskirts reaching the grid border (4-connected)."""
    holes = grid.holes
    labels, _ = ndimage.label(holes)
    edge = np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
    outskirts = np.isin(labels, edge[edge > 0])
    return HoleClasses(interior=holes & ~outskirts, outskirts=outskirts)
