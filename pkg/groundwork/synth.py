"""Synthetic ground clouds with a known analytic surface.

``synth_terrain`` is a river-bar stand-in: a tilted base plane carrying a few
broad Gaussian bumps, sampled inside an elliptic bar outline with circular
holes punched out. ``synth_plane`` samples one exact plane with whole grid
cells left empty.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from groundwork.cloud_io import PointCloud

Circle = Tuple[float, float, float]
"""(cx, cy, radius)"""

EXTENT = (30.0, 10.0)
BASE = (0.05, 0.02, 1.0)
BUMPS = (
    # cx, cy, height, sigma
    (9.0, 4.0, 0.4, 3.0),
    (20.0, 6.0, -0.3, 3.5),
    (25.0, 3.0, 0.25, 2.5),
)
HOLES = ((8.0, 5.0, 1.6), (20.0, 4.5, 2.0))


@dataclass(frozen=True)
class Terrain:
    extent: Tuple[float, float] = EXTENT
    base: Tuple[float, float, float] = BASE
    """coefficients (a, b, d) of the tilt ``a x + b y + d``"""
    bumps: Tuple[Tuple[float, float, float, float], ...] = BUMPS
    holes: Tuple[Circle, ...] = HOLES
    outline: bool = True
    """keep points inside the ellipse inscribed in the extent only"""

    def height(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        a, b, d = self.base
        z = a * x + b * y + d
        for cx, cy, h, sigma in self.bumps:
            z = z + h * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma**2))
        return z

    @property
    def range(self) -> float:
        """Height range over the extent."""
        lx, ly = self.extent
        x, y = np.meshgrid(np.linspace(0, lx, 301), np.linspace(0, ly, 101))
        z = self.height(x, y)
        return float(z.max() - z.min())

    def in_holes(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        mask = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for cx, cy, r in self.holes:
            mask |= (x - cx) ** 2 + (y - cy) ** 2 < r**2
        return mask

    def in_outline(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if not self.outline:
            return np.ones(np.broadcast(x, y).shape, dtype=bool)
        lx, ly = self.extent
        return ((x - lx / 2) / (lx / 2)) ** 2 + ((y - ly / 2) / (ly / 2)) ** 2 <= 1


def synth_terrain(
    n_points: int = 15_666,
    seed: int = 0,
    noise: float = 0.0,
    holes: Optional[Sequence[Circle]] = HOLES,
    outline: bool = True,
) -> Tuple[PointCloud, Terrain]:
    """Sample the bar terrain. Returns the cloud and its analytic ground truth.

    Points are uniform over the kept region; ``noise`` is the standard deviation
    of Gaussian height noise.
    """
    terrain = Terrain(holes=tuple(map(tuple, holes or ())), outline=outline)
    rng = np.random.default_rng(seed)
    lx, ly = terrain.extent

    kept = []
    count = 0
    while count < n_points:
        xy = rng.random((max(2 * n_points, 1024), 2)) * (lx, ly)
        keep = terrain.in_outline(xy[:, 0], xy[:, 1]) & ~terrain.in_holes(xy[:, 0], xy[:, 1])
        kept.append(xy[keep])
        count += int(keep.sum())
    xy = np.concatenate(kept)[:n_points]

    z = terrain.height(xy[:, 0], xy[:, 1])
    if noise > 0:
        z = z + rng.normal(0.0, noise, len(z))
    return PointCloud(np.column_stack([xy, z])), terrain


def synth_plane(
    n_points: int = 100_000,
    extent: Tuple[float, float] = (50.0, 50.0),
    coeffs: Tuple[float, float, float] = (0.2, 0.1, 3.0),
    empty_fraction: float = 0.25,
    spacing: float = 1.0,
    seed: int = 0,
) -> PointCloud:
    """Points exactly on ``z = a x + b y + d`` spread evenly over the cells that are not emptied.

    The first two points sit on the extent corners so that a grid of the same
    spacing lines up with the emptied cells.
    """
    rng = np.random.default_rng(seed)
    nx, ny = int(round(extent[0] / spacing)), int(round(extent[1] / spacing))
    n_cells = nx * ny
    n_empty = int(round(empty_fraction * n_cells))
    cells = np.sort(rng.permutation(n_cells)[n_empty:])
    if len(cells) == 0:
        raise ValueError("every cell was emptied")

    which = cells[np.arange(n_points) % len(cells)]
    i, j = np.divmod(which, ny)
    offset = rng.random((n_points, 2))
    xy = (np.column_stack([i, j]) + offset) * spacing
    xy[:2] = [[0.0, 0.0], [nx * spacing, ny * spacing]]

    a, b, d = coeffs
    z = a * xy[:, 0] + b * xy[:, 1] + d
    return PointCloud(np.column_stack([xy, z]))
