"""Point-cloud ingestion, scaling into grid units, detrending and file export.

Text outputs use 17 significant digits so that doubles survive the round trip.
"""

import csv
import math
import re
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, NamedTuple, Tuple, Union

import numpy as np
from PIL import Image

from groundwork.errors import ArtifactError, CloudFormatError, ConfigError, NoGroundDataError
from groundwork.grid_model import MIN_POINTS, NZ_MIN, SlopeGrid, bin_points
from groundwork.interfaces import Payload

PathLike = Union[str, Path]

FLOAT_FMT = "%.17g"
SLOPES_HEADER = ["i", "j", "cx", "cy", "cz", "nx", "ny", "nz"]


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise CloudFormatError(f"expected an (n, 3) array of points, got shape {points.shape}")
        if not np.isfinite(points).all():
            raise CloudFormatError("point cloud holds non-finite coordinates")
        object.__setattr__(self, "points", points)

    @property
    def count(self) -> int:
        return len(self.points)

    def __len__(self):
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    def with_z(self, z) -> "PointCloud":
        return PointCloud(np.column_stack([self.x, self.y, z]))


@dataclass(frozen=True)
class GridTransform:
    """Maps survey coordinates onto a grid of unit cells anchored at ``origin``."""

    origin: Tuple[float, float]
    spacing: Tuple[float, float]
    dims: Tuple[int, int]

    def scale(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return (xy - np.asarray(self.origin)) / np.asarray(self.spacing)

    def unscale(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return uv * np.asarray(self.spacing) + np.asarray(self.origin)

    def to_fields(self) -> Dict:
        return dict(origin=list(self.origin), spacing=list(self.spacing), dims=list(self.dims))

    @classmethod
    def from_fields(cls, d: Dict) -> "GridTransform":
        return cls(tuple(map(float, d["origin"])), tuple(map(float, d["spacing"])), tuple(map(int, d["dims"])))


class ResidualStats(NamedTuple):
    count: int
    mean: float
    std: float
    rms: float


@contextmanager
def _writing(path: PathLike, mode="w"):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        f = open(path, mode, **({} if "b" in mode else dict(encoding="utf-8", newline="")))
    except OSError as e:
        raise ArtifactError(f"can not write {path}: {e}") from e
    with f:
        yield f


def _fmt(v: float) -> str:
    # adding 0.0 turns -0.0 into 0.0
    return FLOAT_FMT % (float(v) + 0.0)


def load_xyz(path: PathLike) -> PointCloud:
    """Read a whitespace separated ``x y z`` text file. ``#`` starts a comment line; extra columns are ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise CloudFormatError(f"can not read {path}: {e}") from e

    rows = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 3:
            raise CloudFormatError(f"expected at least 3 fields (x y z), found {len(fields)}", path, n)
        try:
            xyz = tuple(float(v) for v in fields[:3])
        except ValueError:
            raise CloudFormatError(f"malformed number in {line!r}", path, n) from None
        if not all(map(math.isfinite, xyz)):
            raise CloudFormatError(f"non-finite coordinate in {line!r}", path, n)
        rows.append(xyz)

    if not rows:
        raise NoGroundDataError(f"{path} holds no points")
    return PointCloud(np.array(rows))


def save_xyz(cloud: PointCloud, path: PathLike):
    with _writing(path) as f:
        np.savetxt(f, cloud.points, fmt=FLOAT_FMT, delimiter=" ")


def make_transform(cloud: PointCloud, spacing) -> GridTransform:
    """Anchor the grid at the cloud's minimum corner; ``N = ceil(extent / spacing)``, at least 1."""
    sx, sy = (spacing, spacing) if np.isscalar(spacing) else spacing
    if not (sx > 0 and sy > 0):
        raise ConfigError(f"grid spacing must be positive, got ({sx}, {sy})")
    if cloud.count == 0:
        raise NoGroundDataError("can not grid an empty cloud")

    lo = cloud.points[:, :2].min(axis=0)
    hi = cloud.points[:, :2].max(axis=0)
    # the slack absorbs ratios like 0.30000000000000004 / 0.1
    nx = max(1, math.ceil((hi[0] - lo[0]) / sx - 1e-9))
    ny = max(1, math.ceil((hi[1] - lo[1]) / sy - 1e-9))
    return GridTransform((float(lo[0]), float(lo[1])), (float(sx), float(sy)), (nx, ny))


def to_grid_coords(cloud: PointCloud, t: GridTransform) -> PointCloud:
    return PointCloud(np.column_stack([t.scale(cloud.points[:, :2]), cloud.z]))


def from_grid_coords(cloud: PointCloud, t: GridTransform) -> PointCloud:
    return PointCloud(np.column_stack([t.unscale(cloud.points[:, :2]), cloud.z]))


def detrend(cloud: PointCloud, surface) -> PointCloud:
    """Subtract the ground surface from a scaled cloud: ``z - g(x, y)``."""
    from groundwork.pu_surface import blend_eval

    return cloud.with_z(cloud.z - blend_eval(surface, cloud.x, cloud.y))


def residual_stats(cloud: PointCloud) -> ResidualStats:
    z = cloud.z
    if len(z) == 0:
        return ResidualStats(0, math.nan, math.nan, math.nan)
    return ResidualStats(len(z), float(z.mean()), float(z.std()), float(np.sqrt(np.mean(z**2))))


def roughness_grid(residuals: PointCloud, dims: Tuple[int, int], min_points: int = 2) -> np.ndarray:
    """Per-cell standard deviation of detrended heights, NaN where a cell has fewer than ``min_points``."""
    acc = bin_points(residuals, dims)
    with np.errstate(invalid="ignore", divide="ignore"):
        std = np.sqrt(acc.scatter[..., 2, 2] / acc.count)
    std[acc.count < min_points] = np.nan
    return std


def export_slopes_csv(grid: SlopeGrid, path: PathLike):
    """Write one ``i,j,cx,cy,cz,nx,ny,nz`` row per non-hole cell, after a ``#`` line with the grid dims."""
    nx, ny = grid.dims
    with _writing(path) as f:
        f.write(f"# nx={nx} ny={ny} level={grid.level} min_points={grid.min_points} nz_min={_fmt(grid.nz_min)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SLOPES_HEADER)
        for i, j in zip(*np.nonzero(grid.filled)):
            c, n = grid.centroids[i, j], grid.normals[i, j]
            writer.writerow([int(i), int(j), *map(_fmt, c), *map(_fmt, n)])


def load_slopes_csv(path: PathLike) -> SlopeGrid:
    path = Path(path)
    meta = dict(level=0, min_points=MIN_POINTS, nz_min=NZ_MIN)
    rows = []
    try:
        with open(path, encoding="utf-8", newline="") as f:
            for line in f:
                if line.startswith("#"):
                    meta.update(re.findall(r"(\w+)=(\S+)", line))
                    continue
                rows.append(line)
    except OSError as e:
        raise ArtifactError(f"can not read {path}: {e}") from e

    records = [r for r in csv.reader(rows) if r and r != SLOPES_HEADER]
    ij = np.array([[int(r[0]), int(r[1])] for r in records], dtype=int).reshape(-1, 2)
    values = np.array([[float(v) for v in r[2:8]] for r in records]).reshape(-1, 6)

    if "nx" in meta:
        dims = int(meta["nx"]), int(meta["ny"])
    elif len(ij):
        dims = tuple(ij.max(axis=0) + 1)
    else:
        raise ArtifactError(f"{path} holds no slopes and no grid dimensions")

    centroids = np.full(dims + (3,), np.nan)
    normals = np.full(dims + (3,), np.nan)
    centroids[ij[:, 0], ij[:, 1]] = values[:, :3]
    normals[ij[:, 0], ij[:, 1]] = values[:, 3:]
    return SlopeGrid(
        centroids, normals, level=int(meta["level"]), min_points=int(meta["min_points"]), nz_min=float(meta["nz_min"])
    )


def export_raster(samples: np.ndarray, path: PathLike):
    """Plain ``x y z`` rows, row-major."""
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    if len(samples) == 0:
        raise ValueError("nothing to export")
    with _writing(path) as f:
        np.savetxt(f, samples, fmt=FLOAT_FMT, delimiter=" ")


def export_obj_mesh(samples: np.ndarray, path: PathLike):
    """Wavefront OBJ: one vertex per sample of a (rows, cols, 3) raster, each quad split into two triangles."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or min(samples.shape[:2]) < 2:
        raise ValueError(f"expected a (rows, cols, 3) raster with at least 2x2 samples, got {samples.shape}")
    rows, cols = samples.shape[:2]

    # OBJ indices are 1-based
    vid = np.arange(rows * cols).reshape(rows, cols) + 1
    v0, v1 = vid[:-1, :-1], vid[:-1, 1:]
    v2, v3 = vid[1:, :-1], vid[1:, 1:]
    faces = np.stack([np.stack([v0, v1, v3], -1), np.stack([v0, v3, v2], -1)], axis=-2).reshape(-1, 3)

    with _writing(path) as f:
        f.write(f"# {rows * cols} vertices, {len(faces)} triangles\n")
        np.savetxt(f, samples.reshape(-1, 3), fmt="v " + " ".join([FLOAT_FMT] * 3))
        np.savetxt(f, faces, fmt="f %d %d %d")


def export_heightmap_png(samples: np.ndarray, path: PathLike):
    """8-bit grayscale height map of a (rows, cols, 3) raster, lowest sample black, highest white."""
    z = np.asarray(samples, dtype=float)[..., 2]
    lo, hi = np.nanmin(z), np.nanmax(z)
    scaled = (z - lo) / (hi - lo) if hi > lo else np.zeros_like(z)
    # raster rows run along +y; image rows run top-down
    image = Image.fromarray(np.flipud(np.round(scaled * 255)).astype(np.uint8))
    with _writing(path, "wb") as f:
        image.save(f, format="PNG")


def grid_fields(grid: SlopeGrid, prefix="") -> Dict:
    fields = dict(
        centroids=grid.centroids,
        normals=grid.normals,
        level=grid.level,
        min_points=grid.min_points,
        nz_min=grid.nz_min,
    )
    if grid.counts is not None:
        fields["counts"] = grid.counts
    return {prefix + k: v for k, v in fields.items()}


def grid_from_fields(d: Dict, prefix="") -> SlopeGrid:
    return SlopeGrid(
        d[prefix + "centroids"],
        d[prefix + "normals"],
        level=int(d[prefix + "level"]),
        min_points=int(d[prefix + "min_points"]),
        nz_min=float(d[prefix + "nz_min"]),
        counts=d.get(prefix + "counts"),
    )


def save_artifact(path: PathLike, **fields):
    """Write a msgpack stage artifact. Arrays go through :class:`~groundwork.interfaces.ZData`."""
    msg = Payload(**fields).serialize()
    with _writing(path, "wb") as f:
        f.write(msg)


def load_artifact(path: PathLike) -> Dict:
    path = Path(path)
    try:
        return Payload.deserialize(path.read_bytes())
    except FileNotFoundError:
        raise ArtifactError(f"missing artifact {path}, run the previous stage first") from None
    except Exception as e:
        raise ArtifactError(f"can not read artifact {path}: {e}") from e
