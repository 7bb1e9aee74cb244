"""
End-to-end reconstructions on synthetic clouds with a known ground surface.
"""
import itertools

import numpy as np
import pytest

from groundwork.cli import PipelineConfig, cmd_run, entry_point, load_surface
from groundwork.cloud_io import PointCloud, load_slopes_csv, load_xyz, save_xyz, to_grid_coords
from groundwork.grid_model import classify_holes
from groundwork.pu_surface import blend_eval
from groundwork.synth import synth_plane, synth_terrain

PLANE = (0.2, 0.1, 3.0)
COMBOS = list(itertools.product(("hierarchy", "hrbf"), ("bspline", "exponential")))


@pytest.fixture(scope="module")
def plane_cloud(tmp_path_factory):
    path = tmp_path_factory.mktemp("plane") / "plane.xyz"
    save_xyz(synth_plane(n_points=100_000, extent=(20.0, 20.0), coeffs=PLANE, empty_fraction=0.25), path)
    return path


@pytest.mark.parametrize("method, basis, precomputed", [(m, b, False) for m, b in COMBOS] + [("hrbf", "bspline", True)])
def test_plane_reproduction(plane_cloud, tmp_path, method, basis, precomputed):
    cfg = PipelineConfig(
        input=str(plane_cloud),
        out=str(tmp_path),
        method=method,
        poly_degree=1,
        basis=basis,
        precomputed=precomputed,
        samples=200,
        detrend=False,
        verbose=0,
    )
    summary = cmd_run(cfg)
    assert summary["fit"]["holes"] > 0, "emptied cells are holes"

    raster = load_xyz(tmp_path / "surface.xyz")
    assert raster.count == 200 * 200, "200 x 200 samples"
    a, b, d = PLANE
    err = np.abs(raster.z - (a * raster.x + b * raster.y + d))
    assert err.max() <= 1e-5, f"{method} + {basis} rebuilds the plane, max error {err.max():.2e}"


@pytest.fixture(scope="module")
def bar(tmp_path_factory):
    out = tmp_path_factory.mktemp("terrain")
    cloud, terrain = synth_terrain(seed=0)
    save_xyz(cloud, out / "bar.xyz")
    return out, terrain


def hole_samples(terrain, step=0.1):
    x, y = np.meshgrid(np.arange(0, 30, step), np.arange(0, 10, step))
    x, y = x.ravel(), y.ravel()
    inside = terrain.in_holes(x, y)
    return x[inside], y[inside]


@pytest.mark.parametrize("method", ["hierarchy", "hrbf"])
def test_terrain_holes(bar, method):
    out, terrain = bar
    cfg = PipelineConfig(input=str(out / "bar.xyz"), out=str(out / method), method=method, samples=100, verbose=0)
    cmd_run(cfg)

    surface, t = load_surface(out / method / "surface.msgpack")
    x, y = hole_samples(terrain)
    scaled = to_grid_coords(PointCloud(np.column_stack([x, y, np.zeros_like(x)])), t)
    g = blend_eval(surface, scaled.x, scaled.y)
    rms = np.sqrt(np.mean((g - terrain.height(x, y)) ** 2))
    assert rms <= 0.05 * terrain.range, f"{method} hole RMS {rms:.4f} against range {terrain.range:.3f}"


def test_method_agreement(bar):
    out, terrain = bar
    if not all((out / m / "surface.msgpack").exists() for m in ("hierarchy", "hrbf")):
        pytest.skip("needs both terrain reconstructions")

    x, y = hole_samples(terrain)
    heights = {}
    for method in ("hierarchy", "hrbf"):
        surface, t = load_surface(out / method / "surface.msgpack")
        scaled = to_grid_coords(PointCloud(np.column_stack([x, y, np.zeros_like(x)])), t)
        heights[method] = blend_eval(surface, scaled.x, scaled.y)

    diff = heights["hierarchy"] - heights["hrbf"]
    print(f"hole agreement: max |diff| {np.abs(diff).max():.4f}, rms {np.sqrt(np.mean(diff**2)):.4f}")
    assert np.isfinite(diff).all(), "both surfaces are defined over the holes"

    # extrapolation wings: the outskirt cells of the fitted grid
    wings = classify_holes(load_slopes_csv(out / "hrbf" / "slopes.csv")).outskirts
    i, j = np.nonzero(wings)
    assert len(i) > 0, "the bar outline leaves outskirts"
    wing = {}
    for method in ("hierarchy", "hrbf"):
        surface, _ = load_surface(out / method / "surface.msgpack")
        cs = surface.grid.cell_size
        wing[method] = blend_eval(surface, (i + 0.5) * cs, (j + 0.5) * cs)

    diff = wing["hierarchy"] - wing["hrbf"]
    print(f"outskirt agreement: max |diff| {np.abs(diff).max():.4f}, rms {np.sqrt(np.mean(diff**2)):.4f}")
    assert np.isfinite(diff).all(), "both surfaces extrapolate over the outskirts"


@pytest.mark.parametrize("method, basis", COMBOS)
def test_cli_smoke(tmp_path, method, basis):
    assert entry_point(["synth", "--out", str(tmp_path), "--verbose", "0"]) == 0, "synth exits 0"
    cloud = str(tmp_path / "synth.xyz")
    for run in ("first", "second"):
        args = ["run", "--input", cloud, "--out", str(tmp_path / run), "--method", method, "--basis", basis]
        assert entry_point(args + ["--samples", "50", "--verbose", "0"]) == 0, f"run {run} exits 0"

    for name in ("slopes.csv", "filled.csv"):
        first = (tmp_path / "first" / name).read_bytes()
        assert first == (tmp_path / "second" / name).read_bytes(), f"{name} is byte-identical"
    for name in ("surface.xyz", "surface.obj", "surface.png", "residuals.xyz"):
        assert (tmp_path / "first" / name).exists(), f"{name} is written"
