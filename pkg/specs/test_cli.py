"""
The four pipeline stages, their artifacts, the config object and the command line.
"""
import json

import numpy as np
import pytest

from groundwork.cli import (
    PipelineConfig,
    cmd_detrend,
    cmd_fill,
    cmd_fit,
    cmd_run,
    cmd_surface,
    cmd_synth,
    entry_point,
    load_surface,
)
from groundwork.cloud_io import PointCloud, load_artifact, load_slopes_csv, load_xyz, save_xyz, to_grid_coords
from groundwork.errors import ConfigError
from groundwork.pu_surface import blend_eval
from groundwork.synth import synth_plane


@pytest.fixture(scope="module")
def bar(tmp_path_factory):
    out = tmp_path_factory.mktemp("bar")
    return PipelineConfig(input=str(out / "bar.xyz"), out=str(out), samples=60, verbose=0)


@pytest.mark.dependency()
def test_synth(bar):
    summary = cmd_synth(bar, n_points=6000, seed=1)
    assert summary["points"] == 6000, "the requested number of points"
    assert load_xyz(bar.input).count == 6000, "written to the input path"


@pytest.mark.dependency(depends=["test_synth"])
def test_fit(bar):
    summary = cmd_fit(bar)
    assert summary["dims"] == [30, 10], "a 30 x 10 grid at unit spacing"
    assert summary["holes"] > 0, "the bar outline and the punched holes leave holes"
    assert summary["interior_holes"] + summary["outskirt_holes"] == summary["holes"], "every hole is classified"

    grid = load_slopes_csv(bar.out_dir() / "slopes.csv")
    assert grid.hole_count == summary["holes"], "the CSV carries the holes"
    assert (bar.out_dir() / "config.json").exists(), "the effective config is written"


@pytest.mark.dependency(depends=["test_fit"])
def test_fill(bar):
    summary = cmd_fill(bar)
    assert summary["depth"] >= 2, "the pyramid needs a coarser level"
    filled = load_slopes_csv(bar.out_dir() / "filled.csv")
    assert filled.is_full, "no holes after filling"


@pytest.mark.dependency(depends=["test_fill"])
def test_surface(bar):
    summary = cmd_surface(bar)
    samples = load_xyz(bar.out_dir() / "surface.xyz")
    assert samples.count == 60 * 60, "samples x samples raster"
    assert np.isfinite(samples.points).all(), "finite heights"
    assert summary["z_min"] > 0.3 and summary["z_max"] < 3.5, "heights stay near the terrain"

    d = load_artifact(bar.out_dir() / "surface.msgpack")
    assert d["basis"] == "bspline", "the basis is recorded"


@pytest.mark.dependency(depends=["test_surface"])
def test_detrend(bar):
    summary = cmd_detrend(bar)
    assert summary["count"] == 6000, "one residual per input point"
    assert summary["std"] < 0.1, "the surface follows the terrain"
    residuals = load_xyz(bar.out_dir() / "residuals.xyz")
    cloud = load_xyz(bar.input)
    assert np.allclose(residuals.points[:, :2], cloud.points[:, :2]), "x and y are kept"


@pytest.mark.dependency(depends=["test_surface"])
def test_detrend_noise_std(bar, tmp_path):
    surface, t = load_surface(bar.out_dir() / "surface.msgpack")
    rng = np.random.default_rng(2)
    xy = np.array(t.origin) + rng.random((20_000, 2)) * np.array(t.dims) * np.array(t.spacing)
    z = blend_eval(surface, *to_grid_coords(PointCloud(np.column_stack([xy, np.zeros(len(xy))])), t).points[:, :2].T)
    save_xyz(PointCloud(np.column_stack([xy, z + rng.normal(0, 0.01, len(z))])), tmp_path / "noisy.xyz")

    cfg = PipelineConfig(input=str(tmp_path / "noisy.xyz"), out=str(bar.out_dir()), verbose=0)
    summary = cmd_detrend(cfg)
    assert 0.008 <= summary["std"] <= 0.012, "the residual std is the noise level"


def test_empty_input(tmp_path, capsys):
    (tmp_path / "empty.xyz").write_text("")
    code = entry_point(["fit", "--input", str(tmp_path / "empty.xyz"), "--out", str(tmp_path), "--verbose", "0"])
    assert code == 1, "nonzero exit"
    assert "no ground data" in capsys.readouterr().err, "names the problem"


def test_missing_artifact(tmp_path, capsys):
    code = entry_point(["surface", "--out", str(tmp_path), "--verbose", "0"])
    assert code == 1, "nonzero exit"
    err = capsys.readouterr().err
    assert err.startswith("groundwork surface:") and "missing" in err, "the stage and the missing file"


def test_bad_arguments(tmp_path, capsys):
    assert entry_point(["fit", "--spacing", "1", "2", "3", "--out", str(tmp_path)]) == 1, "three spacings"
    assert "groundwork config" in capsys.readouterr().err, "reported as a config error"
    assert entry_point(["fit", "--out", str(tmp_path), "--verbose", "0"]) == 1, "no input"


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(spacing=0.0)
    with pytest.raises(ConfigError):
        PipelineConfig(method="kriging")
    with pytest.raises(ConfigError):
        PipelineConfig(samples=1)
    with pytest.raises(ConfigError):
        PipelineConfig(min_points=2)
    assert PipelineConfig(basis="exp").basis == "exponential", "short alias for the exponential basis"
    assert PipelineConfig(spacing=2.0).spacing_xy() == (2.0, 2.0), "y spacing defaults to x"
    assert PipelineConfig(samples=50, samples_y=20).samples_xy() == (50, 20), "separate raster sizes"
    with pytest.raises(ConfigError):
        PipelineConfig(basis="exponential", a=0.5)


def test_config_overrides_reach_the_stages(tmp_path):
    save_xyz(synth_plane(n_points=4000, extent=(8.0, 6.0), empty_fraction=0.0), tmp_path / "plane.xyz")
    cfg = PipelineConfig(input=str(tmp_path / "plane.xyz"), out=str(tmp_path / "run"), spacing=2.0, samples=7, verbose=0)
    assert cfg.out_dir() == tmp_path / "run", "the output directory follows out"
    assert cfg.spacing_xy() == (2.0, 2.0), "the spacing follows the keyword"

    assert cmd_fit(cfg)["dims"] == [4, 3], "an 8 x 6 extent at spacing 2"
    assert (tmp_path / "run" / "slopes.csv").exists(), "written under out"
    cmd_fill(cfg)
    cmd_surface(cfg)
    assert load_xyz(tmp_path / "run" / "surface.xyz").count == 49, "a 7 x 7 raster"


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(out=str(tmp_path), method="hrbf", basis="exponential", a=1.5, spacing_y=0.5, verbose=0)
    path = cfg.save()
    assert path == tmp_path / "config.json", "saved next to the outputs"

    again = PipelineConfig.load(path)
    assert again.to_dict() == cfg.to_dict(), "reloads to the same settings"
    assert PipelineConfig.load(path, c=0.2).c == 0.2, "overrides win over the file"

    values = json.loads(path.read_text())
    values["colour"] = "red"
    path.write_text(json.dumps(values))
    with pytest.raises(ConfigError, match="colour"):
        PipelineConfig.load(path)


def test_config_file_on_the_command_line(tmp_path):
    save_xyz(synth_plane(n_points=4000, extent=(8.0, 6.0), empty_fraction=0.0), tmp_path / "plane.xyz")
    PipelineConfig(input=str(tmp_path / "plane.xyz"), out=str(tmp_path), samples=20, verbose=0).save()
    code = entry_point(["fit", "--config", str(tmp_path / "config.json"), "--spacing", "2"])
    assert code == 0, "fit runs from the saved config"
    assert load_slopes_csv(tmp_path / "slopes.csv").dims == (4, 3), "the flag overrides the file"


def test_methods_agree_on_a_plane(tmp_path):
    save_xyz(synth_plane(n_points=20_000, extent=(12.0, 10.0), empty_fraction=0.2, seed=3), tmp_path / "plane.xyz")
    heights = {}
    for method in ("hierarchy", "hrbf"):
        cfg = PipelineConfig(
            input=str(tmp_path / "plane.xyz"),
            out=str(tmp_path / method),
            method=method,
            poly_degree=1,
            samples=40,
            detrend=False,
            verbose=0,
        )
        cmd_run(cfg)
        heights[method] = load_xyz(tmp_path / method / "surface.xyz").z
    assert np.allclose(heights["hierarchy"], heights["hrbf"], atol=1e-6), "both fills rebuild the plane"


def test_deterministic_csv(tmp_path):
    assert entry_point(["synth", "--out", str(tmp_path), "--n-points", "4000", "--verbose", "0"]) == 0
    cloud = str(tmp_path / "synth.xyz")
    for run in ("a", "b"):
        args = ["run", "--input", cloud, "--out", str(tmp_path / run), "--samples", "30", "--no-detrend"]
        assert entry_point(args + ["--verbose", "0"]) == 0, "run exits 0"
    for name in ("slopes.csv", "filled.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes(), f"{name} is byte-identical across runs"
