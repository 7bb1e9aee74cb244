import argparse
import json
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
from params_proto import Flag, PrefixProto, Proto

from groundwork.cloud_io import (
    GridTransform,
    detrend,
    export_heightmap_png,
    export_obj_mesh,
    export_raster,
    export_slopes_csv,
    from_grid_coords,
    grid_fields,
    grid_from_fields,
    load_artifact,
    load_xyz,
    make_transform,
    residual_stats,
    roughness_grid,
    save_artifact,
    save_xyz,
    to_grid_coords,
)
from groundwork.errors import ConfigError, GroundworkError, IllConditionedWarning, StageError
from groundwork.grid_model import build_pyramid, classify_holes, fill_holes_hierarchical, fit_grid, kernel_smooth
from groundwork.hrbf import HRBFConfig, fill_holes_hrbf, slopes_to_hermite, solve_hrbf
from groundwork.pu_surface import GroundSurface, sample_surface
from groundwork.synth import synth_terrain

METHODS = ("hierarchy", "hrbf")
BASES = ("bspline", "exponential")
SOLVERS = ("ldl", "lu")


class PipelineConfig(PrefixProto, cli=False):
    """Pipeline Configuration
    -------------------------

    One object carries every setting of the four stages. Values come from the
    class defaults, then an optional JSON config file, then keyword overrides
    (the command line).

    .. code-block:: python

        cfg = PipelineConfig(input="bar.xyz", method="hrbf", out="runs/bar")
        cmd_run(cfg)

    Every command writes the effective configuration to ``<out>/config.json``,
    which reloads to the same settings:

    .. code-block:: python

        cfg = PipelineConfig.load("runs/bar/config.json", basis="exponential")

    The log level and output directory side-load from ``GROUNDWORK_VERBOSE``
    and ``GROUNDWORK_OUT``.

    .. automethod:: print_info
    .. automethod:: load
    .. automethod:: save
    """

    input: str = Proto(None, dtype=str, help="XYZ point cloud, whitespace separated")
    out: str = Proto("groundwork-out", env="GROUNDWORK_OUT", help="output directory for all stages")

    spacing: float = Proto(1.0, help="grid spacing along x in survey units")
    spacing_y: float = Proto(None, dtype=float, help="grid spacing along y, defaults to spacing")
    min_points: int = Proto(4, help="fewer points than this make a cell a hole")
    nz_min: float = Proto(1e-3, help="planes with a smaller vertical normal component are holes")

    method: str = Proto("hierarchy", help="hole filling: hierarchy or hrbf")
    c: float = Proto(0.1, help="multiquadric shape parameter in grid units")
    poly_degree: int = Proto(0, help="degree of the HRBF polynomial part, 0 or 1")
    solver: str = Proto("ldl", help="dense HRBF solver: ldl or lu")

    basis: str = Proto("bspline", help="partition of unity: bspline or exponential")
    s: float = Proto(1.0, help="smoothing of the exponential basis")
    a: float = Proto(1.0, help="support radius of the exponential basis, in cells")
    precomputed: bool = Flag("tabulate the B-spline surface as polynomials per half cell")
    smooth: bool = Proto(True, help="kernel smooth the filled slopes before blending")

    samples: int = Proto(200, help="raster samples along x")
    samples_y: int = Proto(None, dtype=int, help="raster samples along y, defaults to samples")
    detrend: bool = Proto(True, help="run the detrend stage at the end of `run`")

    verbose: int = Proto(1, env="GROUNDWORK_VERBOSE", dtype=int, help="0 silent, 1 stage summaries, 2 details")

    def __post_init__(self, _deps=None):
        if self.basis == "exp":
            self.basis = "exponential"

        if not (self.spacing > 0 and self.spacing_xy()[1] > 0):
            raise ConfigError(f"spacing must be positive, got {self.spacing_xy()}")
        if self.min_points < 3:
            raise ConfigError(f"min_points must be at least 3, got {self.min_points}")
        if not self.c > 0:
            raise ConfigError(f"c must be positive, got {self.c}")
        if min(self.samples_xy()) < 2:
            raise ConfigError(f"need at least 2 samples per axis, got {self.samples_xy()}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.basis not in BASES:
            raise ConfigError(f"basis must be one of {BASES}, got {self.basis!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.poly_degree not in (0, 1):
            raise ConfigError(f"poly_degree must be 0 or 1, got {self.poly_degree}")
        if not self.s > 0:
            raise ConfigError(f"s must be positive, got {self.s}")
        if not self.a > 0.5:
            raise ConfigError(f"a must exceed half a cell, got {self.a}")

    def spacing_xy(self):
        return float(self.spacing), float(self.spacing if self.spacing_y is None else self.spacing_y)

    def samples_xy(self):
        return int(self.samples), int(self.samples if self.samples_y is None else self.samples_y)

    def out_dir(self) -> Path:
        return Path(self.out)

    def to_dict(self) -> Dict:
        return {k: getattr(self, k) for k in type(self).__annotations__}

    def print_info(self):
        """Print the effective configuration."""
        print("========= Arguments =========")
        for k, v in self.to_dict().items():
            print(f" {k} = {v},")
        print("-----------------------------")

    def log(self, level: int, *args):
        if self.verbose >= level:
            print(*args)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        """Read a JSON config file; keyword overrides win over the file."""
        try:
            with open(path, encoding="utf-8") as f:
                values = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"can not read config {path}: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

        unknown = sorted(set(values) - set(cls.__annotations__))
        if unknown:
            raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
        return cls(**{**values, **overrides})

    def save(self, path=None) -> Path:
        path = Path(path or self.out_dir() / "config.json")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"can not write config {path}: {e}") from e
        return path


class Timer:
    seconds: float = float("nan")


@contextmanager
def stage(name: str, cfg: PipelineConfig):
    """Time a stage and attribute its failures to it."""
    timer = Timer()
    t0 = time.perf_counter()
    try:
        yield timer
    except StageError:
        raise
    except (GroundworkError, ValueError, np.linalg.LinAlgError) as e:
        raise StageError(name, e) from e
    timer.seconds = time.perf_counter() - t0
    cfg.log(1, f"[{name}] done in {timer.seconds:.2f}s")


def _require_input(cfg: PipelineConfig) -> Path:
    if not cfg.input:
        raise ConfigError("no input cloud, pass --input")
    return Path(cfg.input)


def _load_grid(path: Path):
    d = load_artifact(path)
    return grid_from_fields(d), GridTransform.from_fields(d["transform"]), d


def load_surface(path) -> tuple:
    """Rebuild the :class:`GroundSurface` and its transform from ``surface.msgpack``."""
    grid, t, d = _load_grid(Path(path))
    surface = GroundSurface(grid, basis=d["basis"], s=float(d["s"]), a=float(d["a"]), precomputed=bool(d["precomputed"]))
    return surface, t


def cmd_fit(cfg: PipelineConfig) -> Dict:
    """Fit level-0 slopes; writes ``slopes.csv`` and ``slopes.msgpack``."""
    with stage("fit", cfg) as timer:
        cloud = load_xyz(_require_input(cfg))
        t = make_transform(cloud, cfg.spacing_xy())
        grid = fit_grid(to_grid_coords(cloud, t), t.dims, cfg.min_points, cfg.nz_min)

        out = cfg.out_dir()
        export_slopes_csv(grid, out / "slopes.csv")
        save_artifact(out / "slopes.msgpack", **grid_fields(grid), transform=t.to_fields())
        cfg.save()

    holes = classify_holes(grid)
    per_cell = grid.counts[grid.filled]
    summary = dict(
        points=cloud.count,
        dims=list(grid.dims),
        cells=grid.size,
        holes=grid.hole_count,
        interior_holes=int(holes.interior.sum()),
        outskirt_holes=int(holes.outskirts.sum()),
        points_per_cell=dict(min=int(per_cell.min()), mean=float(per_cell.mean()), max=int(per_cell.max())),
        seconds=timer.seconds,
        paths=[str(out / "slopes.csv"), str(out / "slopes.msgpack")],
    )
    cfg.log(
        1,
        f"fit: {summary['points']} points on a {grid.dims[0]}x{grid.dims[1]} grid, {grid.hole_count} holes "
        f"({summary['interior_holes']} interior), {per_cell.mean():.1f} points per cell",
    )
    return summary


def cmd_fill(cfg: PipelineConfig) -> Dict:
    """Fill the holes of ``slopes.msgpack``; writes ``filled.csv`` and ``filled.msgpack``."""
    with stage("fill", cfg) as timer:
        grid, t, _ = _load_grid(cfg.out_dir() / "slopes.msgpack")
        summary = dict(method=cfg.method, holes=grid.hole_count)

        if cfg.method == "hierarchy":
            pyramid = build_pyramid(grid)
            for level in pyramid:
                cfg.log(2, f"  level {level.level}: {level.dims[0]}x{level.dims[1]}, {level.hole_count} holes")
            filled = fill_holes_hierarchical(pyramid)
            summary["depth"] = pyramid.depth
            cfg.log(1, f"fill: {grid.hole_count} holes closed by a pyramid of {pyramid.depth} levels")
        elif grid.is_full:
            filled = grid
            cfg.log(1, "fill: no holes, nothing to interpolate")
        else:
            data = slopes_to_hermite(grid)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", IllConditionedWarning)
                model = solve_hrbf(data, HRBFConfig(cfg.c, cfg.poly_degree, cfg.solver))
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
            filled = fill_holes_hrbf(grid, model=model)
            summary["sites"] = data.n
            summary["condition"] = model.condition
            cfg.log(1, f"fill: {grid.hole_count} holes from {data.n} sites, condition estimate {model.condition:.3e}")

        out = cfg.out_dir()
        export_slopes_csv(filled, out / "filled.csv")
        save_artifact(out / "filled.msgpack", **grid_fields(filled), transform=t.to_fields())
        cfg.save()

    summary.update(seconds=timer.seconds, paths=[str(out / "filled.csv"), str(out / "filled.msgpack")])
    return summary


def cmd_surface(cfg: PipelineConfig) -> Dict:
    """Blend the filled slopes; writes the raster, OBJ mesh, PNG height map and ``surface.msgpack``."""
    with stage("surface", cfg) as timer:
        grid, t, _ = _load_grid(cfg.out_dir() / "filled.msgpack")
        if cfg.smooth:
            grid = kernel_smooth(grid)
        surface = GroundSurface(grid, basis=cfg.basis, s=cfg.s, a=cfg.a, precomputed=cfg.precomputed)

        samples = sample_surface(surface, *cfg.samples_xy())
        samples[..., :2] = t.unscale(samples[..., :2])

        out = cfg.out_dir()
        paths = [out / "surface.xyz", out / "surface.obj", out / "surface.png", out / "surface.msgpack"]
        export_raster(samples, paths[0])
        export_obj_mesh(samples, paths[1])
        export_heightmap_png(samples, paths[2])
        save_artifact(
            paths[3],
            **grid_fields(grid),
            transform=t.to_fields(),
            basis=surface.basis,
            s=cfg.s,
            a=cfg.a,
            precomputed=cfg.precomputed,
        )
        cfg.save()

    z = samples[..., 2]
    summary = dict(
        basis=surface.basis,
        samples=list(cfg.samples_xy()),
        z_min=float(z.min()),
        z_max=float(z.max()),
        seconds=timer.seconds,
        paths=list(map(str, paths)),
    )
    cfg.log(1, f"surface: {surface.basis} blend, heights in [{z.min():.4f}, {z.max():.4f}]")
    return summary


def cmd_detrend(cfg: PipelineConfig) -> Dict:
    """Subtract the surface from the input cloud; writes ``residuals.xyz`` and ``roughness.xyz``."""
    with stage("detrend", cfg) as timer:
        surface, t = load_surface(cfg.out_dir() / "surface.msgpack")
        cloud = load_xyz(_require_input(cfg))
        scaled = detrend(to_grid_coords(cloud, t), surface)
        stats = residual_stats(scaled)

        out = cfg.out_dir()
        save_xyz(from_grid_coords(scaled, t), out / "residuals.xyz")
        paths = [str(out / "residuals.xyz")]

        rough = roughness_grid(scaled, t.dims)
        i, j = np.nonzero(~np.isnan(rough))
        if len(i):
            xy = t.unscale(np.column_stack([i + 0.5, j + 0.5]))
            export_raster(np.column_stack([xy, rough[i, j]]), out / "roughness.xyz")
            paths.append(str(out / "roughness.xyz"))
        cfg.save()

    summary = dict(**stats._asdict(), seconds=timer.seconds, paths=paths)
    cfg.log(1, f"detrend: residual std {stats.std:.6g} over {stats.count} points")
    return summary


def cmd_run(cfg: PipelineConfig) -> Dict:
    """fit, fill, surface, then detrend when ``cfg.detrend`` is set."""
    if cfg.verbose >= 2:
        cfg.print_info()
    summary = dict(fit=cmd_fit(cfg), fill=cmd_fill(cfg), surface=cmd_surface(cfg))
    if cfg.detrend:
        summary["detrend"] = cmd_detrend(cfg)
    return summary


def cmd_synth(cfg: PipelineConfig, n_points: int = 15_666, seed: int = 0, noise: float = 0.0) -> Dict:
    """Write the synthetic bar cloud to ``cfg.input``, or ``<out>/synth.xyz`` when unset."""
    with stage("synth", cfg) as timer:
        cloud, terrain = synth_terrain(n_points, seed=seed, noise=noise)
        path = Path(cfg.input) if cfg.input else cfg.out_dir() / "synth.xyz"
        save_xyz(cloud, path)

    cfg.log(1, f"synth: {cloud.count} points, height range {terrain.range:.3f}, written to {path}")
    return dict(points=cloud.count, height_range=terrain.range, seconds=timer.seconds, paths=[str(path)])


COMMANDS = dict(fit=cmd_fit, fill=cmd_fill, surface=cmd_surface, detrend=cmd_detrend, run=cmd_run)


def _pair(name: str, values: Optional[Sequence[float]], overrides: Dict):
    if values is None:
        return
    if len(values) > 2:
        raise ConfigError(f"--{name.replace('_', '-')} takes one or two values, got {len(values)}")
    overrides[name] = values[0]
    if len(values) == 2:
        overrides[name + "_y"] = values[1]


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file, flags override its values")
    common.add_argument("--input", help="XYZ point cloud")
    common.add_argument("--out", help="output directory")
    common.add_argument("--spacing", type=float, nargs="+", help="grid spacing, one value or x and y")
    common.add_argument("--min-points", dest="min_points", type=int)
    common.add_argument("--nz-min", dest="nz_min", type=float)
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--basis", choices=("bspline", "exp", "exponential"))
    common.add_argument("--c", type=float, help="multiquadric shape parameter")
    common.add_argument("--poly-degree", dest="poly_degree", type=int, choices=(0, 1))
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--s", type=float, help="exponential smoothing")
    common.add_argument("--a", type=float, help="exponential support radius")
    common.add_argument("--samples", type=int, nargs="+", help="raster samples, one value or x and y")
    common.add_argument("--smooth", action=argparse.BooleanOptionalAction)
    common.add_argument("--precomputed", action=argparse.BooleanOptionalAction)
    common.add_argument("--detrend", action=argparse.BooleanOptionalAction)
    common.add_argument("--verbose", type=int)

    parser = argparse.ArgumentParser(prog="groundwork", description="Ground surfaces from terrestrial point clouds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0])

    synth = sub.add_parser("synth", parents=[common], help=cmd_synth.__doc__.splitlines()[0])
    synth.add_argument("--n-points", dest="n_points", type=int, default=15_666)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise", type=float, default=0.0)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        k: v for k, v in vars(args).items() if k not in ("command", "config", "spacing", "samples", "n_points", "seed", "noise")
    }
    _pair("spacing", getattr(args, "spacing", None), overrides)
    _pair("samples", getattr(args, "samples", None), overrides)
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config, **overrides)
    return PipelineConfig(**overrides)


def entry_point(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "synth":
            cmd_synth(cfg, args.n_points, args.seed, args.noise)
        else:
            COMMANDS[args.command](cfg)
    except StageError as e:
        print(f"groundwork {e.stage}: {e.cause}", file=sys.stderr)
        return 1
    except GroundworkError as e:
        print(f"groundwork config: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(entry_point())
