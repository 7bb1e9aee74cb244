import os
from contextlib import nullcontext

from cmx import doc

MAKE_DOCS = os.getenv("MAKE_DOCS", None)

doc @ """
# Reconstructing a Synthetic Bar

This example runs the four stages on the bundled synthetic river bar, and
compares the two hole filling methods inside the punched holes.
"""
with doc:
    import numpy as np

    from groundwork.cli import PipelineConfig, cmd_run, cmd_synth, load_surface
    from groundwork.cloud_io import PointCloud, to_grid_coords
    from groundwork.synth import synth_terrain

    cfg = PipelineConfig(input="runs/bar.xyz", out="runs/hierarchy", verbose=1)
    cmd_synth(cfg, noise=0.01)

doc @ """
`run` fits the slopes, fills the holes, blends the surface and detrends the cloud.
Everything lands in `cfg.out`.
"""
with doc, doc.skip if MAKE_DOCS else nullcontext():
    summary = cmd_run(cfg)

doc.print(summary["fit"]["dims"], summary["fit"]["holes"], summary["detrend"]["std"])

doc @ """
Swap the hole filling for the Hermite RBF interpolant, in its own output directory:
"""
with doc, doc.skip if MAKE_DOCS else nullcontext():
    hrbf = PipelineConfig(input="runs/bar.xyz", out="runs/hrbf", method="hrbf", basis="exp", verbose=1)
    cmd_run(hrbf)

doc @ """
Both surfaces can be reloaded from their `surface.msgpack` and compared against
the analytic ground, inside the holes where neither method saw any data.
"""
with doc, doc.skip if MAKE_DOCS else nullcontext():
    _, terrain = synth_terrain()
    x, y = np.meshgrid(np.arange(0, 30, 0.1), np.arange(0, 10, 0.1))
    inside = terrain.in_holes(x, y)
    x, y = x[inside], y[inside]

    for out in ("runs/hierarchy", "runs/hrbf"):
        surface, t = load_surface(f"{out}/surface.msgpack")
        scaled = to_grid_coords(PointCloud(np.column_stack([x, y, np.zeros_like(x)])), t)
        rms = np.sqrt(np.mean((surface(scaled.x, scaled.y) - terrain.height(x, y)) ** 2))
        doc.print(f"{out}: hole RMS {rms:.4f} of a {terrain.range:.2f} height range")
