from .cloud_io import GridTransform, PointCloud, load_xyz, make_transform, to_grid_coords
from .grid_model import Slope, SlopeGrid, build_pyramid, fill_holes_hierarchical, fit_grid, kernel_smooth
from .hrbf import HermiteData, HRBFConfig, fill_holes_hrbf, solve_hrbf
from .pu_surface import GroundSurface, blend_eval, blend_gradient, sample_surface
