"""First order Hermite RBF interpolation with Hardy's multiquadric.

The interpolant matches heights and gradients at scattered sites,

    s(x) = p(x) + sum_j c_j psi(x - x_j) + sum_j d_j . grad psi(x_j - x),

with ``psi(r) = sqrt(|r|^2 + c^2)`` and ``p`` a polynomial of total degree 0 or 1.
The coefficients solve one dense symmetric indefinite system. Fitting slopes of
a grid and re-evaluating the interpolant at the hole centers fills the holes.

All lengths are in scaled grid units, where the site spacing is 1.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.linalg import get_lapack_funcs
from scipy.spatial import cKDTree

from groundwork.errors import (
    ConfigError,
    DuplicateSiteError,
    IllConditionedError,
    IllConditionedWarning,
    SingularSystemError,
    SystemTooLargeError,
)
from groundwork.grid_model import SlopeGrid

MAX_UNKNOWNS = 20_000
WARN_CONDITION = 1e14
MAX_CONDITION = 1e16
MIN_SEPARATION = 1e-9
REFINE_STEPS = 2
CHUNK = 256


class Kernel(NamedTuple):
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray


def mq_kernel(r, c: float) -> Kernel:
    """Multiquadric value, gradient and Hessian at offsets ``r`` of shape (..., 2)."""
    r = np.asarray(r, dtype=float)
    value = np.sqrt(np.sum(r**2, axis=-1) + c**2)
    v = value[..., None]
    gradient = r / v
    hessian = np.eye(2) / v[..., None] - r[..., :, None] * r[..., None, :] / (v**3)[..., None]
    return Kernel(value, gradient, hessian)


def _poly(x: np.ndarray, degree: int):
    """Monomials of total degree <= ``degree`` and their gradients, shapes (m, L) and (m, L, 2)."""
    m = len(x)
    if degree == 0:
        return np.ones((m, 1)), np.zeros((m, 1, 2))
    P = np.column_stack([np.ones(m), x[:, 0], x[:, 1]])
    dP = np.broadcast_to(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), (m, 3, 2))
    return P, dP


@dataclass(frozen=True, eq=False)
class HermiteData:
    sites: np.ndarray
    values: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float).reshape(-1, 2)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        gradients = np.asarray(self.gradients, dtype=float).reshape(-1, 2)
        if len(sites) == 0:
            raise ValueError("Hermite data needs at least one site")
        if not (len(sites) == len(values) == len(gradients)):
            raise ValueError(f"{len(sites)} sites, {len(values)} values and {len(gradients)} gradients do not match")
        if not (np.isfinite(sites).all() and np.isfinite(values).all() and np.isfinite(gradients).all()):
            raise ValueError("Hermite data holds non-finite entries")

        pairs = cKDTree(sites).query_pairs(MIN_SEPARATION, output_type="ndarray")
        if len(pairs):
            i, j = pairs[0]
            raise DuplicateSiteError(f"sites {i} and {j} coincide at ({sites[i, 0]:.17g}, {sites[i, 1]:.17g})")

        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gradients", gradients)

    @property
    def n(self) -> int:
        return len(self.sites)


@dataclass(frozen=True)
class HRBFConfig:
    c: float = 0.1
    """multiquadric shape parameter, 0.1 of the unit site spacing"""
    poly_degree: int = 0
    """0 for constants (what the multiquadric needs), 1 to reproduce planes exactly"""
    solver: str = "ldl"
    """'ldl' for the Bunch-Kaufman factorization, 'lu' for a general LU"""

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"multiquadric c must be positive, got {self.c}")
        if self.poly_degree not in (0, 1):
            raise ConfigError(f"poly_degree must be 0 or 1, got {self.poly_degree}")
        if self.solver not in ("ldl", "lu"):
            raise ConfigError(f"solver must be 'ldl' or 'lu', got {self.solver!r}")

    @property
    def n_poly(self) -> int:
        return 1 if self.poly_degree == 0 else 3


@dataclass(frozen=True, eq=False)
class HRBFModel:
    sites: np.ndarray
    c_coef: np.ndarray
    d_coef: np.ndarray
    a_coef: np.ndarray
    config: HRBFConfig
    condition: float = np.nan
    """1-norm condition estimate of the system matrix"""


class HermiteResiduals(NamedTuple):
    value: float
    gradient: float
    side_condition: float


def assemble_system(data: HermiteData, cfg: Optional[HRBFConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """The symmetric (3n + L) x (3n + L) system and its right hand side.

    Unknowns are ordered ``c_1..c_n, d_1x, d_1y, ..., d_nx, d_ny, a_1..a_L``.
    """
    cfg = cfg or HRBFConfig()
    X = data.sites
    n, L = data.n, cfg.n_poly
    size = 3 * n + L
    M = np.zeros((size, size))

    P, dP = _poly(X, cfg.poly_degree)
    R = dP.transpose(0, 2, 1).reshape(2 * n, L)

    for s in range(0, n, CHUNK):
        e = min(s + CHUNK, n)
        m = e - s
        k = mq_kernel(X[s:e, None, :] - X[None, :, :], cfg.c)
        rows = slice(n + 2 * s, n + 2 * e)

        M[s:e, :n] = k.value
        # grad psi(x_j - x_i) = -grad psi(x_i - x_j)
        M[s:e, n : 3 * n] = -k.gradient.reshape(m, 2 * n)
        M[rows, :n] = k.gradient.transpose(0, 2, 1).reshape(2 * m, n)
        M[rows, n : 3 * n] = -k.hessian.transpose(0, 2, 1, 3).reshape(2 * m, 2 * n)

    M[:n, 3 * n :] = P
    M[n : 3 * n, 3 * n :] = R
    M[3 * n :, :n] = P.T
    M[3 * n :, n : 3 * n] = R.T

    rhs = np.concatenate([data.values, data.gradients.reshape(-1), np.zeros(L)])
    return M, rhs


def _factorize(M: np.ndarray, solver: str):
    """Factor once; return a solve function and the 1-norm condition estimate."""
    anorm = np.abs(M).sum(axis=0).max()

    if solver == "ldl":
        sytrf, sytrs, sycon = get_lapack_funcs(("sytrf", "sytrs", "sycon"), (M,))
        ldu, ipiv, info = sytrf(M, lower=0)
        if info > 0:
            raise SingularSystemError(f"the Hermite system is singular (zero pivot block at {info})")
        rcond, _ = sycon(ldu, ipiv, anorm, lower=0)

        def solve(b):
            return sytrs(ldu, ipiv, b, lower=0)[0]

    else:
        getrf, getrs, gecon = get_lapack_funcs(("getrf", "getrs", "gecon"), (M,))
        lu, piv, info = getrf(M)
        if info > 0:
            raise SingularSystemError(f"the Hermite system is singular (zero pivot at {info})")
        rcond, _ = gecon(lu, anorm, norm="1")

        def solve(b):
            return getrs(lu, piv, b)[0]

    condition = np.inf if rcond == 0 else 1.0 / rcond
    return solve, condition


def solve_hrbf(data: HermiteData, cfg: Optional[HRBFConfig] = None) -> HRBFModel:
    """Fit the Hermite interpolant. Warns above a 1e14 condition estimate and fails above 1e16."""
    cfg = cfg or HRBFConfig()
    size = 3 * data.n + cfg.n_poly
    if size > MAX_UNKNOWNS:
        raise SystemTooLargeError(f"{size} unknowns exceed the dense solver limit of {MAX_UNKNOWNS}")

    M, rhs = assemble_system(data, cfg)
    solve, condition = _factorize(M, cfg.solver)

    if condition > MAX_CONDITION:
        raise IllConditionedError(f"condition estimate {condition:.3g} of the Hermite system exceeds {MAX_CONDITION:.0e}")
    if condition > WARN_CONDITION:
        warnings.warn(f"Hermite system condition estimate is {condition:.3g}", IllConditionedWarning, stacklevel=2)

    x = solve(rhs)
    for _ in range(REFINE_STEPS):
        x = x + solve(rhs - M @ x)

    n = data.n
    return HRBFModel(
        sites=data.sites.copy(),
        c_coef=x[:n],
        d_coef=x[n : 3 * n].reshape(n, 2),
        a_coef=x[3 * n :],
        config=cfg,
        condition=float(condition),
    )


def _evaluate(model: HRBFModel, x, gradient: bool):
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    q = x.reshape(-1, 2)
    out = np.empty((len(q), 2) if gradient else len(q))

    for s in range(0, len(q), CHUNK):
        e = min(s + CHUNK, len(q))
        k = mq_kernel(q[s:e, None, :] - model.sites[None, :, :], model.config.c)
        P, dP = _poly(q[s:e], model.config.poly_degree)
        if gradient:
            out[s:e] = (
                np.einsum("mna,n->ma", k.gradient, model.c_coef)
                - np.einsum("mnab,nb->ma", k.hessian, model.d_coef)
                + np.einsum("mla,l->ma", dP, model.a_coef)
            )
        else:
            # d_j . grad psi(x_j - x) = -d_j . grad psi(x - x_j)
            out[s:e] = (
                k.value @ model.c_coef - np.einsum("mnb,nb->m", k.gradient, model.d_coef) + P @ model.a_coef
            )

    return out.reshape(shape + ((2,) if gradient else ()))


def evaluate(model: HRBFModel, x):
    """Interpolant height at point(s) ``x`` of shape (..., 2)."""
    return _evaluate(model, x, gradient=False)


def evaluate_gradient(model: HRBFModel, x):
    """Analytic gradient of the interpolant at point(s) ``x``; shape (..., 2)."""
    return _evaluate(model, x, gradient=True)


def residuals(model: HRBFModel, data: HermiteData) -> HermiteResiduals:
    """Largest interpolation errors at the sites, and the relative side-condition residual."""
    value = np.abs(evaluate(model, data.sites) - data.values).max()
    grad = np.abs(evaluate_gradient(model, data.sites) - data.gradients).max()

    P, dP = _poly(data.sites, model.config.poly_degree)
    side = P.T @ model.c_coef + np.einsum("nla,na->l", dP, model.d_coef)
    scale = max(np.abs(model.c_coef).sum() + np.abs(model.d_coef).sum(), np.finfo(float).tiny)
    return HermiteResiduals(float(value), float(grad), float(np.abs(side).max() / scale))


def slopes_to_hermite(grid: SlopeGrid) -> HermiteData:
    """One site per non-hole cell at its centroid, with the slope height and gradient."""
    filled = grid.filled
    return HermiteData(
        sites=grid.centroids[filled][:, :2],
        values=grid.centroids[filled][:, 2],
        gradients=grid.gradients()[filled],
    )


def fill_holes_hrbf(grid: SlopeGrid, cfg: Optional[HRBFConfig] = None, *, model: Optional[HRBFModel] = None) -> SlopeGrid:
    """Fill each hole with the interpolant's tangent plane at the cell center.

    Pass ``model`` to reuse an interpolant already fitted to this grid.
    """
    if grid.is_full:
        return grid
    if model is None:
        model = solve_hrbf(slopes_to_hermite(grid), cfg)

    i, j = np.nonzero(grid.holes)
    centers = np.column_stack([i + 0.5, j + 0.5]) * grid.cell_size
    z = evaluate(model, centers)
    g = evaluate_gradient(model, centers)
    normals = np.column_stack([-g[:, 0], -g[:, 1], np.ones(len(g))])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    centroids = grid.centroids.copy()
    new_normals = grid.normals.copy()
    centroids[i, j] = np.column_stack([centers, z])
    new_normals[i, j] = normals
    return grid.with_slopes(centroids, new_normals)
