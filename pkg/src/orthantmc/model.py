"""Problem definition: SDE coefficients and boundary/terminal data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import BadScalar, DimensionMismatch, NonPositiveDefinite

# Relative pivot floor for the Cholesky positive-definiteness certificate.
CHOLESKY_PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the parabolic Robin problem on the orthant.

    d          state dimension (>= 2)
    m          driver dimension (>= 1)
    mu         drift vector, shape (d,)
    sigma      diffusion loadings, shape (d, m)
    rho        killing rate (>= 0)
    c          Robin coefficients, shape (d,)
    T          horizon (> 0)
    """

    d: int
    m: int
    mu: np.ndarray
    sigma: np.ndarray
    rho: float
    c: np.ndarray
    T: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    def covariance(self):
        """The d x d matrix sigma sigma^T."""
        return self.sigma @ self.sigma.T


def validate(params):
    """Check well-posedness preconditions; returns ``params`` unchanged.

    Raises BadScalar, DimensionMismatch or NonPositiveDefinite.
    """
    if params.d < 2:
        raise BadScalar(f"d must be >= 2, got {params.d}")
    if params.m < 1:
        raise BadScalar(f"m must be >= 1, got {params.m}")
    if not params.T > 0:
        raise BadScalar(f"T must be positive, got {params.T}")
    if params.rho < 0:
        raise BadScalar(f"rho must be nonnegative, got {params.rho}")
    if params.mu.shape != (params.d,):
        raise DimensionMismatch(f"mu shape {params.mu.shape}, expected ({params.d},)")
    if params.c.shape != (params.d,):
        raise DimensionMismatch(f"c shape {params.c.shape}, expected ({params.d},)")
    if params.sigma.shape != (params.d, params.m):
        raise DimensionMismatch(
            f"sigma shape {params.sigma.shape}, expected ({params.d}, {params.m})"
        )
    cov = params.covariance()
    try:
        lower = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NonPositiveDefinite("sigma sigma^T is not positive definite")
    floor = CHOLESKY_PIVOT_RTOL * np.max(np.diag(cov))
    if np.min(np.diag(lower)) ** 2 <= floor:
        raise NonPositiveDefinite(
            "sigma sigma^T is numerically singular (Cholesky pivot below tolerance)"
        )
    return params


def effective_vol(params, i):
    """Per-component volatility sqrt(sum_k sigma[i,k]^2); ``i`` is 0-based."""
    return float(np.sqrt(np.sum(params.sigma[i] ** 2)))


def spatial_vars(d):
    return [f"x{j + 1}" for j in range(d)]


def boundary_vars(d, i):
    """Variables of f_i: time plus every coordinate except x_{i+1} (0-based i)."""
    return ["t"] + [f"x{j + 1}" for j in range(d) if j != i]


@dataclass(frozen=True)
class ProblemSpec:
    """Boundary data f_i(t, x^{-i}) and terminal data g(x) as expressions."""

    f: tuple
    g: ex.Expr
    label: str = ""
    d: int = field(default=0)

    def __post_init__(self):
        d = self.d if self.d else len(self.f)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "f", tuple(self.f))
        if len(self.f) != d:
            raise DimensionMismatch(f"expected {d} boundary functions, got {len(self.f)}")
        for i, fi in enumerate(self.f):
            allowed = set(boundary_vars(d, i))
            extra = fi.free_variables() - allowed
            if extra:
                raise DimensionMismatch(
                    f"f_{i + 1} references disallowed variables {sorted(extra)}"
                )
        extra = self.g.free_variables() - set(spatial_vars(d))
        if extra:
            raise DimensionMismatch(f"g references disallowed variables {sorted(extra)}")


def problem_from_strings(f_sources, g_source, label=""):
    d = len(f_sources)
    f = tuple(ex.parse(src, boundary_vars(d, i)) for i, src in enumerate(f_sources))
    g = ex.parse(g_source, spatial_vars(d))
    return ProblemSpec(f=f, g=g, label=label, d=d)
