"""Independent 2-D finite-difference oracle for the truncated Robin problem.

Crank-Nicolson in time on the full sparse operator (cross term included in
the implicit matrix; one LU factorization serves every step).  The Robin
faces x_i = 0 are enforced as second-order one-sided boundary rows

    (-3 u_0 + 4 u_1 - u_2) / (2 h) + c_i u_0 = f_i ,

which avoids the corner-ghost ambiguity of ghost-node closures.  The far
faces are either known Dirichlet data (manufactured problems) or a
zero-second-normal-derivative extrapolation row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from . import expr as ex
from .errors import LinearSolveFailure, NaNDetected, ProbeOutOfDomain

FAR_BC_MODES = ("dirichlet_known", "linear_extrapolation")

# probes must stay at least this fraction of x_max away from the far faces
PROBE_MARGIN = 0.2


@dataclass(frozen=True)
class Grid2D:
    x_max: float
    n_x: int
    dt_fd: float

    def __post_init__(self):
        if self.n_x < 16:
            raise ValueError(f"n_x must be >= 16, got {self.n_x}")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if not self.dt_fd > 0:
            raise ValueError("dt_fd must be positive")

    @property
    def h(self):
        return self.x_max / self.n_x

    @property
    def xs(self):
        return np.linspace(0.0, self.x_max, self.n_x + 1)


@dataclass
class FDSolution:
    """u on the tensor grid; values[k, i1, i2] = u(times[k], x_i1, x_i2)."""

    grid: Grid2D
    times: np.ndarray
    values: np.ndarray
    scheme: dict = field(default_factory=dict)

    def interpolator(self):
        return RegularGridInterpolator(
            (self.times, self.grid.xs, self.grid.xs), self.values,
            method="linear", bounds_error=True,
        )

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        return float(self.interpolator()((t, x[0], x[1])))

    def dump_slice_csv(self, path, time_index):
        """Write one time slice as x1,x2,value rows."""
        xs = self.grid.xs
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x1,x2,value\n")
            for i1, x1 in enumerate(xs):
                for i2, x2 in enumerate(xs):
                    fh.write(f"{x1!r},{x2!r},{self.values[time_index, i1, i2]!r}\n")


def _eval_grid(expr_, bindings_shape, **bindings):
    vals = ex.evaluate(expr_, bindings)
    return np.broadcast_to(np.asarray(vals, dtype=float), bindings_shape).copy()


def _build_matrices(params, grid, include_cross, far_bc):
    """LHS = I - (dtau/2) A on interior rows plus boundary rows;
    RHS matrix = I + (dtau/2) A with boundary rows zeroed.

    Returns (lhs_csc, rhs_csr, boundary_kind, boundary_index) where
    boundary_kind[i1, i2] in {0 interior, 1 robin-x1, 2 robin-x2,
    3 far-x1, 4 far-x2}.
    """
    n = grid.n_x
    h = grid.h
    q = params.covariance()
    rho = params.rho
    size = (n + 1) * (n + 1)

    def node(i1, i2):
        return i1 * (n + 1) + i2

    kind = np.zeros((n + 1, n + 1), dtype=int)
    kind[n, :] = 3
    kind[:, n] = 4
    kind[0, :] = np.where(kind[0, :] == 0, 1, kind[0, :])
    kind[:, 0] = np.where(kind[:, 0] == 0, 2, kind[:, 0])
    kind[0, 0] = 1          # corner uses the x1-face Robin condition
    kind[0, n] = 1
    kind[n, 0] = 2

    a = sp.lil_matrix((size, size))
    for i1 in range(1, n):
        for i2 in range(1, n):
            row = node(i1, i2)
            # second derivatives
            a[row, node(i1 - 1, i2)] += 0.5 * q[0, 0] / h ** 2
            a[row, node(i1 + 1, i2)] += 0.5 * q[0, 0] / h ** 2
            a[row, node(i1, i2 - 1)] += 0.5 * q[1, 1] / h ** 2
            a[row, node(i1, i2 + 1)] += 0.5 * q[1, 1] / h ** 2
            a[row, row] += -(q[0, 0] + q[1, 1]) / h ** 2
            # first derivatives (centered)
            a[row, node(i1 + 1, i2)] += params.mu[0] / (2 * h)
            a[row, node(i1 - 1, i2)] += -params.mu[0] / (2 * h)
            a[row, node(i1, i2 + 1)] += params.mu[1] / (2 * h)
            a[row, node(i1, i2 - 1)] += -params.mu[1] / (2 * h)
            # killing
            a[row, row] += -rho
            if include_cross and q[0, 1] != 0.0:
                w = q[0, 1] / (4 * h ** 2)
                a[row, node(i1 + 1, i2 + 1)] += w
                a[row, node(i1 - 1, i2 - 1)] += w
                a[row, node(i1 + 1, i2 - 1)] += -w
                a[row, node(i1 - 1, i2 + 1)] += -w

    dtau = grid.dt_fd
    eye = sp.identity(size, format="lil")
    lhs = (eye - (dtau / 2.0) * a).tolil()
    rhs = (eye + (dtau / 2.0) * a).tolil()

    for i1 in range(n + 1):
        for i2 in range(n + 1):
            k = kind[i1, i2]
            if k == 0:
                continue
            row = node(i1, i2)
            lhs.rows[row] = []
            lhs.data[row] = []
            rhs.rows[row] = []
            rhs.data[row] = []
            if k == 1:   # Robin at x1 = 0
                lhs[row, node(0, i2)] = -3.0 / (2 * h) + params.c[0]
                lhs[row, node(1, i2)] = 4.0 / (2 * h)
                lhs[row, node(2, i2)] = -1.0 / (2 * h)
            elif k == 2:  # Robin at x2 = 0
                lhs[row, node(i1, 0)] = -3.0 / (2 * h) + params.c[1]
                lhs[row, node(i1, 1)] = 4.0 / (2 * h)
                lhs[row, node(i1, 2)] = -1.0 / (2 * h)
            elif k == 3:  # far x1 face
                if far_bc == "dirichlet_known":
                    lhs[row, row] = 1.0
                else:       # zero second normal derivative
                    lhs[row, node(n, i2)] = 1.0
                    lhs[row, node(n - 1, i2)] = -2.0
                    lhs[row, node(n - 2, i2)] = 1.0
            else:         # far x2 face
                if far_bc == "dirichlet_known":
                    lhs[row, row] = 1.0
                else:
                    lhs[row, node(i1, n)] = 1.0
                    lhs[row, node(i1, n - 1)] = -2.0
                    lhs[row, node(i1, n - 2)] = 1.0
    return lhs.tocsc(), rhs.tocsr(), kind


def solve_robin_fd(params, spec, grid, far_bc="linear_extrapolation",
                   far_values=None, include_cross=True, source=None,
                   homogeneous_robin=False, terminal=None):
    """March the truncated Robin problem backward from T.

    far_values(t, X1, X2) supplies Dirichlet data for far_bc =
    "dirichlet_known".  ``source`` is an optional S(t, X1, X2) entering the
    PDE as  u_t + A u + S = 0 (used for the homogenized sub-problem).
    ``terminal`` overrides spec.g (grid-valued callable of (X1, X2)).
    """
    if params.d != 2:
        raise ValueError("the finite-difference oracle requires d = 2")
    if far_bc not in FAR_BC_MODES:
        raise ValueError(f"far_bc must be one of {FAR_BC_MODES}")
    if far_bc == "dirichlet_known" and far_values is None:
        raise ValueError("far_bc='dirichlet_known' requires far_values")
    if grid.dt_fd > params.T / 50 + 1e-15:
        raise ValueError("dt_fd must be <= T/50")

    n = grid.n_x
    xs = grid.xs
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    n_t = max(1, int(np.ceil(params.T / grid.dt_fd - 1e-12)))
    dtau = params.T / n_t
    grid = Grid2D(x_max=grid.x_max, n_x=grid.n_x, dt_fd=dtau)

    lhs, rhs, kind = _build_matrices(params, grid, include_cross, far_bc)
    try:
        lu = splu(lhs)
    except Exception as exc:  # pragma: no cover - singular assemblies
        raise LinearSolveFailure(str(exc)) from exc

    if terminal is not None:
        v = terminal(X1, X2).astype(float)
    else:
        v = _eval_grid(spec.g, X1.shape, x1=X1, x2=X2)

    robin1 = kind == 1
    robin2 = kind == 2
    far1 = kind == 3
    far2 = kind == 4

    def boundary_rhs(t):
        b = np.zeros((n + 1, n + 1))
        if homogeneous_robin:
            pass
        else:
            f1 = _eval_grid(spec.f[0], X2.shape, t=t, x2=X2)
            f2 = _eval_grid(spec.f[1], X1.shape, t=t, x1=X1)
            b[robin1] = f1[robin1]
            b[robin2] = f2[robin2]
        if far_bc == "dirichlet_known":
            fv = far_values(t, X1, X2)
            b[far1] = fv[far1]
            b[far2] = fv[far2]
        return b

    times = params.T - dtau * np.arange(n_t + 1)   # marching order
    values = np.empty((n_t + 1, n + 1, n + 1))
    values[n_t] = v                                 # slice at t = T
    src_now = source(times[0], X1, X2) if source is not None else None
    flat = v.ravel().copy()
    for m in range(n_t):
        t_new = times[m + 1]
        b = rhs @ flat
        if source is not None:
            src_new = source(t_new, X1, X2)
            interior = (kind == 0).ravel()
            b[interior] += dtau * 0.5 * (src_now + src_new).ravel()[interior]
            src_now = src_new
        b += boundary_rhs(t_new).ravel()
        flat = lu.solve(b)
        if not np.all(np.isfinite(flat)):
            raise NaNDetected(f"non-finite values at t = {t_new:.6g}")
        values[n_t - (m + 1)] = flat.reshape(n + 1, n + 1)
    return FDSolution(
        grid=grid,
        times=np.linspace(0.0, params.T, n_t + 1),
        values=values,
        scheme={
            "far_bc": far_bc,
            "include_cross": include_cross,
            "n_t": n_t,
            "dtau": dtau,
        },
    )


def _cross_difference(vgrid, h):
    """Centered 4-point mixed derivative on the interior, zero on edges."""
    out = np.zeros_like(vgrid)
    out[1:-1, 1:-1] = (
        vgrid[2:, 2:] - vgrid[2:, :-2] - vgrid[:-2, 2:] + vgrid[:-2, :-2]
    ) / (4.0 * h * h)
    return out


def solve_decomposed_fd(params, spec, grid, far_bc="linear_extrapolation",
                        far_values=None):
    """Grid-level decomposition check: the boundary-data
    problem without the cross term, then the homogenized problem whose
    source is the cross term applied to the first solution; returns
    (phi, psi, sum)."""
    # The boundary-data problem has no known far data; extrapolate.
    phi = solve_robin_fd(
        params, spec, grid, far_bc="linear_extrapolation",
        include_cross=False, terminal=lambda X1, X2: np.zeros_like(X1),
    )
    q12 = params.covariance()[0, 1]
    interp_times = phi.times
    h = phi.grid.h

    def slice_index(t):
        k = int(round((t - interp_times[0]) / (interp_times[1] - interp_times[0])))
        return min(max(k, 0), len(interp_times) - 1)

    def source(t, X1, X2):
        if q12 == 0.0:
            return np.zeros_like(X1)
        return q12 * _cross_difference(phi.values[slice_index(t)], h)

    if far_bc == "dirichlet_known":
        # the sum must reproduce the full solution's far data exactly
        def psi_far(t, X1, X2):
            return far_values(t, X1, X2) - phi.values[slice_index(t)]
    else:
        psi_far = None

    psi = solve_robin_fd(
        params, spec, grid, far_bc=far_bc, far_values=psi_far,
        include_cross=True, source=source, homogeneous_robin=True,
    )
    total = FDSolution(
        grid=phi.grid, times=phi.times, values=phi.values + psi.values,
        scheme={"composition": "phi+psi", **phi.scheme},
    )
    return phi, psi, total


def compare(fd, probes, mc_values, rel_tol=0.02, se_mult=3.0):
    """Per-probe gaps between the FD solution and MC estimates.

    Tolerance per probe: max(rel_tol * |fd|, se_mult * SE).  Probes must sit
    at least PROBE_MARGIN * x_max away from the far faces.
    """
    interp = fd.interpolator()
    limit = (1.0 - PROBE_MARGIN) * fd.grid.x_max
    rows = []
    all_pass = True
    for probe, mc in zip(probes, mc_values):
        if np.any(probe.x > limit):
            raise ProbeOutOfDomain(
                f"probe {probe.x} within {PROBE_MARGIN:.0%} of the far boundary"
            )
        ref = float(interp((probe.t, probe.x[0], probe.x[1])))
        gap = mc.value - ref
        tol = max(rel_tol * abs(ref), se_mult * mc.std_error)
        ok = abs(gap) <= tol
        all_pass = all_pass and ok
        rows.append({
            "t": probe.t,
            "x": [float(xi) for xi in probe.x],
            "fd_value": ref,
            "mc_value": mc.value,
            "mc_std_error": mc.std_error,
            "abs_gap": abs(gap),
            "rel_gap": abs(gap) / max(abs(ref), 1e-300),
            "tolerance": tol,
            "pass": bool(ok),
        })
    return {"probes": rows, "pass": bool(all_pass)}
