"""Monte Carlo estimators for the Robin problem and its decomposition.

All estimators are deterministic functions of (inputs, seed): paths are
generated in fixed-size chunks with counter-derived substreams and reduced
in chunk order, so the result does not depend on the worker count.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import expr as ex
from .densities import (
    ComponentLaw,
    check_exp_moment,
    h_function,
    h_function_dx,
    h_function_dx_vec,
    joint_density,
)
from .errors import QuadratureBudgetExceeded
from .model import effective_vol
from .paths import (
    attach_segment_max,
    first_hitting_index,
    make_grid,
    simulate_drivers_correlated,
    simulate_drivers_independent,
    skorokhod_reflect,
)
from .rng import map_chunks

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_TIME_NODES = 24
MAX_QUAD_NODES = 20_000_000


@dataclass(frozen=True)
class QueryPoint:
    t: float
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if np.any(self.x < 0):
            raise ValueError("query point must lie in the closed orthant")
        if self.t < 0:
            raise ValueError("query time must be nonnegative")


@dataclass(frozen=True)
class EstimateResult:
    value: float
    std_error: float
    n_paths: int
    dt: float
    seed: int
    wall_time: float

    def combine(self, other):
        """Sum of two estimates computed from independent streams."""
        return EstimateResult(
            value=self.value + other.value,
            std_error=float(np.hypot(self.std_error, other.std_error)),
            n_paths=min(self.n_paths, other.n_paths),
            dt=max(self.dt, other.dt),
            seed=self.seed,
            wall_time=self.wall_time + other.wall_time,
        )


# --------------------------------------------------------------------------
# shared machinery
# --------------------------------------------------------------------------

def _mc_run(worker, n_paths, seed, purpose, dt):
    """Chunked mean/SE of per-path contributions."""
    start = time.perf_counter()
    sums = map_chunks(worker, n_paths, seed, purpose)
    total = 0.0
    total_sq = 0.0
    for s1, s2 in sums:
        total += s1
        total_sq += s2
    n = int(n_paths)
    mean = total / n
    var = max(total_sq - n * mean * mean, 0.0) / max(n - 1, 1)
    return EstimateResult(
        value=float(mean),
        std_error=float(np.sqrt(var / n)),
        n_paths=n,
        dt=float(dt),
        seed=int(seed),
        wall_time=time.perf_counter() - start,
    )


def _chunk_sums(values):
    values = np.asarray(values, dtype=float)
    return float(np.sum(values)), float(np.sum(values * values))


def _simulate(params, grid, rng, n, correlated, use_segment_max, x0):
    if correlated:
        driver = simulate_drivers_correlated(params, grid, rng, n)
    else:
        driver = simulate_drivers_independent(params, grid, rng, n)
    if use_segment_max:
        attach_segment_max(driver, params, grid, rng)
    reflected = skorokhod_reflect(x0, driver, use_segment_max)
    return driver, reflected


def _eval_boundary(f_expr, excluded, times, x_batch):
    """Evaluate f(t, x^{-excluded}) on a path batch; returns (n, K+1)."""
    n = x_batch.shape[0]
    bindings = {"t": np.broadcast_to(times[None, :], (n, times.size))}
    for j in range(x_batch.shape[1]):
        if j != excluded:
            bindings[f"x{j + 1}"] = x_batch[:, j, :]
    vals = ex.evaluate(f_expr, bindings)
    return np.broadcast_to(np.asarray(vals, dtype=float), (n, times.size))


def _eval_terminal(g_expr, x_terminal):
    n = x_terminal.shape[0]
    bindings = {f"x{j + 1}": x_terminal[:, j] for j in range(x_terminal.shape[1])}
    vals = ex.evaluate(g_expr, bindings)
    return np.broadcast_to(np.asarray(vals, dtype=float), (n,))


def _discount(params, times, t, l, exclude=None, include_rho=True):
    """exp(-rho (s-t) + sum_k c_k L^k) per grid node, optionally skipping
    one component's local time or the deterministic rho factor (when the
    latter is applied through a quadrature weight instead)."""
    c = params.c.copy()
    if exclude is not None:
        c[exclude] = 0.0
    expo = np.einsum("k,nkt->nt", c, l)
    if include_rho:
        expo = expo - params.rho * (times - t)[None, :]
    return np.exp(expo)


def _time_nodes(t, T, n_nodes):
    """Gauss-Legendre nodes for int_t^T under s = t + v^2.

    The substitution absorbs the 1/sqrt(s-t) blow-up of the local-time
    kernels at s -> t.
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * np.sqrt(T - t)
    v = half * (nodes + 1.0)
    return t + v * v, weights * half * 2.0 * v


def _node_grid_indices(s_nodes, grid):
    idx = np.rint((s_nodes - grid.t0) / grid.dt).astype(int)
    return np.clip(idx, 0, grid.n_steps)


def _check_exp_moments(params, t):
    for i in range(params.d):
        if params.c[i] > 0:
            law = ComponentLaw(params.mu[i], effective_vol(params, i), t, params.T)
            check_exp_moment(law, params.c[i])


# --------------------------------------------------------------------------
# naive representation (correlated drivers)
# --------------------------------------------------------------------------

def estimate_u_naive(params, spec, q, n_paths, dt=DEFAULT_DT, seed=0,
                     use_segment_max=True):
    """Direct Feynman-Kac estimator of u(t, x) on correlated drivers."""
    _check_exp_moments(params, q.t)
    grid = make_grid(q.t, params.T, dt)
    times = grid.times

    def worker(rng, n):
        _, refl = _simulate(params, grid, rng, n, True, use_segment_max, q.x)
        disc = _discount(params, times, q.t, refl.l)
        vals = disc[:, -1] * _eval_terminal(spec.g, refl.x[:, :, -1])
        for i in range(params.d):
            fvals = _eval_boundary(spec.f[i], i, times, refl.x)
            dl = np.diff(refl.l[:, i, :], axis=1)
            vals = vals - np.sum(disc[:, 1:] * fvals[:, 1:] * dl, axis=1)
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "naive", grid.dt)


# --------------------------------------------------------------------------
# varphi: boundary-data problem on independent drivers
# --------------------------------------------------------------------------

def estimate_varphi_stieltjes(params, spec, q, n_paths, dt=DEFAULT_DT, seed=0,
                              use_segment_max=True):
    """Pathwise Stieltjes form of varphi on independent drivers."""
    _check_exp_moments(params, q.t)
    grid = make_grid(q.t, params.T, dt)
    times = grid.times

    def worker(rng, n):
        _, refl = _simulate(params, grid, rng, n, False, use_segment_max, q.x)
        disc = _discount(params, times, q.t, refl.l)
        vals = np.zeros(n)
        for i in range(params.d):
            fvals = _eval_boundary(spec.f[i], i, times, refl.x)
            dl = np.diff(refl.l[:, i, :], axis=1)
            vals = vals - np.sum(disc[:, 1:] * fvals[:, 1:] * dl, axis=1)
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "varphi_stieltjes", grid.dt)


def _h_matrix(params, t, s_nodes, x, deriv=False):
    """h_i (or d/dx h_i) for every component at every time node."""
    out = np.empty((params.d, s_nodes.size))
    fn = h_function_dx if deriv else h_function
    for i in range(params.d):
        vol = effective_vol(params, i)
        for k, s in enumerate(s_nodes):
            law = ComponentLaw(params.mu[i], vol, t, s)
            out[i, k] = fn(law, params.c[i], x[i])
    return out


def estimate_varphi_factorized(params, spec, q, n_paths, dt=DEFAULT_DT,
                               n_time_nodes=DEFAULT_TIME_NODES, seed=0,
                               use_segment_max=True):
    """Factorized form of varphi: inner expectation by Monte Carlo on the
    components other than i, outer time integral against the closed-form
    local-time moment derivative h_i by deterministic quadrature."""
    _check_exp_moments(params, q.t)
    grid = make_grid(q.t, params.T, dt)
    s_nodes, s_weights = _time_nodes(q.t, params.T, n_time_nodes)
    node_idx = _node_grid_indices(s_nodes, grid)
    hmat = _h_matrix(params, q.t, s_nodes, q.x)
    disc_det = np.exp(-params.rho * (s_nodes - q.t))
    outer = s_weights * disc_det * hmat  # (d, n_nodes)

    def worker(rng, n):
        _, refl = _simulate(params, grid, rng, n, False, use_segment_max, q.x)
        vals = np.zeros(n)
        for i in range(params.d):
            disc = _discount(params, grid.times, q.t, refl.l, exclude=i,
                             include_rho=False)
            fvals = _eval_boundary(spec.f[i], i, grid.times, refl.x)
            inner = (disc * fvals)[:, node_idx]  # (n, n_nodes)
            vals = vals - inner @ outer[i]
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "varphi_factorized", grid.dt)


def estimate_varphi_gradient(params, spec, q, i, n_paths, dt=DEFAULT_DT, seed=0,
                             use_segment_max=True):
    """Stochastic-flow representation of d(varphi)/dx_i.

    Three terms: a hitting-time boundary term, a -d(f_j)/dx_i Stieltjes
    term up to the hitting time, and a c_i-weighted tail Stieltjes term.
    """
    _check_exp_moments(params, q.t)
    grid = make_grid(q.t, params.T, dt)
    times = grid.times
    K = grid.n_steps
    df_dxi = [ex.differentiate(spec.f[j], f"x{i + 1}") for j in range(params.d)]

    def worker(rng, n):
        driver, refl = _simulate(params, grid, rng, n, False, use_segment_max, q.x)
        seg = driver.seg_max[:, i, :] if driver.seg_max is not None else None
        hit = first_hitting_index(driver.wtilde[:, i, :], seg, q.x[i])
        hit_or_end = np.where(hit < 0, K + 1, hit)
        karr = np.arange(1, K + 1)[None, :]
        before = karr <= hit_or_end[:, None]
        disc_partial = _discount(params, times, q.t, refl.l, exclude=i)
        disc_full = disc_partial * np.exp(params.c[i] * refl.l[:, i, :])

        vals = np.zeros(n)
        # boundary term at the hitting time
        hit_mask = hit >= 0
        if np.any(hit_mask):
            rows = np.nonzero(hit_mask)[0]
            cols = hit[rows]
            fvals = _eval_boundary(spec.f[i], i, times, refl.x[rows])
            vals[rows] += disc_partial[rows, cols] * fvals[np.arange(rows.size), cols]
        # -sum_{j != i} int_t^{tau ^ T} dfj/dxi dL^j
        for j in range(params.d):
            if j == i:
                continue
            if isinstance(df_dxi[j], ex.Num) and df_dxi[j].value == 0.0:
                continue
            dfv = _eval_boundary(df_dxi[j], j, times, refl.x)
            dl = np.diff(refl.l[:, j, :], axis=1)
            vals -= np.sum(disc_partial[:, 1:] * dfv[:, 1:] * dl * before, axis=1)
        # + c_i sum_j int_{tau ^ T}^T f_j dL^j
        if params.c[i] != 0.0:
            after = ~before
            for j in range(params.d):
                fvals = _eval_boundary(spec.f[j], j, times, refl.x)
                dl = np.diff(refl.l[:, j, :], axis=1)
                vals += params.c[i] * np.sum(
                    disc_full[:, 1:] * fvals[:, 1:] * dl * after, axis=1
                )
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "varphi_gradient", grid.dt)


# --------------------------------------------------------------------------
# cross second derivatives of varphi
# --------------------------------------------------------------------------

def _quad_inner_kernels(params, f_ell, df_ell, ell, other, x_other, t, s_nodes,
                        n_xy=64):
    """A(s) and B(s) for the d=2 quadrature route.

    A(s) = E[e^{c_o (M_o - x_o)} f_ell(s, X_o) ; M_o >= x_o]
    B(s) = E[d(f_ell)/dx_o (s, X_o) ; M_o <= x_o]

    computed against the closed-form joint law of (endpoint, running max)
    of the other component.  Substituting w = y - r makes X_o = w on the
    first region and X_o = x_o - y + w on the second.
    """
    mu_o = params.mu[other]
    vol_o = effective_vol(params, other)
    c_o = params.c[other]
    var_name = f"x{other + 1}"
    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(n_xy)
    a_vals = np.empty(s_nodes.size)
    b_vals = np.empty(s_nodes.size)
    for k, s in enumerate(s_nodes):
        law = ComponentLaw(mu_o, vol_o, t, s)
        tau = law.tau
        span = abs(law.nu) * tau + 3.0 * vol_o ** 2 * tau + 14.0 * vol_o * np.sqrt(tau)
        w_hi = span
        ws = 0.5 * w_hi * (gl_nodes + 1.0)
        wws = gl_weights * 0.5 * w_hi
        # region M_o >= x_o
        y_hi = x_other + span + max(c_o, 0.0) * vol_o ** 2 * tau
        ys = x_other + 0.5 * (y_hi - x_other) * (gl_nodes + 1.0)
        wys = gl_weights * 0.5 * (y_hi - x_other)
        Y, W = np.meshgrid(ys, ws, indexing="ij")
        dens = joint_density(law, Y - W, Y)
        fv = ex.evaluate(f_ell, {"t": s, var_name: W})
        expf = np.exp(np.minimum(c_o * (Y - x_other), 500.0))
        a_vals[k] = float(wys @ (expf * fv * dens) @ wws)
        # region M_o <= x_o
        if x_other > 0.0:
            ys2 = 0.5 * x_other * (gl_nodes + 1.0)
            wys2 = gl_weights * 0.5 * x_other
            Y2, W2 = np.meshgrid(ys2, ws, indexing="ij")
            dens2 = joint_density(law, Y2 - W2, Y2)
            dfv = ex.evaluate(df_ell, {"t": s, var_name: x_other - Y2 + W2})
            b_vals[k] = float(wys2 @ (np.broadcast_to(dfv, Y2.shape) * dens2) @ wws)
        else:
            b_vals[k] = 0.0
    return a_vals, b_vals


def _cross_quadrature(params, spec, q, n_time_nodes, n_xy=64):
    """d=2 only: the mixed derivative as nested deterministic quadrature."""
    if params.d != 2:
        raise ValueError("quadrature mode requires d = 2")
    if n_time_nodes * n_xy * n_xy > MAX_QUAD_NODES:
        raise QuadratureBudgetExceeded(
            f"{n_time_nodes} x {n_xy}^2 nodes exceed the quadrature budget"
        )
    s_nodes, s_weights = _time_nodes(q.t, params.T, n_time_nodes)
    disc = np.exp(-params.rho * (s_nodes - q.t))
    total = 0.0
    for ell in range(2):
        other = 1 - ell
        df_ell = ex.differentiate(spec.f[ell], f"x{other + 1}")
        if isinstance(spec.f[ell], ex.Num) and spec.f[ell].value == 0.0:
            continue
        a_vals, b_vals = _quad_inner_kernels(
            params, spec.f[ell], df_ell, ell, other, q.x[other], q.t, s_nodes, n_xy
        )
        hdx = np.array([
            h_function_dx(
                ComponentLaw(params.mu[ell], effective_vol(params, ell), q.t, s),
                params.c[ell], q.x[ell],
            )
            for s in s_nodes
        ])
        total += float(np.sum(
            s_weights * disc * (params.c[other] * a_vals - b_vals) * hdx
        ))
    return total


def varphi_cross_second_derivative(params, spec, q, i, j, mode="quadrature",
                                   n_paths=20_000, dt=DEFAULT_DT,
                                   n_time_nodes=DEFAULT_TIME_NODES, seed=0,
                                   use_segment_max=True):
    """Mixed derivative d^2(varphi)/dx_i dx_j, i != j.

    mode="quadrature" (d=2 only) integrates the closed-form kernels;
    mode="mc" evaluates the same representation with the inner
    expectations replaced by Monte Carlo over the other components.
    """
    if i == j:
        raise ValueError("cross derivative requires i != j")
    _check_exp_moments(params, q.t)
    if mode == "quadrature":
        start = time.perf_counter()
        value = _cross_quadrature(params, spec, q, n_time_nodes)
        return EstimateResult(value=value, std_error=0.0, n_paths=0, dt=0.0,
                              seed=int(seed), wall_time=time.perf_counter() - start)
    if mode != "mc":
        raise ValueError(f"unknown mode {mode!r}")
    return _cross_mc(params, spec, q, i, j, n_paths, dt, n_time_nodes, seed,
                     use_segment_max)


def _cross_mc(params, spec, q, i, j, n_paths, dt, n_time_nodes, seed,
              use_segment_max):
    grid = make_grid(q.t, params.T, dt)
    s_nodes, s_weights = _time_nodes(q.t, params.T, n_time_nodes)
    node_idx = _node_grid_indices(s_nodes, grid)
    disc_det = np.exp(-params.rho * (s_nodes - q.t))
    hmat = _h_matrix(params, q.t, s_nodes, q.x)
    hmat_dx = _h_matrix(params, q.t, s_nodes, q.x, deriv=True)

    # symbolic derivatives of each boundary function
    def d1(expr_, axis):
        return ex.differentiate(expr_, f"x{axis + 1}")

    def worker(rng, n):
        driver, refl = _simulate(params, grid, rng, n, False, use_segment_max, q.x)
        if driver.seg_max is not None:
            sup = np.maximum.accumulate(driver.seg_max, axis=2)
            sup = np.concatenate(
                [np.zeros((n, params.d, 1)), np.maximum(sup, 0.0)], axis=2
            )
        else:
            sup = np.maximum(np.maximum.accumulate(driver.wtilde, axis=2), 0.0)
        vals = np.zeros(n)
        for ell in range(params.d):
            f_ell = spec.f[ell]
            if isinstance(f_ell, ex.Num) and f_ell.value == 0.0:
                continue
            disc = _discount(params, grid.times, q.t, refl.l, exclude=ell,
                             include_rho=False)
            disc_n = disc[:, node_idx]
            if ell == i or ell == j:
                o = j if ell == i else i
                ge = sup[:, o, node_idx] >= q.x[o]
                fv = _eval_boundary(f_ell, ell, grid.times, refl.x)[:, node_idx]
                dfv = _eval_boundary(d1(f_ell, o), ell, grid.times, refl.x)[:, node_idx]
                integrand = disc_n * (params.c[o] * fv * ge - dfv * (~ge))
                vals += integrand @ (s_weights * disc_det * hmat_dx[ell])
            else:
                gi = sup[:, i, node_idx] >= q.x[i]
                gj = sup[:, j, node_idx] >= q.x[j]
                fv = _eval_boundary(f_ell, ell, grid.times, refl.x)[:, node_idx]
                dfi = _eval_boundary(d1(f_ell, i), ell, grid.times, refl.x)[:, node_idx]
                dfj = _eval_boundary(d1(f_ell, j), ell, grid.times, refl.x)[:, node_idx]
                dfij = _eval_boundary(
                    d1(d1(f_ell, i), j), ell, grid.times, refl.x
                )[:, node_idx]
                integrand = disc_n * (
                    -params.c[i] * params.c[j] * fv * (gi & gj)
                    + params.c[i] * dfj * (gi & ~gj)
                    + params.c[j] * dfi * (gj & ~gi)
                    - dfij * (~gi & ~gj)
                )
                vals += integrand @ (s_weights * disc_det * hmat[ell])
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "cross_mc", grid.dt)


# --------------------------------------------------------------------------
# psi: homogenized problem with the cross-term source
# --------------------------------------------------------------------------

def _lattice_times(t, T, n_s):
    """Lattice times clustered near T, where the derivative decays with a
    square-root profile; the final node is exactly T."""
    u = np.linspace(0.0, 1.0, n_s + 1)
    return T - (T - t) * (1.0 - u) ** 2


def _cross_table_quadrature(params, spec, t_lat, x_nodes, n_time_nodes, n_xy=64):
    """d=2 mixed-derivative table on x_nodes[0] x x_nodes[1] at one time.

    The integrand separates into (kernel in x_other) x (h' in x_ell), so the
    whole table costs O(n_x) kernel evaluations rather than O(n_x^2).
    """
    T = params.T
    s_nodes, s_weights = _time_nodes(t_lat, T, n_time_nodes)
    disc = np.exp(-params.rho * (s_nodes - t_lat))
    table = np.zeros((x_nodes[0].size, x_nodes[1].size))
    for ell in range(2):
        other = 1 - ell
        f_ell = spec.f[ell]
        if isinstance(f_ell, ex.Num) and f_ell.value == 0.0:
            continue
        df_ell = ex.differentiate(f_ell, f"x{other + 1}")
        kern = np.empty((s_nodes.size, x_nodes[other].size))
        for xi, xo in enumerate(x_nodes[other]):
            a_vals, b_vals = _quad_inner_kernels(
                params, f_ell, df_ell, ell, other, xo, t_lat, s_nodes, n_xy
            )
            kern[:, xi] = params.c[other] * a_vals - b_vals
        hdx = np.empty((s_nodes.size, x_nodes[ell].size))
        vol = effective_vol(params, ell)
        for k, s in enumerate(s_nodes):
            hdx[k, :] = h_function_dx_vec(
                ComponentLaw(params.mu[ell], vol, t_lat, s), params.c[ell],
                x_nodes[ell],
            )
        contrib = np.einsum("q,qa,qb->ab", s_weights * disc, hdx, kern)
        table += contrib if ell == 0 else contrib.T
    return table


class CrossDerivativeLattice:
    """Cached d^2(varphi)/dx_i dx_j on a (time, space) lattice.

    Built once per (i, j) pair, then shared read-only; queries outside the
    lattice are clamped and counted.
    """

    def __init__(self, params, spec, t, x_hi, n_s=20, n_x=65, mode=None,
                 n_time_nodes=DEFAULT_TIME_NODES, n_paths=20_000, seed=0):
        mode = mode or ("quadrature" if params.d == 2 else "mc")
        self.params = params
        self.clamp_count = 0
        T = params.T
        # last slice is exactly T where varphi (hence the derivative) vanishes
        self.s_nodes = _lattice_times(t, T, n_s)
        # quadratic grading toward the boundary: the mixed derivative has a
        # boundary layer at x = 0 built from all sub-window widths
        u = np.linspace(0.0, 1.0, n_x)
        self.x_nodes = [x_hi[k] * u * u for k in range(params.d)]
        pairs = [
            (a, b)
            for a in range(params.d)
            for b in range(a + 1, params.d)
            if params.covariance()[a, b] != 0.0
        ]
        self.pairs = pairs
        self.interp = {}
        shape = (n_s + 1,) + tuple(n_x for _ in range(params.d))
        for (a, b) in pairs:
            table = np.zeros(shape)
            for si, s in enumerate(self.s_nodes[:-1]):
                if mode == "quadrature":
                    table[si] = _cross_table_quadrature(
                        params, spec, s, self.x_nodes, n_time_nodes
                    )
                else:
                    mesh = np.meshgrid(*self.x_nodes, indexing="ij")
                    flat = np.stack([m.ravel() for m in mesh], axis=1)
                    for row, xv in enumerate(flat):
                        res = varphi_cross_second_derivative(
                            params, spec, QueryPoint(t=s, x=xv), a, b, mode=mode,
                            n_time_nodes=n_time_nodes, n_paths=n_paths, seed=seed,
                        )
                        table[si].ravel()[row] = res.value
            self.interp[(a, b)] = RegularGridInterpolator(
                (self.s_nodes, *self.x_nodes), table, method="linear",
                bounds_error=False, fill_value=None,
            )

    def __call__(self, a, b, s, x):
        """Interpolated values; s is (N,), x is (N, d)."""
        if (a, b) not in self.interp:
            return np.zeros(np.asarray(s).shape)
        pts = np.column_stack([np.asarray(s).ravel(), *[x[:, k] for k in range(x.shape[1])]])
        clamped = pts.copy()
        clamped[:, 0] = np.clip(clamped[:, 0], self.s_nodes[0], self.s_nodes[-1])
        for k in range(x.shape[1]):
            clamped[:, k + 1] = np.clip(
                clamped[:, k + 1], self.x_nodes[k][0], self.x_nodes[k][-1]
            )
        n_clamped = int(np.sum(np.any(clamped != pts, axis=1)))
        if n_clamped:
            self.clamp_count += n_clamped
        return self.interp[(a, b)](clamped)


def default_lattice_bounds(params, q, spread=4.0):
    vols = np.array([effective_vol(params, i) for i in range(params.d)])
    return q.x + spread * vols * np.sqrt(params.T - q.t) + 1.0


def estimate_psi(params, spec, q, n_paths, dt=DEFAULT_DT, seed=0,
                 use_segment_max=True, dphi=None, lattice_opts=None):
    """Estimator of psi: cross-term source integral plus terminal payoff,
    on correlated drivers.

    ``dphi`` is the cross-derivative provider ``(i, j, s, x) -> values``;
    by default a cached lattice is built (nothing is built when sigma
    sigma^T is diagonal, where the source vanishes identically).
    """
    _check_exp_moments(params, q.t)
    grid = make_grid(q.t, params.T, dt)
    times = grid.times
    cov = params.covariance()
    pairs = [
        (a, b)
        for a in range(params.d)
        for b in range(a + 1, params.d)
        if cov[a, b] != 0.0
    ]
    if pairs and dphi is None:
        opts = dict(lattice_opts or {})
        x_hi = opts.pop("x_hi", default_lattice_bounds(params, q))
        lattice = CrossDerivativeLattice(params, spec, q.t, x_hi, seed=seed, **opts)
        dphi = lattice

    def worker(rng, n):
        _, refl = _simulate(params, grid, rng, n, True, use_segment_max, q.x)
        disc = _discount(params, times, q.t, refl.l)
        vals = disc[:, -1] * _eval_terminal(spec.g, refl.x[:, :, -1])
        if pairs:
            source = np.zeros((n, times.size))
            s_flat = np.broadcast_to(times[None, :], (n, times.size)).ravel()
            x_flat = refl.x.transpose(0, 2, 1).reshape(-1, params.d)
            for (a, b) in pairs:
                dvals = dphi(a, b, s_flat, x_flat) if callable(dphi) else dphi
                source += cov[a, b] * np.asarray(dvals).reshape(n, times.size)
            integrand = disc * source
            vals = vals + np.trapezoid(integrand, dx=grid.dt, axis=1)
        return _chunk_sums(vals)

    return _mc_run(worker, n_paths, seed, "psi", grid.dt)


# --------------------------------------------------------------------------
# assembled solution and boundary residual
# --------------------------------------------------------------------------

def estimate_u_decomposed(params, spec, q, n_paths, dt=DEFAULT_DT,
                          n_time_nodes=DEFAULT_TIME_NODES, seed=0,
                          use_segment_max=True, dphi=None, lattice_opts=None,
                          n_paths_psi=None):
    """u = varphi + psi with independent streams, so variances add."""
    phi = estimate_varphi_factorized(
        params, spec, q, n_paths, dt=dt, n_time_nodes=n_time_nodes, seed=seed,
        use_segment_max=use_segment_max,
    )
    psi = estimate_psi(
        params, spec, q, n_paths_psi or n_paths, dt=dt, seed=seed,
        use_segment_max=use_segment_max, dphi=dphi, lattice_opts=lattice_opts,
    )
    return phi.combine(psi)


def robin_residual(params, spec, t, i, x_minus_i, u_provider, eps):
    """Second-order one-sided Robin residual at the face x_i = 0:

    (-3 u0 + 4 u1 - u2) / (2 eps) + c_i u0 - f_i(t, x^{-i}).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x_minus_i = np.asarray(x_minus_i, dtype=float)
    xs = []
    for k in range(3):
        x = np.empty(params.d)
        others = [j for j in range(params.d) if j != i]
        x[others] = x_minus_i
        x[i] = k * eps
        xs.append(x)
    u0, u1, u2 = (u_provider(t, x) for x in xs)
    bindings = {"t": t}
    others = [j for j in range(params.d) if j != i]
    for pos, j in enumerate(others):
        bindings[f"x{j + 1}"] = x_minus_i[pos]
    f_val = float(ex.evaluate(spec.f[i], bindings))
    grad = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * eps)
    return grad + params.c[i] * u0 - f_val
