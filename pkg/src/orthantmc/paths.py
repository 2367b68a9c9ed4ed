"""Reflected path simulation via the explicit Skorokhod map.

Each component i of the state follows a reflected Brownian motion with
drift.  Writing Wtilde_s = -mu_i (s-t) - sum_k sigma_ik (B^k_s - B^k_t),
the reflected state and its boundary local time are

    L_s = (sup_{l<=s} Wtilde_l - x)^+ ,   X_s = x - Wtilde_s + L_s .

Path batches are stored with axes (path, component, time index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NegativeStart
from .model import effective_vol


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("T must exceed t0")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_steps

    @property
    def times(self):
        return np.linspace(self.t0, self.T, self.n_steps + 1)


def make_grid(t0, T, dt):
    """Uniform grid with n_steps = ceil((T - t0)/dt)."""
    n = max(1, int(np.ceil((T - t0) / dt - 1e-12)))
    return TimeGrid(t0=t0, T=T, n_steps=n)


@dataclass
class DriverPath:
    """Batch of drifted drivers Wtilde; optional exact per-segment maxima."""

    wtilde: np.ndarray            # (n_paths, d, n_steps+1), wtilde[..., 0] == 0
    seg_max: np.ndarray | None = None   # (n_paths, d, n_steps)

    @property
    def n_paths(self):
        return self.wtilde.shape[0]

    @property
    def n_steps(self):
        return self.wtilde.shape[2] - 1


@dataclass
class ReflectedPath:
    x: np.ndarray  # (n_paths, d, n_steps+1), nonnegative
    l: np.ndarray  # (n_paths, d, n_steps+1), nondecreasing, starts at 0


def simulate_drivers_correlated(params, grid, rng, n_paths):
    """All components share one m-dimensional Brownian motion.

    Increment covariance is (sigma sigma^T) * dt and mean -mu * dt.
    """
    dt = grid.dt
    db = rng.standard_normal((n_paths, grid.n_steps, params.m)) * np.sqrt(dt)
    # Wtilde_i increments: -mu_i dt - sum_k sigma_ik dB_k
    dw = -params.mu[None, None, :] * dt - db @ params.sigma.T
    wtilde = np.zeros((n_paths, params.d, grid.n_steps + 1))
    np.cumsum(dw.transpose(0, 2, 1), axis=2, out=wtilde[:, :, 1:])
    return DriverPath(wtilde=wtilde)


def simulate_drivers_independent(params, grid, rng, n_paths):
    """Each component gets its own Brownian drivers; increments are
    independent across components with variance (effective vol)^2 * dt."""
    dt = grid.dt
    vols = np.array([effective_vol(params, i) for i in range(params.d)])
    z = rng.standard_normal((n_paths, params.d, grid.n_steps))
    dw = -params.mu[None, :, None] * dt - vols[None, :, None] * z * np.sqrt(dt)
    wtilde = np.zeros((n_paths, params.d, grid.n_steps + 1))
    np.cumsum(dw, axis=2, out=wtilde[:, :, 1:])
    return DriverPath(wtilde=wtilde)


def sample_segment_max(w_left, w_right, dt, vol, rng):
    """Exact draw of the Brownian-bridge maximum over one segment.

    M = (a + b + sqrt((b-a)^2 - 2 vol^2 dt log U)) / 2 with U uniform(0,1);
    always M >= max(a, b).  Accepts scalars or arrays.
    """
    w_left = np.asarray(w_left, dtype=float)
    w_right = np.asarray(w_right, dtype=float)
    u = rng.random(size=np.broadcast(w_left, w_right).shape)
    u = np.maximum(u, np.finfo(float).tiny)  # avoid log(0)
    disc = (w_right - w_left) ** 2 - 2.0 * (vol ** 2) * dt * np.log(u)
    return 0.5 * (w_left + w_right + np.sqrt(disc))


def attach_segment_max(driver, params, grid, rng):
    """Sample exact per-segment maxima for every component of the batch.

    The bridge law only uses each component's marginal volatility, so the
    same routine serves correlated and independent drivers.
    """
    vols = np.array([effective_vol(params, i) for i in range(params.d)])
    left = driver.wtilde[:, :, :-1]
    right = driver.wtilde[:, :, 1:]
    u = rng.random(size=left.shape)
    u = np.maximum(u, np.finfo(float).tiny)
    var_dt = (vols[None, :, None] ** 2) * grid.dt
    disc = (right - left) ** 2 - 2.0 * var_dt * np.log(u)
    driver.seg_max = 0.5 * (left + right + np.sqrt(disc))
    return driver


def _running_max(driver, use_segment_max):
    """sup_{[t, s_k]} Wtilde per component, including the start value 0."""
    w = driver.wtilde
    if use_segment_max:
        if driver.seg_max is None:
            raise ValueError("segment maxima requested but not attached")
        base = np.maximum.accumulate(driver.seg_max, axis=2)
        out = np.empty_like(w)
        out[:, :, 0] = 0.0
        out[:, :, 1:] = np.maximum(base, 0.0)
        return out
    run = np.maximum.accumulate(w, axis=2)
    return np.maximum(run, 0.0)


def skorokhod_reflect(x0, driver, use_segment_max=False):
    """Apply the explicit reflection map to a driver batch.

    x0 is the starting point, shape (d,) with nonnegative entries.
    """
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 < 0):
        raise NegativeStart(f"start point must lie in the orthant, got {x0}")
    sup = _running_max(driver, use_segment_max)
    l = np.maximum(sup - x0[None, :, None], 0.0)
    x = x0[None, :, None] - driver.wtilde + l
    return ReflectedPath(x=x, l=l)


def stieltjes_against_L(values, l):
    """Right-endpoint partition sum  sum_k values[k] (L_k - L_{k-1}).

    Works on matching trailing time axes of arbitrary batch shape.
    """
    values = np.asarray(values, dtype=float)
    l = np.asarray(l, dtype=float)
    if values.shape[-1] != l.shape[-1]:
        raise LengthMismatch(
            f"values length {values.shape[-1]} != local time length {l.shape[-1]}"
        )
    return np.sum(values[..., 1:] * np.diff(l, axis=-1), axis=-1)


NOT_HIT = -1


def first_hitting_index(wtilde_i, seg_max_i, level):
    """First grid index where the running max of one component reaches
    ``level``; segment-max aware when ``seg_max_i`` is given.

    Accepts a single path (1-D) or a batch (paths, n_steps+1); returns an
    int index per path, NOT_HIT (-1) if the level is never reached.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    w = np.atleast_2d(np.asarray(wtilde_i, dtype=float))
    n_steps = w.shape[1] - 1
    if seg_max_i is not None:
        seg = np.atleast_2d(np.asarray(seg_max_i, dtype=float))
        run = np.maximum.accumulate(seg, axis=1)
        hit = np.concatenate(
            [np.zeros((w.shape[0], 1), dtype=bool), run >= level], axis=1
        )
        hit[:, 0] = 0.0 >= level
    else:
        run = np.maximum(np.maximum.accumulate(w, axis=1), 0.0)
        hit = run >= level
    any_hit = hit.any(axis=1)
    idx = np.argmax(hit, axis=1)
    idx = np.where(any_hit, idx, NOT_HIT)
    if np.ndim(wtilde_i) == 1:
        return int(idx[0])
    return idx
