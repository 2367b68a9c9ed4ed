"""Closed-form laws for one driver component.

The driver Wtilde is a Brownian motion with drift nu = -mu and volatility
vol over the window [t, s].  Everything here follows from the reflection
principle and Girsanov: the joint density of (endpoint, running max), the
running-max density and CDF, exponential moments of the boundary local
time (M - x)^+, and their s-derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import Divergent, NearSingular

# Truncation spread for improper integrals: Gaussian mass beyond
# TAIL_SIGMAS standard deviations is far below 1e-10.
TAIL_SIGMAS = 12.0

# Largest exponent allowed inside exp() before declaring divergence.
MAX_EXPONENT = 500.0


@dataclass(frozen=True)
class ComponentLaw:
    """Window [t, s] of one driver component; drift of Wtilde is -mu."""

    mu: float
    vol: float
    t: float
    s: float

    def __post_init__(self):
        if not self.vol > 0:
            raise ValueError("vol must be positive")
        if not self.s > self.t:
            raise ValueError("s must exceed t")

    @property
    def nu(self):
        return -self.mu

    @property
    def tau(self):
        return self.s - self.t


def joint_density(law, r, y):
    """Density of (Wtilde_s, max Wtilde) at endpoint r and max y.

    Zero off the support y >= max(0, r).
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    nu, v2, tau = law.nu, law.vol ** 2, law.tau
    with np.errstate(over="ignore", invalid="ignore"):
        core = (
            2.0 * (2.0 * y - r)
            / (v2 * np.sqrt(2.0 * np.pi * v2 * tau ** 3))
            * np.exp(
                nu * r / v2
                - nu ** 2 * tau / (2.0 * v2)
                - (2.0 * y - r) ** 2 / (2.0 * v2 * tau)
            )
        )
    support = (y >= 0) & (y >= r)
    out = np.where(support, core, 0.0)
    return out if out.ndim else float(out)


def running_max_density(law, r):
    """Density of max Wtilde at r >= 0 (the marginal of joint_density)."""
    r = np.asarray(r, dtype=float)
    nu, vol, tau = law.nu, law.vol, law.tau
    sd = vol * np.sqrt(tau)
    z1 = (r - nu * tau) / sd
    core = 2.0 * norm.pdf(z1) / sd - (2.0 * nu / vol ** 2) * np.exp(
        np.minimum(2.0 * nu * r / vol ** 2, MAX_EXPONENT)
    ) * norm.cdf((-r - nu * tau) / sd)
    out = np.where(r >= 0, core, 0.0)
    return out if out.ndim else float(out)


def running_max_cdf(law, r):
    """P(max Wtilde <= r)."""
    r = np.asarray(r, dtype=float)
    nu, vol, tau = law.nu, law.vol, law.tau
    sd = vol * np.sqrt(tau)
    core = norm.cdf((r - nu * tau) / sd) - np.exp(
        np.minimum(2.0 * nu * r / vol ** 2, MAX_EXPONENT)
    ) * norm.cdf((-r - nu * tau) / sd)
    out = np.where(r >= 0, core, 0.0)
    return out if out.ndim else float(out)


def _upper_limit(law, c, x):
    """Truncation point with integrand tail mass below ~1e-10."""
    nu, vol, tau = law.nu, law.vol, law.tau
    shift = max(nu, 0.0) * tau + max(c, 0.0) * vol ** 2 * tau
    return max(x, 0.0) + shift + TAIL_SIGMAS * vol * np.sqrt(tau)


def check_exp_moment(law, c):
    """Raise Divergent when exp(c L) would overflow on this window."""
    peak = c * max(law.nu, 0.0) * law.tau + 0.5 * c * c * law.vol ** 2 * law.tau
    if peak > MAX_EXPONENT:
        raise Divergent(
            f"exp moment coefficient c={c} too large for this window "
            f"(exponent ~{peak:.1f})"
        )


# Fixed Gauss-Legendre rule: the integration error then varies smoothly
# with s, which keeps the numerical s-derivatives in h_function stable.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(192)


def _gl_integral(func, lo, hi):
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    r = mid + half * _GL_NODES
    return half * float(np.sum(_GL_WEIGHTS * func(r)))


def local_time_exp_moment(law, c, x):
    """E[exp(c (M - x)^+)] for c != 0; E[(M - x)^+] for c == 0."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    hi = _upper_limit(law, c, x)
    if c == 0.0:
        return _gl_integral(lambda r: (r - x) * running_max_density(law, r), x, hi)
    check_exp_moment(law, c)
    tail = _gl_integral(
        lambda r: np.exp(c * (r - x)) * running_max_density(law, r), x, hi
    )
    return running_max_cdf(law, x) + tail


def local_time_exp_moment_dx(law, c, x):
    """d/dx of local_time_exp_moment: -c * E[exp(cL) 1_{M>x}] for c != 0,
    -P(M > x) for c == 0."""
    if c == 0.0:
        return -(1.0 - running_max_cdf(law, x))
    check_exp_moment(law, c)
    hi = _upper_limit(law, c, x)
    tail = _gl_integral(
        lambda r: np.exp(c * (r - x)) * running_max_density(law, r), x, hi
    )
    return -c * tail


def _ds_derivative(func, law, c, x):
    """Central difference in s with Richardson refinement.

    Step starts at max(1e-5, 1e-4 (s - t)) and halves until the estimate
    moves by less than 1e-6 relative or the step floor is reached.
    """
    tau = law.tau
    if tau < 1e-12:
        raise NearSingular(f"s - t = {tau:.3g} too small for the s-derivative")
    step = min(max(1e-5, 1e-4 * tau), 0.45 * tau)
    prev = None
    for _ in range(12):
        up = ComponentLaw(law.mu, law.vol, law.t, law.s + step)
        dn = ComponentLaw(law.mu, law.vol, law.t, law.s - step)
        est = (func(up, c, x) - func(dn, c, x)) / (2.0 * step)
        if prev is not None:
            # one Richardson extrapolation level (central diff is O(h^2))
            refined = est + (est - prev[1]) / 3.0
            if abs(refined - prev[0]) <= 1e-6 * (1.0 + abs(refined)):
                return refined
            prev = (refined, est)
        else:
            prev = (est, est)
        step *= 0.5
        if step < 1e-7 * tau:
            break
    return prev[0]


def h_function(law, c, x):
    """s-derivative of the local-time moment:

    h = (1/c) d/ds E[exp(c L_s)]   when c != 0,
    h = d/ds E[L_s]                when c == 0.

    For c != 0 the (1/c) factor cancels against the dE[e^{cL}] measure, so
    both branches integrate the same way against time.
    """
    if c == 0.0:
        return _ds_derivative(local_time_exp_moment, law, 0.0, x)
    check_exp_moment(law, c)
    return _ds_derivative(local_time_exp_moment, law, c, x) / c


def h_function_dx(law, c, x):
    """x-derivative of h_function (the kernel of mixed-derivative terms)."""
    if c == 0.0:
        return _ds_derivative(local_time_exp_moment_dx, law, 0.0, x)
    check_exp_moment(law, c)
    return _ds_derivative(local_time_exp_moment_dx, law, c, x) / c


# -- vectorized-over-x variants (used to fill lattices) ---------------------

def _gl_integral_vec(func, lo, hi):
    """Per-row Gauss-Legendre integral; lo, hi are (n,) arrays."""
    mid = 0.5 * (hi + lo)[:, None]
    half = 0.5 * (hi - lo)[:, None]
    r = mid + half * _GL_NODES[None, :]
    return half[:, 0] * np.sum(_GL_WEIGHTS[None, :] * func(r), axis=1)


def local_time_exp_moment_vec(law, c, xs):
    """local_time_exp_moment at every x in ``xs`` (nonnegative array)."""
    xs = np.asarray(xs, dtype=float)
    hi = np.array([_upper_limit(law, c, x) for x in xs])
    if c == 0.0:
        return _gl_integral_vec(
            lambda r: (r - xs[:, None]) * running_max_density(law, r), xs, hi
        )
    check_exp_moment(law, c)
    tail = _gl_integral_vec(
        lambda r: np.exp(c * (r - xs[:, None])) * running_max_density(law, r), xs, hi
    )
    return running_max_cdf(law, xs) + tail


def local_time_exp_moment_dx_vec(law, c, xs):
    xs = np.asarray(xs, dtype=float)
    if c == 0.0:
        return -(1.0 - running_max_cdf(law, xs))
    check_exp_moment(law, c)
    hi = np.array([_upper_limit(law, c, x) for x in xs])
    tail = _gl_integral_vec(
        lambda r: np.exp(c * (r - xs[:, None])) * running_max_density(law, r), xs, hi
    )
    return -c * tail


def _ds_derivative_vec(func, law, c, xs):
    """Vectorized s-derivative: central differences at three step sizes with
    two Richardson levels (O(h^6))."""
    tau = law.tau
    if tau < 1e-12:
        raise NearSingular(f"s - t = {tau:.3g} too small for the s-derivative")
    step = min(max(1e-5, 1e-4 * tau), 0.45 * tau)

    def central(h):
        up = ComponentLaw(law.mu, law.vol, law.t, law.s + h)
        dn = ComponentLaw(law.mu, law.vol, law.t, law.s - h)
        return (func(up, c, xs) - func(dn, c, xs)) / (2.0 * h)

    d1, d2, d3 = central(step), central(step / 2), central(step / 4)
    r1 = d2 + (d2 - d1) / 3.0
    r2 = d3 + (d3 - d2) / 3.0
    return r2 + (r2 - r1) / 15.0


def h_function_vec(law, c, xs):
    if c == 0.0:
        return _ds_derivative_vec(local_time_exp_moment_vec, law, 0.0, xs)
    check_exp_moment(law, c)
    return _ds_derivative_vec(local_time_exp_moment_vec, law, c, xs) / c


def h_function_dx_vec(law, c, xs):
    if c == 0.0:
        return _ds_derivative_vec(local_time_exp_moment_dx_vec, law, 0.0, xs)
    check_exp_moment(law, c)
    return _ds_derivative_vec(local_time_exp_moment_dx_vec, law, c, xs) / c
