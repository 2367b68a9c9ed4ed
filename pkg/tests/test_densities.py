import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from orthantmc.densities import (
    ComponentLaw,
    check_exp_moment,
    h_function,
    h_function_dx,
    h_function_dx_vec,
    h_function_vec,
    joint_density,
    local_time_exp_moment,
    local_time_exp_moment_dx,
    running_max_cdf,
    running_max_density,
)
from orthantmc.errors import Divergent


STANDARD = ComponentLaw(mu=0.0, vol=1.0, t=0.0, s=1.0)
DRIFTED = ComponentLaw(mu=-0.8, vol=1.3, t=0.2, s=0.9)  # nu = 0.8


def test_law_window_validation():
    with pytest.raises(ValueError):
        ComponentLaw(mu=0.0, vol=0.0, t=0.0, s=1.0)
    with pytest.raises(ValueError):
        ComponentLaw(mu=0.0, vol=1.0, t=1.0, s=1.0)


def test_joint_density_point_value():
    # standard BM: p(r, y) = 2(2y - r) phi(2y - r) on y >= max(0, r)
    r, y = 0.0, 1.0
    expected = 2 * (2 * y - r) * norm.pdf(2 * y - r)
    assert joint_density(STANDARD, r, y) == pytest.approx(expected, rel=1e-12)
    assert joint_density(STANDARD, 2.0, 1.0) == 0.0   # off support
    assert joint_density(STANDARD, -1.0, -0.5) == 0.0


@pytest.mark.parametrize("law", [STANDARD, DRIFTED])
def test_joint_density_normalizes(law):
    total, err = integrate.dblquad(
        lambda r, y: joint_density(law, r, y),
        0, 30, lambda y: -30, lambda y: y, epsabs=1e-10,
    )
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("law", [STANDARD, DRIFTED])
def test_running_max_density_normalizes(law):
    total, err = integrate.quad(
        lambda r: running_max_density(law, r), 0, 40, epsabs=1e-12
    )
    assert total == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("law", [STANDARD, DRIFTED])
def test_marginalization_consistency(law):
    # integrating the joint density over the endpoint recovers the
    # running-max marginal
    for r0 in (0.1, 0.5, 1.0, 2.0):
        marginal, _ = integrate.quad(
            lambda rr: joint_density(law, rr, r0), -30, r0, epsabs=1e-12
        )
        assert marginal == pytest.approx(
            running_max_density(law, r0), abs=1e-8, rel=1e-8
        )


@pytest.mark.parametrize("law", [STANDARD, DRIFTED])
def test_cdf_matches_density(law):
    for r0 in (0.2, 0.8, 1.7):
        mass, _ = integrate.quad(
            lambda r: running_max_density(law, r), 0, r0, epsabs=1e-12
        )
        assert running_max_cdf(law, r0) == pytest.approx(mass, abs=1e-9)


def test_standard_max_closed_forms():
    # M ~ |N(0,1)|: density at 0 is sqrt(2/pi); P(M > 1) = 2(1 - Phi(1))
    assert running_max_density(STANDARD, 0.0) == pytest.approx(
        np.sqrt(2 / np.pi), rel=1e-12
    )
    assert 1 - running_max_cdf(STANDARD, 1.0) == pytest.approx(
        2 * (1 - norm.cdf(1.0)), rel=1e-12
    )


def test_local_time_exp_moment_closed_form():
    # E[(M)^+] = E|N(0,1)| = sqrt(2/pi) at c = 0, x = 0
    assert local_time_exp_moment(STANDARD, 0.0, 0.0) == pytest.approx(
        np.sqrt(2 / np.pi), rel=1e-10
    )
    # E[e^M] for M ~ |N(0,1)| equals 2 e^{1/2} Phi(1)
    assert local_time_exp_moment(STANDARD, 1.0, 0.0) == pytest.approx(
        2 * np.exp(0.5) * norm.cdf(1.0), rel=1e-10
    )


def test_local_time_exp_moment_dx_matches_difference():
    for c in (0.0, 0.7, -0.5):
        x = 0.6
        h = 1e-5
        fd = (
            local_time_exp_moment(STANDARD, c, x + h)
            - local_time_exp_moment(STANDARD, c, x - h)
        ) / (2 * h)
        assert local_time_exp_moment_dx(STANDARD, c, x) == pytest.approx(
            fd, rel=1e-5, abs=1e-8
        )


def test_h_function_closed_form_driftless():
    # c = 0, nu = 0, x = 0: d/ds E[M_s] = vol / sqrt(2 pi (s - t))
    for s in (0.3, 0.7, 1.5):
        law = ComponentLaw(0.0, 1.0, 0.0, s)
        assert h_function(law, 0.0, 0.0) == pytest.approx(
            1.0 / np.sqrt(2 * np.pi * s), rel=1e-3
        )


def test_h_function_consistent_with_cumulative_moment():
    # integrating h over s recovers the c = 0 moment at s = 1
    xs = 0.4
    total, _ = integrate.quad(
        lambda s: h_function(ComponentLaw(0.0, 1.0, 0.0, s), 0.0, xs),
        1e-6, 1.0, limit=200,
    )
    assert total == pytest.approx(
        local_time_exp_moment(STANDARD, 0.0, xs), rel=1e-4
    )


def test_vectorized_functions_match_scalar():
    xs = np.array([0.0, 0.3, 1.1, 2.5])
    for c in (0.0, 0.6, -0.4):
        hv = h_function_vec(DRIFTED, c, xs)
        hdxv = h_function_dx_vec(DRIFTED, c, xs)
        for k, x in enumerate(xs):
            assert hv[k] == pytest.approx(h_function(DRIFTED, c, x),
                                          rel=1e-6, abs=1e-9)
            assert hdxv[k] == pytest.approx(h_function_dx(DRIFTED, c, x),
                                            rel=1e-6, abs=1e-9)


def test_divergence_guard():
    law = ComponentLaw(mu=-5.0, vol=3.0, t=0.0, s=20.0)  # huge nu tau
    with pytest.raises(Divergent):
        check_exp_moment(law, 50.0)
    with pytest.raises(Divergent):
        local_time_exp_moment(law, 50.0, 0.0)


def test_moment_monotone_decreasing_in_x():
    vals = [local_time_exp_moment(DRIFTED, 0.8, x) for x in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] >= 0.0
