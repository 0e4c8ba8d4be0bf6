import numpy as np
import pytest

from uavirs.channel import achievable_rate, effective_channel
from uavirs.phases import (
    optimal_phases,
    quantize_phases,
    rate_eve_trajectory_bound,
    rate_user_trajectory_form,
    trajectory_form_gains,
)

from test_channel import CHAN_KW, fig2_scenario

RATE_KW = dict(altitude=90.0, num_elements=16, ref_gain=10**-3.5, sigma2=9.95267926383742e-16)


def test_symmetric_geometry_gives_constant_phases():
    # user and AP mirrored across the platform: equal direction cosines
    theta = optimal_phases([0.0, 0.0], [50.0, 10.0], [-50.0, -10.0],
                           altitude=90.0, num_elements=16, spacing_ratio=0.5, omega=0.7)
    np.testing.assert_allclose(theta, 0.7, atol=1e-12)


def test_first_element_is_reference():
    theta = optimal_phases([7.0, -3.0], [-120.0, 120.0], [0.0, 0.0],
                           altitude=90.0, num_elements=16, spacing_ratio=0.5)
    assert theta[0] == 0.0


def test_element2_phase_matches_grid_search():
    uav = np.array([0.0, 0.0])
    user = np.array([-120.0, 120.0])
    ap = np.array([0.0, 0.0])
    theta = optimal_phases(uav, user, ap, altitude=90.0, num_elements=2, spacing_ratio=0.5)
    kw = dict(CHAN_KW)
    kw["num_elements"] = 2
    grid = np.linspace(0, 2 * np.pi, 1000, endpoint=False)
    mags = [abs(effective_channel(uav, np.array([0.0, t]), user, ap, **kw)) for t in grid]
    best = grid[int(np.argmax(mags))]
    assert theta[1] == pytest.approx(best, abs=2 * np.pi / 1000)
    assert theta[1] == pytest.approx(np.pi * 0.6246950475544243 % (2 * np.pi), rel=1e-9)


def test_omega_invariance_of_magnitude():
    uav = np.array([25.0, -60.0])
    user = np.array([-120.0, 120.0])
    ap = np.array([0.0, 0.0])
    mags = []
    for omega in np.linspace(0, 2 * np.pi, 9):
        theta = optimal_phases(uav, user, ap, altitude=90.0, num_elements=16,
                               spacing_ratio=0.5, omega=omega)
        mags.append(abs(effective_channel(uav, theta, user, ap, **CHAN_KW)))
    np.testing.assert_allclose(mags, mags[0], rtol=1e-12)


def test_quantize_reference_points():
    assert quantize_phases(np.pi / 2, 4) == pytest.approx(np.pi / 2)
    assert quantize_phases(3 * np.pi / 4, 2) == pytest.approx(np.pi)
    # ties round toward the lower level
    assert quantize_phases(np.pi / 4, 4) == pytest.approx(0.0)
    # wrap-around: just below 2*pi snaps to level 0
    assert quantize_phases(2 * np.pi - 0.01, 16) == pytest.approx(0.0)
    rng = np.random.default_rng(0)
    theta = rng.uniform(0, 2 * np.pi, 500)
    q = quantize_phases(theta, 8)
    err = np.abs(np.angle(np.exp(1j * (theta - q))))
    assert err.max() <= np.pi / 8 + 1e-12
    with pytest.raises(ValueError):
        quantize_phases(theta, 1)


def test_quantization_gain_monotone_in_levels():
    uav = np.array([25.0, -35.0])
    user = np.array([-120.0, 120.0])
    ap = np.array([0.0, 0.0])
    theta = optimal_phases(uav, user, ap, altitude=90.0, num_elements=16, spacing_ratio=0.5)
    mags = []
    for q in (2, 4, 8, 16, 64):
        mags.append(abs(effective_channel(uav, quantize_phases(theta, q), user, ap, **CHAN_KW)))
    assert np.all(np.diff(mags) >= -1e-15)
    full = abs(effective_channel(uav, theta, user, ap, **CHAN_KW))
    assert mags[-1] == pytest.approx(full, rel=1e-3)


def test_trajectory_form_equals_rate_with_optimal_phases():
    rng = np.random.default_rng(1)
    user = np.array([-120.0, 120.0])
    ap = np.array([0.0, 0.0])
    for _ in range(25):
        uav = rng.uniform(-150, 150, 2)
        power = rng.uniform(0, 5)
        theta = optimal_phases(uav, user, ap, altitude=90.0, num_elements=16, spacing_ratio=0.5)
        g = effective_channel(uav, theta, user, ap, **CHAN_KW)
        direct = achievable_rate(power, g, RATE_KW["sigma2"])
        form = rate_user_trajectory_form(power, uav, user, ap, **RATE_KW)
        assert form == pytest.approx(float(direct), rel=1e-12)
    assert rate_user_trajectory_form(0.0, [0.0, 0.0], user, ap, **RATE_KW) == 0.0
    assert rate_user_trajectory_form(1.0, [0.0, 0.0], user, ap, **RATE_KW) == pytest.approx(
        6.443896180786106, rel=1e-9
    )


def test_eve_bound_dominates_exact_rate():
    rng = np.random.default_rng(2)
    user = np.array([-120.0, 120.0])
    eve = np.array([80.0, -40.0])
    uav = np.array([10.0, 20.0])
    draws = rng.uniform(0, 2 * np.pi, size=(10_000, 16))
    gains = np.abs(effective_channel(uav, draws, user, eve, **CHAN_KW)) ** 2
    exact = np.log2(1 + 1.7 * gains / RATE_KW["sigma2"])
    bound = rate_eve_trajectory_bound(1.7, uav, user, eve, **RATE_KW)
    assert np.all(exact <= bound + 1e-12)
    # an eavesdropper at the AP position reproduces the legitimate form
    same = rate_eve_trajectory_bound(1.7, uav, user, np.array([0.0, 0.0]), **RATE_KW)
    legit = rate_user_trajectory_form(1.7, uav, user, np.array([0.0, 0.0]), **RATE_KW)
    assert same == pytest.approx(legit, rel=1e-12)
    assert rate_eve_trajectory_bound(0.0, uav, user, eve, **RATE_KW) == 0.0


def test_trajectory_form_gain_tables():
    scen = fig2_scenario()
    pos = np.array([[0.0, 0.0], [-60.0, 60.0], [30.0, -10.0]])
    gain_ap, gain_eve = trajectory_form_gains(pos, scen)
    assert gain_ap.shape == (4, 3)
    assert gain_eve.shape == (4, 4, 3)
    for n in range(3):
        for k in range(4):
            r = rate_user_trajectory_form(
                1.0, pos[n], scen.user_positions[k], scen.ap_xy,
                altitude=scen.uav_altitude, num_elements=scen.num_elements,
                ref_gain=scen.ref_gain, sigma2=scen.sigma2,
            )
            assert np.log2(1 + gain_ap[k, n] / scen.sigma2) == pytest.approx(float(r), rel=1e-12)
        assert np.all(gain_eve[np.arange(4), np.arange(4), n] == 0)
