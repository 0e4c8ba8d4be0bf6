"""Closed-form phase alignment and the trajectory-only rate expressions.

Aligning every element for a designated user collapses the cascaded channel
magnitude to g0*L/(d_ap*d_user), which depends on the platform position
alone; eavesdropper links are then bounded by the same coherent form.
"""

from __future__ import annotations

import numpy as np

from .channel import geometry, rate_from_gain2
from .scenario import Scenario

TWO_PI = 2.0 * np.pi


def optimal_phases(
    uav_xy,
    user_xy,
    ap_xy,
    *,
    altitude: float,
    num_elements: int,
    spacing_ratio: float,
    omega: float = 0.0,
) -> np.ndarray:
    """Per-element phases combining the user's reflected paths coherently at the AP.

    Broadcasts over leading axes of `uav_xy`; the trailing output axis has one
    entry per element, wrapped to [0, 2*pi).
    """
    g_user = geometry(uav_xy, user_xy, altitude)
    g_ap = geometry(uav_xy, ap_xy, altitude)
    slope = g_user.cos_to_irs - g_ap.cos_from_irs
    l = np.arange(num_elements)
    theta = TWO_PI * spacing_ratio * l * np.asarray(slope)[..., None] + omega
    return np.mod(theta, TWO_PI)


def quantize_phases(theta, levels: int) -> np.ndarray:
    """Round each phase to the nearest grid point of {0, dt, ..., (Q-1)dt}, ties down."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    theta = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    step = TWO_PI / levels
    idx = np.ceil(theta / step - 0.5).astype(int) % levels
    return idx * step


def rate_user_trajectory_form(
    power,
    uav_xy,
    user_xy,
    ap_xy,
    *,
    altitude: float,
    num_elements: int,
    ref_gain: float,
    sigma2: float,
) -> np.ndarray:
    """Uplink rate under coherent phases; a function of the trajectory only."""
    d_user = geometry(uav_xy, user_xy, altitude).distance
    d_ap = geometry(uav_xy, ap_xy, altitude).distance
    gain2 = (ref_gain * num_elements) ** 2 / (d_ap * d_user) ** 2
    return rate_from_gain2(power, gain2, sigma2)


def rate_eve_trajectory_bound(
    power,
    uav_xy,
    user_xy,
    eve_xy,
    *,
    altitude: float,
    num_elements: int,
    ref_gain: float,
    sigma2: float,
) -> np.ndarray:
    """Worst-case (coherently combined) leakage rate at an internal eavesdropper."""
    d_user = geometry(uav_xy, user_xy, altitude).distance
    d_eve = geometry(uav_xy, eve_xy, altitude).distance
    gain2 = (ref_gain * num_elements) ** 2 / (d_eve * d_user) ** 2
    return rate_from_gain2(power, gain2, sigma2)


def trajectory_form_gains(positions: np.ndarray, scen: Scenario):
    """Coherent squared gains for every user/slot along a track.

    positions: (N, 2).  Returns (gain_ap (K, N), gain_eve (K, K, N)) where
    gain_ap[k, n] = (g0*L)^2/(d_ap^2 d_k^2) and gain_eve[k, j, n] uses the
    coherent upper bound at eavesdropper j (diagonal zeroed).
    """
    positions = np.asarray(positions, dtype=float)
    K = scen.num_users
    d_users = geometry(positions[None, :, :], scen.user_positions[:, None, :], scen.uav_altitude).distance
    d_ap = geometry(positions, scen.ap_xy, scen.uav_altitude).distance
    c2 = (scen.ref_gain * scen.num_elements) ** 2
    gain_ap = c2 / (d_ap[None, :] * d_users) ** 2
    gain_eve = c2 / (d_users[None, :, :] * d_users[:, None, :]) ** 2
    for k in range(K):
        gain_eve[k, k, :] = 0.0
    return gain_ap, gain_eve


def schedule_phases(positions: np.ndarray, owners: np.ndarray, scen: Scenario) -> np.ndarray:
    """Phase schedule (N, L) aligning each slot for its designated user."""
    positions = np.asarray(positions, dtype=float)
    owners = np.asarray(owners, dtype=int)
    theta = optimal_phases(
        positions,
        scen.user_positions[owners],
        scen.ap_xy,
        altitude=scen.uav_altitude,
        num_elements=scen.num_elements,
        spacing_ratio=scen.element_spacing_ratio,
    )
    if scen.phase_levels is not None:
        theta = quantize_phases(theta, scen.phase_levels)
    return theta
