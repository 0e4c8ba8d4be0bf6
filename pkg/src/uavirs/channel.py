"""Line-of-sight geometry, steering vectors, cascaded channels, and rates.

The reflecting surface is a uniform linear array along the x axis; every
link is a pure inverse-square LoS path through it (no direct ground-to-AP
component).  All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class ChannelGeometry:
    """Distance and x-axis direction cosines between the platform and a ground node."""

    distance: np.ndarray
    cos_to_irs: np.ndarray  # AoA cosine of the node -> surface path
    cos_from_irs: np.ndarray  # AoA cosine of the surface -> node path


def geometry(uav_xy, node_xy, altitude: float) -> ChannelGeometry:
    uav_xy = np.asarray(uav_xy, dtype=float)
    node_xy = np.asarray(node_xy, dtype=float)
    delta = uav_xy - node_xy
    d = np.sqrt(delta[..., 0] ** 2 + delta[..., 1] ** 2 + altitude**2)
    cos_to = delta[..., 0] / d
    return ChannelGeometry(distance=d, cos_to_irs=cos_to, cos_from_irs=-cos_to)


def channel_vector(
    geom: ChannelGeometry,
    num_elements: int,
    spacing_ratio: float,
    ref_gain: float,
    direction: str = "to_irs",
) -> np.ndarray:
    """Constant-modulus steering vector with per-element magnitude sqrt(g0)/d."""
    if direction == "to_irs":
        cos = geom.cos_to_irs
    elif direction == "from_irs":
        cos = geom.cos_from_irs
    else:
        raise ValueError(f"direction must be 'to_irs' or 'from_irs', got {direction!r}")
    l = np.arange(num_elements)
    phase = -2.0 * np.pi * spacing_ratio * l * np.asarray(cos)[..., None]
    amp = np.sqrt(ref_gain) / geom.distance
    return amp[..., None] * np.exp(1j * phase)


def effective_channel(
    uav_xy,
    phases,
    from_xy,
    to_xy,
    *,
    altitude: float,
    num_elements: int,
    spacing_ratio: float,
    ref_gain: float,
) -> np.ndarray:
    """Cascaded scalar channel from `from_xy` to `to_xy` via the surface."""
    g_from = geometry(uav_xy, from_xy, altitude)
    g_to = geometry(uav_xy, to_xy, altitude)
    h_from = channel_vector(g_from, num_elements, spacing_ratio, ref_gain, "to_irs")
    h_to = channel_vector(g_to, num_elements, spacing_ratio, ref_gain, "from_irs")
    phases = np.asarray(phases, dtype=float)
    return np.sum(np.conj(h_to) * np.exp(1j * phases) * h_from, axis=-1)


def achievable_rate(power, effective_gain, sigma2: float) -> np.ndarray:
    """Spectral efficiency log2(1 + power*|g|^2/sigma2) in bits/s/Hz."""
    gain2 = np.abs(np.asarray(effective_gain)) ** 2
    return np.log2(1.0 + np.asarray(power) * gain2 / sigma2)


def rate_from_gain2(power, gain2, sigma2: float) -> np.ndarray:
    """Same as `achievable_rate` but on a precomputed squared-magnitude gain."""
    return np.log2(1.0 + np.asarray(power) * np.asarray(gain2) / sigma2)


def secrecy_rate_uplink(
    power: float, uav_xy, phases, user_index: int, scen: Scenario
) -> tuple[float, int | None]:
    """Worst-pair secrecy rate of one user's uplink and the binding eavesdropper.

    Evaluated with the actual phase schedule (exact cascaded channels).  With a
    single user there is no eavesdropper and the plain rate is returned.
    """
    kw = dict(
        altitude=scen.uav_altitude,
        num_elements=scen.num_elements,
        spacing_ratio=scen.element_spacing_ratio,
        ref_gain=scen.ref_gain,
    )
    user_xy = scen.user_positions[user_index]
    g_ap = effective_channel(uav_xy, phases, user_xy, scen.ap_xy, **kw)
    r_ap = float(achievable_rate(power, g_ap, scen.sigma2))
    if scen.num_users == 1:
        return r_ap, None
    best = np.inf
    best_j = None
    for j in range(scen.num_users):
        if j == user_index:
            continue
        g_j = effective_channel(uav_xy, phases, user_xy, scen.user_positions[j], **kw)
        r_j = float(achievable_rate(power, g_j, scen.sigma2))
        val = max(0.0, r_ap - r_j)
        if val < best:
            best, best_j = val, j
    return best, best_j


def exact_gain_tables(positions: np.ndarray, phases: np.ndarray, scen: Scenario):
    """Squared cascaded gains for every user/slot under a given phase schedule.

    positions: (N, 2) platform track, phases: (N, L).  Returns
    (gain_ap (K, N), gain_eve (K, K, N)); gain_eve[k, j] is user k's leakage
    gain at user j, with the diagonal set to zero.
    """
    positions = np.asarray(positions, dtype=float)
    phases = np.asarray(phases, dtype=float)
    K = scen.num_users
    nodes = np.vstack([scen.user_positions, scen.ap_xy[None, :]])  # (K+1, 2)
    geom = geometry(positions[None, :, :], nodes[:, None, :], scen.uav_altitude)
    # phi[m, n]: AoA cosine node m -> surface; distance d[m, n]
    phi = geom.cos_to_irs
    d = geom.distance
    coef = scen.steer_coef * np.arange(scen.num_elements)  # (L,)
    # transmitter k, receiver m: exponent theta + coef*(phi_Um - phi_kU), phi_Um = -phi[m]
    diff = -phi[None, :, :] - phi[:K, None, :]  # (K, K+1, N)
    expo = phases[None, None, :, :] + coef[None, None, None, :] * diff[..., None]
    ssum = np.abs(np.exp(1j * expo).sum(axis=-1)) ** 2  # (K, K+1, N)
    prod = (d[None, :K + 1, :] * d[:K, None, :]) ** 2
    gains = scen.ref_gain**2 * ssum / prod
    gain_ap = gains[:, K, :]
    gain_eve = gains[:, :K, :].copy()
    for k in range(K):
        gain_eve[k, k, :] = 0.0
    return gain_ap, gain_eve
