"""Convexification toolbox for the alternating optimization.

Two generic operators (a difference-of-concave lower bound and the
square-expansion bounds on products of convex nonnegative functions) plus
every concrete instantiation the planner needs.  Each concrete surrogate
has a `*_grads` companion returning the same value together with analytic
partial derivatives; all functions broadcast over leading axes.

Every surrogate is globally valid (correct inequality direction) and tight
to first order at its linearization point.
"""

from __future__ import annotations

import numpy as np

LN2 = float(np.log(2.0))


def _dot(a, b):
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def dc_lower_bound(f_plus, f_minus, x, mu):
    """Lower bound on f_plus(x) - f_minus(x) for concave f_plus, f_minus.

    The callables return (value, gradient); the concave subtrahend is
    linearized at `mu`, which keeps the bound concave and tight at x = mu.
    """
    vp, _ = f_plus(x)
    vm, gm = f_minus(mu)
    if gm is None or not np.all(np.isfinite(np.asarray(gm, dtype=float))):
        raise ValueError("gradient of the subtracted term unavailable at the linearization point")
    return vp - vm - _dot(gm, np.asarray(x, dtype=float) - np.asarray(mu, dtype=float))


def biconvex_upper(p1, p2, x1, x2, mu1, mu2):
    """Upper bound on p1(x1)*p2(x2) for convex nonnegative factors."""
    v1, _ = p1(x1)
    v2, _ = p2(x2)
    m1, g1 = p1(mu1)
    m2, g2 = p2(mu2)
    if np.any(np.asarray(v1) < 0) or np.any(np.asarray(v2) < 0) or np.any(np.asarray(m1) < 0) or np.any(np.asarray(m2) < 0):
        raise ValueError("factors must be nonnegative")
    d1 = np.asarray(x1, dtype=float) - np.asarray(mu1, dtype=float)
    d2 = np.asarray(x2, dtype=float) - np.asarray(mu2, dtype=float)
    return (
        0.5 * (v1 + v2) ** 2
        - 0.5 * (m1**2 + m2**2)
        - m1 * _dot(g1, d1)
        - m2 * _dot(g2, d2)
    )


def biconvex_lower(p1, p2, x1, x2, mu1, mu2):
    """Lower bound on p1(x1)*p2(x2) for convex nonnegative factors."""
    v1, _ = p1(x1)
    v2, _ = p2(x2)
    m1, g1 = p1(mu1)
    m2, g2 = p2(mu2)
    if np.any(np.asarray(v1) < 0) or np.any(np.asarray(v2) < 0) or np.any(np.asarray(m1) < 0) or np.any(np.asarray(m2) < 0):
        raise ValueError("factors must be nonnegative")
    d1 = np.asarray(x1, dtype=float) - np.asarray(mu1, dtype=float)
    d2 = np.asarray(x2, dtype=float) - np.asarray(mu2, dtype=float)
    return (
        0.5 * (m1 + m2) ** 2
        - 0.5 * (v1**2 + v2**2)
        + (m1 + m2) * (_dot(g1, d1) + _dot(g2, d2))
    )


def slacked_rate_pair(q, r, power, sigma2, gain_coef):
    """Exact slacked secrecy difference R(q) - R(r) on distance-product slacks."""
    c = gain_coef * np.asarray(power)
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    return (np.log(sigma2 * q + c) - np.log(sigma2 * q) - np.log(sigma2 * r + c) + np.log(sigma2 * r)) / LN2


def secrecy_dc_surrogate_grads(q, r, q_ref, r_ref, power, sigma2, gain_coef):
    """Concave lower surrogate of the slacked secrecy difference, with gradients.

    Returns (value, d/dq, d/dr); tight (value and gradients) at (q_ref, r_ref).
    """
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    r_ref = np.asarray(r_ref, dtype=float)
    if np.any(q <= 0) or np.any(r <= 0) or np.any(q_ref <= 0) or np.any(r_ref <= 0):
        raise ValueError("distance-product slacks must be positive")
    c = gain_coef * np.asarray(power)
    aq = sigma2 * q + c
    den_r = sigma2 * r_ref + c
    val = (
        np.log(aq)
        + np.log(sigma2 * r)
        - np.log(sigma2 * q_ref)
        - (q - q_ref) / q_ref
        - np.log(den_r)
        - sigma2 * (r - r_ref) / den_r
    ) / LN2
    dq = (sigma2 / aq - 1.0 / q_ref) / LN2
    dr = (1.0 / r - sigma2 / den_r) / LN2
    return val, dq, dr


def secrecy_dc_surrogate(q, r, q_ref, r_ref, power, sigma2, gain_coef):
    return secrecy_dc_surrogate_grads(q, r, q_ref, r_ref, power, sigma2, gain_coef)[0]


def _sq_dist(p, node, altitude):
    d = np.asarray(p, dtype=float) - np.asarray(node, dtype=float)
    return d[..., 0] ** 2 + d[..., 1] ** 2 + altitude**2


def fq_surrogate_grads(p, p_ref, user_xy, ap_xy, altitude):
    """Convex upper surrogate of d_ap^2 * d_user^2 in the platform position.

    Returns (value, gradient wrt p); equals the exact product at p = p_ref.
    """
    p = np.asarray(p, dtype=float)
    p_ref = np.asarray(p_ref, dtype=float)
    ap = np.asarray(ap_xy, dtype=float)
    us = np.asarray(user_xy, dtype=float)
    a = _sq_dist(p, ap, altitude)
    b = _sq_dist(p, us, altitude)
    az = _sq_dist(p_ref, ap, altitude)
    bz = _sq_dist(p_ref, us, altitude)
    dp = p - p_ref
    lin = 2.0 * az[..., None] * (p_ref - ap) + 2.0 * bz[..., None] * (p_ref - us)
    val = 0.5 * (a + b) ** 2 - 0.5 * (az**2 + bz**2) - _dot(lin, dp)
    grad = 2.0 * (a + b)[..., None] * ((p - ap) + (p - us)) - lin
    return val, grad


def fq_surrogate(p, p_ref, user_xy, ap_xy, altitude):
    return fq_surrogate_grads(p, p_ref, user_xy, ap_xy, altitude)[0]


def fr_surrogate_grads(p, p_ref, user_xy, eve_xy, altitude):
    """Concave lower surrogate of d_eve^2 * d_user^2 in the platform position.

    Returns (value, gradient wrt p); equals the exact product at p = p_ref.
    """
    p = np.asarray(p, dtype=float)
    p_ref = np.asarray(p_ref, dtype=float)
    ev = np.asarray(eve_xy, dtype=float)
    us = np.asarray(user_xy, dtype=float)
    a = _sq_dist(p, ev, altitude)
    b = _sq_dist(p, us, altitude)
    az = _sq_dist(p_ref, ev, altitude)
    bz = _sq_dist(p_ref, us, altitude)
    dp = p - p_ref
    w = 2.0 * (az + bz)[..., None] * (2.0 * p_ref - ev - us)
    val = 0.5 * (az + bz) ** 2 - 0.5 * (a**2 + b**2) + _dot(w, dp)
    grad = -2.0 * a[..., None] * (p - ev) - 2.0 * b[..., None] * (p - us) + w
    return val, grad


def fr_surrogate(p, p_ref, user_xy, eve_xy, altitude):
    return fr_surrogate_grads(p, p_ref, user_xy, eve_xy, altitude)[0]


def eve_rate_linearized_grads(power, power_ref, gain2, sigma2):
    """Affine upper bound on the eavesdropper rate in the transmit power.

    Returns (value, d/dpower); tangent to log2(1 + power*gain2/sigma2) at power_ref.
    """
    power = np.asarray(power, dtype=float)
    power_ref = np.asarray(power_ref, dtype=float)
    den = sigma2 + power_ref * np.asarray(gain2)
    val = np.log1p(power_ref * np.asarray(gain2) / sigma2) / LN2 + np.asarray(gain2) * (power - power_ref) / (LN2 * den)
    slope = np.asarray(gain2) / (LN2 * den)
    return val, np.broadcast_to(slope, val.shape).copy() if val.shape else slope


def eve_rate_linearized(power, power_ref, gain2, sigma2):
    return eve_rate_linearized_grads(power, power_ref, gain2, sigma2)[0]


def slacked_flight_energy(v, a, nu, kappa1, kappa2, gravity):
    """Flight cost with the inverse-speed term taken on the speed slack nu."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    nu = np.asarray(nu, dtype=float)
    speed = np.sqrt(np.sum(v**2, axis=-1))
    a2 = np.sum(a**2, axis=-1)
    return kappa1 * speed**3 + (kappa2 / nu) * (1.0 + a2 / gravity**2)


def propulsion_upper_grads(v, a, nu, a_ref, nu_ref, kappa1, kappa2, gravity):
    """Convex upper surrogate of the slacked flight cost, with gradients.

    Returns (value, d/dv, d/da, d/dnu); tight at (a_ref, nu_ref) for any v.
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    nu = np.asarray(nu, dtype=float)
    a_ref = np.asarray(a_ref, dtype=float)
    nu_ref = np.asarray(nu_ref, dtype=float)
    if np.any(nu <= 0) or np.any(nu_ref <= 0):
        raise ValueError("speed slack must be positive")
    kt = kappa2 / (2.0 * gravity**2)
    ki = kappa2 / gravity**2
    speed = np.sqrt(np.sum(v**2, axis=-1))
    u = np.sum(a**2, axis=-1)
    u_ref = np.sum(a_ref**2, axis=-1)
    w = 1.0 / nu
    uw = u + w
    val = (
        kappa1 * speed**3
        + kappa2 / nu
        + kt * uw**2
        - kt * (u_ref**2 + 1.0 / nu_ref**2)
        - ki * (2.0 * u_ref * _dot(a_ref, a - a_ref) - (nu - nu_ref) / nu_ref**3)
    )
    dv = 3.0 * kappa1 * speed[..., None] * v
    da = 4.0 * kt * uw[..., None] * a - 2.0 * ki * u_ref[..., None] * a_ref
    dnu = -kappa2 / nu**2 - 2.0 * kt * uw / nu**2 + ki / nu_ref**3
    return val, dv, da, dnu


def propulsion_upper(v, a, nu, a_ref, nu_ref, kappa1, kappa2, gravity):
    return propulsion_upper_grads(v, a, nu, a_ref, nu_ref, kappa1, kappa2, gravity)[0]


def speed_sq_lower_grads(v, v_ref):
    """Affine lower bound on the squared speed, with gradient wrt v."""
    v = np.asarray(v, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    val = np.sum(v_ref**2, axis=-1) + 2.0 * _dot(v_ref, v - v_ref)
    grad = 2.0 * np.broadcast_to(v_ref, v.shape).copy()
    return val, grad


def speed_sq_lower(v, v_ref):
    return speed_sq_lower_grads(v, v_ref)[0]
