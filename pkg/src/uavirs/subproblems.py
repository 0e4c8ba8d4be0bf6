"""Builders for the two convex subproblems of the alternating planner.

Both builders linearize around the current iterate and return a
`ConvexProgram` plus a pack object that knows the variable layout, builds a
strictly interior starting point near the incumbent, and unpacks solutions.

Positive-part throughput sums are handled with per-slot auxiliaries over an
active set: slots whose linearized secrecy is nonpositive contribute zero
and are dropped for the iteration (always feasible, since the incumbent's
throughput counts only positive slots); their negligible residual
contribution is charged against the per-pair targets exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .scenario import FlyingModel2, Scenario
from .solver import ConstraintBlock, ConvexProgram
from .surrogates import LN2, slacked_rate_pair

REL_TARGET_MARGIN = 1e-2  # trajectory-stage throughput targets are shaved by
# this relative amount: the incumbent plan drives its targets to the exact
# achievability frontier, so without real headroom the restriction has no
# usable interior; the following power stage re-establishes exact coverage
ABS_TARGET_MARGIN = 0.01  # plus this many bits
REL_START_SHAVE = 1e-8  # power-stage starting points back off actives by this
RATE_FLOOR = 1e-6  # bits/s/Hz below which a slot is dropped from a pair


def pair_list(num_users: int) -> list[tuple[int, int]]:
    """Ordered (user, eavesdropper) pairs; a lone user gets a null pair."""
    if num_users == 1:
        return [(0, -1)]
    return [(k, j) for k in range(num_users) for j in range(num_users) if j != k]


@dataclass
class IterateState:
    """Full iterate of the alternating scheme (slacks included)."""

    positions: np.ndarray  # (N+1, 2)
    powers: np.ndarray  # (K, N)
    rho: np.ndarray  # (K,)
    s: np.ndarray  # (K,)
    q: np.ndarray  # (K, N) legitimate distance-product slacks
    r: np.ndarray  # (P, N) eavesdropper distance-product slacks
    velocities: np.ndarray | None = None  # (N+1, 2)
    accelerations: np.ndarray | None = None  # (N, 2)
    nu: np.ndarray | None = None  # (N,)

    def copy(self) -> "IterateState":
        return IterateState(
            positions=self.positions.copy(),
            powers=self.powers.copy(),
            rho=self.rho.copy(),
            s=self.s.copy(),
            q=self.q.copy(),
            r=self.r.copy(),
            velocities=None if self.velocities is None else self.velocities.copy(),
            accelerations=None if self.accelerations is None else self.accelerations.copy(),
            nu=None if self.nu is None else self.nu.copy(),
        )


def distance_products(positions: np.ndarray, scen: Scenario):
    """Exact products (d_ap*d_user)^2 (K, N) and (d_eve*d_user)^2 (P, N).

    `positions` holds the N per-slot platform positions.
    """
    pos = np.asarray(positions, dtype=float)
    h2 = scen.uav_altitude**2
    d2_users = np.sum((pos[None, :, :] - scen.user_positions[:, None, :]) ** 2, axis=2) + h2
    d2_ap = np.sum((pos - scen.ap_xy) ** 2, axis=1) + h2
    prod_q = d2_ap[None, :] * d2_users
    pairs = pair_list(scen.num_users)
    prod_r = np.empty((len(pairs), pos.shape[0]))
    for p, (k, j) in enumerate(pairs):
        if j < 0:
            prod_r[p] = np.inf
        else:
            prod_r[p] = d2_users[j] * d2_users[k]
    return prod_q, prod_r


def _gain_coef(scen: Scenario) -> float:
    return (scen.ref_gain * scen.num_elements) ** 2


# ---------------------------------------------------------------------------
# power / offloading-ratio subproblem
# ---------------------------------------------------------------------------


@dataclass
class PowerPack:
    scen: Scenario
    gain_ap: np.ndarray  # (K, N) squared channel gains of the legitimate links
    gain_eve: np.ndarray  # (P, N) squared gains (or bounds) at the eavesdroppers
    pairs: list[tuple[int, int]]
    active: np.ndarray  # (P, N) bool
    blocked: np.ndarray  # (K,) bool
    idx_pi: np.ndarray
    idx_rho: np.ndarray
    idx_s: np.ndarray
    idx_t: np.ndarray  # (P, N), -1 where inactive
    num_vars: int
    local_coef: np.ndarray  # (K,) gamma * C^3 * I^3 / T^2

    def exact_pair_rates(self, powers: np.ndarray) -> np.ndarray:
        """Per-pair per-slot secrecy rates [R_user - R_eve]^+ in bits/s/Hz."""
        s2 = self.scen.sigma2
        out = np.zeros_like(self.gain_eve)
        for p, (k, _) in enumerate(self.pairs):
            diff = np.log1p(powers[k] * self.gain_ap[k] / s2) - np.log1p(
                powers[k] * self.gain_eve[p] / s2
            )
            out[p] = np.maximum(diff, 0.0) / LN2
        return out

    def secure_bits(self, powers: np.ndarray) -> np.ndarray:
        """Per-user guaranteed secure throughput: worst pair's slot sum, bits."""
        rates = self.exact_pair_rates(powers)
        bw = self.scen.bandwidth * self.scen.slot_length
        totals = bw * rates.sum(axis=1)
        out = np.full(self.scen.num_users, np.inf)
        for p, (k, _) in enumerate(self.pairs):
            out[k] = min(out[k], totals[p])
        return out

    def unpack(self, x: np.ndarray):
        powers = x[self.idx_pi]
        rho = np.clip(x[self.idx_rho], 0.0, 1.0)
        s = np.maximum(x[self.idx_s], 0.0)
        return powers, rho, s

    def start(self, state: IterateState) -> np.ndarray | None:
        """Strictly interior point near the incumbent plan, or None."""
        scen = self.scen
        n_s = scen.num_slots
        x = np.zeros(self.num_vars)
        pi = np.clip(state.powers, 1e-6 * scen.p_max, scen.p_max * (1 - 1e-9))
        for k in range(scen.num_users):
            tot = pi[k].sum()
            cap = n_s * scen.p_avg
            if tot >= cap * (1 - 1e-9):
                pi[k] *= cap * (1 - 1e-8) / tot
        x[self.idx_pi] = pi
        rates = self.exact_pair_rates(pi)
        bw = scen.bandwidth * scen.slot_length
        t0 = rates * (1 - REL_START_SHAVE)
        cap_k = np.full(scen.num_users, np.inf)
        for p, (k, _) in enumerate(self.pairs):
            mask = self.idx_t[p] >= 0
            x[self.idx_t[p][mask]] = np.maximum(t0[p][mask], 1e-300)
            cap_k[k] = min(cap_k[k], bw * t0[p][mask].sum())
        for k in range(scen.num_users):
            if self.blocked[k]:
                x[self.idx_rho[k]] = 1.0
                x[self.idx_s[k]] = 0.0
                continue
            ceil_k = max(cap_k[k], 0.0) * (1 - REL_START_SHAVE) - 1e-3
            s_k = min(state.s[k], ceil_k)
            s_k = max(s_k, 1e-6)
            rho_k = max(state.rho[k], 1.0 - s_k * (1 - 1e-9) / scen.users[k].input_bits)
            rho_k = min(max(rho_k, 1e-9), 1 - 1e-9)
            if s_k >= cap_k[k] or scen.users[k].input_bits * (1 - rho_k) >= s_k:
                s_k = min(cap_k[k] * 0.5, scen.users[k].input_bits * 0.5)
                rho_k = max(state.rho[k], 1.0 - s_k * 0.5 / scen.users[k].input_bits)
                rho_k = min(max(rho_k, 1e-9), 1 - 1e-9)
                if s_k <= 0:
                    return None
            x[self.idx_s[k]] = s_k
            x[self.idx_rho[k]] = rho_k
        return x


def build_power_subproblem(
    gain_ap: np.ndarray, gain_eve_kk: np.ndarray, power_ref: np.ndarray, scen: Scenario
) -> tuple[ConvexProgram, PowerPack]:
    """Convex program over (powers, ratios, targets, slot auxiliaries).

    `gain_eve_kk` is the (K, K, N) squared-gain table (its diagonal ignored);
    secrecy rows use the exact legitimate rate minus the eavesdropper rate
    linearized in power around `power_ref`.
    """
    K, n_s = gain_ap.shape
    s2 = scen.sigma2
    pairs = pair_list(K)
    P = len(pairs)
    gain_eve = np.zeros((P, n_s))
    for p, (k, j) in enumerate(pairs):
        if j >= 0:
            gain_eve[p] = gain_eve_kk[k, j]
    # essentially-tied pairs are excluded: their secrecy ceiling is a few
    # microbits per slot and their rates underflow at interior-start powers
    active = gain_ap[[k for k, _ in pairs], :] > gain_eve * (1 + 1e-6)
    blocked = np.zeros(K, dtype=bool)
    for p, (k, _) in enumerate(pairs):
        if not active[p].any():
            blocked[k] = True
    # micro tasks compute locally outright: offloading them can save at most
    # their sub-nanojoule local cost while degrading the program scaling
    for k, u in enumerate(scen.users):
        full_local = u.switched_capacitance * u.cycles_per_bit**3 * u.input_bits**3 / scen.mission_time**2
        if full_local <= 1e-9:
            blocked[k] = True
    for p, (k, _) in enumerate(pairs):
        if blocked[k]:
            active[p, :] = False

    n_pi = K * n_s
    idx_pi = np.arange(n_pi).reshape(K, n_s)
    idx_rho = n_pi + np.arange(K)
    idx_s = n_pi + K + np.arange(K)
    idx_t = np.full((P, n_s), -1, dtype=np.int64)
    nxt = n_pi + 2 * K
    for p in range(P):
        m = int(active[p].sum())
        idx_t[p, active[p]] = nxt + np.arange(m)
        nxt += m
    num_vars = nxt

    users = scen.users
    local_coef = np.array(
        [u.switched_capacitance * u.cycles_per_bit**3 * u.input_bits**3 / scen.mission_time**2 for u in users]
    )
    ts_over_k = scen.slot_length / K
    bw = scen.bandwidth * scen.slot_length

    def objective(x, want):
        rho = x[idx_rho]
        f = float(x[idx_pi].sum() * ts_over_k + local_coef @ rho**3)
        if not want:
            return f, None, None
        grad = np.zeros(num_vars)
        grad[idx_pi.ravel()] = ts_over_k
        grad[idx_rho] = 3 * local_coef * rho**2
        hess = np.zeros(num_vars)
        hess[idx_rho] = 6 * local_coef * np.abs(rho)
        return f, grad, hess

    blocks: list[ConstraintBlock] = []

    # secrecy-rate rows: t <= R_user(pi) - R_eve_linearized(pi)
    ks = np.concatenate([np.full(int(active[p].sum()), k) for p, (k, _) in enumerate(pairs)]) if active.any() else np.zeros(0, int)
    if active.any():
        ent_p, ent_n = np.nonzero(active)
        a_co = np.empty(len(ent_p))
        slope = np.empty(len(ent_p))
        icept = np.empty(len(ent_p))
        pi_cols = np.empty(len(ent_p), dtype=np.int64)
        t_cols = np.empty(len(ent_p), dtype=np.int64)
        for e, (p, n) in enumerate(zip(ent_p, ent_n)):
            k = pairs[p][0]
            a_co[e] = gain_ap[k, n] / s2
            b = gain_eve[p, n] / s2
            den = 1.0 + b * power_ref[k, n]
            slope[e] = b / (LN2 * den)
            icept[e] = np.log1p(b * power_ref[k, n]) / LN2 - slope[e] * power_ref[k, n]
            pi_cols[e] = idx_pi[k, n]
            t_cols[e] = idx_t[p, n]

        def rate_rows(xs, want):
            pi_v, t_v = xs[:, 0], xs[:, 1]
            den = 1.0 + a_co * pi_v
            g = t_v + icept + slope * pi_v - np.log(den) / LN2
            if not want:
                return g, None, None
            grad = np.empty_like(xs)
            grad[:, 0] = slope - a_co / (LN2 * den)
            grad[:, 1] = 1.0
            hess = np.zeros((len(g), 2, 2))
            hess[:, 0, 0] = a_co**2 / (LN2 * den**2)
            return g, grad, hess

        blocks.append(ConstraintBlock("rate", np.column_stack([pi_cols, t_cols]), rate_rows))

    # per-pair throughput rows: s_k <= bw * sum(t)
    for p, (k, _) in enumerate(pairs):
        if blocked[k] or not active[p].any():
            continue
        cols = np.concatenate([[idx_s[k]], idx_t[p, active[p]]]).astype(np.int64)

        def pair_row(xs, want, _m=len(cols)):
            g = xs[:, 0] - bw * xs[:, 1:].sum(axis=1)
            if not want:
                return g, None, None
            grad = np.full((1, _m), -bw)
            grad[0, 0] = 1.0
            return g, grad, None

        blocks.append(ConstraintBlock(f"pair{p}", cols[None, :], pair_row, lowrank=True))

    # coverage rows: I_k (1 - rho_k) <= s_k
    free = np.flatnonzero(~blocked)
    if len(free):
        bits = np.array([users[k].input_bits for k in free])

        def coverage(xs, want):
            g = bits * (1.0 - xs[:, 0]) - xs[:, 1]
            if not want:
                return g, None, None
            grad = np.column_stack([-bits, -np.ones(len(free))])
            return g, grad, None

        blocks.append(
            ConstraintBlock("coverage", np.column_stack([idx_rho[free], idx_s[free]]), coverage)
        )

    # average-power rows
    cap = n_s * scen.p_avg

    def avg_power(xs, want):
        g = xs.sum(axis=1) - cap
        if not want:
            return g, None, None
        return g, np.ones_like(xs), None

    blocks.append(ConstraintBlock("avg_power", idx_pi.copy(), avg_power, lowrank=True))

    lower = np.full(num_vars, -np.inf)
    upper = np.full(num_vars, np.inf)
    lower[idx_pi.ravel()] = 0.0
    upper[idx_pi.ravel()] = scen.p_max
    lower[idx_t[idx_t >= 0]] = 0.0
    lower[idx_rho[free]] = 0.0
    upper[idx_rho[free]] = 1.0
    lower[idx_s[free]] = 0.0

    rows, cols, vals, rhs = [], [], [], []
    for k in np.flatnonzero(blocked):
        rows.append(len(rhs)); cols.append(idx_rho[k]); vals.append(1.0); rhs.append(1.0)
        rows.append(len(rhs)); cols.append(idx_s[k]); vals.append(1.0); rhs.append(0.0)
    a_eq = b_eq = None
    if rhs:
        a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), num_vars))
        b_eq = np.array(rhs)

    scale = np.ones(num_vars)
    scale[idx_pi.ravel()] = max(scen.p_avg, 1e-3)
    for k in range(K):
        scale[idx_s[k]] = users[k].input_bits

    prog = ConvexProgram(
        num_vars=num_vars, objective=objective, blocks=blocks,
        a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper, var_scale=scale,
    )
    pack = PowerPack(
        scen=scen, gain_ap=gain_ap, gain_eve=gain_eve, pairs=pairs, active=active,
        blocked=blocked, idx_pi=idx_pi, idx_rho=idx_rho, idx_s=idx_s, idx_t=idx_t,
        num_vars=num_vars, local_coef=local_coef,
    )
    return prog, pack


# ---------------------------------------------------------------------------
# trajectory subproblem
# ---------------------------------------------------------------------------

REG_WEIGHT = 1e-6  # pull on the owned-slot legitimate distance products


@dataclass
class TrajectoryPack:
    scen: Scenario
    pairs: list[tuple[int, int]]
    active: np.ndarray  # (P, N) bool
    q_keep: np.ndarray  # (K, N) bool
    owned: np.ndarray  # (K, N) bool
    idx_p: np.ndarray  # (N+1, 2)
    idx_q: np.ndarray  # (K, N), -1 where dropped
    idx_r: np.ndarray  # (P, N), -1
    idx_v: np.ndarray | None
    idx_a: np.ndarray | None
    idx_nu: np.ndarray | None
    num_vars: int
    q_ref: np.ndarray
    r_ref: np.ndarray
    rate_ref: np.ndarray  # (P, N) secrecy rates at the incumbent slacks
    s_adj: list  # per-pair shaved targets; None where the pair is dropped

    def _pair_slacks(self, q, r, powers):
        """Throughput slack of every retained pair at given slack values."""
        scen = self.scen
        bw = scen.bandwidth * scen.slot_length
        coef = _gain_coef(scen)
        out = {}
        for p, (k, _) in enumerate(self.pairs):
            if self.s_adj[p] is None:
                continue
            m = self.active[p]
            if not m.any():
                continue
            sur = _surrogate_value(
                q[k, m], r[p, m], self.q_ref[k, m], self.r_ref[p, m],
                powers[k, m], scen.sigma2, coef,
            )
            out[p] = bw * float(sur.sum()) - self.s_adj[p]
        return out

    def start(self, state: IterateState) -> np.ndarray | None:
        """Strictly interior start from the incumbent iterate, or None.

        Distance-product slacks open away from their walls by a per-user
        perturbation sized against the shaved targets' headroom, shrinking
        until every retained pair row stays strictly satisfied.
        """
        scen = self.scen
        bw = scen.bandwidth * scen.slot_length
        delta = np.full(scen.num_users, 1e-4)
        for p, (k, _) in enumerate(self.pairs):
            cnt = int(self.active[p].sum())
            if cnt == 0 or self.s_adj[p] is None:
                continue
            room = REL_TARGET_MARGIN * max(state.s[k], 1.0)
            delta[k] = min(delta[k], max(0.2 * room / (bw * cnt * 3.0), 1e-12))
        q0 = r0 = None
        for _ in range(40):
            q0 = state.q * (1 + delta[:, None])
            d_pair = np.array([delta[k] for k, _ in self.pairs])
            r0 = state.r * (1 - d_pair[:, None])
            slacks = self._pair_slacks(q0, r0, state.powers)
            bad = [p for p, v in slacks.items() if v <= 1e-9]
            if not bad:
                break
            for p in bad:
                delta[self.pairs[p][0]] *= 0.25
            if delta.max() < 1e-15:
                return None
        else:
            return None
        x = np.zeros(self.num_vars)
        x[self.idx_p.ravel()] = state.positions.ravel()
        keep = self.idx_q >= 0
        x[self.idx_q[keep]] = q0[keep]
        act = self.idx_r >= 0
        x[self.idx_r[act]] = r0[act]
        if self.idx_v is not None:
            x[self.idx_v.ravel()] = state.velocities.ravel()
            x[self.idx_a.ravel()] = state.accelerations.ravel()
            speeds = np.linalg.norm(state.velocities[:-1], axis=1)
            x[self.idx_nu] = np.minimum(state.nu, speeds * (1 - 1e-9))
        return x

    def unpack(self, x: np.ndarray):
        positions = x[self.idx_p.ravel()].reshape(-1, 2)
        q = np.where(self.idx_q >= 0, x[np.maximum(self.idx_q, 0)], np.nan)
        r = np.where(self.idx_r >= 0, x[np.maximum(self.idx_r, 0)], np.nan)
        vel = acc = nu = None
        if self.idx_v is not None:
            vel = x[self.idx_v.ravel()].reshape(-1, 2)
            acc = x[self.idx_a.ravel()].reshape(-1, 2)
            nu = x[self.idx_nu]
        return positions, q, r, vel, acc, nu


def _surrogate_value(q, r, q_ref, r_ref, power, sigma2, coef):
    c = coef * power
    return (
        np.log(sigma2 * q + c) + np.log(sigma2 * r)
        - np.log(sigma2 * q_ref) - (q - q_ref) / q_ref
        - np.log(sigma2 * r_ref + c) - sigma2 * (r - r_ref) / (sigma2 * r_ref + c)
    ) / LN2


def build_trajectory_subproblem(
    state: IterateState,
    scen: Scenario,
    owned: np.ndarray,
    s_targets: np.ndarray,
) -> tuple[ConvexProgram, TrajectoryPack]:
    """Feasibility-form program over positions and slacks at fixed plan.

    Constraints are the linearized secrecy rows, the convex/concave
    distance-product surrogates, mobility, endpoint pins, the flight budget
    (model-specific), and for model 2 the exact discrete kinematics with the
    speed-slack rows.  The objective pulls down the owned slots' legitimate
    distance products to break feasibility ties deterministically.
    """
    K, n_s = state.powers.shape
    model2 = scen.model == 2
    s2 = scen.sigma2
    coef = _gain_coef(scen)
    ts = scen.slot_length
    pairs = pair_list(K)
    P = len(pairs)
    bw = scen.bandwidth * ts

    q_ref = state.q
    r_ref = state.r
    rate_ref = np.zeros((P, n_s))
    for p, (k, j) in enumerate(pairs):
        if j < 0:
            rate_ref[p] = np.log1p(coef * state.powers[k] / (s2 * q_ref[k])) / LN2
        else:
            rate_ref[p] = slacked_rate_pair(q_ref[k], r_ref[p], state.powers[k], s2, coef)

    pair_live = np.array([s_targets[k] > 1e-9 for k, _ in pairs])
    active = (rate_ref > RATE_FLOOR) & pair_live[:, None]
    # residual positive contributions of dropped slots, charged to the targets
    s_adj = np.empty(P)
    for p, (k, _) in enumerate(pairs):
        resid = rate_ref[p].clip(min=0.0)[~active[p]].sum() * bw
        s_adj[p] = s_targets[k] * (1 - REL_TARGET_MARGIN) - resid - ABS_TARGET_MARGIN
    retained = pair_live & (s_adj > 0) & active.any(axis=1)
    for p in range(P):
        if not retained[p]:
            active[p, :] = False

    q_keep = owned.copy()
    for p, (k, _) in enumerate(pairs):
        q_keep[k] |= active[p]

    # ---- variable layout: positions, q, r, then model-2 kinematics
    nxt = 0
    idx_p = np.arange((n_s + 1) * 2, dtype=np.int64).reshape(n_s + 1, 2)
    nxt = (n_s + 1) * 2
    idx_q = np.full((K, n_s), -1, dtype=np.int64)
    m_q = int(q_keep.sum())
    idx_q[q_keep] = nxt + np.arange(m_q)
    nxt += m_q
    idx_r = np.full((P, n_s), -1, dtype=np.int64)
    m_a = int(active.sum())
    idx_r[active] = nxt + np.arange(m_a)
    nxt += m_a
    idx_v = idx_a = idx_nu = None
    if model2:
        idx_v = nxt + np.arange((n_s + 1) * 2, dtype=np.int64).reshape(n_s + 1, 2)
        nxt += (n_s + 1) * 2
        idx_a = nxt + np.arange(n_s * 2, dtype=np.int64).reshape(n_s, 2)
        nxt += n_s * 2
        idx_nu = nxt + np.arange(n_s, dtype=np.int64)
        nxt += n_s
    num_vars = nxt

    blocks: list[ConstraintBlock] = []

    # ---- per-pair secure-throughput rows on the concave surrogate sums:
    # one row per eavesdropper pair keeps the feasible interior wide even
    # when the incumbent targets sit at the achievability frontier
    for p in range(P):
        if not retained[p]:
            continue
        k = pairs[p][0]
        m = active[p]
        cnt = int(m.sum())
        c_e = coef * state.powers[k, m]
        qz = q_ref[k, m]
        rz = r_ref[p, m]
        den_r = s2 * rz + c_e
        const_p = float(((-np.log(s2 * qz) - np.log(den_r) + 1.0 + s2 * rz / den_r) / LN2).sum())
        target = s_adj[p]
        cols = np.concatenate([idx_q[k, m], idx_r[p, m]]).astype(np.int64)
        hpat = (np.arange(2 * cnt), np.arange(2 * cnt))

        def pair_sum_row(xs, want, c_e=c_e, qz=qz, rz=rz, den_r=den_r,
                         const_p=const_p, target=target, cnt=cnt):
            q_v = xs[:, :cnt]
            r_v = xs[:, cnt:]
            aq = s2 * q_v + c_e
            sur = (np.log(aq) + np.log(s2 * r_v) - q_v / qz - s2 * r_v / den_r) / LN2
            g = target - bw * (sur.sum(axis=1) + const_p)
            if not want:
                return g, None, None
            grad = np.empty_like(xs)
            grad[:, :cnt] = -bw * (s2 / aq - 1.0 / qz) / LN2
            grad[:, cnt:] = -bw * (1.0 / r_v - s2 / den_r) / LN2
            hess = np.empty((1, 2 * cnt))
            hess[0, :cnt] = bw * (s2 / aq[0]) ** 2 / LN2
            hess[0, cnt:] = bw / (r_v[0] ** 2 * LN2)
            return g, grad, hess

        blocks.append(ConstraintBlock(f"sec{p}", cols[None, :], pair_sum_row,
                                      lowrank=True, hess_pattern=hpat))

    # ---- convex upper surrogate rows: f_q(p) <= q
    kq, nq = np.nonzero(q_keep)
    if len(kq):
        p_ref_q = state.positions[nq]
        user_q = scen.user_positions[kq]
        ap = scen.ap_xy
        h2 = scen.uav_altitude**2
        az = np.sum((p_ref_q - ap) ** 2, axis=1) + h2
        bz = np.sum((p_ref_q - user_q) ** 2, axis=1) + h2
        lin_q = 2.0 * az[:, None] * (p_ref_q - ap) + 2.0 * bz[:, None] * (p_ref_q - user_q)
        const_q = -0.5 * (az**2 + bz**2) + np.sum(lin_q * p_ref_q, axis=1)

        def fq_rows(xs, want):
            p_v = xs[:, :2]
            a = np.sum((p_v - ap) ** 2, axis=1) + h2
            b = np.sum((p_v - user_q) ** 2, axis=1) + h2
            g = 0.5 * (a + b) ** 2 + const_q - np.sum(lin_q * p_v, axis=1) - xs[:, 2]
            if not want:
                return g, None, None
            z = 2.0 * (2.0 * p_v - ap - user_q)
            grad = np.empty((len(g), 3))
            grad[:, :2] = (a + b)[:, None] * z - lin_q
            grad[:, 2] = -1.0
            hess = np.zeros((len(g), 3, 3))
            hess[:, :2, :2] = z[:, :, None] * z[:, None, :] + (4.0 * (a + b))[:, None, None] * np.eye(2)
            return g, grad, hess

        cols = np.column_stack([idx_p[nq], idx_q[kq, nq]])
        blocks.append(ConstraintBlock("fq", cols, fq_rows))

    # ---- concave lower surrogate rows: r <= f_r(p)
    if m_a:
        ent_p, ent_n = np.nonzero(active)
        ent_k = np.array([pairs[p][0] for p in ent_p])
        ent_j = np.array([pairs[p][1] for p in ent_p])
        p_ref_r = state.positions[ent_n]
        user_r = scen.user_positions[ent_k]
        eve_r = scen.user_positions[ent_j]
        h2 = scen.uav_altitude**2
        az = np.sum((p_ref_r - eve_r) ** 2, axis=1) + h2
        bz = np.sum((p_ref_r - user_r) ** 2, axis=1) + h2
        w_r = 2.0 * (az + bz)[:, None] * (2.0 * p_ref_r - eve_r - user_r)
        const_r = 0.5 * (az + bz) ** 2 - np.sum(w_r * p_ref_r, axis=1)

        def fr_rows(xs, want):
            p_v = xs[:, :2]
            a = np.sum((p_v - eve_r) ** 2, axis=1) + h2
            b = np.sum((p_v - user_r) ** 2, axis=1) + h2
            f_r = const_r - 0.5 * (a**2 + b**2) + np.sum(w_r * p_v, axis=1)
            g = xs[:, 2] - f_r
            if not want:
                return g, None, None
            grad = np.empty((len(g), 3))
            grad[:, :2] = 2.0 * a[:, None] * (p_v - eve_r) + 2.0 * b[:, None] * (p_v - user_r) - w_r
            grad[:, 2] = 1.0
            hess = np.zeros((len(g), 3, 3))
            de = p_v - eve_r
            du = p_v - user_r
            hess[:, :2, :2] = (
                4.0 * de[:, :, None] * de[:, None, :]
                + 4.0 * du[:, :, None] * du[:, None, :]
                + (2.0 * (a + b))[:, None, None] * np.eye(2)
            )
            return g, grad, hess

        cols = np.column_stack([idx_p[ent_n], idx_r[active]])
        blocks.append(ConstraintBlock("fr", cols, fr_rows))

    # ---- mobility rows
    d2max = scen.d_max**2
    mob_hess = np.broadcast_to(
        np.array([[2.0, 0, -2, 0], [0, 2, 0, -2], [-2, 0, 2, 0], [0, -2, 0, 2]]), (n_s, 4, 4)
    ).copy()

    def mob_rows(xs, want):
        dx = xs[:, 2] - xs[:, 0]
        dy = xs[:, 3] - xs[:, 1]
        g = dx**2 + dy**2 - d2max
        if not want:
            return g, None, None
        grad = np.column_stack([-2 * dx, -2 * dy, 2 * dx, 2 * dy])
        return g, grad, mob_hess

    mob_cols = np.column_stack([idx_p[:-1], idx_p[1:]])
    blocks.append(ConstraintBlock("mobility", mob_cols, mob_rows))

    # ---- flight energy budget
    if not model2:
        c_kin = scen.flying.mass / ts
        w_diag = np.full(n_s + 1, 2.0)
        w_diag[0] = w_diag[-1] = 1.0
        hi_d = np.arange((n_s + 1) * 2)
        hj_d = hi_d.copy()
        off_i, off_j = [], []
        for n in range(n_s):
            for c in (0, 1):
                off_i += [2 * n + c, 2 * (n + 1) + c]
                off_j += [2 * (n + 1) + c, 2 * n + c]
        hi = np.concatenate([hi_d, np.array(off_i)])
        hj = np.concatenate([hj_d, np.array(off_j)])
        hvals_const = np.concatenate([
            c_kin * np.repeat(w_diag, 2), np.full(4 * n_s, -c_kin)
        ])[None, :]

        def budget_row(xs, want):
            pos = xs[0].reshape(-1, 2)
            steps = np.diff(pos, axis=0)
            g = np.array([0.5 * c_kin * float(np.sum(steps**2)) - scen.energy_budget])
            if not want:
                return g, None, None
            grad = np.zeros_like(pos)
            grad[:-1] -= steps
            grad[1:] += steps
            return g, c_kin * grad.reshape(1, -1), hvals_const

        blocks.append(
            ConstraintBlock("budget", idx_p.ravel()[None, :], budget_row,
                            lowrank=True, hess_pattern=(hi, hj))
        )
    else:
        fly = scen.flying
        assert isinstance(fly, FlyingModel2)
        k1, k2, grav = fly.kappa1, fly.kappa2, fly.gravity
        kt = k2 / (2 * grav**2)
        a_ref = state.accelerations
        nu_ref = state.nu
        u_ref = np.sum(a_ref**2, axis=1)
        n_v = (n_s + 1) * 2
        base_a = n_v
        base_nu = n_v + n_s * 2
        row_cols = np.concatenate([idx_v.ravel(), idx_a.ravel(), idx_nu])
        hi2, hj2 = [], []
        for n in range(n_s):
            vi = [2 * n, 2 * n + 1]
            ai = [base_a + 2 * n, base_a + 2 * n + 1]
            ni = base_nu + n
            for r_ in vi:
                for c_ in vi:
                    hi2.append(r_); hj2.append(c_)
            for r_ in ai:
                for c_ in ai:
                    hi2.append(r_); hj2.append(c_)
            for r_ in ai:
                hi2.append(r_); hj2.append(ni)
                hi2.append(ni); hj2.append(r_)
            hi2.append(ni); hj2.append(ni)
        hi2 = np.array(hi2)
        hj2 = np.array(hj2)

        def budget2_row(xs, want):
            z = xs[0]
            v = z[:n_v].reshape(-1, 2)[:-1]
            a = z[base_a:base_nu].reshape(-1, 2)
            nu = z[base_nu:]
            speed = np.sqrt(np.sum(v**2, axis=1))
            u = np.sum(a**2, axis=1)
            w = 1.0 / nu
            uw = u + w
            e_slots = (
                k1 * speed**3 + k2 / nu + kt * uw**2
                - kt * (u_ref**2 + 1.0 / nu_ref**2)
                - (2 * kt * 2) * u_ref * np.sum(a_ref * (a - a_ref), axis=1)
                + (2 * kt) * (nu - nu_ref) / nu_ref**3
            )
            g = np.array([float(e_slots.sum()) - scen.energy_budget])
            if not want:
                return g, None, None
            grad = np.zeros((1, len(z)))
            dv = 3 * k1 * speed[:, None] * v
            grad[0, : n_v - 2] = dv.ravel()
            da = 4 * kt * uw[:, None] * a - 4 * kt * u_ref[:, None] * a_ref
            grad[0, base_a:base_nu] = da.ravel()
            grad[0, base_nu:] = -k2 / nu**2 - 2 * kt * uw / nu**2 + 2 * kt / nu_ref**3
            sp_guard = np.maximum(speed, 1e-12)
            hv = np.empty((n_s, 13))
            hv[:, 0] = 3 * k1 * (speed + v[:, 0] ** 2 / sp_guard)
            hv[:, 1] = 3 * k1 * v[:, 0] * v[:, 1] / sp_guard
            hv[:, 2] = hv[:, 1]
            hv[:, 3] = 3 * k1 * (speed + v[:, 1] ** 2 / sp_guard)
            hv[:, 4] = 4 * kt * uw + 8 * kt * a[:, 0] ** 2
            hv[:, 5] = 8 * kt * a[:, 0] * a[:, 1]
            hv[:, 6] = hv[:, 5]
            hv[:, 7] = 4 * kt * uw + 8 * kt * a[:, 1] ** 2
            hv[:, 8] = -4 * kt * a[:, 0] / nu**2
            hv[:, 9] = hv[:, 8]
            hv[:, 10] = -4 * kt * a[:, 1] / nu**2
            hv[:, 11] = hv[:, 10]
            hv[:, 12] = 2 * k2 / nu**3 + 2 * kt / nu**4 + 4 * kt * uw / nu**3
            return g, grad, hv.reshape(1, -1)

        blocks.append(
            ConstraintBlock("budget2", row_cols[None, :], budget2_row,
                            lowrank=True, hess_pattern=(hi2, hj2))
        )

        # nu^2 <= linearized squared speed
        v_ref_slots = state.velocities[:-1]
        nu_hess = np.zeros((n_s, 3, 3))
        nu_hess[:, 0, 0] = 2.0

        def nu_rows(xs, want):
            nu_v = xs[:, 0]
            g = nu_v**2 + np.sum(v_ref_slots**2, axis=1) - 2 * np.sum(v_ref_slots * xs[:, 1:], axis=1)
            if not want:
                return g, None, None
            grad = np.column_stack([2 * nu_v, -2 * v_ref_slots])
            return g, grad, nu_hess

        blocks.append(
            ConstraintBlock("nu_lb", np.column_stack([idx_nu, idx_v[:-1]]), nu_rows)
        )

        amax2 = fly.a_max**2
        acc_hess = np.broadcast_to(2.0 * np.eye(2), (n_s, 2, 2)).copy()

        def amax_rows(xs, want):
            g = np.sum(xs**2, axis=1) - amax2
            if not want:
                return g, None, None
            return g, 2 * xs, acc_hess

        blocks.append(ConstraintBlock("amax", idx_a.copy(), amax_rows))

    # ---- objective: pull owned slots' legitimate products down; all other
    # kept slacks get a hundredfold weaker pull so they track their walls
    # instead of drifting into the throughput slack
    own_cols = idx_q[owned & q_keep]
    rest_cols = idx_q[(~owned) & q_keep]

    def objective(x, want):
        f = REG_WEIGHT * (float(x[own_cols].sum()) + 0.01 * float(x[rest_cols].sum()))
        if not want:
            return f, None, None
        grad = np.zeros(num_vars)
        grad[own_cols] = REG_WEIGHT
        grad[rest_cols] = 0.01 * REG_WEIGHT
        return f, grad, np.zeros(num_vars)

    # ---- equality pins and (model 2) kinematics
    eq_entries = []
    b_list = []

    def add_eq(entry_cols, entry_vals, b):
        row_no = len(b_list)
        for c, v in zip(entry_cols, entry_vals):
            eq_entries.append((row_no, c, v))
        b_list.append(b)

    add_eq([idx_p[0, 0]], [1.0], scen.initial_xy[0])
    add_eq([idx_p[0, 1]], [1.0], scen.initial_xy[1])
    add_eq([idx_p[-1, 0]], [1.0], scen.terminal_xy[0])
    add_eq([idx_p[-1, 1]], [1.0], scen.terminal_xy[1])
    if model2:
        v_bnd = state.velocities[0]
        for c in (0, 1):
            add_eq([idx_v[0, c]], [1.0], v_bnd[c])
            add_eq([idx_v[-1, c]], [1.0], state.velocities[-1][c])
        for n in range(n_s):
            for c in (0, 1):
                add_eq(
                    [idx_p[n + 1, c], idx_p[n, c], idx_v[n, c], idx_a[n, c]],
                    [1.0, -1.0, -ts, -0.5 * ts**2],
                    0.0,
                )
                add_eq(
                    [idx_v[n + 1, c], idx_v[n, c], idx_a[n, c]],
                    [1.0, -1.0, -ts],
                    0.0,
                )
    r_i = np.array([e[0] for e in eq_entries])
    c_i = np.array([e[1] for e in eq_entries])
    v_i = np.array([e[2] for e in eq_entries])
    a_eq = sp.csr_matrix((v_i, (r_i, c_i)), shape=(len(b_list), num_vars))
    b_eq = np.array(b_list)

    scale = np.ones(num_vars)
    coord_span = float(np.abs(np.vstack([scen.user_positions, scen.ap_xy[None]])).max()) + 10.0
    scale[idx_p.ravel()] = coord_span
    if m_q:
        scale[idx_q[q_keep]] = q_ref[q_keep]
    if m_a:
        scale[idx_r[active]] = r_ref[active]
    if model2:
        scale[idx_v.ravel()] = scen.v_max
        scale[idx_a.ravel()] = scen.flying.a_max
        scale[idx_nu] = max(scen.flying.boundary_speed, 1.0)

    lower = np.full(num_vars, -np.inf)
    upper = np.full(num_vars, np.inf)
    if model2:
        lower[idx_nu] = 1e-3

    prog = ConvexProgram(
        num_vars=num_vars, objective=objective, blocks=blocks,
        a_eq=a_eq, b_eq=b_eq, lower=lower, upper=upper, var_scale=scale,
    )
    pack = TrajectoryPack(
        scen=scen, pairs=pairs, active=active, q_keep=q_keep, owned=owned,
        idx_p=idx_p, idx_q=idx_q, idx_r=idx_r,
        idx_v=idx_v, idx_a=idx_a, idx_nu=idx_nu, num_vars=num_vars,
        q_ref=q_ref.copy(), r_ref=r_ref.copy(), rate_ref=rate_ref,
        s_adj=[s_adj[p] if retained[p] else None for p in range(P)],
    )
    return prog, pack
