"""Alternating planner: trajectory stage, power/offload stage, and baselines.

Each stage solves its convex restriction, then applies a damped update with
a diminishing step size, which keeps every iterate feasible for the exact
constraints (the surrogate feasible sets are convex inner approximations)
and makes the total user energy nonincreasing across outer rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import exact_gain_tables
from .energy import Kinematics, initial_kinematics, reconstruct_positions, total_objective
from .phases import optimal_phases, schedule_phases, trajectory_form_gains
from .scenario import Scenario
from .solver import solve
from .subproblems import (
    IterateState,
    build_power_subproblem,
    build_trajectory_subproblem,
    distance_products,
    pair_list,
)

BASELINES = ("local_only", "identity_phase", "fixed_phase", "no_traj_opt_phase")


class PlannerError(RuntimeError):
    pass


class InfeasiblePlan(PlannerError):
    def __init__(self, message, user_index=None):
        super().__init__(message)
        self.user_index = user_index


@dataclass
class PlannerConfig:
    solver_tol: float = 1e-6
    traj_solver_tol: float = 1e-5  # feasibility form; objective is a tie-break
    traj_newton_budget: int = 40  # per barrier stage; any interior point serves
    inner_rel_tol: float = 1e-4
    max_inner: int = 60
    outer_eps: float = 1e-4
    max_outer: int = 50
    alpha0: float = 1.0
    beta: float = 0.1
    warm_t0: float = 1e9  # barrier-weight fit cap on warm inner iterations

    def schedule(self):
        return StepSchedule(self.alpha0, self.beta)


@dataclass
class StepSchedule:
    """Diminishing steps alpha0/(1 + beta*z): vanishing with a divergent sum."""

    alpha0: float = 1.0
    beta: float = 0.1

    def __call__(self, z: int) -> float:
        return self.alpha0 / (1.0 + self.beta * z)


@dataclass
class PowerOffloadPlan:
    powers: np.ndarray  # (K, N) watts
    ratios: np.ndarray  # (K,) local-execution fractions
    targets: np.ndarray  # (K,) secure-throughput targets, bits
    achieved: np.ndarray  # (K,) guaranteed secure throughput, bits


@dataclass
class RunResult:
    plan: PowerOffloadPlan
    kinematics: Kinematics
    phases: np.ndarray  # (N, L)
    owners: np.ndarray  # (N,)
    trace: list[float]
    outer_iters: int
    objective: float
    feasibility: dict[str, float] = field(default_factory=dict)
    gain_ap: np.ndarray | None = None  # (K, N) legitimate-link gains used
    gain_eve: np.ndarray | None = None  # (K, K, N) eavesdropper gains used

    def per_slot_secure_bits(self, scen: Scenario) -> np.ndarray:
        """Guaranteed secure bits per user and slot under the plan's model."""
        if self.gain_ap is None:
            return np.zeros_like(self.plan.powers)
        s2 = scen.sigma2
        bw = scen.bandwidth * scen.slot_length
        K = scen.num_users
        out = np.full_like(self.plan.powers, np.inf)
        for k, j in pair_list(K):
            rate = np.log1p(self.plan.powers[k] * self.gain_ap[k] / s2)
            if j >= 0:
                rate = rate - np.log1p(self.plan.powers[k] * self.gain_eve[k, j] / s2)
            out[k] = np.minimum(out[k], np.maximum(rate, 0.0) / math.log(2.0))
        return out * bw


def assign_slot_owners(state: IterateState, scen: Scenario) -> np.ndarray:
    """Greedy slot ownership by largest remaining secure-throughput deficit.

    Each slot goes to the neediest user and reduces that user's remaining
    need by the slot's deliverable secure bits at the current plan's power.
    With no outstanding targets, slots fall to the nearest user.
    """
    n_s = scen.num_slots
    pos = state.positions[:-1]
    gain_ap, gain_eve = trajectory_form_gains(pos, scen)
    s2 = scen.sigma2
    k_list = range(scen.num_users)
    worst_eve = gain_eve.max(axis=1)  # (K, N) strongest eavesdropper bound
    rate = (
        np.log1p(state.powers * gain_ap / s2) - np.log1p(state.powers * worst_eve / s2)
    ).clip(min=0.0) / math.log(2.0)
    bits = rate * scen.bandwidth * scen.slot_length
    need = state.s.astype(float).copy()
    owners = np.zeros(n_s, dtype=int)
    d2 = np.sum((pos[None, :, :] - scen.user_positions[:, None, :]) ** 2, axis=2)
    for n in range(n_s):
        if np.any(need > 1e-9):
            k = int(np.argmax(need))
        else:
            k = int(np.argmin(d2[:, n]))
        owners[n] = k
        need[k] -= bits[k, n]
    return owners


def initial_state(scen: Scenario) -> IterateState:
    """Feasible cold start: reference track, average power, full local execution."""
    kin = initial_kinematics(scen)
    n_s = scen.num_slots
    K = scen.num_users
    prod_q, prod_r = distance_products(kin.positions[:-1], scen)
    vel = acc = nu = None
    if scen.model == 2:
        vel = kin.velocities
        acc = kin.accelerations
        nu = np.linalg.norm(vel[:-1], axis=1) * (1 - 1e-6)
    return IterateState(
        positions=kin.positions.copy(),
        powers=np.full((K, n_s), scen.p_avg),
        rho=np.ones(K),
        s=np.zeros(K),
        q=prod_q,
        r=prod_r,
        velocities=vel,
        accelerations=acc,
        nu=nu,
    )


def _rel_change(old: IterateState, new: IterateState) -> float:
    out = 0.0
    for a, b in ((old.positions, new.positions), (old.q, new.q), (old.r, new.r)):
        out = max(out, float(np.max(np.abs(b - a)) / (1.0 + np.max(np.abs(a)))))
    if old.velocities is not None:
        for a, b in ((old.velocities, new.velocities), (old.nu, new.nu)):
            out = max(out, float(np.max(np.abs(b - a)) / (1.0 + np.max(np.abs(a)))))
    return out


def trajectory_stage(
    state: IterateState, scen: Scenario, cfg: PlannerConfig | None = None
) -> IterateState:
    """Damped trajectory/slack updates at a fixed plan (feasibility form).

    With no outstanding secrecy targets the incoming track is already
    feasible and is returned unchanged.
    """
    cfg = cfg or PlannerConfig()
    if np.all(state.s <= 1e-12):
        return state
    schedule = cfg.schedule()
    state = state.copy()
    rel = 1.0
    for z in range(cfg.max_inner):
        owners_vec = assign_slot_owners(state, scen)
        owned = np.zeros((scen.num_users, scen.num_slots), dtype=bool)
        owned[owners_vec, np.arange(scen.num_slots)] = True
        prog, pack = build_trajectory_subproblem(state, scen, owned, state.s)
        x0 = pack.start(state)
        # the stage needs any strictly feasible point with useful drift, not a
        # polished center: barrier iterates stay interior, so a budget-capped
        # run is a valid (if less centered) update for the damped step
        res = solve(prog, x0, tol=cfg.traj_solver_tol, t0_scale=cfg.warm_t0,
                    loose_centering=True, max_newton=cfg.traj_newton_budget)
        if res.status == "infeasible":
            if z == 0:
                raise InfeasiblePlan("trajectory stage infeasible at the incumbent plan")
            break
        if res.status != "optimal" and "feasible point" in res.message:
            break  # could not even start this round; keep the incumbent
        p_star, q_star, r_star, v_star, a_star, nu_star = pack.unpack(res.x)
        alpha = schedule(z)
        new = state.copy()
        new.positions = state.positions + alpha * (p_star - state.positions)
        prod_q, prod_r = distance_products(new.positions[:-1], scen)
        kept = pack.idx_q >= 0
        act = pack.idx_r >= 0
        new.q = np.where(kept, (1 - alpha) * state.q + alpha * np.where(kept, q_star, 0.0), prod_q)
        new.q = np.maximum(new.q, prod_q)
        new.r = np.where(act, (1 - alpha) * state.r + alpha * np.where(act, r_star, 0.0), prod_r)
        new.r = np.minimum(new.r, prod_r)
        if scen.model == 2:
            # re-integrate from the pinned boundary velocity so the slot
            # updates hold exactly despite solver equality residuals
            new.accelerations = state.accelerations + alpha * (a_star - state.accelerations)
            new.nu = state.nu + alpha * (nu_star - state.nu)
            ts = scen.slot_length
            vel = np.vstack([
                state.velocities[:1],
                state.velocities[0] + np.cumsum(new.accelerations, axis=0) * ts,
            ])
            new.velocities = vel
            new.positions = reconstruct_positions(state.positions[0], vel, new.accelerations, ts)
            prod_q, prod_r = distance_products(new.positions[:-1], scen)
            new.q = np.maximum(new.q, prod_q)
            new.r = np.minimum(new.r, prod_r)
        rel = _rel_change(state, new)
        state = new
        if rel < cfg.inner_rel_tol:
            break
    return state


def power_stage(
    state: IterateState,
    scen: Scenario,
    gain_ap: np.ndarray,
    gain_eve_kk: np.ndarray,
    cfg: PlannerConfig | None = None,
) -> tuple[IterateState, PowerOffloadPlan]:
    """Damped power/offloading-ratio updates on a fixed track and phases."""
    cfg = cfg or PlannerConfig()
    schedule = cfg.schedule()
    state = state.copy()
    pack = None
    rel = 1.0
    for z in range(cfg.max_inner):
        prog, pack = build_power_subproblem(gain_ap, gain_eve_kk, state.powers, scen)
        x0 = pack.start(state)
        if x0 is None:
            x0 = np.zeros(pack.num_vars)
            x0[pack.idx_pi.ravel()] = 1e-6 * scen.p_max
            x0[pack.idx_rho] = 1.0 - 1e-9
            x0[pack.idx_rho[pack.blocked]] = 1.0
        res = solve(prog, x0, tol=cfg.solver_tol)
        if res.status != "optimal":
            if z == 0:
                binding = int(np.argmax(state.s / np.maximum(scen.input_bits, 1.0)))
                raise InfeasiblePlan(
                    f"power stage failed: {res.message or res.status}", user_index=binding
                )
            break
        pi_star, rho_star, s_star = pack.unpack(res.x)
        alpha = schedule(z)
        old = (state.powers, state.rho, state.s)
        state.powers = state.powers + alpha * (pi_star - state.powers)
        state.rho = state.rho + alpha * (rho_star - state.rho)
        state.s = state.s + alpha * (s_star - state.s)
        rel = max(
            float(np.max(np.abs(b - a)) / (1.0 + np.max(np.abs(a))))
            for a, b in zip(old, (state.powers, state.rho, state.s))
        )
        if rel < cfg.inner_rel_tol and z >= 1:
            break
    plan = PowerOffloadPlan(
        powers=state.powers.copy(),
        ratios=np.clip(state.rho, 0.0, 1.0),
        targets=state.s.copy(),
        achieved=pack.secure_bits(state.powers),
    )
    return state, plan


def verify_plan(
    plan: PowerOffloadPlan,
    kin: Kinematics,
    scen: Scenario,
    gain_ap: np.ndarray,
    gain_eve_kk: np.ndarray,
) -> dict[str, float]:
    """Normalized worst-case margins of every exact constraint (>=0 is feasible)."""
    s2 = scen.sigma2
    pairs = pair_list(scen.num_users)
    bw = scen.bandwidth * scen.slot_length
    achieved = np.full(scen.num_users, np.inf)
    for k, j in pairs:
        rate = np.log1p(plan.powers[k] * gain_ap[k] / s2)
        if j >= 0:
            rate = rate - np.log1p(plan.powers[k] * gain_eve_kk[k, j] / s2)
        total = bw * float(np.maximum(rate, 0.0).sum()) / math.log(2.0)
        achieved[k] = min(achieved[k], total)
    bits = scen.input_bits
    steps = np.linalg.norm(np.diff(kin.positions, axis=0), axis=1)
    fly = float(kin.flying_energy(scen).sum())
    margins = {
        "power_nonneg": float(plan.powers.min()),
        "power_peak": float((scen.p_max - plan.powers.max()) / scen.p_max),
        "power_avg": float(
            np.min(scen.num_slots * scen.p_avg - plan.powers.sum(axis=1)) / (scen.num_slots * scen.p_avg)
        ),
        "ratio_box": float(min(plan.ratios.min(), 1.0 - plan.ratios.max())),
        "coverage": float(np.min((plan.targets - bits * (1.0 - plan.ratios)) / bits)),
        "secrecy": float(np.min((achieved - plan.targets) / np.maximum(bits, 1.0))),
        "mobility": float((scen.d_max - steps.max()) / scen.d_max),
        "energy_budget": float((scen.energy_budget - fly) / scen.energy_budget),
    }
    if scen.model == 2:
        rebuilt = kin.positions[0] + np.concatenate(
            [np.zeros((1, 2)), np.cumsum(
                kin.velocities[:-1] * scen.slot_length
                + 0.5 * kin.accelerations * scen.slot_length**2, axis=0)]
        )
        margins["kinematic_consistency"] = -float(
            np.max(np.linalg.norm(rebuilt - kin.positions, axis=1))
        )
    return margins


def _kinematics_from_state(state: IterateState, scen: Scenario) -> Kinematics:
    if scen.model == 2:
        return Kinematics(
            positions=state.positions.copy(),
            velocities=state.velocities.copy(),
            accelerations=state.accelerations.copy(),
        )
    return Kinematics(positions=state.positions.copy())


def run_planner(scen: Scenario, cfg: PlannerConfig | None = None) -> RunResult:
    """Full alternating optimization from the cold start until stagnation."""
    cfg = cfg or PlannerConfig()
    state = initial_state(scen)
    trace: list[float] = []
    best = None
    prev = None
    for outer in range(cfg.max_outer):
        try:
            state = trajectory_stage(state, scen, cfg)
            gain_ap, gain_eve_kk = trajectory_form_gains(state.positions[:-1], scen)
            state, plan = power_stage(state, scen, gain_ap, gain_eve_kk, cfg)
        except InfeasiblePlan:
            if best is not None:
                break  # keep the best feasible plan found so far
            # full local execution is always feasible; degrade to it
            plan = PowerOffloadPlan(
                powers=np.zeros_like(state.powers),
                ratios=np.ones(scen.num_users),
                targets=np.zeros(scen.num_users),
                achieved=np.zeros(scen.num_users),
            )
            state = initial_state(scen)
            state.powers[:] = 0.0
            obj = total_objective(plan.powers, plan.ratios, scen)
            trace.append(obj)
            best = (obj, plan, state.copy())
            break
        obj = total_objective(plan.powers, plan.ratios, scen)
        trace.append(obj)
        if best is None or obj <= best[0]:
            best = (obj, plan, state.copy())
        if prev is not None and prev - obj < cfg.outer_eps:
            break
        prev = obj
    obj, plan, state = best
    owners = assign_slot_owners(state, scen)
    kin = _kinematics_from_state(state, scen)
    phases = schedule_phases(state.positions[:-1], owners, scen)
    gain_ap, gain_eve_kk = trajectory_form_gains(state.positions[:-1], scen)
    return RunResult(
        plan=plan,
        kinematics=kin,
        phases=phases,
        owners=owners,
        trace=trace,
        outer_iters=len(trace),
        objective=obj,
        feasibility=verify_plan(plan, kin, scen, gain_ap, gain_eve_kk),
        gain_ap=gain_ap,
        gain_eve=gain_eve_kk,
    )


def sector_phase_table(scen: Scenario):
    """Fixed per-sector phase vectors: split the area by AP-to-midpoint rays.

    Returns (ascending boundary angles, per-sector phase vectors).  Each
    sector gets the user whose bearing from the AP falls inside it; its
    vector aligns that user with the platform placed a quarter of the way
    out from the AP (exactly halfway the steering terms cancel and every
    vector would degenerate to the identity).
    """
    ap = scen.ap_xy
    K = scen.num_users
    ang = np.arctan2(*(scen.user_positions - ap).T[::-1]) % (2 * np.pi)
    order = np.argsort(ang)
    bounds = []
    for i in range(K):
        a, b = order[i], order[(i + 1) % K]
        mid = 0.5 * (scen.user_positions[a] + scen.user_positions[b]) - ap
        if np.linalg.norm(mid) < 1e-9:  # antipodal pair: angular bisector
            gap = (ang[b] - ang[a]) % (2 * np.pi)
            theta = ang[a] + gap / 2
        else:
            theta = math.atan2(mid[1], mid[0])
        bounds.append(theta % (2 * np.pi))
    if K == 1:
        bounds = [0.0]
    if K == 2:
        bounds = [bounds[0], (bounds[0] + np.pi) % (2 * np.pi)]
    bounds = np.sort(np.array(bounds))
    n_sec = len(bounds)
    sector_user = np.full(n_sec, -1, dtype=int)
    for k in range(K):
        sec = (np.searchsorted(bounds, ang[k], side="right") - 1) % n_sec
        if sector_user[sec] < 0:
            sector_user[sec] = k
    for sec in range(n_sec):  # sectors without a user borrow the nearest bearing
        if sector_user[sec] < 0:
            mid_ang = bounds[sec] if n_sec == 1 else (
                bounds[sec] + ((bounds[(sec + 1) % n_sec] - bounds[sec]) % (2 * np.pi)) / 2
            )
            gaps = np.abs((ang - mid_ang + np.pi) % (2 * np.pi) - np.pi)
            sector_user[sec] = int(np.argmin(gaps))
    vectors = np.stack([
        optimal_phases(
            ap + 0.25 * (scen.user_positions[k] - ap), scen.user_positions[k], ap,
            altitude=scen.uav_altitude, num_elements=scen.num_elements,
            spacing_ratio=scen.element_spacing_ratio,
        )
        for k in sector_user
    ])
    return bounds, vectors


def fixed_sector_phases(positions: np.ndarray, scen: Scenario) -> np.ndarray:
    """Per-slot phases from the sector the platform currently flies in."""
    bounds, vectors = sector_phase_table(scen)
    ang = np.arctan2(*(np.asarray(positions) - scen.ap_xy).T[::-1]) % (2 * np.pi)
    idx = (np.searchsorted(bounds, ang, side="right") - 1) % len(bounds)
    return vectors[idx]


def run_baseline(kind: str, scen: Scenario, cfg: PlannerConfig | None = None) -> RunResult:
    """Reference schemes on the fixed reference track."""
    cfg = cfg or PlannerConfig()
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    state = initial_state(scen)
    kin = _kinematics_from_state(state, scen)
    pos = state.positions[:-1]
    n_s = scen.num_slots
    if kind == "local_only":
        plan = PowerOffloadPlan(
            powers=np.zeros((scen.num_users, n_s)),
            ratios=np.ones(scen.num_users),
            targets=np.zeros(scen.num_users),
            achieved=np.zeros(scen.num_users),
        )
        phases = np.zeros((n_s, scen.num_elements))
        gain_ap, gain_eve_kk = exact_gain_tables(pos, phases, scen)
        return RunResult(
            plan=plan, kinematics=kin, phases=phases,
            owners=np.zeros(n_s, dtype=int), trace=[total_objective(plan.powers, plan.ratios, scen)],
            outer_iters=0, objective=total_objective(plan.powers, plan.ratios, scen),
            feasibility=verify_plan(plan, kin, scen, gain_ap, gain_eve_kk),
            gain_ap=gain_ap, gain_eve=gain_eve_kk,
        )
    # every scheme secures against the worst-case (coherently combined)
    # eavesdropper; the phase scheme only changes the legitimate-link gain
    _, gain_eve_kk = trajectory_form_gains(pos, scen)
    if kind == "identity_phase":
        phases = np.zeros((n_s, scen.num_elements))
        gain_ap, _ = exact_gain_tables(pos, phases, scen)
    elif kind == "fixed_phase":
        phases = fixed_sector_phases(pos, scen)
        gain_ap, _ = exact_gain_tables(pos, phases, scen)
    else:  # no_traj_opt_phase: coherent phases for the served user
        gain_ap, _ = trajectory_form_gains(pos, scen)
        phases = None
    try:
        state, plan = power_stage(state, scen, gain_ap, gain_eve_kk, cfg)
    except InfeasiblePlan:
        return run_baseline("local_only", scen, cfg)
    owners = assign_slot_owners(state, scen)
    if phases is None:
        phases = schedule_phases(pos, owners, scen)
    obj = total_objective(plan.powers, plan.ratios, scen)
    return RunResult(
        plan=plan, kinematics=kin, phases=phases, owners=owners,
        trace=[obj], outer_iters=1, objective=obj,
        feasibility=verify_plan(plan, kin, scen, gain_ap, gain_eve_kk),
        gain_ap=gain_ap, gain_eve=gain_eve_kk,
    )
