"""Energy bookkeeping and discrete platform kinematics.

Covers user-side communication and local-execution energy, both flight
cost models, and construction/validation of discrete tracks (positions,
velocities, accelerations per slot).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import FlyingModel1, FlyingModel2, Scenario

MIN_EVAL_SPEED = 0.1  # m/s floor shielding the induced-power 1/speed term


class InfeasibleKinematics(ValueError):
    """Raised when no valid track exists for the requested boundary conditions."""


def comm_energy(power, slot_length: float, num_users: int) -> np.ndarray:
    """Per-slot uplink energy of one user transmitting in its 1/K share."""
    return np.asarray(power) * slot_length / num_users


def local_energy(capacitance, cycles_per_bit, input_bits, mission_time, ratio=1.0) -> np.ndarray:
    """Energy to compute ratio*input_bits on-device within the mission time."""
    bits = np.asarray(ratio) * np.asarray(input_bits)
    return np.asarray(capacitance) * np.asarray(cycles_per_bit) ** 3 * bits**3 / mission_time**2


def flying_energy_m1(speed, mass: float, slot_length: float) -> np.ndarray:
    """Kinetic-energy flight cost for one slot; hovering is free."""
    return 0.5 * mass * slot_length * np.asarray(speed) ** 2


def flying_energy_m2(velocity, accel, kappa1: float, kappa2: float, gravity: float) -> np.ndarray:
    """Aerodynamic flight cost for one slot; rejects zero speed (singular model)."""
    velocity = np.atleast_2d(np.asarray(velocity, dtype=float))
    accel = np.atleast_2d(np.asarray(accel, dtype=float))
    speed = np.linalg.norm(velocity, axis=-1)
    if np.any(speed == 0.0):
        raise ValueError("model-2 flight cost is singular at zero speed")
    speed = np.maximum(speed, MIN_EVAL_SPEED)
    a2 = np.sum(accel**2, axis=-1)
    out = kappa1 * speed**3 + (kappa2 / speed) * (1.0 + a2 / gravity**2)
    return out if out.size > 1 else float(out[0])


@dataclass
class Kinematics:
    """Discrete track: N+1 positions, and for model 2 velocities/accelerations."""

    positions: np.ndarray  # (N+1, 2)
    velocities: np.ndarray | None = None  # (N+1, 2), model 2 only
    accelerations: np.ndarray | None = None  # (N, 2), model 2 only

    @property
    def num_slots(self) -> int:
        return len(self.positions) - 1

    def speeds(self, slot_length: float) -> np.ndarray:
        """Per-slot scalar speeds from consecutive displacements."""
        steps = np.diff(self.positions, axis=0)
        return np.linalg.norm(steps, axis=1) / slot_length

    def flying_energy(self, scen: Scenario) -> np.ndarray:
        """Per-slot flight energy under the scenario's cost model."""
        if isinstance(scen.flying, FlyingModel1):
            return flying_energy_m1(self.speeds(scen.slot_length), scen.flying.mass, scen.slot_length)
        f = scen.flying
        return np.asarray(
            flying_energy_m2(self.velocities[:-1], self.accelerations, f.kappa1, f.kappa2, f.gravity)
        )

    def check(self, scen: Scenario, tol: float = 1e-6) -> None:
        """Assert mobility, boundary, and (model 2) consistency invariants."""
        n = scen.num_slots
        if len(self.positions) != n + 1:
            raise InfeasibleKinematics(f"expected {n + 1} positions, got {len(self.positions)}")
        steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        if np.any(steps > scen.d_max * (1 + tol)):
            raise InfeasibleKinematics("per-slot displacement exceeds v_max * slot")
        for name, target in (("initial", scen.initial_xy), ("terminal", scen.terminal_xy)):
            got = self.positions[0 if name == "initial" else -1]
            if np.linalg.norm(got - np.asarray(target)) > 2e-6:
                raise InfeasibleKinematics(f"{name} position off by more than 2e-6 m")
        if scen.model == 2:
            ts = scen.slot_length
            rebuilt = reconstruct_positions(self.positions[0], self.velocities, self.accelerations, ts)
            if np.max(np.linalg.norm(rebuilt - self.positions, axis=1)) > 1e-9:
                raise InfeasibleKinematics("positions inconsistent with velocities/accelerations")
            dv = np.diff(self.velocities, axis=0) - self.accelerations * ts
            if np.max(np.abs(dv)) > 1e-9:
                raise InfeasibleKinematics("velocity updates inconsistent with accelerations")


def reconstruct_positions(p0, velocities, accelerations, slot_length: float) -> np.ndarray:
    """Integrate the second-order slot update from the starting position."""
    v = np.asarray(velocities, dtype=float)
    a = np.asarray(accelerations, dtype=float)
    steps = v[:-1] * slot_length + 0.5 * a * slot_length**2
    out = np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)], axis=0)
    return np.asarray(p0, dtype=float)[None, :] + out


def total_objective(powers: np.ndarray, ratios: np.ndarray, scen: Scenario) -> float:
    """Total user-device energy: communication plus local execution."""
    comm = float(np.sum(comm_energy(powers, scen.slot_length, scen.num_users)))
    local = sum(
        float(local_energy(u.switched_capacitance, u.cycles_per_bit, u.input_bits, scen.mission_time, r))
        for u, r in zip(scen.users, ratios)
    )
    return comm + local


def _polyline_track(waypoints: np.ndarray, num_slots: int) -> np.ndarray:
    """Sample num_slots+1 points at constant arc-length speed along a polyline."""
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    if total == 0.0:
        return np.repeat(waypoints[:1], num_slots + 1, axis=0)
    s = np.linspace(0.0, total, num_slots + 1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    out = np.empty((num_slots + 1, 2))
    for i, si in enumerate(s):
        j = min(np.searchsorted(cum, si, side="right") - 1, len(seg) - 1)
        frac = 0.0 if seg_len[j] == 0 else (si - cum[j]) / seg_len[j]
        out[i] = waypoints[j] + frac * seg[j]
    return out


def reference_path(scen: Scenario) -> np.ndarray:
    """Constant-speed reference track used for initialization and fixed-path runs.

    Distinct endpoints give the straight line between them.  Coinciding
    endpoints give an out-and-back sweep through the point mirrored across
    the AP (shrunk if v_max cannot cover it); hovering in place would leave
    symmetric layouts with no positive secrecy margin at all.
    """
    p_i = np.asarray(scen.initial_xy, dtype=float)
    p_f = np.asarray(scen.terminal_xy, dtype=float)
    n = scen.num_slots
    if np.linalg.norm(p_f - p_i) > 1e-9:
        return _polyline_track(np.vstack([p_i, p_f]), n)
    p_out = 2.0 * scen.ap_xy - p_i
    reach = np.linalg.norm(p_out - p_i)
    if reach < 1e-9:  # started on the AP: sweep along +x instead
        p_out = p_i + np.array([scen.v_max * scen.mission_time / 4.0, 0.0])
        reach = np.linalg.norm(p_out - p_i)
    beta = min(1.0, 0.95 * scen.v_max * scen.mission_time / (2.0 * reach))
    p_out = p_i + beta * (p_out - p_i)
    return _polyline_track(np.vstack([p_i, p_out, p_i]), n)


def initial_kinematics(scen: Scenario) -> Kinematics:
    """Feasible starting track for the optimizer (also the fixed-path baseline)."""
    if scen.model == 1:
        kin = Kinematics(positions=reference_path(scen))
        kin.check(scen)
        if float(kin.flying_energy(scen).sum()) > scen.energy_budget:
            raise InfeasibleKinematics("reference path exceeds the flight energy budget")
        return kin
    return _model2_initial(scen)


def _model2_initial(scen: Scenario) -> Kinematics:
    """Closed discrete loop (circle plus drift) meeting the boundary velocities.

    Headings rotate through a full turn so velocity sums telescope to the
    exact endpoint displacement; slot updates hold exactly by construction.
    """
    f = scen.flying
    assert isinstance(f, FlyingModel2)
    n, ts = scen.num_slots, scen.slot_length
    p_i = np.asarray(scen.initial_xy, dtype=float)
    p_f = np.asarray(scen.terminal_xy, dtype=float)
    disp = p_f - p_i
    dist = np.linalg.norm(disp)
    direction = disp / dist if dist > 1e-9 else np.array([1.0, 0.0])
    v_bnd = f.boundary_speed * direction
    drift = disp / scen.mission_time
    c1 = v_bnd - drift
    sv = np.linalg.norm(c1)
    if sv < 1e-9:
        vel = np.tile(v_bnd, (n + 1, 1))
    else:
        phi0 = np.arctan2(c1[1], c1[0])
        ang = phi0 + 2.0 * np.pi * np.arange(n + 1) / n
        vel = drift[None, :] + sv * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    speeds = np.linalg.norm(vel, axis=1)
    if speeds.min() < 2 * MIN_EVAL_SPEED:
        raise InfeasibleKinematics("model-2 starting loop passes too close to zero speed")
    if speeds.max() > scen.v_max * (1 + 1e-9):
        raise InfeasibleKinematics("model-2 starting loop exceeds v_max")
    acc = np.diff(vel, axis=0) / ts
    if np.linalg.norm(acc, axis=1).max() > f.a_max:
        raise InfeasibleKinematics("model-2 starting loop exceeds the acceleration limit")
    pos = reconstruct_positions(p_i, vel, acc, ts)
    pos[-1] = p_f  # telescoped sums close exactly; pin away float dust
    kin = Kinematics(positions=pos, velocities=vel, accelerations=acc)
    kin.check(scen)
    if float(kin.flying_energy(scen).sum()) > scen.energy_budget:
        raise InfeasibleKinematics("model-2 starting loop exceeds the flight energy budget")
    return kin
