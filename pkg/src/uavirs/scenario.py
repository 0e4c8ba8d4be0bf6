"""Mission scenario: physical constants, node geometry, and file I/O.

A scenario file is an INI-style document with sections [mission], [uav],
[irs], [radio] and one [users.N] section per ground user.  All values are
SI on the inside (watts, joules, meters, radians); decibel forms are
accepted only at the file boundary.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np


class ScenarioError(ValueError):
    """Raised when a scenario document is malformed or violates an invariant."""

    def __init__(self, field: str, rule: str):
        self.field = field
        self.rule = rule
        super().__init__(f"{field}: {rule}")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def noise_power(noise_density_dbm_hz: float, bandwidth_hz: float) -> float:
    """AWGN power in watts over `bandwidth_hz` for a density given in dBm/Hz."""
    if bandwidth_hz <= 0:
        raise ScenarioError("bandwidth", "must be positive")
    return dbm_to_watts(noise_density_dbm_hz + 10.0 * math.log10(bandwidth_hz))


@dataclass(frozen=True)
class GroundUser:
    """Ground device with a computation task, at a fixed planar position (z = 0)."""

    position: tuple[float, float]
    input_bits: float
    cycles_per_bit: float
    switched_capacitance: float


@dataclass(frozen=True)
class FlyingModel1:
    """Kinetic-energy-only flight cost; hovering is free."""

    mass: float


@dataclass(frozen=True)
class FlyingModel2:
    """Aerodynamic flight cost with parasitic and induced terms; singular at rest."""

    kappa1: float
    kappa2: float
    gravity: float
    a_max: float
    boundary_speed: float


@dataclass(frozen=True)
class Scenario:
    users: tuple[GroundUser, ...]
    ap_position: tuple[float, float]
    uav_altitude: float
    mission_time: float
    slot_length: float
    v_max: float
    initial_xy: tuple[float, float]
    terminal_xy: tuple[float, float]
    num_elements: int
    element_spacing_ratio: float
    ref_gain: float
    noise_density_dbm: float
    bandwidth: float
    p_avg: float
    p_max: float
    energy_budget: float
    flying: FlyingModel1 | FlyingModel2
    phase_levels: int | None = None

    def __post_init__(self):
        if not self.users:
            raise ScenarioError("users", "at least one ground user required")
        if self.uav_altitude <= 0:
            raise ScenarioError("uav.altitude", "must be positive")
        if self.slot_length <= 0:
            raise ScenarioError("mission.slot", "must be positive")
        n = self.mission_time / self.slot_length
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ScenarioError(
                "mission.duration", "must be a positive integer multiple of the slot length"
            )
        if self.v_max <= 0:
            raise ScenarioError("uav.v_max", "must be positive")
        dist = math.dist(self.initial_xy, self.terminal_xy)
        if dist > self.v_max * self.mission_time * (1 + 1e-12):
            raise ScenarioError(
                "uav.terminal",
                f"initial-terminal distance {dist:.3f} m exceeds v_max*T = "
                f"{self.v_max * self.mission_time:.3f} m",
            )
        if self.num_elements < 1:
            raise ScenarioError("irs.elements", "must be >= 1")
        if self.element_spacing_ratio <= 0:
            raise ScenarioError("irs.spacing_ratio", "must be positive")
        if self.phase_levels is not None and self.phase_levels < 2:
            raise ScenarioError("irs.phase_levels", "must be >= 2 when discrete")
        if self.ref_gain <= 0:
            raise ScenarioError("radio.ref_gain", "must be positive")
        if self.bandwidth <= 0:
            raise ScenarioError("radio.bandwidth", "must be positive")
        if not (0 < self.p_avg <= self.p_max):
            raise ScenarioError("radio.p_avg", "requires 0 < p_avg <= p_max")
        if self.energy_budget <= 0:
            raise ScenarioError("uav.energy_budget", "must be positive")
        seen = {}
        for i, u in enumerate(self.users, start=1):
            if u.input_bits <= 0:
                raise ScenarioError(f"users.{i}.input_bits", "must be positive")
            if u.cycles_per_bit <= 0:
                raise ScenarioError(f"users.{i}.cycles_per_bit", "must be positive")
            if u.switched_capacitance <= 0:
                raise ScenarioError(f"users.{i}.capacitance", "must be positive")
            if u.position == self.ap_position:
                raise ScenarioError(f"users.{i}.position", "coincides with the AP")
            if u.position in seen:
                raise ScenarioError(
                    f"users.{i}.position", f"coincides with users.{seen[u.position]}"
                )
            seen[u.position] = i
        if isinstance(self.flying, FlyingModel1):
            if self.flying.mass <= 0:
                raise ScenarioError("uav.mass", "must be positive")
        else:
            f = self.flying
            if min(f.kappa1, f.kappa2, f.gravity, f.a_max, f.boundary_speed) <= 0:
                raise ScenarioError("uav.flying_model", "model-2 constants must be positive")
            if f.boundary_speed > self.v_max:
                raise ScenarioError("uav.boundary_speed", "exceeds v_max")

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_slots(self) -> int:
        return round(self.mission_time / self.slot_length)

    @property
    def d_max(self) -> float:
        """Largest per-slot displacement the UAV can fly."""
        return self.v_max * self.slot_length

    @property
    def model(self) -> int:
        return 1 if isinstance(self.flying, FlyingModel1) else 2

    @cached_property
    def sigma2(self) -> float:
        """Receiver noise power in watts over the per-user bandwidth."""
        return noise_power(self.noise_density_dbm, self.bandwidth)

    @cached_property
    def steer_coef(self) -> float:
        """Per-element steering phase increment k_w * d = 2*pi*(d/lambda)."""
        return 2.0 * math.pi * self.element_spacing_ratio

    @cached_property
    def user_positions(self) -> np.ndarray:
        return np.array([u.position for u in self.users], dtype=float)

    @cached_property
    def ap_xy(self) -> np.ndarray:
        return np.array(self.ap_position, dtype=float)

    @cached_property
    def input_bits(self) -> np.ndarray:
        return np.array([u.input_bits for u in self.users], dtype=float)


def with_mission_time(scen: Scenario, mission_time: float) -> Scenario:
    return replace(scen, mission_time=float(mission_time))


def with_elements(scen: Scenario, num_elements: int) -> Scenario:
    return replace(scen, num_elements=int(num_elements))


_SCALAR_KEYS = {
    ("mission", "duration"),
    ("mission", "slot"),
    ("uav", "altitude"),
    ("uav", "v_max"),
    ("uav", "energy_budget"),
    ("uav", "mass"),
    ("uav", "kappa1"),
    ("uav", "kappa2"),
    ("uav", "gravity"),
    ("uav", "a_max"),
    ("uav", "boundary_speed"),
    ("irs", "spacing_ratio"),
    ("radio", "ref_gain"),
    ("radio", "ref_gain_db"),
    ("radio", "noise_dbm_hz"),
    ("radio", "bandwidth"),
    ("radio", "p_avg_w"),
    ("radio", "p_avg_dbm"),
    ("radio", "p_max_w"),
    ("radio", "p_max_dbm"),
}


class _Doc:
    """Strict view over a parsed INI document; every key must be consumed."""

    def __init__(self, text: str):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ScenarioError("document", f"parse failure: {exc}") from None
        self.data = {s: dict(cp.items(s)) for s in cp.sections()}

    def take(self, section: str, key: str, default=None):
        sec = self.data.get(section)
        if sec is None or key not in sec:
            if default is not None:
                return default
            raise ScenarioError(f"{section}.{key}", "missing required key")
        return sec.pop(key)

    def has(self, section: str, key: str) -> bool:
        return key in self.data.get(section, {})

    def finish(self):
        for section, sec in self.data.items():
            for key in sec:
                raise ScenarioError(f"{section}.{key}", "unknown key")


def _parse_float(raw: str, field: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ScenarioError(field, f"not a number: {raw!r}") from None


def _parse_pair(raw: str, field: str) -> tuple[float, float]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ScenarioError(field, f"expected 'x, y', got {raw!r}")
    return (_parse_float(parts[0], field), _parse_float(parts[1], field))


def load_scenario(text: str) -> Scenario:
    """Parse a scenario document, validate all invariants, return the scenario."""
    doc = _Doc(text)
    f = lambda sec, key, default=None: _parse_float(doc.take(sec, key, default), f"{sec}.{key}")

    mission_time = f("mission", "duration")
    slot = f("mission", "slot")
    ap = _parse_pair(doc.take("mission", "ap"), "mission.ap")

    altitude = f("uav", "altitude")
    v_max = f("uav", "v_max")
    initial = _parse_pair(doc.take("uav", "initial"), "uav.initial")
    terminal = _parse_pair(doc.take("uav", "terminal"), "uav.terminal")
    energy_budget = f("uav", "energy_budget")
    model_raw = doc.take("uav", "flying_model")
    if str(model_raw).strip() == "1":
        flying: FlyingModel1 | FlyingModel2 = FlyingModel1(mass=f("uav", "mass"))
    elif str(model_raw).strip() == "2":
        flying = FlyingModel2(
            kappa1=f("uav", "kappa1"),
            kappa2=f("uav", "kappa2"),
            gravity=f("uav", "gravity", "9.8"),
            a_max=f("uav", "a_max"),
            boundary_speed=f("uav", "boundary_speed", "7.54"),
        )
    else:
        raise ScenarioError("uav.flying_model", f"must be 1 or 2, got {model_raw!r}")

    elements_raw = doc.take("irs", "elements")
    try:
        num_elements = int(elements_raw)
    except ValueError:
        raise ScenarioError("irs.elements", f"not an integer: {elements_raw!r}") from None
    spacing = f("irs", "spacing_ratio")
    levels_raw = str(doc.take("irs", "phase_levels", "continuous")).strip().lower()
    if levels_raw == "continuous":
        phase_levels = None
    else:
        try:
            phase_levels = int(levels_raw)
        except ValueError:
            raise ScenarioError(
                "irs.phase_levels", f"must be 'continuous' or an integer, got {levels_raw!r}"
            ) from None

    if doc.has("radio", "ref_gain"):
        ref_gain = f("radio", "ref_gain")
    else:
        ref_gain = db_to_linear(f("radio", "ref_gain_db"))
    noise_dbm = f("radio", "noise_dbm_hz")
    bandwidth = f("radio", "bandwidth")
    p_avg = f("radio", "p_avg_w") if doc.has("radio", "p_avg_w") else dbm_to_watts(f("radio", "p_avg_dbm"))
    p_max = f("radio", "p_max_w") if doc.has("radio", "p_max_w") else dbm_to_watts(f("radio", "p_max_dbm"))

    user_sections = sorted(
        (s for s in doc.data if s.startswith("users.")),
        key=lambda s: int(s.split(".", 1)[1]),
    )
    if not user_sections:
        raise ScenarioError("users", "no [users.N] sections found")
    users = []
    for sec in user_sections:
        users.append(
            GroundUser(
                position=_parse_pair(doc.take(sec, "position"), f"{sec}.position"),
                input_bits=f(sec, "input_bits"),
                cycles_per_bit=f(sec, "cycles_per_bit"),
                switched_capacitance=f(sec, "capacitance"),
            )
        )
    doc.finish()

    return Scenario(
        users=tuple(users),
        ap_position=ap,
        uav_altitude=altitude,
        mission_time=mission_time,
        slot_length=slot,
        v_max=v_max,
        initial_xy=initial,
        terminal_xy=terminal,
        num_elements=num_elements,
        element_spacing_ratio=spacing,
        ref_gain=ref_gain,
        noise_density_dbm=noise_dbm,
        bandwidth=bandwidth,
        p_avg=p_avg,
        p_max=p_max,
        energy_budget=energy_budget,
        flying=flying,
        phase_levels=phase_levels,
    )


def load_scenario_file(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def emit_scenario(scen: Scenario) -> str:
    """Render a scenario back to document text; load_scenario(emit(s)) == s."""
    r = repr
    lines = [
        "[mission]",
        f"duration = {r(scen.mission_time)}",
        f"slot = {r(scen.slot_length)}",
        f"ap = {r(scen.ap_position[0])}, {r(scen.ap_position[1])}",
        "",
        "[uav]",
        f"altitude = {r(scen.uav_altitude)}",
        f"v_max = {r(scen.v_max)}",
        f"initial = {r(scen.initial_xy[0])}, {r(scen.initial_xy[1])}",
        f"terminal = {r(scen.terminal_xy[0])}, {r(scen.terminal_xy[1])}",
        f"energy_budget = {r(scen.energy_budget)}",
        f"flying_model = {scen.model}",
    ]
    if isinstance(scen.flying, FlyingModel1):
        lines.append(f"mass = {r(scen.flying.mass)}")
    else:
        fl = scen.flying
        lines += [
            f"kappa1 = {r(fl.kappa1)}",
            f"kappa2 = {r(fl.kappa2)}",
            f"gravity = {r(fl.gravity)}",
            f"a_max = {r(fl.a_max)}",
            f"boundary_speed = {r(fl.boundary_speed)}",
        ]
    lines += [
        "",
        "[irs]",
        f"elements = {scen.num_elements}",
        f"spacing_ratio = {r(scen.element_spacing_ratio)}",
        f"phase_levels = {scen.phase_levels if scen.phase_levels is not None else 'continuous'}",
        "",
        "[radio]",
        f"ref_gain = {r(scen.ref_gain)}",
        f"noise_dbm_hz = {r(scen.noise_density_dbm)}",
        f"bandwidth = {r(scen.bandwidth)}",
        f"p_avg_w = {r(scen.p_avg)}",
        f"p_max_w = {r(scen.p_max)}",
    ]
    for i, u in enumerate(scen.users, start=1):
        lines += [
            "",
            f"[users.{i}]",
            f"position = {r(u.position[0])}, {r(u.position[1])}",
            f"input_bits = {r(u.input_bits)}",
            f"cycles_per_bit = {r(u.cycles_per_bit)}",
            f"capacitance = {r(u.switched_capacitance)}",
        ]
    return "\n".join(lines) + "\n"
