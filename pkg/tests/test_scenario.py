import math

import numpy as np
import pytest

from uavirs.scenario import (
    FlyingModel1,
    FlyingModel2,
    GroundUser,
    Scenario,
    ScenarioError,
    dbm_to_watts,
    emit_scenario,
    load_scenario,
    noise_power,
    with_elements,
    with_mission_time,
)

TABLE_DOC = """
[mission]
duration = 100
slot = 1
ap = 0, 0

[uav]
altitude = 90
v_max = 10
initial = -90, 0
terminal = -90, 0
energy_budget = 20e3
flying_model = 1
mass = 9.75

[irs]
elements = 16
spacing_ratio = 0.5

[radio]
ref_gain_db = -35
noise_dbm_hz = -174
bandwidth = 0.25e6
p_avg_dbm = 30
p_max_dbm = 40

[users.1]
position = -90, 90
input_bits = 5e6
cycles_per_bit = 1550.7
capacitance = 1e-26

[users.2]
position = 90, 90
input_bits = 5e6
cycles_per_bit = 1550.7
capacitance = 1e-26

[users.3]
position = 90, -90
input_bits = 5e6
cycles_per_bit = 1550.7
capacitance = 1e-26

[users.4]
position = -90, -90
input_bits = 5e6
cycles_per_bit = 1550.7
capacitance = 1e-26
"""


def test_table_document_loads_reference_values():
    s = load_scenario(TABLE_DOC)
    assert s.slot_length == 1.0
    assert s.v_max == 10.0
    assert s.uav_altitude == 90.0
    assert s.energy_budget == 20e3
    assert s.users[0].cycles_per_bit == 1550.7
    assert s.users[0].switched_capacitance == 1e-26
    assert s.ref_gain == pytest.approx(10**-3.5, rel=1e-12)
    assert s.p_avg == pytest.approx(1.0, rel=1e-12)
    assert s.p_max == pytest.approx(10.0, rel=1e-12)
    assert s.num_slots == 100
    assert s.d_max == 10.0
    # derived noise power, oracle: 10**((N0 + 10 log10 B - 30)/10)
    assert s.sigma2 == pytest.approx(9.95267926383742e-16, rel=1e-12)
    assert s.steer_coef == pytest.approx(math.pi, rel=1e-15)


def test_infeasible_endpoint_distance_rejected():
    doc = TABLE_DOC.replace("terminal = -90, 0", "terminal = 1910, 0")
    with pytest.raises(ScenarioError, match="terminal"):
        load_scenario(doc)


def test_noise_power_examples():
    assert noise_power(-174, 1.0) == pytest.approx(10**-20.4, rel=1e-12)
    assert noise_power(-174, 0.25e6) == pytest.approx(9.95267926383742e-16, rel=1e-12)
    ratio = noise_power(-204, 0.25e6) / noise_power(-174, 0.25e6)
    assert ratio == pytest.approx(1e-3, rel=1e-9)
    with pytest.raises(ScenarioError):
        noise_power(-174, 0.0)


def test_mission_time_must_divide():
    with pytest.raises(ScenarioError, match="duration"):
        load_scenario(TABLE_DOC.replace("duration = 100", "duration = 100.5"))


def test_unknown_and_missing_keys_are_named():
    with pytest.raises(ScenarioError, match="uav.wingspan"):
        load_scenario(TABLE_DOC.replace("mass = 9.75", "mass = 9.75\nwingspan = 2"))
    with pytest.raises(ScenarioError, match="uav.v_max"):
        load_scenario(TABLE_DOC.replace("v_max = 10\n", ""))


def test_duplicate_user_position_rejected():
    doc = TABLE_DOC.replace("position = 90, 90", "position = -90, 90")
    with pytest.raises(ScenarioError, match="users.2.position"):
        load_scenario(doc)


def test_dbm_helpers():
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-12)
    assert dbm_to_watts(40.0) == pytest.approx(10.0, rel=1e-12)


def _random_scenario(rng: np.random.Generator) -> Scenario:
    k = int(rng.integers(1, 5))
    pts = set()
    users = []
    while len(users) < k:
        pos = (float(rng.integers(-200, 200)), float(rng.integers(-200, 200)))
        if pos in pts or pos == (0.0, 0.0):
            continue
        pts.add(pos)
        users.append(
            GroundUser(
                position=pos,
                input_bits=float(rng.uniform(1e5, 1e7)),
                cycles_per_bit=float(rng.uniform(100, 2000)),
                switched_capacitance=float(rng.uniform(1e-27, 1e-24)),
            )
        )
    n_slots = int(rng.integers(4, 60))
    ts = float(rng.choice([0.5, 1.0, 2.0]))
    if rng.random() < 0.5:
        flying = FlyingModel1(mass=float(rng.uniform(1, 20)))
    else:
        flying = FlyingModel2(
            kappa1=float(rng.uniform(0.01, 0.2)),
            kappa2=float(rng.uniform(10, 200)),
            gravity=9.8,
            a_max=float(rng.uniform(2, 8)),
            boundary_speed=float(rng.uniform(3, 9)),
        )
    p_avg = float(rng.uniform(0.1, 2.0))
    return Scenario(
        users=tuple(users),
        ap_position=(0.0, 0.0),
        uav_altitude=float(rng.uniform(40, 150)),
        mission_time=n_slots * ts,
        slot_length=ts,
        v_max=10.0,
        initial_xy=(-50.0, 0.0),
        terminal_xy=(-50.0, 0.0),
        num_elements=int(rng.integers(1, 65)),
        element_spacing_ratio=0.5,
        ref_gain=10**-3.5,
        noise_density_dbm=-174.0,
        bandwidth=0.25e6,
        p_avg=p_avg,
        p_max=p_avg * float(rng.uniform(1.0, 10.0)),
        energy_budget=float(rng.uniform(1e3, 1e5)),
        flying=flying,
        phase_levels=int(rng.integers(2, 16)) if rng.random() < 0.3 else None,
    )


def test_emit_load_round_trip_identity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = _random_scenario(rng)
        assert load_scenario(emit_scenario(s)) == s


def test_d_max_derivation_holds_for_random_scenarios():
    rng = np.random.default_rng(8)
    for _ in range(20):
        s = _random_scenario(rng)
        assert s.d_max == s.v_max * s.slot_length


def test_overrides():
    s = load_scenario(TABLE_DOC)
    assert with_mission_time(s, 180).num_slots == 180
    assert with_elements(s, 128).num_elements == 128
