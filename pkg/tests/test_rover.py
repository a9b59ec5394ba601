"""Cruise controllers, command selection, vehicle integration, units."""

import pytest

from twinpair.heartbeat import TwinMode
from twinpair.rover import (
    AccCommand,
    AccParams,
    AccSource,
    AccUnit,
    EnvironmentState,
    PlantUnit,
    SelectorUnit,
    SensorReading,
    SensorUnit,
    Service,
    VehicleState,
    acc_params_from,
    advanced_acc,
    basic_acc,
    integrate,
    select_command,
    sense,
)

P = AccParams()


# (laser_front, velocity) -> (accel, target_vel), worked out by hand from
# d_stop=0.5, v_cruise=0.5, k_p=2.0, limits [-2.0, 1.0]
BASIC_CASES = [
    ((0.3, 0.5), (-2.0, 0.0)),     # obstacle inside stop distance
    ((0.49, 0.0), (-2.0, 0.0)),
    ((0.5, 0.0), (1.0, 0.5)),      # boundary is "clear": k_p*(0.5-0)=1.0
    ((4.0, 0.0), (1.0, 0.5)),
    ((4.0, 0.3), (0.4, 0.5)),
    ((4.0, 0.5), (0.0, 0.5)),      # at cruise speed, no correction
    ((4.0, 0.8), (-0.6000000000000001, 0.5)),  # 2.0 * (0.5 - 0.8) exactly
    ((4.0, 2.0), (-2.0, 0.5)),     # correction saturates at a_min
]


@pytest.mark.parametrize("inputs,expected", BASIC_CASES)
def test_basic_acc_table(inputs, expected):
    laser, vel = inputs
    cmd = basic_acc(laser, vel, P)
    assert (cmd.accel, cmd.target_vel) == expected


def test_advanced_acc_uses_nearest_zone():
    clear = SensorReading(laser_front=4.0, us_left=4.0, us_right=4.0, user_cmd=True)
    left = SensorReading(laser_front=4.0, us_left=0.3, us_right=4.0, user_cmd=True)
    right = SensorReading(laser_front=4.0, us_left=4.0, us_right=0.4, user_cmd=True)
    assert advanced_acc(clear, 0.5, P) == basic_acc(4.0, 0.5, P)
    assert advanced_acc(left, 0.5, P).accel == P.a_min
    assert advanced_acc(right, 0.5, P).accel == P.a_min


def test_basic_acc_ignores_side_zones():
    # the simple controller has no side sensors at all
    assert basic_acc(4.0, 0.5, P) == AccCommand(accel=0.0, target_vel=0.5)


def test_sense_caps_at_range_and_reports_flag():
    env = EnvironmentState(acc_active=True)
    env.place_obstacle("front", 9.0)
    env.place_obstacle("left", 0.3)
    reading = sense(env, P)
    assert reading.laser_front == P.r_max  # beyond range reads as max
    assert reading.us_left == 0.3
    assert reading.us_right == P.r_max
    assert reading.user_cmd is True
    env.remove_obstacle("left")
    assert sense(env, P).us_left == P.r_max


def test_integrate_accelerates_without_overshoot():
    state = VehicleState(position=0.0, velocity=0.45)
    nxt = integrate(state, AccCommand(accel=1.0, target_vel=0.5), 0.1, P)
    assert nxt.velocity == 0.5  # raw 0.55 capped at the target
    assert nxt.position == pytest.approx(0.045)


def test_integrate_brakes_without_undershoot():
    state = VehicleState(position=1.0, velocity=0.1)
    nxt = integrate(state, AccCommand(accel=-2.0, target_vel=0.0), 0.1, P)
    assert nxt.velocity == 0.0  # raw -0.1 floored at the target


def test_integrate_position_uses_start_of_step_velocity():
    state = VehicleState(position=0.0, velocity=0.5)
    nxt = integrate(state, AccCommand(accel=-2.0, target_vel=0.0), 0.1, P)
    assert nxt.position == pytest.approx(0.05)
    assert nxt.velocity == pytest.approx(0.3)


def test_integrate_clamps_to_vehicle_limit():
    state = VehicleState(position=0.0, velocity=0.95)
    nxt = integrate(state, AccCommand(accel=1.0, target_vel=5.0), 0.1, P)
    assert nxt.velocity == P.v_max


def test_integrate_never_reverses():
    state = VehicleState(position=0.0, velocity=0.0)
    nxt = integrate(state, AccCommand(accel=-2.0, target_vel=0.0), 0.1, P)
    assert nxt.velocity == 0.0


LOCAL = AccCommand(accel=0.2, target_vel=0.5)
REMOTE = AccCommand(accel=0.3, target_vel=0.4)
SYNCED = TwinMode.DT_SYNCED
FALLBACK = TwinMode.LOCAL_FALLBACK

# (service, mode, local_age, remote_age) -> source
SELECT_CASES = [
    (Service.AUGMENTATION, SYNCED, 0, 0, AccSource.DT_AUGMENTED),
    (Service.AUGMENTATION, SYNCED, 0, 3, AccSource.DT_AUGMENTED),
    (Service.AUGMENTATION, SYNCED, 0, 4, AccSource.PT_FALLBACK),
    (Service.AUGMENTATION, FALLBACK, 0, 0, AccSource.PT_FALLBACK),
    (Service.AUGMENTATION, TwinMode.SAFE_MODE, 0, 0, AccSource.PT_FALLBACK),
    (Service.REDUNDANCY, SYNCED, 0, 0, AccSource.PT_MAIN),
    (Service.REDUNDANCY, SYNCED, 3, 0, AccSource.PT_MAIN),
    (Service.REDUNDANCY, SYNCED, 4, 0, AccSource.DT_REPLICA),
    (Service.REDUNDANCY, SYNCED, 4, 4, AccSource.SAFE_STOP),
    (Service.REDUNDANCY, FALLBACK, 4, 0, AccSource.SAFE_STOP),
]


@pytest.mark.parametrize("service,mode,local_age,remote_age,source", SELECT_CASES)
def test_select_command_source_table(service, mode, local_age, remote_age, source):
    _, got = select_command(service, mode, LOCAL, local_age, REMOTE, remote_age, P)
    assert got is source


def test_select_safe_stop_command_is_full_brake():
    cmd, source = select_command(Service.REDUNDANCY, FALLBACK, LOCAL, 99, REMOTE, 99, P)
    assert source is AccSource.SAFE_STOP
    assert cmd == AccCommand(accel=P.a_min, target_vel=0.0)


def test_select_clamps_remote_into_actuator_envelope():
    wild = AccCommand(accel=50.0, target_vel=-3.0)
    cmd, source = select_command(Service.AUGMENTATION, SYNCED, LOCAL, 0, wild, 0, P)
    assert source is AccSource.DT_AUGMENTED
    assert cmd == AccCommand(accel=P.a_max, target_vel=0.0)


def test_select_clamp_is_identity_for_in_range_floats():
    exact = AccCommand(accel=0.49999923375222954, target_vel=2.220446049250313e-16)
    cmd, _ = select_command(Service.AUGMENTATION, SYNCED, LOCAL, 0, exact, 0, P)
    assert repr(cmd.accel) == repr(exact.accel)
    assert repr(cmd.target_vel) == repr(exact.target_vel)


def test_acc_params_from_overrides():
    p = acc_params_from({"v_cruise": 0.8, "d_stop": 1.0})
    assert p.v_cruise == 0.8
    assert p.d_stop == 1.0
    assert p.a_min == P.a_min  # untouched fields keep defaults


def test_acc_params_from_ignores_foreign_keys():
    # scenario params mix controller knobs with protocol knobs; the
    # controller picks out only what it knows
    p = acc_params_from({"v_cruise": 0.8, "miss_threshold": 5})
    assert p.v_cruise == 0.8
    assert p.freshness_limit == P.freshness_limit


def test_sensor_unit_publishes_environment():
    env = EnvironmentState(acc_active=False)
    unit = SensorUnit("sensors", env, P)
    unit.step(0.1)
    assert unit.get_output("laser_front") == P.r_max
    assert unit.get_output("user_cmd") is False
    env.acc_active = True
    env.place_obstacle("front", 0.3)
    unit.step(0.1)
    assert unit.get_output("laser_front") == 0.3
    assert unit.get_output("user_cmd") is True


def acc_unit(advanced):
    return AccUnit("acc", advanced=advanced, params=P)


def test_acc_unit_disabled_commands_nothing():
    unit = acc_unit(advanced=False)
    unit.set_input("laser_front", 0.1)  # would brake if enabled
    unit.set_input("enabled", False)
    unit.step(0.1)
    assert unit.get_output("target_accel") == 0.0
    assert unit.get_output("target_vel") == 0.0


def test_acc_unit_seq_advances_only_while_alive():
    unit = acc_unit(advanced=False)
    unit.set_input("enabled", True)
    unit.step(0.1)
    unit.step(0.1)
    assert unit.get_output("seq") == 2
    unit.halt()
    unit.step(0.1)
    assert unit.get_output("seq") == 2


def test_acc_unit_echoes_basis_step():
    unit = acc_unit(advanced=True)
    unit.set_input("basis_step", 41)
    unit.step(0.1)
    assert unit.get_output("basis_step") == 41


def test_acc_unit_advanced_brakes_on_side_obstacle():
    unit = acc_unit(advanced=True)
    unit.set_input("enabled", True)
    unit.set_input("laser_front", 4.0)
    unit.set_input("us_left", 0.2)
    unit.set_input("us_right", 4.0)
    unit.step(0.1)
    assert unit.get_output("target_accel") == P.a_min


def test_selector_unit_tracks_local_staleness_by_seq():
    unit = SelectorUnit("selector", Service.REDUNDANCY, P)
    unit.mode = TwinMode.DT_SYNCED
    unit.set_input("remote_age", 0)
    unit.set_input("remote_accel", 0.1)
    unit.set_input("remote_vel", 0.5)
    for seq in (1, 2, 3):
        unit.set_input("local_seq", seq)
        unit.step(0.1)
        assert unit.get_output("source") == AccSource.PT_MAIN.value
    # seq freezes: ages 1..3 still fresh, age 4 switches to the replica
    for _ in range(3):
        unit.step(0.1)
        assert unit.get_output("source") == AccSource.PT_MAIN.value
    unit.step(0.1)
    assert unit.get_output("source") == AccSource.DT_REPLICA.value


def test_plant_unit_integrates_and_can_be_forced():
    unit = PlantUnit("plant", P)
    unit.set_input("target_accel", 1.0)
    unit.set_input("target_vel", 0.5)
    unit.step(0.1)
    assert unit.get_output("velocity") == pytest.approx(0.1)
    unit.force_state(position=3.0, velocity=0.25)
    assert unit.get_output("velocity") == 0.25
    assert unit.get_output("position") == 3.0
