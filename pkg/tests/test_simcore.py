"""Port typing, wiring validation, and value propagation."""

import pytest

from twinpair.simcore import (
    Connection,
    DuplicateInput,
    Kind,
    KindMismatch,
    PortSpec,
    StepUnit,
    UnitRegistry,
    UnknownPort,
    UnknownUnit,
    coerce,
    propagate,
    snapshot_outputs,
    validate_wiring,
)


class Producer(StepUnit):
    def outputs(self):
        return (PortSpec("value", Kind.REAL), PortSpec("count", Kind.INTEGER))

    def do_step(self, step, dt):
        self.out_ports["value"] = float(step)
        self.out_ports["count"] = step


class Consumer(StepUnit):
    def inputs(self):
        return (PortSpec("value", Kind.REAL), PortSpec("flag", Kind.BOOLEAN))

    def do_step(self, step, dt):
        pass


def wired_pair():
    reg = UnitRegistry()
    reg.add(Producer("src"))
    reg.add(Consumer("dst"))
    return reg


def test_coerce_widens_int_to_real():
    assert coerce(Kind.REAL, 3) == 3.0
    assert isinstance(coerce(Kind.REAL, 3), float)


def test_coerce_rejects_bool_for_numbers():
    # bool is an int subclass; without this check True would flow into
    # numeric ports silently.
    with pytest.raises(KindMismatch):
        coerce(Kind.INTEGER, True)
    with pytest.raises(KindMismatch):
        coerce(Kind.REAL, False)


def test_coerce_rejects_wrong_scalar():
    with pytest.raises(KindMismatch):
        coerce(Kind.BOOLEAN, 1)
    with pytest.raises(KindMismatch):
        coerce(Kind.TEXT, 1.5)
    with pytest.raises(KindMismatch):
        coerce(Kind.INTEGER, 1.5)


def test_port_defaults():
    assert PortSpec("x", Kind.REAL).default() == 0.0
    assert PortSpec("x", Kind.BOOLEAN).default() is False
    assert PortSpec("x", Kind.REAL, initial=2).default() == 2.0
    assert PortSpec("x", Kind.TEXT).default() == ""


def test_validate_wiring_accepts_good_plan():
    reg = wired_pair()
    plan = validate_wiring(reg, [Connection("src", "value", "dst", "value")])
    assert len(plan.connections) == 1
    assert plan.order == ("src", "dst")


def test_validate_wiring_unknown_unit_names_connection():
    reg = wired_pair()
    conn = Connection("nope", "value", "dst", "value")
    with pytest.raises(UnknownUnit) as err:
        validate_wiring(reg, [conn])
    assert "nope" in str(err.value)


def test_validate_wiring_unknown_port_names_connection():
    reg = wired_pair()
    conn = Connection("src", "value", "dst", "missing")
    with pytest.raises(UnknownPort) as err:
        validate_wiring(reg, [conn])
    assert str(conn) in str(err.value)


def test_validate_wiring_kind_mismatch():
    reg = wired_pair()
    conn = Connection("src", "count", "dst", "flag")  # integer -> boolean
    with pytest.raises(KindMismatch) as err:
        validate_wiring(reg, [conn])
    assert str(conn) in str(err.value)


def test_validate_wiring_duplicate_input():
    reg = UnitRegistry()
    reg.add(Producer("a"))
    reg.add(Producer("b"))
    reg.add(Consumer("dst"))
    with pytest.raises(DuplicateInput) as err:
        validate_wiring(
            reg,
            [
                Connection("a", "value", "dst", "value"),
                Connection("b", "value", "dst", "value"),
            ],
        )
    assert "dst.value" in str(err.value)


def test_wiring_kinds_are_strict():
    # values widen int to float on assignment, but wires do not: an
    # integer output may not feed a real input
    reg = wired_pair()
    with pytest.raises(KindMismatch):
        validate_wiring(reg, [Connection("src", "count", "dst", "value")])


def test_propagate_copies_outputs():
    reg = wired_pair()
    plan = validate_wiring(reg, [Connection("src", "value", "dst", "value")])
    src = reg.get("src")
    src.step(0.1)
    src.step(0.1)
    propagate(plan, reg)
    assert reg.get("dst").in_ports["value"] == 1.0


def test_order_is_topological_and_stable():
    reg = UnitRegistry()
    reg.add(Consumer("sink"))
    reg.add(Producer("feed"))
    plan = validate_wiring(reg, [Connection("feed", "value", "sink", "value")])
    # producer first despite insertion order
    assert plan.order == ("feed", "sink")
    again = validate_wiring(reg, [Connection("feed", "value", "sink", "value")])
    assert again.order == plan.order


class Echo(StepUnit):
    """Feeds its input back out, for cycle tests."""

    def inputs(self):
        return (PortSpec("x", Kind.REAL),)

    def outputs(self):
        return (PortSpec("x", Kind.REAL),)

    def do_step(self, step, dt):
        self.out_ports["x"] = self.in_ports["x"]


def test_cycle_is_allowed_and_order_deterministic():
    reg = UnitRegistry()
    reg.add(Echo("b"))
    reg.add(Echo("a"))
    plan = validate_wiring(
        reg,
        [Connection("a", "x", "b", "x"), Connection("b", "x", "a", "x")],
    )
    assert sorted(plan.order) == ["a", "b"]
    # cycle broken at the smallest id, so "a" leads
    assert plan.order[0] == "a"


def test_halted_unit_freezes():
    reg = wired_pair()
    src = reg.get("src")
    src.step(0.1)
    src.halt()
    src.step(0.1)
    assert src.steps_done == 1
    assert src.out_ports["value"] == 0.0
    assert not src.alive


def test_snapshot_outputs():
    reg = wired_pair()
    reg.get("src").step(0.1)
    snap = snapshot_outputs(reg)
    assert snap["src"]["value"] == 0.0
    assert snap["src"]["count"] == 0


def test_set_input_coerces_and_validates():
    unit = Consumer("c")
    unit.set_input("value", 2)
    assert unit.in_ports["value"] == 2.0
    with pytest.raises(UnknownPort):
        unit.set_input("bogus", 1.0)
    with pytest.raises(KindMismatch):
        unit.set_input("flag", 1)
