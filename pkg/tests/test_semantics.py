"""Kernel execution: expressions, reactions, termination, and cuts."""

import pytest
from hypothesis import given, strategies as st

import timetide.kernel as k
from timetide.central import run_centralised
from timetide.desugar import TaskParams, lower_task
from timetide.diagnostics import DeadlockError, RuntimeFault
from timetide.schedule import Greedy, RoundRobin, Seeded
from timetide.semantics import eval_expr
from timetide.trace import Trace, projections_equal
from timetide.values import EMPTY


def ev(expr, data=None, hosts=None):
    return eval_expr(expr, data or {}, hosts)


def binop(op, a, b):
    return ev(k.KBinary(op, _lit(a), _lit(b)))


def _lit(v):
    if isinstance(v, bool):
        return k.KBool(v)
    if isinstance(v, int):
        return k.KInt(v)
    if isinstance(v, float):
        return k.KFloat(v)
    raise TypeError(v)


class TestExpressions:
    def test_arithmetic(self):
        assert binop("+", 2, 3) == 5
        assert binop("-", 2, 3) == -1
        assert binop("*", -4, 3) == -12

    def test_division_truncates_toward_zero(self):
        assert binop("/", 7, 2) == 3
        assert binop("/", -7, 2) == -3
        assert binop("/", 7, -2) == -3
        assert binop("/", -7, -2) == 3

    def test_division_by_zero_faults(self):
        with pytest.raises(RuntimeFault):
            binop("/", 1, 0)

    @given(st.integers(-10**9, 10**9), st.integers(-10**9, 10**9))
    def test_division_matches_int_truncation(self, a, b):
        if b == 0:
            return
        assert binop("/", a, b) == int(a / b)

    def test_comparisons(self):
        assert binop("<", 1, 2) is True
        assert binop(">=", 2, 2) is True
        assert binop("!=", 2, 3) is True
        assert binop("==", True, True) is True

    def test_bool_and_int_never_compare_equal(self):
        assert binop("==", 1, True) is False

    def test_short_circuit(self):
        # the right side would fault if evaluated
        bad = k.KBinary("/", k.KInt(1), k.KInt(0))
        expr = k.KBinary(
            "and", k.KBool(False), k.KBinary("==", bad, k.KInt(0))
        )
        assert ev(expr) is False

    def test_and_requires_booleans(self):
        with pytest.raises(RuntimeFault):
            binop("and", 1, 0)

    def test_unary_negation(self):
        assert ev(k.KUnary("-", k.KInt(5))) == -5
        assert ev(k.KUnary("not", k.KBool(True))) is False

    def test_read_clears_freshness(self):
        data = {"last:c": 9, "fresh:c": True}
        assert ev(k.KRead("c"), data) == 9
        assert data["fresh:c"] is False

    def test_effect_free_read_keeps_freshness(self):
        data = {"last:c": 9, "fresh:c": True}
        assert eval_expr(k.KRead("c"), data, None, effect_free=True) == 9
        assert data["fresh:c"] is True

    def test_empty_arithmetic_faults(self):
        data = {"last:c": EMPTY}
        with pytest.raises(RuntimeFault):
            ev(k.KBinary("+", k.KRead("c"), k.KInt(1)), data)

    def test_unknown_variable_faults(self):
        with pytest.raises(RuntimeFault):
            ev(k.KVar("ghost"))

    def test_host_call(self):
        assert ev(k.KCall("twice", (k.KInt(4),)), hosts={"twice": lambda v: 2 * v}) == 8

    def test_host_exception_becomes_fault(self):
        def boom(v):
            raise KeyError("nope")

        with pytest.raises(RuntimeFault) as err:
            ev(k.KCall("boom", (k.KInt(1),)), hosts={"boom": boom})
        assert "boom" in str(err.value)


# Small fixed programs with frozen outcomes.


def test_loop_sync1_reacts_once_per_tick():
    prog = k.KernelProgram(threads={"T": k.KLoop(k.KSync(1))}, channels={})
    res = run_centralised(prog, tick_limit=5)
    assert res.reactions["T"] == 5
    assert res.clocks["T"] == 5
    assert res.statuses["T"] == "limit"


WRITER = k.KLoop(k.kseq([k.KSend("ch", k.KInt(1)), k.KSync(1)]))
READER = k.KLoop(k.kseq([k.KAssign("x", k.KRead("ch")), k.KSync(1)]))
SPEC = k.ChannelSpec("ch", 2, "int", ("W",), ("R",))


def test_greedy_reader_blocks_until_writer_supplies():
    prog = k.KernelProgram(threads={"W": WRITER, "R": READER}, channels={"ch": SPEC})
    res = run_centralised(prog, tick_limit=5, schedule=Greedy(favourite="R"))
    assert res.clocks == {"W": 5, "R": 5}


def test_terminated_writer_drains_reads_to_empty():
    one_shot = k.kseq([k.KSend("ch", k.KInt(9)), k.KSync(1)])
    prog = k.KernelProgram(threads={"W": one_shot, "R": READER}, channels={"ch": SPEC})
    res = run_centralised(prog, tick_limit=6)
    assert res.statuses == {"W": "terminated", "R": "limit"}
    assert res.clocks["R"] == 6


def test_limit_stopped_writer_cuts_hungry_reader():
    # reader wants 4 ticks per step; writer stops supplying at the limit
    hungry = k.KLoop(k.kseq([k.KAssign("x", k.KRead("ch")), k.KSync(4)]))
    prog = k.KernelProgram(threads={"W": WRITER, "R": hungry}, channels={"ch": SPEC})
    res = run_centralised(prog, tick_limit=5)
    assert res.statuses == {"W": "limit", "R": "cut"}
    assert res.clocks == {"W": 5, "R": 4}


def test_task_bodies_land_on_duration_boundaries():
    body = k.KSend("out", k.KInt(1))
    term, duid = lower_task(TaskParams(10, 7), body)
    prog = k.KernelProgram(
        threads={"C": term},
        channels={"out": k.ChannelSpec("out", 1, "int", ("C",), ())},
        tasks=(k.TaskMeta("C", 10, 7, 0, duid),),
    )
    tr = Trace()
    res = run_centralised(prog, tick_limit=20, trace=tr)
    bodies = [rec.theta for rec in tr.records if rec.kind == "body"]
    assert bodies == [7, 17]
    assert res.clocks["C"] == 20

    res60 = run_centralised(prog, tick_limit=60)
    assert res60.reactions["C"] == 12  # two syncs per period


def test_schedule_choice_never_changes_projections():
    traces = []
    for sched in (RoundRobin(), Seeded(3), Greedy(favourite="W")):
        tr = Trace()
        run_centralised(
            k.KernelProgram(threads={"W": WRITER, "R": READER}, channels={"ch": SPEC}),
            tick_limit=30,
            schedule=sched,
            trace=tr,
        )
        traces.append(tr)
    assert projections_equal(traces[0], traces[1], ["W", "R"]) is None
    assert projections_equal(traces[0], traces[2], ["W", "R"]) is None


def test_mutual_wait_is_a_deadlock():
    # two readers, no writer progress possible: a <-> b with zero supply
    ra = k.KLoop(k.kseq([k.KAssign("x", k.KRead("a")), k.KSend("b", k.KInt(1)), k.KSync(1)]))
    rb = k.KLoop(k.kseq([k.KAssign("y", k.KRead("b")), k.KSend("a", k.KInt(1)), k.KSync(1)]))
    prog = k.KernelProgram(
        threads={"A": ra, "B": rb},
        channels={
            "a": k.ChannelSpec("a", 0, "int", ("B",), ("A",)),
            "b": k.ChannelSpec("b", 0, "int", ("A",), ("B",)),
        },
    )
    with pytest.raises(DeadlockError) as err:
        run_centralised(prog, tick_limit=4)
    assert "waiting" in str(err.value).lower() or "needs" in str(err.value).lower()


def test_runtime_fault_carries_thread_and_tick():
    prog = k.KernelProgram(
        threads={"T": k.KLoop(k.kseq([
            k.KSync(1),
            k.KAssign("x", k.KBinary("/", k.KInt(1), k.KInt(0))),
        ]))},
        channels={},
    )
    with pytest.raises(RuntimeFault) as err:
        run_centralised(prog, tick_limit=3)
    assert err.value.thread == "T"


def test_abort_runs_body_until_condition():
    # count to 3 and leave the abort; then loop forever on sync
    counter = k.kseq(
        [
            k.KAssign("n", k.KInt(0)),
            k.KAbort(
                k.KLoop(
                    k.kseq(
                        [
                            k.KSync(1),
                            k.KAssign("n", k.KBinary("+", k.KVar("n"), k.KInt(1))),
                            k.KSend("out", k.KVar("n")),
                            k.KCheckAbort(k.KBinary("==", k.KVar("n"), k.KInt(3)), "L"),
                        ]
                    )
                ),
                k.KBinary("==", k.KVar("n"), k.KInt(3)),
                "L",
            ),
            k.KLoop(k.KSync(1)),
        ]
    )
    prog = k.KernelProgram(
        threads={"T": counter},
        channels={"out": k.ChannelSpec("out", 1, "int", ("T",), ())},
    )
    tr = Trace()
    run_centralised(prog, tick_limit=8, trace=tr)
    sent = [r.value for r in tr.records if r.kind == "push" and r.value is not EMPTY]
    assert sent == [1, 2, 3]
