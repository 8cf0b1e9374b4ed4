"""Lowering from surface syntax to kernel terms.

The load-bearing shapes: a task becomes a loop whose sync amounts add up
to the period, latches sample inputs at release, outputs appear at the
duration boundary, and a task with duration > period splits into
staggered replicas behind an output mux.
"""

import pytest
from hypothesis import given, strategies as st

import timetide.kernel as k
from timetide.desugar import TaskParams, lower_task, to_kernel
from timetide.diagnostics import LoweringError, ValidationError
from timetide.surface import parse_text

from conftest import program_source


def lower(src: str):
    return to_kernel(parse_text(src, "test.tt"))


GOLDEN = """
module Fig :
  input a_in : int;
  output b_out : int;
  task(period=4, duration=2, offset=1):
    send b_out(a_in);
  end task;
end module;
module Top :
  channel a : int delay 1 = 0;
  channel b : int delay 1;
  run Fig(a/a_in, b/b_out);
  <> run Feed(a/x_out);
end module;
module Feed :
  output x_out : int;
  task(period=1, duration=1):
    send x_out(1);
  end task;
end module;
"""


def test_golden_task_lowering():
    """period 4, duration 2, offset 1: sync 1; latch; sync 2; send; sync 1."""
    kp = lower(GOLDEN)
    expected = k.KLoop(
        k.kseq(
            [
                k.KSync(1),
                k.KAssign("latch_a", k.KRead("a")),
                k.KSync(2),
                k.KSend("b", k.KVar("latch_a")),
                k.KSync(1),
            ]
        )
    )
    assert kp.threads["Fig"] == expected


def test_task_metadata():
    kp = lower(GOLDEN)
    meta = next(t for t in kp.tasks if t.thread == "Fig")
    assert (meta.period, meta.duration, meta.offset) == (4, 2, 1)


@given(
    st.integers(min_value=1, max_value=40),
    st.data(),
)
def test_sync_amounts_sum_to_period(period, data):
    duration = data.draw(st.integers(1, period))
    offset = data.draw(st.integers(0, 3 * period))
    term, _ = lower_task(
        TaskParams(period, duration, offset),
        k.KSend("out", k.KInt(1)),
        allow_wrap=True,
    )
    # find the loop, ignoring any hoisted offset prefix
    loop = next(t for t in k.seq_iter(term) if isinstance(t, k.KLoop))
    total = sum(
        s.amount for s in k.seq_iter(loop.body) if isinstance(s, k.KSync)
    )
    assert total == period


def test_offset_beyond_period_hoists_whole_periods():
    term, _ = lower_task(TaskParams(4, 2, 9), k.KSend("out", k.KInt(1)))
    parts = list(k.seq_iter(term))
    assert isinstance(parts[0], k.KSync) and parts[0].amount == 8
    assert isinstance(parts[-1], k.KLoop)


def test_duration_sync_uid_is_reported():
    term, uid = lower_task(TaskParams(4, 2, 0), k.KSend("out", k.KInt(1)))
    loop = next(t for t in k.seq_iter(term) if isinstance(t, k.KLoop))
    syncs = [s for s in k.seq_iter(loop.body) if isinstance(s, k.KSync)]
    assert any(s.uid == uid and s.amount == 2 for s in syncs)


PIPE = """
module Feed :
  output a_out : int;
  var n : int = 0 in
    task(period=1, duration=1):
      n = n + 1;
      send a_out(n);
    end task;
  end var;
end module;
module Worker :
  input a_in : int;
  output b_out : int;
  task(period=2, duration=3):
    if (fresh(a_in)) { send b_out(a_in + 1); };
  end task;
end module;
module Top :
  channel a : int delay 1;
  channel b : int delay 1;
  run Feed(a/a_out);
  <> run Worker(a/a_in, b/b_out);
end module;
"""


class TestPipelining:
    def test_replica_count_and_offsets(self):
        kp = lower(PIPE)
        replicas = sorted(
            (t for t in kp.tasks if t.thread.startswith("Worker")),
            key=lambda t: t.offset,
        )
        assert [(t.thread, t.period, t.duration, t.offset) for t in replicas] == [
            ("Worker#p0", 6, 3, 0),
            ("Worker#p1", 6, 3, 2),
            ("Worker#p2", 6, 3, 4),
        ]

    def test_output_channel_gets_a_mux(self):
        kp = lower(PIPE)
        mux = kp.channels["b"].mux
        assert mux is not None
        assert mux.cycle == 6
        # each replica owns the residue where its duration boundary lands
        assert dict(mux.residue_writer) == {
            3: "Worker#p0",
            5: "Worker#p1",
            1: "Worker#p2",
        }

    def test_replicas_share_the_input(self):
        kp = lower(PIPE)
        assert set(kp.channels["a"].readers) == {
            "Worker#p0",
            "Worker#p1",
            "Worker#p2",
        }

    def test_steady_state_one_completion_per_period(self):
        from timetide.central import run_centralised
        from timetide.trace import Trace

        kp = lower(PIPE)
        trace = Trace()
        run_centralised(kp, tick_limit=60, trace=trace)
        bodies = sorted(
            r.theta
            for r in trace.records
            if r.kind == "body" and r.thread.startswith("Worker")
        )
        # a reaction already past its release can finish just over the limit
        filled = [t for t in bodies if t >= 3]
        assert filled == list(range(3, filled[-1] + 1, 2))
        assert len(filled) >= 28


class TestInstantiation:
    def test_nested_instances_get_path_names(self):
        src, fn = program_source("sensor")
        kp = to_kernel(parse_text(src, fn))
        assert "Agg.0.Leaf.0" in kp.threads
        assert "Agg.1.Leaf.2" in kp.threads

    def test_const_ports_fold_into_bodies(self):
        src = """
module Adder :
  input const K : int;
  output y_out : int;
  task(period=1, duration=1):
    send y_out(K + 1);
  end task;
end module;
module Top :
  channel y : int delay 1;
  run Adder(41/K, y/y_out);
end module;
"""
        kp = lower(src)
        sends = [
            t
            for t in _walk(kp.threads["Adder"])
            if isinstance(t, k.KSend)
        ]
        # binding a literal to a const port folds all the way down
        assert sends[0].value == k.KInt(42)

    def test_binding_arity_mismatch(self):
        src = """
module A :
  input x_in : int;
end module;
module T :
  channel x : int delay 1;
  run A();
end module;
"""
        with pytest.raises((ValidationError, LoweringError)):
            lower(src)

    def test_pareach_expands_by_const(self):
        src, fn = program_source("trading")
        kp = to_kernel(parse_text(src, fn))
        assert "Trader.0" in kp.threads and "Trader.1" in kp.threads
        assert "Trader.2" not in kp.threads


class TestChannelAssembly:
    def test_two_writers_rejected(self):
        src = """
module W :
  output o_out : int;
  task(period=1, duration=1):
    send o_out(1);
  end task;
end module;
module T :
  channel c : int delay 1;
  run W(c/o_out); <> run W(c/o_out);
end module;
"""
        with pytest.raises(ValidationError) as err:
            lower(src)
        assert "writer" in str(err.value)

    def test_read_never_written_rejected(self):
        src = """
module R :
  input i_in : int;
  output o_out : int;
  task(period=1, duration=1):
    send o_out(i_in);
  end task;
end module;
module T :
  channel c : int delay 1;
  channel o : int delay 1;
  run R(c/i_in, o/o_out);
end module;
"""
        with pytest.raises(ValidationError) as err:
            lower(src)
        assert "never written" in str(err.value)

    def test_zero_reader_channel_is_fine(self):
        src = """
module W :
  output o_out : int;
  task(period=1, duration=1):
    send o_out(1);
  end task;
end module;
module T :
  channel c : int delay 1;
  run W(c/o_out);
end module;
"""
        kp = lower(src)
        assert kp.channels["c"].readers == ()

    def test_channel_delta_and_init(self):
        kp = lower(GOLDEN)
        assert kp.channels["a"].delta == 1
        assert kp.channels["a"].init == 0
        assert kp.channels["b"].init is k.EMPTY


def test_checkaborts_survive_lowering(cruise_kernel=None):
    src = """
module M :
  output o_out : int;
  var n : int = 0 in
    abort
      task(period=2, duration=1):
        n = n + 1;
        send o_out(n);
      end task;
    when (n == 3);
  end var;
end module;
module T :
  channel o : int delay 1;
  run M(o/o_out);
end module;
"""
    kp = lower(src)
    kinds = {type(t).__name__ for t in _walk(kp.threads["M"])}
    assert "KAbort" in kinds
    assert "KCheckAbort" in kinds


def test_sync_free_loop_rejected():
    body = k.KLoop(k.KAssign("x", k.KInt(1)))
    with pytest.raises(LoweringError) as err:
        k.check_loops(body, "T")
    assert "sync-free" in str(err.value)


def _walk(t):
    yield t
    for name in ("head", "tail", "then", "els", "body"):
        child = getattr(t, name, None)
        if isinstance(child, k.KTerm):
            yield from _walk(child)
