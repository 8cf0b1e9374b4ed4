"""Surface syntax: lexing, parsing, printing, and static validation."""

import pytest
from hypothesis import given, strategies as st

from timetide.diagnostics import ParseError, ValidationError
from timetide.surface import ast, parse_text, pretty_print, validate

from conftest import program_source

MINI = """
module Blink :
  output led_out : bool;
  var on : bool = false in
    task(period=2, duration=1):
      on = on and false or true;
      send led_out(on);
    end task;
  end var;
end module;
module Top :
  channel led : bool delay 1;
  run Blink(led/led_out);
end module;
"""


def test_parse_corpus_programs():
    for name, modules, entry in [
        ("trading", 3, "Market"),
        ("cruise", 5, "Cruise"),
        ("sensor", 3, "Grid"),
    ]:
        src, fn = program_source(name)
        prog = parse_text(src, fn)
        assert len(prog.modules) == modules
        assert prog.entry == entry
        validate(prog)


def test_entry_is_last_module():
    prog = parse_text(MINI, "mini.tt")
    assert prog.entry == "Top"
    assert [m.name for m in prog.modules] == ["Blink", "Top"]


def test_ports_and_channels():
    prog = parse_text(MINI, "mini.tt")
    blink = prog.module("Blink")
    assert blink.port("led_out").direction == "output"
    top = prog.module("Top")
    decl = top.channels[0]
    assert decl.name == "led"
    assert decl.type.base == "bool"
    assert isinstance(decl.delay, ast.IntLit) and decl.delay.value == 1


def test_channel_array_and_init():
    src = """
module M :
  const N : int = 3;
  channel xs : int[N] delay 2 = 7;
end module;
"""
    decl = parse_text(src, "t.tt").module("M").channels[0]
    assert decl.type.size.ident == "N"
    assert decl.init.value == 7


def test_if_requires_parenthesized_condition():
    src = """
module M :
  task(period=1, duration=1):
    if true { };
  end task;
end module;
"""
    with pytest.raises(ParseError):
        parse_text(src, "t.tt")


def test_missing_end_is_an_error():
    with pytest.raises(ParseError):
        parse_text("module M :\n  var x : int = 1 in\nend module;", "t.tt")


def test_unknown_token():
    with pytest.raises(ParseError):
        parse_text("module M : $ end module;", "t.tt")


def test_no_modulo_operator():
    src = """
module M :
  task(period=1, duration=1):
    var x : int = 0 in
      x = 7 % 2;
    end var;
  end task;
end module;
"""
    with pytest.raises(ParseError):
        parse_text(src, "t.tt")


def test_precedence_round_trips_through_printer():
    src = """
module M :
  task(period=1, duration=1):
    var x : int = 1 + 2 * 3 - 4 / 2 in
      if (x < 5 and x > 0 or not (x == 3)) { x = 0 - x; };
    end var;
  end task;
end module;
"""
    prog = parse_text(src, "t.tt")
    printed = parse_text(pretty_print(prog), "p.tt")
    assert pretty_print(printed) == pretty_print(prog)


def test_print_reparse_fixpoint_on_corpus():
    for name in ("trading", "cruise", "sensor"):
        src, fn = program_source(name)
        prog = parse_text(src, fn)
        once = pretty_print(prog)
        again = pretty_print(parse_text(once, fn))
        assert once == again


@given(st.integers(min_value=0, max_value=2**31), st.integers(-50, 50))
def test_literal_round_trip(big, small):
    src = f"""
module M :
  task(period=1, duration=1):
    var x : int = {big} in
      x = x + {small};
    end var;
  end task;
end module;
"""
    prog = parse_text(src, "t.tt")
    assert pretty_print(parse_text(pretty_print(prog), "t.tt")) == pretty_print(prog)


def test_trailing_comma_in_channel_decls_tolerated():
    src = """
module T :
  channel x : int delay 1, y : int delay 2,;
end module;
"""
    decls = parse_text(src, "t.tt").module("T").channels
    assert [d.name for d in decls] == ["x", "y"]


class TestValidation:
    def check(self, src):
        with pytest.raises(ValidationError) as err:
            validate(parse_text(src, "t.tt"))
        return str(err.value)

    def test_run_of_unknown_module(self):
        msg = self.check("module T :\n  run Ghost();\nend module;")
        assert "Ghost" in msg

    def test_send_on_unknown_channel(self):
        msg = self.check(
            """
module M :
  task(period=1, duration=1):
    send nowhere(1);
  end task;
end module;
"""
        )
        assert "nowhere" in msg

    def test_port_bound_twice(self):
        msg = self.check(
            """
module A :
  input x_in : int;
end module;
module T :
  channel x : int delay 1;
  run A(x/x_in, x/x_in);
end module;
"""
        )
        assert "bound twice" in msg

    def test_nested_tasks_rejected(self):
        msg = self.check(
            """
module M :
  output a_out : int;
  task(period=2, duration=1):
    task(period=1, duration=1):
      send a_out(1);
    end task;
  end task;
end module;
"""
        )
        assert "nested" in msg

    def test_task_period_positive(self):
        msg = self.check(
            """
module M :
  output a_out : int;
  task(period=0, duration=1):
    send a_out(1);
  end task;
end module;
"""
        )
        assert "period" in msg

    def test_recursive_instantiation(self):
        msg = self.check(
            """
module A :
  run A();
end module;
module T :
  run A();
end module;
"""
        )
        assert "recursive" in msg

    def test_par_inside_task_rejected(self):
        msg = self.check(
            """
module M :
  output a_out : int;
  task(period=1, duration=1):
    send a_out(1); <> send a_out(2);
  end task;
end module;
"""
        )
        assert "parallel" in msg
