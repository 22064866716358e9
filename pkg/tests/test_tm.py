import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagsim.errors import ParseError, UndeclaredSymbol
from lagsim.tm import (
    HALTED,
    TMConfiguration,
    format_tm,
    initial_config,
    load_tm,
    make_config,
    parse_tm,
    reachable_configs,
    tm_run,
    tm_step,
    write_tm_trace_jsonl,
)

from conftest import fixture_path
from oracles import naive_tm


def tape_string(config, blank):
    cells, _ = config.tape()
    return "".join(cells).strip(blank)


def test_one_step_machine(machines):
    m = machines["one_step"]
    assert len(m.states) == 2
    c = tm_step(m, initial_config(m, "0"))
    assert c == TMConfiguration(("1",), "_", (), "qh")
    assert tm_step(m, c) is HALTED


def test_left_move_extends_with_blank(machines):
    m = machines["increment"]
    c = tm_step(m, initial_config(m, "1", 0))
    assert c == TMConfiguration((), "_", ("0",), "c")


def test_increment_011(machines):
    m = machines["increment"]
    tr = tm_run(m, initial_config(m, "011", head=2), 100)
    assert tr.halted and tr.steps == 3
    assert tape_string(tr.final, "_") == "100"
    steps, halted, cells, _, _ = naive_tm(dict(m.transitions), "_", "011", 2, "c", m.halting)
    assert (steps, halted) == (3, True)
    assert "".join(cells[i] for i in sorted(cells)) == "100"


def test_busy_beaver_three(machines):
    m = machines["busy_beaver3"]
    tr = tm_run(m, initial_config(m, ""), 1000)
    assert tr.halted and tr.steps == 13
    cells, _ = tr.final.tape()
    assert cells.count("1") == 6
    steps, halted, ncells, _, state = naive_tm(dict(m.transitions), "0", "", 0, "A", m.halting)
    assert (steps, halted, state) == (13, True, "H")
    assert sum(1 for v in ncells.values() if v == "1") == 6


def test_zero_budget(machines):
    m = machines["parity"]
    tr = tm_run(m, initial_config(m, "101"), 0)
    assert len(tr) == 1 and not tr.halted
    with pytest.raises(ValueError):
        tm_run(m, initial_config(m, "101"), -1)


def test_parse_errors():
    base = "states: a b\nalphabet: 0 1\nblank: 0\nstart: a\nhalt: b\n"
    with pytest.raises(UndeclaredSymbol):
        parse_tm(base + "a 0 -> 1 R q9\n")
    with pytest.raises(UndeclaredSymbol, match="line 6"):
        parse_tm(base + "a 7 -> 1 R b\n")
    with pytest.raises(ParseError, match="line 6"):
        parse_tm(base + "a 0 -> 1 S b\n")
    with pytest.raises(ParseError, match="line 7"):
        parse_tm(base + "a 0 -> 1 R b\na 0 -> 0 L b\n")
    with pytest.raises(ParseError, match="line 6"):
        parse_tm(base + "a 0 1 R b\n")
    with pytest.raises(ParseError):
        parse_tm("alphabet: 0 1\nblank: 0\nstart: a\n")
    with pytest.raises(ParseError, match="strict"):
        parse_tm(base + "a 0 -> 1 R b\n", strict=True)
    assert parse_tm(base + "a 0 -> 1 R b\na 1 -> 1 R b\n", strict=True)


def test_missing_transition_halts_by_default():
    m = parse_tm("states: a b\nalphabet: 0 1\nblank: 0\nstart: a\na 0 -> 1 R a\n")
    tr = tm_run(m, initial_config(m, "01"), 10)
    assert tr.halted and tr.steps == 1


def test_format_round_trip(machines):
    for m in machines.values():
        assert parse_tm(format_tm(m)) == m


def test_load_fixture_and_undeclared_tape_symbol(machines):
    m = load_tm(fixture_path("parity"))
    with pytest.raises(UndeclaredSymbol):
        initial_config(m, "102")
    assert initial_config(m, "1 0 1").right == ("0", "1")


def test_trace_jsonl(machines):
    m = machines["one_step"]
    buf = io.StringIO()
    write_tm_trace_jsonl(tm_run(m, initial_config(m, "0"), 5), buf)
    recs = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert recs[1] == {"step": 1, "state": "qh", "left": ["1"], "head": "_", "right": []}


def test_reachable_configs_are_unique(machines):
    m = machines["busy_beaver3"]
    cs = reachable_configs(m, [initial_config(m, "")], 100)
    assert len(cs) == len(set(cs)) == 14


@settings(max_examples=200, deadline=None)
@given(
    st.sampled_from(["increment", "parity", "busy_beaver3"]),
    st.lists(st.integers(0, 2), max_size=8),
    st.integers(-2, 9),
    st.integers(0, 40),
)
def test_step_properties(machines, name, raw, head, budget):
    m = machines[name]
    syms = m.alphabet
    cells = [syms[i % len(syms)] for i in raw]
    start = make_config(cells, head, m.start, m.blank)
    tr = tm_run(m, start, budget)
    for a, b in zip(tr.configs, tr.configs[1:]):
        for c in (a, b):
            assert not c.left or c.left[-1] != m.blank
            assert not c.right or c.right[-1] != m.blank
        # at most one cell changes: compare tapes aligned on absolute positions
        ta, ha = a.tape()
        tb, hb = b.tape()
        move = 1 if m.transitions[(a.state, a.head)][1] == "R" else -1
        pos_a = {i - ha: x for i, x in enumerate(ta) if x != m.blank}
        pos_b = {i - hb + move: x for i, x in enumerate(tb) if x != m.blank}
        diff = {k for k in pos_a.keys() | pos_b.keys() if pos_a.get(k) != pos_b.get(k)}
        assert diff <= {0}
    # the naive dict-tape interpreter agrees
    nsteps, halted, ncells, npos, nstate = naive_tm(
        dict(m.transitions), m.blank, cells, head, m.start, m.halting, budget
    )
    assert nsteps == tr.steps and halted == tr.halted
    final = tr.final
    assert final.state == nstate and final.head == ncells.get(npos, m.blank)
    assert tm_run(m, start, budget).configs == tr.configs
