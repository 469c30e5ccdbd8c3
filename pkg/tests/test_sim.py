import pytest

from mercurius.errors import MercuriusError, SoundnessViolation
from mercurius.parser import parse
from mercurius.refine import check_race_freedom, refine_protocol
from mercurius.sim import (
    Outcome, SimBounds, Simulator, Verdict, bounds_from_env, cross_validate, explore,
    parse_bounds, programs_from_protocol, replay, step,
)

from conftest import PROTOCOLS


def setup(text):
    f = parse(text)
    return refine_protocol(f.main_def.body), list(f.programs.values()), f.syncs


def setup_file(name, replace_from=None, replace_to=""):
    text = (PROTOCOLS / f"{name}.mpp").read_text(encoding="utf-8")
    if replace_from is not None:
        assert replace_from in text
        text = text.replace(replace_from, replace_to)
    return setup(text)


def test_two_buyer_implementation_is_safe():
    spec, programs, _ = setup_file("twobuyer")
    report = explore(programs, spec)
    assert report.verdict is Verdict.SAFE
    assert report.states_explored > 0


def test_price_sent_to_first_buyer_first_races():
    spec, programs, _ = setup_file(
        "twobuyer",
        "  send b2 Price(60);\n  send b1 Price(60);",
        "  send b1 Price(60);\n  send b2 Price(60);",
    )
    report = explore(programs, spec)
    assert report.verdict is Verdict.RACE_ERR
    assert report.trace


def test_missing_address_is_a_protocol_error():
    spec, programs, _ = setup_file("twobuyer", "  send s Addr(7);\n")
    assert explore(programs, spec).verdict is Verdict.PROT_ERR


def test_intro_race_and_its_fix():
    spec, programs, syncs = setup_file("intro_race")
    report = explore(programs, spec)
    assert report.verdict is Verdict.RACE_ERR
    assert report.states_explored <= 200
    spec, programs, syncs = setup_file("intro_sync")
    assert explore(programs, spec).verdict is Verdict.SAFE
    assert check_race_freedom(spec, syncs).race_free


def test_replay_racing_schedule():
    spec, programs, _ = setup_file("intro_race")
    report = replay(programs, spec, ["B", "A", "C"])
    assert report.verdict is Verdict.RACE_ERR
    assert [s.thread for s in report.trace] == ["B", "A", "C"]


def test_replay_blocked_thread():
    spec, programs, _ = setup_file("intro_race")
    with pytest.raises(MercuriusError):
        replay(programs, spec, ["C"])


@pytest.mark.parametrize("text, verdict", [
    ("A->B:c<v.t>\nimpl A { send c t(1); close c; }\nimpl B { x = recv c; }", Verdict.LEAK_ERR),
    ("A->B:c<v.t>; B->C:d<v.t>; B->C:d<v.t>\n"
     "impl A { send c t(1); }\n"
     "impl B { x = recv c; send d x; send d x; }\n"
     "impl C { y = recv d; z = recv d; }", Verdict.RES_ERR),
    ("A->B:c<v.t>\nimpl A { wait w; send c t(1); }\nimpl B { x = recv c; }", Verdict.DEADLOCK_ERR),
    ("A->B:c<v.t>\nimpl A { send c u(1); }\nimpl B { x = recv c; }", Verdict.PROT_ERR),
    ("A->B:c<v.Bid{0..5}>\nimpl A { send c Bid(9); }\nimpl B { x = recv c; }", Verdict.PROT_ERR),
    ("A->B:c<v.Bid{0..5}>\nimpl A { send c Bid(3); }\nimpl B { x = recv c; }", Verdict.SAFE),
])
def test_runtime_errors(text, verdict):
    spec, programs, _ = setup(text)
    assert explore(programs, spec).verdict is verdict


def test_forked_receives_join():
    spec, programs, _ = setup(
        "A->B:c<v.t> * A->B:d<v.u>\n"
        "impl A { send c t(1); send d u(2); }\n"
        "impl B { par { x = recv c; } { y = recv d; } if x is t { skip; } }")
    assert explore(programs, spec).verdict is Verdict.SAFE


def test_state_bound(two_buyer):
    spec = refine_protocol(two_buyer)
    report = Simulator(programs_from_protocol(spec), spec, SimBounds(max_steps=3)).explore()
    assert report.verdict is Verdict.BOUND_EXCEEDED
    assert not report.verdict.is_error


def test_parse_bounds():
    assert parse_bounds("steps=10") == SimBounds(10, 2)
    assert parse_bounds("unroll=0", SimBounds(50, 2)) == SimBounds(50, 0)
    with pytest.raises(MercuriusError):
        parse_bounds("depth=3")
    with pytest.raises(MercuriusError):
        parse_bounds("steps=many")
    with pytest.raises(MercuriusError):
        parse_bounds("steps=0")


def test_bounds_from_environment(monkeypatch):
    monkeypatch.setenv("MERCURIUS_BOUNDS", "steps=42")
    assert bounds_from_env() == SimBounds(42, 2)
    monkeypatch.delenv("MERCURIUS_BOUNDS")
    assert bounds_from_env() == SimBounds()


def test_cross_validation_report():
    spec, programs, syncs = setup_file("intro_sync")
    report = cross_validate(spec, programs, syncs)
    assert report.static_race_free
    assert report.dynamic.verdict is Verdict.SAFE
    assert report.to_dict()["dynamic"]["verdict"] == "Safe"

    spec, programs, _ = setup_file("intro_race")
    report = cross_validate(spec, programs)
    assert not report.static_race_free
    assert report.note == "static NeedsSync, simulation found a racing schedule"


def test_race_free_protocols_never_race(corpus):
    bounds = SimBounds(max_steps=3000)
    checked = 0
    for g in corpus:
        spec = refine_protocol(g)
        if not check_race_freedom(spec).race_free:
            continue
        report = cross_validate(spec, programs_from_protocol(spec), bounds=bounds)
        assert report.consistent
        assert report.dynamic.verdict not in (Verdict.RACE_ERR, Verdict.PROT_ERR)
        checked += 1
    assert checked > 100


def test_protocol_error_under_race_free_verdict_is_unsound():
    spec, programs, _ = setup("A->B:c<v.t>\nimpl A { send c u(1); }\nimpl B { x = recv c; }")
    assert check_race_freedom(spec).race_free
    with pytest.raises(SoundnessViolation):
        cross_validate(spec, programs)
    report = cross_validate(spec, programs, strict=False)
    assert not report.consistent
    assert report.dynamic.verdict is Verdict.PROT_ERR
    assert report.note == "static race-free, but the programs reach ProtErr"


def test_replaying_an_explored_trace_gives_the_same_verdict(corpus):
    replayed = 0
    for g in corpus[:150]:
        spec = refine_protocol(g)
        programs = programs_from_protocol(spec)
        report = explore(programs, spec, SimBounds(max_steps=3000))
        if not report.verdict.is_error:
            continue
        schedule = [s.thread for s in report.trace]
        again = replay(programs, spec, schedule)
        assert again.verdict is report.verdict
        assert [s.thread for s in again.trace] == schedule
        replayed += 1
    for name, old, new in [
        ("intro_race", None, ""),
        ("twobuyer", "  send b2 Price(60);\n  send b1 Price(60);", "  send b1 Price(60);\n  send b2 Price(60);"),
        ("twobuyer", "  send s Addr(7);\n", ""),
    ]:
        spec, programs, _ = setup_file(name, old, new)
        report = explore(programs, spec)
        again = replay(programs, spec, [s.thread for s in report.trace])
        assert again.verdict is report.verdict
        replayed += 1
    assert replayed >= 3


def test_single_steps():
    spec, programs, _ = setup_file("intro_race")
    sim = Simulator(programs, spec)
    state = sim.initial_state()
    assert step(sim, state, "C").outcome is Outcome.BLOCKED
    sent = step(sim, state, "A")
    assert sent.outcome is Outcome.STEPPED
    assert sent.state.queue("c")[0].tag == "Book"
    received = step(sim, sent.state, "C")
    assert received.outcome is Outcome.STEPPED
    assert received.state.queue("c") == ()


def test_send_shared_by_two_choice_paths_keeps_both_labels():
    spec, programs, _ = setup(
        "(A->B:d<v.x>; A->B:c<v.t>) \\/ (A->B:d<v.y>; A->B:c<v.t>)\n"
        "impl A { send d y(0); send c t(0); }\n"
        "impl B { a = recv d; b = recv c; }")
    sim = Simulator(programs, spec)
    state = step(sim, sim.initial_state(), "A").state
    state = step(sim, state, "A").state
    (message,) = state.queue("c")
    assert len(message.labels) == 2
    assert message.label is None
    state = step(sim, state, "B").state
    state = step(sim, state, "B").state
    assert state.queue("c") == ()
    assert explore(programs, spec).verdict is Verdict.SAFE
