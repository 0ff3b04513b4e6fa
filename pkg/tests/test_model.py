"""Study graph construction, validation and transition resolution."""

import random

import pytest

from studyflow.model import (
    BadDynamicTargetError,
    DanglingTargetError,
    DuplicateIdError,
    Dynamic,
    END,
    Goto,
    NEXT_SIBLING,
    Step,
    Study,
    build_study,
    describe,
    load_manifest,
    resolve_next,
    validate_study,
)
from studyflow.state import Env, Parameterization, VarStore

from oracles import end_reachable_bruteforce


def page_stub(env):  # handlers are irrelevant to graph tests
    raise AssertionError("not rendered in this test")


def step(step_id):
    return Step(step_id, page_stub)


def env_stub():
    return Env(participant="p", path=("x",), params=Parameterization(), vars=VarStore())


# ---------------------------------------------------------------------------
# build_study
# ---------------------------------------------------------------------------

def test_build_linear_study_defaults_to_next_sibling():
    study = build_study("example-study", [step("hello"), step("done")])
    assert study.entry == "hello"
    assert study.transitions == {"hello": NEXT_SIBLING, "done": NEXT_SIBLING}
    # exhausting the list is the end
    assert resolve_next(study, "done", env_stub()) is END


def test_build_chain_expands_to_goto_and_end():
    study = build_study(
        "example",
        [step("intro"), step("choices"), step("result")],
        chains=[["intro", "choices", "result", END]],
    )
    assert study.transitions == {
        "intro": Goto("choices"),
        "choices": Goto("result"),
        "result": END,
    }


def test_build_chain_accepts_end_keyword_string():
    study = build_study("s", [step("a")], chains=[["a", "end"]])
    assert study.transitions["a"] is END


def test_build_rejects_dangling_chain_target():
    with pytest.raises(DanglingTargetError):
        build_study("s", [step("a")], chains=[["a", "z"]])


def test_build_rejects_duplicate_sibling_ids():
    with pytest.raises(DuplicateIdError):
        build_study("s", [step("a"), step("a")])


def test_build_lenient_mode_leaves_defects_for_validation():
    study = build_study("s", [step("a"), step("a")], chains=[["a", "z"]], strict=False)
    codes = {d.code for d in validate_study(study)}
    assert "duplicate-id" in codes


def test_describe_build_round_trip_preserves_ids_and_transitions():
    rng = random.Random(13)
    counter = [0]

    def random_study(depth=0):
        kids = []
        for _ in range(rng.randint(1, 5)):
            counter[0] += 1
            if depth < 2 and rng.random() < 0.3:
                kids.append(random_study(depth + 1))
            else:
                kids.append(step(f"n{counter[0]}"))
        names = [c.id for c in kids]
        chains = []
        if len(names) >= 2 and rng.random() < 0.7:
            chain = rng.sample(names, k=rng.randint(2, len(names)))
            if rng.random() < 0.5:
                chain.append(END)
            chains.append(chain)
        counter[0] += 1
        return build_study(f"s{counter[0]}", kids, chains=chains)

    for _ in range(40):
        study = random_study()
        rebuilt = load_manifest(describe(study))
        assert describe(rebuilt) == describe(study)


# ---------------------------------------------------------------------------
# validate_study
# ---------------------------------------------------------------------------

def test_fixture_studies_validate_clean():
    from studyflow.fixtures import coin_toss_study, deep_loop_study, two_step_study

    assert validate_study(two_step_study()) == []
    assert validate_study(coin_toss_study()) == []
    assert validate_study(deep_loop_study()) == []


def test_self_loop_reports_unreachable_end():
    study = Study("s", children=(step("a"),), transitions={"a": Goto("a")}, entry="a")
    problems = validate_study(study)
    assert [d.code for d in problems] == ["unreachable-end"]


def test_duplicate_id_reports_exactly_one_diagnostic():
    study = Study("s", children=(step("a"), step("a")),
                  transitions={"a": NEXT_SIBLING}, entry="a")
    problems = validate_study(study)
    assert [d.code for d in problems] == ["duplicate-id"]


def test_dangling_target_reports_exactly_one_diagnostic():
    study = Study("s", children=(step("a"), step("b")),
                  transitions={"a": Goto("zz"), "b": NEXT_SIBLING}, entry="a")
    problems = validate_study(study)
    assert [d.code for d in problems] == ["dangling-target"]


def test_dynamic_transition_counts_as_reaching_end():
    # Three nested levels; the innermost step's transition is dynamic.
    inner = Study("inner",
                  children=(step("leaf-a"), step("leaf-b")),
                  transitions={"leaf-a": Dynamic(lambda env: "leaf-b"),
                               "leaf-b": Goto("leaf-a")},
                  entry="leaf-a")
    mid = build_study("mid", [step("gate"), inner])
    root = build_study("root", [step("first"), mid])
    assert validate_study(root) == []

    # Independent check with brute-force reachability over the documented
    # edge expansion (dynamic -> all siblings plus END).
    edges = {
        "leaf-a": {"leaf-a", "leaf-b", "END"},
        "leaf-b": {"leaf-a"},
    }
    assert end_reachable_bruteforce(["leaf-a", "leaf-b"], edges, "leaf-a")


def test_bruteforce_oracle_agrees_on_random_static_graphs():
    rng = random.Random(99)
    for _ in range(200):
        names = [f"n{i}" for i in range(rng.randint(1, 5))]
        transitions = {}
        for i, name in enumerate(names):
            roll = rng.random()
            if roll < 0.4:
                transitions[name] = NEXT_SIBLING
            elif roll < 0.75:
                transitions[name] = Goto(rng.choice(names))
            else:
                transitions[name] = END
        study = Study("s", children=tuple(step(n) for n in names),
                      transitions=transitions, entry=names[0])
        problems = validate_study(study)

        edges: dict[str, set] = {}
        for i, name in enumerate(names):
            t = transitions[name]
            if t is NEXT_SIBLING:
                edges[name] = {names[i + 1]} if i + 1 < len(names) else {"END"}
            elif t is END:
                edges[name] = {"END"}
            else:
                edges[name] = {t.target}
        expected_ok = end_reachable_bruteforce(names, edges, names[0])
        assert ("unreachable-end" not in {d.code for d in problems}) == expected_ok


def test_reserved_id_is_rejected():
    study = Study("s", children=(step("end"),), transitions={}, entry="end")
    assert "reserved-id" in {d.code for d in validate_study(study)}


def test_empty_study_is_valid():
    assert validate_study(Study("s")) == []


# ---------------------------------------------------------------------------
# resolve_next
# ---------------------------------------------------------------------------

def test_resolve_next_sibling_and_exhaustion():
    study = build_study("example-study", [step("hello"), step("done")])
    assert resolve_next(study, "hello", env_stub()) == "done"
    assert resolve_next(study, "done", env_stub()) is END


def test_resolve_chain_end_inside_nested_study():
    inner = build_study("choices", [step("heads-or-tails")],
                        chains=[["heads-or-tails", END]])
    assert resolve_next(inner, "heads-or-tails", env_stub()) is END


def test_resolve_dynamic_target_checked_at_runtime():
    study = Study("s", children=(step("a"), step("b")),
                  transitions={"a": Dynamic(lambda env: "nope")}, entry="a")
    with pytest.raises(BadDynamicTargetError):
        resolve_next(study, "a", env_stub())


def test_resolve_rejects_non_child():
    study = build_study("s", [step("a")])
    with pytest.raises(Exception):
        resolve_next(study, "zz", env_stub())


def test_static_walk_terminates_within_child_count_per_level():
    rng = random.Random(7)
    for _ in range(50):
        names = [f"n{i}" for i in range(rng.randint(1, 6))]
        study = build_study("s", [step(n) for n in names])
        current, hops = names[0], 0
        while True:
            nxt = resolve_next(study, current, env_stub())
            hops += 1
            if nxt is END:
                break
            current = nxt
        assert hops <= len(names)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def test_manifest_round_trip(tmp_path):
    doc = {
        "id": "survey",
        "children": [
            {"kind": "step", "id": "intro"},
            {"kind": "study", "id": "body",
             "children": [{"kind": "step", "id": "q1"}, {"kind": "step", "id": "q2"}]},
            {"kind": "step", "id": "outro"},
        ],
        "chains": [["intro", "body", "outro", "end"]],
    }
    path = tmp_path / "survey.json"
    path.write_text(__import__("json").dumps(doc))
    study = load_manifest(path)
    assert validate_study(study) == []
    assert study.transitions["intro"] == Goto("body")
    assert study.transitions["outro"] is END


def test_manifest_with_defects_validates_dirty(tmp_path):
    doc = {"id": "bad", "children": [{"kind": "step", "id": "a"}],
           "chains": [["a", "missing"]]}
    study = load_manifest(doc)
    assert "dangling-target" in {d.code for d in validate_study(study)}
