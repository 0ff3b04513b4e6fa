"""Study tree model: steps, sub-studies, transitions, validation.

A study is a tree of steps and sub-studies executed per participant. Each
node at one level carries a transition telling the walk where to go after
the node finishes: the next sibling (default), a named sibling, the end of
the current study, or a runtime decision. Linear studies and explicitly
chained studies share one execution path; chains are just sugar that
expands into the transition map.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Any, Callable, Mapping, Sequence, Union

from .state import Env

ID_PATTERN = re.compile(r"^[a-z0-9-]+$")
RESERVED_IDS = frozenset({"end"})


class StudyGraphError(Exception):
    pass


class DuplicateIdError(StudyGraphError):
    pass


class DanglingTargetError(StudyGraphError):
    pass


class BadDynamicTargetError(StudyGraphError):
    """A runtime transition named a node that is not a sibling."""


class _EndType:
    """Terminator: leaving the current study (or the whole walk, at root)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "End"


END = _EndType()


class _NextSiblingType:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NextSibling"


NEXT_SIBLING = _NextSiblingType()


@dataclass(frozen=True)
class Continue:
    """Action result: advance to the next node."""


@dataclass(frozen=True)
class Retry:
    """Action result: re-run the same step, optionally annotating fields."""

    notes: tuple = ()
    values: tuple = ()

    def notes_map(self) -> dict[str, str]:
        return dict(self.notes)

    def values_map(self) -> dict[str, str]:
        return dict(self.values)


StepResult = Union[Continue, Retry]
CONTINUE = Continue()
RETRY = Retry()


@dataclass(frozen=True)
class Goto:
    target: str


@dataclass(frozen=True)
class Dynamic:
    """Transition decided at runtime; must return a sibling id or END."""

    resolve: Callable[[Env], Union[str, _EndType]]


Transition = Union[_NextSiblingType, Goto, _EndType, Dynamic]


@dataclass
class Step:
    """One page-producing node. The handler builds a page from an Env."""

    id: str
    handler: Callable[[Env], Any]
    view_handlers: Mapping[str, Callable[[Env], Any]] = field(default_factory=dict)


@dataclass
class DynamicStudy:
    """A sub-study generated at runtime; resolved once per session."""

    id: str
    factory: Callable[[Env], "Study"]


@dataclass
class Study:
    id: str
    children: tuple = ()
    transitions: dict[str, Transition] = field(default_factory=dict)
    entry: str | None = None
    bindings: dict[str, Any] = field(default_factory=dict)

    def child(self, node_id: str):
        for node in self.children:
            if node.id == node_id:
                return node
        return None

    def child_ids(self) -> list[str]:
        return [node.id for node in self.children]


StudyNode = Union[Step, Study, DynamicStudy]


@dataclass(frozen=True)
class Diagnostic:
    code: str
    node: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.node}: {self.message}"


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def build_study(study_id: str, children: Sequence[StudyNode],
                chains: Sequence[Sequence[Any]] = (),
                entry: str | None = None,
                bindings: Mapping[str, Any] | None = None,
                strict: bool = True) -> Study:
    """Assemble a study from nodes and transition chains.

    A chain ``[a, b, END]`` expands to ``{a: Goto(b), b: END}``. Nodes not
    named in any chain keep the NextSibling default (the last sibling then
    ends the study when the list is exhausted). With ``strict`` (the
    default), duplicate sibling ids and unknown chain targets raise;
    without it they are left for :func:`validate_study` to report.
    """
    children = tuple(children)
    ids = [node.id for node in children]
    if strict:
        seen: set[str] = set()
        for node_id in ids:
            if node_id in seen:
                raise DuplicateIdError(f"duplicate sibling id {node_id!r} in study {study_id!r}")
            seen.add(node_id)

    transitions: dict[str, Transition] = {node_id: NEXT_SIBLING for node_id in ids}
    known = set(ids)
    for chain in chains:
        links = list(chain)
        for i, source in enumerate(links):
            if source is END or source == "end":
                if i != len(links) - 1:
                    raise StudyGraphError("End can only terminate a chain")
                break
            if strict and source not in known:
                raise DanglingTargetError(
                    f"chain names unknown node {source!r} in study {study_id!r}")
            if i + 1 >= len(links):
                break
            target = links[i + 1]
            if target is END or target == "end":
                transitions[source] = END
            else:
                if strict and target not in known:
                    raise DanglingTargetError(
                        f"chain names unknown node {target!r} in study {study_id!r}")
                transitions[source] = Goto(target)

    if entry is None and children:
        entry = children[0].id
    return Study(id=study_id, children=children, transitions=transitions,
                 entry=entry, bindings=dict(bindings or {}))


def describe(study: Study) -> dict[str, Any]:
    """Declarative form of a study's structure (ids and static transitions)."""

    def transition_form(t: Transition) -> Any:
        if t is NEXT_SIBLING:
            return "next"
        if t is END:
            return "end"
        if isinstance(t, Goto):
            return {"goto": t.target}
        return "dynamic"

    def node_form(node: StudyNode) -> dict[str, Any]:
        if isinstance(node, Step):
            return {"kind": "step", "id": node.id}
        if isinstance(node, DynamicStudy):
            return {"kind": "dynamic-study", "id": node.id}
        return describe(node) | {"kind": "study"}

    return {
        "id": study.id,
        "entry": study.entry,
        "children": [node_form(c) for c in study.children],
        "transitions": {k: transition_form(v) for k, v in study.transitions.items()},
    }


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_study(study: Study) -> list[Diagnostic]:
    """Check a study graph; empty list means servable.

    Per level: sibling ids are unique and well-formed, the entry and every
    static transition source/target name an existing child, and the end of
    the study is reachable from the entry. Dynamic transitions are treated
    as possibly reaching every sibling and the end. Flow (reachability)
    diagnostics are suppressed on levels with structural problems, so each
    defect surfaces once.
    """
    out: list[Diagnostic] = []
    _validate_level(study, (study.id,), out)
    return out


def _validate_level(study: Study, where: tuple[str, ...], out: list[Diagnostic]) -> None:
    label = "/".join(where)
    structural = len(out)

    seen: set[str] = set()
    for node in study.children:
        if not node.id or not ID_PATTERN.match(node.id):
            out.append(Diagnostic("bad-id", f"{label}/{node.id}",
                                  "node ids must be non-empty [a-z0-9-] text"))
        elif node.id in RESERVED_IDS:
            out.append(Diagnostic("reserved-id", f"{label}/{node.id}",
                                  f"{node.id!r} is reserved for the chain terminator"))
        if node.id in seen:
            out.append(Diagnostic("duplicate-id", f"{label}/{node.id}",
                                  f"sibling id {node.id!r} is not unique"))
        seen.add(node.id)

    known = set(study.child_ids())
    if study.children:
        if study.entry is None:
            out.append(Diagnostic("bad-entry", label, "study has children but no entry"))
        elif study.entry not in known:
            out.append(Diagnostic("bad-entry", label,
                                  f"entry {study.entry!r} names no child"))

    for source, transition in study.transitions.items():
        if source not in known:
            out.append(Diagnostic("unknown-source", f"{label}/{source}",
                                  f"transition source {source!r} names no child"))
        if isinstance(transition, Goto) and transition.target not in known:
            out.append(Diagnostic("dangling-target", f"{label}/{source}",
                                  f"transition target {transition.target!r} names no child"))

    if len(out) == structural and study.children:
        _check_end_reachable(study, label, out)

    for node in study.children:
        if isinstance(node, Study):
            _validate_level(node, where + (node.id,), out)


def _check_end_reachable(study: Study, label: str, out: list[Diagnostic]) -> None:
    ids = study.child_ids()
    index = {node_id: i for i, node_id in enumerate(ids)}
    reached_end = False
    seen: set[str] = set()
    frontier = [study.entry] if study.entry else []
    while frontier:
        current = frontier.pop()
        if current in seen:
            continue
        seen.add(current)
        transition = study.transitions.get(current, NEXT_SIBLING)
        if transition is END:
            reached_end = True
        elif transition is NEXT_SIBLING:
            i = index[current]
            if i + 1 < len(ids):
                frontier.append(ids[i + 1])
            else:
                reached_end = True
        elif isinstance(transition, Goto):
            frontier.append(transition.target)
        else:  # Dynamic: may reach any sibling or the end
            reached_end = True
            frontier.extend(ids)
    if not reached_end:
        out.append(Diagnostic("unreachable-end", label,
                              "no walk from the entry can leave this study"))


# ---------------------------------------------------------------------------
# Advancing
# ---------------------------------------------------------------------------

def resolve_next(study: Study, current: str, env: Env) -> Union[str, _EndType]:
    """Apply *current*'s transition within *study*.

    NextSibling past the last child yields END. Dynamic transitions run
    with *env* and must produce an existing sibling id or END.
    """
    if study.child(current) is None:
        raise StudyGraphError(f"{current!r} is not a child of study {study.id!r}")
    transition = study.transitions.get(current, NEXT_SIBLING)
    if transition is END:
        return END
    if isinstance(transition, Goto):
        return transition.target
    if isinstance(transition, Dynamic):
        target = transition.resolve(env)
        if target is END:
            return END
        if not isinstance(target, str) or study.child(target) is None:
            raise BadDynamicTargetError(
                f"dynamic transition from {current!r} returned {target!r}, "
                f"not a sibling of study {study.id!r}")
        return target
    ids = study.child_ids()
    i = ids.index(current)
    return ids[i + 1] if i + 1 < len(ids) else END


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_manifest(source: str | FsPath | Mapping[str, Any]) -> Study:
    """Build a study from a declarative manifest (file path or mapping).

    Manifest schema::

        {"id": "my-study",
         "entry": "intro",                # optional, defaults to first child
         "children": [
            {"kind": "step", "id": "intro"},
            {"kind": "study", "id": "inner", "children": [...], "chains": [...]}
         ],
         "chains": [["intro", "inner", "end"]]}

    An explicit ``transitions`` mapping (``"next"``, ``"end"`` or
    ``{"goto": target}`` per node, the form :func:`describe` emits) is
    applied after chain expansion, so ``load_manifest(describe(study))``
    reproduces a static study's structure exactly.

    Steps get placeholder handlers (a page with one continue button), so a
    manifest study is both validatable and runnable for smoke tests. The
    builder is deliberately lenient; run :func:`validate_study` on the
    result to get diagnostics instead of exceptions.
    """
    if isinstance(source, (str, FsPath)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = dict(source)
    return _study_from_doc(doc)


def _study_from_doc(doc: Mapping[str, Any]) -> Study:
    children: list[StudyNode] = []
    for child in doc.get("children", []):
        kind = child.get("kind", "step")
        if kind == "step":
            children.append(Step(child["id"], _placeholder_handler(child["id"])))
        elif kind == "study":
            children.append(_study_from_doc(child))
        else:
            raise StudyGraphError(f"manifest node kind {kind!r} is not supported")
    study = build_study(
        doc["id"], children,
        chains=doc.get("chains", ()),
        entry=doc.get("entry"),
        strict=False,
    )
    for source, form in doc.get("transitions", {}).items():
        study.transitions[source] = _transition_from_form(source, form)
    return study


def _transition_from_form(source: str, form: Any) -> Transition:
    if form == "next":
        return NEXT_SIBLING
    if form == "end":
        return END
    if isinstance(form, Mapping) and set(form) == {"goto"}:
        return Goto(form["goto"])
    raise StudyGraphError(
        f"transition for {source!r} must be 'next', 'end' or {{'goto': target}}, "
        f"got {form!r}")


def _placeholder_handler(step_id: str):
    def handler(env: Env):
        from .widgets import el, text
        ui = env.page()
        return ui.finish(el("div", el("p", text(f"Step {step_id}.")), ui.button("Continue")))
    return handler
