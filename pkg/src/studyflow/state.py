"""Participant state: dynamic bindings, scoped variables, snapshots.

Three distinct surfaces, kept deliberately separate:

* ``Parameterization`` — an immutable chain of dynamic bindings threaded
  explicitly between steps. Extensions are made with :func:`with_binding`
  and end with the extent of the call; there is no ambient or
  thread-inherited channel, so a binding can never "revive" outside its
  extent nor leak into a later step.
* ``VarStore`` — durable per-participant variables. Writes survive
  suspension expiry and server restarts. Variables are either global to
  the participant or scoped to a position-path prefix, which imitates
  lexical scope over the study tree.
* ``StateRecord`` — the versioned snapshot of one participant's state
  (position path, base bindings, variables). Encoded as JSON with a fixed
  field order so snapshots are diffable; values round-trip bit-exactly.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

RECORD_VERSION = 1

PathT = tuple[str, ...]


class StateError(Exception):
    pass


class SerializationError(StateError):
    """Value cannot be stored (not a supported scalar/tree)."""


class DecodeError(StateError):
    """Snapshot text is corrupt or has an unknown version."""


class _Undefined:
    """Absent-value marker. Falsy, distinct from False."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return "Undefined"


UNDEFINED = _Undefined()

_SCALARS = (bool, int, float, str)


def ensure_value(value: Any) -> Any:
    """Validate that *value* is a storable scalar or tree of scalars."""
    if isinstance(value, _SCALARS):
        return value
    if isinstance(value, (list, tuple)):
        return [ensure_value(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise SerializationError(f"mapping keys must be text, got {k!r}")
            out[k] = ensure_value(v)
        return out
    raise SerializationError(f"unsupported value type: {type(value).__name__}")


# ---------------------------------------------------------------------------
# Parameterization
# ---------------------------------------------------------------------------

class Parameterization:
    """Immutable mapping of dynamic bindings with innermost-first lookup.

    ``extend`` returns a child; the parent is never mutated. Two code paths
    holding the same parent always observe identical values for names bound
    in the parent.
    """

    __slots__ = ("_bindings", "_parent")

    def __init__(self, bindings: Mapping[str, Any] | None = None,
                 parent: "Parameterization | None" = None):
        self._bindings = dict(bindings or {})
        self._parent = parent

    def extend(self, bindings: Mapping[str, Any]) -> "Parameterization":
        return Parameterization(bindings, parent=self)

    def get(self, name: str, default: Any = UNDEFINED) -> Any:
        node: Parameterization | None = self
        while node is not None:
            if name in node._bindings:
                return node._bindings[name]
            node = node._parent
        return default

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not UNDEFINED

    def entries(self) -> dict[str, Any]:
        """Flattened view, innermost binding winning."""
        chain = []
        node: Parameterization | None = self
        while node is not None:
            chain.append(node._bindings)
            node = node._parent
        flat: dict[str, Any] = {}
        for bindings in reversed(chain):
            flat.update(bindings)
        return flat

    def __repr__(self) -> str:
        return f"Parameterization({self.entries()!r})"


def with_binding(paramz: Parameterization, bindings: Mapping[str, Any],
                 body: Callable[[Parameterization], Any]) -> Any:
    """Run *body* with *paramz* extended by *bindings*.

    The extension exists only as the argument passed to *body*; once body
    returns, nothing outside can observe it. An empty *bindings* mapping
    makes this the identity on behaviour.
    """
    return body(paramz.extend(bindings))


# ---------------------------------------------------------------------------
# Scoped variable store
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scope:
    """Where a variable binding lives: participant-global or a path prefix."""

    kind: str  # "global" | "prefix" | "scoped"
    prefix: PathT = ()

    def __post_init__(self):
        if self.kind not in ("global", "prefix", "scoped"):
            raise ValueError(f"unknown scope kind {self.kind!r}")


GLOBAL = Scope("global")
# Resolve against the reader's/writer's current position (see var_get/var_set).
SCOPED = Scope("scoped")


def prefix_scope(path: Iterable[str]) -> Scope:
    return Scope("prefix", tuple(path))


class VarStore:
    """Durable participant variables, keyed (participant, scope, name).

    Global entries are readable from any node. Prefix entries are readable
    only at positions whose path starts with the prefix; lookups walk
    prefixes innermost-first. An ``on_write`` hook lets the engine persist
    after each mutation.
    """

    def __init__(self, on_write: Callable[[str], None] | None = None):
        self._global: dict[str, dict[str, Any]] = {}
        self._prefixed: dict[str, dict[PathT, dict[str, Any]]] = {}
        self._lock = threading.RLock()
        self.on_write = on_write

    def get_global(self, participant: str, name: str) -> Any:
        with self._lock:
            return self._global.get(participant, {}).get(name, UNDEFINED)

    def get_scoped(self, participant: str, path: PathT, name: str) -> Any:
        """Nearest enclosing prefix binding of *name* along *path*."""
        with self._lock:
            per = self._prefixed.get(participant)
            if not per:
                return UNDEFINED
            for cut in range(len(path), -1, -1):
                entry = per.get(tuple(path[:cut]))
                if entry is not None and name in entry:
                    return entry[name]
            return UNDEFINED

    def set_global(self, participant: str, name: str, value: Any) -> None:
        value = ensure_value(value)
        with self._lock:
            self._global.setdefault(participant, {})[name] = value
        self._notify(participant)

    def set_prefix(self, participant: str, prefix: PathT, name: str, value: Any) -> None:
        value = ensure_value(value)
        with self._lock:
            per = self._prefixed.setdefault(participant, {})
            per.setdefault(tuple(prefix), {})[name] = value
        self._notify(participant)

    def _notify(self, participant: str) -> None:
        if self.on_write is not None:
            self.on_write(participant)

    def entries(self, participant: str) -> list[dict[str, Any]]:
        """All entries for *participant* in stable (scope, prefix, name) order."""
        with self._lock:
            rows = [
                {"scope": "global", "prefix": [], "name": name, "value": value}
                for name, value in self._global.get(participant, {}).items()
            ]
            for prefix, names in self._prefixed.get(participant, {}).items():
                rows.extend(
                    {"scope": "prefix", "prefix": list(prefix), "name": name, "value": value}
                    for name, value in names.items()
                )
        rows.sort(key=lambda r: (r["scope"], r["prefix"], r["name"]))
        return rows

    def load_entries(self, participant: str, rows: Iterable[Mapping[str, Any]]) -> None:
        with self._lock:
            self._global.pop(participant, None)
            self._prefixed.pop(participant, None)
            for row in rows:
                if row["scope"] == "global":
                    self._global.setdefault(participant, {})[row["name"]] = row["value"]
                else:
                    per = self._prefixed.setdefault(participant, {})
                    per.setdefault(tuple(row["prefix"]), {})[row["name"]] = row["value"]

    def forget(self, participant: str) -> None:
        with self._lock:
            self._global.pop(participant, None)
            self._prefixed.pop(participant, None)


# ---------------------------------------------------------------------------
# Env — the only state surface handlers/actions/factories see
# ---------------------------------------------------------------------------

@dataclass
class Env:
    """Execution context handed to step handlers, actions and factories."""

    participant: str
    path: PathT
    params: Parameterization
    vars: VarStore
    rng: random.Random = field(default_factory=random.Random)
    form_notes: dict[str, str] = field(default_factory=dict)
    form_values: dict[str, str] = field(default_factory=dict)
    _page_factory: Callable[[], Any] | None = None

    def page(self):
        """Fresh page builder; only available while a step is rendering."""
        if self._page_factory is None:
            from .widgets import NoRegistrarError
            raise NoRegistrarError("page construction is not active here")
        return self._page_factory()

    def var_get(self, name: str, scope: Scope = GLOBAL) -> Any:
        return var_get(self, name, scope)

    def var_set(self, name: str, value: Any, scope: Scope = GLOBAL) -> None:
        var_set(self, name, value, scope)


def var_get(env: Env, name: str, scope: Scope = GLOBAL) -> Any:
    """Read a participant variable; UNDEFINED when absent.

    GLOBAL reads the participant-wide binding. SCOPED resolves the nearest
    enclosing prefix binding along ``env.path``. An explicit prefix scope
    reads exactly that prefix.
    """
    if scope.kind == "global":
        return env.vars.get_global(env.participant, name)
    if scope.kind == "scoped":
        return env.vars.get_scoped(env.participant, env.path, name)
    return env.vars.get_scoped(env.participant, scope.prefix, name)


def var_set(env: Env, name: str, value: Any, scope: Scope = GLOBAL) -> None:
    """Durably write a participant variable (survives expiry and restarts).

    SCOPED writes at the enclosing study of the current position, i.e. the
    declaration site for step-local state shared by siblings.
    """
    if scope.kind == "global":
        env.vars.set_global(env.participant, name, value)
    elif scope.kind == "scoped":
        env.vars.set_prefix(env.participant, env.path[:-1], name, value)
    else:
        env.vars.set_prefix(env.participant, scope.prefix, name, value)


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------

@dataclass
class StateRecord:
    """Snapshot of one participant's durable state in one study.

    Encoded as JSON with this exact field order:
    ``version, participant, study, path, completed, enrolled_at,
    updated_at, params, vars``. ``vars`` rows are sorted by
    (scope, prefix, name). Floats use shortest round-trip repr, so
    decode(encode(r)) is bit-exact.
    """

    participant: str
    study: str
    path: PathT
    completed: bool = False
    enrolled_at: float = 0.0
    updated_at: float = 0.0
    params: dict[str, Any] = field(default_factory=dict)
    vars: list[dict[str, Any]] = field(default_factory=list)


def encode_state(record: StateRecord) -> str:
    doc = {
        "version": RECORD_VERSION,
        "participant": record.participant,
        "study": record.study,
        "path": list(record.path),
        "completed": record.completed,
        "enrolled_at": record.enrolled_at,
        "updated_at": record.updated_at,
        "params": {k: record.params[k] for k in sorted(record.params)},
        "vars": record.vars,
    }
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def decode_state(text: str) -> StateRecord:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise DecodeError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise DecodeError("snapshot root must be an object")
    version = doc.get("version")
    if version != RECORD_VERSION:
        raise DecodeError(f"unsupported snapshot version {version!r}")
    try:
        record = StateRecord(
            participant=doc["participant"],
            study=doc["study"],
            path=tuple(doc["path"]),
            completed=bool(doc["completed"]),
            enrolled_at=doc["enrolled_at"],
            updated_at=doc["updated_at"],
            params={k: ensure_value(v) for k, v in doc["params"].items()},
            vars=[_check_var_row(row) for row in doc["vars"]],
        )
    except (KeyError, TypeError, SerializationError) as exc:
        raise DecodeError(f"malformed snapshot: {exc}") from exc
    if not all(isinstance(seg, str) for seg in record.path):
        raise DecodeError("path segments must be text")
    return record


def _check_var_row(row: Any) -> dict[str, Any]:
    if not isinstance(row, dict):
        raise DecodeError("var rows must be objects")
    for key in ("scope", "prefix", "name", "value"):
        if key not in row:
            raise DecodeError(f"var row missing {key!r}")
    if row["scope"] not in ("global", "prefix"):
        raise DecodeError(f"unknown var scope {row['scope']!r}")
    return {
        "scope": row["scope"],
        "prefix": list(row["prefix"]),
        "name": row["name"],
        "value": ensure_value(row["value"]),
    }


def snapshot_state(*, participant: str, study: str, path: PathT,
                   base_params: Parameterization, vars: VarStore,
                   completed: bool = False, enrolled_at: float = 0.0,
                   updated_at: float = 0.0) -> StateRecord:
    """Capture durable state: position, session-base bindings, variables."""
    return StateRecord(
        participant=participant,
        study=study,
        path=tuple(path),
        completed=completed,
        enrolled_at=enrolled_at,
        updated_at=updated_at,
        params=dict(base_params.entries()),
        vars=vars.entries(participant),
    )


def restore_state(record: StateRecord, vars: VarStore) -> Env:
    """Rebuild an Env from a snapshot: identical path, bindings and vars."""
    vars.load_entries(record.participant, record.vars)
    return Env(
        participant=record.participant,
        path=tuple(record.path),
        params=Parameterization(record.params),
        vars=vars,
    )
