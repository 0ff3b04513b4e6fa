"""Execution engine: renders steps, suspends, resumes, forgets.

Instead of capturing call stacks, the engine keeps one explicit
:class:`Suspension` per session: the pending page, a cursor (the position
path into the study tree) and the parameterization the page was built
under. Because the study walk is a tail march over the tree, the cursor
reconstructs the walk exactly, so resume state stays O(tree depth) per
session no matter how many steps a participant has taken.

Delivering an action consumes the whole page: every embed token on it is
invalidated before the action runs, which is what defeats the browser
Back button. ``Retry`` re-runs the same step (fresh page, fresh tokens,
re-run step-local randomness); ``Continue`` advances through the tree,
descending into sub-studies and popping back out when they end.

Suspensions are never persisted. Durable state is position + variables
(see ``storage``); after an expiry or a restart, ``fast_forward`` rebuilds
the page by re-running the step named by the stored path.
"""

from __future__ import annotations

import hashlib
import logging
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping

from .model import (
    Continue,
    DynamicStudy,
    END,
    Retry,
    Step,
    Study,
    StudyGraphError,
    resolve_next,
    validate_study,
)
from .state import Env, Parameterization, PathT, VarStore, snapshot_state
from .storage import FileStore, NotFoundError
from .widgets import Page, PageBuilder, render_html

logger = logging.getLogger(__name__)

DEFAULT_TTL_SECONDS = 86400
_MAX_ADVANCE_HOPS = 10_000
_FORGOTTEN_PAGES_KEPT = 8


class EngineError(Exception):
    pass


class GoneEmbedError(EngineError):
    """Unknown or already-consumed embed token (the back-button case)."""


class SessionBusyError(EngineError):
    """Another delivery for this session is in flight."""


class AlreadyEnrolledError(EngineError):
    def __init__(self, message: str, session: "Session"):
        super().__init__(message)
        self.session = session


class StalePositionError(EngineError):
    """Persisted path no longer exists in the (possibly re-deployed) study."""


@dataclass
class Suspension:
    session_id: str
    page: Page
    cursor: PathT
    params: Parameterization
    created_at: float
    touched_at: float
    html: bytes
    bytes_estimate: int


@dataclass
class PageReady:
    page_id: str
    study_id: str


@dataclass
class StudyComplete:
    study_id: str


Outcome = PageReady | StudyComplete


@dataclass
class Session:
    id: str
    participant: str
    study: Study
    path: PathT
    base_params: Parameterization
    created_at: float
    updated_at: float
    completed: bool = False
    suspension: Suspension | None = None
    dynamic_cache: dict[PathT, Study] = field(default_factory=dict)
    graveyard: list[Suspension] = field(default_factory=list)
    recent_forgotten: deque = field(default_factory=lambda: deque(maxlen=_FORGOTTEN_PAGES_KEPT))
    diagnostics: list[str] = field(default_factory=list)
    op_lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class SessionInfo:
    id: str
    participant: str
    path: PathT
    age_seconds: float


@dataclass
class MetricsSnapshot:
    live_sessions: int
    live_suspensions: int
    suspension_bytes_estimate: int
    deliveries_total: int
    gone_embed_total: int
    per_session: list[SessionInfo]


def session_id_for(study_id: str, participant: str) -> str:
    """Stable admin-facing session id (survives restarts)."""
    digest = hashlib.sha256(f"{study_id}\x00{participant}".encode()).hexdigest()
    return digest[:16]


def embed_url(embed: str) -> str:
    return f"/k/{embed}"


class Engine:
    """Shared by concurrent request handlers; per-session ops are serialized."""

    def __init__(self, studies: Mapping[str, Study], store: FileStore | None = None,
                 *, ttl_seconds: float = DEFAULT_TTL_SECONDS,
                 forget_consumed: bool = True, clock=time.time):
        self.studies: dict[str, Study] = {}
        for study in studies.values():
            problems = validate_study(study)
            if problems:
                raise StudyGraphError(
                    f"study {study.id!r} fails validation: " + "; ".join(map(str, problems)))
            self.studies[study.id] = study
        self.store = store
        self.vars = VarStore(on_write=self._on_var_write)
        self._vars_loaded: set[str] = set()
        self.ttl_seconds = ttl_seconds
        self.forget_consumed = forget_consumed
        self.clock = clock

        self._lock = threading.RLock()
        self._sessions: dict[str, Session] = {}
        self._embeds: dict[str, str] = {}            # embed token -> session id
        self._pages: dict[str, str] = {}             # page id -> session id
        self._forgotten_pages: dict[str, str] = {}   # page id -> study id
        self.deliveries_total = 0
        self.gone_embed_total = 0

    # -- session lookup -----------------------------------------------------

    def get_session(self, study_id: str, participant: str) -> Session | None:
        """In-memory session, else one rebuilt from the persisted record."""
        sid = session_id_for(study_id, participant)
        with self._lock:
            session = self._sessions.get(sid)
            if session is not None:
                return session
        if self.store is None or study_id not in self.studies:
            return None
        try:
            record = self.store.get_record(study_id, participant)
        except NotFoundError:
            return None
        if participant not in self._vars_loaded:
            self.vars.load_entries(participant, record.vars)
            self._vars_loaded.add(participant)
        session = Session(
            id=sid,
            participant=participant,
            study=self.studies[study_id],
            path=tuple(record.path),
            base_params=Parameterization(record.params),
            created_at=record.enrolled_at,
            updated_at=record.updated_at,
            completed=record.completed,
        )
        with self._lock:
            return self._sessions.setdefault(sid, session)

    def session_by_id(self, sid: str) -> Session | None:
        with self._lock:
            return self._sessions.get(sid)

    def sessions_for_participant(self, participant: str) -> list[Session]:
        with self._lock:
            return [s for s in self._sessions.values() if s.participant == participant]

    # -- lifecycle ----------------------------------------------------------

    def start_session(self, study_id: str, participant: str,
                      params: Mapping[str, Any] | None = None,
                      rng: random.Random | None = None) -> tuple[Session, Outcome]:
        """Enroll a participant: walk to the entry step and suspend there."""
        study = self.studies[study_id]
        existing = self.get_session(study_id, participant)
        if existing is not None:
            raise AlreadyEnrolledError(
                f"participant {participant!r} already has a session in {study_id!r}; "
                "resume it instead", existing)
        now = self.clock()
        session = Session(
            id=session_id_for(study_id, participant),
            participant=participant,
            study=study,
            path=(study.id,),
            base_params=Parameterization(dict(params or {})),
            created_at=now,
            updated_at=now,
        )
        self._vars_loaded.add(participant)
        with self._lock:
            raced = self._sessions.setdefault(session.id, session)
            if raced is not session:
                raise AlreadyEnrolledError(
                    f"participant {participant!r} already has a session in "
                    f"{study_id!r}; resume it instead", raced)
        with session.op_lock:
            step_path = self._descend(session, (study.id,), rng)
            if step_path is None:
                outcome = self._complete(session)
            else:
                session.path = step_path
                outcome = self._render(session, rng=rng)
            self._persist(session)
        return session, outcome

    def deliver(self, session: Session, embed: str, payload: Mapping[str, str],
                rng: random.Random | None = None) -> Outcome:
        """Run the one-shot action behind *embed* and move the walk along."""
        if not session.op_lock.acquire(blocking=False):
            raise SessionBusyError(f"session {session.id} has a delivery in flight")
        try:
            susp = session.suspension
            if susp is not None and self._expired(susp):
                self._drop_suspension(session)
                susp = None
            if susp is None or embed not in susp.page.actions:
                self.gone_embed_total += 1
                raise GoneEmbedError("that action was already used or has expired")
            action = susp.page.actions[embed]
            self._drop_suspension(session)  # forget: the whole page is consumed

            env = self._make_env(session, susp.cursor, params=susp.params, rng=rng)
            result = action(env, dict(payload))
            self.deliveries_total += 1

            if isinstance(result, Retry):
                outcome = self._render(session, rng=rng,
                                       notes=result.notes_map(), values=result.values_map())
            elif isinstance(result, Continue):
                next_path = self._advance(session, session.path, rng)
                if next_path is None:
                    outcome = self._complete(session)
                else:
                    session.path = next_path
                    outcome = self._render(session, rng=rng)
            else:
                raise EngineError(
                    f"action returned {result!r}; actions must yield Continue or Retry")
            self._persist(session)
            return outcome
        finally:
            session.op_lock.release()

    def deliver_embed(self, embed: str, payload: Mapping[str, str],
                      rng: random.Random | None = None) -> Outcome:
        with self._lock:
            sid = self._embeds.get(embed)
            session = self._sessions.get(sid) if sid else None
        if session is None:
            self.gone_embed_total += 1
            raise GoneEmbedError("that action was already used or has expired")
        return self.deliver(session, embed, payload, rng=rng)

    def fast_forward(self, session: Session, rng: random.Random | None = None) -> Outcome:
        """Rebuild the page for the persisted position (expiry/restart path)."""
        with session.op_lock:
            if session.completed:
                return StudyComplete(session.study.id)
            susp = session.suspension
            if susp is not None:
                if not self._expired(susp):
                    return PageReady(susp.page.page_id, session.study.id)
                self._drop_suspension(session)
            try:
                step_path = self._locate(session, session.path, rng)
            except StalePositionError as exc:
                session.diagnostics.append(str(exc))
                logger.warning("session %s: %s; resetting to entry", session.id, exc)
                step_path = self._descend(session, (session.study.id,), rng)
            if step_path is None:
                outcome = self._complete(session)
            else:
                session.path = step_path
                outcome = self._render(session, rng=rng)
            self._persist(session)
            return outcome

    def expire_suspension(self, session: Session) -> None:
        """Drop the live page, if any. Position and variables stay put."""
        with session.op_lock:
            self._drop_suspension(session)

    def reset_session(self, session: Session) -> None:
        """Send the participant back to the entry step; variables are kept."""
        with session.op_lock:
            self._drop_suspension(session)
            session.completed = False
            session.path = (session.study.id,)
            self._persist(session)

    # -- page lookup (for the HTTP layer) ------------------------------------

    def page_for(self, page_id: str) -> tuple[Session, Suspension] | None:
        with self._lock:
            sid = self._pages.get(page_id)
            session = self._sessions.get(sid) if sid else None
        if session is None:
            return None
        susp = session.suspension
        if susp is None or susp.page.page_id != page_id:
            return None
        if self._expired(susp):
            with session.op_lock:
                if session.suspension is susp:
                    self._drop_suspension(session)
            return None
        susp.touched_at = self.clock()
        return session, susp

    def study_for_forgotten_page(self, page_id: str) -> str | None:
        with self._lock:
            return self._forgotten_pages.get(page_id)

    # -- metrics --------------------------------------------------------------

    def metrics_snapshot(self) -> MetricsSnapshot:
        self.sweep_expired()
        now = self.clock()
        with self._lock:
            sessions = list(self._sessions.values())
        live = [s for s in sessions if not s.completed]
        suspensions = 0
        bytes_estimate = 0
        rows = []
        for s in live:
            retained = ([s.suspension] if s.suspension else []) + s.graveyard
            suspensions += len(retained)
            bytes_estimate += sum(x.bytes_estimate for x in retained)
            age_base = s.suspension.touched_at if s.suspension else s.updated_at
            rows.append(SessionInfo(
                id=s.id, participant=s.participant, path=s.path,
                age_seconds=max(0.0, now - age_base)))
        rows.sort(key=lambda r: r.id)
        return MetricsSnapshot(
            live_sessions=len(live),
            live_suspensions=suspensions,
            suspension_bytes_estimate=bytes_estimate,
            deliveries_total=self.deliveries_total,
            gone_embed_total=self.gone_embed_total,
            per_session=rows,
        )

    def sweep_expired(self) -> int:
        """Lazily drop suspensions past their idle TTL; returns count dropped."""
        with self._lock:
            sessions = list(self._sessions.values())
        dropped = 0
        for session in sessions:
            susp = session.suspension
            if susp is not None and self._expired(susp):
                with session.op_lock:
                    if session.suspension is susp:
                        self._drop_suspension(session)
                        dropped += 1
        return dropped

    # -- internals ------------------------------------------------------------

    def _expired(self, susp: Suspension) -> bool:
        return self.clock() - susp.touched_at > self.ttl_seconds

    def _on_var_write(self, participant: str) -> None:
        for session in self.sessions_for_participant(participant):
            self._persist(session)

    def _persist(self, session: Session) -> None:
        if self.store is None:
            return
        session.updated_at = max(self.clock(), session.updated_at)
        record = snapshot_state(
            participant=session.participant,
            study=session.study.id,
            path=session.path,
            base_params=session.base_params,
            vars=self.vars,
            completed=session.completed,
            enrolled_at=session.created_at,
            updated_at=session.updated_at,
        )
        self.store.put_record(record)

    def _complete(self, session: Session) -> Outcome:
        self._drop_suspension(session)
        session.completed = True
        return StudyComplete(session.study.id)

    def _drop_suspension(self, session: Session) -> None:
        susp = session.suspension
        if susp is None:
            return
        session.suspension = None
        with self._lock:
            for embed in susp.page.actions:
                self._embeds.pop(embed, None)
            self._pages.pop(susp.page.page_id, None)
            if len(session.recent_forgotten) == session.recent_forgotten.maxlen:
                oldest = session.recent_forgotten[0]
                self._forgotten_pages.pop(oldest, None)
            session.recent_forgotten.append(susp.page.page_id)
            self._forgotten_pages[susp.page.page_id] = session.study.id
        if not self.forget_consumed:
            session.graveyard.append(susp)

    def _make_env(self, session: Session, path: PathT, *,
                  params: Parameterization | None = None,
                  rng: random.Random | None = None,
                  notes: dict[str, str] | None = None,
                  values: dict[str, str] | None = None) -> Env:
        if params is None:
            params = self._params_at(session, path)
        return Env(
            participant=session.participant,
            path=path,
            params=params,
            vars=self.vars,
            rng=rng if rng is not None else random.Random(),
            form_notes=dict(notes or {}),
            form_values=dict(values or {}),
        )

    def _params_at(self, session: Session, path: PathT) -> Parameterization:
        """Base bindings extended by each enclosing study's declared bindings."""
        params = session.base_params
        node: Any = session.study
        if node.bindings:
            params = params.extend(node.bindings)
        for depth, seg in enumerate(path[1:], start=2):
            if not isinstance(node, Study):
                break
            child = node.child(seg)
            if child is None:
                break
            if isinstance(child, DynamicStudy):
                child = session.dynamic_cache.get(tuple(path[:depth]), child)
            if isinstance(child, Study) and child.bindings:
                params = params.extend(child.bindings)
            node = child
        return params

    def _resolve_node(self, session: Session, path: PathT,
                      rng: random.Random | None):
        """Node at *path*, with dynamic studies resolved and cached per session."""
        if not path or path[0] != session.study.id:
            raise StalePositionError(f"path {list(path)} does not start at the study root")
        node: Any = session.study
        for depth, seg in enumerate(path[1:], start=2):
            if not isinstance(node, Study):
                raise StalePositionError(
                    f"path {list(path)} descends through a non-study node")
            child = node.child(seg)
            if child is None:
                raise StalePositionError(
                    f"path segment {seg!r} names no node under {node.id!r}")
            if isinstance(child, DynamicStudy):
                child = self._resolve_dynamic(session, child, tuple(path[:depth]), rng)
            node = child
        if isinstance(node, DynamicStudy):
            node = self._resolve_dynamic(session, node, tuple(path), rng)
        return node

    def _resolve_dynamic(self, session: Session, node: DynamicStudy,
                         path: PathT, rng: random.Random | None) -> Study:
        cached = session.dynamic_cache.get(path)
        if cached is not None:
            return cached
        env = self._make_env(session, path, rng=rng)
        study = node.factory(env)
        if not isinstance(study, Study) or study.id != node.id:
            raise EngineError(
                f"dynamic study factory for {node.id!r} returned "
                f"{getattr(study, 'id', study)!r}")
        problems = validate_study(study)
        if problems:
            raise EngineError(
                f"dynamic study {node.id!r} fails validation: "
                + "; ".join(map(str, problems)))
        session.dynamic_cache[path] = study
        return study

    def _descend(self, session: Session, path: PathT,
                 rng: random.Random | None) -> PathT | None:
        """From a study node down to its first step; None if it has none.

        A study with no children completes immediately, which at the root
        means the whole walk is done.
        """
        for _ in range(_MAX_ADVANCE_HOPS):
            node = self._resolve_node(session, path, rng)
            if isinstance(node, Step):
                return path
            if not node.children:
                if len(path) <= 1:
                    return None
                advanced = self._advance(session, path, rng)
                return advanced
            path = path + (node.entry,)
        raise EngineError("study walk did not reach a step; structure loops without pages")

    def _advance(self, session: Session, path: PathT,
                 rng: random.Random | None) -> PathT | None:
        """Leave the node at *path*: apply transitions, pop ended sub-studies."""
        for _ in range(_MAX_ADVANCE_HOPS):
            if len(path) <= 1:
                return None
            parent_path = path[:-1]
            parent = self._resolve_node(session, parent_path, rng)
            env = self._make_env(session, path, rng=rng)
            target = resolve_next(parent, path[-1], env)
            if target is END:
                path = parent_path
                continue
            child_path = parent_path + (target,)
            node = self._resolve_node(session, child_path, rng)
            if isinstance(node, Step):
                return child_path
            if not node.children:
                path = child_path
                continue
            return self._descend(session, child_path, rng)
        raise EngineError("study walk did not reach a step; structure loops without pages")

    def _locate(self, session: Session, path: PathT,
                rng: random.Random | None) -> PathT | None:
        """Re-traverse to the stored path; studies re-enter at their entry."""
        node = self._resolve_node(session, path, rng)
        if isinstance(node, Step):
            return path
        return self._descend(session, path, rng)

    def _render(self, session: Session, rng: random.Random | None = None,
                notes: dict[str, str] | None = None,
                values: dict[str, str] | None = None) -> Outcome:
        """Run the current step's handler and install the new suspension."""
        node = self._resolve_node(session, session.path, rng)
        if not isinstance(node, Step):
            raise EngineError(f"position {list(session.path)} is not a step")
        env = self._make_env(session, session.path, rng=rng, notes=notes, values=values)
        env._page_factory = lambda: PageBuilder(env)
        page = node.handler(env)
        if not isinstance(page, Page):
            raise EngineError(
                f"step {node.id!r} handler returned {type(page).__name__}, not a finished page")
        html = render_html(page, embed_url)
        now = self.clock()
        susp = Suspension(
            session_id=session.id,
            page=page,
            cursor=session.path,
            params=env.params,
            created_at=now,
            touched_at=now,
            html=html,
            bytes_estimate=len(html) + sum(len(seg) + 1 for seg in session.path) + 64,
        )
        with self._lock:
            session.suspension = susp
            for embed in page.actions:
                self._embeds[embed] = session.id
            self._pages[page.page_id] = session.id
            self._forgotten_pages.pop(page.page_id, None)
        return PageReady(page.page_id, session.study.id)
