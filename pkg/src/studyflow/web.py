"""HTTP surface: participant routes, redirect-after-action, admin API.

Wire behaviour:

* ``GET /study/{study-id}`` — enroll, or resume the persisted position.
  Redirects (303) to the live page; completed sessions render a final
  page directly.
* ``GET /p/{page-id}`` — show a live page. Forgotten pages redirect back
  to the study so the walk fast-forwards; unknown ids 404.
* ``GET|POST /k/{embed-id}`` — deliver the one-shot action. Success is
  always a 303 to the next page (post/redirect/get), so refreshing the
  browser never re-runs an action. Consumed or expired tokens get 410
  with resume links.
* ``GET /study/{study-id}/view/{name}`` — study-specific static page.
* ``/admin/api/*`` — bearer-token JSON API for the operator dashboard:
  metrics snapshot, session list, expire/reset actions.

The admin JSON schema is fixed: ``liveSessions``, ``liveSuspensions``,
``suspensionBytesEstimate``, ``deliveriesTotal``, ``goneEmbedTotal``,
``sessions[]{id,participant,path,ageSeconds}`` with slash-joined paths.
"""

from __future__ import annotations

import logging
import random
import secrets
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import HTMLResponse, JSONResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles

from .config import ServerConfig
from .engine import (
    AlreadyEnrolledError,
    Engine,
    GoneEmbedError,
    MetricsSnapshot,
    PageReady,
    SessionBusyError,
    StudyComplete,
)
from .fixtures import FIXTURES, load_fixture
from .model import Study, load_manifest
from .storage import FileStore

logger = logging.getLogger(__name__)

PARTICIPANT_COOKIE = "studyflow_participant"
SEED_HEADER = "x-studyflow-seed"


def build_engine(config: ServerConfig) -> Engine:
    studies: dict[str, Study] = {}
    for entry in config.studies:
        study = load_fixture(entry) if entry in FIXTURES else load_manifest(entry)
        studies[study.id] = study
    store = FileStore(config.data_dir)
    return Engine(
        studies, store,
        ttl_seconds=config.suspension_ttl_seconds,
        forget_consumed=not config.disable_page_forget,
    )


def create_app(config: ServerConfig | None = None, engine: Engine | None = None) -> FastAPI:
    config = config or ServerConfig()
    engine = engine or build_engine(config)
    app = FastAPI(title="studyflow", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.engine = engine
    app.state.config = config

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["authorization", "content-type"],
    )

    # -- participant identity -----------------------------------------------

    def participant_of(request: Request) -> tuple[str, bool]:
        token = request.cookies.get(PARTICIPANT_COOKIE)
        if token:
            return token, False
        return secrets.token_urlsafe(16), True

    def set_participant(response: Response, token: str) -> None:
        response.set_cookie(PARTICIPANT_COOKIE, token, httponly=True, samesite="lax")

    def request_rng(request: Request) -> random.Random | None:
        if not config.test_mode:
            return None
        raw = request.headers.get(SEED_HEADER)
        if raw is None:
            return None
        try:
            return random.Random(int(raw))
        except ValueError:
            return None

    def outcome_response(outcome) -> RedirectResponse:
        if isinstance(outcome, PageReady):
            return RedirectResponse(f"/p/{outcome.page_id}", status_code=303)
        return RedirectResponse(f"/study/{outcome.study_id}", status_code=303)

    # -- participant routes ---------------------------------------------------

    @app.get("/", response_class=HTMLResponse)
    async def index() -> HTMLResponse:
        items = "".join(
            f'<li><a href="/study/{sid}">{sid}</a></li>' for sid in sorted(engine.studies))
        return HTMLResponse(f"<!doctype html>\n<html><body><h1>Studies</h1>"
                            f"<ul>{items}</ul></body></html>")

    @app.get("/study/{study_id}")
    async def study_route(study_id: str, request: Request):
        if study_id not in engine.studies:
            return HTMLResponse("unknown study", status_code=404)
        participant, fresh = participant_of(request)
        rng = request_rng(request)
        session = engine.get_session(study_id, participant)
        if session is None:
            try:
                session, outcome = engine.start_session(study_id, participant, rng=rng)
            except AlreadyEnrolledError as exc:  # lost an enrollment race
                session = exc.session
                outcome = engine.fast_forward(session, rng=rng)
        else:
            outcome = engine.fast_forward(session, rng=rng)
        if isinstance(outcome, StudyComplete):
            response: Response = HTMLResponse(_completion_page(study_id))
        else:
            response = outcome_response(outcome)
        if fresh:
            set_participant(response, participant)
        return response

    @app.get("/p/{page_id}")
    async def page_route(page_id: str):
        found = engine.page_for(page_id)
        if found is not None:
            _, susp = found
            return HTMLResponse(susp.html)
        study_id = engine.study_for_forgotten_page(page_id)
        if study_id is not None:
            return RedirectResponse(f"/study/{study_id}", status_code=303)
        return HTMLResponse("unknown page", status_code=404)

    @app.api_route("/k/{embed_id}", methods=["GET", "POST"])
    async def action_route(embed_id: str, request: Request):
        payload: dict[str, str] = dict(request.query_params)
        if request.method == "POST":
            form = await request.form()
            payload.update({k: str(v) for k, v in form.items()})
        try:
            outcome = engine.deliver_embed(embed_id, payload, rng=request_rng(request))
        except GoneEmbedError:
            participant, _ = participant_of(request)
            return HTMLResponse(_gone_page(engine, participant), status_code=410)
        except SessionBusyError:
            return HTMLResponse("another action for this session is in flight",
                                status_code=409)
        return outcome_response(outcome)

    @app.get("/study/{study_id}/view/{name}")
    async def view_route(study_id: str, name: str, request: Request):
        study = engine.studies.get(study_id)
        if study is None:
            return HTMLResponse("unknown study", status_code=404)
        handler = _find_view_handler(study, name)
        if handler is None:
            return HTMLResponse("unknown view", status_code=404)
        participant, fresh = participant_of(request)
        html = engine_render_view(engine, study, participant, handler)
        response = HTMLResponse(html)
        if fresh:
            set_participant(response, participant)
        return response

    # -- admin API --------------------------------------------------------------

    def admin_authorized(request: Request) -> bool:
        if not config.admin_token:
            return False
        header = request.headers.get("authorization", "")
        return header == f"Bearer {config.admin_token}"

    def admin_401() -> JSONResponse:
        return JSONResponse({"error": "missing or invalid bearer token"}, status_code=401)

    @app.get("/admin/api/metrics")
    async def metrics_route(request: Request):
        if not admin_authorized(request):
            return admin_401()
        return JSONResponse(metrics_to_json(engine.metrics_snapshot()))

    @app.get("/admin/api/sessions")
    async def sessions_route(request: Request):
        if not admin_authorized(request):
            return admin_401()
        snapshot = engine.metrics_snapshot()
        return JSONResponse({"sessions": metrics_to_json(snapshot)["sessions"]})

    @app.post("/admin/api/sessions/{session_id}/expire")
    async def expire_route(session_id: str, request: Request):
        if not admin_authorized(request):
            return admin_401()
        session = engine.session_by_id(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        engine.expire_suspension(session)
        return JSONResponse({"ok": True})

    @app.post("/admin/api/sessions/{session_id}/reset")
    async def reset_route(session_id: str, request: Request):
        if not admin_authorized(request):
            return admin_401()
        session = engine.session_by_id(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        engine.reset_session(session)
        return JSONResponse({"ok": True})

    if config.dashboard_dir and Path(config.dashboard_dir).is_dir():
        app.mount("/admin/ui", StaticFiles(directory=config.dashboard_dir, html=True),
                  name="dashboard")

    return app


# -- helpers ---------------------------------------------------------------


def metrics_to_json(snapshot: MetricsSnapshot) -> dict:
    return {
        "liveSessions": snapshot.live_sessions,
        "liveSuspensions": snapshot.live_suspensions,
        "suspensionBytesEstimate": snapshot.suspension_bytes_estimate,
        "deliveriesTotal": snapshot.deliveries_total,
        "goneEmbedTotal": snapshot.gone_embed_total,
        "sessions": [
            {
                "id": row.id,
                "participant": row.participant,
                "path": "/".join(row.path),
                "ageSeconds": round(row.age_seconds, 3),
            }
            for row in snapshot.per_session
        ],
    }


def _completion_page(study_id: str) -> str:
    return ("<!doctype html>\n<html><body>"
            "<p>Study complete.</p>"
            f"<!-- {study_id} --></body></html>")


def _gone_page(engine: Engine, participant: str) -> str:
    enrolled = {s.study.id for s in engine.sessions_for_participant(participant)}
    if engine.store is not None:
        # records survive restarts even when the session is not in memory yet
        enrolled.update(sid for sid in engine.studies
                        if engine.store.has_record(sid, participant))
    links = [f'<li><a href="/study/{sid}">resume {sid}</a></li>'
             for sid in sorted(enrolled)]
    if not links:
        links.append('<li><a href="/">studies</a></li>')
    return ("<!doctype html>\n<html><body><p>That action is no longer available "
            "(it may have been used already).</p><ul>" + "".join(links) +
            "</ul></body></html>")


def _find_view_handler(study: Study, name: str):
    from .model import Step

    stack: list = [study]
    while stack:
        node = stack.pop()
        if isinstance(node, Step):
            handler = node.view_handlers.get(name)
            if handler is not None:
                return handler
        elif isinstance(node, Study):
            stack.extend(reversed(node.children))
    return None


def engine_render_view(engine: Engine, study: Study, participant: str, handler) -> bytes:
    """Render a static view page: variables readable, no action registration."""
    from .state import Env, Parameterization
    from .widgets import PageBuilder, render_html

    env = Env(participant=participant, path=(study.id,),
              params=Parameterization(study.bindings), vars=engine.vars)
    env._page_factory = lambda: PageBuilder(env, allow_actions=False)
    page = handler(env)
    return render_html(page, lambda embed: f"/k/{embed}")
