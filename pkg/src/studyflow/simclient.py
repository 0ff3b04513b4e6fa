"""Headless participant: walks studies over HTTP, checks store boundedness.

The walker follows the participant-facing wire protocol exactly: GET the
study, follow redirects by hand (recording every status), scrape the
rendered page for one-shot action URLs, click per policy, repeat. Against
a live server it uses a normal httpx client; for in-process runs it
mounts the ASGI app directly, which exercises the same application stack
minus the socket.

``leakcheck`` drives many sessions for many steps while sampling the
admin metrics, then asserts the resume state stays bounded: never more
live suspensions than sessions, and no upward trend in the suspension
byte estimate (least-squares slope over the sampled rounds, with total
drift across the window allowed up to 5% of the mean level).
"""

from __future__ import annotations

import asyncio
import random
import statistics
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Any, Sequence

import httpx

from .web import PARTICIPANT_COOKIE, SEED_HEADER

DEFAULT_STEP_LIMIT = 100


class TraceError(Exception):
    pass


class LeakDetectedError(Exception):
    def __init__(self, message: str, report: "LeakReport"):
        super().__init__(message)
        self.report = report


@dataclass
class ActionRef:
    kind: str  # "link" | "form"
    url: str
    label: str
    fields: tuple[str, ...] = ()


@dataclass
class PageView:
    url: str
    status: int
    text: str
    actions: list[ActionRef]
    html: str


@dataclass
class Trace:
    pages: list[PageView] = field(default_factory=list)
    delivery_statuses: list[int] = field(default_factory=list)
    completed: bool = False
    gone: int = 0

    @property
    def page_texts(self) -> list[str]:
        return [p.text for p in self.pages]


class _PageScraper(HTMLParser):
    """Extract visible text and one-shot action URLs from a rendered page."""

    def __init__(self):
        super().__init__()
        self.actions: list[ActionRef] = []
        self.chunks: list[str] = []
        self._hide = 0
        self._link: ActionRef | None = None
        self._form: ActionRef | None = None

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "a":
            self._hide += 1
            href = attrs.get("href", "")
            if "/k/" in href:
                self._link = ActionRef("link", href, "")
        elif tag == "form":
            self._hide += 1
            action = attrs.get("action", "")
            if "/k/" in action:
                self._form = ActionRef("form", action, "")
        elif tag in ("input", "select") and self._form is not None:
            name = attrs.get("name")
            if name:
                self._form.fields += (name,)
        elif tag == "title":
            self._hide += 1

    def handle_endtag(self, tag):
        if tag == "a":
            self._hide = max(0, self._hide - 1)
            if self._link is not None:
                self.actions.append(self._link)
                self._link = None
        elif tag == "form":
            self._hide = max(0, self._hide - 1)
            if self._form is not None:
                self.actions.append(self._form)
                self._form = None
        elif tag == "title":
            self._hide = max(0, self._hide - 1)

    def handle_data(self, data):
        data = data.strip()
        if not data:
            return
        if self._link is not None:
            self._link.label += data
        elif self._form is None and not self._hide:
            self.chunks.append(data)


def scrape_page(html: str, url: str, status: int = 200) -> PageView:
    scraper = _PageScraper()
    scraper.feed(html)
    return PageView(url=url, status=status, text=" ".join(scraper.chunks),
                    actions=scraper.actions, html=html)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class Policy:
    """Chooses which action to take on each page."""

    def choose(self, page: PageView) -> ActionRef | None:
        raise NotImplementedError

    def payload_for(self, action: ActionRef) -> dict[str, str]:
        return {}


class FirstAction(Policy):
    def choose(self, page: PageView) -> ActionRef | None:
        return page.actions[0] if page.actions else None


class RandomAction(Policy):
    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def choose(self, page: PageView) -> ActionRef | None:
        return self.rng.choice(page.actions) if page.actions else None


class Scripted(Policy):
    """Click actions by label, in order; fails loudly on a missing label."""

    def __init__(self, labels: Sequence[str]):
        self.labels = list(labels)
        self._at = 0

    def choose(self, page: PageView) -> ActionRef | None:
        if self._at >= len(self.labels):
            return None
        wanted = self.labels[self._at]
        for action in page.actions:
            if action.label == wanted:
                self._at += 1
                return action
        raise TraceError(
            f"scripted label {wanted!r} not on page; "
            f"offered: {[a.label for a in page.actions]}")


def make_policy(name: str, *, seed: int = 0, script: Sequence[str] = ()) -> Policy:
    if name == "first-action":
        return FirstAction()
    if name == "random":
        return RandomAction(seed)
    if name == "scripted":
        return Scripted(script)
    raise ValueError(f"unknown policy {name!r}")


# ---------------------------------------------------------------------------
# Participant walker
# ---------------------------------------------------------------------------

class Participant:
    """One simulated participant with its own cookie identity.

    Cookies are pinned into explicit request headers, so many participants
    can safely share one HTTP client (the client's own jar never applies:
    an explicit Cookie header suppresses it).
    """

    def __init__(self, client: httpx.AsyncClient, study_id: str,
                 seed_header: int | None = None):
        self.client = client
        self.study_id = study_id
        self.seed_header = seed_header
        self.cookie_token: str | None = None

    def _headers(self) -> dict[str, str]:
        headers = {"cookie": f"{PARTICIPANT_COOKIE}={self.cookie_token}"
                   if self.cookie_token else ""}
        if self.seed_header is not None:
            headers[SEED_HEADER] = str(self.seed_header)
        return headers

    async def request(self, method: str, url: str,
                      data: dict[str, str] | None = None) -> httpx.Response:
        resp = await self.client.request(method, url, data=data,
                                         headers=self._headers(),
                                         follow_redirects=False)
        token = resp.cookies.get(PARTICIPANT_COOKIE)
        if token:
            self.cookie_token = token
        return resp

    async def get_page(self, url: str, trace: Trace) -> PageView:
        """GET, following 303s by hand, until a rendered page appears."""
        for _ in range(10):
            resp = await self.request("GET", url)
            if resp.status_code == 303:
                url = resp.headers["location"]
                continue
            if resp.status_code == 200:
                page = scrape_page(resp.text, url, resp.status_code)
                trace.pages.append(page)
                return page
            raise TraceError(f"GET {url} -> {resp.status_code}")
        raise TraceError(f"redirect loop at {url}")

    async def open_study(self, trace: Trace) -> PageView:
        return await self.get_page(f"/study/{self.study_id}", trace)

    async def click(self, action: ActionRef, payload: dict[str, str],
                    trace: Trace) -> PageView | None:
        method = "POST" if action.kind == "form" else "GET"
        resp = await self.request(method, action.url,
                                  data=payload if action.kind == "form" else None)
        trace.delivery_statuses.append(resp.status_code)
        if resp.status_code == 303:
            return await self.get_page(resp.headers["location"], trace)
        if resp.status_code == 410:
            trace.gone += 1
            return None
        raise TraceError(f"{method} {action.url} -> {resp.status_code}")


async def walk_async(client: httpx.AsyncClient, study_id: str,
                     policy: Policy | str = "first-action", *,
                     seed: int = 0, script: Sequence[str] = (),
                     max_steps: int = DEFAULT_STEP_LIMIT,
                     seed_header: int | None = None,
                     participant: Participant | None = None) -> Trace:
    """Walk a study until it completes or *max_steps* deliveries happen."""
    if isinstance(policy, str):
        policy = make_policy(policy, seed=seed, script=script)
    if participant is None:
        participant = Participant(client, study_id, seed_header)
    trace = Trace()
    if max_steps <= 0:
        return trace
    page: PageView | None = await participant.open_study(trace)
    steps = 0
    while page is not None and page.actions and steps < max_steps:
        action = policy.choose(page)
        if action is None:
            break
        steps += 1
        page = await participant.click(action, policy.payload_for(action), trace)
    if page is not None and not page.actions:
        trace.completed = True
    return trace


def walk(base_url_or_app: Any, study_id: str, policy: Policy | str = "first-action",
         **kwargs) -> Trace:
    """Synchronous wrapper around :func:`walk_async` with its own client."""

    async def run() -> Trace:
        async with client_for(base_url_or_app) as client:
            return await walk_async(client, study_id, policy, **kwargs)

    return asyncio.run(run())


def client_for(target: Any) -> httpx.AsyncClient:
    """HTTP client for a base URL (live server) or an ASGI app (in-process)."""
    if isinstance(target, str):
        return httpx.AsyncClient(base_url=target, trust_env=False)
    return httpx.AsyncClient(transport=httpx.ASGITransport(app=target),
                             base_url="http://studyflow.test", trust_env=False)


# ---------------------------------------------------------------------------
# Leak check
# ---------------------------------------------------------------------------

@dataclass
class LeakReport:
    sessions: int
    steps: int
    depth: int
    suspension_series: list[int]
    bytes_series: list[int]
    max_live_suspensions: int
    slope: float
    mean_bytes: float
    fitted_bytes_per_suspension: float
    passed: bool
    reason: str = ""
    baseline_suspensions: int = 0  # pre-run load on a shared server

    def summary(self) -> str:
        status = "PASS" if self.passed else "LEAK DETECTED"
        baseline = (f" baseline={self.baseline_suspensions}"
                    if self.baseline_suspensions else "")
        return (f"{status}: sessions={self.sessions} steps={self.steps}{baseline} "
                f"max_live_suspensions={self.max_live_suspensions} "
                f"mean_bytes={self.mean_bytes:.0f} slope={self.slope:.3f}/round "
                f"fitted_bytes_per_suspension={self.fitted_bytes_per_suspension:.0f}"
                + (f" ({self.reason})" if self.reason else ""))


async def leakcheck_async(client: httpx.AsyncClient, *, sessions: int, steps: int,
                          study_id: str = "depth3", admin_token: str,
                          drift_tolerance: float = 0.05,
                          concurrency: int = 16) -> LeakReport:
    """Drive S sessions for N steps each; assert the resume state is bounded.

    One metrics sample is taken per round (after every session took one
    step). Raises LeakDetectedError, report attached, when live
    suspensions ever exceed the pre-run baseline plus the session count,
    or the byte series trends upward beyond the tolerance. The baseline
    makes the check valid on a server that already has participants.
    """
    auth = {"authorization": f"Bearer {admin_token}"}

    async def sample() -> dict:
        resp = await client.get("/admin/api/metrics", headers=auth)
        if resp.status_code != 200:
            raise TraceError(f"metrics endpoint -> {resp.status_code}")
        return resp.json()

    baseline = (await sample())["liveSuspensions"]
    walkers = [Participant(client, study_id) for _ in range(sessions)]
    traces = [Trace() for _ in range(sessions)]
    pages: list[PageView | None] = [None] * sessions
    gate = asyncio.Semaphore(concurrency)

    async def enroll(i: int) -> None:
        async with gate:
            pages[i] = await walkers[i].open_study(traces[i])

    async def step(i: int) -> None:
        page = pages[i]
        if page is None or not page.actions:
            return
        async with gate:
            pages[i] = await walkers[i].click(page.actions[0], {}, traces[i])

    await asyncio.gather(*(enroll(i) for i in range(sessions)))

    suspension_series: list[int] = []
    bytes_series: list[int] = []
    depth = 1
    for _ in range(steps):
        await asyncio.gather(*(step(i) for i in range(sessions)))
        snapshot = await sample()
        suspension_series.append(snapshot["liveSuspensions"])
        bytes_series.append(snapshot["suspensionBytesEstimate"])
        for row in snapshot["sessions"]:
            depth = max(depth, len(row["path"].split("/")))

    max_susp = max(suspension_series) if suspension_series else 0
    mean_bytes = statistics.fmean(bytes_series) if bytes_series else 0.0
    if len(bytes_series) >= 2 and len(set(bytes_series)) > 1:
        slope = statistics.linear_regression(
            range(len(bytes_series)), bytes_series).slope
    else:
        slope = 0.0
    fitted = mean_bytes / (sessions * depth) if sessions and depth else 0.0

    passed = True
    reason = ""
    if max_susp > baseline + sessions:
        passed = False
        reason = (f"live suspensions peaked at {max_susp} > "
                  f"{sessions} sessions + {baseline} baseline")
    elif bytes_series and slope * len(bytes_series) > drift_tolerance * mean_bytes:
        passed = False
        reason = (f"byte estimate trends upward: slope {slope:.2f}/round over "
                  f"{len(bytes_series)} rounds exceeds {drift_tolerance:.0%} of mean")

    report = LeakReport(
        sessions=sessions, steps=steps, depth=depth,
        suspension_series=suspension_series, bytes_series=bytes_series,
        max_live_suspensions=max_susp, slope=slope, mean_bytes=mean_bytes,
        fitted_bytes_per_suspension=fitted, passed=passed, reason=reason,
        baseline_suspensions=baseline,
    )
    if not passed:
        raise LeakDetectedError(report.summary(), report)
    return report


def leakcheck(base_url_or_app: Any, *, sessions: int, steps: int,
              study_id: str = "depth3", admin_token: str,
              drift_tolerance: float = 0.05) -> LeakReport:
    async def run() -> LeakReport:
        async with client_for(base_url_or_app) as client:
            return await leakcheck_async(
                client, sessions=sessions, steps=steps, study_id=study_id,
                admin_token=admin_token, drift_tolerance=drift_tolerance)

    return asyncio.run(run())
