"""Secondary acceptance: the operator dashboard against a live flow.

The dashboard's read surface is GET /admin/api/metrics (polled every 2s)
and its write surface is the two session POST routes; the vitest suite
under frontend/ pins that wiring. Here the same wire calls are driven
end-to-end: three walkers enroll, the table data shows three rows with
correct paths inside one poll interval, and expiring a row sends that
participant through the resume flow on their next click.
"""

import re
import time
from pathlib import Path

from fastapi.testclient import TestClient

from test_acceptance import TOKEN, criterion, make_app

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"


def auth():
    return {"authorization": f"Bearer {TOKEN}"}


@criterion("dashboard: 3 live rows within one poll; expire drives the resume flow")
def test_dashboard_rows_and_expire_flow(tmp_path):
    app, _ = make_app(tmp_path)
    clients = []
    live_pages = {}
    for i in range(3):
        client = TestClient(app, follow_redirects=False)
        resp = client.get("/study/example")
        page = client.get(resp.headers["location"])
        live_pages[client.cookies["studyflow_participant"]] = page.text
        clients.append(client)

    started = time.monotonic()
    admin = TestClient(app, follow_redirects=False)
    body = admin.get("/admin/api/metrics", headers=auth()).json()
    elapsed = time.monotonic() - started
    assert elapsed < 2.0, "one poll must be enough"
    rows = body["sessions"]
    assert len(rows) == 3
    assert {row["path"] for row in rows} == {"example/intro"}
    assert body["liveSessions"] == 3

    # the dashboard's expire button POSTs this exact route
    victim_row = rows[0]
    assert admin.post(f"/admin/api/sessions/{victim_row['id']}/expire",
                      headers=auth()).json() == {"ok": True}

    victim = next(
        c for c in clients
        if c.cookies["studyflow_participant"] == victim_row["participant"])
    stale_url = re.search(r'href="(/k/[^"]+)"',
                          live_pages[victim_row["participant"]]).group(1)
    gone = victim.get(stale_url)              # the participant's next click
    assert gone.status_code == 410
    resume = re.search(r'href="(/study/[^"]+)"', gone.text).group(1)
    resp = victim.get(resume)                 # resume link fast-forwards
    assert resp.status_code == 303
    page = victim.get(resp.headers["location"])
    assert page.status_code == 200
    assert "Welcome to the study!" in page.text  # same step, re-rendered

    url = re.search(r'href="(/k/[^"]+)"', page.text).group(1)
    follow = victim.get(url)
    assert follow.status_code == 303  # the walk continues normally after resume
    return "3 rows, correct paths; expired click resumed via 410 link"


@criterion("dashboard: built assets served at /admin/ui")
def test_dashboard_assets_mount(tmp_path):
    from studyflow.config import ServerConfig
    from studyflow.web import build_engine, create_app

    public = FRONTEND / "public"
    assert (public / "dist" / "main.js").exists(), "run `npm run build` in frontend/"
    config = ServerConfig(data_dir=str(tmp_path / "records"), admin_token=TOKEN,
                          dashboard_dir=str(public))
    app = create_app(config, build_engine(config))
    client = TestClient(app)
    index = client.get("/admin/ui/")
    assert index.status_code == 200
    assert "operator dashboard" in index.text
    assert client.get("/admin/ui/dist/main.js").status_code == 200
    return "index and module script served"
