"""Simulated participant walks and the leak detector."""

import pytest

from studyflow.config import ServerConfig
from studyflow.engine import Engine
from studyflow.fixtures import coin_toss_study, deep_loop_study, two_step_study
from studyflow.simclient import (
    LeakDetectedError,
    TraceError,
    leakcheck,
    make_policy,
    scrape_page,
    walk,
)
from studyflow.storage import FileStore
from studyflow.web import create_app

TOKEN = "sim-admin"


def make_app(tmp_path, *, disable_forget=False):
    config = ServerConfig(data_dir=str(tmp_path / "records"), admin_token=TOKEN,
                          test_mode=True, disable_page_forget=disable_forget)
    engine = Engine(
        {"example-study": two_step_study(), "example": coin_toss_study(),
         "depth3": deep_loop_study()},
        FileStore(config.data_dir),
        forget_consumed=not disable_forget,
    )
    return create_app(config, engine)


def test_first_action_walk_of_the_two_step_study(tmp_path):
    trace = walk(make_app(tmp_path), "example-study", "first-action")
    assert trace.page_texts == ["Welcome to the study.", "Thank you for participating."]
    assert trace.completed
    assert trace.delivery_statuses == [303]


def test_scripted_walk_with_forced_heads(tmp_path):
    trace = walk(make_app(tmp_path), "example", "scripted",
                 script=["Start", "Heads"], seed_header=1)  # seed 1 tosses heads
    assert trace.completed
    assert trace.page_texts[-1] == "You guessed right."
    assert all(status == 303 for status in trace.delivery_statuses)


def test_scripted_missing_label_is_loud(tmp_path):
    with pytest.raises(TraceError, match="Skip"):
        walk(make_app(tmp_path), "example", "scripted", script=["Skip"])


def test_zero_step_limit_yields_empty_trace(tmp_path):
    trace = walk(make_app(tmp_path), "example", "random", seed=7, max_steps=0)
    assert trace.pages == [] and trace.delivery_statuses == []
    assert not trace.completed


def test_random_walks_are_deterministic_under_fixed_seed(tmp_path):
    app = make_app(tmp_path)
    first = walk(app, "depth3", "random", seed=11, max_steps=12, seed_header=3)
    app2 = make_app(tmp_path / "second")
    second = walk(app2, "depth3", "random", seed=11, max_steps=12, seed_header=3)
    assert first.page_texts == second.page_texts
    assert first.delivery_statuses == second.delivery_statuses


def test_scraper_sees_forms_and_fields():
    html = ('<form method="post" action="/k/tok123"><label>age '
            '<input type="number" name="age" value=""></label>'
            '<button type="submit">Send</button></form>')
    page = scrape_page(html, "/p/x")
    assert page.actions[0].kind == "form"
    assert page.actions[0].fields == ("age",)


def test_policy_factory_rejects_unknown_names():
    with pytest.raises(ValueError):
        make_policy("clever")


def test_leakcheck_passes_on_bounded_engine(tmp_path):
    report = leakcheck(make_app(tmp_path), sessions=5, steps=12, admin_token=TOKEN)
    assert report.passed
    assert report.max_live_suspensions <= 5
    assert len(report.bytes_series) == 12
    assert report.depth == 4  # depth3/mid/inner/<step>


def test_leakcheck_flags_disabled_forgetting(tmp_path):
    app = make_app(tmp_path, disable_forget=True)
    with pytest.raises(LeakDetectedError) as excinfo:
        leakcheck(app, sessions=5, steps=12, admin_token=TOKEN)
    report = excinfo.value.report
    assert not report.passed
    assert report.max_live_suspensions > 5
    assert "suspensions peaked" in report.reason


def test_leakcheck_single_session_single_step(tmp_path):
    report = leakcheck(make_app(tmp_path), sessions=1, steps=1, admin_token=TOKEN)
    assert report.passed
    assert report.suspension_series == [1]
