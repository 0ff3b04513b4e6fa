"""Markup construction, action registration and HTML rendering."""

import re

import pytest

from studyflow.engine import Engine, GoneEmbedError
from studyflow.model import CONTINUE, Retry, Step, build_study
from studyflow.state import Env, Parameterization, VarStore
from studyflow.widgets import (
    FormField,
    NoRegistrarError,
    PageBuilder,
    PageIntegrityError,
    el,
    page_text,
    parse_form_payload,
    render_html,
    text,
)


def make_env(**kwargs):
    env = Env(participant="p", path=("s", "x"), params=Parameterization(),
              vars=VarStore(), **kwargs)
    env._page_factory = lambda: PageBuilder(env)
    return env


def url_for(embed):
    return f"/k/{embed}"


# ---------------------------------------------------------------------------
# builder basics
# ---------------------------------------------------------------------------

def test_button_registers_one_action_and_links_it():
    ui = make_env().page()
    node = ui.button("Continue")
    page = ui.finish(el("div", el("p", text("Welcome to the study.")), node))
    assert len(page.actions) == 1
    assert node.embed in page.actions
    html = render_html(page, url_for).decode()
    assert "Welcome to the study." in html
    assert f'href="/k/{node.embed}"' in html
    assert ">Continue</a>" in html


def test_button_action_runs_then_continues():
    ran = []
    env = make_env()
    ui = env.page()
    node = ui.button("Heads", lambda: ran.append(True))
    page = ui.finish(el("div", node))
    result = page.actions[node.embed](env, {})
    assert ran == [True]
    assert result == CONTINUE


def test_two_buttons_get_distinct_embeds():
    ui = make_env().page()
    a = ui.button("Heads")
    b = ui.button("Tails")
    assert a.embed != b.embed
    page = ui.finish(el("div", a, text(" or "), b))
    assert set(page.actions) == {a.embed, b.embed}


def test_clicking_one_button_invalidates_the_whole_page():
    def both(env):
        ui = env.page()
        return ui.finish(el("div", ui.button("Heads"), ui.button("Tails")))

    study = build_study("s", [Step("choose", both), Step("done", terminal_step)])
    engine = Engine({"s": study})
    session, _ = engine.start_session("s", "p")
    first, second = list(session.suspension.page.actions)
    engine.deliver(session, first, {})
    with pytest.raises(GoneEmbedError):
        engine.deliver(session, second, {})


def terminal_step(env):
    return env.page().finish(el("p", text("Done.")))


def test_widgets_refuse_to_register_after_finish():
    ui = make_env().page()
    ui.finish(el("p", text("static")))
    with pytest.raises(NoRegistrarError):
        ui.button("too late")


def test_env_without_active_page_construction_raises():
    env = Env(participant="p", path=("s",), params=Parameterization(), vars=VarStore())
    with pytest.raises(NoRegistrarError):
        env.page()


def test_unreferenced_action_is_caught_at_finish():
    ui = make_env().page()
    ui.button("orphan")  # registered but not placed in the body
    with pytest.raises(PageIntegrityError):
        ui.finish(el("p", text("empty")))


# ---------------------------------------------------------------------------
# forms
# ---------------------------------------------------------------------------

FIELDS = (
    FormField("name", required=True),
    FormField("age", kind="number"),
    FormField("coin", kind="choice", options=("h", "t")),
)


def test_required_field_missing_retries_with_note():
    env = make_env()
    ui = env.page()
    form = ui.form(FIELDS, lambda values: CONTINUE)
    page = ui.finish(el("div", form))
    result = page.actions[form.embed](env, {"age": "3", "coin": "h"})
    assert isinstance(result, Retry)
    assert result.notes_map() == {"name": "this field is required"}
    assert result.values_map()["age"] == "3"


def test_number_field_parses_integer():
    got = {}
    env = make_env()
    ui = env.page()
    form = ui.form(FIELDS, lambda values: got.update(values) or CONTINUE)
    page = ui.finish(el("div", form))
    result = page.actions[form.embed](env, {"name": "x", "age": "42", "coin": "h"})
    assert result == CONTINUE
    assert got["age"] == 42 and isinstance(got["age"], int)
    assert got["name"] == "x"


def test_number_field_falls_back_to_float():
    values, notes = parse_form_payload((FormField("age", kind="number"),), {"age": "4.5"})
    assert values == {"age": 4.5} and notes == {}


def test_choice_field_checked_over_full_payload_alphabet():
    # Exhaustive over the 3-symbol alphabet: two legal options and a stranger.
    field = (FormField("coin", kind="choice", options=("h", "t")),)
    for symbol in ("h", "t", "x"):
        values, notes = parse_form_payload(field, {"coin": symbol})
        if symbol in ("h", "t"):
            assert values == {"coin": symbol} and notes == {}
        else:
            assert "coin" in notes and not values


def test_retry_notes_render_on_the_next_page():
    env = make_env()
    env.form_notes = {"name": "this field is required"}
    env.form_values = {"age": "7"}
    ui = env.page()
    form = ui.form(FIELDS, lambda values: CONTINUE)
    page = ui.finish(el("div", form))
    html = render_html(page, url_for).decode()
    assert "field-error" in html and "this field is required" in html
    assert 'value="7"' in html


def test_form_posts_and_buttons_link():
    env = make_env()
    ui = env.page()
    form = ui.form(FIELDS, lambda values: CONTINUE, submit_label="Send")
    page = ui.finish(el("div", form))
    html = render_html(page, url_for).decode()
    assert f'<form method="post" action="/k/{form.embed}"' in html
    assert "<select" in html and 'type="number"' in html


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def test_rendering_is_deterministic_byte_identical():
    ui = make_env().page()
    page = ui.finish(el("div", el("p", text("hello")), ui.button("Go")))
    assert render_html(page, url_for) == render_html(page, url_for)


def test_text_and_attributes_are_escaped():
    ui = make_env().page()
    page = ui.finish(el("p", text("<b> & 'quotes'"), title='a"b'))
    html = render_html(page, url_for).decode()
    assert "&lt;b&gt; &amp;" in html
    assert 'title="a&quot;b"' in html
    assert "<b>" not in html


def test_page_with_only_text_has_no_links():
    ui = make_env().page()
    page = ui.finish(el("p", text("static words")))
    html = render_html(page, url_for).decode()
    assert "<a " not in html and "<form" not in html


def test_void_elements_do_not_close():
    ui = make_env().page()
    page = ui.finish(el("div", el("br"), el("img", src="x.png")))
    html = render_html(page, url_for).decode()
    assert "<br>" in html and "</br>" not in html


def test_every_rendered_embed_is_registered_and_vice_versa():
    ui = make_env().page()
    a = ui.button("One")
    b = ui.button("Two")
    page = ui.finish(el("div", a, b))
    html = render_html(page, url_for).decode()
    rendered = set(re.findall(r"/k/([A-Za-z0-9_-]+)", html))
    assert rendered == set(page.actions)


def test_page_text_scrapes_visible_copy_only():
    ui = make_env().page()
    page = ui.finish(el("div", el("p", text("Welcome to the study.")),
                        ui.button("Continue")))
    assert page_text(render_html(page, url_for)) == "Welcome to the study."
