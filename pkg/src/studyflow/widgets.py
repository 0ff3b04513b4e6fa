"""Page building vocabulary: markup tree, buttons, forms, HTML rendering.

A step handler gets a fresh :class:`PageBuilder` from ``env.page()`` and
uses it as the explicit action registrar: ``ui.button(...)`` and
``ui.form(...)`` mint one-shot embed tokens and return markup nodes that
link to them. ``ui.finish(body)`` seals the builder into a :class:`Page`.
Rendering is pure; the same page always renders to the same bytes.
"""

from __future__ import annotations

import html
import secrets
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .model import CONTINUE, Retry, StepResult
from .state import Env

VOID_TAGS = frozenset({"br", "hr", "img", "input", "meta", "link"})


class WidgetError(Exception):
    pass


class NoRegistrarError(WidgetError):
    """A widget was used outside page construction."""


class PageIntegrityError(WidgetError):
    """Embeds referenced by the body and registered actions disagree."""


def new_token() -> str:
    """Unguessable URL-safe token (128 bits)."""
    return secrets.token_urlsafe(16)


# ---------------------------------------------------------------------------
# Markup tree
# ---------------------------------------------------------------------------

@dataclass
class Element:
    tag: str
    attrs: dict[str, str]
    children: list

@dataclass
class Text:
    value: str

@dataclass
class EmbedLink:
    embed: str
    label: str

@dataclass(frozen=True)
class FormField:
    name: str
    kind: str = "text"  # text | number | choice
    required: bool = False
    label: str | None = None
    options: tuple[str, ...] = ()

@dataclass
class EmbedForm:
    embed: str
    fields: tuple[FormField, ...]
    submit_label: str = "Submit"
    notes: dict[str, str] = field(default_factory=dict)
    values: dict[str, str] = field(default_factory=dict)


MarkupNode = Any  # Element | Text | EmbedLink | EmbedForm


def el(tag: str, *children: MarkupNode, **attrs: str) -> Element:
    """Element node; ``class_`` maps to the ``class`` attribute."""
    fixed = {("class" if k == "class_" else k): v for k, v in attrs.items()}
    return Element(tag, fixed, list(children))


def text(value: str) -> Text:
    return Text(value)


@dataclass
class Page:
    body: MarkupNode
    actions: dict[str, Callable[[Env, Mapping[str, str]], StepResult]]
    page_id: str


# ---------------------------------------------------------------------------
# Builder / action registrar
# ---------------------------------------------------------------------------

class PageBuilder:
    """Explicit embed registrar for one page under construction."""

    def __init__(self, env: Env | None = None, allow_actions: bool = True):
        self._env = env
        self._allow_actions = allow_actions
        self._sealed = False
        self._actions: dict[str, Callable[[Env, Mapping[str, str]], StepResult]] = {}

    def _register(self, runner) -> str:
        if self._sealed:
            raise NoRegistrarError("page already finished; widgets cannot register actions")
        if not self._allow_actions:
            raise NoRegistrarError("this page is static; actions cannot be registered")
        embed = new_token()
        self._actions[embed] = runner
        return embed

    def button(self, label: str, action: Callable[[], None] | None = None) -> EmbedLink:
        """Anchor widget: clicking runs *action* (if any) then continues."""

        def run(env: Env, payload: Mapping[str, str]) -> StepResult:
            if action is not None:
                action()
            return CONTINUE

        return EmbedLink(self._register(run), label)

    def form(self, fields: Sequence[FormField],
             on_submit: Callable[[dict[str, Any]], StepResult | None],
             submit_label: str = "Submit") -> EmbedForm:
        """Form widget: parses the payload per *fields* before on_submit.

        Violations (missing required input, non-numeric number, unknown
        choice) skip on_submit and retry the step with per-field notes and
        the submitted values kept for re-display.
        """
        fields = tuple(fields)
        names = [f.name for f in fields]
        if len(set(names)) != len(names):
            raise WidgetError("form field names must be unique")

        def run(env: Env, payload: Mapping[str, str]) -> StepResult:
            parsed, notes = parse_form_payload(fields, payload)
            if notes:
                kept = {k: payload.get(k, "") for k in names}
                return Retry(notes=tuple(sorted(notes.items())),
                             values=tuple(sorted(kept.items())))
            result = on_submit(parsed)
            return result if result is not None else CONTINUE

        env = self._env
        notes = dict(env.form_notes) if env is not None else {}
        values = dict(env.form_values) if env is not None else {}
        return EmbedForm(self._register(run), fields, submit_label,
                         notes=notes, values=values)

    def finish(self, body: MarkupNode) -> Page:
        """Seal the builder into a page; embeds in the body must match."""
        if self._sealed:
            raise NoRegistrarError("page already finished")
        self._sealed = True
        page = Page(body=body, actions=dict(self._actions), page_id=new_token())
        used = collect_embeds(body)
        registered = set(page.actions)
        if used != registered:
            missing = used - registered
            orphaned = registered - used
            raise PageIntegrityError(
                f"embeds out of sync: unregistered={sorted(missing)} "
                f"unreferenced={sorted(orphaned)}")
        return page


def parse_form_payload(fields: Iterable[FormField],
                       payload: Mapping[str, str]) -> tuple[dict[str, Any], dict[str, str]]:
    """Parse raw form input; returns (values, notes). Notes mean retry."""
    values: dict[str, Any] = {}
    notes: dict[str, str] = {}
    for f in fields:
        raw = payload.get(f.name, "")
        if raw == "":
            if f.required:
                notes[f.name] = "this field is required"
            else:
                values[f.name] = None
            continue
        if f.kind == "number":
            try:
                values[f.name] = int(raw)
            except ValueError:
                try:
                    values[f.name] = float(raw)
                except ValueError:
                    notes[f.name] = "enter a number"
        elif f.kind == "choice":
            if raw in f.options:
                values[f.name] = raw
            else:
                notes[f.name] = "pick one of the offered options"
        else:
            values[f.name] = raw
    return values, notes


def collect_embeds(body: MarkupNode) -> set[str]:
    found: set[str] = set()
    stack = [body]
    while stack:
        node = stack.pop()
        if isinstance(node, Element):
            stack.extend(node.children)
        elif isinstance(node, (EmbedLink, EmbedForm)):
            found.add(node.embed)
    return found


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_html(page: Page, url_for: Callable[[str], str]) -> bytes:
    """Serialize a page to a complete HTML5 document.

    Pure function of the page: no state access, deterministic bytes.
    """
    parts: list[str] = [
        "<!doctype html>\n<html><head><meta charset=\"utf-8\">"
        "<title>Study</title></head>\n<body>\n"
    ]
    _render_node(page.body, url_for, parts)
    parts.append("\n</body></html>\n")
    return "".join(parts).encode("utf-8")


def _render_node(node: MarkupNode, url_for: Callable[[str], str], out: list[str]) -> None:
    if isinstance(node, Text):
        out.append(html.escape(node.value))
    elif isinstance(node, Element):
        attrs = "".join(
            f' {name}="{html.escape(str(value), quote=True)}"'
            for name, value in node.attrs.items()
        )
        if node.tag in VOID_TAGS:
            out.append(f"<{node.tag}{attrs}>")
            return
        out.append(f"<{node.tag}{attrs}>")
        for child in node.children:
            _render_node(child, url_for, out)
        out.append(f"</{node.tag}>")
    elif isinstance(node, EmbedLink):
        href = html.escape(url_for(node.embed), quote=True)
        out.append(f'<a href="{href}">{html.escape(node.label)}</a>')
    elif isinstance(node, EmbedForm):
        action = html.escape(url_for(node.embed), quote=True)
        out.append(f'<form method="post" action="{action}">')
        for f in node.fields:
            out.append(_render_field(f, node))
        out.append(f'<button type="submit">{html.escape(node.submit_label)}</button></form>')
    elif isinstance(node, (list, tuple)):
        for child in node:
            _render_node(child, url_for, out)
    else:
        raise WidgetError(f"cannot render {type(node).__name__}")


def _render_field(f: FormField, form: EmbedForm) -> str:
    label = html.escape(f.label or f.name)
    name = html.escape(f.name, quote=True)
    sticky = html.escape(form.values.get(f.name, ""), quote=True)
    note = form.notes.get(f.name)
    note_html = f'<span class="field-error">{html.escape(note)}</span>' if note else ""
    if f.kind == "choice":
        options = "".join(
            f'<option value="{html.escape(opt, quote=True)}"'
            f'{" selected" if form.values.get(f.name) == opt else ""}>'
            f"{html.escape(opt)}</option>"
            for opt in f.options
        )
        control = f'<select name="{name}">{options}</select>'
    else:
        kind = "number" if f.kind == "number" else "text"
        control = f'<input type="{kind}" name="{name}" value="{sticky}">'
    return f"<label>{label} {control}{note_html}</label>"


def page_text(page_html: bytes | str) -> str:
    """Visible text of a rendered page, excluding link labels and forms.

    Test/sim helper kept next to the renderer so the two stay in sync.
    """
    from html.parser import HTMLParser

    class _Scraper(HTMLParser):
        def __init__(self):
            super().__init__()
            self.depth_skip = 0
            self.chunks: list[str] = []

        def handle_starttag(self, tag, attrs):
            if tag in ("a", "form", "title"):
                self.depth_skip += 1

        def handle_endtag(self, tag):
            if tag in ("a", "form", "title") and self.depth_skip:
                self.depth_skip -= 1

        def handle_data(self, data):
            if not self.depth_skip and data.strip():
                self.chunks.append(data.strip())

    scraper = _Scraper()
    if isinstance(page_html, bytes):
        page_html = page_html.decode("utf-8")
    scraper.feed(page_html)
    return " ".join(scraper.chunks)
