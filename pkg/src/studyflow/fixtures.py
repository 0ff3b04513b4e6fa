"""Shipped fixture studies used by tests, the simulator and the demo server."""

from __future__ import annotations

from .model import Dynamic, END, Goto, Step, Study, build_study
from .state import Env
from .widgets import el, text


def two_step_study() -> Study:
    """`example-study`: a greeting step and a terminal thank-you step."""

    def hello(env: Env):
        ui = env.page()
        return ui.finish(el("div",
                            el("p", text("Welcome to the study.")),
                            ui.button("Continue")))

    def done(env: Env):
        return env.page().finish(el("p", text("Thank you for participating.")))

    def about(env: Env):
        return env.page().finish(el("p", text("About this study.")))

    return build_study("example-study", [
        Step("hello", hello, view_handlers={"about": about}),
        Step("done", done),
    ])


def coin_toss_study() -> Study:
    """`example`: intro, a coin-guess sub-study, and a result page.

    The toss is step-local: it is re-tossed whenever the step re-renders
    (retry, resume), so the outcome of the guess is stored durably in the
    participant-global `ok?` variable the moment a button is clicked.
    """

    def intro(env: Env):
        ui = env.page()
        return ui.finish(el("div",
                            el("h1", text("Welcome to the study!")),
                            ui.button("Start")))

    def heads_or_tails(env: Env):
        toss = env.rng.choice(["h", "t"])
        ui = env.page()
        return ui.finish(el("div",
                            ui.button("Heads", lambda: env.var_set("ok?", toss == "h")),
                            text(" or "),
                            ui.button("Tails", lambda: env.var_set("ok?", toss == "t"))))

    def result(env: Env):
        ok = env.var_get("ok?")
        verdict = "You guessed right." if ok else "You guessed wrong."
        return env.page().finish(el("p", text(verdict)))

    choices = build_study("choices",
                          [Step("heads-or-tails", heads_or_tails)],
                          chains=[["heads-or-tails", END]])
    return build_study("example",
                       [Step("intro", intro), choices, Step("result", result)],
                       chains=[["intro", "choices", "result", END]])


def deep_loop_study() -> Study:
    """`depth3`: three nested levels whose innermost pair of steps loops.

    The loop never ends on its own (the runtime transition always goes
    back), which makes this the workload for store-boundedness checks:
    sessions keep stepping without the resume state growing.
    """

    def page(caption: str):
        def handler(env: Env):
            ui = env.page()
            return ui.finish(el("div", el("p", text(caption)), ui.button("Continue")))
        return handler

    inner = Study(
        id="inner",
        children=(Step("ping", page("Ping.")), Step("pong", page("Pong."))),
        transitions={"ping": Goto("pong"), "pong": Dynamic(lambda env: "ping")},
        entry="ping",
    )
    mid = build_study("mid", [Step("brief", page("Getting deeper.")), inner])
    return build_study("depth3", [Step("enter", page("Entering the loop.")), mid])


FIXTURES = {
    "example-study": two_step_study,
    "example": coin_toss_study,
    "depth3": deep_loop_study,
}


def load_fixture(name: str) -> Study:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"no fixture study named {name!r}; "
                       f"known: {', '.join(sorted(FIXTURES))}") from None
