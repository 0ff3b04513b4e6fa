"""studyflow: a resumable survey/experiment workflow engine.

Studies are trees of steps and sub-studies. Each step renders a page with
one-shot actions; the engine suspends the walk as an explicit record
(page + position cursor + bindings) until exactly one action is
delivered, then forgets the page and advances. Positions and variables
persist, so sessions resume after expiry or a restart.
"""

from .engine import (
    AlreadyEnrolledError,
    Engine,
    GoneEmbedError,
    MetricsSnapshot,
    Outcome,
    PageReady,
    SessionBusyError,
    StalePositionError,
    StudyComplete,
    Suspension,
)
from .model import (
    CONTINUE,
    Continue,
    Diagnostic,
    Dynamic,
    DynamicStudy,
    END,
    Goto,
    NEXT_SIBLING,
    RETRY,
    Retry,
    Step,
    StepResult,
    Study,
    StudyGraphError,
    build_study,
    describe,
    load_manifest,
    resolve_next,
    validate_study,
)
from .state import (
    Env,
    GLOBAL,
    Parameterization,
    SCOPED,
    StateRecord,
    UNDEFINED,
    VarStore,
    decode_state,
    encode_state,
    prefix_scope,
    restore_state,
    snapshot_state,
    var_get,
    var_set,
    with_binding,
)
from .storage import FileStore, NotFoundError
from .widgets import (
    EmbedForm,
    EmbedLink,
    FormField,
    NoRegistrarError,
    Page,
    PageBuilder,
    el,
    render_html,
    text,
)

__version__ = "0.1.0"
