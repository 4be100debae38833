"""labelloop: iterative bounding-box labeling with gold-gated crowd review.

A simulated detector proposes boxes from whatever labels are settled so
far, a crowd of imperfect reviewers double-checks them behind hidden
quality gates, and the loop repeats until new labels dry up. Every state
change is journaled, so finished runs replay deterministically.
"""

from .config import (
    ConfigError,
    CrowdConfig,
    PathsConfig,
    RunConfig,
    TrainingConfig,
    WorldConfig,
    config_hash,
    load_config,
    reference_config,
)
from .crowdgate import (
    HIT_SIZE,
    CrowdGateError,
    Hit,
    SubmitResult,
    SubTask,
    TaskEngine,
    WorkerAnswer,
    consensus_decision,
    enumerate_consensus,
    trace_consensus,
)
from .detector import (
    Detection,
    DetectorError,
    HiddenWorld,
    SimDetectorConfig,
    SimulatedDetector,
    filter_new,
    publishable,
    training_summary,
)
from .events import Event, EventLog, EventLogError, canonical_json, read_events
from .geometry import BBox, BoxDelta, Dot, GeometryError, decode_delta, encode_delta, iou
from .labelstore import (
    BACKGROUND,
    Annotation,
    AnnotationState,
    LabelStore,
    StoreError,
    export_boxes,
    import_boxes,
    import_dots,
    open_store,
)
from .metrics import LabelQuality, evaluate_map, label_quality, recovered_objects
from .orchestrator import (
    LoopReport,
    OrchestratorError,
    ReplayMismatch,
    RunMode,
    RunResult,
    SimClock,
    has_converged,
    precision_ablation,
    replay_run,
    run_simulation,
)
from .service import create_app
from .workersim import WorkerProfile, answer_hit, spawn_workers
from .worldgen import generate_world, legacy_documents, save_dot_csv, seed_document

__version__ = "0.1.0"

__all__ = [
    "Annotation", "AnnotationState", "BACKGROUND", "BBox", "BoxDelta",
    "ConfigError", "CrowdConfig", "CrowdGateError", "Detection",
    "DetectorError", "Dot", "Event", "EventLog", "EventLogError",
    "GeometryError", "HIT_SIZE", "HiddenWorld", "Hit", "LabelQuality",
    "LabelStore", "LoopReport", "OrchestratorError", "PathsConfig",
    "ReplayMismatch", "RunConfig", "RunMode", "RunResult", "SimClock",
    "SimDetectorConfig", "SimulatedDetector", "StoreError", "SubTask",
    "SubmitResult", "TaskEngine", "TrainingConfig", "WorkerAnswer",
    "WorkerProfile", "WorldConfig", "answer_hit", "canonical_json",
    "config_hash", "consensus_decision", "create_app", "decode_delta",
    "encode_delta", "enumerate_consensus", "evaluate_map", "export_boxes",
    "filter_new", "generate_world", "has_converged", "import_boxes",
    "import_dots", "iou", "label_quality", "legacy_documents", "load_config",
    "open_store", "precision_ablation", "publishable", "read_events",
    "recovered_objects", "reference_config", "replay_run", "run_simulation",
    "save_dot_csv", "seed_document", "spawn_workers", "trace_consensus",
    "training_summary",
]
