"""Hash-based integrity validation of perception artifacts."""
from .guard import (
    ALGORITHM,
    ArtifactManifest,
    BaselineRecord,
    Criticality,
    IntegrityError,
    ManifestEntry,
    RestoreOutcome,
    RestoreRefused,
    TrustedBaseline,
    ValidationEvent,
    Verdict,
    create_baseline,
    digest_artifact,
    digest_file,
    restore,
    validate_once,
)
from .scheduler import (
    TRIGGERS,
    IntegrityScheduler,
    ScheduleMode,
    SchedulePolicy,
    SchedulerError,
    ValidationWorker,
    run_scheduler,
)

__all__ = [
    "ALGORITHM",
    "ArtifactManifest",
    "BaselineRecord",
    "Criticality",
    "IntegrityError",
    "IntegrityScheduler",
    "ManifestEntry",
    "RestoreOutcome",
    "RestoreRefused",
    "ScheduleMode",
    "SchedulePolicy",
    "SchedulerError",
    "TRIGGERS",
    "TrustedBaseline",
    "ValidationEvent",
    "ValidationWorker",
    "Verdict",
    "create_baseline",
    "digest_artifact",
    "digest_file",
    "restore",
    "run_scheduler",
    "validate_once",
]
