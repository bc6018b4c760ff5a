"""Discrete-event closed-loop scenarios: tampering, blinding, switchover and recovery."""
from .batch import BatchResult, CellResult, batch_run
from .engine import (
    FALLBACK_ID,
    PRIMARY_ID,
    AttackRecord,
    ScenarioReport,
    SimulationError,
    TimelineEvent,
    measure_latencies,
    run_scenario,
)
from .scenario import Attack, AttackKind, DetectorConfig, Scenario, ScenarioError, Vehicle, stop_sign_scenario
from .store import ARTIFACT_IDS, MUTATIONS, ArtifactStore, StoreError, build_store, tamper

__all__ = [
    "ARTIFACT_IDS",
    "Attack",
    "AttackKind",
    "AttackRecord",
    "ArtifactStore",
    "BatchResult",
    "CellResult",
    "DetectorConfig",
    "FALLBACK_ID",
    "MUTATIONS",
    "PRIMARY_ID",
    "Scenario",
    "ScenarioError",
    "ScenarioReport",
    "SimulationError",
    "StoreError",
    "TimelineEvent",
    "Vehicle",
    "batch_run",
    "build_store",
    "measure_latencies",
    "run_scenario",
    "stop_sign_scenario",
    "tamper",
]
