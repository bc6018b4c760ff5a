"""Layered threat catalog with the modules of this package that cover each layer."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

LAYERS = (
    "Driver Interface and Control System",
    "Control Layer",
    "Decision-Making Layer",
    "Knowledge Processing Layer",
    "Perception Layer",
    "Communication Framework",
    "Cross-Layer Coordinator",
)
MODULES = ("telemetry", "anomaly-ids", "integrity-guard", "resilience-coordinator", "scenario-sim", "cli")


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class ThreatCatalogEntry:
    layer: str
    attack_surface: str
    impact: str
    mitigation: str
    covered_by: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "covered_by", tuple(self.covered_by))
        if self.layer not in LAYERS:
            raise CatalogError(f"unknown layer {self.layer!r}")
        unknown = set(self.covered_by) - set(MODULES)
        if unknown:
            raise CatalogError(f"unknown module(s) in covered_by: {', '.join(sorted(unknown))}")

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "attack_surface": self.attack_surface,
            "impact": self.impact,
            "mitigation": self.mitigation,
            "covered_by": list(self.covered_by),
        }


def _normalize(name: str) -> str:
    name = " ".join(name.lower().split())
    return name[: -len(" layer")] if name.endswith(" layer") else name


def resolve_layer(name: str) -> str:
    """Case-insensitive layer lookup; the trailing word "Layer" is optional."""
    for layer in LAYERS:
        if _normalize(layer) == _normalize(name):
            return layer
    raise CatalogError(f"unknown layer {name!r}; expected one of: {', '.join(LAYERS)}")


@dataclass(frozen=True)
class ThreatCatalog:
    entries: tuple[ThreatCatalogEntry, ...]

    def __post_init__(self) -> None:
        layers = [e.layer for e in self.entries]
        if len(set(layers)) != len(layers):
            raise CatalogError("duplicate layer in catalog")

    def __len__(self) -> int:
        return len(self.entries)

    def filter(self, layer: str | None = None) -> tuple[ThreatCatalogEntry, ...]:
        if layer is None:
            return self.entries
        wanted = resolve_layer(layer)
        return tuple(e for e in self.entries if e.layer == wanted)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ThreatCatalog":
        return cls(tuple(ThreatCatalogEntry(**e) for e in d["entries"]))

    @classmethod
    def from_json(cls, text: str) -> "ThreatCatalog":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ThreatCatalog":
        if path is None:
            text = resources.files("avresilience").joinpath("data/threat_catalog.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_json(text)
