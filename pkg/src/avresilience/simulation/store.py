"""Simulated perception artifact store and the tamper mutations applied to it."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..integrity import (
    ArtifactManifest,
    ManifestEntry,
    TrustedBaseline,
    Verdict,
    create_baseline,
    validate_once,
)

WEIGHTS_BYTES = 64 * 1024
ARTIFACT_FILES = {
    "model_weights": "model_weights.bin",
    "detector_config": "detector_config.json",
    "class_labels": "class_labels.json",
}
ARTIFACT_IDS = tuple(ARTIFACT_FILES)
MUTATIONS = ("flip_bytes", "bit_flip", "rewrite_threshold", "swap_labels", "truncate", "delete")
DEFAULT_MUTATION = {
    "model_weights": "flip_bytes",
    "detector_config": "rewrite_threshold",
    "class_labels": "swap_labels",
}


class StoreError(ValueError):
    pass


def write_variant(directory: Path, variant: str, seed: int) -> ArtifactManifest:
    """Write one perception variant's artifacts and return a manifest over them."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    (directory / ARTIFACT_FILES["model_weights"]).write_bytes(rng.bytes(WEIGHTS_BYTES))
    config = {"variant": variant, "threshold": 0.5, "window": 10, "input": "depth", "n_classes": 3}
    (directory / ARTIFACT_FILES["detector_config"]).write_text(json.dumps(config, sort_keys=True, indent=2))
    labels = {"0": "background", "1": "obstacle", "2": "stop_sign"}
    (directory / ARTIFACT_FILES["class_labels"]).write_text(json.dumps(labels, sort_keys=True, indent=2))
    return ArtifactManifest(
        tuple(ManifestEntry(aid, directory / name) for aid, name in ARTIFACT_FILES.items())
    )


@dataclass(frozen=True)
class ArtifactStore:
    root: Path
    manifest: ArtifactManifest
    baseline: TrustedBaseline
    fallback_manifest: ArtifactManifest
    fallback_baseline: TrustedBaseline

    def path(self, artifact_id: str) -> Path:
        return self.manifest.entry(artifact_id).path

    def primary_pristine(self) -> bool:
        return validate_once(self.manifest, self.baseline).result is Verdict.MATCH

    def fallback_verified(self) -> bool:
        return validate_once(self.fallback_manifest, self.fallback_baseline).result is Verdict.MATCH

    @classmethod
    def open(cls, root: str | Path) -> "ArtifactStore":
        """Open a store written by :func:`build_store`."""
        root = Path(root)
        needed = [root / "manifest.json", root / "baseline.json", root / "fallback" / "manifest.json",
                  root / "fallback" / "baseline.json"]
        missing = [str(p) for p in needed if not p.is_file()]
        if missing:
            raise StoreError(f"artifact store incomplete, missing: {', '.join(missing)}")
        return cls(
            root,
            ArtifactManifest.load(needed[0]),
            TrustedBaseline.load(needed[1]),
            ArtifactManifest.load(needed[2]),
            TrustedBaseline.load(needed[3]),
        )


def build_store(root: str | Path, seed: int = 0) -> ArtifactStore:
    """Create primary and fallback variants plus their trusted baselines under ``root``."""
    root = Path(root)
    manifest = write_variant(root / "primary", "primary", seed)
    fallback = write_variant(root / "fallback", "fallback", seed + 1)
    relative = ArtifactManifest(
        tuple(ManifestEntry(e.artifact_id, Path("primary") / e.path.name, e.criticality) for e in manifest.entries)
    )
    relative.save(root / "manifest.json")
    ArtifactManifest(
        tuple(ManifestEntry(e.artifact_id, Path(e.path.name), e.criticality) for e in fallback.entries)
    ).save(root / "fallback" / "manifest.json")
    baseline = create_baseline(manifest, root / "backup", root / "baseline.json", created_at=0.0)
    fb_baseline = create_baseline(fallback, root / "fallback" / "backup", root / "fallback" / "baseline.json",
                                  created_at=0.0)
    return ArtifactStore(root, manifest, baseline, fallback, fb_baseline)


def tamper(path: Path, mutation: str, rng: np.random.Generator) -> None:
    """Apply a byte-changing edit to the file at ``path``."""
    if mutation not in MUTATIONS:
        raise StoreError(f"unknown mutation {mutation!r}")
    if mutation == "delete":
        path.unlink()
        return
    data = bytearray(path.read_bytes())
    if mutation == "bit_flip":
        pos = int(rng.integers(len(data) * 8))
        data[pos // 8] ^= 1 << (pos % 8)
    elif mutation == "flip_bytes":
        idx = rng.choice(len(data), size=min(16, len(data)), replace=False)
        for i in idx:
            data[i] ^= int(rng.integers(1, 256))
    elif mutation == "truncate":
        data = data[: len(data) // 2]
    elif mutation == "rewrite_threshold":
        config = json.loads(data)
        old = config.get("threshold", 0.5)
        config["threshold"] = round(float(rng.choice([v for v in (0.05, 0.95, 0.99) if v != old])), 2)
        data = bytearray(json.dumps(config, sort_keys=True, indent=2).encode())
    elif mutation == "swap_labels":
        labels = json.loads(data)
        keys = sorted(labels)
        values = [labels[k] for k in keys]
        labels = dict(zip(keys, values[1:] + values[:1]))
        data = bytearray(json.dumps(labels, sort_keys=True, indent=2).encode())
    path.write_bytes(bytes(data))
