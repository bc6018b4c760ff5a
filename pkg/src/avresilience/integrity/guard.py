"""SHA-256 manifest, trusted baseline, one-shot validation and restore from backup."""
from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

ALGORITHM = "sha256"
CHUNK = 1 << 16


class IntegrityError(RuntimeError):
    pass


class RestoreRefused(IntegrityError):
    """A backup was missing or did not match its recorded digest."""

    def __init__(self, message: str, escalation: dict):
        super().__init__(message)
        self.escalation = escalation


class Criticality(str, enum.Enum):
    SAFETY_CRITICAL = "safety_critical"
    STANDARD = "standard"


def digest_artifact(content: bytes) -> bytes:
    return hashlib.sha256(content).digest()


def digest_file(path: str | Path) -> bytes:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(CHUNK), b""):
            h.update(block)
    return h.digest()


@dataclass(frozen=True)
class ManifestEntry:
    artifact_id: str
    path: Path
    criticality: Criticality = Criticality.SAFETY_CRITICAL


@dataclass(frozen=True)
class ArtifactManifest:
    entries: tuple[ManifestEntry, ...]
    algorithm: str = ALGORITHM

    def __post_init__(self) -> None:
        ids = [e.artifact_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise IntegrityError("artifact_ids must be unique")
        for e in self.entries:
            if not e.artifact_id or not str(e.path):
                raise IntegrityError("manifest entries need an artifact_id and a path")
        if self.algorithm != ALGORITHM:
            raise IntegrityError(f"unsupported digest algorithm {self.algorithm!r}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.artifact_id for e in self.entries)

    def entry(self, artifact_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.artifact_id == artifact_id:
                return e
        raise KeyError(artifact_id)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "entries": [
                {"artifact_id": e.artifact_id, "path": str(e.path), "criticality": e.criticality.value}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | None = None) -> "ArtifactManifest":
        entries = []
        for raw in d["entries"]:
            p = Path(raw["path"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            entries.append(
                ManifestEntry(raw["artifact_id"], p, Criticality(raw.get("criticality", "safety_critical")))
            )
        return cls(tuple(entries), d.get("algorithm", ALGORITHM))

    @classmethod
    def load(cls, path: str | Path) -> "ArtifactManifest":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class BaselineRecord:
    digest: bytes
    path: Path
    backup: Path
    size: int


def _canonical(records: Mapping[str, BaselineRecord]) -> str:
    body = {
        aid: {"digest": r.digest.hex(), "path": str(r.path), "backup": str(r.backup), "size": r.size}
        for aid, r in sorted(records.items())
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class TrustedBaseline:
    records: Mapping[str, BaselineRecord]
    created_at: float
    algorithm: str = ALGORITHM

    def __contains__(self, artifact_id: str) -> bool:
        return artifact_id in self.records

    def digest(self, artifact_id: str) -> bytes:
        return self.records[artifact_id].digest

    def seal(self) -> str:
        """Digest over the canonical record set; stored alongside it and checked on load."""
        return hashlib.sha256(_canonical(self.records).encode()).hexdigest()

    def digest_set(self) -> dict[str, str]:
        return {aid: r.digest.hex() for aid, r in sorted(self.records.items())}

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "created_at": self.created_at,
            "artifacts": json.loads(_canonical(self.records)),
            "seal": self.seal(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrustedBaseline":
        records = {}
        for aid, r in d["artifacts"].items():
            digest = bytes.fromhex(r["digest"])
            if len(digest) != 32:
                raise IntegrityError(f"baseline digest for {aid} is not 32 bytes")
            records[aid] = BaselineRecord(digest, Path(r["path"]), Path(r["backup"]), int(r["size"]))
        baseline = cls(records, float(d["created_at"]), d.get("algorithm", ALGORITHM))
        if d.get("seal") != baseline.seal():
            raise IntegrityError("baseline seal does not match its records")
        return baseline

    @classmethod
    def load(cls, path: str | Path) -> "TrustedBaseline":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _backup_name(artifact_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", artifact_id) + ".bak"


def create_baseline(
    manifest: ArtifactManifest,
    backup_dir: str | Path,
    baseline_path: str | Path | None = None,
    created_at: float | None = None,
) -> TrustedBaseline:
    """Digest every artifact, copy it byte-exact into ``backup_dir`` and verify the copy.

    The baseline is written to ``baseline_path`` (default ``backup_dir/baseline.json``).
    """
    backup_dir = Path(backup_dir)
    backup_dir.mkdir(parents=True, exist_ok=True)
    records = {}
    for e in manifest.entries:
        try:
            content = Path(e.path).read_bytes()
        except OSError as exc:
            raise IntegrityError(f"artifact {e.artifact_id!r} unreadable: {exc}") from exc
        digest = digest_artifact(content)
        backup = backup_dir / _backup_name(e.artifact_id)
        backup.write_bytes(content)
        if digest_file(backup) != digest:
            raise IntegrityError(f"backup copy of {e.artifact_id!r} failed verification")
        records[e.artifact_id] = BaselineRecord(digest, Path(e.path), backup, len(content))
    baseline = TrustedBaseline(records, time.time() if created_at is None else created_at)
    baseline.save(baseline_path or backup_dir / "baseline.json")
    return baseline


class Verdict(str, enum.Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"


@dataclass(frozen=True)
class ValidationEvent:
    time: float
    mismatched: tuple[str, ...]
    digests_observed: Mapping[str, str | None] = field(default_factory=dict)
    trigger: str = "manual"

    @property
    def result(self) -> Verdict:
        return Verdict.MISMATCH if self.mismatched else Verdict.MATCH

    @property
    def checked(self) -> tuple[str, ...]:
        return tuple(self.digests_observed)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "result": self.result.value,
            "mismatched": list(self.mismatched),
            "digests_observed": dict(self.digests_observed),
            "trigger": self.trigger,
        }

    def to_json_line(self) -> str:
        rest = json.dumps({k: v for k, v in self.to_dict().items() if k != "time"}, sort_keys=True)
        return '{"time": %.6f, %s' % (self.time, rest[1:])


def validate_once(
    manifest: ArtifactManifest,
    baseline: TrustedBaseline,
    at: float = 0.0,
    artifact_ids: Iterable[str] | None = None,
    trigger: str = "manual",
) -> ValidationEvent:
    """Recompute digests and compare with the baseline; unreadable artifacts count as Mismatch."""
    ids = manifest.ids if artifact_ids is None else tuple(artifact_ids)
    missing = [aid for aid in ids if aid not in baseline]
    if missing:
        raise IntegrityError(f"baseline does not cover: {', '.join(missing)}")
    observed: dict[str, str | None] = {}
    mismatched = []
    for aid in ids:
        try:
            current = digest_file(manifest.entry(aid).path)
        except OSError:
            current = None
        observed[aid] = None if current is None else current.hex()
        if current != baseline.digest(aid):
            mismatched.append(aid)
    return ValidationEvent(float(at), tuple(mismatched), observed, trigger)


@dataclass(frozen=True)
class RestoreOutcome:
    restored: tuple[str, ...]
    duration: float
    bytes_written: int


def restore(baseline: TrustedBaseline, artifact_ids: Iterable[str], clock=None) -> RestoreOutcome:
    """Overwrite the named artifacts with their verified backups, in place.

    Each backup is re-hashed first; a missing or corrupt backup refuses the whole
    restore (nothing is written) and raises :class:`RestoreRefused`.
    """
    ids = tuple(artifact_ids)
    start = clock.now() if clock is not None else time.perf_counter()
    payloads = {}
    for aid in ids:
        if aid not in baseline:
            raise RestoreRefused(f"{aid!r} not in baseline", {"artifact_ids": list(ids), "reason": "unknown artifact"})
        rec = baseline.records[aid]
        try:
            content = rec.backup.read_bytes()
        except OSError:
            raise RestoreRefused(
                f"backup for {aid!r} missing", {"artifact_ids": [aid], "reason": "backup missing"}
            ) from None
        if digest_artifact(content) != rec.digest:
            raise RestoreRefused(
                f"backup for {aid!r} does not match baseline digest",
                {"artifact_ids": [aid], "reason": "backup corrupt"},
            )
        payloads[aid] = content
    written = 0
    for aid, content in payloads.items():
        target = baseline.records[aid].path
        target.parent.mkdir(parents=True, exist_ok=True)
        mode = target.stat().st_mode & 0o7777 if target.exists() else 0o644
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".restore-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(content)
        os.chmod(tmp, mode)
        os.replace(tmp, target)
        written += len(content)
    if clock is not None:
        clock.charge_io(written)
        duration = clock.now() - start
    else:
        duration = time.perf_counter() - start
    return RestoreOutcome(ids, duration, written)
