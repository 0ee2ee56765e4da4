"""Line-delimited JSON manifests of utterances."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from .errors import ValidationError

GENDERS = ("female", "male", "unknown")
PROVENANCE_KINDS = ("original", "vc", "specaug", "chain")


@dataclass(frozen=True)
class Record:
    id: str
    audio_path: str
    speaker_id: str
    gender: str
    language: str
    transcript: str
    duration_s: float
    provenance: dict = field(default_factory=lambda: {"kind": "original"})

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True)

    def with_(self, **changes) -> "Record":
        return replace(self, **changes)


class Manifest:
    """Ordered utterance records; ``root`` resolves relative audio paths."""

    def __init__(self, records: Iterable[Record] = (), root: str | Path | None = None):
        self.records = list(records)
        self.root = Path(root) if root is not None else None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, i) -> Record:
        return self.records[i]

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.records}

    def audio_path(self, rec: Record) -> Path:
        p = Path(rec.audio_path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def filter(self, predicate) -> "Manifest":
        return Manifest([r for r in self.records if predicate(r)], self.root)

    def validate(self, check_audio: bool = False) -> list[str]:
        """Return a list of problems; empty means valid."""
        problems = []
        seen = set()
        for i, r in enumerate(self.records):
            where = f"record {i} ({r.id!r})"
            if r.id in seen:
                problems.append(f"{where}: duplicate id")
            seen.add(r.id)
            if not (r.duration_s > 0):
                problems.append(f"{where}: duration_s must be positive")
            if r.gender not in GENDERS:
                problems.append(f"{where}: gender must be one of {GENDERS}")
            kind = r.provenance.get("kind") if isinstance(r.provenance, dict) else None
            if kind not in PROVENANCE_KINDS:
                problems.append(f"{where}: provenance kind must be one of {PROVENANCE_KINDS}")
            if check_audio and not self.audio_path(r).exists():
                problems.append(f"{where}: audio file {self.audio_path(r)} not found")
        return problems

    def check(self, check_audio: bool = False) -> "Manifest":
        problems = self.validate(check_audio)
        if problems:
            raise ValidationError("invalid manifest:\n  " + "\n  ".join(problems))
        return self

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                    data.setdefault("provenance", {"kind": "original"})
                    data["duration_s"] = float(data["duration_s"])
                    records.append(Record(**data))
                except (json.JSONDecodeError, TypeError, KeyError, ValueError) as exc:
                    raise ValidationError(f"{path}:{lineno}: malformed manifest line: {exc}") from exc
        return cls(records, root=path.parent)
