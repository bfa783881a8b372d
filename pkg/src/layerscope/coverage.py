"""File coverage: the share of final files that some analysis accounts for."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .layer_fs import FileEntry, FileHistory, Kind

SCHEMA_VERSION = "1"
COUNTED_KINDS = frozenset({Kind.REGULAR, Kind.SYMLINK, Kind.HARDLINK})
SAMPLE_SIZE = 20


@dataclass(frozen=True)
class LayerCoverage:
    layer: int
    total: int
    analyzed: int

    @property
    def coverage(self) -> float:
        return self.analyzed / self.total if self.total else 0.0


@dataclass(frozen=True)
class CoverageReport:
    total_files: int
    analyzed_files: int
    per_layer: tuple[LayerCoverage, ...] = ()
    unattributed_sample: tuple[str, ...] = ()
    image: str = ""
    flags: tuple[str, ...] = field(default=())

    @property
    def coverage(self) -> float:
        return self.analyzed_files / self.total_files if self.total_files else 0.0

    def summary(self) -> str:
        line = f"coverage {self.coverage:.4f} ({self.analyzed_files}/{self.total_files} files)"
        if self.flags:
            line += f" [{', '.join(self.flags)}]"
        return line

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "image": self.image,
            "total_files": self.total_files,
            "analyzed_files": self.analyzed_files,
            "coverage": round(self.coverage, 6),
            "flags": list(self.flags),
            "per_layer": [
                {"layer": c.layer, "total": c.total, "analyzed": c.analyzed, "coverage": round(c.coverage, 6)}
                for c in self.per_layer
            ],
            "unattributed_sample": list(self.unattributed_sample),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def attributed_paths(packages, extra=(), owned: bool = True) -> set[str]:
    """Paths claimed by *packages*; ``owned=False`` counts metadata files only."""
    paths = set(extra)
    for pkg in packages:
        paths |= pkg.metadata_files
        if owned:
            paths |= pkg.owned_files
    return paths


def last_writer(history: FileHistory, paths) -> dict[str, int]:
    out = {}
    for path in paths:
        events = history.events.get(path)
        if events:
            out[path] = events[-1].layer
    return out


def compute_coverage(squashed: dict[str, FileEntry], packages, extra_analyzed=(), *,
                     history: FileHistory | None = None, owned: bool = True,
                     sample_size: int = SAMPLE_SIZE, image: str = "") -> CoverageReport:
    counted = sorted(p for p, e in squashed.items() if e.kind in COUNTED_KINDS)
    claimed = attributed_paths(packages, extra_analyzed, owned)
    analyzed = [p for p in counted if p in claimed]
    missing = [p for p in counted if p not in claimed]

    per_layer: tuple[LayerCoverage, ...] = ()
    if history is not None:
        writer = last_writer(history, counted)
        totals: dict[int, list[int]] = {}
        for path in counted:
            slot = totals.setdefault(writer.get(path, -1), [0, 0])
            slot[0] += 1
            slot[1] += path in claimed
        per_layer = tuple(LayerCoverage(layer, t, a) for layer, (t, a) in sorted(totals.items()))

    return CoverageReport(
        total_files=len(counted),
        analyzed_files=len(analyzed),
        per_layer=per_layer,
        unattributed_sample=tuple(missing[:sample_size]),
        image=image,
        flags=("no-files",) if not counted else (),
    )
