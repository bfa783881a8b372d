from __future__ import annotations

import bisect
import enum
import posixpath
import re
from dataclasses import dataclass, field

from ..layer_fs import FileEntry, Kind


class Ecosystem(str, enum.Enum):
    DEB = "deb"
    APK = "apk"
    RPM = "rpm"
    PYPI = "pypi"
    NPM = "npm"
    GEM = "gem"
    COMPOSER = "composer"
    GOLANG = "golang"
    EXTERNAL = "external"


class Provenance(str, enum.Enum):
    INSTALLED = "installed"
    DECLARED = "declared"
    BINARY = "binary"
    EXTERNAL = "external"


def normalize_name(ecosystem: Ecosystem, name: str) -> str:
    if ecosystem is Ecosystem.PYPI:
        return re.sub(r"[-_.]+", "-", name).lower()
    if ecosystem in (Ecosystem.COMPOSER, Ecosystem.DEB, Ecosystem.APK):
        return name.lower()
    return name


@dataclass
class Package:
    ecosystem: Ecosystem
    name: str
    version: str | None = None
    source_layer: int = 0
    metadata_files: set[str] = field(default_factory=set)
    owned_files: set[str] = field(default_factory=set)
    obscured: bool = False
    provenance: Provenance = Provenance.INSTALLED
    notes: set[str] = field(default_factory=set)
    qualifiers: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            raise ValueError("package name must be non-empty")
        self.ecosystem = Ecosystem(self.ecosystem)

    @property
    def key(self) -> tuple[str, str, str]:
        """Deduplication identity: ecosystem, normalized name, version."""
        return (self.ecosystem.value, normalize_name(self.ecosystem, self.name), self.version or "")

    def absorb(self, other: "Package") -> None:
        self.metadata_files |= other.metadata_files
        self.owned_files |= other.owned_files
        self.notes |= other.notes
        for k, v in other.qualifiers.items():
            self.qualifiers.setdefault(k, v)
        if self.provenance is Provenance.DECLARED and other.provenance is not Provenance.DECLARED:
            self.provenance = other.provenance


class View:
    """Read-only filesystem as it stands after one layer.

    Lookups of file content go through the digest-keyed content store that
    extraction filled in; only captured files are readable.
    """

    def __init__(self, alive: dict[str, FileEntry], contents: dict[str, bytes], layer: int = 0):
        self.alive = alive
        self.contents = contents
        self.layer = layer
        self.warnings: list[str] = []
        self._sorted = sorted(alive)
        self._by_base: dict[str, list[str]] | None = None

    def __contains__(self, path):
        return path in self.alive

    def __len__(self):
        return len(self.alive)

    @property
    def paths(self) -> list[str]:
        return self._sorted

    def entry(self, path: str) -> FileEntry | None:
        return self.alive.get(path)

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def resolve(self, path: str, depth: int = 0) -> str | None:
        """Follow symlinks (in the last component and in parent directories)."""
        if depth > 16:
            return None
        entry = self.alive.get(path)
        if entry is not None:
            if entry.kind is Kind.SYMLINK and entry.link_target:
                target = entry.link_target
                if not target.startswith("/"):
                    target = posixpath.join(posixpath.dirname(path), target)
                return self.resolve(posixpath.normpath(target), depth + 1)
            return path
        head, tail = posixpath.split(path)
        if head in ("", "/") or not tail:
            return None
        parent = self.alive.get(head)
        if parent is not None and parent.kind is Kind.SYMLINK:
            resolved = self.resolve(head, depth + 1)
            if resolved:
                return self.resolve(posixpath.join(resolved, tail), depth + 1)
        elif parent is None:
            resolved = self.resolve(head, depth + 1)
            if resolved and resolved != head:
                return self.resolve(posixpath.join(resolved, tail), depth + 1)
        return None

    def read(self, path: str) -> bytes | None:
        real = self.resolve(path)
        if real is None:
            return None
        entry = self.alive[real]
        if entry.kind not in (Kind.REGULAR, Kind.HARDLINK) or entry.digest is None:
            return None
        return self.contents.get(entry.digest)

    def text(self, path: str) -> str | None:
        data = self.read(path)
        return None if data is None else data.decode("utf-8", "replace")

    def under(self, directory: str) -> list[str]:
        """Every path strictly below *directory*."""
        prefix = directory.rstrip("/") + "/"
        lo = bisect.bisect_left(self._sorted, prefix)
        hi = bisect.bisect_left(self._sorted, prefix[:-1] + "0")  # "0" sorts right after "/"
        return self._sorted[lo:hi]

    def files_under(self, directory: str) -> list[str]:
        return [p for p in self.under(directory) if self.alive[p].kind is not Kind.DIRECTORY]

    def by_basename(self, *names: str) -> list[str]:
        if self._by_base is None:
            index: dict[str, list[str]] = {}
            for p in self._sorted:
                index.setdefault(p.rsplit("/", 1)[-1], []).append(p)
            self._by_base = index
        found = [p for name in names for p in self._by_base.get(name, ())]
        return sorted(found) if len(names) > 1 else found


@dataclass(frozen=True)
class OsRelease:
    id: str
    version_id: str | None
    source_path: str
