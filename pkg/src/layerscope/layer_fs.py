"""Per-layer change sets, the cross-layer file history, and the squashed view."""

from __future__ import annotations

import enum
import hashlib
import io
import posixpath
import tarfile
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

WHITEOUT_PREFIX = ".wh."
OPAQUE_MARKER = ".wh..wh..opq"


class LayerError(Exception):
    pass


class MalformedTarError(LayerError):
    pass


class PathEscapeError(LayerError):
    """An archive member resolves outside the image root."""


class Kind(str, enum.Enum):
    REGULAR = "regular"
    DIRECTORY = "directory"
    SYMLINK = "symlink"
    HARDLINK = "hardlink"
    WHITEOUT = "whiteout"
    OPAQUE = "opaque-whiteout"
    OTHER = "other"


class Action(str, enum.Enum):
    ADDED = "Added"
    MODIFIED = "Modified"
    DELETED = "Deleted"


@dataclass(frozen=True)
class FileEntry:
    path: str
    kind: Kind
    size: int = 0
    mode: int = 0o644
    link_target: str | None = None
    digest: str | None = None

    @property
    def whiteout_target(self) -> str | None:
        """Path hidden by a whiteout; the directory for an opaque marker."""
        if self.kind is Kind.WHITEOUT:
            head, base = posixpath.split(self.path)
            return posixpath.join(head, base[len(WHITEOUT_PREFIX):])
        if self.kind is Kind.OPAQUE:
            return posixpath.dirname(self.path)
        return None

    @property
    def is_executable(self) -> bool:
        return self.kind is Kind.REGULAR and bool(self.mode & 0o111)


@dataclass
class LayerDelta:
    layer: int
    entries: list[FileEntry]
    contents: dict[str, bytes] = field(default_factory=dict)  # digest -> bytes, captured files only


def normalize_path(name: str) -> str:
    """Absolute, normalized form of an archive member name."""
    parts = []
    for part in name.replace("\\", "/").split("/"):
        if part in ("", "."):
            continue
        if part == "..":
            if not parts:
                raise PathEscapeError(f"member {name!r} escapes the image root")
            parts.pop()
            continue
        parts.append(part)
    return "/" + "/".join(parts)


def _classify(member: tarfile.TarInfo, path: str) -> Kind:
    base = posixpath.basename(path)
    if base == OPAQUE_MARKER:
        return Kind.OPAQUE
    if base.startswith(WHITEOUT_PREFIX):
        return Kind.WHITEOUT
    if member.isreg():
        return Kind.REGULAR
    if member.isdir():
        return Kind.DIRECTORY
    if member.issym():
        return Kind.SYMLINK
    if member.islnk():
        return Kind.HARDLINK
    return Kind.OTHER


CaptureFn = Callable[[FileEntry, bytes], "bytes | None"]


def extract_entries(layer: bytes, index: int, capture: CaptureFn | None = None) -> LayerDelta:
    """Classify every member of a layer tar.

    *capture* sees each regular file with its content and returns the bytes
    to keep (or ``None``); kept content is stored by digest on the delta.
    """
    entries: list[FileEntry] = []
    contents: dict[str, bytes] = {}
    digests: dict[str, str] = {}
    try:
        with tarfile.open(fileobj=io.BytesIO(layer), mode="r:") as tar:
            for member in tar:
                if member.name in ("", ".", "./"):
                    continue
                path = normalize_path(member.name)
                if path == "/":
                    continue
                kind = _classify(member, path)
                digest = target = None
                if kind is Kind.REGULAR:
                    data = tar.extractfile(member).read()
                    digest = hashlib.sha256(data).hexdigest()
                    digests[path] = digest
                elif kind is Kind.SYMLINK:
                    target = member.linkname
                elif kind is Kind.HARDLINK:
                    target = normalize_path(member.linkname)
                    digest = digests.get(target)
                entry = FileEntry(path, kind, member.size, member.mode & 0o7777, target, digest)
                if kind is Kind.REGULAR and capture is not None:
                    kept = capture(entry, data)
                    if kept is not None:
                        contents[digest] = kept
                entries.append(entry)
    except tarfile.TarError as exc:
        raise MalformedTarError(f"layer {index}: {exc}") from exc
    return LayerDelta(index, entries, contents)


@dataclass(frozen=True)
class Event:
    layer: int
    action: Action
    entry: FileEntry
    previous_digest: str | None = None

    @property
    def content_identical(self) -> bool:
        return (
            self.action is Action.MODIFIED
            and self.entry.digest is not None
            and self.entry.digest == self.previous_digest
        )


@dataclass
class FileHistory:
    """Per-path event lists plus the same events grouped by layer."""

    events: dict[str, list[Event]] = field(default_factory=dict)
    by_layer: list[list[tuple[str, Event]]] = field(default_factory=list)
    contents: dict[str, bytes] = field(default_factory=dict)
    noop_whiteouts: list[tuple[int, str]] = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return len(self.by_layer)

    def record(self, path: str, event: Event) -> None:
        self.events.setdefault(path, []).append(event)
        self.by_layer[event.layer].append((path, event))

    def paths(self) -> Iterable[str]:
        return self.events.keys()

    def last_entry(self, path: str) -> FileEntry | None:
        for ev in reversed(self.events.get(path, ())):
            if ev.action is not Action.DELETED:
                return ev.entry
        return None

    def iter_views(self) -> Iterator[tuple[int, dict[str, FileEntry]]]:
        """Yield ``(layer, alive)`` for the cumulative filesystem after each layer.

        The same dict is mutated between yields; copy it to keep a snapshot.
        """
        alive: dict[str, FileEntry] = {}
        for layer, items in enumerate(self.by_layer):
            for path, ev in items:
                if ev.action is Action.DELETED:
                    alive.pop(path, None)
                else:
                    alive[path] = ev.entry
            yield layer, alive


def _descendants(alive: dict[str, FileEntry], directory: str) -> list[str]:
    prefix = directory.rstrip("/") + "/"
    return sorted(p for p in alive if p.startswith(prefix))


def build_history(deltas: Iterable[LayerDelta]) -> FileHistory:
    """Replay ordered layer deltas into a per-path event history.

    Within a layer, whiteouts apply to the lower layers before the layer's own
    entries are added, matching how runtimes unpack a layer.
    """
    history = FileHistory()
    alive: dict[str, FileEntry] = {}

    def delete(layer, path):
        ev = Event(layer, Action.DELETED, alive.pop(path))
        history.record(path, ev)

    for expected, delta in enumerate(deltas):
        if delta.layer != expected:
            raise ValueError(f"deltas out of order: got layer {delta.layer}, expected {expected}")
        history.by_layer.append([])
        history.contents.update(delta.contents)
        layer = delta.layer
        for entry in delta.entries:
            if entry.kind is Kind.WHITEOUT:
                target = entry.whiteout_target
                if target not in alive:
                    history.noop_whiteouts.append((layer, entry.path))
                    continue
                for child in _descendants(alive, target):
                    delete(layer, child)
                delete(layer, target)
            elif entry.kind is Kind.OPAQUE:
                for child in _descendants(alive, entry.whiteout_target):
                    delete(layer, child)
        for entry in delta.entries:
            if entry.kind in (Kind.WHITEOUT, Kind.OPAQUE):
                continue
            path = entry.path
            if entry.kind is Kind.HARDLINK and entry.digest is None and entry.link_target in alive:
                entry = FileEntry(path, entry.kind, entry.size, entry.mode, entry.link_target,
                                  alive[entry.link_target].digest)
            previous = alive.get(path)
            if previous is None:
                alive[path] = entry
                history.record(path, Event(layer, Action.ADDED, entry))
                continue
            if previous.kind is Kind.DIRECTORY and entry.kind is not Kind.DIRECTORY:
                # a non-directory hides everything the lower directory held
                for child in _descendants(alive, path):
                    delete(layer, child)
            alive[path] = entry
            if entry.kind is Kind.DIRECTORY and previous.kind is Kind.DIRECTORY:
                continue
            history.record(path, Event(layer, Action.MODIFIED, entry, previous.digest))
    return history


def squash(history: FileHistory) -> dict[str, FileEntry]:
    """Final filesystem: every path whose last event is not a deletion."""
    view = {}
    for path, events in history.events.items():
        last = events[-1]
        if last.action is not Action.DELETED:
            view[path] = last.entry
    return dict(sorted(view.items()))

