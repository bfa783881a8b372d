"""Package analyzers, each a ``View -> list[Package]`` function."""

from __future__ import annotations

import posixpath

from ..layer_fs import FileEntry
from . import dpkg, golang, python
from .base import Ecosystem, OsRelease, Package, Provenance, View, normalize_name
from .layers import ANALYZERS, LayerAnalysis, LayerReport, analyze_layers, analyze_view
from .os_release import detect_os

GO_CAPTURE_LIMIT = 1 << 20

_NAMES = frozenset({
    "os-release", "debian_version", "status", "installed", "world", "rpmdb.sqlite", "Packages",
    "Packages.db", "METADATA", "RECORD", "PKG-INFO", "installed-files.txt", "top_level.txt",
    "Pipfile", "Pipfile.lock", "package.json", "package-lock.json", "npm-shrinkwrap.json", "yarn.lock",
    "composer.json", "composer.lock", "installed.json", "go.mod", "go.sum", "Gemfile.lock",
})
_SUFFIXES = ("-release", ".egg-info")


def wants_content(entry: FileEntry, data: bytes) -> bytes | None:
    """Capture predicate for extraction: keep only bytes some analyzer reads."""
    path = entry.path
    base = posixpath.basename(path)
    if base in _NAMES or base.endswith(_SUFFIXES) or python.is_requirements_file(base):
        return data
    if path.startswith(dpkg.STATUS_DIR + "/") or (
            path.startswith(dpkg.INFO_DIR + "/") and base.endswith(".list")):
        return data
    if entry.is_executable:
        offset = golang.has_magic(data)
        if offset >= 0:
            return data[offset:offset + GO_CAPTURE_LIMIT]
    return None


__all__ = [
    "ANALYZERS", "Ecosystem", "LayerAnalysis", "LayerReport", "OsRelease", "Package", "Provenance",
    "View", "analyze_layers", "analyze_view", "detect_os", "normalize_name", "wants_content",
]
