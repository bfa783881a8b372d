"""Operating system identification from release files."""

from __future__ import annotations

import posixpath
import re

from .base import OsRelease, View

OS_RELEASE_PATHS = ("/etc/os-release", "/usr/lib/os-release")


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip().strip("'\"")
    return out


def _from_release_file(path: str, text: str) -> OsRelease | None:
    fields = parse_key_values(text)
    if "ID" in fields:
        return OsRelease(fields["ID"].lower(), fields.get("VERSION_ID") or None, path)
    if "DISTRIB_ID" in fields:
        return OsRelease(fields["DISTRIB_ID"].lower(), fields.get("DISTRIB_RELEASE") or None, path)
    prefix = posixpath.basename(path)[: -len("-release")]
    if not prefix or prefix in ("os", "lsb", "system"):
        return None
    version = re.search(r"\d+(?:\.\d+)*", text)
    return OsRelease(prefix.lower(), version.group(0) if version else None, path)


def candidate_paths(view: View) -> list[str]:
    """Release files in lookup order."""
    found = [p for p in OS_RELEASE_PATHS if p in view]
    found += [p for p in view.under("/etc")
              if posixpath.dirname(p) == "/etc" and p.endswith("-release") and p not in found]
    if "/etc/debian_version" in view:
        found.append("/etc/debian_version")
    return found


def detect_os(view: View) -> OsRelease | None:
    for path in candidate_paths(view):
        text = view.text(path)
        if text is None:
            continue
        if path == "/etc/debian_version":
            version = text.strip()
            return OsRelease("debian", version or None, path)
        release = _from_release_file(path, text)
        if release is not None:
            return release
    return None
