"""dpkg status database (``/var/lib/dpkg/status`` and distroless ``status.d``)."""

from __future__ import annotations

import posixpath

from .base import Ecosystem, Package, View

STATUS_PATH = "/var/lib/dpkg/status"
STATUS_DIR = "/var/lib/dpkg/status.d"
INFO_DIR = "/var/lib/dpkg/info"


def parse_stanzas(content: str, warnings: list | None = None) -> list[dict[str, str]]:
    """Split RFC-822 style text into field dicts; malformed stanzas are dropped."""
    stanzas = []
    current: dict[str, str] = {}
    last_key = None
    broken = False

    def flush():
        nonlocal current, last_key, broken
        if current or broken:
            if broken or "Package" not in current:
                if warnings is not None:
                    warnings.append(f"malformed dpkg stanza skipped near {current.get('Package', '?')!r}")
            else:
                stanzas.append(current)
        current, last_key, broken = {}, None, False

    for line in content.splitlines():
        if not line.strip():
            flush()
            continue
        if line[0] in " \t":
            if last_key is None:
                broken = True
            else:
                current[last_key] += "\n" + line[1:]
            continue
        key, sep, value = line.partition(":")
        if not sep or not key or " " in key:
            broken = True
            continue
        last_key = key
        current[key] = value.strip()
    flush()
    return stanzas


def is_installed(status: str) -> bool:
    words = status.split()
    return len(words) == 3 and words[2] == "installed"


def parse_dpkg_status(content: str, view: View | None = None, source: str = STATUS_PATH,
                      warnings: list | None = None) -> list[Package]:
    packages = []
    for stanza in parse_stanzas(content, warnings):
        # status.d entries (distroless) carry no Status field; they are installed by construction
        if "Status" in stanza and not is_installed(stanza["Status"]):
            continue
        pkg = Package(
            Ecosystem.DEB,
            stanza["Package"],
            stanza.get("Version") or None,
            metadata_files={source},
        )
        if stanza.get("Architecture"):
            pkg.qualifiers["arch"] = stanza["Architecture"]
        if not pkg.version:
            pkg.notes.add("version-missing")
        if view is not None:
            _attach_files(pkg, view)
        packages.append(pkg)
    return packages


def _attach_files(pkg: Package, view: View) -> None:
    arch = pkg.qualifiers.get("arch")
    candidates = [f"{INFO_DIR}/{pkg.name}.list"]
    if arch:
        candidates.insert(0, f"{INFO_DIR}/{pkg.name}:{arch}.list")
    for list_path in candidates:
        text = view.text(list_path)
        if text is None:
            continue
        pkg.metadata_files.add(list_path)
        for line in text.splitlines():
            path = posixpath.normpath(line.strip()) if line.strip() else ""
            if path in ("", "/", "/."):
                continue
            real = path if path in view else view.resolve(path)
            entry = view.entry(real) if real else None
            if entry is not None and entry.kind.value != "directory":
                pkg.owned_files.add(real)
        break


def serialize_dpkg_status(packages) -> str:
    chunks = []
    for pkg in packages:
        lines = [f"Package: {pkg.name}", "Status: install ok installed"]
        if pkg.qualifiers.get("arch"):
            lines.append(f"Architecture: {pkg.qualifiers['arch']}")
        if pkg.version:
            lines.append(f"Version: {pkg.version}")
        chunks.append("\n".join(lines) + "\n")
    return "\n".join(chunks)


def analyze(view: View) -> list[Package]:
    warnings: list[str] = []
    packages = []
    text = view.text(STATUS_PATH)
    if text is not None:
        packages += parse_dpkg_status(text, view, STATUS_PATH, warnings)
    for path in view.under(STATUS_DIR):
        if "." in posixpath.basename(path):
            continue
        text = view.text(path)
        if text is not None:
            packages += parse_dpkg_status(text, view, path, warnings)
    for w in warnings:
        view.warn(w)
    return packages
