"""Python distributions: ``*.dist-info``/``*.egg-info`` anywhere, plus requirement files."""

from __future__ import annotations

import csv
import io
import json
import posixpath
import re
from email.parser import HeaderParser

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .base import Ecosystem, Package, Provenance, View

_DIST_DIR = re.compile(r"^(?P<name>.+?)-(?P<version>\d[^-]*)(?:-py\d.*)?\.(?:dist|egg)-info$")
_REQ_NAME = re.compile(r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)\s*(\[[^\]]*\])?\s*(.*)$")
_REQUIREMENTS = re.compile(r"^requirements.*\.txt$")
SITE_DIRS = ("site-packages", "dist-packages")


def is_requirements_file(basename: str) -> bool:
    return bool(_REQUIREMENTS.match(basename))


def inside_site_dir(path: str) -> bool:
    return any(f"/{d}/" in path for d in SITE_DIRS)


def _metadata_dirs(view: View):
    """Yield every ``.dist-info``/``.egg-info`` path, at any depth."""
    seen = set()
    for path in view.paths:
        if ".dist-info" not in path and ".egg-info" not in path:
            continue
        parts = path.split("/")
        for i, part in enumerate(parts):
            if part.endswith((".dist-info", ".egg-info")):
                meta = "/".join(parts[: i + 1])
                if meta not in seen:
                    seen.add(meta)
                    yield meta
                break


def _name_version_from_dir(meta_dir: str):
    m = _DIST_DIR.match(posixpath.basename(meta_dir))
    if not m:
        return None, None
    return m.group("name"), m.group("version")


def parse_metadata(text: str) -> tuple[str | None, str | None]:
    headers = HeaderParser().parsestr(text, headersonly=True)
    return headers.get("Name"), headers.get("Version")


def _owned_from_record(view, meta_dir, text):
    site = posixpath.dirname(meta_dir)
    owned = set()
    for row in csv.reader(io.StringIO(text)):
        if not row or not row[0]:
            continue
        path = posixpath.normpath(posixpath.join(site, row[0]))
        real = path if path in view else view.resolve(path)
        if real:
            owned.add(real)
    return owned


def _owned_from_top_level(view, meta_dir):
    site = posixpath.dirname(meta_dir)
    text = view.text(f"{meta_dir}/top_level.txt") or ""
    owned = set(view.files_under(meta_dir))
    for module in text.split():
        owned.update(view.files_under(f"{site}/{module}"))
        if f"{site}/{module}.py" in view:
            owned.add(f"{site}/{module}.py")
    return owned


def _distribution(view: View, meta_dir: str) -> Package | None:
    entry = view.entry(meta_dir)
    egg = meta_dir.endswith(".egg-info")
    metadata_files = set()
    notes = set()
    if entry is not None and entry.kind.value != "directory":
        meta_path = meta_dir  # single-file egg-info
    else:
        meta_path = f"{meta_dir}/PKG-INFO" if egg else f"{meta_dir}/METADATA"
    text = view.text(meta_path)
    name = version = None
    if text is not None:
        metadata_files.add(meta_path)
        name, version = parse_metadata(text)
    if not name or not version:
        dir_name, dir_version = _name_version_from_dir(meta_dir)
        name = name or dir_name
        version = version or dir_version
        notes.add("inferred-from-path")
        metadata_files.add(meta_dir)
    if not name:
        view.warn(f"{meta_dir}: cannot determine distribution name")
        return None
    pkg = Package(Ecosystem.PYPI, name, version, metadata_files=metadata_files, notes=notes)
    record = view.text(f"{meta_dir}/RECORD")
    if record is not None:
        pkg.metadata_files.add(f"{meta_dir}/RECORD")
        pkg.owned_files = _owned_from_record(view, meta_dir, record)
    elif egg and view.text(f"{meta_dir}/installed-files.txt") is not None:
        listing = view.text(f"{meta_dir}/installed-files.txt")
        pkg.metadata_files.add(f"{meta_dir}/installed-files.txt")
        for line in listing.splitlines():
            if line.strip():
                path = posixpath.normpath(posixpath.join(meta_dir, line.strip()))
                if path in view:
                    pkg.owned_files.add(path)
    else:
        pkg.owned_files = _owned_from_top_level(view, meta_dir)
    pkg.owned_files |= {p for p in pkg.metadata_files if p in view and view.entry(p).kind.value != "directory"}
    return pkg


def _path_inferred(view: View, owned: set[str]) -> list[Package]:
    """Top-level import packages in site dirs that no distribution claims."""
    packages = []
    for site in view.paths:
        if posixpath.basename(site) not in SITE_DIRS or view.entry(site).kind.value != "directory":
            continue
        for init in view.files_under(site):
            rel = init[len(site) + 1:]
            if rel.count("/") != 1 or not rel.endswith("/__init__.py"):
                continue
            module = rel.split("/")[0]
            if module == "__pycache__" or module.endswith((".dist-info", ".egg-info")):
                continue
            files = view.files_under(f"{site}/{module}")
            if any(f in owned for f in files):
                continue
            packages.append(Package(Ecosystem.PYPI, module, None, metadata_files={init},
                                    owned_files=set(files), notes={"inferred-from-path"}))
    return packages


def parse_requirements(text: str, source: str) -> list[Package]:
    packages = []
    for raw in text.splitlines():
        line = raw.split(" #", 1)[0].strip()
        if not line or line.startswith(("#", "-", "git+", "http:", "https:", "file:", ".", "/")):
            continue
        line = line.split(";", 1)[0].strip()
        m = _REQ_NAME.match(line)
        if not m:
            continue
        name, spec = m.group(1), m.group(3).strip()
        version = None
        pinned = re.match(r"^===?\s*([^\s,]+)$", spec)
        if pinned and "*" not in pinned.group(1):
            version = pinned.group(1)
        packages.append(Package(Ecosystem.PYPI, name, version, metadata_files={source},
                                provenance=Provenance.DECLARED))
    return packages


def parse_pipfile(text: str, source: str) -> list[Package]:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        return []
    packages = []
    for section in ("packages", "dev-packages"):
        entries = data.get(section)
        for name, spec in (entries.items() if isinstance(entries, dict) else ()):
            if not name:
                continue
            if isinstance(spec, dict):
                spec = spec.get("version", "*")
            version = None
            if isinstance(spec, str) and spec.startswith("=="):
                version = spec[2:].strip()
            packages.append(Package(Ecosystem.PYPI, name, version, metadata_files={source},
                                    provenance=Provenance.DECLARED))
    return packages


def parse_pipfile_lock(text: str, source: str) -> list[Package]:
    try:
        data = json.loads(text)
    except ValueError:
        return []
    if not isinstance(data, dict):
        return []
    packages = []
    for section in ("default", "develop"):
        entries = data.get(section)
        for name, spec in (entries.items() if isinstance(entries, dict) else ()):
            if not name:
                continue
            version = spec.get("version") if isinstance(spec, dict) else None
            version = version if isinstance(version, str) else ""
            packages.append(Package(Ecosystem.PYPI, name, version.lstrip("=") or None,
                                    metadata_files={source}, provenance=Provenance.DECLARED))
    return packages


def analyze(view: View) -> list[Package]:
    packages = []
    owned: set[str] = set()
    for meta_dir in _metadata_dirs(view):
        pkg = _distribution(view, meta_dir)
        if pkg is not None:
            packages.append(pkg)
            owned |= pkg.owned_files
    packages += _path_inferred(view, owned)

    for path in view.paths:
        base = path.rsplit("/", 1)[-1]
        if inside_site_dir(path) or "/node_modules/" in path:
            continue
        if is_requirements_file(base):
            parser = parse_requirements
        elif base == "Pipfile":
            parser = parse_pipfile
        elif base == "Pipfile.lock":
            parser = parse_pipfile_lock
        else:
            continue
        text = view.text(path)
        if text is not None:
            packages += parser(text, path)
    return packages
