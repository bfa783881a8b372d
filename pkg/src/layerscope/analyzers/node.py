"""Node.js: installed ``node_modules`` packages and project manifests/lockfiles."""

from __future__ import annotations

import json
import posixpath
import re

from .base import Ecosystem, Package, Provenance, View

LOCKFILES = ("package-lock.json", "npm-shrinkwrap.json", "yarn.lock")
_EXACT = re.compile(r"^v?\d+\.\d+\.\d+(?:[-+][\w.+-]+)?$")


def _package_dir_name(pkg_dir: str) -> str | None:
    """``@scope/name`` or ``name`` if *pkg_dir* sits directly in a node_modules dir."""
    parent, base = posixpath.split(pkg_dir)
    if posixpath.basename(parent) == "node_modules":
        return None if base.startswith("@") else base
    grand, scope = posixpath.split(parent)
    if scope.startswith("@") and posixpath.basename(grand) == "node_modules":
        return f"{scope}/{base}"
    return None


def _load_json(view, path):
    text = view.text(path)
    if text is None:
        return None, False
    try:
        data = json.loads(text)
    except ValueError:
        return None, True
    return (data if isinstance(data, dict) else None), not isinstance(data, dict)


def installed_packages(view: View) -> list[Package]:
    packages = []
    for manifest in view.by_basename("package.json"):
        if "/node_modules/" not in manifest:
            continue
        pkg_dir = posixpath.dirname(manifest)
        dir_name = _package_dir_name(pkg_dir)
        if dir_name is None:
            continue
        data, malformed = _load_json(view, manifest)
        notes = set()
        if data is None:
            notes.add("malformed-json" if malformed else "unreadable-manifest")
            data = {}
        name = data.get("name") if isinstance(data.get("name"), str) and data.get("name") else dir_name
        version = data.get("version") if isinstance(data.get("version"), str) else None
        nested = pkg_dir + "/node_modules/"
        owned = {p for p in view.files_under(pkg_dir) if not p.startswith(nested)}
        packages.append(Package(Ecosystem.NPM, name, version or None, metadata_files={manifest},
                                owned_files=owned, notes=notes))
    return packages


def parse_package_lock(text: str, source: str) -> list[Package]:
    try:
        data = json.loads(text)
    except ValueError:
        return []
    if not isinstance(data, dict):
        return []
    packages = []
    if isinstance(data.get("packages"), dict):
        for key, entry in data["packages"].items():
            if not key or not isinstance(entry, dict) or entry.get("link"):
                continue
            name = entry.get("name") or key.rsplit("node_modules/", 1)[-1]
            if isinstance(name, str) and name and isinstance(entry.get("version"), str) and entry["version"]:
                packages.append(Package(Ecosystem.NPM, name, entry["version"], metadata_files={source},
                                        provenance=Provenance.DECLARED))
        return packages

    def walk(deps):
        if not isinstance(deps, dict):
            return
        for name, entry in deps.items():
            if isinstance(entry, dict):
                if name and isinstance(entry.get("version"), str) and entry["version"]:
                    packages.append(Package(Ecosystem.NPM, name, entry["version"],
                                            metadata_files={source}, provenance=Provenance.DECLARED))
                walk(entry.get("dependencies"))

    walk(data.get("dependencies"))
    return packages


def _spec_name(spec: str) -> str:
    spec = spec.strip().strip('"')
    at = spec.find("@", 1)
    return spec[:at] if at > 0 else spec


def parse_yarn_lock(text: str, source: str) -> list[Package]:
    """Classic (v1) and berry yarn lockfiles."""
    packages = []
    name = None
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if not line[0].isspace():
            name = None
            if line.rstrip().endswith(":"):
                first = line.rstrip()[:-1].split(",")[0]
                if not first.strip().strip('"').startswith("__metadata"):
                    name = _spec_name(first)
            continue
        stripped = line.strip()
        if name and (stripped.startswith("version ") or stripped.startswith("version:")):
            version = stripped[len("version"):].lstrip(":").strip().strip('"')
            packages.append(Package(Ecosystem.NPM, name, version, metadata_files={source},
                                    provenance=Provenance.DECLARED))
            name = None
    return packages


def declared_packages(view: View) -> list[Package]:
    packages = []
    for path in view.by_basename("package.json", *LOCKFILES):
        if "/node_modules/" in path:
            continue
        base = posixpath.basename(path)
        text = view.text(path)
        if text is None:
            continue
        if base == "yarn.lock":
            packages += parse_yarn_lock(text, path)
        elif base != "package.json":
            packages += parse_package_lock(text, path)
        else:
            try:
                data = json.loads(text)
            except ValueError:
                view.warn(f"{path}: malformed JSON")
                continue
            if not isinstance(data, dict):
                continue
            for section in ("dependencies", "devDependencies", "optionalDependencies"):
                for name, spec in (data.get(section) or {}).items():
                    version = spec.lstrip("v=") if isinstance(spec, str) and _EXACT.match(spec) else None
                    packages.append(Package(Ecosystem.NPM, name, version, metadata_files={path},
                                            provenance=Provenance.DECLARED))
    return packages


def analyze(view: View) -> list[Package]:
    return installed_packages(view) + declared_packages(view)
