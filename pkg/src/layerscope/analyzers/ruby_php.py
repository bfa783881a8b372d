"""Ruby gems and PHP composer packages."""

from __future__ import annotations

import json
import posixpath
import re

from .base import Ecosystem, Package, Provenance, View

_GEMSPEC = re.compile(r"^(?P<name>.+?)-(?P<version>\d[^-]*(?:-.+)?)\.gemspec$")
_LOCK_SPEC = re.compile(r"^    (?P<name>\S+) \((?P<version>[^)]+)\)$")
_PLATFORM_REQS = re.compile(r"^(php|hhvm|ext-.*|lib-.*|composer(-plugin-api|-runtime-api)?)$")


def split_gemspec_name(filename: str) -> tuple[str, str] | None:
    m = _GEMSPEC.match(filename)
    return (m.group("name"), m.group("version")) if m else None


def gems(view: View) -> list[Package]:
    packages = []
    for path in view.paths:
        if not path.endswith(".gemspec") or posixpath.basename(posixpath.dirname(path)) != "specifications":
            continue
        parsed = split_gemspec_name(posixpath.basename(path))
        if parsed is None:
            continue
        name, version = parsed
        gem_home = posixpath.dirname(posixpath.dirname(path))
        owned = set(view.files_under(f"{gem_home}/gems/{name}-{version}"))
        owned.add(path)
        packages.append(Package(Ecosystem.GEM, name, version, metadata_files={path}, owned_files=owned))
    return packages


def parse_gemfile_lock(text: str, source: str) -> list[Package]:
    packages = []
    in_specs = False
    for line in text.splitlines():
        if line.strip() == "specs:":
            in_specs = True
            continue
        if line and not line.startswith(" "):
            in_specs = False
        if in_specs:
            m = _LOCK_SPEC.match(line)
            if m:
                packages.append(Package(Ecosystem.GEM, m.group("name"), m.group("version"),
                                        metadata_files={source}, provenance=Provenance.DECLARED))
    return packages


def _composer_entries(data):
    if isinstance(data, dict):
        return [e for key in ("packages", "packages-dev") for e in data.get(key) or [] if isinstance(e, dict)]
    if isinstance(data, list):
        return [e for e in data if isinstance(e, dict)]
    return []


def _vendor_files(view, vendor_dir, name):
    return set(view.files_under(f"{vendor_dir}/{name}"))


def composer(view: View) -> list[Package]:
    packages = []
    for path in view.by_basename("composer.lock", "installed.json", "composer.json"):
        base = posixpath.basename(path)
        if base == "installed.json":
            if not path.endswith("/vendor/composer/installed.json"):
                continue
            vendor_dir = posixpath.dirname(posixpath.dirname(path))
            provenance = Provenance.INSTALLED
        elif "/vendor/" in path:
            continue
        else:
            vendor_dir = posixpath.join(posixpath.dirname(path), "vendor")
            provenance = Provenance.DECLARED
        text = view.text(path)
        if text is None:
            continue
        try:
            data = json.loads(text)
        except ValueError:
            view.warn(f"{path}: malformed JSON")
            continue
        if base == "composer.json":
            if not isinstance(data, dict):
                continue
            for section in ("require", "require-dev"):
                requires = data.get(section)
                for name in (requires if isinstance(requires, dict) else ()):
                    if "/" in name and not _PLATFORM_REQS.match(name):
                        packages.append(Package(Ecosystem.COMPOSER, name, None, metadata_files={path},
                                                provenance=Provenance.DECLARED))
            continue
        for entry in _composer_entries(data):
            name = entry.get("name")
            version = entry.get("version")
            if not isinstance(name, str) or not name:
                continue
            packages.append(Package(
                Ecosystem.COMPOSER, name, version if isinstance(version, str) and version else None,
                metadata_files={path},
                owned_files=_vendor_files(view, vendor_dir, name), provenance=provenance))
    return packages


def analyze(view: View) -> list[Package]:
    packages = gems(view) + composer(view)
    for path in view.by_basename("Gemfile.lock"):
        text = view.text(path)
        if text is not None:
            packages += parse_gemfile_lock(text, path)
    return packages
