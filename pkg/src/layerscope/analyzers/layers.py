"""Layer-by-layer analysis: run every analyzer on each cumulative view and merge.

Running the analyzers after every layer (rather than once on the final
filesystem) keeps packages whose metadata a later layer deleted or rewrote.
Those packages stay in the result with ``obscured`` set.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable

from ..layer_fs import FileHistory
from . import apk, dpkg, golang, node, python, rpm, ruby_php
from .base import OsRelease, Package, View, normalize_name
from .os_release import candidate_paths, detect_os

log = logging.getLogger(__name__)

Analyzer = Callable[[View], "list[Package]"]

ANALYZERS: dict[str, Analyzer] = {
    "dpkg": dpkg.analyze,
    "apk": apk.analyze,
    "rpm": rpm.analyze,
    "python": python.analyze,
    "node": node.analyze,
    "ruby_php": ruby_php.analyze,
    "golang": golang.analyze,
}


@dataclass
class LayerReport:
    layer: int
    created_by: str | None
    package_count: int
    new_packages: list[tuple[str, str, str]]
    os_release: OsRelease | None
    warnings: list[str] = field(default_factory=list)


@dataclass
class LayerAnalysis:
    reports: list[LayerReport]
    packages: list[Package]
    warnings: list[str]
    os_release: OsRelease | None
    os_files: set[str]
    extra_analyzed: set[str]
    final_packages: list[Package]


def _run(name, fn, view):
    try:
        return fn(view)
    except Exception as exc:  # parsers must never take the scan down
        log.debug("analyzer %s failed on layer %d", name, view.layer, exc_info=True)
        view.warn(f"{name} analyzer failed: {type(exc).__name__}: {exc}")
        return []


def analyze_view(view: View, analyzers: dict[str, Analyzer] | None = None, jobs: int = 1) -> list[Package]:
    """Run *analyzers* on one view; result order is independent of completion order."""
    analyzers = ANALYZERS if analyzers is None else analyzers
    results: dict[str, list[Package]] = {}
    if jobs > 1 and len(analyzers) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run, name, fn, view): name for name, fn in analyzers.items()}
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
    else:
        for name, fn in analyzers.items():
            results[name] = _run(name, fn, view)
    return [pkg for name in sorted(results) for pkg in results[name]]


def merge(packages) -> dict[tuple[str, str, str], Package]:
    """Collapse packages with the same identity (ecosystem, name, version)."""
    merged: dict[tuple[str, str, str], Package] = {}
    for pkg in sorted(packages, key=lambda p: (p.key, p.name, sorted(p.metadata_files))):
        if pkg.key in merged:
            merged[pkg.key].absorb(pkg)
        else:
            merged[pkg.key] = pkg
    return merged


def subsume(packages: dict) -> dict:
    """Fold version-less packages into a versioned one with the same name."""
    versioned: dict[tuple[str, str], list[Package]] = {}
    for pkg in packages.values():
        if pkg.version:
            versioned.setdefault(pkg.key[:2], []).append(pkg)
    out = {}
    for key, pkg in packages.items():
        if not pkg.version and key[:2] in versioned:
            target = min(versioned[key[:2]], key=lambda p: (p.source_layer, p.version))
            target.absorb(pkg)
            continue
        out[key] = pkg
    return out


def analyze_layers(image, history: FileHistory, analyzers: dict[str, Analyzer] | None = None,
                   jobs: int = 1) -> LayerAnalysis:
    merged: dict[tuple[str, str, str], Package] = {}
    reports: list[LayerReport] = []
    warnings: list[str] = []
    seen_warnings: set[str] = set()
    final: dict = {}
    os_release = None
    os_files: set[str] = set()

    for layer, alive in history.iter_views():
        view = View(alive, history.contents, layer)
        found = merge(analyze_view(view, analyzers, jobs))
        new = []
        for key, pkg in found.items():
            if key in merged:
                merged[key].absorb(pkg)
            else:
                pkg.source_layer = layer
                merged[key] = _copy(pkg)
                new.append(key)
        release = detect_os(view)
        os_release = release or os_release
        for message in view.warnings:
            if message not in seen_warnings:
                seen_warnings.add(message)
                warnings.append(f"layer {layer}: {message}")
        reports.append(LayerReport(layer, _created_by(image, layer), len(found), sorted(new),
                                   release, list(view.warnings)))
        if layer == history.layer_count - 1:
            final = subsume(found)
            os_files = set(candidate_paths(view))

    packages = subsume(merged)
    final_keys = set(final)
    for pkg in packages.values():
        pkg.obscured = pkg.key not in final_keys
    ordered = sorted(packages.values(), key=lambda p: (p.key, p.name))
    return LayerAnalysis(
        reports=reports,
        packages=ordered,
        warnings=warnings,
        os_release=_final_os(reports, os_release),
        os_files=os_files,
        extra_analyzed=set(),
        final_packages=sorted(final.values(), key=lambda p: (p.key, p.name)),
    )


def _final_os(reports, fallback):
    return reports[-1].os_release if reports and reports[-1].os_release else fallback


def _copy(pkg: Package) -> Package:
    # found packages keep their own sets; merged ones must not alias them
    return Package(pkg.ecosystem, pkg.name, pkg.version, pkg.source_layer, set(pkg.metadata_files),
                   set(pkg.owned_files), pkg.obscured, pkg.provenance, set(pkg.notes), dict(pkg.qualifiers))


def _created_by(image, layer):
    if image is None:
        return None
    position = image.layer_to_history.get(layer)
    if position is None:
        return None
    return image.config.history[position].created_by


__all__ = ["ANALYZERS", "LayerAnalysis", "LayerReport", "analyze_layers", "analyze_view",
           "merge", "normalize_name", "subsume"]
