"""End-to-end scan: load, replay layers, analyze, detect, measure, and build the SBOM."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

from .analyzers import Package, wants_content
from .analyzers.layers import LayerAnalysis, analyze_layers
from .containerfile import ExternalPackageRef, Instruction, extract_external_packages, interpolate_all, reconstruct
from .coverage import CoverageReport, compute_coverage
from .detector import ObscurationReport, PatternTable, classify_false_positive_candidates, detect
from .image_io import DEFAULT_PLATFORM, ImageSource, LoadedImage, load_image
from .layer_fs import FileEntry, FileHistory, LayerDelta, build_history, extract_entries, squash
from .sbom import ImageMetadata, SbomDocument, emit_spdx, ref_to_package

log = logging.getLogger(__name__)


@dataclass
class ScanResult:
    image: LoadedImage
    history: FileHistory
    squashed: dict[str, FileEntry]
    instructions: list[Instruction]
    refs: list[ExternalPackageRef]
    analysis: LayerAnalysis
    report: ObscurationReport
    coverage: CoverageReport
    metadata_coverage: CoverageReport
    sbom: SbomDocument

    @property
    def packages(self) -> list[Package]:
        """Filesystem packages plus one external package per downloaded URL."""
        return list(self.analysis.packages) + [ref_to_package(r) for r in self.refs]

    def package_keys(self) -> set[tuple[str, str, str]]:
        return {p.key for p in self.packages}


def extract_layers(image: LoadedImage, jobs: int = 4, capture=wants_content) -> list[LayerDelta]:
    """Classify every layer, possibly in parallel; results come back in layer order."""
    if jobs <= 1 or len(image.layers) == 1:
        return [extract_entries(layer, i, capture) for i, layer in enumerate(image.layers)]
    deltas: dict[int, LayerDelta] = {}
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(extract_entries, layer, i, capture): i for i, layer in enumerate(image.layers)}
        for fut in as_completed(futures):
            deltas[futures[fut]] = fut.result()
    return [deltas[i] for i in sorted(deltas)]


def image_label(image: LoadedImage) -> str:
    return image.name or (f"sha256:{image.digest}" if image.digest else "image")


def scan_image(image: LoadedImage, *, jobs: int = 4, patterns: PatternTable | None = None, clock=None,
               analyzers=None) -> ScanResult:
    deltas = extract_layers(image, jobs)
    history = build_history(deltas)
    squashed = squash(history)
    instructions = interpolate_all(reconstruct(image.config))
    refs = extract_external_packages(instructions)
    analysis = analyze_layers(image, history, analyzers, jobs)
    for warning in analysis.warnings:
        log.warning("%s", warning)

    label = image_label(image)
    report = detect(history, squashed, instructions, refs, config=image.config, image=label,
                    patterns=patterns, history_consistent=image.history_consistent)
    report = classify_false_positive_candidates(report, analysis.packages)
    extra = analysis.os_files | analysis.extra_analyzed
    coverage = compute_coverage(squashed, analysis.packages, extra, history=history, image=label)
    metadata_only = compute_coverage(squashed, analysis.packages, analysis.os_files, history=history,
                                     owned=False, image=label)
    sbom = emit_spdx(analysis.packages, refs, ImageMetadata(label, image.digest, analysis.os_release), clock)
    log.info("%s: %d layers, %d packages, %d findings", label, len(image.layers), len(analysis.packages),
             len(report.findings))
    return ScanResult(image, history, squashed, instructions, refs, analysis, report, coverage,
                      metadata_only, sbom)


def analyze_image(source: ImageSource | str, *, platform: str = DEFAULT_PLATFORM, jobs: int = 4,
                  patterns: PatternTable | None = None, clock=None, analyzers=None,
                  **pull_options) -> ScanResult:
    image = load_image(source, platform=platform, jobs=jobs, **pull_options)
    return scan_image(image, jobs=jobs, patterns=patterns, clock=clock, analyzers=analyzers)


SCHEMA_VERSION = "1"


def package_json(pkg: Package) -> dict:
    return {
        "ecosystem": pkg.ecosystem.value,
        "name": pkg.name,
        "version": pkg.version,
        "source_layer": pkg.source_layer,
        "obscured": pkg.obscured,
        "provenance": pkg.provenance.value,
        "metadata_files": sorted(pkg.metadata_files),
        "owned_file_count": len(pkg.owned_files),
        "notes": sorted(pkg.notes),
    }


def result_json(result: ScanResult) -> dict:
    analysis = result.analysis
    release = analysis.os_release
    return {
        "schema_version": SCHEMA_VERSION,
        "image": image_label(result.image),
        "digest": result.image.digest,
        "os": {"id": release.id, "version_id": release.version_id, "source": release.source_path} if release else None,
        "packages": [package_json(p) for p in analysis.packages],
        "external_packages": [
            {"url": r.url, "kind": r.kind.value, "name": r.name, "version": r.version, "layer": r.layer}
            for r in result.refs
        ],
        "layers": [
            {"layer": r.layer, "created_by": r.created_by, "package_count": r.package_count,
             "new_packages": [list(k) for k in r.new_packages]}
            for r in analysis.reports
        ],
        "obscuration": result.report.to_json(),
        "coverage": result.coverage.to_json(),
        "metadata_only_coverage": result.metadata_coverage.to_json(),
        "warnings": list(analysis.warnings),
    }
