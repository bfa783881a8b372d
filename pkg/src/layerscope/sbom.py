"""SPDX 2.3 JSON output."""

from __future__ import annotations

import hashlib
import json
import os
import re
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone

from packageurl import PackageURL

from . import __version__
from .analyzers.base import Ecosystem, OsRelease, Package, Provenance
from .containerfile import ExternalPackageRef

TOOL = f"Tool: layerscope-{__version__}"
NOASSERTION = "NOASSERTION"
IMAGE_ID = "SPDXRef-image"
DOC_ID = "SPDXRef-DOCUMENT"
_NAMESPACE_ROOT = uuid.UUID("6f0c2a9e-4d1b-5c3e-9a7f-1b2c3d4e5f60")


@dataclass(frozen=True)
class ImageMetadata:
    name: str
    digest: str = ""
    os_release: OsRelease | None = None


@dataclass
class SbomDocument:
    data: dict = field(default_factory=dict)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SbomDocument":
        return cls(json.loads(text))

    @property
    def packages(self) -> list[dict]:
        return [p for p in self.data.get("packages", []) if p["SPDXID"] != IMAGE_ID]


def resolve_clock(clock=None) -> datetime:
    """Creation time: explicit value, else SOURCE_DATE_EPOCH, else now."""
    if isinstance(clock, datetime):
        when = clock
    elif isinstance(clock, str) and clock:
        when = datetime.fromisoformat(clock.replace("Z", "+00:00"))
    elif os.environ.get("SOURCE_DATE_EPOCH", "").strip():
        when = datetime.fromtimestamp(int(os.environ["SOURCE_DATE_EPOCH"]), tz=timezone.utc)
    else:
        when = datetime.now(timezone.utc)
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    return when.astimezone(timezone.utc)


def _spdx_time(when: datetime) -> str:
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def purl_for(pkg: Package, os_release: OsRelease | None = None, download_url: str | None = None) -> str:
    eco = pkg.ecosystem
    namespace = None
    name = pkg.name
    qualifiers = {}
    if eco in (Ecosystem.DEB, Ecosystem.RPM, Ecosystem.APK):
        default = {Ecosystem.DEB: "debian", Ecosystem.RPM: "redhat", Ecosystem.APK: "alpine"}[eco]
        namespace = os_release.id if os_release else default
        if pkg.qualifiers.get("arch"):
            qualifiers["arch"] = pkg.qualifiers["arch"]
        if os_release and os_release.version_id:
            qualifiers["distro"] = f"{os_release.id}-{os_release.version_id}"
        ptype = eco.value
    elif eco is Ecosystem.PYPI:
        ptype, name = "pypi", re.sub(r"[-_.]+", "-", name).lower()
    elif eco in (Ecosystem.NPM, Ecosystem.COMPOSER, Ecosystem.GOLANG):
        ptype = eco.value
        if "/" in name:
            namespace, name = name.rsplit("/", 1)
        if eco is Ecosystem.COMPOSER:
            namespace, name = (namespace or "").lower() or None, name.lower()
    elif eco is Ecosystem.GEM:
        ptype = "gem"
    else:
        ptype = "generic"
        if download_url:
            qualifiers["download_url"] = download_url
    return PackageURL(type=ptype, namespace=namespace, name=name, version=pkg.version,
                      qualifiers=qualifiers or None).to_string()


def _short_hash(*parts) -> str:
    return hashlib.sha256("\x00".join(str(p) for p in parts).encode()).hexdigest()[:16]


def _annotation(comment: str, created: str) -> dict:
    return {"annotationDate": created, "annotationType": "OTHER", "annotator": TOOL, "comment": comment}


def _package_record(spdx_id, name, version, purl, download, created, comments) -> dict:
    record = {
        "SPDXID": spdx_id,
        "name": name,
        "supplier": NOASSERTION,
        "downloadLocation": download or NOASSERTION,
        "filesAnalyzed": False,
        "licenseConcluded": NOASSERTION,
        "licenseDeclared": NOASSERTION,
        "copyrightText": NOASSERTION,
        "externalRefs": [{"referenceCategory": "PACKAGE-MANAGER", "referenceType": "purl",
                          "referenceLocator": purl}],
        "annotations": [_annotation(c, created) for c in comments],
    }
    if version:
        record["versionInfo"] = version
    return record


def ref_to_package(ref: ExternalPackageRef) -> Package:
    return Package(Ecosystem.EXTERNAL, ref.name, ref.version, source_layer=ref.layer or 0,
                   provenance=Provenance.EXTERNAL, notes={ref.kind.value})


def _sort_key(item):
    pkg = item[0]
    return (pkg.ecosystem.value, pkg.name, pkg.version or "", item[1] or "")


def emit_spdx(packages, refs=(), image: ImageMetadata | None = None, clock=None) -> SbomDocument:
    image = image or ImageMetadata("image")
    created = _spdx_time(resolve_clock(clock))
    namespace_seed = image.digest or image.name
    namespace = f"urn:uuid:{uuid.uuid5(_NAMESPACE_ROOT, namespace_seed)}"

    image_record = _package_record(
        IMAGE_ID, image.name, image.digest and f"sha256:{image.digest}",
        PackageURL(type="oci", name=image.name.rsplit("/", 1)[-1].split(":")[0].lower() or "image",
                   version=f"sha256:{image.digest}" if image.digest else None).to_string(),
        None, created, [])
    image_record["primaryPackagePurpose"] = "CONTAINER"

    items = [(pkg, None) for pkg in packages] + [(ref_to_package(r), r.url) for r in refs]
    records = []
    used: set[str] = set()
    for pkg, url in sorted(items, key=_sort_key):
        digest = _short_hash(pkg.ecosystem.value, pkg.key[1], pkg.version or "", url or "")
        spdx_id = f"SPDXRef-Package-{pkg.ecosystem.value}-{digest}"
        while spdx_id in used:
            digest = _short_hash(digest)
            spdx_id = f"SPDXRef-Package-{pkg.ecosystem.value}-{digest}"
        used.add(spdx_id)
        comments = [f"layerscope:source-layer={pkg.source_layer}",
                    f"layerscope:provenance={pkg.provenance.value}"]
        if pkg.obscured:
            comments.append("layerscope:obscured=true")
        comments += [f"layerscope:note={n}" for n in sorted(pkg.notes)]
        records.append(_package_record(spdx_id, pkg.name, pkg.version,
                                       purl_for(pkg, image.os_release, url), url, created, comments))

    relationships = [{"spdxElementId": DOC_ID, "relationshipType": "DESCRIBES", "relatedSpdxElement": IMAGE_ID}]
    relationships += [{"spdxElementId": IMAGE_ID, "relationshipType": "CONTAINS", "relatedSpdxElement": r["SPDXID"]}
                      for r in records]
    return SbomDocument({
        "spdxVersion": "SPDX-2.3",
        "dataLicense": "CC0-1.0",
        "SPDXID": DOC_ID,
        "name": image.name,
        "documentNamespace": namespace,
        "creationInfo": {"created": created, "creators": [TOOL]},
        "documentDescribes": [IMAGE_ID],
        "packages": [image_record] + records,
        "relationships": relationships,
    })
