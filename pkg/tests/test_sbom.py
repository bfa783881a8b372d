import json
import random

import pytest
from spdx_tools.spdx.parser.parse_anything import parse_file
from spdx_tools.spdx.validation.document_validator import validate_full_spdx_document

from layerscope.analyzers.base import Ecosystem, OsRelease, Package
from layerscope.containerfile import ExternalPackageRef, RefKind
from layerscope.sbom import ImageMetadata, SbomDocument, emit_spdx, purl_for, resolve_clock

DEBIAN = OsRelease("debian", "12", "/etc/os-release")


@pytest.mark.parametrize("pkg, os_release, url, purl", [
    (Package(Ecosystem.DEB, "libc6", "2.36-9", qualifiers={"arch": "amd64"}), DEBIAN, None,
     "pkg:deb/debian/libc6@2.36-9?arch=amd64&distro=debian-12"),
    (Package(Ecosystem.APK, "musl", "1.2.4-r2"), None, None, "pkg:apk/alpine/musl@1.2.4-r2"),
    (Package(Ecosystem.RPM, "bash", "0:5.1-6.el9"), OsRelease("rhel", "9.3", "x"), None,
     "pkg:rpm/rhel/bash@0:5.1-6.el9?distro=rhel-9.3"),
    (Package(Ecosystem.PYPI, "Zope.Interface", "6.0"), None, None, "pkg:pypi/zope-interface@6.0"),
    (Package(Ecosystem.NPM, "@types/node", "20.1.0"), None, None, "pkg:npm/%40types/node@20.1.0"),
    (Package(Ecosystem.COMPOSER, "Monolog/Monolog", "3.5.0"), None, None, "pkg:composer/monolog/monolog@3.5.0"),
    (Package(Ecosystem.GOLANG, "github.com/acme/mathx", "v1.4.0"), None, None,
     "pkg:golang/github.com/acme/mathx@v1.4.0"),
    (Package(Ecosystem.GEM, "rack", "3.0.9"), None, None, "pkg:gem/rack@3.0.9"),
    (Package(Ecosystem.EXTERNAL, "tool", "2.4.1"), None, "https://x.example/tool-2.4.1.tgz",
     "pkg:generic/tool@2.4.1?download_url=https://x.example/tool-2.4.1.tgz"),
])
def test_purls(pkg, os_release, url, purl):
    assert purl_for(pkg, os_release, url) == purl


def sample():
    pkgs = [Package(Ecosystem.DEB, "bash", "5.2", source_layer=0, metadata_files={"/var/lib/dpkg/status"}),
            Package(Ecosystem.PYPI, "six", "1.16.0", source_layer=1, obscured=True, notes={"inferred-from-path"}),
            Package(Ecosystem.NPM, "left-pad", None, source_layer=2)]
    refs = [ExternalPackageRef("https://x.example/tool-2.4.1.tgz", RefKind.ARCHIVE, "tool", "2.4.1", 3)]
    return pkgs, refs, ImageMetadata("acme/app:1", "ab" * 32, DEBIAN)


CLOCK = "2024-05-01T12:00:00Z"


def test_document_is_valid_spdx_23(tmp_path):
    pkgs, refs, image = sample()
    path = tmp_path / "sbom.spdx.json"
    path.write_text(emit_spdx(pkgs, refs, image, CLOCK).dumps())
    assert validate_full_spdx_document(parse_file(str(path))) == []


def test_document_structure():
    pkgs, refs, image = sample()
    doc = emit_spdx(pkgs, refs, image, CLOCK)
    data = doc.data
    assert data["spdxVersion"] == "SPDX-2.3" and data["creationInfo"]["created"] == CLOCK
    assert len(doc.packages) == 4
    contains = [r for r in data["relationships"] if r["relationshipType"] == "CONTAINS"]
    assert {r["relatedSpdxElement"] for r in contains} == {p["SPDXID"] for p in doc.packages}
    six = next(p for p in doc.packages if p["name"] == "six")
    comments = {a["comment"] for a in six["annotations"]}
    assert {"layerscope:source-layer=1", "layerscope:obscured=true", "layerscope:note=inferred-from-path"} <= comments
    tool = next(p for p in doc.packages if p["name"] == "tool")
    assert tool["downloadLocation"] == "https://x.example/tool-2.4.1.tgz"
    assert "versionInfo" not in next(p for p in doc.packages if p["name"] == "left-pad")
    assert SbomDocument.loads(doc.dumps()).data == data


def test_byte_identical_regardless_of_input_order():
    pkgs, refs, image = sample()
    first = emit_spdx(pkgs, refs, image, CLOCK).dumps()
    for seed in range(5):
        shuffled = pkgs[:]
        random.Random(seed).shuffle(shuffled)
        assert emit_spdx(shuffled, refs, image, CLOCK).dumps() == first


def test_namespace_depends_on_image_not_time():
    pkgs, refs, image = sample()
    a = emit_spdx(pkgs, refs, image, CLOCK).data["documentNamespace"]
    b = emit_spdx(pkgs, refs, image, "2030-01-01T00:00:00Z").data["documentNamespace"]
    c = emit_spdx(pkgs, refs, ImageMetadata("other", "cd" * 32), CLOCK).data["documentNamespace"]
    assert a == b != c


def test_clock_resolution(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
    assert resolve_clock().isoformat() == "1970-01-02T00:00:00+00:00"
    assert resolve_clock("2024-01-01T01:00:00+01:00").isoformat() == "2024-01-01T00:00:00+00:00"
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    assert resolve_clock().year >= 2024


def test_scan_output_json_sorted(layouts):
    from layerscope.pipeline import analyze_image

    text = analyze_image(layouts[None], clock=CLOCK).sbom.dumps()
    assert text == json.dumps(json.loads(text), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
