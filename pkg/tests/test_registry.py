import json
import os

import pytest

from layerscope.image_io import OCI_INDEX, DigestMismatchError, PlatformUnavailableError, load_image
from layerscope.imagebuilder import Layer, build_image, index_document
from layerscope.registry import (
    AuthFailedError,
    ImageReference,
    InvalidReferenceError,
    ManifestNotFoundError,
    pull,
)
from layerscope.synthetic import tactic_image

from fake_registry import FakeRegistry


@pytest.fixture
def registry():
    with FakeRegistry() as reg:
        yield reg


def _two_platform(reg, repo="acme/multi", tag="1"):
    amd = build_image([Layer(files={"/etc/arch": "amd64\n"})], platform="linux/amd64")
    arm = build_image([Layer(files={"/etc/arch": "arm64\n"})], platform="linux/arm64")
    for img in (amd, arm):
        reg.add_image(repo, None, img)
    reg.add_manifest(repo, index_document([amd, arm]), OCI_INDEX, tag)
    return amd, arm


def _layout_files(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def test_reference_defaults():
    ref = ImageReference.parse("debian")
    assert (ref.registry, ref.repository, ref.tag, ref.digest) == ("docker.io", "library/debian", "latest", None)
    assert ref.api_host == "registry-1.docker.io"
    ref = ImageReference.parse("localhost:5000/team/app:v1.2")
    assert (ref.registry, ref.repository, ref.tag) == ("localhost:5000", "team/app", "v1.2")
    digest = "sha256:" + "a" * 64
    ref = ImageReference.parse(f"quay.io/org/img@{digest}")
    assert ref.tag is None and ref.target == digest
    assert str(ImageReference.parse("ghcr.io/o/r:t")) == "ghcr.io/o/r:t"


@pytest.mark.parametrize("text", ["", " debian", "UPPER/case", "repo:bad tag", "repo@sha256:xyz"])
def test_reference_rejects_malformed(text):
    with pytest.raises(InvalidReferenceError):
        ImageReference.parse(text)


def test_pull_with_token_matches_source(registry, tmp_path):
    image = tactic_image(None)
    registry.add_image("fixture/baseline", "1", image)
    dest = str(tmp_path / "layout")
    source = pull(f"{registry.host}/fixture/baseline:1", dest=dest)
    assert registry.requests.count("/token") >= 1
    index = json.loads((tmp_path / "layout" / "index.json").read_text())
    assert len(index["manifests"]) == 1
    assert index["manifests"][0]["digest"] == f"sha256:{image.manifest_digest}"
    loaded = load_image(source)
    assert loaded.digest == image.manifest_digest
    assert list(loaded.layers) == image.layer_tars
    assert not [f for f in _layout_files(dest) if ".partial" in f]


def test_pull_by_digest(registry, tmp_path):
    image = tactic_image("OS")
    registry.add_image("fixture/os", None, image)
    pull(f"{registry.host}/fixture/os@sha256:{image.manifest_digest}", dest=str(tmp_path / "l"))
    assert (tmp_path / "l" / "blobs" / "sha256" / image.config_digest).exists()


def test_pull_fetches_only_selected_platform(registry, tmp_path):
    amd, arm = _two_platform(registry)
    dest = str(tmp_path / "layout")
    pull(f"{registry.host}/acme/multi:1", platform="linux/arm64", dest=dest)
    fetched = set(registry.blob_requests())
    arm_blobs = {arm.config_digest} | {d for d in arm.blobs() if d != arm.manifest_digest}
    assert fetched == arm_blobs
    assert not fetched & set(amd.blobs())
    loaded = load_image(dest, platform="linux/arm64")
    assert loaded.digest == arm.manifest_digest
    assert loaded.config.architecture == "arm64"


def test_missing_platform(registry, tmp_path):
    _two_platform(registry)
    with pytest.raises(PlatformUnavailableError):
        pull(f"{registry.host}/acme/multi:1", platform="linux/s390x", dest=str(tmp_path / "l"))
    assert not registry.blob_requests()


def test_tampered_blob_leaves_no_layout(registry, tmp_path):
    image = tactic_image(None)
    registry.add_image("fixture/baseline", "1", image)
    registry.tampered.add(list(image.blobs())[-1])  # last layer
    dest = tmp_path / "layout"
    with pytest.raises(DigestMismatchError):
        pull(f"{registry.host}/fixture/baseline:1", dest=str(dest))
    assert not dest.exists() or _layout_files(str(dest)) == []


def test_tampered_blob_keeps_existing_layout(registry, tmp_path):
    good = tactic_image(None)
    registry.add_image("fixture/baseline", "1", good)
    dest = str(tmp_path / "layout")
    pull(f"{registry.host}/fixture/baseline:1", dest=dest)
    before = _layout_files(dest)

    bad = tactic_image("URL")
    registry.add_image("fixture/url", "1", bad)
    new_layer = next(d for d in bad.blobs() if d not in good.blobs() and d not in (bad.config_digest, bad.manifest_digest))
    registry.tampered.add(new_layer)
    with pytest.raises(DigestMismatchError):
        pull(f"{registry.host}/fixture/url:1", dest=dest)
    assert _layout_files(dest) == before


def test_repull_reuses_blobs(registry, tmp_path):
    image = tactic_image(None)
    registry.add_image("fixture/baseline", "1", image)
    dest = str(tmp_path / "layout")
    pull(f"{registry.host}/fixture/baseline:1", dest=dest)
    first = len(registry.blob_requests())
    assert first == len(image.layer_blobs) + 1
    pull(f"{registry.host}/fixture/baseline:1", dest=dest)
    assert len(registry.blob_requests()) == first
    assert len(json.loads(open(os.path.join(dest, "index.json")).read())["manifests"]) == 1


def test_manifest_not_found(registry, tmp_path):
    with pytest.raises(ManifestNotFoundError):
        pull(f"{registry.host}/nothing/here:1", dest=str(tmp_path / "l"))
    assert not (tmp_path / "l").exists() or _layout_files(str(tmp_path / "l")) == []


def test_token_refused(registry, tmp_path):
    registry.add_image("fixture/baseline", "1", tactic_image(None))
    registry.token_status = 403
    with pytest.raises(AuthFailedError):
        pull(f"{registry.host}/fixture/baseline:1", dest=str(tmp_path / "l"))


def test_load_image_from_registry_reference(registry):
    image = tactic_image("PKG")
    registry.add_image("fixture/pkg", "1", image)
    loaded = load_image(f"{registry.host}/fixture/pkg:1")
    assert loaded.digest == image.manifest_digest
    assert len(loaded.layers) == len(image.layer_blobs)
