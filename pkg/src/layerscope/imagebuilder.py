"""Build small container images in memory and write them as OCI layouts or docker-save tars.

Images are byte-deterministic: tar members carry zero timestamps and owners,
gzip headers carry no mtime, and JSON is serialized with sorted keys.

    >>> img = build_image([Layer(files={"/etc/os-release": "ID=debian\\n"}, created_by="COPY rootfs /")])
    >>> len(img.layer_blobs)
    1
"""

from __future__ import annotations

import gzip
import hashlib
import io
import json
import os
import posixpath
import tarfile
from dataclasses import dataclass, field

import zstandard

from .image_io import LAYER_GZIP, LAYER_TAR, LAYER_ZSTD, OCI_INDEX, OCI_MANIFEST
from .layer_fs import OPAQUE_MARKER, WHITEOUT_PREFIX

OCI_CONFIG = "application/vnd.oci.image.config.v1+json"
EPOCH = "1970-01-01T00:00:00Z"
_MEDIA_TYPES = {"none": LAYER_TAR, "gzip": LAYER_GZIP, "zstd": LAYER_ZSTD}


@dataclass
class Layer:
    """One filesystem change-set. Paths are absolute; parent directories are added automatically."""

    files: dict = field(default_factory=dict)  # path -> bytes | str
    symlinks: dict = field(default_factory=dict)  # path -> target
    hardlinks: dict = field(default_factory=dict)  # path -> existing path
    dirs: list = field(default_factory=list)
    delete: list = field(default_factory=list)  # whiteouts
    opaque: list = field(default_factory=list)  # directories whose lower contents are hidden
    modes: dict = field(default_factory=dict)
    created_by: str = ""
    auto_parents: bool = True


@dataclass
class Step:
    """A history entry that produced no layer (ENV, ARG, LABEL, ...)."""

    created_by: str


def _info(name: str, type_: bytes, mode: int, size: int = 0, linkname: str = "") -> tarfile.TarInfo:
    info = tarfile.TarInfo(name.lstrip("/"))
    info.type = type_
    info.mode = mode
    info.size = size
    info.linkname = linkname
    info.mtime = 0
    info.uid = info.gid = 0
    info.uname = info.gname = ""
    return info


def layer_tar(layer: Layer) -> bytes:
    buf = io.BytesIO()
    emitted: set[str] = set()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.PAX_FORMAT) as tar:
        def directory(path):
            path = path.rstrip("/")
            if not path or path == "/" or path in emitted:
                return
            if layer.auto_parents:
                directory(posixpath.dirname(path))
            emitted.add(path)
            tar.addfile(_info(path + "/", tarfile.DIRTYPE, layer.modes.get(path, 0o755)))

        def parents(path):
            if layer.auto_parents:
                directory(posixpath.dirname(path))

        for path in layer.dirs:
            directory(path)
        for path in layer.delete:
            parents(path)
            head, base = posixpath.split(path.rstrip("/"))
            tar.addfile(_info(posixpath.join(head, WHITEOUT_PREFIX + base), tarfile.REGTYPE, 0o644))
        for path in layer.opaque:
            directory(path)
            tar.addfile(_info(posixpath.join(path, OPAQUE_MARKER), tarfile.REGTYPE, 0o644))
        for path, content in layer.files.items():
            data = content.encode() if isinstance(content, str) else bytes(content)
            parents(path)
            tar.addfile(_info(path, tarfile.REGTYPE, layer.modes.get(path, 0o644), len(data)), io.BytesIO(data))
        for path, target in layer.symlinks.items():
            parents(path)
            tar.addfile(_info(path, tarfile.SYMTYPE, 0o777, linkname=target))
        for path, target in layer.hardlinks.items():
            parents(path)
            tar.addfile(_info(path, tarfile.LNKTYPE, layer.modes.get(path, 0o644), linkname=target.lstrip("/")))
    return buf.getvalue()


def compress(data: bytes, compression: str) -> bytes:
    if compression == "none":
        return data
    if compression == "gzip":
        return gzip.compress(data, compresslevel=6, mtime=0)
    if compression == "zstd":
        return zstandard.ZstdCompressor().compress(data)
    raise ValueError(f"unknown compression {compression!r}")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class BuiltImage:
    name: str
    config: bytes
    manifest: bytes
    layer_blobs: list[bytes]
    layer_tars: list[bytes]
    media_type: str
    platform: str = "linux/amd64"

    @property
    def manifest_digest(self) -> str:
        return _sha(self.manifest)

    @property
    def config_digest(self) -> str:
        return _sha(self.config)

    @property
    def diff_ids(self) -> list[str]:
        return [_sha(t) for t in self.layer_tars]

    def blobs(self) -> dict[str, bytes]:
        out = {self.config_digest: self.config, self.manifest_digest: self.manifest}
        out.update({_sha(b): b for b in self.layer_blobs})
        return out

    def descriptor(self, with_platform: bool = True) -> dict:
        desc = {"mediaType": OCI_MANIFEST, "digest": f"sha256:{self.manifest_digest}", "size": len(self.manifest)}
        if with_platform:
            os_name, _, arch = self.platform.partition("/")
            desc["platform"] = {"os": os_name, "architecture": arch}
        return desc


def build_image(steps, *, compression: str = "gzip", name: str = "fixture:latest", platform: str = "linux/amd64",
                env=(), history: bool = True) -> BuiltImage:
    """Assemble an image from ``Layer`` and ``Step`` items in build order.

    ``history=False`` leaves the config without any history, as flattening
    tools do.
    """
    layers = [s for s in steps if isinstance(s, Layer)]
    if not layers:
        raise ValueError("an image needs at least one layer")
    tars = [layer_tar(layer) for layer in layers]
    blobs = [compress(t, compression) for t in tars]
    os_name, _, arch = platform.partition("/")
    config = {
        "architecture": arch,
        "os": os_name,
        "created": EPOCH,
        "config": {"Env": list(env)},
        "rootfs": {"type": "layers", "diff_ids": [f"sha256:{_sha(t)}" for t in tars]},
    }
    if history:
        config["history"] = [
            {"created": EPOCH, "created_by": s.created_by, **({"empty_layer": True} if isinstance(s, Step) else {})}
            for s in steps
        ]
    config_bytes = _dumps(config)
    media_type = _MEDIA_TYPES[compression]
    manifest = {
        "schemaVersion": 2,
        "mediaType": OCI_MANIFEST,
        "config": {"mediaType": OCI_CONFIG, "digest": f"sha256:{_sha(config_bytes)}", "size": len(config_bytes)},
        "layers": [{"mediaType": media_type, "digest": f"sha256:{_sha(b)}", "size": len(b)} for b in blobs],
    }
    return BuiltImage(name, config_bytes, _dumps(manifest), blobs, tars, media_type, platform)


def _write(path, data: bytes):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def write_oci_layout(images, path: str, *, nested_index: bool = False) -> str:
    """Write one image (or several platform variants) as an OCI layout directory."""
    images = [images] if isinstance(images, BuiltImage) else list(images)
    blob_dir = os.path.join(path, "blobs", "sha256")
    for img in images:
        for digest, data in img.blobs().items():
            _write(os.path.join(blob_dir, digest), data)
    annotations = {"org.opencontainers.image.ref.name": images[0].name}
    if len(images) == 1 and not nested_index:
        manifests = [dict(images[0].descriptor(with_platform=False), annotations=annotations)]
    else:
        inner = _dumps({"schemaVersion": 2, "mediaType": OCI_INDEX,
                        "manifests": [img.descriptor() for img in images]})
        _write(os.path.join(blob_dir, _sha(inner)), inner)
        manifests = [{"mediaType": OCI_INDEX, "digest": f"sha256:{_sha(inner)}", "size": len(inner),
                      "annotations": annotations}]
    _write(os.path.join(path, "oci-layout"), b'{"imageLayoutVersion":"1.0.0"}')
    _write(os.path.join(path, "index.json"), _dumps({"schemaVersion": 2, "mediaType": OCI_INDEX,
                                                     "manifests": manifests}))
    return path


def index_document(images) -> bytes:
    """Multi-platform image index referencing each image's manifest."""
    return _dumps({"schemaVersion": 2, "mediaType": OCI_INDEX, "manifests": [img.descriptor() for img in images]})


def write_docker_save(image: BuiltImage, path: str) -> str:
    """Write the classic ``docker save`` tar: manifest.json, config JSON, one tar per layer."""
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w", format=tarfile.PAX_FORMAT) as tar:
        def add(name, data):
            tar.addfile(_info(name, tarfile.REGTYPE, 0o644, len(data)), io.BytesIO(data))

        layer_names = []
        for t in image.layer_tars:
            name = f"{_sha(t)}/layer.tar"
            if name not in layer_names:
                add(name, t)
            layer_names.append(name)
        config_name = f"{image.config_digest}.json"
        add(config_name, image.config)
        add("manifest.json", json.dumps([{"Config": config_name, "RepoTags": [image.name],
                                          "Layers": layer_names}]).encode())
    _write(path, buf.getvalue())
    return path


__all__ = ["BuiltImage", "Layer", "Step", "build_image", "compress", "index_document",
           "layer_tar", "write_docker_save", "write_oci_layout"]
