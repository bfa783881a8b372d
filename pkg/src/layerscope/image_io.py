"""Loading container images from OCI layouts and ``docker save`` archives.

Both input forms end up as a :class:`LoadedImage`: the manifest, the parsed
config, and every layer decompressed and checked against its diff-id.
"""

from __future__ import annotations

import enum
import gzip
import hashlib
import io
import json
import logging
import os
import re
import shutil
import tarfile
import tempfile
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import zstandard

log = logging.getLogger(__name__)

DEFAULT_PLATFORM = "linux/amd64"

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

OCI_INDEX = "application/vnd.oci.image.index.v1+json"
OCI_MANIFEST = "application/vnd.oci.image.manifest.v1+json"
DOCKER_MANIFEST_LIST = "application/vnd.docker.distribution.manifest.list.v2+json"
DOCKER_MANIFEST = "application/vnd.docker.distribution.manifest.v2+json"
INDEX_TYPES = frozenset({OCI_INDEX, DOCKER_MANIFEST_LIST})
MANIFEST_TYPES = frozenset({OCI_MANIFEST, DOCKER_MANIFEST})

LAYER_TAR = "application/vnd.oci.image.layer.v1.tar"
LAYER_GZIP = "application/vnd.oci.image.layer.v1.tar+gzip"
LAYER_ZSTD = "application/vnd.oci.image.layer.v1.tar+zstd"
DOCKER_LAYER_GZIP = "application/vnd.docker.image.rootfs.diff.tar.gzip"

_UNCOMPRESSED = frozenset({
    LAYER_TAR,
    "application/vnd.oci.image.layer.nondistributable.v1.tar",
    "application/vnd.docker.image.rootfs.diff.tar",
})
_GZIP = frozenset({
    LAYER_GZIP,
    "application/vnd.oci.image.layer.nondistributable.v1.tar+gzip",
    DOCKER_LAYER_GZIP,
    "application/vnd.docker.image.rootfs.foreign.diff.tar.gzip",
})
_ZSTD = frozenset({
    LAYER_ZSTD,
    "application/vnd.oci.image.layer.nondistributable.v1.tar+zstd",
})
LAYER_MEDIA_TYPES = _UNCOMPRESSED | _GZIP | _ZSTD


class ImageError(Exception):
    """Base class for image loading failures."""


class MalformedManifestError(ImageError):
    pass


class DigestMismatchError(ImageError):
    """A blob or layer does not hash to its declared digest."""


class UnsupportedMediaTypeError(ImageError):
    pass


class TruncatedStreamError(ImageError):
    pass


class PlatformUnavailableError(ImageError):
    pass


class SourceKind(str, enum.Enum):
    OCI_LAYOUT = "oci-layout-dir"
    DOCKER_SAVE = "docker-save-tar"
    REGISTRY = "registry-reference"


@dataclass(frozen=True)
class ImageSource:
    kind: SourceKind
    locator: str

    def __post_init__(self):
        if not self.locator:
            raise ValueError("image locator must be non-empty")
        object.__setattr__(self, "kind", SourceKind(self.kind))

    @classmethod
    def guess(cls, locator: str) -> "ImageSource":
        """Pick a loader from what *locator* looks like.

        Existing directories are OCI layouts, existing files are ``docker
        save`` archives. Anything path-like that does not exist is still
        treated as a local file so the error is "not found" rather than a
        failed pull.
        """
        if os.path.isdir(locator):
            return cls(SourceKind.OCI_LAYOUT, locator)
        if os.path.exists(locator) or _looks_like_path(locator):
            return cls(SourceKind.DOCKER_SAVE, locator)
        return cls(SourceKind.REGISTRY, locator)


def _looks_like_path(locator: str) -> bool:
    return (
        locator.startswith(("/", "./", "../", "~"))
        or locator.endswith((".tar", ".tar.gz", ".tgz"))
        or os.sep in locator and not re.match(r"^[\w.-]+(:\d+)?/", locator)
    )


@dataclass(frozen=True)
class Descriptor:
    digest: str  # 64 lowercase hex chars, no algorithm prefix
    media_type: str
    size: int
    platform: str | None = None
    annotations: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def ref(self) -> str:
        return "sha256:" + self.digest

    @classmethod
    def from_json(cls, obj: dict) -> "Descriptor":
        try:
            digest = parse_digest(obj["digest"])
            media_type = obj.get("mediaType", "")
            size = int(obj.get("size", -1))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifestError(f"bad descriptor {obj!r}") from exc
        platform = None
        if isinstance(obj.get("platform"), dict):
            p = obj["platform"]
            platform = f"{p.get('os', '')}/{p.get('architecture', '')}"
            if p.get("variant"):
                platform += "/" + p["variant"]
        return cls(digest, media_type, size, platform, dict(obj.get("annotations") or {}))


def parse_digest(value: str) -> str:
    algo, _, hexpart = str(value).partition(":")
    if algo != "sha256" or not _HEX64.match(hexpart):
        raise MalformedManifestError(f"unsupported or malformed digest: {value!r}")
    return hexpart


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class Manifest:
    schema_version: int
    config: Descriptor
    layers: tuple[Descriptor, ...]
    media_type: str = OCI_MANIFEST

    @classmethod
    def from_json(cls, obj: Any) -> "Manifest":
        if not isinstance(obj, dict):
            raise MalformedManifestError("manifest is not a JSON object")
        if obj.get("schemaVersion") != 2:
            raise MalformedManifestError(f"unsupported schemaVersion {obj.get('schemaVersion')!r}")
        if "config" not in obj or not obj.get("layers"):
            raise MalformedManifestError("manifest has no config or no layers")
        return cls(
            schema_version=2,
            config=Descriptor.from_json(obj["config"]),
            layers=tuple(Descriptor.from_json(layer) for layer in obj["layers"]),
            media_type=obj.get("mediaType", OCI_MANIFEST),
        )


@dataclass(frozen=True)
class HistoryEntry:
    created_by: str
    empty_layer: bool = False
    comment: str = ""


@dataclass(frozen=True)
class ImageConfig:
    os: str
    architecture: str
    env: tuple[str, ...]
    history: tuple[HistoryEntry, ...]
    diff_ids: tuple[str, ...]
    labels: dict = field(default_factory=dict, compare=False, hash=False)

    @classmethod
    def from_json(cls, obj: Any) -> "ImageConfig":
        if not isinstance(obj, dict):
            raise MalformedManifestError("config is not a JSON object")
        rootfs = obj.get("rootfs") or {}
        diff_ids = tuple(parse_digest(d) for d in rootfs.get("diff_ids") or [])
        runtime = obj.get("config") or {}
        history = tuple(
            HistoryEntry(
                created_by=h.get("created_by") or "",
                empty_layer=bool(h.get("empty_layer", False)),
                comment=h.get("comment") or "",
            )
            for h in obj.get("history") or []
            if isinstance(h, dict)
        )
        return cls(
            os=obj.get("os", ""),
            architecture=obj.get("architecture", ""),
            env=tuple(runtime.get("Env") or ()),
            history=history,
            diff_ids=diff_ids,
            labels=dict(runtime.get("Labels") or {}),
        )


@dataclass(frozen=True)
class LoadedImage:
    manifest: Manifest
    config: ImageConfig
    layers: tuple[bytes, ...]
    layer_to_history: dict
    name: str = ""
    digest: str = ""  # manifest digest
    history_consistent: bool = True

    def __post_init__(self):
        if len(self.layers) != len(self.manifest.layers):
            raise MalformedManifestError("layer count differs from manifest")


def history_alignment(history, layer_count: int) -> tuple[dict, bool]:
    """Map layer positions to history positions by skipping empty-layer entries.

    Returns the mapping and whether the history accounts for every layer
    exactly.
    """
    mapping = {}
    layer = 0
    for position, entry in enumerate(history):
        if entry.empty_layer:
            continue
        if layer < layer_count:
            mapping[layer] = position
        layer += 1
    return mapping, layer == layer_count


def decompress_layer(blob: bytes, media_type: str) -> bytes:
    """Return the uncompressed tar stream for a layer blob."""
    if media_type in _UNCOMPRESSED:
        out = blob
    elif media_type in _GZIP:
        try:
            out = gzip.decompress(blob)
        except (EOFError, zlib.error, OSError) as exc:
            raise TruncatedStreamError(f"gzip layer is corrupt or truncated: {exc}") from exc
    elif media_type in _ZSTD:
        try:
            with zstandard.ZstdDecompressor().stream_reader(io.BytesIO(blob)) as reader:
                out = reader.read()
        except zstandard.ZstdError as exc:
            raise TruncatedStreamError(f"zstd layer is corrupt or truncated: {exc}") from exc
    else:
        raise UnsupportedMediaTypeError(f"unsupported layer media type: {media_type!r}")
    if len(out) % 512:
        raise TruncatedStreamError("tar stream length is not a multiple of 512")
    return out


def sniff_layer_media_type(blob: bytes) -> str:
    if blob[:2] == b"\x1f\x8b":
        return DOCKER_LAYER_GZIP
    if blob[:4] == b"\x28\xb5\x2f\xfd":
        return LAYER_ZSTD
    return LAYER_TAR


class _DirStore:
    def __init__(self, root):
        self.root = root

    def read(self, name):
        try:
            with open(os.path.join(self.root, name), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            raise MalformedManifestError(f"missing {name} in {self.root}") from None

    def exists(self, name):
        return os.path.exists(os.path.join(self.root, name))


class _TarStore:
    def __init__(self, path):
        try:
            self._tar = tarfile.open(path)
        except (tarfile.TarError, OSError) as exc:
            raise MalformedManifestError(f"{path}: not a readable tar archive ({exc})") from exc
        self._members = {os.path.normpath(m.name): m for m in self._tar.getmembers() if m.isfile()}

    def read(self, name):
        member = self._members.get(os.path.normpath(name))
        if member is None:
            raise MalformedManifestError(f"missing {name} in archive")
        return self._tar.extractfile(member).read()

    def exists(self, name):
        return os.path.normpath(name) in self._members

    def close(self):
        self._tar.close()


def _read_json(store, name):
    try:
        return json.loads(store.read(name))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedManifestError(f"{name} is not valid JSON") from exc


def _read_blob(store, desc: Descriptor) -> bytes:
    data = store.read(f"blobs/sha256/{desc.digest}")
    actual = sha256_hex(data)
    if actual != desc.digest:
        raise DigestMismatchError(f"blob {desc.digest} hashes to {actual}")
    return data


def select_manifest(store, descriptors, platform: str = DEFAULT_PLATFORM) -> Descriptor:
    """Resolve (possibly nested) index descriptors to a single image manifest."""
    candidates = []
    for desc in descriptors:
        if desc.media_type in INDEX_TYPES:
            nested = _read_json(store, f"blobs/sha256/{desc.digest}")
            inner = [Descriptor.from_json(d) for d in nested.get("manifests") or []]
            try:
                candidates.append(select_manifest(store, inner, platform))
            except PlatformUnavailableError:
                continue
        elif desc.media_type in MANIFEST_TYPES or not desc.media_type:
            candidates.append(desc)
        else:
            raise UnsupportedMediaTypeError(f"unsupported manifest media type: {desc.media_type!r}")
    if len(candidates) == 1 and candidates[0].platform is None:
        return candidates[0]
    matching = [d for d in candidates if d.platform and _platform_matches(d.platform, platform)]
    if matching:
        return matching[0]
    raise PlatformUnavailableError(f"no manifest for platform {platform}")


def _platform_matches(have: str, want: str) -> bool:
    h = have.split("/")
    w = want.split("/")
    return h[:2] == w[:2] and (len(w) < 3 or h[2:3] == w[2:3])


def _load_layers(store, manifest, config, jobs, reader):
    if len(config.diff_ids) != len(manifest.layers):
        raise MalformedManifestError(
            f"{len(manifest.layers)} layers but {len(config.diff_ids)} diff_ids"
        )

    def one(i):
        desc = manifest.layers[i]
        blob = reader(desc)
        layer = decompress_layer(blob, desc.media_type)
        diff_id = desc.digest if layer is blob else sha256_hex(layer)
        if diff_id != config.diff_ids[i]:
            raise DigestMismatchError(f"layer {i} diff_id {diff_id} != {config.diff_ids[i]}")
        return layer

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return tuple(pool.map(one, range(len(manifest.layers))))


def _load_oci(store, platform, jobs):
    index = _read_json(store, "index.json")
    descs = [Descriptor.from_json(d) for d in index.get("manifests") or []]
    if not descs:
        raise MalformedManifestError("index.json lists no manifests")
    chosen = select_manifest(store, descs, platform)
    raw = store.read(f"blobs/sha256/{chosen.digest}")
    if sha256_hex(raw) != chosen.digest:
        raise DigestMismatchError(f"manifest {chosen.digest} does not match its content")
    manifest = Manifest.from_json(json.loads(raw))
    for desc in manifest.layers:
        if desc.media_type not in LAYER_MEDIA_TYPES:
            raise UnsupportedMediaTypeError(f"unsupported layer media type: {desc.media_type!r}")
    config = ImageConfig.from_json(json.loads(_read_blob(store, manifest.config)))
    layers = _load_layers(store, manifest, config, jobs, lambda d: _read_blob(store, d))
    name = chosen.annotations.get("org.opencontainers.image.ref.name", "")
    if not name:
        for desc in descs:
            name = desc.annotations.get("io.containerd.image.name", "") or desc.annotations.get(
                "org.opencontainers.image.ref.name", "")
            if name:
                break
    return manifest, config, layers, name, chosen.digest


def _load_docker_save(store, jobs):
    entries = _read_json(store, "manifest.json")
    if not isinstance(entries, list) or not entries:
        raise MalformedManifestError("manifest.json must be a non-empty list")
    entry = entries[0]
    try:
        config_raw = store.read(entry["Config"])
        layer_names = list(entry["Layers"])
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError("manifest.json entry lacks Config or Layers") from exc
    if not layer_names:
        raise MalformedManifestError("image has no layers")
    blobs = [store.read(n) for n in layer_names]
    layer_descs = tuple(
        Descriptor(sha256_hex(b), sniff_layer_media_type(b), len(b)) for b in blobs
    )
    config_desc = Descriptor(sha256_hex(config_raw), "application/vnd.docker.container.image.v1+json",
                             len(config_raw))
    manifest = Manifest(2, config_desc, layer_descs, DOCKER_MANIFEST)
    config = ImageConfig.from_json(json.loads(config_raw))
    by_digest = {d.digest: b for d, b in zip(layer_descs, blobs)}
    layers = _load_layers(store, manifest, config, jobs, lambda d: by_digest[d.digest])
    tags = entry.get("RepoTags") or []
    return manifest, config, layers, tags[0] if tags else "", config_desc.digest


def load_image(source: ImageSource | str, platform: str = DEFAULT_PLATFORM, jobs: int = 4,
               **pull_options) -> LoadedImage:
    """Load, decompress and verify every layer of an image."""
    if isinstance(source, str):
        source = ImageSource.guess(source)
    if source.kind is SourceKind.REGISTRY:
        from .registry import pull

        workdir = tempfile.mkdtemp(prefix="layerscope-pull-")
        try:
            layout = pull(source.locator, platform=platform, dest=workdir, jobs=jobs, **pull_options)
            image = load_image(layout, platform=platform, jobs=jobs)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)
        return image

    if not os.path.exists(source.locator):
        raise FileNotFoundError(source.locator)
    if source.kind is SourceKind.OCI_LAYOUT:
        manifest, config, layers, name, digest = _load_oci(_DirStore(source.locator), platform, jobs)
    else:
        store = _TarStore(source.locator)
        try:
            if store.exists("index.json") and store.exists("oci-layout"):
                manifest, config, layers, name, digest = _load_oci(store, platform, jobs)
            else:
                manifest, config, layers, name, digest = _load_docker_save(store, jobs)
        finally:
            store.close()

    mapping, consistent = history_alignment(config.history, len(layers))
    if not consistent:
        log.warning("config history does not account for %d layers", len(layers))
    return LoadedImage(
        manifest=manifest,
        config=config,
        layers=layers,
        layer_to_history=mapping,
        name=name or os.path.basename(os.path.normpath(source.locator)),
        digest=digest,
        history_consistent=consistent,
    )
