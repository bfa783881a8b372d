"""Pull an image over the registry HTTP API into a local OCI layout.

Anonymous bearer tokens and static credentials are supported. Blobs are
verified against their digest before being renamed into place, so the layout
only ever holds content-addressed, checked files; ``index.json`` is written
last.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import requests

from .image_io import (
    DEFAULT_PLATFORM,
    INDEX_TYPES,
    OCI_INDEX,
    DigestMismatchError,
    Descriptor,
    ImageError,
    ImageSource,
    Manifest,
    MalformedManifestError,
    SourceKind,
    parse_digest,
    select_manifest,
    sha256_hex,
)

log = logging.getLogger(__name__)

DOCKER_HUB = "docker.io"
DOCKER_HUB_API = "registry-1.docker.io"
MANIFEST_ACCEPT = ", ".join([
    "application/vnd.oci.image.index.v1+json",
    "application/vnd.oci.image.manifest.v1+json",
    "application/vnd.docker.distribution.manifest.list.v2+json",
    "application/vnd.docker.distribution.manifest.v2+json",
])
_CHUNK = 1 << 20
_LOCAL_HOSTS = ("localhost", "127.0.0.1", "[::1]")
_REPO_COMPONENT = re.compile(r"^[a-z0-9]+(?:(?:[._]|__|-+)[a-z0-9]+)*$")
_TAG = re.compile(r"^[\w][\w.-]{0,127}$")


class RegistryError(ImageError):
    pass


class AuthFailedError(RegistryError):
    pass


class ManifestNotFoundError(RegistryError):
    pass


class InvalidReferenceError(RegistryError, ValueError):
    """Malformed image reference."""


@dataclass(frozen=True)
class ImageReference:
    registry: str
    repository: str
    tag: str | None = "latest"
    digest: str | None = None  # "sha256:<hex>"

    @classmethod
    def parse(cls, text: str) -> "ImageReference":
        if not text or text != text.strip():
            raise InvalidReferenceError(f"malformed reference {text!r}")
        rest, digest = text, None
        if "@" in rest:
            rest, digest = rest.split("@", 1)
            try:
                parse_digest(digest)
            except MalformedManifestError as exc:
                raise InvalidReferenceError(str(exc)) from None
        registry = DOCKER_HUB
        first, sep, remainder = rest.partition("/")
        if sep and ("." in first or ":" in first or first == "localhost"):
            registry, rest = first, remainder
        tag = None
        last_slash = rest.rfind("/")
        colon = rest.rfind(":")
        if colon > last_slash:
            rest, tag = rest[:colon], rest[colon + 1:]
            if not _TAG.match(tag):
                raise InvalidReferenceError(f"malformed tag {tag!r}")
        if registry == DOCKER_HUB and "/" not in rest:
            rest = f"library/{rest}"
        if not rest or not all(_REPO_COMPONENT.match(c) for c in rest.split("/")):
            raise InvalidReferenceError(f"malformed repository in {text!r}")
        if tag is None and digest is None:
            tag = "latest"
        return cls(registry, rest, tag, digest)

    @property
    def api_host(self) -> str:
        return DOCKER_HUB_API if self.registry == DOCKER_HUB else self.registry

    @property
    def target(self) -> str:
        return self.digest or self.tag or "latest"

    def __str__(self):
        out = f"{self.registry}/{self.repository}"
        if self.tag:
            out += f":{self.tag}"
        if self.digest:
            out += f"@{self.digest}"
        return out


def _parse_challenge(header: str) -> tuple[str, dict]:
    scheme, _, params = header.strip().partition(" ")
    fields = dict(re.findall(r'(\w+)="([^"]*)"', params))
    return scheme.lower(), fields


class RegistryClient:
    def __init__(self, ref: ImageReference, username: str | None = None, password: str | None = None,
                 insecure: bool | None = None, session: requests.Session | None = None, timeout: float = 60):
        self.ref = ref
        self.session = session or requests.Session()
        self.auth = (username, password) if username is not None else None
        host = ref.api_host
        plain = insecure if insecure is not None else host.split(":")[0] in _LOCAL_HOSTS or host.startswith("[::1]")
        self.base = f"{'http' if plain else 'https'}://{host}/v2/{ref.repository}"
        self.timeout = timeout
        self._token: str | None = None
        self._basic = False

    def _headers(self, accept=None):
        headers = {}
        if accept:
            headers["Accept"] = accept
        if self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        return headers

    def _authenticate(self, challenge: str) -> None:
        scheme, fields = _parse_challenge(challenge)
        if scheme == "basic":
            if self.auth is None:
                raise AuthFailedError("registry wants basic credentials and none were given")
            self._basic = True
            return
        if scheme != "bearer" or "realm" not in fields:
            raise AuthFailedError(f"unsupported auth challenge: {challenge!r}")
        params = {k: v for k, v in fields.items() if k in ("service", "scope")}
        params.setdefault("scope", f"repository:{self.ref.repository}:pull")
        resp = self.session.get(fields["realm"], params=params, auth=self.auth, timeout=self.timeout)
        if resp.status_code != 200:
            raise AuthFailedError(f"token endpoint returned {resp.status_code}")
        try:
            body = resp.json()
        except ValueError:
            raise AuthFailedError("token endpoint returned non-JSON") from None
        token = body.get("token") or body.get("access_token")
        if not token:
            raise AuthFailedError("token endpoint returned no token")
        self._token = token

    def _get(self, url, accept=None, stream=False):
        for attempt in range(2):
            resp = self.session.get(url, headers=self._headers(accept), stream=stream, timeout=self.timeout,
                                    auth=self.auth if self._basic else None)
            if resp.status_code != 401:
                return resp
            resp.close()
            if attempt or "WWW-Authenticate" not in resp.headers:
                raise AuthFailedError(f"unauthorized: {url}")
            self._authenticate(resp.headers["WWW-Authenticate"])
        raise AuthFailedError(f"unauthorized: {url}")  # pragma: no cover

    def manifest(self, target: str) -> tuple[bytes, str]:
        resp = self._get(f"{self.base}/manifests/{target}", accept=MANIFEST_ACCEPT)
        if resp.status_code == 404:
            raise ManifestNotFoundError(f"manifest not found: {self.ref.repository}@{target}")
        if resp.status_code != 200:
            raise RegistryError(f"manifest request returned {resp.status_code}")
        body = resp.content
        if target.startswith("sha256:") and sha256_hex(body) != parse_digest(target):
            raise DigestMismatchError(f"manifest {target} content does not match its digest")
        media_type = resp.headers.get("Content-Type", "").split(";")[0].strip()
        try:
            media_type = json.loads(body).get("mediaType") or media_type
        except (ValueError, AttributeError):
            raise MalformedManifestError("manifest is not a JSON object") from None
        return body, media_type

    def fetch_blob(self, desc: Descriptor, path: str) -> bool:
        """Download, verify and rename one blob into place; False if it was already there."""
        if os.path.exists(path) and _file_digest(path) == desc.digest:
            return False
        resp = self._get(f"{self.base}/blobs/{desc.ref}", stream=True)
        if resp.status_code != 200:
            resp.close()
            raise RegistryError(f"blob {desc.ref} request returned {resp.status_code}")
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".partial-")
        try:
            h = hashlib.sha256()
            with os.fdopen(fd, "wb") as fh, resp:
                for chunk in resp.iter_content(_CHUNK):
                    h.update(chunk)
                    fh.write(chunk)
            if h.hexdigest() != desc.digest:
                raise DigestMismatchError(f"blob {desc.ref} hashes to sha256:{h.hexdigest()}")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return True


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


class _RemoteStore:
    """Lets the local manifest selector walk nested indexes over HTTP."""

    def __init__(self, client: RegistryClient):
        self.client = client
        self.fetched: dict[str, bytes] = {}

    def read(self, name: str) -> bytes:
        digest = name.rsplit("/", 1)[-1]
        body, _ = self.client.manifest(f"sha256:{digest}")
        self.fetched[digest] = body
        return body


def pull(reference: str | ImageReference, platform: str = DEFAULT_PLATFORM, dest: str | None = None,
         jobs: int = 4, username: str | None = None, password: str | None = None,
         insecure: bool | None = None, session: requests.Session | None = None) -> ImageSource:
    """Materialize *reference* as an OCI layout in *dest*; blobs already present are reused."""
    ref = reference if isinstance(reference, ImageReference) else ImageReference.parse(reference)
    if dest is None:
        dest = tempfile.mkdtemp(prefix="layerscope-layout-")
    client = RegistryClient(ref, username, password, insecure, session)

    body, media_type = client.manifest(ref.target)
    top = Descriptor(sha256_hex(body), media_type, len(body))
    manifests: dict[str, bytes] = {top.digest: body}
    if media_type in INDEX_TYPES:
        index = json.loads(body)
        store = _RemoteStore(client)
        chosen = select_manifest(store, [Descriptor.from_json(d) for d in index.get("manifests") or []], platform)
        manifests = {chosen.digest: client.manifest(chosen.ref)[0]}
        chosen = Descriptor(chosen.digest, chosen.media_type, len(manifests[chosen.digest]), chosen.platform)
    else:
        chosen = Descriptor(top.digest, media_type, len(body), None)
    manifest = Manifest.from_json(json.loads(manifests[chosen.digest]))

    blob_dir = os.path.join(dest, "blobs", "sha256")
    created_dest = not os.path.exists(dest)
    os.makedirs(blob_dir, exist_ok=True)
    written: list[str] = []
    try:
        wanted = [manifest.config] + list(manifest.layers)
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            futures = [(d, pool.submit(client.fetch_blob, d, os.path.join(blob_dir, d.digest))) for d in wanted]
            errors = []
            for desc, fut in futures:
                try:
                    if fut.result():
                        written.append(os.path.join(blob_dir, desc.digest))
                except Exception as exc:  # collect so every worker finishes before cleanup
                    errors.append(exc)
            if errors:
                raise errors[0]
        manifest_path = os.path.join(blob_dir, chosen.digest)
        if not os.path.exists(manifest_path):
            _atomic_write(manifest_path, manifests[chosen.digest])
            written.append(manifest_path)
        _write_index(dest, chosen, manifest, ref, platform)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        if created_dest:
            _remove_empty_tree(dest)
        raise
    log.info("pulled %s (%d layers) into %s", ref, len(manifest.layers), dest)
    return ImageSource(SourceKind.OCI_LAYOUT, dest)


def _atomic_write(path: str, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), prefix=".partial-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_index(dest, chosen, manifest, ref, platform):
    index_path = os.path.join(dest, "index.json")
    entry = {
        "mediaType": manifest.media_type or chosen.media_type,
        "digest": chosen.ref,
        "size": chosen.size,
        "annotations": {"org.opencontainers.image.ref.name": str(ref)},
    }
    os_name, _, arch = platform.partition("/")
    arch, _, variant = arch.partition("/")
    if chosen.platform:
        entry["platform"] = {"os": os_name, "architecture": arch}
        if variant:
            entry["platform"]["variant"] = variant
    index = {"schemaVersion": 2, "mediaType": OCI_INDEX, "manifests": []}
    if os.path.exists(index_path):
        with open(index_path) as fh:
            index = json.load(fh)
    index["manifests"] = [m for m in index.get("manifests", []) if m.get("digest") != chosen.ref] + [entry]
    _atomic_write(os.path.join(dest, "oci-layout"), b'{"imageLayoutVersion": "1.0.0"}')
    _atomic_write(index_path, json.dumps(index, indent=2, sort_keys=True).encode())


def _remove_empty_tree(root):
    for dirpath, _, _ in sorted(os.walk(root), key=lambda w: -len(w[0])):
        try:
            os.rmdir(dirpath)
        except OSError:
            pass
