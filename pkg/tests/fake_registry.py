"""Minimal distribution-API registry served from memory, with bearer-token auth."""

import hashlib
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

TOKEN = "test-token"


class FakeRegistry:
    def __init__(self, require_token=True):
        self.manifests = {}  # (repo, reference) -> (body, media_type)
        self.blobs = {}  # digest hex -> bytes
        self.tampered = set()
        self.requests = []
        self.require_token = require_token
        self.token_status = 200
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def host(self):
        return f"127.0.0.1:{self.server.server_address[1]}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()

    def add_image(self, repo, tag, image):
        for digest, data in image.blobs().items():
            self.blobs[digest] = data
        self.add_manifest(repo, image.manifest, image.descriptor()["mediaType"], tag)

    def add_manifest(self, repo, body, media_type, tag=None):
        digest = hashlib.sha256(body).hexdigest()
        self.manifests[(repo, f"sha256:{digest}")] = (body, media_type)
        if tag:
            self.manifests[(repo, tag)] = (body, media_type)

    def blob_requests(self):
        return [p.rsplit(":", 1)[-1] for p in self.requests if "/blobs/" in p]

    def _handler(self):
        registry = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status, body=b"", headers=None):
                self.send_response(status)
                for k, v in (headers or {}).items():
                    self.send_header(k, v)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                url = urlsplit(self.path)
                registry.requests.append(url.path)
                if url.path == "/token":
                    scope = parse_qs(url.query).get("scope", [""])[0]
                    if registry.token_status != 200 or not scope.endswith(":pull"):
                        return self._send(registry.token_status if registry.token_status != 200 else 400)
                    return self._send(200, json.dumps({"token": TOKEN}).encode(),
                                      {"Content-Type": "application/json"})
                if registry.require_token and self.headers.get("Authorization") != f"Bearer {TOKEN}":
                    realm = f"http://{registry.host}/token"
                    return self._send(401, b"", {"WWW-Authenticate": f'Bearer realm="{realm}",service="fake"'})
                m = re.match(r"^/v2/(?P<repo>.+)/(?P<kind>manifests|blobs)/(?P<ref>[^/]+)$", url.path)
                if not m:
                    return self._send(404)
                if m["kind"] == "manifests":
                    found = registry.manifests.get((m["repo"], m["ref"]))
                    if not found:
                        return self._send(404)
                    return self._send(200, found[0], {"Content-Type": found[1]})
                digest = m["ref"].split(":", 1)[-1]
                data = registry.blobs.get(digest)
                if data is None:
                    return self._send(404)
                if digest in registry.tampered:
                    data = data[:-1] + bytes([data[-1] ^ 0xFF])
                return self._send(200, data, {"Content-Type": "application/octet-stream"})

        return Handler
