"""Go modules: ``go.mod``/``go.sum``, the module cache, and binary build info.

Go binaries built with Go 1.18 or later embed their module list as plain
strings right after a 32-byte header that starts with ``\\xff Go buildinf:``.
Older binaries store pointers instead; those are reported, not decoded.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass, field

from .base import Ecosystem, Package, Provenance, View

MAGIC = b"\xff Go buildinf:"
HEADER_SIZE = 32
FLAG_INLINE = 0x2
_MODCACHE = re.compile(r"/pkg/mod/(?!cache/)(?P<module>[^@]+)@(?P<version>v[^/]+)/")


class UnreadableBuildInfo(ValueError):
    pass


@dataclass
class BuildInfo:
    go_version: str
    path: str = ""
    main: tuple[str, str] | None = None
    deps: list[tuple[str, str]] = field(default_factory=list)


def _uvarint(data: bytes, pos: int) -> tuple[int, int]:
    value = shift = 0
    while True:
        if pos >= len(data) or shift > 63:
            raise UnreadableBuildInfo("truncated varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if byte < 0x80:
            return value, pos
        shift += 7


def _read_string(data, pos):
    length, pos = _uvarint(data, pos)
    if pos + length > len(data):
        raise UnreadableBuildInfo("string overruns data")
    return data[pos:pos + length].decode("utf-8", "replace"), pos + length


def read_buildinfo(data: bytes) -> BuildInfo | None:
    """Decode inline build info; ``None`` if *data* has no Go build info at all."""
    pos = data.find(MAGIC)
    pointer_format = False
    while pos >= 0:
        header = data[pos:pos + HEADER_SIZE]
        if len(header) == HEADER_SIZE and header[14] in (4, 8):
            if header[15] & FLAG_INLINE:
                version, nxt = _read_string(data, pos + HEADER_SIZE)
                modinfo, _ = _read_string(data, nxt)
                return parse_modinfo(version, modinfo)
            pointer_format = True
        pos = data.find(MAGIC, pos + 1)
    if pointer_format:
        raise UnreadableBuildInfo("pre-1.18 pointer-based build info")
    return None


def parse_modinfo(go_version: str, modinfo: str) -> BuildInfo:
    # the module text is wrapped in 16-byte sentinels
    if len(modinfo) >= 33 and modinfo[-17] == "\n":
        modinfo = modinfo[16:-16]
    info = BuildInfo(go_version)
    for line in modinfo.splitlines():
        fields = line.split("\t")
        if fields[0] == "path" and len(fields) > 1:
            info.path = fields[1]
        elif fields[0] == "mod" and len(fields) > 2:
            info.main = (fields[1], fields[2])
        elif fields[0] == "dep" and len(fields) > 2:
            info.deps.append((fields[1], fields[2]))
        elif fields[0] == "=>" and len(fields) > 2 and info.deps:
            # replacement of the previous dep; keep the original path, take the replacing version
            path, version = info.deps[-1]
            info.deps[-1] = (path, fields[2] if fields[2] and fields[2] != "(devel)" else version)
    return info


def binary_packages(info: BuildInfo, binary_path: str) -> list[Package]:
    packages = []
    if info.main:
        path, version = info.main
        packages.append(Package(Ecosystem.GOLANG, path, None if version == "(devel)" else version,
                                metadata_files={binary_path}, owned_files={binary_path},
                                provenance=Provenance.BINARY, notes={"main-module"}))
    # only the main module owns the file, keeping ownership disjoint
    for path, version in info.deps:
        packages.append(Package(Ecosystem.GOLANG, path, version or None, metadata_files={binary_path},
                                owned_files=set() if info.main else {binary_path},
                                provenance=Provenance.BINARY))
    return packages


def parse_go_mod(text: str, source: str) -> list[Package]:
    packages = []
    in_block = False
    for raw in text.splitlines():
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        if in_block:
            if line == ")":
                in_block = False
                continue
            parts = line.split()
        elif line.startswith("require"):
            rest = line[len("require"):].strip()
            if rest == "(":
                in_block = True
                continue
            parts = rest.split()
        else:
            continue
        if len(parts) >= 2:
            packages.append(Package(Ecosystem.GOLANG, parts[0], parts[1], metadata_files={source},
                                    provenance=Provenance.DECLARED))
    return packages


def parse_go_sum(text: str, source: str) -> list[Package]:
    seen = set()
    packages = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) < 3 or parts[1].endswith("/go.mod"):
            continue
        if (parts[0], parts[1]) in seen:
            continue
        seen.add((parts[0], parts[1]))
        packages.append(Package(Ecosystem.GOLANG, parts[0], parts[1], metadata_files={source},
                                provenance=Provenance.DECLARED))
    return packages


def _unescape_module(path: str) -> str:
    return re.sub(r"!([a-z])", lambda m: m.group(1).upper(), path)


def module_cache_packages(view: View) -> list[Package]:
    found: dict[tuple[str, str], Package] = {}
    for path in view.paths:
        if "/pkg/mod/" not in path:
            continue
        m = _MODCACHE.search(path)
        if not m or view.entry(path).kind.value == "directory":
            continue
        key = (m.group("module"), m.group("version"))
        pkg = found.get(key)
        if pkg is None:
            root = path[: m.end() - 1]
            pkg = found[key] = Package(Ecosystem.GOLANG, _unescape_module(key[0]), key[1],
                                       metadata_files={root}, notes={"inferred-from-path"})
        pkg.owned_files.add(path)
    return list(found.values())


def analyze(view: View) -> list[Package]:
    packages = []
    for path in view.by_basename("go.mod", "go.sum"):
        if "/pkg/mod/" in path or "/vendor/" in path:
            continue
        text = view.text(path)
        if text is None:
            continue
        parser = parse_go_mod if path.endswith("go.mod") else parse_go_sum
        packages += parser(text, path)
    packages += module_cache_packages(view)
    for path in view.paths:
        entry = view.entry(path)
        if not entry.is_executable or entry.digest not in view.contents:
            continue
        try:
            info = read_buildinfo(view.contents[entry.digest])
        except UnreadableBuildInfo as exc:
            view.warn(f"{path}: go binary with unreadable build info ({exc})")
            continue
        if info is not None:
            packages += binary_packages(info, path)
    return packages


def has_magic(data: bytes) -> int:
    return data.find(MAGIC)
