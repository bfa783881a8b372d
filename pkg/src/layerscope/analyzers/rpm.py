"""RPM database in the sqlite format (``rpmdb.sqlite``).

Each row of the ``Packages`` table holds one header blob: a big-endian index
count and data length, then 16-byte index entries ``(tag, type, offset,
count)`` pointing into a data store.
"""

from __future__ import annotations

import os
import sqlite3
import struct
import tempfile

from .base import Ecosystem, Package, View

SQLITE_PATHS = ("/var/lib/rpm/rpmdb.sqlite", "/usr/lib/sysimage/rpm/rpmdb.sqlite")
LEGACY_PATHS = ("/var/lib/rpm/Packages", "/var/lib/rpm/Packages.db",
                "/usr/lib/sysimage/rpm/Packages", "/usr/lib/sysimage/rpm/Packages.db")

TAG_NAME = 1000
TAG_VERSION = 1001
TAG_RELEASE = 1002
TAG_EPOCH = 1003
TAG_ARCH = 1022
TAG_OLDFILENAMES = 1027
TAG_DIRINDEXES = 1116
TAG_BASENAMES = 1117
TAG_DIRNAMES = 1118

TYPE_NULL, TYPE_CHAR, TYPE_INT8, TYPE_INT16, TYPE_INT32, TYPE_INT64 = range(6)
TYPE_STRING, TYPE_BIN, TYPE_STRING_ARRAY, TYPE_I18NSTRING = range(6, 10)

_INT_FORMATS = {TYPE_CHAR: "B", TYPE_INT8: "B", TYPE_INT16: "h", TYPE_INT32: "i", TYPE_INT64: "q"}

SQLITE_MAGIC = b"SQLite format 3\x00"
BDB_HASH_MAGIC = 0x00061561
NDB_MAGIC = b"RpmP"


class RpmError(Exception):
    pass


class UnsupportedDbFormatError(RpmError):
    """A BerkeleyDB or NDB rpm database, which is not decoded."""


class MalformedHeaderError(RpmError):
    pass


def _strings(data: bytes, offset: int, count: int) -> list[str]:
    out = []
    pos = offset
    for _ in range(count):
        end = data.find(b"\x00", pos)
        if end < 0:
            raise MalformedHeaderError("unterminated string in header data")
        out.append(data[pos:end].decode("utf-8", "replace"))
        pos = end + 1
    return out


def decode_header(blob: bytes) -> dict[int, object]:
    """Tag -> value for one header blob (ints come back as lists)."""
    if len(blob) < 8:
        raise MalformedHeaderError("header blob too short")
    il, dl = struct.unpack(">ii", blob[:8])
    start = 8 + 16 * il
    if il < 1 or dl < 0 or il > 0xFFFF or start + dl > len(blob):
        raise MalformedHeaderError(f"implausible header sizes il={il} dl={dl}")
    data = blob[start:start + dl]
    tags: dict[int, object] = {}
    for i in range(il):
        tag, typ, offset, count = struct.unpack(">iiii", blob[8 + 16 * i: 24 + 16 * i])
        if offset < 0 or offset > dl:
            raise MalformedHeaderError(f"tag {tag}: offset {offset} outside data")
        if typ in (TYPE_STRING,):
            tags[tag] = _strings(data, offset, 1)[0]
        elif typ in (TYPE_STRING_ARRAY, TYPE_I18NSTRING):
            tags[tag] = _strings(data, offset, count)
        elif typ in _INT_FORMATS:
            fmt = ">" + _INT_FORMATS[typ] * count
            size = struct.calcsize(fmt)
            if offset + size > dl:
                raise MalformedHeaderError(f"tag {tag}: integer array overruns data")
            tags[tag] = list(struct.unpack(fmt, data[offset:offset + size]))
        elif typ == TYPE_BIN:
            tags[tag] = data[offset:offset + count]
    return tags


def _first(value):
    if isinstance(value, list):
        return value[0] if value else None
    return value


def header_to_package(tags: dict, source: str) -> Package | None:
    name = _first(tags.get(TAG_NAME))
    if not name or name == "gpg-pubkey":
        return None
    version = _first(tags.get(TAG_VERSION))
    release = _first(tags.get(TAG_RELEASE))
    epoch = _first(tags.get(TAG_EPOCH))
    full = None
    if version:
        full = f"{version}-{release}" if release else version
        if epoch:
            full = f"{epoch}:{full}"
    pkg = Package(Ecosystem.RPM, name, full, metadata_files={source})
    arch = _first(tags.get(TAG_ARCH))
    if arch:
        pkg.qualifiers["arch"] = arch
    pkg.owned_files.update(file_list(tags))
    return pkg


def file_list(tags: dict) -> list[str]:
    basenames = tags.get(TAG_BASENAMES) or []
    dirnames = tags.get(TAG_DIRNAMES) or []
    indexes = tags.get(TAG_DIRINDEXES) or []
    if basenames and len(indexes) == len(basenames):
        return [dirnames[i] + b for i, b in zip(indexes, basenames) if 0 <= i < len(dirnames)]
    return list(tags.get(TAG_OLDFILENAMES) or [])


def check_format(db: bytes) -> None:
    if db[:16] == SQLITE_MAGIC:
        return
    if db[:4] == NDB_MAGIC:
        raise UnsupportedDbFormatError("rpm NDB database is not supported")
    if len(db) >= 16:
        magic_le, = struct.unpack("<I", db[12:16])
        magic_be, = struct.unpack(">I", db[12:16])
        if BDB_HASH_MAGIC in (magic_le, magic_be):
            raise UnsupportedDbFormatError("rpm BerkeleyDB database is not supported")
    raise UnsupportedDbFormatError("unrecognized rpm database format")


def parse_rpm_db(db: bytes, source: str = SQLITE_PATHS[0], warnings: list | None = None) -> list[Package]:
    check_format(db)
    fd, tmp = tempfile.mkstemp(suffix=".sqlite")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(db)
        conn = sqlite3.connect(f"file:{tmp}?mode=ro", uri=True)
        try:
            rows = conn.execute("SELECT hnum, blob FROM Packages ORDER BY hnum").fetchall()
        except sqlite3.DatabaseError as exc:
            raise RpmError(f"cannot read Packages table: {exc}") from exc
        finally:
            conn.close()
    finally:
        os.unlink(tmp)
    packages = []
    for hnum, blob in rows:
        try:
            pkg = header_to_package(decode_header(bytes(blob)), source)
        except (MalformedHeaderError, struct.error) as exc:
            if warnings is not None:
                warnings.append(f"rpm header {hnum}: {exc}")
            continue
        if pkg is not None:
            packages.append(pkg)
    return packages


def analyze(view: View) -> list[Package]:
    packages = []
    for path in SQLITE_PATHS:
        db = view.read(path)
        if db is None:
            continue
        warnings: list[str] = []
        try:
            found = parse_rpm_db(db, path, warnings)
        except RpmError as exc:
            view.warn(f"{path}: {exc}; rpm packages left unparsed")
            continue
        for pkg in found:
            pkg.owned_files = {p for p in pkg.owned_files if p in view}
        packages += found
        for w in warnings:
            view.warn(w)
    for path in LEGACY_PATHS:
        if path in view:
            db = view.read(path) or b""
            try:
                check_format(db)
            except UnsupportedDbFormatError as exc:
                view.warn(f"{path}: {exc}; rpm packages left unparsed")
    return packages
