import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from layerscope.analyzers import Provenance
from layerscope.analyzers.golang import (MAGIC, UnreadableBuildInfo, analyze, parse_go_mod, parse_go_sum,
                                         parse_modinfo, read_buildinfo)

from conftest import DATA
from helpers import make_view

GO = os.path.join(DATA, "go")


def toolchain_listing():
    """Go version, main module and deps as printed by ``go version -m`` when the fixture was built."""
    main, deps, version = None, [], None
    with open(os.path.join(GO, "go-version-m.txt"), encoding="utf-8") as fh:
        for line in fh:
            fields = line.strip().split("\t")
            if line.startswith("fixture:"):
                version = line.split(":", 1)[1].strip()
            elif fields[0] == "mod":
                main = (fields[1], fields[2])
            elif fields[0] == "dep":
                deps.append((fields[1], fields[2]))
    return version, main, deps


def fixture_binary():
    with open(os.path.join(GO, "hello-buildinfo"), "rb") as fh:
        return fh.read()


def test_committed_binary_matches_toolchain_listing():
    version, main, deps = toolchain_listing()
    info = read_buildinfo(fixture_binary())
    assert info.go_version == version
    assert info.main == main
    assert info.deps == deps


def test_binary_in_image_yields_modules():
    view = make_view({"/usr/local/bin/hello": fixture_binary()}, modes={"/usr/local/bin/hello": 0o755})
    pkgs = analyze(view)
    _, main, deps = toolchain_listing()
    assert {(p.name, p.version) for p in pkgs} == {(main[0], None)} | set(deps)
    assert all(p.provenance is Provenance.BINARY for p in pkgs)
    owners = [p for p in pkgs if p.owned_files]
    assert [p.name for p in owners] == [main[0]]


def test_non_executable_binary_ignored():
    assert analyze(make_view({"/data/hello": fixture_binary()})) == []


def inline(version, modinfo):
    def varstr(s):
        b = s.encode()
        n, out = len(b), bytearray()
        while n >= 0x80:
            out.append(n & 0x7F | 0x80)
            n >>= 7
        out.append(n)
        return bytes(out) + b
    header = MAGIC + bytes([8, 0x2]) + b"\0" * 16
    return b"\x7fELF" + b"\0" * 100 + header + varstr(version) + varstr(modinfo)


SENTINEL = "0" * 16


def test_inline_with_replacement():
    mod = SENTINEL + "path\tx/cmd\nmod\tx\tv1.0.0\th1:x\ndep\ta/b\tv1.2.0\th1:y\n=>\tc/d\tv1.3.0\th1:z\n" + SENTINEL
    info = read_buildinfo(inline("go1.21.0", mod))
    assert info.main == ("x", "v1.0.0") and info.deps == [("a/b", "v1.3.0")]


def test_pointer_format_is_unreadable():
    data = MAGIC + bytes([8, 0]) + b"\0" * 16 + b"\0" * 64
    with pytest.raises(UnreadableBuildInfo):
        read_buildinfo(data)
    view = make_view({"/bin/old": b"\x7fELF" + data}, modes={"/bin/old": 0o755})
    assert analyze(view) == [] and "unreadable build info" in view.warnings[0]


def test_no_magic_is_not_go():
    assert read_buildinfo(b"\x7fELF" + b"\0" * 4096) is None


def test_modinfo_without_sentinels():
    assert parse_modinfo("go1.22", "mod\tm\tv0.1.0\n").main == ("m", "v0.1.0")


def test_go_mod_and_sum():
    mod = parse_go_mod(open(os.path.join(GO, "src", "go.mod")).read(), "/src/go.mod")
    _, _, deps = toolchain_listing()
    assert [(p.name, p.version) for p in mod] == deps
    assert all(p.provenance is Provenance.DECLARED for p in mod)
    single = parse_go_mod("module m\nrequire golang.org/x/text v0.14.0 // indirect\n", "go.mod")
    assert [(p.name, p.version) for p in single] == [("golang.org/x/text", "v0.14.0")]
    sums = parse_go_sum("a v1.0.0 h1:x=\na v1.0.0/go.mod h1:y=\nb v0.2.0/go.mod h1:z=\n", "go.sum")
    assert [(p.name, p.version) for p in sums] == [("a", "v1.0.0")]


def test_module_cache():
    view = make_view({
        "/root/go/pkg/mod/github.com/!burnt!sushi/toml@v1.3.2/decode.go": "package toml",
        "/root/go/pkg/mod/github.com/!burnt!sushi/toml@v1.3.2/encode.go": "package toml",
        "/root/go/pkg/mod/cache/download/x/@v/v1.0.0.zip": "zip",
    })
    (pkg,) = analyze(view)
    assert (pkg.name, pkg.version, len(pkg.owned_files)) == ("github.com/BurntSushi/toml", "v1.3.2", 2)


@given(st.binary(max_size=200))
def test_buildinfo_reader_total(tail):
    try:
        read_buildinfo(MAGIC + tail)
    except UnreadableBuildInfo:
        pass
