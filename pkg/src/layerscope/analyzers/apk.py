"""Alpine ``apk`` installed database and world file."""

from __future__ import annotations

from .base import Ecosystem, Package, Provenance, View

INSTALLED_PATH = "/lib/apk/db/installed"
WORLD_PATH = "/etc/apk/world"


def parse_apk_installed(content: str, view: View | None = None, source: str = INSTALLED_PATH,
                        warnings: list | None = None) -> list[Package]:
    packages = []
    for block in _blocks(content):
        fields = {}
        files = []
        directory = ""
        for key, value in block:
            if key == "F":
                directory = value.strip("/")
            elif key == "R":
                files.append(f"/{directory}/{value}" if directory else f"/{value}")
            elif key not in fields:
                fields[key] = value
        if not fields.get("P"):
            if warnings is not None:
                warnings.append("apk block without P: skipped")
            continue
        pkg = Package(Ecosystem.APK, fields["P"], fields.get("V") or None, metadata_files={source})
        if fields.get("A"):
            pkg.qualifiers["arch"] = fields["A"]
        if fields.get("o"):
            pkg.qualifiers["origin"] = fields["o"]
        if not pkg.version:
            pkg.notes.add("version-missing")
        if view is None:
            pkg.owned_files.update(files)
        else:
            for path in files:
                real = path if path in view else view.resolve(path)
                if real:
                    pkg.owned_files.add(real)
        packages.append(pkg)
    return packages


def _blocks(content: str):
    block = []
    for line in content.splitlines():
        if not line.strip():
            if block:
                yield block
            block = []
            continue
        key, sep, value = line.partition(":")
        if sep and len(key) == 1:
            block.append((key, value))
    if block:
        yield block


def serialize_apk_installed(packages) -> str:
    out = []
    for pkg in packages:
        lines = [f"P:{pkg.name}"]
        if pkg.version:
            lines.append(f"V:{pkg.version}")
        if pkg.qualifiers.get("arch"):
            lines.append(f"A:{pkg.qualifiers['arch']}")
        directory = None
        for path in sorted(pkg.owned_files):
            head, _, base = path.strip("/").rpartition("/")
            if head != directory:
                lines.append(f"F:{head}")
                directory = head
            lines.append(f"R:{base}")
        out.append("\n".join(lines) + "\n")
    return "\n".join(out)


def parse_world(content: str, source: str = WORLD_PATH) -> list[Package]:
    packages = []
    for token in content.split():
        name = token
        for sep in ("=", "<", ">", "~", "@"):
            name = name.split(sep, 1)[0]
        if name:
            packages.append(Package(Ecosystem.APK, name, None, metadata_files={source},
                                    provenance=Provenance.DECLARED))
    return packages


def analyze(view: View) -> list[Package]:
    warnings: list[str] = []
    packages = []
    text = view.text(INSTALLED_PATH)
    if text is not None:
        packages = parse_apk_installed(text, view, INSTALLED_PATH, warnings)
    world = view.text(WORLD_PATH)
    if world is not None:
        installed = {p.name for p in packages}
        packages += [p for p in parse_world(world) if p.name not in installed]
    for w in warnings:
        view.warn(w)
    return packages
