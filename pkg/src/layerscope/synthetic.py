"""Synthetic images: a small Debian-like baseline and one variant per obscuration tactic.

The baseline holds four dpkg packages with their file lists, two pip-installed
distributions and an application directory. Each tactic variant adds exactly
the layer (or history change) that realizes that tactic.
"""

from __future__ import annotations

import random

from .imagebuilder import BuiltImage, Layer, Step, build_image

TACTICS = ("OS", "OSPKG", "DEP", "PKG", "URL", "LINK", "ALIAS", "COMPRESS")
SITE = "/usr/lib/python3/site-packages"

OS_RELEASE = """PRETTY_NAME="Debian GNU/Linux 12 (bookworm)"
NAME="Debian GNU/Linux"
VERSION_ID="12"
VERSION="12 (bookworm)"
ID=debian
"""

# name -> (version, arch, files)
DEB_PACKAGES = {
    "base-files": ("12.4+deb12u5", "amd64", ["/etc/issue", "/etc/issue.net", "/etc/host.conf", "/usr/share/base-files/motd"]),
    "bash": ("5.2.15-2+b2", "amd64", ["/usr/bin/bash", "/etc/bash.bashrc", "/etc/skel/.bashrc", "/usr/share/doc/bash/copyright"]),
    "coreutils": ("9.1-1", "amd64", [f"/usr/bin/{b}" for b in ("cat", "cp", "ls", "mv", "rm", "echo", "mkdir", "ln")]),
    "libc6": ("2.36-9+deb12u4", "amd64", ["/usr/lib/x86_64-linux-gnu/libc.so.6", "/usr/lib/x86_64-linux-gnu/libm.so.6",
                                          "/usr/lib64/ld-linux-x86-64.so.2", "/usr/share/doc/libc6/copyright"]),
}
REMOVED_DEB = ("oldtool", "1.0-1")  # config-files residue; must not be reported

PYPI_PACKAGES = {
    "requests": ("2.31.0", [f"requests/{m}.py" for m in (
        "__init__", "api", "adapters", "auth", "compat", "cookies", "exceptions", "models", "sessions", "utils")]),
    "six": ("1.16.0", ["six.py"]),
}

EXPECTED_BASELINE = (
    {("deb", name, ver) for name, (ver, _, _) in DEB_PACKAGES.items()}
    | {("pypi", name, ver) for name, (ver, _) in PYPI_PACKAGES.items()}
)
URL_DOWNLOADS = (
    "https://downloads.example.com/releases/tool-2.4.1-linux-amd64.tar.gz",
    "https://github.com/acme/libfoo.git",
)


def _dpkg_status() -> str:
    stanzas = []
    for name, (version, arch, _) in DEB_PACKAGES.items():
        stanzas.append(f"Package: {name}\nStatus: install ok installed\nPriority: required\n"
                       f"Architecture: {arch}\nVersion: {version}\nDescription: {name} package\n"
                       f" synthetic fixture stanza\n")
    name, version = REMOVED_DEB
    stanzas.append(f"Package: {name}\nStatus: deinstall ok config-files\nArchitecture: amd64\nVersion: {version}\n")
    return "\n".join(stanzas)


def _dpkg_layer() -> Layer:
    files: dict[str, bytes | str] = {
        "/etc/os-release": OS_RELEASE,
        "/etc/debian_version": "12.5\n",
        "/var/lib/dpkg/status": _dpkg_status(),
        "/etc/hostname": "fixture\n",
        "/etc/passwd": "root:x:0:0:root:/root:/bin/bash\n",
    }
    modes = {}
    for name, (_, arch, paths) in DEB_PACKAGES.items():
        listing = sorted({p.rsplit("/", i)[0] for p in paths for i in range(1, p.count("/"))} | set(paths))
        list_name = f"{name}:{arch}.list" if name == "libc6" else f"{name}.list"
        files[f"/var/lib/dpkg/info/{list_name}"] = "/.\n" + "\n".join(listing) + "\n"
        for p in paths:
            files[p] = f"{name} {p}\n".encode() * 8
            if p.startswith("/usr/bin/"):
                modes[p] = 0o755
    return Layer(files=files, modes=modes, symlinks={"/bin": "usr/bin"},
                 created_by="/bin/sh -c #(nop) ADD file:4b03b5f551e3fbdf47ec609712007327828f7530cc3455c43bbcdcaf449a75a9 in / ")


def _record(dist_info: str, paths: list[str]) -> str:
    rows = [f"{p},sha256=AAAA,100" for p in paths]
    rows.append(f"{dist_info}/RECORD,,")
    return "\n".join(rows) + "\n"


def dist_files(name: str, version: str, modules: list[str], site: str = SITE) -> dict:
    dist = f"{name}-{version}.dist-info"
    meta = {
        f"{dist}/METADATA": f"Metadata-Version: 2.1\nName: {name}\nVersion: {version}\nSummary: {name}\n",
        f"{dist}/WHEEL": "Wheel-Version: 1.0\nGenerator: bdist_wheel\nRoot-Is-Purelib: true\nTag: py3-none-any\n",
        f"{dist}/INSTALLER": "pip\n",
        f"{dist}/top_level.txt": modules[0].split("/")[0].removesuffix(".py") + "\n",
    }
    rel = list(modules) + list(meta)
    out = {f"{site}/{m}": f"# {name} {m}\n" for m in modules}
    out.update({f"{site}/{k}": v for k, v in meta.items()})
    out[f"{site}/{dist}/RECORD"] = _record(dist, rel)
    return out


def _pip_layer() -> Layer:
    files = {}
    for name, (version, modules) in PYPI_PACKAGES.items():
        files.update(dist_files(name, version, modules))
    pins = " ".join(f"{n}=={v}" for n, (v, _) in PYPI_PACKAGES.items())
    return Layer(files=files, created_by=f"/bin/sh -c pip install --no-cache-dir {pins}")


def _app_layer() -> Layer:
    reqs = "".join(f"{n}=={v}\n" for n, (v, _) in PYPI_PACKAGES.items())
    return Layer(files={
        "/app/requirements.txt": reqs,
        "/app/main.py": "import requests\nimport six\nprint('ok')\n",
        "/app/README.md": "fixture application\n",
    }, created_by="/bin/sh -c #(nop) COPY dir:9f1c2b7a0e3d in /app ")


def baseline_steps() -> list:
    return [
        _dpkg_layer(),
        Step('/bin/sh -c #(nop)  CMD ["bash"]'),
        Step("/bin/sh -c #(nop)  ENV PYTHONDONTWRITEBYTECODE=1"),
        _pip_layer(),
        Step("/bin/sh -c #(nop) WORKDIR /app"),
        _app_layer(),
        Step('/bin/sh -c #(nop)  CMD ["python3", "main.py"]'),
    ]


def tactic_steps(tactic: str | None) -> list:
    """Baseline build steps with *tactic* applied on top (``None`` for the baseline)."""
    steps = baseline_steps()
    if tactic is None:
        return steps
    if tactic == "OS":
        steps.append(Layer(delete=["/etc/os-release", "/etc/debian_version"],
                           created_by="/bin/sh -c rm -f /etc/os-release /etc/debian_version"))
    elif tactic == "OSPKG":
        steps.append(Layer(delete=["/var/lib/dpkg/status"], created_by="/bin/sh -c rm -f /var/lib/dpkg/status"))
    elif tactic == "DEP":
        steps.append(Layer(delete=["/app/requirements.txt"], created_by="/bin/sh -c rm /app/requirements.txt"))
    elif tactic == "PKG":
        steps.append(Layer(delete=[f"{SITE}/six-1.16.0.dist-info"],
                           created_by=f"/bin/sh -c rm -rf {SITE}/six-1.16.0.dist-info"))
    elif tactic == "URL":
        steps.append(Step("/bin/sh -c #(nop)  ENV TOOL_VERSION=2.4.1"))
        steps.append(Layer(
            files={"/opt/tool/bin/tool": b"\x7fELF tool", "/opt/libfoo/src/foo.c": "int foo(void);\n"},
            modes={"/opt/tool/bin/tool": 0o755},
            created_by="/bin/sh -c cd /opt "
                       "&& wget -q https://downloads.example.com/releases/tool-${TOOL_VERSION}-linux-amd64.tar.gz "
                       "&& tar xzf tool-${TOOL_VERSION}-linux-amd64.tar.gz "
                       "&& git clone https://github.com/acme/libfoo.git /opt/libfoo"))
    elif tactic == "LINK":
        steps.append(Layer(symlinks={"/opt/pylibs": SITE},
                           created_by=f"/bin/sh -c ln -s {SITE} /opt/pylibs"))
    elif tactic == "ALIAS":
        steps.append(Layer(files={"/root/.bashrc": 'alias pip="python3 -m pip"\n'},
                           created_by="/bin/sh -c echo 'alias pip=\"python3 -m pip\"' >> /root/.bashrc"))
    elif tactic == "COMPRESS":
        merged = Layer(created_by="")
        for step in steps:
            if isinstance(step, Layer):
                merged.files.update(step.files)
                merged.modes.update(step.modes)
                merged.symlinks.update(step.symlinks)
        return [merged]
    else:
        raise ValueError(f"unknown tactic {tactic!r}")
    return steps


def tactic_image(tactic: str | None, compression: str = "gzip") -> BuiltImage:
    name = f"fixture/{(tactic or 'baseline').lower()}:1"
    return build_image(tactic_steps(tactic), compression=compression, name=name, history=tactic != "COMPRESS")


def python_app_image(n_packages: int = 3, files_per_package: int = 30) -> BuiltImage:
    files = {}
    for i in range(n_packages):
        name = f"pkg{i}"
        modules = [f"{name}/__init__.py"] + [f"{name}/mod{j:02d}.py" for j in range(files_per_package - 1)]
        files.update(dist_files(name, f"1.{i}.0", modules))
    return build_image([
        Layer(files=files, created_by="/bin/sh -c pip install pkg0 pkg1 pkg2"),
        Layer(files={"/app/main.py": "import pkg0\n"}, created_by="/bin/sh -c #(nop) COPY file:abc in /app/main.py "),
    ], name="fixture/python-app:1")


def node_app_image(n_packages: int = 3, files_per_package: int = 35) -> BuiltImage:
    import json

    files = {}
    lock = {"name": "app", "version": "1.0.0", "lockfileVersion": 3, "packages": {"": {"name": "app"}}}
    deps = {}
    for i in range(n_packages):
        name = f"@acme/lib{i}" if i == 0 else f"lib{i}"
        version = f"2.{i}.1"
        root = f"/app/node_modules/{name}"
        files[f"{root}/package.json"] = json.dumps({"name": name, "version": version})
        for j in range(files_per_package - 1):
            files[f"{root}/lib/file{j:02d}.js"] = f"module.exports = {j};\n"
        lock["packages"][f"node_modules/{name}"] = {"version": version}
        deps[name] = f"^{version}"
    files["/app/package.json"] = json.dumps({"name": "app", "version": "1.0.0", "dependencies": deps})
    files["/app/package-lock.json"] = json.dumps(lock)
    files["/app/index.js"] = "require('lib1');\n"
    return build_image([Layer(files=files, created_by="/bin/sh -c npm ci")], name="fixture/node-app:1")


def bulk_image(total_bytes: int, layers: int = 6, file_size: int = 256 * 1024, seed: int = 0,
               compression: str = "none") -> BuiltImage:
    """Baseline plus *layers* layers of incompressible data files totalling about *total_bytes*."""
    rng = random.Random(seed)
    steps = baseline_steps()
    per_layer = max(1, total_bytes // layers)
    for n in range(layers):
        count = max(1, per_layer // file_size)
        files = {f"/data/l{n}/blob{i:05d}.bin": rng.randbytes(file_size) for i in range(count)}
        steps.append(Layer(files=files, created_by=f"/bin/sh -c #(nop) COPY dir:data{n} in /data/l{n} "))
    return build_image(steps, compression=compression, name=f"fixture/bulk-{total_bytes >> 20}m:1")
