"""Partial Containerfile recovery from image config history.

The config keeps one ``created_by`` string per build step. From those we
recover instructions, replay ``ENV``/``ARG`` to expand variables, and pick
out software fetched straight from the network (``wget``, ``curl``,
``git clone``, ``ADD <url>``...), which no package database records.
"""

from __future__ import annotations

import dataclasses
import enum
import posixpath
import re
import shlex
from dataclasses import dataclass
from urllib.parse import urlsplit

from .image_io import ImageConfig

_NOP = re.compile(r"^/bin/(?:ba)?sh -c #\(nop\)\s*")
_SHELL = re.compile(r"^/bin/(?:ba)?sh -c\s+")
_BUILDKIT_SUFFIX = re.compile(r"\s*# buildkit\s*$")
# the classic builder prefixes build-arg values: "|2 A=1 B=2 /bin/sh -c make"
_ARG_PREFIX = re.compile(r"^\|(\d+)\s+")
_EXTRA_VERBS = frozenset({"SHELL", "VOLUME", "HEALTHCHECK", "ONBUILD", "STOPSIGNAL", "MAINTAINER"})


class Verb(str, enum.Enum):
    RUN = "RUN"
    COPY = "COPY"
    ADD = "ADD"
    ENV = "ENV"
    ARG = "ARG"
    WORKDIR = "WORKDIR"
    ENTRYPOINT = "ENTRYPOINT"
    CMD = "CMD"
    LABEL = "LABEL"
    EXPOSE = "EXPOSE"
    USER = "USER"
    OTHER = "other"


_VERB_WORDS = frozenset(v.value for v in Verb if v is not Verb.OTHER)


@dataclass(frozen=True)
class Instruction:
    verb: Verb
    text: str
    layer: int | None = None
    created_by: str = ""
    build_args: tuple[tuple[str, str], ...] = ()
    unresolved: tuple[str, ...] = ()

    def __str__(self):
        return self.text if self.verb is Verb.OTHER else f"{self.verb.value} {self.text}"


def _split_build_args(text):
    m = _ARG_PREFIX.match(text)
    if not m:
        return (), text
    rest = text[m.end():]
    args = []
    for _ in range(int(m.group(1))):
        token, _, rest = rest.partition(" ")
        key, _, value = token.partition("=")
        args.append((key, value))
    return tuple(args), rest.lstrip()


def parse_created_by(created_by: str, layer: int | None = None) -> Instruction | None:
    """Parse one history ``created_by`` string; ``None`` if it is blank."""
    text = _BUILDKIT_SUFFIX.sub("", created_by.strip())
    if not text:
        return None
    nop = _NOP.match(text)
    if nop:
        text = text[nop.end():].strip()
        word, _, rest = text.partition(" ")
        if word in _VERB_WORDS:
            return Instruction(Verb(word), rest.strip(), layer, created_by)
        return Instruction(Verb.OTHER, text, layer, created_by)

    word, _, rest = text.partition(" ")
    if word == "RUN":
        text = rest.strip()
    elif word in _VERB_WORDS:
        return Instruction(Verb(word), rest.strip(), layer, created_by)
    elif word in _EXTRA_VERBS or not (_SHELL.match(text) or text.startswith("|")):
        return Instruction(Verb.OTHER, text, layer, created_by)
    args, text = _split_build_args(text)
    text = _SHELL.sub("", text, count=1).strip()
    return Instruction(Verb.RUN, text or created_by.strip(), layer, created_by, args)


def reconstruct(config: ImageConfig) -> list[Instruction]:
    """Instructions recovered from config history, in build order."""
    out = []
    layer = 0
    for entry in config.history:
        index = None
        if not entry.empty_layer:
            index = layer
            layer += 1
        instr = parse_created_by(entry.created_by, index)
        if instr is not None:
            out.append(instr)
    return out


def render(instructions) -> str:
    """Text form of the recovered Containerfile, for audit dumps."""
    lines = []
    for instr in instructions:
        suffix = f"  # layer {instr.layer}" if instr.layer is not None else ""
        lines.append(f"{instr}{suffix}")
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------- interpolation

_VAR = re.compile(
    r"\\\$"
    r"|\$\{(?P<braced>[A-Za-z_]\w*)(?:(?P<op>:?[-+])(?P<word>[^}]*))?\}"
    r"|\$(?P<bare>[A-Za-z_]\w*)"
)


def _expand_plain(text, values, unresolved):
    def sub(m):
        if m.group(0) == "\\$":
            return m.group(0)
        name = m.group("braced") or m.group("bare")
        op = (m.group("op") or "").lstrip(":")
        value = values.get(name)
        if op == "-":
            return value if value else m.group("word")
        if op == "+":
            return m.group("word") if value else ""
        if value is not None:
            return value
        if name not in unresolved:
            unresolved.append(name)
        return m.group(0)

    return _VAR.sub(sub, text)


def expand(text: str, values: dict, unresolved: list | None = None) -> str:
    """Replace ``$VAR`` and ``${VAR}`` outside single quotes.

    Unknown names are left as written and appended to *unresolved*.
    """
    if unresolved is None:
        unresolved = []
    out, buf = [], []
    quote = None
    for ch in text:
        if quote == "'":
            buf.append(ch)
            if ch == "'":
                out.append("".join(buf))
                buf, quote = [], None
            continue
        if ch == "'" and quote is None:
            out.append(_expand_plain("".join(buf), values, unresolved))
            buf, quote = [ch], "'"
            continue
        if ch == '"':
            quote = None if quote == '"' else '"'
        buf.append(ch)
    tail = "".join(buf)
    out.append(tail if quote == "'" else _expand_plain(tail, values, unresolved))
    return "".join(out)


def _assignments(text):
    try:
        tokens = shlex.split(text)
    except ValueError:
        tokens = text.split()
    if tokens and "=" not in tokens[0]:
        # legacy "ENV NAME value with spaces"
        name, _, value = text.strip().partition(" ")
        return [(name, value.strip().strip('"'))]
    return [tuple(t.split("=", 1)) if "=" in t else (t, None) for t in tokens]


def interpolate(instr: Instruction, ctx: dict) -> Instruction:
    """Expand variables in *instr* using *ctx* (name -> value).

    ``ENV`` and ``ARG`` instructions also update *ctx* in place, so calling
    this over instructions in order gives each one the variables defined
    before it. ``ARG`` without a default stays undefined: config history
    never records the value that was passed.
    """
    unresolved: list[str] = []
    values = dict(ctx)
    values.update(instr.build_args)
    text = expand(instr.text, values, unresolved)
    if instr.verb in (Verb.ENV, Verb.ARG):
        for name, value in _assignments(instr.text):
            if value is None:
                continue
            ctx[name] = expand(value, ctx, unresolved)
    return dataclasses.replace(instr, text=text, unresolved=tuple(unresolved))


def interpolate_all(instructions) -> list[Instruction]:
    ctx: dict[str, str] = {}
    return [interpolate(instr, ctx) for instr in instructions]


# ---------------------------------------------------------------- external packages

class RefKind(str, enum.Enum):
    GIT = "git-repository"
    ARCHIVE = "archive"
    BINARY = "binary"
    SCRIPT = "script"


@dataclass(frozen=True)
class ExternalPackageRef:
    url: str
    kind: RefKind
    name: str
    version: str | None = None
    layer: int | None = None


_OPERATORS = frozenset({";", "&&", "||", "|", "&", "(", ")", ";;"})
_URL_SCHEMES = frozenset({"http", "https", "ftp", "git", "ssh", "git+https", "git+ssh", "git+http"})
_ARCHIVE_EXTS = (
    ".tar.gz", ".tgz", ".tar.xz", ".txz", ".tar.bz2", ".tbz2", ".tbz", ".tar.zst", ".tar",
    ".zip", ".whl", ".gem", ".jar", ".deb", ".rpm", ".apk", ".gz", ".xz", ".bz2", ".7z",
)
_SCRIPT_EXTS = (".sh", ".bash", ".py", ".pl", ".rb", ".ps1")
_VERSION_TOKEN = re.compile(r"v?(\d+(?:\.\d+){1,3}(?:[.+~]?(?:alpha|beta|rc|pre|dev|a|b)\.?\d*)?)")
_PRERELEASE_TOKEN = re.compile(r"(?:alpha|beta|rc|pre|dev)\.?\d*")
_PLATFORM_TOKENS = frozenset({
    "linux", "darwin", "macos", "windows", "freebsd", "amd64", "x86_64", "x64", "x86", "i386",
    "386", "arm64", "aarch64", "armv7", "armhf", "arm", "ppc64le", "s390x", "musl", "gnu",
    "static", "unknown", "bin", "binary", "release", "dist", "src", "source",
})
_DOTTED_PLATFORM = re.compile(r"\.(?:linux|darwin|windows|freebsd)(?:[-_.]\w+)*$", re.I)
_GLUED_VERSION = re.compile(r"(?P<name>[A-Za-z]{2,})(?P<version>\d+(?:\.\d+){1,3})")
_PATH_NOISE = frozenset({"archive", "refs", "tags", "heads", "releases", "download", "raw", "files",
                         "latest", "blob", "dist", "-"})
_SHELLS = frozenset({"sh", "bash", "dash", "zsh", "ash"})
_GIT_VALUE_OPTS = frozenset({"-b", "--branch", "--depth", "-o", "--origin", "-c", "--config",
                             "--reference", "--separate-git-dir", "-j", "--jobs", "--filter",
                             "-u", "--upload-pack", "--template"})


def iter_commands(text: str) -> list[list[str]]:
    """Split shell text into simple commands on ``&&``, ``||``, ``;``, ``|`` and friends."""
    lexer = shlex.shlex(text.replace("\\\n", " "), posix=True, punctuation_chars=True)
    lexer.whitespace_split = True
    lexer.commenters = ""
    try:
        tokens = list(lexer)
    except ValueError:
        tokens = text.split()
    commands, current = [], []
    for token in tokens:
        if token in _OPERATORS or set(token) <= set(";&|()"):
            if current:
                commands.append(current)
            current = []
            if token == "|":
                commands.append(["|"])
        else:
            current.append(token)
    if current:
        commands.append(current)
    return commands


def _strip_prefix(command):
    i = 0
    while i < len(command) and (re.match(r"^[A-Za-z_]\w*=", command[i])
                                 or command[i] in ("sudo", "exec", "env", "time", "nohup")):
        i += 1
    return command[i:]


def is_url(token: str) -> bool:
    parts = urlsplit(token)
    return parts.scheme in _URL_SCHEMES and bool(parts.netloc)


def _scp_git(token: str) -> bool:
    return bool(re.match(r"^[\w.-]+@[\w.-]+:[\w./-]+$", token))


def _strip_ext(name: str) -> str:
    lower = name.lower()
    for ext in (".git",) + _ARCHIVE_EXTS + _SCRIPT_EXTS:
        if lower.endswith(ext) and len(name) > len(ext):
            return name[: -len(ext)]
    return name


def url_kind(url: str, piped_to_shell: bool = False) -> RefKind:
    path = urlsplit(url).path.lower() if is_url(url) else url.lower()
    if path.endswith(".git") or url.startswith("git+") or _scp_git(url):
        return RefKind.GIT
    if piped_to_shell or path.endswith(_SCRIPT_EXTS):
        return RefKind.SCRIPT
    if path.endswith(_ARCHIVE_EXTS):
        return RefKind.ARCHIVE
    return RefKind.BINARY


def _version_of(token: str) -> str | None:
    m = _VERSION_TOKEN.fullmatch(token)
    return m.group(1) if m else None


def infer_name_version(url: str) -> tuple[str, str | None]:
    """Guess a package name and version from a download URL.

    The version is the last ``-``, ``_`` or ``/`` delimited token that looks like
    ``1.2`` to ``1.2.3.4`` (``v`` prefix and a pre-release tag allowed); when
    nothing matches the version is left unknown rather than guessed.
    """
    if _scp_git(url):
        path = url.split(":", 1)[1]
    else:
        path = urlsplit(url).path
    segments = [s for s in path.split("/") if s]
    if not segments:
        return (urlsplit(url).hostname or url), None
    stem = _DOTTED_PLATFORM.sub("", _strip_ext(segments[-1]))
    glued = _GLUED_VERSION.fullmatch(stem)
    if glued:
        return glued.group("name"), glued.group("version")
    tokens = re.split(r"[-_]", stem)
    seps = re.findall(r"[-_]", stem)

    version = None
    for i in range(len(tokens) - 1, -1, -1):
        version = _version_of(tokens[i])
        if version:
            if i + 1 < len(tokens) and _PRERELEASE_TOKEN.fullmatch(tokens[i + 1]):
                version += seps[i] + tokens[i + 1]
            name_tokens = tokens[:i]
            break
    else:
        name_tokens = tokens
        for segment in reversed(segments[:-1]):
            version = _version_of(segment)
            if version:
                break

    keep = []
    for token in name_tokens:
        if token.lower() in _PLATFORM_TOKENS and keep:
            break
        keep.append(token)
    name = "".join(keep[:1] + [seps[j] + t for j, t in enumerate(keep[1:])]).strip("-_.")
    if not name:
        for segment in reversed(segments[:-1]):
            if segment.lower() not in _PATH_NOISE and not _version_of(segment):
                name = _strip_ext(segment)
                break
    return name or segments[-1], version


def _ref(url, kind, layer, version=None):
    name, inferred = infer_name_version(url)
    return ExternalPackageRef(url, kind, name, version or inferred, layer)


def _git_clone_refs(command, layer):
    try:
        start = command.index("clone") + 1
    except ValueError:
        return []
    branch = None
    url = None
    i = start
    while i < len(command):
        token = command[i]
        if token in ("-b", "--branch") and i + 1 < len(command):
            branch = command[i + 1]
            i += 2
            continue
        if token.startswith("--branch="):
            branch = token.split("=", 1)[1]
        elif token in _GIT_VALUE_OPTS:
            i += 2
            continue
        elif not token.startswith("-") and url is None:
            url = token
        i += 1
    if url is None or not (is_url(url) or _scp_git(url)):
        return []
    version = None
    if branch:
        version = _version_of(branch) or None
    return [_ref(url, RefKind.GIT, layer, version)]


def _command_refs(command, layer, piped_to_shell):
    command = _strip_prefix(command)
    if not command:
        return []
    tool = posixpath.basename(command[0])
    args = command[1:]
    if tool == "git":
        return _git_clone_refs(args, layer)
    if tool in ("wget", "curl", "fetch", "aria2c"):
        return [_ref(t, url_kind(t, piped_to_shell), layer) for t in args if is_url(t)]
    installers = {"pip", "pip3", "npm", "yarn", "pnpm", "gem", "composer", "pipx", "uv"}
    if tool in installers or (tool.startswith("python") and args[:2] == ["-m", "pip"]):
        return [_ref(t, url_kind(t), layer) for t in args if is_url(t)]
    return []


def extract_external_packages(instructions) -> list[ExternalPackageRef]:
    """Software pulled from URLs or repositories by build instructions."""
    refs: list[ExternalPackageRef] = []
    seen: set[str] = set()

    def add(items):
        for ref in items:
            if ref.url not in seen:
                seen.add(ref.url)
                refs.append(ref)

    for instr in instructions:
        if instr.verb is Verb.ADD:
            tokens = [t for t in instr.text.split() if not t.startswith("--")]
            add(_ref(t, url_kind(t), instr.layer) for t in tokens[:-1] if is_url(t) or _scp_git(t))
        elif instr.verb is Verb.RUN:
            commands = iter_commands(instr.text)
            for i, command in enumerate(commands):
                if command == ["|"]:
                    continue
                piped = (
                    i + 2 < len(commands)
                    and commands[i + 1] == ["|"]
                    and bool(_strip_prefix(commands[i + 2]))
                    and posixpath.basename(_strip_prefix(commands[i + 2])[0]) in _SHELLS
                )
                add(_command_refs(command, instr.layer, piped))
    return refs
