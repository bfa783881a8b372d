"""Obscuration detection over the per-path file history and build instructions.

A path is interesting when it matches a row of the pattern table. Any later
modification or deletion of such a path is reported. Downloads found in the
reconstructed instructions, links and shell aliases over interesting paths,
and flattened build history are reported alongside.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import posixpath
import re
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .containerfile import ExternalPackageRef, Instruction, Verb, iter_commands, parse_created_by
from .layer_fs import Action, FileEntry, FileHistory, Kind

SCHEMA_VERSION = "1"


class Tactic(str, enum.Enum):
    OS = "OS"
    OSPKG = "OSPKG"
    DEP = "DEP"
    PKG = "PKG"
    URL = "URL"
    LINK = "LINK"
    ALIAS = "ALIAS"
    COMPRESS = "COMPRESS"


TACTIC_ORDER = {t: i for i, t in enumerate(Tactic)}
PATTERN_TACTICS = (Tactic.OS, Tactic.OSPKG, Tactic.DEP, Tactic.PKG)
MISSING_TACTICS = (Tactic.OS, Tactic.OSPKG)


class Status(str, enum.Enum):
    MISSING = "Missing"
    MODIFIED = "Modified"
    DELETED = "Deleted"
    DETECTED = "Detected"


ECOSYSTEM_OF_TYPE = {
    "Any": None, "DPKG": "deb", "RPM": "rpm", "APK": "apk", "Python": "pypi", "Ruby": "gem",
    "Node.js": "npm", "PHP": "composer", "Go": "golang",
}


@dataclass(frozen=True)
class PatternRow:
    tactic: Tactic
    type: str
    pattern: str

    @property
    def ecosystem(self) -> str | None:
        return ECOSYSTEM_OF_TYPE.get(self.type, self.type.lower())

    def matches(self, path: str, is_dir: bool = False) -> bool:
        pattern = self.pattern
        if pattern.endswith("/"):
            # directory fragment: substring of the path (directories get their trailing slash)
            return pattern in (path + "/" if is_dir else path)
        if pattern == "etc-release":
            return posixpath.dirname(path) == "/etc" and path.endswith("-release")
        if "/" in pattern:
            fragment = "/" + pattern.strip("/")
            return path.endswith(fragment) or fragment + "/" in path
        if pattern.startswith("."):
            return posixpath.basename(path).endswith(pattern)
        return pattern in path.split("/")


def _rows(tactic, type_, *patterns):
    return [PatternRow(tactic, type_, p) for p in patterns]


DEFAULT_ROWS: tuple[PatternRow, ...] = tuple(
    _rows(Tactic.OS, "Any", "os-release", "etc-release", "debian_version")
    + _rows(Tactic.OSPKG, "DPKG", "dpkg/status", "var/lib/dpkg")
    + _rows(Tactic.OSPKG, "RPM", "rpm/Packages", "rpmdb.sqlite", "var/lib/yum", "var/cache/yum", "yum.repos.d")
    + _rows(Tactic.OSPKG, "APK", "apk/db/installed", "apk/world")
    + _rows(Tactic.DEP, "Python", "Pipfile", "requirements.txt")
    + _rows(Tactic.DEP, "Ruby", ".gemspec")
    + _rows(Tactic.DEP, "Node.js", "package.json", "package-lock.json", "yarn.lock")
    + _rows(Tactic.DEP, "PHP", "composer.json", "composer.lock")
    + _rows(Tactic.DEP, "Go", "go.sum", "go.mod")
    + _rows(Tactic.PKG, "Python", "dist-info/", "egg-info/", "site-packages/", "dist-packages/")
    + _rows(Tactic.PKG, "Ruby", "gems/")
    + _rows(Tactic.PKG, "Node.js", "node_modules/")
    + _rows(Tactic.PKG, "PHP", "/vendor/")
    + _rows(Tactic.PKG, "Go", "/go/")
)


class PatternFileError(ValueError):
    pass


@dataclass(frozen=True)
class PatternTable:
    rows: tuple[PatternRow, ...] = DEFAULT_ROWS

    def extended(self, rows) -> "PatternTable":
        extra = tuple(r for r in rows if r not in self.rows)
        return PatternTable(self.rows + extra)

    @classmethod
    def load(cls, path: str | Path) -> "PatternTable":
        """Default table plus the rows of a TOML or JSON override file.

        The file maps tactic to type to a list of patterns, e.g.
        ``[DEP]`` / ``Python = ["constraints.txt"]``. Rows are appended; a
        top-level ``replace = true`` drops the defaults instead.
        """
        raw = Path(path).read_bytes()
        try:
            if str(path).endswith(".json"):
                data = json.loads(raw)
            else:
                data = tomllib.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise PatternFileError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise PatternFileError(f"{path}: expected a table of tactics")
        replace = bool(data.pop("replace", False))
        rows = []
        for tactic_name, types in data.items():
            try:
                tactic = Tactic(tactic_name)
            except ValueError:
                raise PatternFileError(f"{path}: unknown tactic {tactic_name!r}") from None
            if tactic not in PATTERN_TACTICS or not isinstance(types, dict):
                raise PatternFileError(f"{path}: {tactic_name} does not take path patterns")
            for type_, patterns in types.items():
                if isinstance(patterns, str):
                    patterns = [patterns]
                rows += [PatternRow(tactic, type_, str(p)) for p in patterns]
        base = cls(()) if replace else cls()
        return base.extended(rows)

    def match(self, path: str, is_dir: bool = False) -> list[PatternRow]:
        found = [row for row in self.rows if row.matches(path, is_dir)]
        if any(r.tactic is Tactic.PKG for r in found):
            # manifests inside installed package trees belong to the package, not the project
            found = [r for r in found if r.tactic is not Tactic.DEP]
        return found


@dataclass(frozen=True)
class ObscurationFinding:
    tactic: Tactic
    status: Status
    path: str | None = None
    layer: int | None = None
    ecosystem: str | None = None
    evidence: str = ""
    annotations: tuple[str, ...] = ()
    digest: str | None = None
    previous_digest: str | None = None

    def sort_key(self):
        return (TACTIC_ORDER[self.tactic], -1 if self.layer is None else self.layer,
                self.path or "", self.status.value, self.evidence)

    def to_json(self) -> dict:
        out = {
            "tactic": self.tactic.value,
            "status": self.status.value,
            "path": self.path,
            "layer": self.layer,
            "ecosystem": self.ecosystem,
            "evidence": self.evidence,
            "annotations": list(self.annotations),
        }
        if self.digest or self.previous_digest:
            out["digest"] = self.digest
            out["previous_digest"] = self.previous_digest
        return out


@dataclass(frozen=True)
class ObscurationReport:
    image: str
    findings: tuple[ObscurationFinding, ...] = ()
    counts: dict = field(default_factory=dict)

    @classmethod
    def build(cls, image: str, findings) -> "ObscurationReport":
        ordered = tuple(sorted(set(findings), key=ObscurationFinding.sort_key))
        counts = {t.value: 0 for t in Tactic}
        for f in ordered:
            counts[f.tactic.value] += 1
        return cls(image, ordered, counts)

    @property
    def is_obscure(self) -> bool:
        return bool(self.findings)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "image": self.image,
            "is_obscure": self.is_obscure,
            "counts": dict(self.counts),
            "findings": [f.to_json() for f in self.findings],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _top_most(findings: list[ObscurationFinding]) -> list[ObscurationFinding]:
    """Drop deletions implied by a deleted ancestor in the same layer."""
    deleted = {(f.tactic, f.layer, f.path) for f in findings if f.status is Status.DELETED}
    out = []
    for f in findings:
        if f.status is Status.DELETED:
            parent = posixpath.dirname(f.path)
            implied = False
            while parent not in ("/", ""):
                if (f.tactic, f.layer, parent) in deleted:
                    implied = True
                    break
                parent = posixpath.dirname(parent)
            if implied:
                continue
        out.append(f)
    return out


def _history_findings(history: FileHistory, table: PatternTable):
    findings = []
    matched_tactics = set()
    for path, events in history.events.items():
        is_dir = any(ev.entry.kind is Kind.DIRECTORY for ev in events)
        rows = table.match(path, is_dir)
        if not rows:
            continue
        matched_tactics.update(r.tactic for r in rows)
        for ev in events:
            if ev.action is Action.ADDED:
                continue
            status = Status.MODIFIED if ev.action is Action.MODIFIED else Status.DELETED
            seen = set()
            for row in rows:
                if row.tactic in seen:
                    continue
                seen.add(row.tactic)
                patterns = ", ".join(r.pattern for r in rows if r.tactic is row.tactic)
                verb = "rewritten" if status is Status.MODIFIED else "removed"
                findings.append(ObscurationFinding(
                    row.tactic, status, path, ev.layer, row.ecosystem,
                    f"{verb} in layer {ev.layer}; matches {patterns}",
                    digest=ev.entry.digest if status is Status.MODIFIED else None,
                    previous_digest=ev.previous_digest if status is Status.MODIFIED else ev.entry.digest,
                ))
    return _top_most(findings), matched_tactics


_TOOLS = frozenset({
    "pip", "pip3", "pipenv", "poetry", "python", "python3", "npm", "npx", "yarn", "pnpm", "node", "gem",
    "bundle", "bundler", "composer", "php", "go", "apt", "apt-get", "dpkg", "apk", "rpm", "yum", "dnf",
    "microdnf", "zypper",
})
_ALIAS = re.compile(r"""\balias\s+([A-Za-z0-9_.:+-]+)=("[^"]*"|'[^']*'|\S+)""")


def _pathlike_hits(table: PatternTable, token: str) -> list[PatternRow]:
    token = token.strip("'\"")
    if not token or token.startswith("-"):
        return []
    return table.match(token) or table.match(token.rstrip("/"), True)


def _link_findings(instr: Instruction, table: PatternTable):
    findings = []
    for command in iter_commands(instr.text):
        while command and (command[0] in ("sudo", "env", "command") or "=" in command[0]):
            command = command[1:]
        if not command or command[0] != "ln":
            continue
        args = [a for a in command[1:] if not a.startswith("-") and a != "|"]
        for arg in args:
            hits = _pathlike_hits(table, arg)
            if hits:
                findings.append(ObscurationFinding(
                    Tactic.LINK, Status.DETECTED, arg, instr.layer, hits[0].ecosystem,
                    f"link over package path: {' '.join(command)}"))
                break
    return findings


def _alias_findings(instr: Instruction, table: PatternTable):
    findings = []
    for m in _ALIAS.finditer(instr.text):
        name, value = m.group(1), m.group(2).strip("'\"")
        words = value.split()
        tool = name in _TOOLS or (words and posixpath.basename(words[0]) in _TOOLS)
        hits = [h for w in words for h in _pathlike_hits(table, w)]
        if tool or hits:
            findings.append(ObscurationFinding(
                Tactic.ALIAS, Status.DETECTED, None, instr.layer, hits[0].ecosystem if hits else None,
                f"alias {name}={value}"))
    return findings


_FLATTEN_MARKERS = ("crane flatten", "merge sha256:", "docker-squash", "--squash")
_FS_VERBS = (Verb.RUN, Verb.COPY, Verb.ADD)


def compress_findings(config, layer_count: int, consistent: bool = True) -> list[ObscurationFinding]:
    """Signs that the layer history was flattened after the build."""
    history = list(config.history) if config is not None else []
    if not history or not any((h.created_by or "").strip() for h in history):
        return [ObscurationFinding(Tactic.COMPRESS, Status.DETECTED, evidence="image config has no build history")]
    texts = [h.created_by or "" for h in history]
    for text in texts:
        for marker in _FLATTEN_MARKERS:
            if marker in text:
                return [ObscurationFinding(Tactic.COMPRESS, Status.DETECTED,
                                           evidence=f"history entry mentions {marker!r}")]
    commands = 0
    for text in texts:
        instr = parse_created_by(text)
        if instr is not None and instr.verb in _FS_VERBS:
            commands += 1
    if layer_count == 1 and commands >= 2:
        return [ObscurationFinding(Tactic.COMPRESS, Status.DETECTED,
                                   evidence=f"1 layer but {commands} filesystem instructions in history")]
    if not consistent:
        return [ObscurationFinding(Tactic.COMPRESS, Status.DETECTED,
                                   evidence=f"history does not account for the {layer_count} layers")]
    return []


def detect(history: FileHistory, squashed: dict[str, FileEntry] | None = None, instrs=(), refs=(),
           *, config=None, image: str = "", patterns: PatternTable | None = None,
           history_consistent: bool = True) -> ObscurationReport:
    table = patterns or PatternTable()
    findings, matched = _history_findings(history, table)
    for tactic in MISSING_TACTICS:
        if tactic not in matched and any(r.tactic is tactic for r in table.rows):
            wanted = ", ".join(r.pattern for r in table.rows if r.tactic is tactic)
            findings.append(ObscurationFinding(tactic, Status.MISSING,
                                               evidence=f"no file matching {wanted} in any layer"))
    for ref in refs:
        findings.append(ObscurationFinding(Tactic.URL, Status.DETECTED, None, ref.layer, "external",
                                           f"{ref.kind.value} {ref.url}"))
    for instr in instrs:
        if instr.verb is Verb.RUN:
            findings += _link_findings(instr, table)
            findings += _alias_findings(instr, table)
    findings += compress_findings(config, history.layer_count, history_consistent)
    return ObscurationReport.build(image, findings)


_VERSION_PART = re.compile(r"\d+|[A-Za-z]+")


def version_key(version: str) -> tuple:
    """Loose ordering key: numeric runs compare as numbers, words sort before them."""
    epoch, _, rest = version.rpartition(":") if ":" in version else ("0", "", version)
    parts = []
    for token in _VERSION_PART.findall(rest):
        parts.append((1, int(token), "") if token.isdigit() else (0, 0, token))
    return (int(epoch) if epoch.isdigit() else 0, tuple(parts))


def classify_false_positive_candidates(report: ObscurationReport, packages) -> ObscurationReport:
    """Annotate Modified findings that are probably harmless; nothing is removed."""
    by_meta: dict[str, list] = {}
    for pkg in packages:
        for meta in pkg.metadata_files:
            by_meta.setdefault(meta, []).append(pkg)
    out = []
    for f in report.findings:
        if f.status is not Status.MODIFIED:
            out.append(f)
            continue
        notes = list(f.annotations)
        if f.digest is not None and f.digest == f.previous_digest:
            notes.append("content-identical")
        elif _upgraded(by_meta.get(f.path, ()), f.layer):
            notes.append("likely-benign-update")
        out.append(dataclasses.replace(f, annotations=tuple(dict.fromkeys(notes))))
    return ObscurationReport(report.image, tuple(out), dict(report.counts))


def _upgraded(packages, layer) -> bool:
    groups: dict[tuple, list] = {}
    for pkg in packages:
        if pkg.version:
            groups.setdefault((pkg.ecosystem, pkg.key[1]), []).append(pkg)
    for versions in groups.values():
        before = [p for p in versions if p.source_layer < layer]
        after = [p for p in versions if p.source_layer == layer]
        if any(version_key(a.version) > version_key(b.version) for a in after for b in before):
            return True
    return False


def render_table(report: ObscurationReport) -> str:
    """Human summary: per-tactic counts by column, then one line per finding.

    Detected findings (URL, LINK, ALIAS, COMPRESS) have no file event and
    are counted under the Missing column; a downloaded package, for one,
    leaves no record in any package database.
    """
    cols = ("Missing", "Modified", "Deleted")
    grid = {t: dict.fromkeys(cols, 0) for t in Tactic}
    for f in report.findings:
        column = "Missing" if f.status in (Status.MISSING, Status.DETECTED) else f.status.value
        grid[f.tactic][column] += 1
    lines = [f"image: {report.image or '-'}   obscure: {'yes' if report.is_obscure else 'no'}",
             f"{'TACTIC':<9}{'Missing':>9}{'Modified':>10}{'Deleted':>9}"]
    for t in Tactic:
        row = grid[t]
        lines.append(f"{t.value:<9}{row['Missing']:>9}{row['Modified']:>10}{row['Deleted']:>9}")
    if report.findings:
        lines.append("")
        lines.append(f"{'TACTIC':<9}{'STATUS':<10}{'LAYER':>5}  {'ECOSYSTEM':<10}DETAIL")
        for f in report.findings:
            layer = "-" if f.layer is None else str(f.layer)
            detail = f.path or f.evidence
            if f.path and f.tactic in (Tactic.LINK,):
                detail = f.evidence
            if f.annotations:
                detail += f"  [{', '.join(f.annotations)}]"
            lines.append(f"{f.tactic.value:<9}{f.status.value:<10}{layer:>5}  {(f.ecosystem or '-'):<10}{detail}")
    return "\n".join(lines) + "\n"


__all__ = [
    "DEFAULT_ROWS", "ExternalPackageRef", "ObscurationFinding", "ObscurationReport", "PatternFileError",
    "PatternRow", "PatternTable", "SCHEMA_VERSION", "Status", "Tactic", "classify_false_positive_candidates",
    "compress_findings", "detect", "render_table", "version_key",
]
