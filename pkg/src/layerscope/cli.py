"""Command-line front end.

Exit codes: 0 success, 1 fatal load or parse error, 2 usage error,
3 obscuration found (``detect`` only). Machine output goes to ``--output``
(stdout with ``-``); logs and diagnostics always go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .containerfile import render
from .detector import PatternFileError, PatternTable, render_table
from .image_io import DEFAULT_PLATFORM, ImageError
from .pipeline import analyze_image, image_label, result_json
from .registry import pull

EXIT_OK, EXIT_FATAL, EXIT_USAGE, EXIT_OBSCURE = 0, 1, 2, 3
FORMATS = ("spdx-json", "report-json", "table")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jobs(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def _clock(value: str) -> str:
    from .sbom import resolve_clock

    try:
        resolve_clock(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an RFC 3339 timestamp: {value}") from exc
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--platform", default=DEFAULT_PLATFORM, help="os/arch[/variant] to select from an index")
    common.add_argument("--jobs", type=_jobs, default=4, metavar="N", help="parallel workers (default 4)")
    common.add_argument("--insecure", action="store_true", help="use plain http for the registry")
    common.add_argument("-v", "--verbose", action="count", default=0)

    scan_opts = argparse.ArgumentParser(add_help=False)
    scan_opts.add_argument("input", help="OCI layout dir, docker-save / OCI tar, or registry reference")
    scan_opts.add_argument("--output", "-o", default="-", metavar="PATH", help="output file, '-' for stdout")
    scan_opts.add_argument("--patterns", metavar="FILE", help="TOML or JSON pattern table extending the defaults")
    scan_opts.add_argument("--clock", type=_clock, metavar="RFC3339", help="fixed creation time for the SBOM")
    scan_opts.add_argument("--dump-containerfile", metavar="PATH", help="write the reconstructed Containerfile")

    parser = _Parser(prog="layerscope", description="Layer-aware software composition analysis for container images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    scan = sub.add_parser("scan", parents=[common, scan_opts], help="inventory packages and write an SBOM")
    scan.add_argument("--format", choices=FORMATS, default="spdx-json")
    detect = sub.add_parser("detect", parents=[common, scan_opts], help="report obscuration; exit 3 if found")
    detect.add_argument("--format", choices=FORMATS[1:], default="table")
    cov = sub.add_parser("coverage", parents=[common, scan_opts], help="file coverage of the package inventory")
    cov.add_argument("--format", choices=FORMATS[1:], default="report-json")
    cov.add_argument("--metadata-only", action="store_true",
                     help="attribute only metadata files, not package-owned files")

    pl = sub.add_parser("pull", parents=[common], help="materialize a registry image as an OCI layout")
    pl.add_argument("reference")
    pl.add_argument("--dest", required=True, metavar="DIR")
    return parser


def _write(path: str, text: str):
    if path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _status(args, line: str):
    """Human summary: stdout when the document went to a file, stderr otherwise."""
    print(line, file=sys.stderr if args.output == "-" else sys.stdout)


def _credentials() -> dict:
    return {"username": os.environ.get("LAYERSCOPE_USERNAME"), "password": os.environ.get("LAYERSCOPE_PASSWORD")}


def _coverage_table(report) -> str:
    lines = [report.summary(), "", f"{'layer':>5}  {'files':>7}  {'analyzed':>8}"]
    lines += [f"{c.layer:>5}  {c.total:>7}  {c.analyzed:>8}" for c in report.per_layer]
    if report.unattributed_sample:
        lines += ["", "unattributed (sample):"] + [f"  {p}" for p in report.unattributed_sample]
    return "\n".join(lines) + "\n"


def _run_scan(args):
    patterns = None
    if args.patterns:
        if not os.path.isfile(args.patterns):
            raise PatternFileError(f"{args.patterns}: not a file")
        patterns = PatternTable.load(args.patterns)
    result = analyze_image(args.input, platform=args.platform, jobs=args.jobs, patterns=patterns,
                           clock=args.clock, insecure=args.insecure or None, **_credentials())
    if args.dump_containerfile:
        _write(args.dump_containerfile, render(result.instructions))
    return result


def cmd_scan(args) -> int:
    result = _run_scan(args)
    if args.format == "spdx-json":
        _write(args.output, result.sbom.dumps())
    elif args.format == "report-json":
        _write(args.output, _json(result_json(result)))
    else:
        rows = [f"{p.ecosystem.value:<9} {p.name:<40} {p.version or '-':<24} {p.source_layer:>5}"
                f"{'  obscured' if p.obscured else ''}" for p in result.packages]
        header = f"{'ECOSYSTEM':<9} {'NAME':<40} {'VERSION':<24} {'LAYER':>5}"
        _write(args.output, "\n".join([header] + rows) + "\n")
    _status(args, f"{image_label(result.image)}: {len(result.packages)} packages, {result.coverage.summary()}")
    return EXIT_OK


def cmd_detect(args) -> int:
    result = _run_scan(args)
    report = result.report
    _write(args.output, report.dumps() if args.format == "report-json" else render_table(report))
    _status(args, f"{report.image}: {len(report.findings)} obscuration findings")
    return EXIT_OBSCURE if report.is_obscure else EXIT_OK


def cmd_coverage(args) -> int:
    result = _run_scan(args)
    report = result.metadata_coverage if args.metadata_only else result.coverage
    _write(args.output, report.dumps() if args.format == "report-json" else _coverage_table(report))
    _status(args, f"{report.image}: {report.summary()}")
    return EXIT_OK


def cmd_pull(args) -> int:
    source = pull(args.reference, platform=args.platform, dest=args.dest, jobs=args.jobs,
                  insecure=args.insecure or None, **_credentials())
    print(source.locator)
    return EXIT_OK


COMMANDS = {"scan": cmd_scan, "detect": cmd_detect, "coverage": cmd_coverage, "pull": cmd_pull}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return COMMANDS[args.command](args)
    except PatternFileError as exc:
        print(f"layerscope: invalid pattern file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"layerscope: not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_FATAL
    except (ImageError, OSError, ValueError) as exc:
        print(f"layerscope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
