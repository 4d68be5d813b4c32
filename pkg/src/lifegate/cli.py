"""Command-line entry points.

Four subcommands: replay a trace, scan a single skill manifest, check an
agent configuration document, export the detection rules derived from a
knowledge base. Exit codes are uniform: 0 clean, 1 at least one finding at
or above restrict, 2 load or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import EngineConfig, load_config_policy, load_json
from .harness import (
    EXIT_CLEAN,
    EXIT_ERROR,
    EXIT_INTERCEPTED,
    exit_code_for,
    load_trace,
    render_report,
    replay,
)
from .layers.foundation import scan_skill, validate_config
from .model import DirectiveLevel, EngineError
from .rules import RuleSet, default_rules, load_rules_dir
from .session import KnowledgeBase, propagate_knowledge


def _rules_from(args: argparse.Namespace) -> RuleSet:
    if getattr(args, "rules", None):
        return load_rules_dir(args.rules)
    return default_rules()


def _config_from(args: argparse.Namespace) -> EngineConfig:
    if getattr(args, "config", None):
        cfg = EngineConfig.from_file(args.config)
    else:
        cfg = EngineConfig.defaults()
    if getattr(args, "detection_only_input", False):
        cfg = replace(cfg, detection_only_input=True)
    return cfg


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_replay(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    rules = _rules_from(args)
    config = _config_from(args)
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    report = replay(trace, rules=rules, config=config, kb=kb)
    if kb is not None and args.kb:
        kb.save(args.kb)
    _emit(render_report(report, args.format), args.out)
    return exit_code_for(report)


def _cmd_scan_skill(args: argparse.Namespace) -> int:
    manifest = load_json(args.manifest, "skill manifest")
    if not isinstance(manifest, dict):
        raise EngineError(f"{args.manifest}: skill manifest must be an object")
    rules = _rules_from(args)
    config = _config_from(args)
    report, approval = scan_skill(manifest, rules=rules, config=config)
    out = {"report": report.to_dict(), "approval": approval.to_dict()}
    _emit(json.dumps(out, sort_keys=True, indent=2), getattr(args, "out", None))
    if report.directive.level >= DirectiveLevel.RESTRICT:
        return EXIT_INTERCEPTED
    return EXIT_CLEAN


def _cmd_check_config(args: argparse.Namespace) -> int:
    doc = load_json(args.config, "agent config")
    engine_cfg = EngineConfig.defaults()
    if args.policy:
        engine_cfg = replace(engine_cfg, config_policy=load_config_policy(args.policy))
    report, constraints = validate_config(doc, config=engine_cfg)
    out = {"report": report.to_dict(), "constraints": constraints}
    _emit(json.dumps(out, sort_keys=True, indent=2), getattr(args, "out", None))
    if report.directive.level >= DirectiveLevel.RESTRICT:
        return EXIT_INTERCEPTED
    return EXIT_CLEAN


def _cmd_export_derived_rules(args: argparse.Namespace) -> int:
    kb = KnowledgeBase.load(args.kb)
    rules = propagate_knowledge(kb)
    _emit(
        json.dumps([r.to_dict() for r in rules], sort_keys=True, indent=2),
        getattr(args, "out", None),
    )
    return EXIT_CLEAN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifegate",
        description="Lifecycle security engine: replay traces, scan skills, check configs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_replay = sub.add_parser("replay", help="replay a JSONL hook trace")
    p_replay.add_argument("--trace", required=True, help="JSONL trace file")
    p_replay.add_argument("--rules", help="directory of rule pack JSON files")
    p_replay.add_argument("--config", help="engine config JSON file")
    p_replay.add_argument("--kb", help="knowledge base JSONL; read before, written after")
    p_replay.add_argument("--format", choices=("text", "json"), default="text")
    p_replay.add_argument("--out", help="write the report here instead of stdout")
    p_replay.add_argument(
        "--detection-only-input",
        action="store_true",
        help="input layer records findings but never rewrites or blocks",
    )
    p_replay.set_defaults(func=_cmd_replay)

    p_scan = sub.add_parser("scan-skill", help="scan one skill manifest")
    p_scan.add_argument("--manifest", required=True, help="skill manifest JSON file")
    p_scan.add_argument("--rules", help="directory of rule pack JSON files")
    p_scan.add_argument("--config", help="engine config JSON file")
    p_scan.add_argument("--out", help="write the result here instead of stdout")
    p_scan.set_defaults(func=_cmd_scan_skill)

    p_check = sub.add_parser("check-config", help="check an agent config document")
    p_check.add_argument("--config", required=True, help="agent config JSON file")
    p_check.add_argument("--policy", help="unsafe-setting policy JSON file")
    p_check.add_argument("--out", help="write the result here instead of stdout")
    p_check.set_defaults(func=_cmd_check_config)

    p_export = sub.add_parser(
        "export-derived-rules", help="rules derived from a knowledge base"
    )
    p_export.add_argument("--kb", required=True, help="knowledge base JSONL file")
    p_export.add_argument("--out", help="write the rules here instead of stdout")
    p_export.set_defaults(func=_cmd_export_derived_rules)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
