"""Command-line interface: detect, analyze, evaluate, replay-verify.

Configuration precedence is flags > config file > defaults. Exit code 0 means
the pipeline completed (regardless of how many bugs were found); 1 means a
user-level error such as an unknown focal method; 2 means an infrastructure
failure, including cassette misses in replay mode.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import analyze_chain, assess_risk
from .errors import CassetteMissError, InfrastructureError, TypeforgeError
from .gateway import MODE_REPLAY, ModelConfig
from .pipeline import RunConfig, detect_project, evaluate_manifest, _write_analysis_artifact
from .project_model import build_call_graph, extract_chains, index_project, sample_representative_chain, write_cache

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INFRA = 2

_CONFIG_KEYS = (
    "project", "mode", "cassette", "max_depth", "refine_budget", "timeout",
    "workers", "out", "runner", "always_arbitrate", "model", "focal",
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--project", help="target project root")
    parser.add_argument("--mode", choices=["live", "record", "replay"], default=None)
    parser.add_argument("--cassette", help="cassette file for record/replay")
    parser.add_argument("--max-depth", type=int, dest="max_depth")
    parser.add_argument("--refine-budget", type=int, dest="refine_budget")
    parser.add_argument("--timeout", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--runner", help="runner command (defaults to the built-in stub)")
    parser.add_argument("--always-arbitrate", action="store_true", default=None,
                        dest="always_arbitrate")
    parser.add_argument("--model", help="model id override")
    parser.add_argument("--config", help="JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="typeforge",
        description="Detect Python type errors via constraint-guided test generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_detect = sub.add_parser("detect", help="run the full pipeline over a project")
    _add_common(p_detect)
    p_detect.add_argument("--focal", help="restrict detection to one focal method")
    p_detect.add_argument("--dry-run", action="store_true", dest="dry_run",
                          help="emit chains and constraints only; no generation or execution")

    p_analyze = sub.add_parser("analyze", help="constraint analysis only for one focal method")
    _add_common(p_analyze)
    p_analyze.add_argument("--focal", required=True)

    p_eval = sub.add_parser("evaluate", help="label buggy/fixed pairs and compute metrics")
    _add_common(p_eval)
    p_eval.add_argument("--manifest", required=True, help="benchmark manifest JSON")

    p_verify = sub.add_parser(
        "replay-verify",
        help="run detect twice in replay mode and verify byte-identical artifacts",
    )
    _add_common(p_verify)
    p_verify.add_argument("--focal")
    return parser


def _load_file_config(path: str | None) -> dict:
    if not path:
        return {}
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(payload) - set(_CONFIG_KEYS)
    if unknown:
        raise TypeforgeError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return payload


def _merged(args: argparse.Namespace) -> dict:
    merged = {
        "mode": MODE_REPLAY,
        "max_depth": 5,
        "refine_budget": 1,
        "timeout": 60.0,
        "workers": 1,
        "out": "out",
        "always_arbitrate": False,
    }
    merged.update(_load_file_config(getattr(args, "config", None)))
    for key in _CONFIG_KEYS + ("dry_run",):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _run_config(merged: dict) -> RunConfig:
    if not merged.get("project"):
        raise TypeforgeError("--project is required")
    model = ModelConfig.from_env()
    if merged.get("model"):
        model = ModelConfig(
            model_id=merged["model"],
            temperature=model.temperature,
            max_tokens=model.max_tokens,
            timeout_s=model.timeout_s,
        )
    return RunConfig(
        project_root=Path(merged["project"]),
        out_dir=Path(merged["out"]),
        mode=merged["mode"],
        cassette_path=Path(merged["cassette"]) if merged.get("cassette") else None,
        model=model,
        max_depth=merged["max_depth"],
        refine_budget=merged["refine_budget"],
        timeout_s=merged["timeout"],
        workers=merged["workers"],
        runner_spec=merged.get("runner"),
        always_arbitrate=merged["always_arbitrate"],
        dry_run=bool(merged.get("dry_run")),
        focal=merged.get("focal"),
    )


def cmd_detect(args: argparse.Namespace) -> int:
    config = _run_config(_merged(args))
    report = detect_project(config)
    bugs = report.detected_bugs
    print(f"detect: {len(report.records)} method(s) processed, {len(bugs)} bug(s) reported")
    for bug in sorted(bugs):
        print(f"  bug: {bug}")
    print(f"report: {config.out_dir / 'report.json'}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _run_config(_merged(args))
    index = index_project(config.project_root)
    graph = build_call_graph(index)
    write_cache(index, graph, config.project_root / ".typeforge")
    matches = index.find_function(config.focal)
    if not matches:
        print(f"analyze: no function matching {config.focal!r} in {config.project_root}",
              file=sys.stderr)
        return EXIT_USER_ERROR
    gateway = config.build_gateway()
    for focal in matches:
        chains = extract_chains(graph, focal, config.max_depth)
        chain = sample_representative_chain(chains)
        analysis = analyze_chain(chain, index, gateway)
        analysis.risk = assess_risk(
            chain, analysis.constraints.trigger_seq, analysis.trigger_records, gateway
        )
        _write_analysis_artifact(focal, analysis, config.out_dir)
        print(f"analyze: {focal.id} chain length {len(chain)} risk {analysis.risk.level}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _run_config(_merged(args))
    json_path, md_path = evaluate_manifest(Path(args.manifest), config)
    print(f"evaluate: wrote {json_path} and {md_path}")
    return EXIT_OK


def _artifact_snapshot(out_dir: Path) -> dict[str, bytes]:
    snapshot = {}
    for path in sorted(out_dir.rglob("*")):
        if not path.is_file() or "__pycache__" in path.parts:
            continue
        data = path.read_bytes()
        if path.name == "report.json":
            payload = json.loads(data)
            payload.pop("generated_at", None)
            data = json.dumps(payload, sort_keys=True, indent=2).encode()
        snapshot[str(path.relative_to(out_dir))] = data
    return snapshot


def cmd_replay_verify(args: argparse.Namespace) -> int:
    merged = _merged(args)
    base_out = Path(merged["out"])
    snapshots = []
    for run in (1, 2):
        merged_run = dict(merged)
        merged_run["out"] = str(base_out / f"verify_run{run}")
        config = _run_config(merged_run)
        if config.mode != MODE_REPLAY:
            print("replay-verify requires --mode replay", file=sys.stderr)
            return EXIT_USER_ERROR
        detect_project(config)
        snapshots.append(_artifact_snapshot(config.out_dir))
    first, second = snapshots
    if first.keys() != second.keys():
        only = set(first) ^ set(second)
        print(f"replay-verify: FAIL (file sets differ: {sorted(only)})")
        return EXIT_INFRA
    mismatched = [name for name in first if first[name] != second[name]]
    if mismatched:
        print(f"replay-verify: FAIL (content differs: {mismatched})")
        return EXIT_INFRA
    print(f"replay-verify: PASS ({len(first)} artifact(s) byte-identical across runs)")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "detect": cmd_detect,
        "analyze": cmd_analyze,
        "evaluate": cmd_evaluate,
        "replay-verify": cmd_replay_verify,
    }
    try:
        return handlers[args.command](args)
    except CassetteMissError as exc:
        print(f"cassette miss: {exc.digest}", file=sys.stderr)
        return EXIT_INFRA
    except InfrastructureError as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except TypeforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR


if __name__ == "__main__":
    sys.exit(main())
