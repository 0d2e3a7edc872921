"""Per-focal-method orchestration: the end-to-end detection pipeline.

For each focal method: sample one representative chain, run both constraint
passes, assess risk, generate one test file for the chain's entry method,
execute it through the runner, and reflect on any triggered type error.
"""

from __future__ import annotations

import ast
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import harness, reflection, testgen
from .analysis import analyze_chain, assess_risk, select_constraints
from .constraints import serialize_constraint
from .diagnostics import DiagnosticLog
from .errors import ChainSkipped, GenerationError, InfrastructureError
from .evaluation import (
    OutcomeLabel,
    PairRecord,
    compute_metrics,
    emit_report,
    label_buggy_pair,
    label_nonbuggy,
    load_manifest,
)
from .gateway import MODE_REPLAY, Cassette, LLMGateway, ModelConfig
from .harness import ExecutionEnv, OutcomeKind, dispatch, execute, runner_cmd_from_spec
from .project_model import (
    DEFAULT_MAX_DEPTH,
    CallGraph,
    FunctionRef,
    InvocationChain,
    SourceIndex,
    build_call_graph,
    extract_chains,
    index_project,
    sample_representative_chain,
    write_cache,
)
from .textutil import slugify

REPORT_SCHEMA_VERSION = 1

STATUS_BUG_REPORTED = "bug-reported"
STATUS_NO_BUG = "no-bug"
STATUS_SKIPPED = "skipped"


@dataclass
class RunConfig:
    project_root: Path
    out_dir: Path
    mode: str = MODE_REPLAY
    cassette_path: Path | None = None
    model: ModelConfig = field(default_factory=ModelConfig.from_env)
    max_depth: int = DEFAULT_MAX_DEPTH
    refine_budget: int = 1
    timeout_s: float = 60.0
    workers: int = 1
    runner_spec: str | None = None
    always_arbitrate: bool = False
    dry_run: bool = False
    focal: str | None = None
    asset_dir: Path | None = None

    def __post_init__(self):
        self.project_root = Path(self.project_root)
        self.out_dir = Path(self.out_dir)
        if self.cassette_path is not None:
            self.cassette_path = Path(self.cassette_path)
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.mode == MODE_REPLAY and (
            self.cassette_path is None or not self.cassette_path.exists()
        ):
            raise InfrastructureError(
                f"replay mode requires an existing cassette (got {self.cassette_path})"
            )

    def build_gateway(self, transport=None) -> LLMGateway:
        model = self.model
        if self.mode == MODE_REPLAY:
            # Replays are a function of the cassette: adopt its recorded model
            # id so digests line up regardless of the caller's environment.
            recorded = Cassette.load(self.cassette_path).metadata.get("model_id")
            if recorded:
                model = ModelConfig(
                    model_id=recorded,
                    temperature=model.temperature,
                    max_tokens=model.max_tokens,
                    timeout_s=model.timeout_s,
                )
        return LLMGateway(
            mode=self.mode,
            config=model,
            cassette_path=self.cassette_path,
            transport=transport,
        )


@dataclass
class MethodRecord:
    focal: FunctionRef
    status: str = STATUS_NO_BUG
    chain: InvocationChain | None = None
    risk_level: str | None = None
    chosen_mode: str | None = None
    executions: list[dict] = field(default_factory=list)
    verdicts: list[dict] = field(default_factory=list)
    reported: bool = False
    final_test_source: str | None = None
    triggering_test_source: str | None = None
    evidence: dict = field(default_factory=dict)
    diagnostics: DiagnosticLog = field(default_factory=DiagnosticLog)

    def to_payload(self) -> dict:
        return {
            "focal": self.focal.id,
            "status": self.status,
            "reported": self.reported,
            "chain": [s.id for s in self.chain.steps] if self.chain else [],
            "risk_level": self.risk_level,
            "chosen_mode": self.chosen_mode,
            "executions": self.executions,
            "verdicts": self.verdicts,
            "evidence": self.evidence,
            "diagnostics": self.diagnostics.to_payload(),
        }


def chain_sources_text(chain: InvocationChain, index: SourceIndex) -> str:
    parts = []
    for step in chain.steps:
        parts.append(f"# {step.id}\n{index.source_of(step)}")
    return "\n\n".join(parts)


def _sanitized(test: testgen.GeneratedTest, diagnostics: DiagnosticLog) -> testgen.GeneratedTest:
    stripped = testgen.strip_assertions(test.source)
    if stripped == test.source:
        try:
            ast.parse(test.source)
        except SyntaxError:
            diagnostics.add(
                "sanitation-skipped", f"{test.entry.id}: test source does not parse"
            )
        return test
    return replace(test, source=stripped)


def detect_method(
    focal: FunctionRef,
    index: SourceIndex,
    graph: CallGraph,
    gateway: LLMGateway,
    config: RunConfig,
) -> MethodRecord:
    record = MethodRecord(focal=focal)
    chains = extract_chains(graph, focal, config.max_depth)
    chain = sample_representative_chain(chains)
    record.chain = chain

    analysis = analyze_chain(chain, index, gateway)
    record.diagnostics.extend(analysis.diagnostics)
    risk = assess_risk(
        chain, analysis.constraints.trigger_seq, analysis.trigger_records, gateway,
        record.diagnostics,
    )
    analysis.risk = risk
    record.risk_level = risk.level
    _write_analysis_artifact(focal, analysis, config.out_dir)

    try:
        chosen_seq, chosen_mode = select_constraints(
            risk, analysis.constraints.trigger_seq, analysis.constraints.normal_seq
        )
    except ChainSkipped as exc:
        record.status = STATUS_SKIPPED
        record.diagnostics.add("chain-skipped", str(exc))
        return record
    record.chosen_mode = chosen_mode

    if config.dry_run:
        record.status = STATUS_SKIPPED
        record.diagnostics.add("dry-run", "generation and execution skipped")
        return record

    entry = chain.entry
    intra = testgen.collect_intra_file_context(entry, index)
    context_text = testgen.format_context(intra, index.source_of(entry))
    conv = testgen.assemble_memory(
        analysis.records_for(chosen_mode),
        chosen_seq,
        context_text,
        entry,
        analysis.focal_rounds.get(chosen_mode),
    )
    testgen.summarize_method(conv, entry, gateway, record.diagnostics)

    try:
        test = testgen.generate_test(conv, entry, chosen_mode, gateway, chain.id, record.diagnostics)
    except GenerationError as exc:
        record.status = STATUS_SKIPPED
        record.diagnostics.add("generation-failed", str(exc))
        return record
    test = _sanitized(test, record.diagnostics)

    method_dir = _method_dir(config, focal)
    env = ExecutionEnv(
        working_dir=config.project_root,
        timeout_s=config.timeout_s,
        runner_cmd=runner_cmd_from_spec(config.runner_spec),
    )
    constraints_text = "\n".join(serialize_constraint(c) for c in chosen_seq)
    sources_text = chain_sources_text(chain, index)

    refinements_left = config.refine_budget
    self_debug_used = False
    while True:
        outcome = execute(test, env, method_dir / f"run_{test.iteration}")
        record.executions.append(
            {
                "iteration": test.iteration,
                "outcome": outcome.kind.value,
                "run": outcome.run.to_payload() if outcome.run else None,
            }
        )
        action = dispatch(outcome, test)
        if action == harness.ACTION_RECORD_NEGATIVE:
            break
        if action == harness.ACTION_RECORD_DIAGNOSTIC:
            record.diagnostics.add(
                "execution-aborted", f"{outcome.kind.value} while running {focal.id}"
            )
            break
        if action == harness.ACTION_DISCARD:
            record.diagnostics.add("test-discarded", "still failing without a type error")
            break
        if action == harness.ACTION_SELF_DEBUG:
            if self_debug_used:
                record.diagnostics.add("test-discarded", "self-debug budget exhausted")
                break
            self_debug_used = True
            try:
                test = testgen.self_debug(test, outcome.run, conv, gateway, record.diagnostics)
            except GenerationError as exc:
                record.diagnostics.add("self-debug-failed", str(exc))
                break
            test = _sanitized(test, record.diagnostics)
            continue

        # Type error triggered: reflect before reporting.
        v_type = reflection.check_type_consistency(
            constraints_text, sources_text, test, outcome.run, gateway,
            record.diagnostics, config.asset_dir,
        )
        v_sem = reflection.check_semantic_validity(
            constraints_text, sources_text, test, outcome.run, gateway,
            record.diagnostics, config.asset_dir,
        )
        final = reflection.meta_evaluate(
            v_type, v_sem, constraints_text, sources_text, gateway,
            config.always_arbitrate, record.diagnostics,
        )
        record.verdicts.append(
            {
                "iteration": test.iteration,
                "type_consistency": v_type.to_payload(),
                "semantic_validity": v_sem.to_payload(),
                "final": final.to_payload(),
            }
        )
        if final.decision == reflection.DECISION_TRUE_POSITIVE:
            record.reported = True
            record.status = STATUS_BUG_REPORTED
            record.triggering_test_source = test.source
            record.evidence = {
                "chain": [s.id for s in chain.steps],
                "chain_sources": sources_text,
                "constraints": [c.to_payload() for c in chosen_seq],
                "test": test.source,
                "run": outcome.run.to_payload() if outcome.run else None,
            }
            break
        if refinements_left <= 0:
            record.diagnostics.add("refinement-exhausted", "no true positive after refinement")
            break
        refinements_left -= 1
        try:
            test = reflection.refine(test, final, conv, gateway, record.diagnostics)
        except GenerationError as exc:
            record.diagnostics.add("refine-failed", str(exc))
            break
        test = _sanitized(test, record.diagnostics)

    record.final_test_source = test.source
    _write_test_artifacts(config, focal, test, record)
    return record


def _method_dir(config: RunConfig, focal: FunctionRef) -> Path:
    return config.out_dir / "tests" / config.project_root.name / slugify(focal.qualified_name)


def _write_analysis_artifact(focal: FunctionRef, analysis, out_dir: Path) -> None:
    target = out_dir / "analysis"
    target.mkdir(parents=True, exist_ok=True)
    path = target / f"{slugify(focal.qualified_name)}.analysis.json"
    path.write_text(
        json.dumps(analysis.to_payload(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _write_test_artifacts(
    config: RunConfig, focal: FunctionRef, test: testgen.GeneratedTest, record: MethodRecord
) -> None:
    method_dir = _method_dir(config, focal)
    method_dir.mkdir(parents=True, exist_ok=True)
    (method_dir / "test_gen.py").write_text(test.source, encoding="utf-8")
    meta = test.to_meta()
    meta.update(
        {
            "focal": focal.id,
            "source_digest": hashlib.sha256(test.source.encode("utf-8")).hexdigest(),
            "verdicts": record.verdicts,
            "status": record.status,
        }
    )
    (method_dir / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


@dataclass
class DetectReport:
    project: str
    records: list[MethodRecord]
    generated_at: str
    project_diagnostics: list[dict] = field(default_factory=list)

    @property
    def detected_bugs(self) -> list[str]:
        return [r.focal.id for r in self.records if r.reported]

    def to_payload(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "generated_at": self.generated_at,
            "project": self.project,
            "detected_bugs": sorted(self.detected_bugs),
            "project_diagnostics": self.project_diagnostics,
            "methods": [r.to_payload() for r in self.records],
        }


def _resolve_focals(index: SourceIndex, selector: str | None) -> list[FunctionRef]:
    if selector is None:
        return index.functions
    return index.find_function(selector)


def detect_project(config: RunConfig, gateway: LLMGateway | None = None) -> DetectReport:
    index = index_project(config.project_root)
    graph = build_call_graph(index)
    write_cache(index, graph, config.project_root / ".typeforge")
    gateway = gateway or config.build_gateway()
    focals = _resolve_focals(index, config.focal)

    def work(focal: FunctionRef) -> MethodRecord:
        return detect_method(focal, index, graph, gateway, config)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(pool.map(work, focals))
    else:
        records = [work(focal) for focal in focals]

    report = DetectReport(
        project=config.project_root.name,
        records=records,
        generated_at=datetime.now(timezone.utc).isoformat(),
        project_diagnostics=index.diagnostics.to_payload() + graph.diagnostics.to_payload(),
    )
    _write_detect_report(report, config.out_dir)
    return report


def _write_detect_report(report: DetectReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_payload(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    lines = [f"# Detection report: {report.project}", ""]
    bugs = report.detected_bugs
    lines.append(f"Detected {len(bugs)} type error(s).")
    for bug in sorted(bugs):
        lines.append(f"- `{bug}`")
    lines.extend(["", "## Methods", ""])
    for record in report.records:
        lines.append(f"- `{record.focal.id}`: {record.status}")
    (out_dir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Benchmark evaluation over buggy/fixed pairs


def _replay_tests_on_snapshot(
    test_source: str, snapshot_root: Path, config: RunConfig, archive: Path
) -> OutcomeKind:
    test = testgen.GeneratedTest(
        source=test_source,
        entry=FunctionRef("replay.py", "replay", (1, 1), False, None, True),
        chain_id="replay",
        mode="normal",
    )
    env = ExecutionEnv(
        working_dir=snapshot_root,
        timeout_s=config.timeout_s,
        runner_cmd=runner_cmd_from_spec(config.runner_spec),
    )
    outcome = execute(test, env, archive)
    return outcome.kind


def evaluate_manifest(
    manifest_path: Path, config: RunConfig, gateway: LLMGateway | None = None
) -> tuple[Path, Path]:
    pairs = load_manifest(manifest_path)
    base = manifest_path.parent
    gateway = gateway or config.build_gateway()
    records: list[PairRecord] = []
    counts: dict[OutcomeLabel, int] = {label: 0 for label in OutcomeLabel}

    for pair in pairs:
        record = PairRecord(pair_id=pair.id, project=pair.project)
        buggy_root = (base / pair.buggy_path).resolve()
        fixed_root = (base / pair.fixed_path).resolve()
        if not buggy_root.is_dir() or not fixed_root.is_dir():
            record.skipped = True
            record.notes = "snapshot path unresolvable"
            records.append(record)
            continue

        pair_out = config.out_dir / "pairs" / slugify(pair.id)
        buggy_config = replace_config(config, buggy_root, pair_out / "buggy", pair.buggy_function)
        buggy_report = detect_project(buggy_config, gateway)
        buggy_records = buggy_report.records
        if not buggy_records:
            record.skipped = True
            record.notes = f"function {pair.buggy_function} not found in buggy snapshot"
            records.append(record)
            continue
        method_record = buggy_records[0]
        record.reported_on_buggy = method_record.reported
        infra = any(
            e["outcome"] in (OutcomeKind.INFRA.value, OutcomeKind.TIMEOUT.value)
            for e in method_record.executions
        )
        record.infra = infra and not method_record.reported

        if method_record.reported:
            test_source = method_record.triggering_test_source or method_record.final_test_source
            kind = _replay_tests_on_snapshot(
                test_source, fixed_root, config, pair_out / "fixed_replay"
            )
            record.reported_on_fixed_replay = kind is OutcomeKind.TYPE_ERROR_TRIGGERED
        else:
            record.reported_on_fixed_replay = False
        buggy_label = label_buggy_pair(
            bool(record.reported_on_buggy), bool(record.reported_on_fixed_replay)
        )
        record.labels.append(buggy_label)
        counts[buggy_label] += 1

        fixed_config = replace_config(config, fixed_root, pair_out / "fixed", pair.fixed_function)
        fixed_report = detect_project(fixed_config, gateway)
        reported_fresh = bool(fixed_report.records and fixed_report.records[0].reported)
        record.reported_on_fixed_fresh = reported_fresh
        nonbug_label = label_nonbuggy(reported_fresh)
        record.labels.append(nonbug_label)
        counts[nonbug_label] += 1
        records.append(record)

    metrics = compute_metrics(counts)
    return emit_report(
        metrics,
        records,
        config.out_dir,
        benchmark=manifest_path.stem,
        generated_at=datetime.now(timezone.utc).isoformat(),
    )


def replace_config(config: RunConfig, root: Path, out_dir: Path, focal: str) -> RunConfig:
    return RunConfig(
        project_root=root,
        out_dir=out_dir,
        mode=config.mode,
        cassette_path=config.cassette_path,
        model=config.model,
        max_depth=config.max_depth,
        refine_budget=config.refine_budget,
        timeout_s=config.timeout_s,
        workers=1,
        runner_spec=config.runner_spec,
        always_arbitrate=config.always_arbitrate,
        dry_run=False,
        focal=focal,
        asset_dir=config.asset_dir,
    )
