"""Reflective validation of triggered type errors.

Two reviewers (type consistency, semantic validity) each judge the failing
test; a meta-evaluation arbiter weighs their structured verdicts. Parse
failures always degrade toward false_positive: a noisy reviewer must never
promote a crash into a reported bug.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

from . import prompts
from .diagnostics import DiagnosticLog
from .errors import GenerationError
from .gateway import Conversation, LLMGateway
from .harness import RunResult
from .testgen import GeneratedTest, _usable_test_source
from .textutil import extract_json_object

DECISION_TRUE_POSITIVE = "true_positive"
DECISION_FALSE_POSITIVE = "false_positive"
DECISIONS = (DECISION_TRUE_POSITIVE, DECISION_FALSE_POSITIVE)

CONFIDENCE_LEVELS = ("high", "medium", "low")

AGENT_TYPE_CONSISTENCY = "type_consistency"
AGENT_SEMANTIC_VALIDITY = "semantic_validity"

_FALLBACK_SUGGESTIONS = (
    "Review the generated test: construct inputs that satisfy the inferred "
    "type constraints and reach the focal method through its realistic entry point."
)


@dataclass(frozen=True)
class ReflectionVerdict:
    decision: str
    confidence: str
    rationale: str
    suggestions: str = ""

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise ValueError(f"unknown decision {self.decision!r}")
        if self.confidence not in CONFIDENCE_LEVELS:
            raise ValueError(f"unknown confidence {self.confidence!r}")
        if self.decision == DECISION_FALSE_POSITIVE and not self.suggestions:
            raise ValueError("a false_positive verdict must carry suggestions")

    def to_payload(self) -> dict:
        return {
            "decision": self.decision,
            "confidence": self.confidence,
            "rationale": self.rationale,
            "suggestions": self.suggestions,
        }


@dataclass(frozen=True)
class FinalVerdict:
    decision: str
    explanation: str
    suggestions: str = ""

    def __post_init__(self):
        if self.decision not in DECISIONS:
            raise ValueError(f"unknown decision {self.decision!r}")
        if self.decision == DECISION_FALSE_POSITIVE and not self.suggestions:
            raise ValueError("a false_positive verdict must carry suggestions")

    def to_payload(self) -> dict:
        return {
            "decision": self.decision,
            "explanation": self.explanation,
            "suggestions": self.suggestions,
        }


@dataclass(frozen=True)
class FewShotAsset:
    agent: str
    positive_example: str
    negative_example: str

    def __post_init__(self):
        if not self.positive_example or not self.negative_example:
            raise ValueError("few-shot assets need both a true-error and a false-positive example")

    def render(self) -> str:
        return (
            f"### Example: a true type error\n{self.positive_example}\n\n"
            f"### Example: a false positive caused by invalid input\n{self.negative_example}"
        )


def load_few_shot(agent: str, asset_dir=None) -> FewShotAsset:
    """Few-shot examples ship as editable markdown assets, one file per agent."""
    if asset_dir is not None:
        text = (asset_dir / f"{agent}.md").read_text(encoding="utf-8")
    else:
        text = (
            resources.files("typeforge").joinpath(f"assets/reflection/{agent}.md")
        ).read_text(encoding="utf-8")
    positive, negative = _split_examples(text)
    return FewShotAsset(agent=agent, positive_example=positive, negative_example=negative)


def _split_examples(text: str) -> tuple[str, str]:
    positive_lines: list[str] = []
    negative_lines: list[str] = []
    current: list[str] | None = None
    for line in text.splitlines():
        lowered = line.strip().lower()
        if lowered.startswith("## true"):
            current = positive_lines
            continue
        if lowered.startswith("## false"):
            current = negative_lines
            continue
        if current is not None:
            current.append(line)
    return "\n".join(positive_lines).strip(), "\n".join(negative_lines).strip()


def failure_text(run: RunResult) -> str:
    """Render the failure for prompts; basenames keep digests location-stable."""
    from pathlib import PurePath

    lines = [f"{run.exception_class}: {run.message}"]
    for file, line, function in run.frames:
        lines.append(f'  File "{PurePath(file).name}", line {line}, in {function}')
    return "\n".join(lines)


def _parse_verdict(response: str) -> ReflectionVerdict | None:
    payload = extract_json_object(response)
    if payload is None:
        return None
    decision = str(payload.get("decision", "")).strip().lower()
    confidence = str(payload.get("confidence", "")).strip().lower()
    if decision not in DECISIONS or confidence not in CONFIDENCE_LEVELS:
        return None
    rationale = str(payload.get("rationale", "")).strip()
    suggestions = str(payload.get("suggestions", "")).strip()
    if decision == DECISION_FALSE_POSITIVE and not suggestions:
        return None
    return ReflectionVerdict(decision, confidence, rationale, suggestions)


def _run_reflection_agent(
    agent: str,
    constraints_text: str,
    chain_sources: str,
    test: GeneratedTest,
    run: RunResult,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog,
    asset_dir=None,
) -> ReflectionVerdict:
    few_shot = load_few_shot(agent, asset_dir)
    conv = prompts.reflection_conversation(
        agent, few_shot.render(), constraints_text, chain_sources, test.source, failure_text(run)
    )
    response = gateway.complete(conv)
    verdict = _parse_verdict(response)
    if verdict is None:
        diagnostics.add("verdict-reprompt", f"{agent}: unparseable verdict")
        conv.append("assistant", response)
        conv.append(
            "user",
            "That answer was not a valid verdict object. Respond with exactly one "
            "JSON object containing decision, confidence, rationale and suggestions.",
        )
        response = gateway.complete(conv)
        verdict = _parse_verdict(response)
    if verdict is None:
        diagnostics.add(
            "verdict-defaulted",
            f"{agent}: verdict unusable after retry; defaulting to false_positive/low",
        )
        verdict = ReflectionVerdict(
            decision=DECISION_FALSE_POSITIVE,
            confidence="low",
            rationale="reviewer output could not be parsed",
            suggestions=_FALLBACK_SUGGESTIONS,
        )
    return verdict


def check_type_consistency(
    constraints_text: str,
    chain_sources: str,
    test: GeneratedTest,
    run: RunResult,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
    asset_dir=None,
) -> ReflectionVerdict:
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    return _run_reflection_agent(
        AGENT_TYPE_CONSISTENCY, constraints_text, chain_sources, test, run, gateway, diagnostics, asset_dir
    )


def check_semantic_validity(
    constraints_text: str,
    chain_sources: str,
    test: GeneratedTest,
    run: RunResult,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
    asset_dir=None,
) -> ReflectionVerdict:
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    return _run_reflection_agent(
        AGENT_SEMANTIC_VALIDITY, constraints_text, chain_sources, test, run, gateway, diagnostics, asset_dir
    )


def _merged_suggestions(*verdicts) -> str:
    parts = [v.suggestions for v in verdicts if v.suggestions]
    return "\n".join(dict.fromkeys(parts)) or _FALLBACK_SUGGESTIONS


def meta_evaluate(
    v_type: ReflectionVerdict,
    v_sem: ReflectionVerdict,
    constraints_text: str,
    chain_sources: str,
    gateway: LLMGateway,
    always_arbitrate: bool = False,
    diagnostics: DiagnosticLog | None = None,
) -> FinalVerdict:
    """Weighted voting: the arbiter sees both confidence-labeled verdicts.

    When both reviewers agree at high confidence the arbiter call is skipped
    and the shared decision adopted (disable with always_arbitrate).
    """
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    if (
        not always_arbitrate
        and v_type.decision == v_sem.decision
        and v_type.confidence == "high"
        and v_sem.confidence == "high"
    ):
        return FinalVerdict(
            decision=v_type.decision,
            explanation="both reflection agents agree at high confidence",
            suggestions=_merged_suggestions(v_type, v_sem)
            if v_type.decision == DECISION_FALSE_POSITIVE
            else "",
        )
    verdicts_text = (
        f"Type consistency agent:\n{v_type.to_payload()}\n\n"
        f"Semantic validity agent:\n{v_sem.to_payload()}"
    )
    conv = prompts.arbiter_conversation(verdicts_text, constraints_text, chain_sources)
    response = gateway.complete(conv)
    payload = extract_json_object(response)
    if payload is not None:
        decision = str(payload.get("decision", "")).strip().lower()
        if decision in DECISIONS:
            suggestions = str(payload.get("suggestions", "")).strip()
            if decision == DECISION_FALSE_POSITIVE and not suggestions:
                suggestions = _merged_suggestions(v_type, v_sem)
            return FinalVerdict(
                decision=decision,
                explanation=str(payload.get("explanation", "")).strip(),
                suggestions=suggestions if decision == DECISION_FALSE_POSITIVE else suggestions,
            )
    diagnostics.add("arbiter-defaulted", "arbiter output unparseable; adopting false_positive")
    return FinalVerdict(
        decision=DECISION_FALSE_POSITIVE,
        explanation="arbiter output could not be parsed; defaulting to the lower-risk decision",
        suggestions=_merged_suggestions(v_type, v_sem),
    )


def refine(
    test: GeneratedTest,
    final: FinalVerdict,
    conv: Conversation,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
) -> GeneratedTest:
    """Feed the arbiter's suggestions back into generation for one more try."""
    if final.decision != DECISION_FALSE_POSITIVE:
        raise ValueError("refine applies only to false-positive verdicts")
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    conv.append("user", prompts.refine_request_text(final.suggestions))
    response = gateway.complete(conv)
    source = _usable_test_source(response, test.entry)
    if source is None:
        diagnostics.add("refine-reprompt", f"unusable refinement for {test.entry.id}")
        conv.append("assistant", response)
        conv.append(
            "user",
            "Respond with the complete refined test file in a ```python fenced block.",
        )
        response = gateway.complete(conv)
        source = _usable_test_source(response, test.entry)
        if source is None:
            raise GenerationError(f"no usable refinement produced for {test.entry.id}")
    conv.append("assistant", response)
    return replace(test, source=source, iteration=max(test.iteration + 1, 2))
