"""Constraint inference and backward propagation along an invocation chain.

Two independent passes run over every chain: an error-seeking pass aiming at
inputs that expose type errors, and a non-error-seeking pass describing valid
usage. A risk assessment then picks which sequence guides generation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import prompts
from .constraints import (
    MODE_NORMAL,
    MODE_TRIGGER,
    ChainConstraints,
    MethodConstraint,
    parse_constraint,
)
from .diagnostics import DiagnosticLog
from .errors import ChainAnalysisError, ChainSkipped, ConstraintParseError, ConstraintValidationError
from .gateway import ChatTurn, Conversation, LLMGateway
from .project_model import FunctionRef, InvocationChain, SourceIndex

RISK_HIGH = "high"
RISK_LOW = "low"

REPROMPT_NOTE = (
    "Your previous answer could not be used: {error}\n"
    "Answer again with exactly one valid JSON object in a ```json fenced block."
)


@dataclass(frozen=True)
class AnalysisStepRecord:
    callee: FunctionRef
    callee_constraint: MethodConstraint
    caller: FunctionRef
    caller_constraint: MethodConstraint
    prompt_turns: tuple[ChatTurn, ...]
    response: str

    def __post_init__(self):
        if self.caller_constraint.function != self.caller:
            raise ValueError("caller_constraint must describe the caller")
        if self.callee_constraint.function != self.callee:
            raise ValueError("callee_constraint must describe the callee")

    def to_payload(self) -> dict:
        return {
            "callee": self.callee.id,
            "caller": self.caller.id,
            "callee_constraint": self.callee_constraint.to_payload(),
            "caller_constraint": self.caller_constraint.to_payload(),
            "prompt": [{"role": t.role, "content": t.content} for t in self.prompt_turns],
            "response": self.response,
        }


@dataclass(frozen=True)
class RiskAssessment:
    level: str
    justification: str

    def __post_init__(self):
        if self.level not in (RISK_HIGH, RISK_LOW):
            raise ValueError(f"risk level must be high or low, got {self.level!r}")
        if not self.justification:
            raise ValueError("risk justification must be non-empty")

    def to_payload(self) -> dict:
        return {"level": self.level, "justification": self.justification}


@dataclass
class FocalRound:
    """The focal agent's conversation round, kept for memory assembly."""

    prompt_turns: tuple[ChatTurn, ...]
    response: str


@dataclass
class ChainAnalysis:
    constraints: ChainConstraints
    trigger_records: tuple[AnalysisStepRecord, ...]
    normal_records: tuple[AnalysisStepRecord, ...]
    focal_rounds: dict[str, FocalRound]
    diagnostics: DiagnosticLog = field(default_factory=DiagnosticLog)
    risk: RiskAssessment | None = None

    def records_for(self, mode: str) -> tuple[AnalysisStepRecord, ...]:
        return self.trigger_records if mode == MODE_TRIGGER else self.normal_records

    def to_payload(self) -> dict:
        return {
            "schema_version": 1,
            "chain": [s.to_payload() for s in self.constraints.chain.steps],
            "constraints": self.constraints.to_payload(),
            "trigger_records": [r.to_payload() for r in self.trigger_records],
            "normal_records": [r.to_payload() for r in self.normal_records],
            "risk": self.risk.to_payload() if self.risk else None,
            "diagnostics": self.diagnostics.to_payload(),
        }


def _ask_for_constraint(
    conv: Conversation,
    gateway: LLMGateway,
    target: FunctionRef,
    mode: str,
    declared_params: list[str],
    diagnostics: DiagnosticLog,
) -> tuple[MethodConstraint, str]:
    """One agent call with a single re-prompt on unusable output."""
    response = gateway.complete(conv)
    try:
        return parse_constraint(response, target, mode, declared_params, diagnostics), response
    except (ConstraintParseError, ConstraintValidationError) as exc:
        diagnostics.add("constraint-reprompt", f"{target.id}: {exc}")
        conv.append("assistant", response)
        conv.append("user", REPROMPT_NOTE.format(error=exc))
        response = gateway.complete(conv)
        try:
            return parse_constraint(response, target, mode, declared_params, diagnostics), response
        except (ConstraintParseError, ConstraintValidationError) as exc2:
            raise ChainAnalysisError(
                f"unusable constraint output for {target.id} after retry: {exc2}"
            ) from exc2


def infer_focal_constraints(
    focal: FunctionRef,
    focal_source: str,
    mode: str,
    gateway: LLMGateway,
    declared_params: list[str] | None = None,
    diagnostics: DiagnosticLog | None = None,
) -> tuple[MethodConstraint, FocalRound]:
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    conv = prompts.focal_constraint_conversation(focal, focal_source, mode)
    prompt_turns = conv.turns
    constraint, response = _ask_for_constraint(
        conv, gateway, focal, mode, declared_params or [], diagnostics
    )
    return constraint, FocalRound(prompt_turns=prompt_turns, response=response)


def propagate_step(
    callee: FunctionRef,
    callee_constraint: MethodConstraint,
    caller: FunctionRef,
    caller_source: str,
    gateway: LLMGateway,
    declared_params: list[str] | None = None,
    diagnostics: DiagnosticLog | None = None,
) -> AnalysisStepRecord:
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    mode = callee_constraint.mode
    conv = prompts.propagation_conversation(callee, callee_constraint, caller, caller_source, mode)
    prompt_turns = conv.turns
    caller_constraint, response = _ask_for_constraint(
        conv, gateway, caller, mode, declared_params or [], diagnostics
    )
    return AnalysisStepRecord(
        callee=callee,
        callee_constraint=callee_constraint,
        caller=caller,
        caller_constraint=caller_constraint,
        prompt_turns=prompt_turns,
        response=response,
    )


def _backward_pass(
    chain: InvocationChain,
    index: SourceIndex,
    mode: str,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog,
) -> tuple[tuple[MethodConstraint, ...], tuple[AnalysisStepRecord, ...], FocalRound]:
    focal = chain.focal
    constraint, focal_round = infer_focal_constraints(
        focal,
        index.source_of(focal),
        mode,
        gateway,
        index.parameter_names(focal),
        diagnostics,
    )
    sequence = [constraint]
    records: list[AnalysisStepRecord] = []
    # Walk backward: (F_n, F_{n-1}), ..., (F_2, F_1).
    for i in range(len(chain.steps) - 1, 0, -1):
        callee = chain.steps[i]
        caller = chain.steps[i - 1]
        record = propagate_step(
            callee,
            sequence[-1],
            caller,
            index.source_of(caller),
            gateway,
            index.parameter_names(caller),
            diagnostics,
        )
        records.append(record)
        sequence.append(record.caller_constraint)
    return tuple(sequence), tuple(records), focal_round


def analyze_chain(
    chain: InvocationChain, index: SourceIndex, gateway: LLMGateway
) -> ChainAnalysis:
    diagnostics = DiagnosticLog()
    focal_rounds: dict[str, FocalRound] = {}
    sequences: dict[str, tuple[MethodConstraint, ...]] = {}
    records: dict[str, tuple[AnalysisStepRecord, ...]] = {}
    for mode in (MODE_TRIGGER, MODE_NORMAL):
        try:
            seq, recs, focal_round = _backward_pass(chain, index, mode, gateway, diagnostics)
            sequences[mode] = seq
            records[mode] = recs
            focal_rounds[mode] = focal_round
        except ChainAnalysisError as exc:
            diagnostics.add("pass-failed", f"{mode} pass failed for {chain.focal.id}", str(exc))
            sequences[mode] = ()
            records[mode] = ()
    constraints = ChainConstraints(
        chain=chain,
        trigger_seq=sequences[MODE_TRIGGER],
        normal_seq=sequences[MODE_NORMAL],
    )
    return ChainAnalysis(
        constraints=constraints,
        trigger_records=records[MODE_TRIGGER],
        normal_records=records[MODE_NORMAL],
        focal_rounds=focal_rounds,
        diagnostics=diagnostics,
    )


_RISK_WORD_RE = re.compile(r"\b(high|low)\b", re.IGNORECASE)


def assess_risk(
    chain: InvocationChain,
    trigger_seq: tuple[MethodConstraint, ...],
    step_records: tuple[AnalysisStepRecord, ...],
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
) -> RiskAssessment:
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    if not trigger_seq:
        return RiskAssessment(
            level=RISK_LOW,
            justification="no error-seeking constraints were produced for this chain",
        )
    rationales = [r.caller_constraint.rationale for r in step_records]
    conv = prompts.risk_conversation(chain, trigger_seq, rationales)
    response = gateway.complete(conv)
    from .textutil import extract_json_object

    payload = extract_json_object(response)
    level: str | None = None
    justification = ""
    if payload is not None:
        raw_level = str(payload.get("risk_level", payload.get("level", ""))).strip().lower()
        if raw_level in (RISK_HIGH, RISK_LOW):
            level = raw_level
        justification = str(payload.get("justification", "")).strip()
    if level is None:
        match = _RISK_WORD_RE.search(response)
        if match and payload is None:
            level = match.group(1).lower()
    if level is None:
        diagnostics.add(
            "risk-unparseable",
            f"could not parse a high/low risk level for {chain.focal.id}; defaulting to low",
            response[:200],
        )
        level = RISK_LOW
    if not justification:
        justification = response.strip()[:500] or "no justification provided"
    return RiskAssessment(level=level, justification=justification)


def select_constraints(
    risk: RiskAssessment,
    trigger_seq: tuple[MethodConstraint, ...],
    normal_seq: tuple[MethodConstraint, ...],
) -> tuple[tuple[MethodConstraint, ...], str]:
    """High-risk chains keep the error-seeking constraints; everything else
    falls back to valid-usage constraints."""
    if risk.level == RISK_HIGH and trigger_seq:
        return trigger_seq, MODE_TRIGGER
    if normal_seq:
        return normal_seq, MODE_NORMAL
    if trigger_seq:
        return trigger_seq, MODE_TRIGGER
    raise ChainSkipped("both constraint sequences are empty")
