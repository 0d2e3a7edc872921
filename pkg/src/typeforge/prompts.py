"""Prompt construction for every agent in the pipeline.

Prompts carry machine-readable header lines (``FOCAL METHOD:``, ``STAGE:``)
so that routing, replay tooling, and humans reading cassettes can tell the
stages apart without guessing.
"""

from __future__ import annotations

from .constraints import MODE_TRIGGER, MethodConstraint, serialize_constraint
from .gateway import ChatTurn, Conversation
from .project_model import FunctionRef, InvocationChain

CONSTRAINT_FORMAT = """\
Respond with a single JSON object mapping each relevant parameter name to a
constraint object with these keys:
  - "kind": "primitive" or "object"
  - "type_name": optional; a primitive name (e.g. "int", "str") or a class-like label
  - "fields": optional list of {"name": ..., "constraint": {...}} describing
    structure, including nested elements of containers such as lists and dicts
    (only for kind "object")
  - "custom_methods": optional list of method names the value must support
    (only for kind "object")
  - "magic_methods": optional list of dunder names (e.g. "__getitem__",
    "__iter__", "__bool__") the value must support
Wrap the JSON in a ```json fenced block. Brief reasoning before the block is fine.
"""

ERROR_SEEKING_SYSTEM = (
    "You are an error-seeking analysis agent. Given a Python method, you infer "
    "parameter type constraints that are likely to expose latent type errors in "
    "it: values that reach the risky operations but carry an unexpected type."
)

NON_ERROR_SEEKING_SYSTEM = (
    "You are a non-error-seeking analysis agent. Given a Python method, you "
    "infer parameter type constraints describing typical, valid usage that "
    "allows the method to execute successfully."
)

PROPAGATION_SYSTEM = (
    "You are a backward constraint-propagation agent. Given a callee's parameter "
    "constraints and the caller's source, you infer the constraints the caller's "
    "own parameters must satisfy so that its call produces such inputs."
)

RISK_SYSTEM = (
    "You are an evaluation agent. You judge whether an invocation chain, under "
    "the inferred error-seeking constraints, is actually likely to trigger a "
    "type error, and which part of the chain contributes most."
)

GENERATION_SYSTEM = (
    "You are a unit test generation agent for Python. You write small, "
    "self-contained test files that exercise an entry method through realistic "
    "usage, guided by previously inferred type constraints."
)

REFLECTION_TYPE_SYSTEM = (
    "You are a type-consistency reviewer. You check whether a failing test's "
    "inputs actually satisfy the inferred type constraints, or whether the "
    "crash merely reflects invalid inputs."
)

REFLECTION_SEMANTIC_SYSTEM = (
    "You are a semantic-validity reviewer. You check whether a failing test "
    "reflects a realistic use case and whether the error stems from a genuine "
    "type misuse rather than a hallucinated API or unrelated logic issue."
)

ARBITER_SYSTEM = (
    "You are the final arbiter. You weigh two structured reviews (weighting "
    "high confidence over medium over low), the inferred constraints, and the "
    "chain itself, then decide whether the reported type error is a true "
    "positive or a false positive."
)

VERDICT_FORMAT = """\
Respond with a single JSON object:
  {"decision": "true_positive" | "false_positive",
   "confidence": "high" | "medium" | "low",
   "rationale": "...",
   "suggestions": "..."}
"suggestions" must be actionable when the decision is false_positive.
"""

ARBITER_FORMAT = """\
Respond with a single JSON object:
  {"decision": "true_positive" | "false_positive",
   "explanation": "...",
   "suggestions": "..."}
"suggestions" must be actionable when the decision is false_positive.
"""


def focal_constraint_conversation(focal: FunctionRef, source: str, mode: str) -> Conversation:
    system = ERROR_SEEKING_SYSTEM if mode == MODE_TRIGGER else NON_ERROR_SEEKING_SYSTEM
    goal = (
        "Infer constraints on the parameters that are LIKELY TO EXPOSE TYPE ERRORS "
        "in this method."
        if mode == MODE_TRIGGER
        else "Infer constraints on the parameters that allow this method to execute "
        "successfully under typical usage."
    )
    user = (
        f"STAGE: focal-constraints\n"
        f"FOCAL METHOD: {focal.id}\n"
        f"MODE: {mode}\n\n"
        f"Source of `{focal.qualified_name}`:\n"
        f"```python\n{source}\n```\n\n"
        f"{goal}\n\n{CONSTRAINT_FORMAT}"
    )
    return Conversation((ChatTurn("system", system), ChatTurn("user", user)))


def propagation_conversation(
    callee: FunctionRef,
    callee_constraint: MethodConstraint,
    caller: FunctionRef,
    caller_source: str,
    mode: str,
) -> Conversation:
    user = (
        f"STAGE: propagate\n"
        f"PROPAGATION STEP: {callee.id} <- {caller.id}\n"
        f"MODE: {mode}\n\n"
        f"The callee `{callee.qualified_name}` must receive inputs satisfying:\n"
        f"```json\n{serialize_constraint(callee_constraint)}\n```\n\n"
        f"Source of the caller `{caller.qualified_name}`:\n"
        f"```python\n{caller_source}\n```\n\n"
        f"Infer the constraints on the caller's own parameters that ensure its "
        f"call to `{callee.name}` produces inputs satisfying the callee "
        f"constraints above.\n\n{CONSTRAINT_FORMAT}"
    )
    return Conversation((ChatTurn("system", PROPAGATION_SYSTEM), ChatTurn("user", user)))


def risk_conversation(
    chain: InvocationChain,
    trigger_seq: tuple[MethodConstraint, ...],
    step_rationales: list[str],
) -> Conversation:
    constraints_text = "\n".join(serialize_constraint(c) for c in trigger_seq)
    notes = "\n".join(f"- {r}" for r in step_rationales if r) or "- (none)"
    user = (
        f"STAGE: risk\n"
        f"CHAIN: {chain.id}\n\n"
        f"Error-seeking constraints, focal first:\n{constraints_text}\n\n"
        f"Per-step analysis notes:\n{notes}\n\n"
        "Assess the feasibility of these constraints and the likelihood that this "
        "chain triggers a real type error. Respond with JSON: "
        '{"risk_level": "high" | "low", "justification": "... which part of the '
        'chain contributes most ..."}'
    )
    return Conversation((ChatTurn("system", RISK_SYSTEM), ChatTurn("user", user)))


def context_turn_text(entry: FunctionRef, formatted_context: str) -> str:
    return (
        f"STAGE: context\n"
        f"ENTRY METHOD: {entry.id}\n\n"
        f"Intra-file context of the file hosting the entry method, in original "
        f"source order, with the entry method at the end:\n\n{formatted_context}"
    )


def summary_request_text(entry: FunctionRef) -> str:
    return (
        f"STAGE: summarize\n"
        f"ENTRY METHOD: {entry.id}\n\n"
        f"Summarize the functionality of `{entry.qualified_name}` based on the "
        f"context above, in a short paragraph."
    )


def generation_request_text(entry: FunctionRef, mode: str) -> str:
    intent = (
        "try to trigger a type error in the downstream chain through realistic "
        "inputs that satisfy the constraints"
        if mode == MODE_TRIGGER
        else "exercise the method under typical valid usage"
    )
    return (
        f"STAGE: generate\n"
        f"ENTRY METHOD: {entry.id}\n"
        f"MODE: {mode}\n\n"
        f"Using the constraint analysis, intra-file context, and summary above, "
        f"write one Python test file for `{entry.qualified_name}`. The tests must "
        f"invoke the entry method (directly or through a constructed object) and "
        f"{intent}. Use plain `test_*` functions, import the project modules by "
        f"their package paths, and wrap the file in a ```python fenced block."
    )


def self_debug_request_text(test_source: str, error_summary: str) -> str:
    return (
        f"STAGE: self-debug\n\n"
        f"The previous test failed without raising a type error:\n{error_summary}\n\n"
        f"Current test file:\n```python\n{test_source}\n```\n\n"
        f"Revise the test so it runs against the real code (fix imports, setup, "
        f"and API usage) while keeping the same intent. Respond with the full "
        f"revised file in a ```python fenced block."
    )


def refine_request_text(suggestions: str) -> str:
    return (
        f"STAGE: refine\n\n"
        f"The previous test was judged a false positive. Reviewer suggestions:\n"
        f"{suggestions}\n\n"
        f"Generate a new version of the test file that follows the suggestions "
        f"(realistic entry usage, constraint-satisfying inputs). Respond with the "
        f"full file in a ```python fenced block."
    )


def reflection_conversation(
    agent: str,
    few_shot: str,
    constraints_text: str,
    chain_sources: str,
    test_source: str,
    failure_text: str,
) -> Conversation:
    if agent == "type_consistency":
        system = REFLECTION_TYPE_SYSTEM
        focus = (
            "Do the test inputs align with the inferred type constraints? A crash "
            "caused by inputs the constraints forbid is a false positive."
        )
        stage = "reflect-type-consistency"
    else:
        system = REFLECTION_SEMANTIC_SYSTEM
        focus = (
            "Does the test reflect a realistic use case, and does the error stem "
            "from a true type misuse in the code under test rather than from the "
            "test's own assumptions?"
        )
        stage = "reflect-semantic-validity"
    user = (
        f"STAGE: {stage}\n\n"
        f"Worked examples:\n{few_shot}\n\n"
        f"Inferred type constraints used to generate the test:\n{constraints_text}\n\n"
        f"Invocation chain content:\n{chain_sources}\n\n"
        f"Generated test:\n```python\n{test_source}\n```\n\n"
        f"Execution output (error message and stack trace):\n{failure_text}\n\n"
        f"{focus}\n\n{VERDICT_FORMAT}"
    )
    return Conversation((ChatTurn("system", system), ChatTurn("user", user)))


def arbiter_conversation(
    verdicts_text: str, constraints_text: str, chain_sources: str
) -> Conversation:
    user = (
        f"STAGE: arbitrate\n\n"
        f"Structured reviews:\n{verdicts_text}\n\n"
        f"Inferred type constraints:\n{constraints_text}\n\n"
        f"Invocation chain content:\n{chain_sources}\n\n"
        f"Weigh the reviews by their confidence (high > medium > low) and decide.\n\n"
        f"{ARBITER_FORMAT}"
    )
    return Conversation((ChatTurn("system", ARBITER_SYSTEM), ChatTurn("user", user)))
