"""Reflection agents, meta-evaluation arbiter, and refinement feedback."""

from __future__ import annotations

import pytest

from conftest import (
    ARBITER_FALSE_POSITIVE,
    SV_FALSE_POSITIVE,
    TEST4_DATETIME,
    ScriptedProvider,
    recording_gateway,
)
from typeforge.diagnostics import DiagnosticLog
from typeforge.gateway import ChatTurn, Conversation
from typeforge.harness import RunResult
from typeforge.project_model import FunctionRef
from typeforge.reflection import (
    FewShotAsset,
    FinalVerdict,
    ReflectionVerdict,
    check_semantic_validity,
    check_type_consistency,
    load_few_shot,
    meta_evaluate,
    refine,
)
from typeforge.testgen import GeneratedTest

ENTRY = FunctionRef(
    "mini_pandas/indexing.py", "LocIndexer.__getitem__", (13, 16), True, "LocIndexer", True
)

CONSTRAINTS_TEXT = '{"key": {"kind": "object", "magic_methods": ["__bool__"]}}'
CHAIN_SOURCES = "# mini_pandas chain sources (abridged)\ndef _validate_key(key, len_axis): ..."

# The motivating scenario's three test shapes.
TEST2_NAN_SOURCE = (
    "import math\n"
    "\n"
    "from mini_pandas.validation import _validate_key\n"
    "\n"
    "\n"
    "class RawKey:\n"
    "    def __init__(self, items):\n"
    "        self.items = list(items)\n"
    "\n"
    "    def __iter__(self):\n"
    "        return iter(self.items)\n"
    "\n"
    "    def max(self):\n"
    "        return max(self.items)\n"
    "\n"
    "\n"
    "def test_validate_key_with_nan():\n"
    "    _validate_key(RawKey([float('nan')]), 5)\n"
)

TEST3_SUBSCRIPT_SOURCE = (
    "from mini_pandas import validation\n"
    "\n"
    "\n"
    "def test_key_check_shortcut():\n"
    "    checker = validation._has_valid_item['datetime']\n"
    "    checker(5)\n"
)

TEST4_SOURCE = (
    "from datetime import datetime\n"
    "\n"
    "from mini_pandas.indexing import LocIndexer\n"
    "\n"
    "\n"
    "def test_getitem_with_datetime_key():\n"
    "    indexer = LocIndexer(list(range(10)), 5)\n"
    "    indexer[EventKey([datetime(2024, 5, 17)])]\n"
)


def type_error_run(message: str, function: str = "_validate_key") -> RunResult:
    return RunResult(
        status="failed",
        failure_kind="type_error",
        exception_class="TypeError",
        message=message,
        frames=(("mini_pandas/validation.py", 13, function),),
    )


def gen_test(source: str, iteration: int = 0) -> GeneratedTest:
    return GeneratedTest(source=source, entry=ENTRY, chain_id="chain", mode="trigger",
                        iteration=iteration)


def verdict_json(decision, confidence, suggestions=""):
    import json

    return json.dumps(
        {
            "decision": decision,
            "confidence": confidence,
            "rationale": "scripted rationale",
            "suggestions": suggestions,
        }
    )


class TestVerdictTypes:
    def test_false_positive_requires_suggestions(self):
        with pytest.raises(ValueError):
            ReflectionVerdict("false_positive", "high", "r", "")

    def test_true_positive_with_empty_suggestions_is_valid(self):
        verdict = ReflectionVerdict("true_positive", "low", "r", "")
        assert verdict.suggestions == ""

    def test_final_verdict_same_invariant(self):
        with pytest.raises(ValueError):
            FinalVerdict("false_positive", "e", "")


class TestFewShotAssets:
    def test_both_agents_load_with_both_examples(self):
        for agent in ("type_consistency", "semantic_validity"):
            asset = load_few_shot(agent)
            assert asset.positive_example
            assert asset.negative_example
            rendered = asset.render()
            assert "true type error" in rendered
            assert "false positive" in rendered

    def test_missing_example_is_rejected(self):
        with pytest.raises(ValueError):
            FewShotAsset(agent="type_consistency", positive_example="x", negative_example="")

    def test_custom_asset_dir_override(self, tmp_path):
        (tmp_path / "type_consistency.md").write_text(
            "## True type error\ncustom positive\n## False positive\ncustom negative\n"
        )
        asset = load_few_shot("type_consistency", asset_dir=tmp_path)
        assert asset.positive_example == "custom positive"


class TestTypeConsistencyAgent:
    def test_nan_scenario_is_false_positive(self):
        # The §-scenario Test-2 shape: constraint-violating NaN input.
        provider = ScriptedProvider().on(
            stage="reflect-type-consistency",
            respond=verdict_json(
                "false_positive", "high",
                "build keys from elements that pass the upstream truthiness check",
            ),
        )
        verdict = check_type_consistency(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST2_NAN_SOURCE),
            type_error_run("boolean value of NA is ambiguous"),
            recording_gateway(provider),
        )
        assert verdict.decision == "false_positive"
        assert verdict.suggestions

    def test_datetime_scenario_is_true_positive(self):
        provider = ScriptedProvider().on(
            stage="reflect-type-consistency",
            respond=verdict_json("true_positive", "high"),
        )
        verdict = check_type_consistency(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST4_SOURCE),
            type_error_run("'>=' not supported between instances of 'datetime' and 'int'"),
            recording_gateway(provider),
        )
        assert verdict.decision == "true_positive"

    def test_missing_confidence_consumes_reprompt(self):
        provider = ScriptedProvider().on(
            stage="reflect-type-consistency",
            respond=[
                '{"decision": "true_positive", "rationale": "no confidence field"}',
                verdict_json("true_positive", "medium"),
            ],
        )
        gateway = recording_gateway(provider)
        diagnostics = DiagnosticLog()
        verdict = check_type_consistency(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST4_SOURCE),
            type_error_run("x"), gateway, diagnostics,
        )
        assert verdict.confidence == "medium"
        assert gateway.stats.calls == 2
        assert "verdict-reprompt" in diagnostics.codes()

    def test_unusable_output_defaults_to_false_positive(self):
        provider = ScriptedProvider().on(
            stage="reflect-type-consistency", respond=["garbage", "still garbage"]
        )
        diagnostics = DiagnosticLog()
        verdict = check_type_consistency(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST4_SOURCE),
            type_error_run("x"), recording_gateway(provider), diagnostics,
        )
        assert verdict.decision == "false_positive"
        assert verdict.confidence == "low"
        assert verdict.suggestions
        assert "verdict-defaulted" in diagnostics.codes()

    def test_prompt_carries_constraints_test_and_trace(self):
        provider = ScriptedProvider().on(
            stage="reflect-type-consistency", respond=verdict_json("true_positive", "high")
        )
        gateway = recording_gateway(provider)
        check_type_consistency(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST4_SOURCE),
            type_error_run("msg-marker-123"), gateway,
        )
        prompt = provider.requests[0].last
        assert CONSTRAINTS_TEXT in prompt
        assert "test_getitem_with_datetime_key" in prompt
        assert "msg-marker-123" in prompt
        assert "_validate_key" in prompt  # chain content and trace frames


class TestSemanticValidityAgent:
    def test_hallucinated_subscript_is_false_positive(self):
        # The §-scenario Test-3 shape: invented subscript access on a function.
        provider = ScriptedProvider().on(
            stage="reflect-semantic-validity", respond=SV_FALSE_POSITIVE
        )
        verdict = check_semantic_validity(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST3_SUBSCRIPT_SOURCE),
            type_error_run("'function' object is not subscriptable", "test_key_check_shortcut"),
            recording_gateway(provider),
        )
        assert verdict.decision == "false_positive"
        assert "realistic" in verdict.suggestions or "LocIndexer" in verdict.suggestions

    def test_realistic_chain_is_true_positive(self):
        provider = ScriptedProvider().on(
            stage="reflect-semantic-validity", respond=verdict_json("true_positive", "high")
        )
        verdict = check_semantic_validity(
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gen_test(TEST4_SOURCE),
            type_error_run("x"), recording_gateway(provider),
        )
        assert verdict.decision == "true_positive"


class TestMetaEvaluate:
    def test_agreeing_high_confidence_short_circuits(self):
        provider = ScriptedProvider()  # any call would raise: no rules
        gateway = recording_gateway(provider)
        final = meta_evaluate(
            ReflectionVerdict("true_positive", "high", "r1"),
            ReflectionVerdict("true_positive", "high", "r2"),
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gateway,
        )
        assert final.decision == "true_positive"
        assert gateway.stats.calls == 0

    def test_agreeing_false_positives_merge_suggestions(self):
        gateway = recording_gateway(ScriptedProvider())
        final = meta_evaluate(
            ReflectionVerdict("false_positive", "high", "r1", "fix the key type"),
            ReflectionVerdict("false_positive", "high", "r2", "use the real entry point"),
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gateway,
        )
        assert final.decision == "false_positive"
        assert "fix the key type" in final.suggestions
        assert "use the real entry point" in final.suggestions
        assert gateway.stats.calls == 0

    def test_disagreement_invokes_arbiter(self):
        provider = ScriptedProvider().on(stage="arbitrate", respond=ARBITER_FALSE_POSITIVE)
        gateway = recording_gateway(provider)
        final = meta_evaluate(
            ReflectionVerdict("true_positive", "low", "maybe"),
            ReflectionVerdict("false_positive", "high", "hallucinated", "use the indexer"),
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gateway,
        )
        assert final.decision == "false_positive"
        assert final.suggestions
        assert gateway.stats.calls == 1

    def test_always_arbitrate_disables_short_circuit(self):
        provider = ScriptedProvider().on(
            stage="arbitrate",
            respond='{"decision": "true_positive", "explanation": "confirmed", "suggestions": ""}',
        )
        gateway = recording_gateway(provider)
        final = meta_evaluate(
            ReflectionVerdict("true_positive", "high", "r1"),
            ReflectionVerdict("true_positive", "high", "r2"),
            CONSTRAINTS_TEXT, CHAIN_SOURCES, gateway, always_arbitrate=True,
        )
        assert final.decision == "true_positive"
        assert gateway.stats.calls == 1

    def test_unparseable_arbiter_adopts_false_positive(self):
        provider = ScriptedProvider().on(stage="arbitrate", respond="word salad")
        diagnostics = DiagnosticLog()
        final = meta_evaluate(
            ReflectionVerdict("true_positive", "medium", "r1"),
            ReflectionVerdict("false_positive", "medium", "r2", "do better"),
            CONSTRAINTS_TEXT, CHAIN_SOURCES, recording_gateway(provider),
            diagnostics=diagnostics,
        )
        assert final.decision == "false_positive"
        assert "do better" in final.suggestions
        assert "arbiter-defaulted" in diagnostics.codes()


class TestRefine:
    def memory(self) -> Conversation:
        return Conversation((ChatTurn("system", "generation agent"), ChatTurn("user", "context")))

    def test_refinement_follows_suggestions(self):
        provider = ScriptedProvider().on(stage="refine", respond=TEST4_DATETIME)
        conv = self.memory()
        final = FinalVerdict(
            "false_positive", "hallucinated subscript",
            "construct a LocIndexer and index it with a datetime-bearing key",
        )
        test = gen_test(TEST3_SUBSCRIPT_SOURCE)
        refined = refine(test, final, conv, recording_gateway(provider))
        assert refined.iteration == 2
        assert "EventKey" in refined.source
        assert "datetime" in refined.source
        # Suggestions were appended to the conversation.
        assert any("LocIndexer" in t.content for t in conv.turns if t.role == "user")

    def test_refine_rejects_true_positive_verdicts(self):
        conv = self.memory()
        with pytest.raises(ValueError):
            refine(
                gen_test(TEST4_SOURCE),
                FinalVerdict("true_positive", "real bug", ""),
                conv,
                recording_gateway(ScriptedProvider()),
            )
