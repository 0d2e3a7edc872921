"""Shared fixtures: scripted providers, fixture projects, cassette builders.

Cassettes are built once per session by running the pipeline in record mode
against a scripted in-process provider (no network), then replayed by the
tests. Response content is hand-authored; digest bookkeeping is automatic.
"""

from __future__ import annotations

import re
import shutil
import socket
from pathlib import Path

import pytest

from typeforge.gateway import Cassette, LLMGateway, ModelConfig
from typeforge.pipeline import RunConfig, detect_project

FIXTURES = Path(__file__).parent / "fixtures"

_STAGE_RE = re.compile(r"^STAGE: (\S+)", re.MULTILINE)


class Request:
    """A parsed view of one chat-completion request."""

    def __init__(self, payload: dict):
        self.payload = payload
        self.messages = payload["messages"]
        self.last = self.messages[-1]["content"]
        self.whole = "\n".join(m["content"] for m in self.messages)
        self.stage = self._latest("STAGE")
        self.mode = self._latest("MODE")

    def _latest(self, key: str) -> str | None:
        pattern = re.compile(rf"^{key}: (\S+)", re.MULTILINE)
        for message in reversed(self.messages):
            match = None
            for match in pattern.finditer(message["content"]):
                pass
            if match:
                return match.group(1)
        return None

    def last_has(self, text: str) -> bool:
        return text in self.last

    def has(self, text: str) -> bool:
        return text in self.whole


class ScriptedProvider:
    """An ordered rule table mapping requests to hand-authored responses."""

    def __init__(self):
        self.rules = []
        self.requests: list[Request] = []

    def on(self, stage=None, mode=None, last_contains=None, contains=None, not_contains=None,
           respond=None):
        queue = list(respond) if isinstance(respond, list) else None

        def rule(request: Request):
            if stage is not None and request.stage != stage:
                return None
            if mode is not None and request.mode != mode:
                return None
            if last_contains is not None and not request.last_has(last_contains):
                return None
            if contains is not None and not request.has(contains):
                return None
            if not_contains is not None and request.has(not_contains):
                return None
            if queue is not None:
                return queue.pop(0) if queue else None
            if callable(respond):
                return respond(request)
            return respond

        self.rules.append(rule)
        return self

    def __call__(self, payload: dict) -> str:
        request = Request(payload)
        self.requests.append(request)
        for rule in self.rules:
            response = rule(request)
            if response is not None:
                return response
        raise AssertionError(
            f"no scripted response for stage={request.stage} mode={request.mode}:\n"
            f"{request.last[:400]}"
        )


def recording_gateway(provider, cassette_path=None) -> LLMGateway:
    return LLMGateway(
        mode="record",
        config=ModelConfig(model_id="scripted"),
        cassette=Cassette(metadata={"model_id": "scripted"}),
        cassette_path=cassette_path,
        transport=provider,
    )


@pytest.fixture()
def no_network(monkeypatch):
    def guard(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "socket", guard)


# ---------------------------------------------------------------------------
# The motivating-scenario script (hand-authored agent responses)

TRIGGER_FOCAL_CONSTRAINT = """\
The comparison `arr.max() >= len_axis` assumes the key's maximum is an integer,
but max() returns whatever the elements are; a datetime element survives max()
and then fails the comparison against the int len_axis.
```json
{"key": {"kind": "object", "type_name": "array-like",
         "custom_methods": ["max"],
         "magic_methods": ["__iter__"],
         "fields": [{"name": "element",
                     "constraint": {"kind": "object",
                                    "magic_methods": ["__bool__", "__ge__"]}}]}}
```
"""

TRIGGER_STEP_HAS_VALID_ITEM = """\
The caller iterates the key and truth-tests every element before delegating,
so elements must support certain required magic methods such as __bool__.
```json
{"key": {"kind": "object", "type_name": "array-like",
         "custom_methods": ["max"],
         "magic_methods": ["__iter__"],
         "fields": [{"name": "element",
                     "constraint": {"kind": "object",
                                    "magic_methods": ["__bool__"]}}]}}
```
"""

TRIGGER_STEP_GETITEM_TUPLE = """\
Each member of the tuple is forwarded as a key, so the tuple's elements carry
the downstream key constraint unchanged.
```json
{"tup": {"kind": "object", "magic_methods": ["__iter__"],
         "fields": [{"name": "element",
                     "constraint": {"kind": "object",
                                    "custom_methods": ["max"],
                                    "magic_methods": ["__iter__"]}}]}}
```
"""

TRIGGER_STEP_GETITEM = """\
A non-tuple key is wrapped into a singleton tuple and forwarded unchanged.
```json
{"key": {"kind": "object",
         "custom_methods": ["max"],
         "magic_methods": ["__iter__"]}}
```
"""

NORMAL_FOCAL_VALIDATE_KEY = """\
Typical valid usage: an iterable key of small ints with a max() helper.
```json
{"key": {"kind": "object", "custom_methods": ["max"], "magic_methods": ["__iter__"]},
 "len_axis": {"kind": "primitive", "type_name": "int"}}
```
"""

GENERIC_EMPTY = "No parameter-level constraints worth recording.\n```json\n{}\n```\n"

RISK_HIGH = (
    '{"risk_level": "high", "justification": "the comparison arr.max() >= len_axis '
    'in _validate_key accepts any element type; a datetime-bearing key reaches it '
    'through the chain and breaks the int comparison"}'
)

RISK_LOW = '{"risk_level": "low", "justification": "no risky operation identified"}'

SUMMARY_TEXT = (
    "LocIndexer.__getitem__ normalizes the key into a tuple and selects values; "
    "every key is validated by truthiness checks over its elements and a "
    "max()-based bounds comparison before indexing."
)

# Initial error-seeking attempt: hallucinated subscript on a module function
# (the Test-3 shape from the motivating scenario).
TEST3_HALLUCINATED = """\
I will index into the validator registry to reach the key check directly.
```python
from mini_pandas import validation


def test_key_check_shortcut():
    checker = validation._has_valid_item["datetime"]
    checker(5)
```
"""

# Refined test: realistic entry through the indexer with a datetime-bearing key
# (the Test-4 shape).
TEST4_DATETIME = """\
Entering through the indexer with a key object that satisfies the constraints:
iterable, max()-capable, with truthy elements; datetimes then break the
comparison against the integer axis length.
```python
from datetime import datetime

from mini_pandas.indexing import LocIndexer


class EventKey:
    def __init__(self, items):
        self.items = list(items)

    def __iter__(self):
        return iter(self.items)

    def max(self):
        return max(self.items)


def test_getitem_with_datetime_key():
    indexer = LocIndexer(list(range(10)), 5)
    result = indexer[EventKey([datetime(2024, 5, 17)])]
    assert result is not None
```
"""

TEST_NORMAL_INTKEY = """\
A typical valid lookup through the indexer.
```python
from mini_pandas.indexing import LocIndexer


class IntKey:
    def __init__(self, items):
        self.items = list(items)

    def __iter__(self):
        return iter(self.items)

    def max(self):
        return max(self.items)


def test_getitem_with_int_keys():
    indexer = LocIndexer(list(range(10)), 5)
    result = indexer[(IntKey([1, 2]),)]
    assert result == [[1, 2]]
```
"""

TC_TRUE_POSITIVE = (
    '{"decision": "true_positive", "confidence": "high", '
    '"rationale": "the EventKey satisfies every inferred constraint (iterable, '
    'max-capable, truthy elements); the crash is the int comparison in '
    '_validate_key", "suggestions": ""}'
)

TC_TP_LOW = (
    '{"decision": "true_positive", "confidence": "low", '
    '"rationale": "no constraint is violated by the test inputs as far as the '
    'subscript goes", "suggestions": ""}'
)

SV_TRUE_POSITIVE = (
    '{"decision": "true_positive", "confidence": "high", '
    '"rationale": "the test enters through the public subscript operator with a '
    'realistic key object; the failure is in project code", "suggestions": ""}'
)

SV_FALSE_POSITIVE = (
    '{"decision": "false_positive", "confidence": "high", '
    '"rationale": "module functions are not subscriptable; the access exists only '
    'in the test, so the TypeError never leaves the test file", '
    '"suggestions": "drive the scenario through LocIndexer.__getitem__ with a '
    'constructed indexer and a constraint-satisfying key object such as a '
    'datetime-bearing iterable"}'
)

ARBITER_FALSE_POSITIVE = (
    '{"decision": "false_positive", "explanation": "the semantic reviewer is '
    'confident the subscript access is hallucinated while the type reviewer is '
    'unsure; weighting high over low confidence, this is test-side breakage", '
    '"suggestions": "construct a LocIndexer and index it with an iterable, '
    'max()-capable key whose elements are truthy datetimes"}'
)


def mini_pandas_provider() -> ScriptedProvider:
    provider = ScriptedProvider()
    validate_key = "mini_pandas/validation.py::_validate_key"

    # Constraint inference for the motivating focal method.
    provider.on(stage="focal-constraints", mode="trigger",
                last_contains=f"FOCAL METHOD: {validate_key}",
                respond=TRIGGER_FOCAL_CONSTRAINT)
    provider.on(stage="focal-constraints", mode="normal",
                last_contains=f"FOCAL METHOD: {validate_key}",
                respond=NORMAL_FOCAL_VALIDATE_KEY)
    provider.on(stage="focal-constraints", respond=GENERIC_EMPTY)

    # Backward propagation (trigger mode is scripted; normal mode is generic).
    provider.on(stage="propagate", mode="trigger",
                last_contains="::_validate_key <-", respond=TRIGGER_STEP_HAS_VALID_ITEM)
    provider.on(stage="propagate", mode="trigger",
                last_contains="::_has_valid_item <-", respond=TRIGGER_STEP_GETITEM_TUPLE)
    provider.on(stage="propagate", mode="trigger",
                last_contains="::_getitem_tuple <-", respond=TRIGGER_STEP_GETITEM)
    provider.on(stage="propagate", respond=GENERIC_EMPTY)

    # Risk: only the motivating chain is high.
    provider.on(stage="risk", last_contains="::_validate_key", respond=RISK_HIGH)
    provider.on(stage="risk", respond=RISK_LOW)

    provider.on(stage="summarize", respond=SUMMARY_TEXT)

    # Generation: the motivating chain first hallucinates (Test 3 shape), is
    # refined into the realistic datetime test (Test 4 shape); other chains
    # get a plain valid-usage test.
    provider.on(stage="generate", contains="::_validate_key <-", respond=TEST3_HALLUCINATED)
    provider.on(stage="generate", respond=TEST_NORMAL_INTKEY)
    provider.on(stage="refine", respond=TEST4_DATETIME)

    # Reflection: the datetime test is a confident true positive on both axes;
    # the hallucinated subscript splits the reviewers and the arbiter rejects it.
    provider.on(stage="reflect-type-consistency", contains="EventKey", respond=TC_TRUE_POSITIVE)
    provider.on(stage="reflect-type-consistency", respond=TC_TP_LOW)
    provider.on(stage="reflect-semantic-validity", contains="EventKey", respond=SV_TRUE_POSITIVE)
    provider.on(stage="reflect-semantic-validity", respond=SV_FALSE_POSITIVE)
    provider.on(stage="arbitrate", respond=ARBITER_FALSE_POSITIVE)
    return provider


def copy_project(src: Path, dst: Path) -> Path:
    shutil.copytree(src, dst)
    return dst


@pytest.fixture(scope="session")
def mini_pandas_cassette(tmp_path_factory) -> Path:
    """Record the full §-scenario cassette over both snapshots, once."""
    base = tmp_path_factory.mktemp("cassette_build")
    cassette_path = base / "mini_pandas.cassette.json"
    provider = mini_pandas_provider()
    gateway = recording_gateway(provider, cassette_path)
    for name in ("mini_pandas_buggy", "mini_pandas_fixed"):
        project = copy_project(FIXTURES / name, base / name)
        config = RunConfig(
            project_root=project,
            out_dir=base / f"out_{name}",
            mode="record",
            cassette_path=cassette_path,
            model=ModelConfig(model_id="scripted"),
        )
        detect_project(config, gateway)
    gateway.save_cassette()
    return cassette_path


@pytest.fixture()
def buggy_project(tmp_path) -> Path:
    return copy_project(FIXTURES / "mini_pandas_buggy", tmp_path / "mini_pandas_buggy")


@pytest.fixture()
def fixed_project(tmp_path) -> Path:
    return copy_project(FIXTURES / "mini_pandas_fixed", tmp_path / "mini_pandas_fixed")


# ---------------------------------------------------------------------------
# Evaluation-pair scenario: one TP, one FP (reported on both snapshots),
# one FN (the generated test never triggers the bug).

TEST_LABEL_TOTAL = """\
```python
from textops import label_total


def test_label_total():
    label_total([1, 2])
```
"""

TEST_MERGE_CRASHING = """\
```python
from tagops import merge_tags


def test_merge_mixed():
    merge_tags([1], ['a'])
```
"""

TEST_MERGE_PASSING = """\
```python
from tagops import merge_tags


def test_merge_ints():
    merge_tags([1], [2])
```
"""

TEST_PICK_PASSING = """\
```python
from pickops import pick


def test_pick():
    pick({'a': 1}, ['a'])
```
"""

REFLECT_TP_HIGH = (
    '{"decision": "true_positive", "confidence": "high", '
    '"rationale": "scripted benchmark verdict", "suggestions": ""}'
)

RISK_HIGH_GENERIC = (
    '{"risk_level": "high", "justification": "scripted: the operation mixes '
    'incompatible operand types under plausible inputs"}'
)


def eval_pairs_provider() -> ScriptedProvider:
    provider = ScriptedProvider()
    provider.on(stage="focal-constraints", respond=GENERIC_EMPTY)
    provider.on(stage="propagate", respond=GENERIC_EMPTY)
    provider.on(stage="risk", last_contains="label_total", respond=RISK_HIGH_GENERIC)
    provider.on(stage="risk", last_contains="merge_tags", respond=RISK_HIGH_GENERIC)
    provider.on(stage="risk", respond=RISK_LOW)
    provider.on(stage="summarize", respond="A small helper under benchmark evaluation.")
    provider.on(stage="generate", contains="label_total", respond=TEST_LABEL_TOTAL)
    # The fixed snapshot's source (list(tags)) gets a passing test; the buggy
    # snapshot's crashing test is judged a (mistaken) true positive.
    provider.on(stage="generate", contains="list(tags)", respond=TEST_MERGE_PASSING)
    provider.on(stage="generate", contains="merge_tags", respond=TEST_MERGE_CRASHING)
    provider.on(stage="generate", contains="pick", respond=TEST_PICK_PASSING)
    provider.on(stage="reflect-type-consistency", respond=REFLECT_TP_HIGH)
    provider.on(stage="reflect-semantic-validity", respond=REFLECT_TP_HIGH)
    return provider


@pytest.fixture(scope="session")
def eval_pairs_setup(tmp_path_factory):
    """A tmp copy of the pair fixtures plus a recorded cassette covering them."""
    base = tmp_path_factory.mktemp("eval_pairs")
    root = copy_project(FIXTURES / "eval_pairs", base / "eval_pairs")
    cassette_path = base / "eval_pairs.cassette.json"
    provider = eval_pairs_provider()
    gateway = recording_gateway(provider, cassette_path)
    from typeforge.pipeline import evaluate_manifest

    config = RunConfig(
        project_root=root,
        out_dir=base / "record_out",
        mode="record",
        cassette_path=cassette_path,
        model=ModelConfig(model_id="scripted"),
    )
    evaluate_manifest(root / "manifest.json", config, gateway)
    gateway.save_cassette()
    return root, cassette_path


@pytest.fixture()
def eval_pairs_project(tmp_path) -> Path:
    """A pristine per-test copy of the pair fixtures."""
    return copy_project(FIXTURES / "eval_pairs", tmp_path / "eval_pairs")
