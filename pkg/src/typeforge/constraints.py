"""The structured type-constraint representation used throughout the pipeline.

A constraint never names a concrete type lattice; it records what a parameter
must *support*: primitive vs object kind, nested field structure, explicitly
invoked methods, and the magic-method protocols built-in operations need.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field

from .diagnostics import Diagnostic, DiagnosticLog
from .errors import ConstraintParseError, ConstraintValidationError
from .project_model import FunctionRef, InvocationChain
from .textutil import extract_json_object, surrounding_prose

CONSTRAINT_SCHEMA_VERSION = 1
MAGIC_METHOD_VOCABULARY_VERSION = 1
MAX_FIELD_DEPTH = 8

MODE_TRIGGER = "trigger"
MODE_NORMAL = "normal"
MODES = (MODE_TRIGGER, MODE_NORMAL)

KIND_PRIMITIVE = "primitive"
KIND_OBJECT = "object"
KINDS = (KIND_PRIMITIVE, KIND_OBJECT)

_DUNDER_RE = re.compile(r"^__\w+__$")

_MAGIC_METHODS = frozenset(
    {
        # comparison
        "__lt__", "__le__", "__eq__", "__ne__", "__gt__", "__ge__", "__hash__",
        # arithmetic and reflected/in-place forms
        "__add__", "__sub__", "__mul__", "__truediv__", "__floordiv__", "__mod__",
        "__divmod__", "__pow__", "__matmul__", "__neg__", "__pos__", "__abs__",
        "__radd__", "__rsub__", "__rmul__", "__rtruediv__", "__rfloordiv__",
        "__rmod__", "__rpow__", "__iadd__", "__isub__", "__imul__",
        "__and__", "__or__", "__xor__", "__invert__", "__lshift__", "__rshift__",
        # container protocol
        "__getitem__", "__setitem__", "__delitem__", "__len__", "__contains__",
        "__reversed__", "__missing__",
        # iteration
        "__iter__", "__next__",
        # conversion / representation
        "__bool__", "__int__", "__float__", "__complex__", "__index__",
        "__str__", "__repr__", "__bytes__", "__format__", "__round__",
        # callables, context managers, attribute protocol
        "__call__", "__enter__", "__exit__", "__getattr__", "__setattr__",
        "__delattr__", "__dir__",
    }
)


def magic_method_vocabulary() -> frozenset[str]:
    """The fixed, versioned set of recognized magic-method names."""
    return _MAGIC_METHODS


@dataclass(frozen=True)
class FieldSpec:
    name: str
    constraint: "ParamConstraint"

    def __post_init__(self):
        if not self.name:
            raise ConstraintValidationError("field name must be non-empty")

    def to_payload(self) -> dict:
        return {"name": self.name, "constraint": self.constraint.to_payload()}


@dataclass(frozen=True)
class ParamConstraint:
    kind: str
    type_name: str | None = None
    fields: tuple[FieldSpec, ...] = ()
    custom_methods: tuple[str, ...] = ()
    magic_methods: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConstraintValidationError(f"unknown constraint kind {self.kind!r}")
        if self.kind == KIND_PRIMITIVE and (self.fields or self.custom_methods):
            raise ConstraintValidationError(
                "primitive constraints cannot carry fields or custom methods"
            )
        for name in self.magic_methods:
            if not _DUNDER_RE.match(name):
                raise ConstraintValidationError(
                    f"magic method {name!r} does not match the __name__ pattern"
                )
        # Method lists are sets semantically: normalize so equality and
        # serialization are independent of construction order.
        object.__setattr__(self, "custom_methods", tuple(sorted(set(self.custom_methods))))
        object.__setattr__(self, "magic_methods", tuple(sorted(set(self.magic_methods))))
        if _depth_of(self) > MAX_FIELD_DEPTH:
            raise ConstraintValidationError(
                f"field nesting exceeds the depth bound of {MAX_FIELD_DEPTH}"
            )

    def to_payload(self) -> dict:
        payload: dict = {"kind": self.kind}
        if self.type_name is not None:
            payload["type_name"] = self.type_name
        if self.fields:
            payload["fields"] = [f.to_payload() for f in self.fields]
        if self.custom_methods:
            payload["custom_methods"] = list(self.custom_methods)
        if self.magic_methods:
            payload["magic_methods"] = list(self.magic_methods)
        return payload


def _depth_of(constraint: ParamConstraint) -> int:
    if not constraint.fields:
        return 1
    return 1 + max(_depth_of(f.constraint) for f in constraint.fields)


_PARAM_KEYS = {"kind", "type_name", "fields", "custom_methods", "magic_methods"}


def _param_from_payload(payload, where: str, diagnostics: DiagnosticLog, depth: int = 1) -> ParamConstraint:
    if not isinstance(payload, dict):
        raise ConstraintParseError(f"{where}: constraint must be a JSON object")
    if depth > MAX_FIELD_DEPTH:
        raise ConstraintValidationError(f"{where}: nesting exceeds depth {MAX_FIELD_DEPTH}")
    for key in sorted(set(payload) - _PARAM_KEYS):
        diagnostics.add("unknown-key", f"{where}: ignored unknown key {key!r}")
    kind = payload.get("kind", KIND_OBJECT)
    if not isinstance(kind, str):
        raise ConstraintParseError(f"{where}: kind must be a string")
    fields = []
    raw_fields = payload.get("fields", [])
    if not isinstance(raw_fields, list):
        raise ConstraintParseError(f"{where}: fields must be a list")
    for i, item in enumerate(raw_fields):
        if not isinstance(item, dict) or "name" not in item:
            raise ConstraintParseError(f"{where}.fields[{i}]: expected an object with a name")
        fields.append(
            FieldSpec(
                name=str(item["name"]),
                constraint=_param_from_payload(
                    item.get("constraint", {}), f"{where}.fields[{i}]", diagnostics, depth + 1
                ),
            )
        )
    custom = _string_list(payload.get("custom_methods", []), f"{where}.custom_methods")
    magic = _string_list(payload.get("magic_methods", []), f"{where}.magic_methods")
    vocabulary = magic_method_vocabulary()
    for name in magic:
        if _DUNDER_RE.match(name) and name not in vocabulary:
            diagnostics.add("unknown-magic-method", f"{where}: {name!r} is not in the vocabulary")
    type_name = payload.get("type_name")
    if type_name is not None:
        type_name = str(type_name)
    return ParamConstraint(
        kind=kind,
        type_name=type_name,
        fields=tuple(fields),
        custom_methods=tuple(custom),
        magic_methods=tuple(magic),
    )


def _string_list(value, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConstraintParseError(f"{where}: expected a list of strings")
    return value


@dataclass(frozen=True, eq=False)
class MethodConstraint:
    function: FunctionRef
    params: dict[str, ParamConstraint]
    mode: str
    rationale: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConstraintValidationError(f"unknown mode {self.mode!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MethodConstraint):
            return NotImplemented
        return (
            self.function == other.function
            and self.mode == other.mode
            and self.params == other.params
        )

    def to_payload(self) -> dict:
        return {
            "schema_version": CONSTRAINT_SCHEMA_VERSION,
            "function": self.function.to_payload(),
            "mode": self.mode,
            "params": {name: c.to_payload() for name, c in self.params.items()},
            "rationale": self.rationale,
        }


def serialize_constraint(constraint: MethodConstraint) -> str:
    """Canonical JSON form: a pure function of constraint structure."""
    return json.dumps(constraint.to_payload(), sort_keys=True, indent=2, ensure_ascii=False)


def parse_constraint(
    text: str,
    target: FunctionRef,
    mode: str = MODE_TRIGGER,
    declared_params: list[str] | None = None,
    diagnostics: DiagnosticLog | None = None,
) -> MethodConstraint:
    """Parse a (possibly fenced, prose-wrapped) agent response into a constraint.

    The agent emits a JSON object mapping parameter names to constraint
    objects; any prose around the JSON becomes the rationale. A persisted
    full-form document (with schema_version/function/mode keys) also parses,
    which is what makes serialize/parse a round trip.
    """
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    payload = extract_json_object(text)
    if payload is None:
        raise ConstraintParseError("no JSON object found in agent output")
    rationale = surrounding_prose(text)
    if _looks_like_full_form(payload):
        mode = payload.get("mode", mode)
        rationale = payload.get("rationale", rationale)
        raw_params = payload["params"]
        if not isinstance(raw_params, dict):
            raise ConstraintParseError("params must be a JSON object")
    else:
        raw_params = payload
    params: dict[str, ParamConstraint] = {}
    for name in raw_params:
        params[name] = _param_from_payload(raw_params[name], f"params.{name}", diagnostics)
    if declared_params is not None:
        offenders = tuple(sorted(set(params) - set(declared_params)))
        if offenders:
            raise ConstraintValidationError(
                f"constraint names parameters not in the signature of "
                f"{target.qualified_name}: {', '.join(offenders)}",
                offenders=offenders,
            )
    return MethodConstraint(function=target, params=params, mode=mode, rationale=rationale)


def _looks_like_full_form(payload: dict) -> bool:
    return (
        "params" in payload
        and isinstance(payload.get("params"), dict)
        and set(payload) <= {"schema_version", "function", "mode", "params", "rationale"}
    )


def constraint_from_payload(payload: dict) -> MethodConstraint:
    """Rehydrate a persisted full-form constraint document."""
    diagnostics = DiagnosticLog()
    params = {
        name: _param_from_payload(value, f"params.{name}", diagnostics)
        for name, value in payload["params"].items()
    }
    return MethodConstraint(
        function=FunctionRef.from_payload(payload["function"]),
        params=params,
        mode=payload["mode"],
        rationale=payload.get("rationale", ""),
    )


def validate_against_signature(constraint: MethodConstraint, function_source: str) -> DiagnosticLog:
    """Check every constrained parameter against the declared signature.

    The receiver slot (``self``/``cls`` in first position) is exempt. Returns
    an empty log iff the constraint is consistent with the source.
    """
    diagnostics = DiagnosticLog()
    try:
        tree = ast.parse(_dedent_block(function_source))
    except SyntaxError as exc:
        diagnostics.add("source-parse-error", f"cannot parse function source: {exc}")
        return diagnostics
    def_node = next(
        (n for n in ast.walk(tree) if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))),
        None,
    )
    if def_node is None:
        diagnostics.add("source-parse-error", "no function definition found in source")
        return diagnostics
    args = def_node.args
    names = [a.arg for a in args.posonlyargs + args.args]
    if constraint.function.is_method and names and names[0] in ("self", "cls"):
        names = names[1:]
    if args.vararg:
        names.append(args.vararg.arg)
    names.extend(a.arg for a in args.kwonlyargs)
    if args.kwarg:
        names.append(args.kwarg.arg)
    for name in sorted(set(constraint.params) - set(names)):
        diagnostics.add(
            "unknown-parameter",
            f"constraint names {name!r} but {constraint.function.qualified_name} declares {names}",
        )
    return diagnostics


def _dedent_block(source: str) -> str:
    import textwrap

    return textwrap.dedent(source)


@dataclass(frozen=True)
class ChainConstraints:
    """The two backward sequences for one chain: ⟨P_n..P_1⟩ per mode.

    A sequence is either complete (one constraint per step, aligned with the
    reversed chain) or empty, marking a failed pass.
    """

    chain: InvocationChain
    trigger_seq: tuple[MethodConstraint, ...] = ()
    normal_seq: tuple[MethodConstraint, ...] = ()

    def __post_init__(self):
        self._check_sequence(self.trigger_seq, MODE_TRIGGER)
        self._check_sequence(self.normal_seq, MODE_NORMAL)

    def _check_sequence(self, seq: tuple[MethodConstraint, ...], mode: str) -> None:
        if not seq:
            return
        if len(seq) != len(self.chain):
            raise ConstraintValidationError(
                f"{mode} sequence has {len(seq)} constraints for a chain of length {len(self.chain)}"
            )
        reversed_steps = tuple(reversed(self.chain.steps))
        for i, constraint in enumerate(seq):
            if constraint.function != reversed_steps[i]:
                raise ConstraintValidationError(
                    f"{mode} sequence element {i} is for {constraint.function.id}, "
                    f"expected {reversed_steps[i].id}"
                )
            if constraint.mode != mode:
                raise ConstraintValidationError(
                    f"{mode} sequence contains a {constraint.mode}-mode constraint"
                )

    def to_payload(self) -> dict:
        return {
            "schema_version": CONSTRAINT_SCHEMA_VERSION,
            "chain": [s.to_payload() for s in self.chain.steps],
            "trigger_seq": [c.to_payload() for c in self.trigger_seq],
            "normal_seq": [c.to_payload() for c in self.normal_seq],
        }
