"""Test generation: context collection, chat memory, two-stage prompting,
assertion stripping, and the single self-debugging revision.

Assertion stripping is line surgery, not re-rendering: statements that are
not assertions must come out byte-for-byte untouched, because the generated
test is later archived as evidence.
"""

from __future__ import annotations

import ast
import io
import tokenize
from dataclasses import dataclass, replace

from . import prompts
from .diagnostics import DiagnosticLog
from .errors import GenerationError, InfrastructureError
from .gateway import ChatTurn, Conversation, LLMGateway
from .project_model import FunctionRef, SourceIndex
from .textutil import extract_code_block, slugify

CONTEXT_CHAR_BUDGET = 12_000

DEFAULT_FRAMEWORK_ASSERTIONS = frozenset(
    {
        "assertEqual", "assertEquals", "assertNotEqual", "assertNotEquals",
        "assertTrue", "assertFalse", "assertIs", "assertIsNot",
        "assertIsNone", "assertIsNotNone", "assertIn", "assertNotIn",
        "assertIsInstance", "assertNotIsInstance", "assertAlmostEqual",
        "assertNotAlmostEqual", "assertGreater", "assertGreaterEqual",
        "assertLess", "assertLessEqual", "assertCountEqual",
        "assertListEqual", "assertDictEqual", "assertSetEqual",
        "assertTupleEqual", "assertSequenceEqual", "assertMultiLineEqual",
        "assertRegex", "assertNotRegex", "fail", "failIf", "failUnless",
    }
)

RAISES_STYLE_NAMES = frozenset(
    {
        "raises", "assertRaises", "assertRaisesRegex", "assertWarns",
        "assertWarnsRegex", "warns", "deprecated_call", "assertLogs",
        "assertNoLogs",
    }
)


@dataclass(frozen=True)
class GeneratedTest:
    source: str
    entry: FunctionRef
    chain_id: str
    mode: str
    iteration: int = 0

    @property
    def module_slug(self) -> str:
        return f"test_{slugify(self.entry.qualified_name)}"

    def to_meta(self) -> dict:
        return {
            "entry": self.entry.id,
            "chain_id": self.chain_id,
            "mode": self.mode,
            "iteration": self.iteration,
            "module_slug": self.module_slug,
        }


@dataclass
class IntraFileContext:
    imports: list[str]
    global_fields: list[str]
    class_defs: list[str]
    method_defs: list[str]
    constructor: str | None
    invoked_class_methods: list[str]
    # (start_line, kind, text) for every snippet, used to render in source order
    ordered: list[tuple[int, str, str]]
    entry_line: int


def collect_intra_file_context(entry: FunctionRef, index: SourceIndex) -> IntraFileContext:
    module = index.modules.get(entry.module_path)
    if module is None:
        raise InfrastructureError(f"{entry.module_path} is not in the index")

    ordered: list[tuple[int, str, str]] = []
    imports = []
    for span in module.import_spans:
        text = module.lines(span)
        imports.append(text)
        ordered.append((span[0], "import", text))
    global_fields = []
    for span in module.global_spans:
        text = module.lines(span)
        global_fields.append(text)
        ordered.append((span[0], "global", text))

    class_defs = []
    source_lines = module.source.splitlines()
    for name in sorted(module.classes, key=lambda n: module.classes[n].line_span[0]):
        info = module.classes[name]
        header = source_lines[info.line_span[0] - 1]
        parts = [header]
        for span in info.field_lines:
            parts.append(module.lines(span))
        text = "\n".join(parts)
        class_defs.append(text)
        ordered.append((info.line_span[0], "class", text))

    constructor = None
    invoked_names: set[str] = set()
    if entry.is_method:
        cls = module.classes.get(entry.class_name)
        if cls is not None and "__init__" in cls.methods and entry.name != "__init__":
            constructor = module.lines(cls.methods["__init__"].line_span)
        entry_node = module.function_nodes[entry.qualified_name]
        for node in ast.walk(entry_node):
            if (
                isinstance(node, ast.Call)
                and isinstance(node.func, ast.Attribute)
                and isinstance(node.func.value, ast.Name)
                and node.func.value.id in ("self", "cls")
            ):
                invoked_names.add(node.func.attr)

    invoked_class_methods = []
    method_defs = []
    for qualified, ref in sorted(module.functions.items(), key=lambda kv: kv[1].line_span[0]):
        if ref == entry:
            continue
        text = module.lines(ref.line_span)
        if entry.is_method and ref.class_name == entry.class_name and ref.name == "__init__":
            ordered.append((ref.line_span[0], "constructor", text))
            continue
        if entry.is_method and ref.class_name == entry.class_name and ref.name in invoked_names:
            invoked_class_methods.append(text)
            ordered.append((ref.line_span[0], "invoked", text))
            continue
        method_defs.append(text)
        ordered.append((ref.line_span[0], "method", text))

    return IntraFileContext(
        imports=imports,
        global_fields=global_fields,
        class_defs=class_defs,
        method_defs=method_defs,
        constructor=constructor,
        invoked_class_methods=invoked_class_methods,
        ordered=sorted(ordered, key=lambda item: item[0]),
        entry_line=entry.line_span[0],
    )


def format_context(
    intra: IntraFileContext, entry_source: str, budget: int = CONTEXT_CHAR_BUDGET
) -> str:
    """Render snippets in original source order, entry method appended last.

    Over budget, method bodies farthest from the entry are collapsed to their
    signature; signatures are always kept.
    """
    snippets = list(intra.ordered)

    def render(collapsed: set[int]) -> str:
        parts = []
        for i, (_line, kind, text) in enumerate(snippets):
            parts.append(_collapse_to_signature(text) if i in collapsed else text)
        parts.append(entry_source)
        return "\n\n".join(parts)

    collapsed: set[int] = set()
    text = render(collapsed)
    if len(text) <= budget:
        return text
    collapsible = [
        (abs(line - intra.entry_line), i)
        for i, (line, kind, _t) in enumerate(snippets)
        if kind == "method"
    ]
    for _dist, i in sorted(collapsible, reverse=True):
        collapsed.add(i)
        text = render(collapsed)
        if len(text) <= budget:
            return text
    return text


def _collapse_to_signature(def_text: str) -> str:
    lines = def_text.splitlines()
    header_end = 0
    for i, line in enumerate(lines):
        header_end = i
        if line.rstrip().endswith(":"):
            break
    indent = lines[0][: len(lines[0]) - len(lines[0].lstrip())]
    return "\n".join(lines[: header_end + 1] + [f"{indent}    ..."])


def _user_turn(turns: tuple[ChatTurn, ...]) -> str:
    for turn in turns:
        if turn.role == "user":
            return turn.content
    raise ValueError("prompt slice has no user turn")


def assemble_memory(
    step_records,
    chosen_seq,
    context_text: str,
    entry: FunctionRef,
    focal_round=None,
) -> Conversation:
    """Seed the generation agent's chat history from the analysis phase.

    One user/assistant pair per propagation step, ordered focal-to-entry; a
    length-1 chain contributes its focal-constraint round instead. The
    intra-file context follows as the final user turn.
    """
    if not chosen_seq:
        raise ValueError("assemble_memory needs a non-empty constraint sequence")
    conv = Conversation((ChatTurn("system", prompts.GENERATION_SYSTEM),))
    if step_records:
        for record in step_records:
            conv.append("user", _user_turn(record.prompt_turns))
            conv.append("assistant", record.response)
    elif focal_round is not None:
        conv.append("user", _user_turn(focal_round.prompt_turns))
        conv.append("assistant", focal_round.response)
    conv.append("user", prompts.context_turn_text(entry, context_text))
    return conv


def summarize_method(
    conv: Conversation,
    entry: FunctionRef,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
) -> str | None:
    """Two-stage CoT, stage one: ask for a functionality summary.

    On success the request and the summary are retained in memory (exactly
    two new turns). An empty answer is retried once, then skipped.
    """
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    request = prompts.summary_request_text(entry)
    probe = conv.copy()
    probe.append("user", request)
    summary = gateway.complete(probe).strip()
    if not summary:
        summary = gateway.complete(probe).strip()
    if not summary:
        diagnostics.add("summary-missing", f"no summary produced for {entry.id}")
        return None
    conv.append("user", request)
    conv.append("assistant", summary)
    return summary


def generate_test(
    conv: Conversation,
    entry: FunctionRef,
    mode: str,
    gateway: LLMGateway,
    chain_id: str,
    diagnostics: DiagnosticLog | None = None,
) -> GeneratedTest:
    """Two-stage CoT, stage two: produce the test file itself."""
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    conv.append("user", prompts.generation_request_text(entry, mode))
    response = gateway.complete(conv)
    source = _usable_test_source(response, entry)
    if source is None:
        diagnostics.add("generation-reprompt", f"unusable test output for {entry.id}")
        conv.append("assistant", response)
        conv.append(
            "user",
            "That response did not contain a usable test file. Respond with one "
            "complete Python test file in a ```python fenced block; it must "
            f"define at least one `test_*` function that invokes `{entry.name}`.",
        )
        response = gateway.complete(conv)
        source = _usable_test_source(response, entry)
        if source is None:
            raise GenerationError(f"no usable test produced for {entry.id}")
    conv.append("assistant", response)
    return GeneratedTest(source=source, entry=entry, chain_id=chain_id, mode=mode, iteration=0)


def self_debug(
    test: GeneratedTest,
    run,
    conv: Conversation,
    gateway: LLMGateway,
    diagnostics: DiagnosticLog | None = None,
) -> GeneratedTest:
    """One revision of a test that failed without raising a type error."""
    if test.iteration != 0:
        raise ValueError("self_debug applies only to the initial test")
    diagnostics = diagnostics if diagnostics is not None else DiagnosticLog()
    error_summary = f"{run.exception_class}: {run.message}" if run else "unknown failure"
    conv.append("user", prompts.self_debug_request_text(test.source, error_summary))
    response = gateway.complete(conv)
    source = _usable_test_source(response, test.entry)
    if source is None:
        diagnostics.add("self-debug-reprompt", f"unusable revision for {test.entry.id}")
        conv.append("assistant", response)
        conv.append(
            "user",
            "Respond with the complete revised test file in a ```python fenced block.",
        )
        response = gateway.complete(conv)
        source = _usable_test_source(response, test.entry)
        if source is None:
            raise GenerationError(f"no usable revision produced for {test.entry.id}")
    conv.append("assistant", response)
    return replace(test, source=source, iteration=1)


def _usable_test_source(response: str, entry: FunctionRef) -> str | None:
    source = extract_code_block(response)
    if source is None:
        return None
    try:
        tree = ast.parse(source)
    except SyntaxError:
        return None
    has_test = any(
        isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)) and node.name.startswith("test")
        for node in ast.walk(tree)
    )
    if not has_test or not _invokes_entry(tree, entry):
        return None
    return source


def _invokes_entry(tree: ast.Module, entry: FunctionRef) -> bool:
    name = entry.name
    for node in ast.walk(tree):
        if isinstance(node, ast.Call):
            func = node.func
            if isinstance(func, ast.Name) and func.id == name:
                return True
            if isinstance(func, ast.Attribute) and func.attr == name:
                return True
    # Dunder entries are invoked through their operator, not by name.
    if name == "__getitem__":
        return any(isinstance(n, ast.Subscript) for n in ast.walk(tree))
    if name == "__iter__":
        return any(isinstance(n, (ast.For, ast.comprehension)) for n in ast.walk(tree))
    if name == "__call__":
        return any(isinstance(n, ast.Call) for n in ast.walk(tree))
    if name == "__init__":
        return entry.class_name is not None and any(
            isinstance(n, ast.Call)
            and isinstance(n.func, ast.Name)
            and n.func.id == entry.class_name.rsplit(".", 1)[-1]
            for n in ast.walk(tree)
        )
    return False


# ---------------------------------------------------------------------------
# Assertion stripping


def strip_assertions(source: str, framework_names: frozenset[str] | None = None) -> str:
    """Remove assertion statements while leaving everything else untouched.

    The evaluated work survives: ``assert f(x) == 1`` leaves ``f(x)`` behind,
    framework assertion calls are replaced by their argument expressions as
    standalone statements, and ``raises``-style context managers are unwrapped
    around their bodies. A block losing all statements gets a ``pass``.
    Unparseable input is returned as-is.
    """
    names = DEFAULT_FRAMEWORK_ASSERTIONS | RAISES_STYLE_NAMES
    if framework_names is not None:
        names = frozenset(framework_names) | RAISES_STYLE_NAMES
    current = source
    for _ in range(32):
        transformed = _strip_once(current, names)
        if transformed == current:
            return current
        try:
            ast.parse(transformed)
        except SyntaxError:
            return current
        current = transformed
    return current


def _strip_once(source: str, names: frozenset[str]) -> str:
    try:
        tree = ast.parse(source)
    except SyntaxError:
        return source
    lines = source.splitlines(keepends=True)
    protected = _multiline_string_lines(source)
    blocks = _statement_blocks(tree)

    candidates: list[tuple[ast.stmt, str]] = []
    for node in ast.walk(tree):
        if isinstance(node, ast.Assert):
            candidates.append((node, "assert"))
        elif isinstance(node, ast.Expr) and _framework_call_name(node.value, names):
            candidates.append((node, "call"))
        elif isinstance(node, (ast.With, ast.AsyncWith)) and any(
            _is_raises_item(item, names) for item in node.items
        ):
            candidates.append((node, "with"))

    candidates.sort(key=lambda pair: (pair[0].lineno, -pair[0].end_lineno))
    chosen: list[tuple[ast.stmt, str]] = []
    last_end = 0
    for node, kind in candidates:
        if node.lineno <= last_end:
            continue  # nested inside an already-chosen edit; next pass handles it
        chosen.append((node, kind))
        last_end = node.end_lineno

    if not chosen:
        return source

    edits: list[tuple[int, int, list[str]]] = []
    removals_by_block: dict[int, list[int]] = {}
    for edit_index, (node, kind) in enumerate(chosen):
        indent = _line_indent(lines, node.lineno)
        if kind == "assert":
            replacement = _assert_statements(node, source, indent)
        elif kind == "call":
            replacement = _argument_statements(node.value, source, indent)
        else:
            replacement = None  # computed below; with-unwrapping never shares lines safely
        if _shares_lines(node, tree):
            edits.append(_inline_edit(node, lines, replacement))
            continue
        if replacement is None:
            replacement = _unwrap_with(node, lines, source, indent, names, protected)
        edits.append((node.lineno, node.end_lineno, replacement))
        if not replacement:
            removals_by_block.setdefault(_block_of(node, blocks), []).append(edit_index)

    # A block losing all of its statements gets one `pass` marker back.
    for block_id, edit_indices in removals_by_block.items():
        block_stmts = blocks[block_id]
        removed = {id(node) for node, _ in chosen}
        if all(id(stmt) in removed for stmt in block_stmts):
            first = min(edit_indices)
            start, end, _ = edits[first]
            indent = _line_indent(lines, start)
            edits[first] = (start, end, [f"{indent}pass\n"])

    for start, end, replacement in sorted(edits, reverse=True):
        lines[start - 1 : end] = replacement
    return "".join(lines)


def _multiline_string_lines(source: str) -> set[int]:
    protected: set[int] = set()
    try:
        for tok in tokenize.generate_tokens(io.StringIO(source).readline):
            if tok.type == tokenize.STRING and tok.end[0] > tok.start[0]:
                protected.update(range(tok.start[0] + 1, tok.end[0] + 1))
    except tokenize.TokenizeError:
        pass
    return protected


def _statement_blocks(tree: ast.Module) -> dict[int, list[ast.stmt]]:
    blocks: dict[int, list[ast.stmt]] = {id(tree.body): tree.body}
    for node in ast.walk(tree):
        for field_name in ("body", "orelse", "finalbody"):
            body = getattr(node, field_name, None)
            if isinstance(body, list) and body and isinstance(body[0], ast.stmt):
                blocks[id(body)] = body
    return blocks


def _block_of(node: ast.stmt, blocks: dict[int, list[ast.stmt]]) -> int:
    for block_id, stmts in blocks.items():
        if any(stmt is node for stmt in stmts):
            return block_id
    return -1


def _framework_call_name(value: ast.expr, names: frozenset[str]) -> str | None:
    if not isinstance(value, ast.Call):
        return None
    func = value.func
    if isinstance(func, ast.Name) and func.id in names:
        return func.id
    if isinstance(func, ast.Attribute) and func.attr in names:
        return func.attr
    return None


def _is_raises_item(item: ast.withitem, names: frozenset[str]) -> bool:
    del names  # raises-style managers are recognized regardless of the call list
    expr = item.context_expr
    return isinstance(expr, ast.Call) and _framework_call_name(expr, RAISES_STYLE_NAMES) is not None


def _line_indent(lines: list[str], lineno: int) -> str:
    line = lines[lineno - 1]
    return line[: len(line) - len(line.lstrip())]


def _shares_lines(node: ast.stmt, tree: ast.Module) -> bool:
    """True when deleting the node's lines would damage another statement.

    Descendants are part of the node's own text. An ancestor only matters when
    its header sits on one of the node's lines (``if x: assert y``).
    """
    for other in ast.walk(tree):
        if other is node or not isinstance(other, ast.stmt):
            continue
        if _is_descendant(other, node):
            continue
        if _is_descendant(node, other):
            if node.lineno <= other.lineno <= node.end_lineno:
                return True
            continue
        if other.lineno <= node.end_lineno and other.end_lineno >= node.lineno:
            return True
    return False


def _is_descendant(inner: ast.stmt, outer: ast.stmt) -> bool:
    return inner is not outer and any(inner is n for n in ast.walk(outer))


def _inline_edit(
    node: ast.stmt, lines: list[str], replacement: list[str] | None
) -> tuple[int, int, list[str]]:
    """Replace a statement that shares lines with others, in place."""
    first = lines[node.lineno - 1]
    last = lines[node.end_lineno - 1]
    prefix = first[: node.col_offset]
    suffix = last[node.end_col_offset :]
    text = "pass"
    if replacement:
        parts = [part.strip() for part in replacement]
        if all("\n" not in part for part in parts):
            text = "; ".join(parts) or "pass"
    return (node.lineno, node.end_lineno, [prefix + text + suffix])


def _assert_parts(test_expr: ast.expr) -> list[ast.expr]:
    if isinstance(test_expr, ast.Compare):
        parts = [test_expr.left, *test_expr.comparators]
    elif isinstance(test_expr, ast.BoolOp):
        parts = list(test_expr.values)
    elif isinstance(test_expr, ast.UnaryOp) and isinstance(test_expr.op, ast.Not):
        parts = [test_expr.operand]
    else:
        parts = [test_expr]
    return [part for part in parts if not isinstance(part, ast.Constant)]


def _assert_statements(node: ast.Assert, source: str, indent: str) -> list[str]:
    statements = []
    for part in _assert_parts(node.test):
        segment = ast.get_source_segment(source, part)
        if segment is None:
            continue
        if "\n" in segment:
            segment = f"({segment})"
        statements.append(f"{indent}{segment}\n")
    return statements


def _argument_statements(call: ast.Call, source: str, indent: str) -> list[str]:
    statements = []
    for arg in list(call.args) + [kw.value for kw in call.keywords]:
        segment = ast.get_source_segment(source, arg)
        if segment is None:
            continue
        if "\n" in segment:
            segment = f"({segment})"
        statements.append(f"{indent}{segment}\n")
    return statements


def _unwrap_with(
    node: ast.With | ast.AsyncWith,
    lines: list[str],
    source: str,
    indent: str,
    names: frozenset[str],
    protected: set[int],
) -> list[str]:
    surviving = [item for item in node.items if not _is_raises_item(item, names)]
    keyword = "async with" if isinstance(node, ast.AsyncWith) else "with"
    body_start = node.body[0].lineno
    body_lines = lines[body_start - 1 : node.end_lineno]

    prefix: list[str] = []
    for item in node.items:
        if _is_raises_item(item, names) and isinstance(item.context_expr, ast.Call):
            prefix.extend(_argument_statements(item.context_expr, source, indent))

    if body_start == node.lineno:
        # Single-line form: `with raises(E): stmt; stmt`.
        segments = [ast.get_source_segment(source, stmt) for stmt in node.body]
        if any(s is None or "\n" in s for s in segments):
            return lines[node.lineno - 1 : node.end_lineno]
        joined = "; ".join(segments)
        if surviving:
            return [f"{indent}{keyword} {_items_text(surviving, source)}: {joined}\n"]
        return prefix + [f"{indent}{joined}\n"]

    if surviving:
        return [f"{indent}{keyword} {_items_text(surviving, source)}:\n", *body_lines]

    body_indent = _line_indent(lines, body_start)
    delta = len(body_indent) - len(indent)
    if delta <= 0:
        return prefix + body_lines
    dedented = []
    for offset, line in enumerate(body_lines):
        lineno = body_start + offset
        if lineno in protected or not line.strip():
            dedented.append(line)
        elif line[:delta].isspace():
            dedented.append(line[delta:])
        else:
            dedented.append(line)
    return prefix + dedented


def _items_text(items: list[ast.withitem], source: str) -> str:
    parts = []
    for item in items:
        text = ast.get_source_segment(source, item.context_expr) or ast.unparse(item.context_expr)
        if item.optional_vars is not None:
            text += f" as {ast.unparse(item.optional_vars)}"
        parts.append(text)
    return ", ".join(parts)
