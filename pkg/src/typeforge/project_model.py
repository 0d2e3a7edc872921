"""Source indexing, static call graph construction, and invocation chains.

The call resolver is deliberately name-based and flow-insensitive: it handles
direct calls, ``self.``/``cls.``-qualified calls within the enclosing class
and its statically known in-project bases, module-qualified calls through
import bindings, and explicit ``Class.method`` references. Anything behind
dynamic dispatch is dropped and counted in the diagnostics report.
"""

from __future__ import annotations

import ast
import fnmatch
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

import networkx as nx

from .diagnostics import DiagnosticLog
from .errors import InfrastructureError
from .textutil import canonical_json

INDEX_SCHEMA_VERSION = 1
GRAPH_SCHEMA_VERSION = 1
DEFAULT_MAX_DEPTH = 5
DEFAULT_INCLUDE = ("**/*.py",)
DEFAULT_EXCLUDE = (
    "**/.*/**",
    "**/__pycache__/**",
    "**/site-packages/**",
    "**/node_modules/**",
    "**/.typeforge/**",
)

# Lifecycle dunders are never useful test entry points: they run implicitly
# when an object is built or torn down, not as a call a user would write.
_LIFECYCLE_DUNDERS = frozenset({"__init__", "__new__", "__del__", "__post_init__"})


def is_public_name(name: str) -> bool:
    """Dunder names count as public: realistic usage enters through them."""
    if name.startswith("__") and name.endswith("__"):
        return True
    return not name.startswith("_")


@dataclass(frozen=True, order=True)
class FunctionRef:
    module_path: str
    qualified_name: str
    line_span: tuple[int, int]
    is_method: bool
    class_name: str | None
    is_public: bool

    def __post_init__(self):
        if self.line_span[0] > self.line_span[1]:
            raise ValueError(f"invalid line span {self.line_span}")
        if self.is_method != (self.class_name is not None):
            raise ValueError("is_method must match presence of class_name")

    @property
    def id(self) -> str:
        return f"{self.module_path}::{self.qualified_name}"

    @property
    def name(self) -> str:
        return self.qualified_name.rsplit(".", 1)[-1]

    def to_payload(self) -> dict:
        return {
            "module_path": self.module_path,
            "qualified_name": self.qualified_name,
            "line_span": list(self.line_span),
            "is_method": self.is_method,
            "class_name": self.class_name,
            "is_public": self.is_public,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FunctionRef":
        return cls(
            module_path=payload["module_path"],
            qualified_name=payload["qualified_name"],
            line_span=tuple(payload["line_span"]),
            is_method=payload["is_method"],
            class_name=payload.get("class_name"),
            is_public=payload["is_public"],
        )


@dataclass
class ClassInfo:
    name: str
    line_span: tuple[int, int]
    bases: tuple[str, ...]
    field_lines: tuple[tuple[int, int], ...]
    methods: dict[str, FunctionRef] = field(default_factory=dict)


@dataclass
class ModuleInfo:
    path: str
    module_name: str
    source: str
    tree: ast.Module
    import_spans: tuple[tuple[int, int], ...]
    global_spans: tuple[tuple[int, int], ...]
    import_bindings: dict[str, str]
    classes: dict[str, ClassInfo]
    functions: dict[str, FunctionRef]
    function_nodes: dict[str, ast.AST]

    def lines(self, span: tuple[int, int]) -> str:
        text = self.source.splitlines()
        return "\n".join(text[span[0] - 1 : span[1]])


@dataclass
class SourceIndex:
    root: Path
    modules: dict[str, ModuleInfo]
    diagnostics: DiagnosticLog
    skipped: list[tuple[str, str]]

    @property
    def functions(self) -> list[FunctionRef]:
        refs = [f for m in self.modules.values() for f in m.functions.values()]
        return sorted(refs, key=lambda r: (r.module_path, r.line_span[0], r.qualified_name))

    def lookup(self, ref_id: str) -> FunctionRef:
        module_path, _, qualified = ref_id.partition("::")
        module = self.modules.get(module_path)
        if module is None or qualified not in module.functions:
            raise KeyError(ref_id)
        return module.functions[qualified]

    def find_function(self, name: str) -> list[FunctionRef]:
        """All functions whose qualified name or bare name matches."""
        out = []
        for ref in self.functions:
            if name in (ref.qualified_name, ref.name, ref.id):
                out.append(ref)
        return out

    def source_of(self, ref: FunctionRef) -> str:
        module = self.modules[ref.module_path]
        return module.lines(ref.line_span)

    def node_of(self, ref: FunctionRef) -> ast.AST:
        return self.modules[ref.module_path].function_nodes[ref.qualified_name]

    def parameter_names(self, ref: FunctionRef) -> list[str]:
        """Declared parameter names, with the receiver slot dropped by position."""
        node = self.node_of(ref)
        args = node.args
        names = [a.arg for a in args.posonlyargs + args.args]
        if ref.is_method and names and names[0] in ("self", "cls") and not _is_static(node):
            names = names[1:]
        if args.vararg:
            names.append(args.vararg.arg)
        names.extend(a.arg for a in args.kwonlyargs)
        if args.kwarg:
            names.append(args.kwarg.arg)
        return names

    def to_payload(self) -> dict:
        files = {}
        for path in sorted(self.modules):
            module = self.modules[path]
            files[path] = {
                "module_name": module.module_name,
                "functions": [f.to_payload() for f in sorted(module.functions.values())],
                "imports": [list(span) for span in module.import_spans],
                "globals": [list(span) for span in module.global_spans],
                "classes": sorted(module.classes),
            }
        return {
            "schema_version": INDEX_SCHEMA_VERSION,
            "files": files,
            "skipped": [{"path": p, "error": e} for p, e in sorted(self.skipped)],
        }

    def serialize(self) -> str:
        return canonical_json(self.to_payload())


def _is_static(node: ast.AST) -> bool:
    for deco in getattr(node, "decorator_list", []):
        if isinstance(deco, ast.Name) and deco.id == "staticmethod":
            return True
    return False


def _module_name_for(rel_path: PurePosixPath) -> str:
    parts = list(rel_path.parts)
    if parts[-1] == "__init__.py":
        parts = parts[:-1]
    else:
        parts[-1] = parts[-1][: -len(".py")]
    return ".".join(parts)


def _matches(rel: str, patterns: tuple[str, ...]) -> bool:
    for pat in patterns:
        if fnmatch.fnmatch(rel, pat):
            return True
        # fnmatch has no ** semantics: let `**/x` also match a root-level `x`.
        if pat.startswith("**/") and fnmatch.fnmatch(rel, pat[3:]):
            return True
    return False


def index_project(
    root: Path | str,
    include: tuple[str, ...] = DEFAULT_INCLUDE,
    exclude: tuple[str, ...] = DEFAULT_EXCLUDE,
) -> SourceIndex:
    root = Path(root)
    if not root.is_dir():
        raise InfrastructureError(f"project root {root} is not a readable directory")
    diagnostics = DiagnosticLog()
    skipped: list[tuple[str, str]] = []
    modules: dict[str, ModuleInfo] = {}
    for path in sorted(root.rglob("*.py")):
        rel = path.relative_to(root).as_posix()
        if not _matches(rel, include) or _matches(rel, exclude):
            continue
        try:
            source = path.read_text(encoding="utf-8")
            tree = ast.parse(source, filename=rel)
        except (SyntaxError, UnicodeDecodeError, OSError) as exc:
            skipped.append((rel, f"{type(exc).__name__}: {exc}"))
            diagnostics.add("parse-error", f"skipped {rel}", str(exc))
            continue
        modules[rel] = _analyze_module(rel, source, tree)
    return SourceIndex(root=root, modules=modules, diagnostics=diagnostics, skipped=skipped)


def _analyze_module(rel: str, source: str, tree: ast.Module) -> ModuleInfo:
    import_spans: list[tuple[int, int]] = []
    global_spans: list[tuple[int, int]] = []
    bindings: dict[str, str] = {}
    classes: dict[str, ClassInfo] = {}
    functions: dict[str, FunctionRef] = {}
    nodes: dict[str, ast.AST] = {}
    module_name = _module_name_for(PurePosixPath(rel))
    package = module_name.rsplit(".", 1)[0] if "." in module_name else ""

    def add_function(node, class_path: str | None):
        qualified = f"{class_path}.{node.name}" if class_path else node.name
        ref = FunctionRef(
            module_path=rel,
            qualified_name=qualified,
            line_span=(node.lineno, node.end_lineno),
            is_method=class_path is not None,
            class_name=class_path,
            is_public=is_public_name(node.name),
        )
        functions[qualified] = ref
        nodes[qualified] = node
        return ref

    def walk_class(node: ast.ClassDef, prefix: str):
        class_path = f"{prefix}.{node.name}" if prefix else node.name
        bases = tuple(
            b.id if isinstance(b, ast.Name) else ast.unparse(b) for b in node.bases
        )
        field_lines = []
        info = ClassInfo(
            name=class_path,
            line_span=(node.lineno, node.end_lineno),
            bases=bases,
            field_lines=(),
        )
        for item in node.body:
            if isinstance(item, (ast.FunctionDef, ast.AsyncFunctionDef)):
                info.methods[item.name] = add_function(item, class_path)
            elif isinstance(item, (ast.Assign, ast.AnnAssign)):
                field_lines.append((item.lineno, item.end_lineno))
            elif isinstance(item, ast.ClassDef):
                walk_class(item, class_path)
        info.field_lines = tuple(field_lines)
        classes[class_path] = info

    for node in tree.body:
        if isinstance(node, ast.Import):
            import_spans.append((node.lineno, node.end_lineno))
            for alias in node.names:
                bindings[alias.asname or alias.name.split(".")[0]] = (
                    alias.name if alias.asname else alias.name.split(".")[0]
                )
                if alias.asname is None:
                    bindings[alias.name] = alias.name
        elif isinstance(node, ast.ImportFrom):
            import_spans.append((node.lineno, node.end_lineno))
            base = node.module or ""
            if node.level:
                # Relative import: anchor to the containing package.
                anchor = module_name.rsplit(".", node.level)[0] if module_name.count(".") >= node.level - 1 else package
                base = f"{anchor}.{node.module}" if node.module else anchor
            for alias in node.names:
                bindings[alias.asname or alias.name] = f"{base}.{alias.name}" if base else alias.name
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            add_function(node, None)
        elif isinstance(node, ast.ClassDef):
            walk_class(node, "")
        elif isinstance(node, (ast.Assign, ast.AnnAssign)):
            global_spans.append((node.lineno, node.end_lineno))

    return ModuleInfo(
        path=rel,
        module_name=module_name,
        source=source,
        tree=tree,
        import_spans=tuple(import_spans),
        global_spans=tuple(global_spans),
        import_bindings=bindings,
        classes=classes,
        functions=functions,
        function_nodes=nodes,
    )


@dataclass(frozen=True)
class CallEdge:
    caller: FunctionRef
    callee: FunctionRef
    call_site_line: int


@dataclass
class CallGraph:
    nodes: tuple[FunctionRef, ...]
    edges: tuple[CallEdge, ...]
    diagnostics: DiagnosticLog
    unresolved_calls: int = 0

    def __post_init__(self):
        node_set = set(self.nodes)
        for edge in self.edges:
            if edge.caller not in node_set or edge.callee not in node_set:
                raise ValueError(f"edge endpoint not in nodes: {edge}")

    def callers_of(self, ref: FunctionRef) -> list[FunctionRef]:
        return sorted({e.caller for e in self.edges if e.callee == ref})

    def callees_of(self, ref: FunctionRef) -> list[FunctionRef]:
        return sorted({e.callee for e in self.edges if e.caller == ref})

    def to_payload(self) -> dict:
        return {
            "schema_version": GRAPH_SCHEMA_VERSION,
            "nodes": [n.id for n in sorted(self.nodes)],
            "edges": [
                {"caller": e.caller.id, "callee": e.callee.id, "line": e.call_site_line}
                for e in sorted(self.edges, key=lambda e: (e.caller.id, e.callee.id, e.call_site_line))
            ],
            "unresolved_calls": self.unresolved_calls,
        }

    def serialize(self) -> str:
        return canonical_json(self.to_payload())


class _CallCollector(ast.NodeVisitor):
    """Collect call targets inside a single function body, skipping nested defs."""

    def __init__(self):
        self.calls: list[ast.Call] = []
        self._depth = 0

    def visit_FunctionDef(self, node):
        self._depth += 1
        self.generic_visit(node)
        self._depth -= 1

    visit_AsyncFunctionDef = visit_FunctionDef

    def visit_Lambda(self, node):
        self.generic_visit(node)

    def visit_Call(self, node):
        self.calls.append(node)
        self.generic_visit(node)


def build_call_graph(index: SourceIndex) -> CallGraph:
    diagnostics = DiagnosticLog()
    by_module_name = {m.module_name: m for m in index.modules.values()}
    edges: set[CallEdge] = set()
    unresolved = 0

    for module in index.modules.values():
        for qualified, caller in module.functions.items():
            collector = _CallCollector()
            node = module.function_nodes[qualified]
            for stmt in node.body:
                collector.visit(stmt)
            for call in collector.calls:
                callee = _resolve_call(call, caller, module, by_module_name)
                if callee is None:
                    if _is_project_shaped(call):
                        unresolved += 1
                    continue
                edges.add(CallEdge(caller=caller, callee=callee, call_site_line=call.lineno))

    if unresolved:
        diagnostics.add(
            "unresolved-calls",
            f"{unresolved} call site(s) could not be resolved statically and were omitted",
        )
    return CallGraph(
        nodes=tuple(index.functions),
        edges=tuple(sorted(edges, key=lambda e: (e.caller.id, e.callee.id, e.call_site_line))),
        diagnostics=diagnostics,
        unresolved_calls=unresolved,
    )


def _is_project_shaped(call: ast.Call) -> bool:
    # Unresolved attribute calls are the dynamically dispatched ones worth
    # counting; unresolved bare names are almost always builtins.
    return isinstance(call.func, ast.Attribute)


def _resolve_call(call, caller, module, by_module_name):
    func = call.func
    if isinstance(func, ast.Name):
        return _resolve_name(func.id, caller, module, by_module_name)
    if isinstance(func, ast.Attribute) and isinstance(func.value, ast.Name):
        receiver = func.value.id
        if receiver in ("self", "cls") and caller.is_method:
            return _resolve_method(func.attr, caller.class_name, module, by_module_name)
        target = module.import_bindings.get(receiver, receiver)
        resolved = _resolve_dotted(f"{target}.{func.attr}", by_module_name)
        if resolved is not None:
            return resolved
        if receiver in module.classes and func.attr in module.classes[receiver].methods:
            return module.classes[receiver].methods[func.attr]
    if isinstance(func, ast.Attribute):
        parts = _dotted_parts(func)
        if parts is not None:
            head = module.import_bindings.get(parts[0], parts[0])
            return _resolve_dotted(".".join([head, *parts[1:]]), by_module_name)
    return None


def _dotted_parts(node: ast.Attribute) -> list[str] | None:
    parts = [node.attr]
    value = node.value
    while isinstance(value, ast.Attribute):
        parts.append(value.attr)
        value = value.value
    if isinstance(value, ast.Name):
        parts.append(value.id)
        return list(reversed(parts))
    return None


def _resolve_name(name, caller, module, by_module_name):
    if name in module.functions:
        return module.functions[name]
    if name in module.classes:
        init = module.classes[name].methods.get("__init__")
        return init
    bound = module.import_bindings.get(name)
    if bound:
        return _resolve_dotted(bound, by_module_name)
    return None


def _resolve_dotted(dotted: str, by_module_name):
    # Longest-prefix match of the dotted path against indexed module names;
    # the remainder is resolved as function, Class.__init__, or Class.method.
    parts = dotted.split(".")
    for cut in range(len(parts) - 1, 0, -1):
        module = by_module_name.get(".".join(parts[:cut]))
        if module is None:
            continue
        rest = parts[cut:]
        if len(rest) == 1:
            if rest[0] in module.functions:
                return module.functions[rest[0]]
            if rest[0] in module.classes:
                return module.classes[rest[0]].methods.get("__init__")
        elif len(rest) == 2:
            cls = module.classes.get(rest[0])
            if cls:
                return cls.methods.get(rest[1])
        return None
    return None


def _resolve_method(attr, class_name, module, by_module_name):
    info = module.classes.get(class_name)
    seen = set()
    while info is not None and info.name not in seen:
        seen.add(info.name)
        if attr in info.methods:
            return info.methods[attr]
        # Follow the first statically known in-project base, by name.
        next_info = None
        for base in info.bases:
            if base in module.classes:
                next_info = module.classes[base]
                break
            bound = module.import_bindings.get(base)
            if bound:
                for m in by_module_name.values():
                    if bound.startswith(m.module_name + ".") or bound == m.module_name:
                        candidate = bound[len(m.module_name) + 1 :] if bound != m.module_name else ""
                        if candidate in m.classes:
                            next_info = m.classes[candidate]
                            module = m
                            break
                if next_info:
                    break
        info = next_info
    return None


@dataclass(frozen=True)
class InvocationChain:
    steps: tuple[FunctionRef, ...]

    def __post_init__(self):
        if not self.steps:
            raise ValueError("a chain needs at least one step")
        if len(set(self.steps)) != len(self.steps):
            raise ValueError("chain steps must be pairwise distinct")

    @property
    def entry(self) -> FunctionRef:
        return self.steps[0]

    @property
    def focal(self) -> FunctionRef:
        return self.steps[-1]

    @property
    def id(self) -> str:
        return " -> ".join(s.id for s in self.steps)

    def __len__(self) -> int:
        return len(self.steps)


def find_entry_points(graph: CallGraph) -> list[FunctionRef]:
    """Public functions in caller-less regions of the graph.

    Built on the condensation so that a cycle with no external caller still
    yields its members: nobody outside calls into it, so each public member
    is a place a user could realistically start.
    """
    digraph = nx.DiGraph()
    digraph.add_nodes_from(graph.nodes)
    digraph.add_edges_from((e.caller, e.callee) for e in graph.edges)
    condensed = nx.condensation(digraph)
    entries = []
    for scc_id in condensed.nodes:
        if condensed.in_degree(scc_id) > 0:
            continue
        for ref in condensed.nodes[scc_id]["members"]:
            if ref.is_public and ref.name not in _LIFECYCLE_DUNDERS:
                entries.append(ref)
    return sorted(entries, key=lambda r: (r.module_path, r.line_span[0]))


def extract_chains(
    graph: CallGraph, focal: FunctionRef, max_depth: int = DEFAULT_MAX_DEPTH
) -> list[InvocationChain]:
    if focal not in set(graph.nodes):
        raise ValueError(f"{focal.id} is not in the call graph")
    callers: dict[FunctionRef, list[FunctionRef]] = {}
    for edge in graph.edges:
        callers.setdefault(edge.callee, []).append(edge.caller)

    chains: list[InvocationChain] = []

    def walk(path: list[FunctionRef]) -> None:
        head = path[0]
        extendable = sorted(set(callers.get(head, [])) - set(path))
        if not extendable:
            chains.append(InvocationChain(tuple(path)))
            return
        if len(path) >= max_depth:
            # Deeper chains exist but would exceed the depth bound; they are
            # dropped rather than truncated so every chain starts at an entry.
            return
        for caller in extendable:
            walk([caller, *path])

    walk([focal])
    if not chains:
        chains.append(InvocationChain((focal,)))
    return sorted(chains, key=lambda c: (len(c), tuple(s.id for s in c.steps)))


def sample_representative_chain(chains: list[InvocationChain]) -> InvocationChain:
    if not chains:
        raise ValueError("cannot sample from an empty chain list")
    return min(
        chains,
        key=lambda c: (-len(c), c.entry.qualified_name, tuple(s.id for s in c.steps)),
    )


def write_cache(index: SourceIndex, graph: CallGraph, cache_dir: Path) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    (cache_dir / "index.json").write_text(index.serialize(), encoding="utf-8")
    (cache_dir / "graph.json").write_text(graph.serialize(), encoding="utf-8")
