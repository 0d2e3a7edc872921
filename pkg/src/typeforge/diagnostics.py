"""Non-fatal findings accumulated while the pipeline runs.

Diagnostics never abort processing; they are attached to the artifact that
produced them (index, analysis file, method record) so a human can triage
without rerunning.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    context: str = ""

    def to_payload(self) -> dict:
        return {"code": self.code, "message": self.message, "context": self.context}


@dataclass
class DiagnosticLog:
    items: list[Diagnostic] = field(default_factory=list)

    def add(self, code: str, message: str, context: str = "") -> None:
        self.items.append(Diagnostic(code, message, context))

    def extend(self, other: "DiagnosticLog") -> None:
        self.items.extend(other.items)

    def codes(self) -> list[str]:
        return [d.code for d in self.items]

    def to_payload(self) -> list[dict]:
        return [d.to_payload() for d in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)
