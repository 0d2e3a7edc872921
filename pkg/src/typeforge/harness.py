"""Runner orchestration: spawn a conforming runner executable, parse its
single-line JSON result, and classify the outcome for the pipeline."""

from __future__ import annotations

import json
import shlex
import subprocess
import sys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .testgen import GeneratedTest

RUN_RESULT_SCHEMA_VERSION = 1

STATUS_PASSED = "passed"
STATUS_FAILED = "failed"
STATUS_INFRA = "infra"
STATUSES = (STATUS_PASSED, STATUS_FAILED, STATUS_INFRA)

FAILURE_NONE = "none"
FAILURE_TYPE_ERROR = "type_error"
FAILURE_OTHER = "other_error"
FAILURE_COLLECTION = "collection_error"
FAILURE_TIMEOUT = "timeout"
FAILURE_KINDS = (FAILURE_NONE, FAILURE_TYPE_ERROR, FAILURE_OTHER, FAILURE_COLLECTION, FAILURE_TIMEOUT)

# Grace added on top of the runner's own timeout before the harness kills it.
TIMEOUT_GRACE_S = 5.0


@dataclass(frozen=True)
class RunResult:
    status: str
    failure_kind: str
    exception_class: str = ""
    message: str = ""
    frames: tuple[tuple[str, int, str], ...] = ()
    duration_s: float = 0.0

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.failure_kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.failure_kind!r}")
        if self.status == STATUS_PASSED and self.failure_kind != FAILURE_NONE:
            raise ValueError("a passed run cannot carry a failure kind")
        if self.status == STATUS_FAILED and self.failure_kind == FAILURE_NONE:
            raise ValueError("a failed run must carry a failure kind")

    def to_payload(self) -> dict:
        return {
            "schema_version": RUN_RESULT_SCHEMA_VERSION,
            "status": self.status,
            "failure_kind": self.failure_kind,
            "exception_class": self.exception_class,
            "message": self.message,
            "frames": [{"file": f, "line": l, "function": fn} for f, l, fn in self.frames],
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "RunResult":
        frames = tuple(
            (f["file"], int(f["line"]), f["function"]) for f in payload.get("frames", [])
        )
        return cls(
            status=payload["status"],
            failure_kind=payload["failure_kind"],
            exception_class=payload.get("exception_class", ""),
            message=payload.get("message", ""),
            frames=frames,
            duration_s=float(payload.get("duration_s", 0.0)),
        )


class OutcomeKind(Enum):
    PASS = "Pass"
    TYPE_ERROR_TRIGGERED = "TypeErrorTriggered"
    OTHER_FAILURE = "OtherFailure"
    TIMEOUT = "Timeout"
    INFRA = "Infra"


@dataclass(frozen=True)
class TestOutcome:
    kind: OutcomeKind
    run: RunResult | None
    raw_stdout: str = ""
    raw_stderr: str = ""


def classify_outcome(status: str, failure_kind: str) -> OutcomeKind:
    """The bijective (status, failure_kind) -> outcome table.

    Combinations that violate the RunResult invariants raise ValueError.
    """
    if status == STATUS_INFRA:
        return OutcomeKind.INFRA
    if status == STATUS_PASSED:
        if failure_kind != FAILURE_NONE:
            raise ValueError(f"invalid pair ({status}, {failure_kind})")
        return OutcomeKind.PASS
    if status == STATUS_FAILED:
        if failure_kind == FAILURE_TYPE_ERROR:
            return OutcomeKind.TYPE_ERROR_TRIGGERED
        if failure_kind in (FAILURE_OTHER, FAILURE_COLLECTION):
            return OutcomeKind.OTHER_FAILURE
        if failure_kind == FAILURE_TIMEOUT:
            return OutcomeKind.TIMEOUT
        raise ValueError(f"invalid pair ({status}, {failure_kind})")
    raise ValueError(f"unknown status {status!r}")


def default_runner_cmd() -> list[str]:
    """The built-in stub runner, used whenever no external runner is configured.

    -B keeps bytecode caches out of the archived artifact tree.
    """
    return [sys.executable, "-B", "-m", "typeforge.stubrunner"]


def runner_cmd_from_spec(spec: str | None) -> list[str]:
    if not spec:
        return default_runner_cmd()
    return shlex.split(spec)


@dataclass
class ExecutionEnv:
    working_dir: Path
    timeout_s: float = 60.0
    runner_cmd: list[str] | None = None
    framework: str = "auto"


def execute(test: GeneratedTest, env: ExecutionEnv, archive_dir: Path) -> TestOutcome:
    """Run one generated test through the runner and classify the result.

    Every execution archives the test source, the parsed result, and the raw
    streams under ``archive_dir`` so failures can be triaged offline.
    """
    # Resolve up front: the runner child executes with cwd=working_dir, so
    # relative paths (a relative --out, most commonly) must not re-resolve.
    archive_dir = archive_dir.resolve()
    working_dir = env.working_dir.resolve()
    archive_dir.mkdir(parents=True, exist_ok=True)
    test_path = archive_dir / "test_gen.py"
    test_path.write_text(test.source, encoding="utf-8")

    cmd = list(env.runner_cmd or default_runner_cmd()) + [
        "--test", str(test_path),
        "--cwd", str(working_dir),
        "--timeout", str(env.timeout_s),
        "--framework", env.framework,
    ]
    try:
        proc = subprocess.run(
            cmd,
            capture_output=True,
            text=True,
            timeout=env.timeout_s + TIMEOUT_GRACE_S,
            cwd=str(working_dir),
        )
        stdout, stderr, returncode = proc.stdout, proc.stderr, proc.returncode
    except subprocess.TimeoutExpired as exc:
        stdout = (exc.stdout or b"").decode("utf-8", "replace") if isinstance(exc.stdout, bytes) else (exc.stdout or "")
        stderr = (exc.stderr or b"").decode("utf-8", "replace") if isinstance(exc.stderr, bytes) else (exc.stderr or "")
        run = RunResult(
            status=STATUS_FAILED,
            failure_kind=FAILURE_TIMEOUT,
            message=f"runner exceeded {env.timeout_s + TIMEOUT_GRACE_S:.0f}s wall clock",
        )
        outcome = TestOutcome(OutcomeKind.TIMEOUT, run, stdout, stderr)
        _archive(archive_dir, outcome)
        return outcome
    except OSError as exc:
        outcome = TestOutcome(OutcomeKind.INFRA, None, "", f"failed to spawn runner: {exc}")
        _archive(archive_dir, outcome)
        return outcome

    outcome = _interpret(stdout, stderr, returncode, working_dir, archive_dir)
    _archive(archive_dir, outcome)
    return outcome


def _interpret(
    stdout: str, stderr: str, returncode: int, working_dir: Path, archive_dir: Path
) -> TestOutcome:
    lines = [line for line in stdout.splitlines() if line.strip()]
    if returncode != 0:
        return TestOutcome(OutcomeKind.INFRA, None, stdout, stderr)
    if len(lines) != 1:
        return TestOutcome(OutcomeKind.INFRA, None, stdout, stderr)
    try:
        payload = json.loads(lines[0])
        run = RunResult.from_payload(payload)
        kind = classify_outcome(run.status, run.failure_kind)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return TestOutcome(OutcomeKind.INFRA, None, stdout, stderr)
    normalized = _normalize(run, working_dir, archive_dir)
    # Archive the normalized line: raw bytes are only evidence for infra cases.
    stable_stdout = json.dumps(normalized.to_payload(), sort_keys=True) + "\n"
    return TestOutcome(kind, normalized, stable_stdout, stderr)


def _normalize(run: RunResult, working_dir: Path, archive_dir: Path) -> RunResult:
    """Make archived results run-location independent.

    Frame paths are relativized and the wall-clock duration zeroed so that two
    replay runs of the same cassette produce byte-identical artifacts.
    """
    frames = []
    for file, line, function in run.frames:
        path = Path(file)
        for base in (working_dir, archive_dir):
            try:
                path = path.relative_to(base)
                break
            except ValueError:
                continue
        else:
            path = Path(path.name)
        frames.append((path.as_posix(), line, function))
    return RunResult(
        status=run.status,
        failure_kind=run.failure_kind,
        exception_class=run.exception_class,
        message=run.message,
        frames=tuple(frames),
        duration_s=0.0,
    )


def _archive(archive_dir: Path, outcome: TestOutcome) -> None:
    (archive_dir / "stdout.txt").write_text(outcome.raw_stdout, encoding="utf-8")
    (archive_dir / "stderr.txt").write_text(outcome.raw_stderr, encoding="utf-8")
    payload = {
        "outcome": outcome.kind.value,
        "run": outcome.run.to_payload() if outcome.run else None,
    }
    (archive_dir / "run_result.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


ACTION_RECORD_NEGATIVE = "record_negative"
ACTION_REFLECT = "reflect"
ACTION_SELF_DEBUG = "self_debug"
ACTION_DISCARD = "discard"
ACTION_RECORD_DIAGNOSTIC = "record_diagnostic"


def dispatch(outcome: TestOutcome, test: GeneratedTest) -> str:
    """Pipeline control flow after one execution."""
    if outcome.kind is OutcomeKind.PASS:
        return ACTION_RECORD_NEGATIVE
    if outcome.kind is OutcomeKind.TYPE_ERROR_TRIGGERED:
        return ACTION_REFLECT
    if outcome.kind is OutcomeKind.OTHER_FAILURE:
        return ACTION_SELF_DEBUG if test.iteration == 0 else ACTION_DISCARD
    return ACTION_RECORD_DIAGNOSTIC
