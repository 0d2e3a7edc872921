"""The runner shim: one test file in, one JSON result line out.

The shim is a two-process design. The parent validates the request, spawns a
child interpreter (the active environment's own Python) that executes the
test file, and enforces the wall-clock timeout by killing the child. The
child is a self-contained stdlib-only driver, so nothing needs to be
installed inside the target project's environment.

Result semantics travel in the JSON line, never in the exit code: exit 0
means "a result was produced", non-zero is reserved for shim-level
infrastructure failure.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

SCHEMA_VERSION = 1

FRAMEWORK_AUTO = "auto"
FRAMEWORK_PYTEST = "pytest-style"
FRAMEWORK_UNITTEST = "unittest-style"
FRAMEWORKS = (FRAMEWORK_AUTO, FRAMEWORK_PYTEST, FRAMEWORK_UNITTEST)

# Grace between the child's own alarm and the parent's hard kill.
KILL_GRACE_S = 3.0


@dataclass(frozen=True)
class RunRequest:
    test_path: Path
    working_dir: Path
    timeout_s: float
    framework: str = FRAMEWORK_AUTO

    def validate(self) -> str | None:
        if self.timeout_s <= 0:
            return f"timeout must be positive, got {self.timeout_s}"
        if not self.test_path.is_file():
            return f"test file does not exist: {self.test_path}"
        if not self.working_dir.is_dir():
            return f"working directory does not exist: {self.working_dir}"
        if self.framework not in FRAMEWORKS:
            return f"unknown framework {self.framework!r}"
        return None


def classify_exception(exception_class: str, mro_names: list[str]) -> str:
    """type_error iff the builtin TypeError appears in the class lineage.

    Assertion failures cannot survive sanitation upstream, but map to
    other_error defensively like everything else.
    """
    if "TypeError" in mro_names:
        return "type_error"
    return "other_error"


def _result(status: str, failure_kind: str, exception_class: str = "", message: str = "",
            frames: list | None = None, duration_s: float = 0.0) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "status": status,
        "failure_kind": failure_kind,
        "exception_class": exception_class,
        "message": message,
        "frames": frames or [],
        "duration_s": duration_s,
    }


# The child driver. Self-contained: stdlib only, receives
# argv = [test_path, working_dir, framework, timeout_s].
DRIVER_SOURCE = r'''
import importlib.util
import inspect
import json
import os
import signal
import sys
import time
import traceback
import unittest

TEST_PATH, WORKING_DIR, FRAMEWORK, TIMEOUT_S = (
    sys.argv[1], sys.argv[2], sys.argv[3], float(sys.argv[4])
)

# fd 1 is the result protocol: everything the test prints goes to stderr.
_real_stdout = os.fdopen(os.dup(1), "w", encoding="utf-8")
os.dup2(2, 1)
sys.stdout = sys.stderr

_started = time.monotonic()


class _DriverTimeout(Exception):
    pass


def _emit(status, failure_kind, exception_class="", message="", frames=None):
    payload = {
        "schema_version": 1,
        "status": status,
        "failure_kind": failure_kind,
        "exception_class": exception_class,
        "message": message,
        "frames": frames or [],
        "duration_s": round(time.monotonic() - _started, 6),
    }
    _real_stdout.write(json.dumps(payload) + "\n")
    _real_stdout.flush()
    os._exit(0)


def _frames(exc):
    out = []
    for frame in traceback.extract_tb(exc.__traceback__):
        if frame.filename == "<string>" or frame.name.startswith("_driver_"):
            continue
        parts = frame.filename.replace("\\", "/").split("/")
        if "unittest" in parts or "importlib" in parts:
            continue
        out.append({"file": frame.filename, "line": frame.lineno, "function": frame.name})
    return out


def _classify(exc):
    mro_names = [c.__name__ for c in type(exc).__mro__]
    if isinstance(exc, _DriverTimeout):
        return "timeout"
    if "TypeError" in mro_names:
        return "type_error"
    return "other_error"


def _fail_with(exc, kind=None):
    _emit(
        "failed",
        kind or _classify(exc),
        type(exc).__name__,
        str(exc),
        _frames(exc),
    )


if hasattr(signal, "SIGALRM") and TIMEOUT_S > 0:
    def _driver_alarm(signum, frame):
        raise _DriverTimeout("test exceeded %gs" % TIMEOUT_S)

    signal.signal(signal.SIGALRM, _driver_alarm)
    signal.alarm(max(1, int(TIMEOUT_S)))

sys.path.insert(0, WORKING_DIR)

try:
    spec = importlib.util.spec_from_file_location("typeforge_generated_test", TEST_PATH)
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
except _DriverTimeout as exc:
    _emit("failed", "timeout", type(exc).__name__, str(exc))
except BaseException as exc:
    _fail_with(exc, kind="collection_error")


def _driver_functions():
    items = []
    for name, value in vars(module).items():
        if name.startswith("test") and inspect.isfunction(value):
            items.append((value.__code__.co_firstlineno, name, value))
    return [(name, fn) for _line, name, fn in sorted(items)]


def _driver_cases():
    cases = []
    for name in sorted(vars(module)):
        value = vars(module)[name]
        if inspect.isclass(value) and issubclass(value, unittest.TestCase):
            cases.append(value)
    return cases


def _driver_probe_config():
    # The project's configured runner decides which family runs first under
    # framework=auto; execution is always direct module execution.
    candidates = (
        ("pytest.ini", "pytest-style"),
        ("setup.cfg", "pytest-style"),
        ("pyproject.toml", "pytest-style"),
        ("unittest.cfg", "unittest-style"),
    )
    for filename, style in candidates:
        path = os.path.join(WORKING_DIR, filename)
        if not os.path.isfile(path):
            continue
        try:
            with open(path, "r", encoding="utf-8", errors="replace") as handle:
                text = handle.read()
        except OSError:
            continue
        if filename == "pytest.ini" or "pytest" in text:
            return style
    return None


def _driver_run_functions(functions):
    for name, fn in functions:
        try:
            fn()
        except _DriverTimeout as exc:
            _emit("failed", "timeout", type(exc).__name__, str(exc))
        except BaseException as exc:
            _fail_with(exc)


def _driver_run_cases(cases):
    class _Capture(unittest.TestResult):
        def __init__(self):
            super().__init__()
            self.first = None

        def addError(self, test, err):
            if self.first is None:
                self.first = err
            self.stop()

        def addFailure(self, test, err):
            if self.first is None:
                self.first = err
            self.stop()

    for case_cls in cases:
        suite = unittest.defaultTestLoader.loadTestsFromTestCase(case_cls)
        capture = _Capture()
        suite.run(capture)
        if capture.first is not None:
            _exc_type, exc, _tb = capture.first
            if exc.__traceback__ is None:
                exc = exc.with_traceback(_tb)
            if isinstance(exc, _DriverTimeout):
                _emit("failed", "timeout", type(exc).__name__, str(exc))
            _fail_with(exc)


functions = _driver_functions()
cases = _driver_cases()

if FRAMEWORK == "pytest-style":
    plan = [("functions", functions)]
elif FRAMEWORK == "unittest-style":
    plan = [("cases", cases)]
else:
    preferred = _driver_probe_config()
    plan = [("functions", functions), ("cases", cases)]
    if preferred == "unittest-style":
        plan.reverse()

ran_any = False
try:
    for kind, items in plan:
        if not items:
            continue
        ran_any = True
        if kind == "functions":
            _driver_run_functions(items)
        else:
            _driver_run_cases(items)
except _DriverTimeout as exc:
    _emit("failed", "timeout", type(exc).__name__, str(exc))

if not ran_any:
    _emit("failed", "collection_error", message="no test callables found")
_emit("passed", "none")
'''


def run_request(request: RunRequest) -> dict:
    """Execute one request and return the result payload."""
    error = request.validate()
    if error:
        return _result("infra", "none", message=error)

    # The child runs with cwd=working_dir: paths must survive the move.
    test_path = request.test_path.resolve()
    working_dir = request.working_dir.resolve()
    cmd = [
        sys.executable, "-B", "-c", DRIVER_SOURCE,
        str(test_path), str(working_dir),
        request.framework, str(request.timeout_s),
    ]
    try:
        proc = subprocess.run(
            cmd,
            capture_output=True,
            text=True,
            timeout=request.timeout_s + KILL_GRACE_S,
            cwd=str(working_dir),
        )
    except subprocess.TimeoutExpired:
        return _result(
            "failed", "timeout",
            message=f"test exceeded {request.timeout_s}s (killed by the shim)",
            duration_s=request.timeout_s,
        )
    except OSError as exc:
        return _result("infra", "none", message=f"could not spawn the driver: {exc}")

    sys.stderr.write(proc.stderr)
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    if proc.returncode != 0 or len(lines) != 1:
        return _result(
            "infra", "none",
            message=(
                f"driver exited {proc.returncode} with {len(lines)} stdout line(s); "
                f"stdout={proc.stdout[:500]!r}"
            ),
        )
    try:
        payload = json.loads(lines[0])
        if not isinstance(payload, dict) or "status" not in payload:
            raise ValueError("not a result object")
    except (json.JSONDecodeError, ValueError) as exc:
        return _result("infra", "none", message=f"unparseable driver output: {exc}")
    return payload


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="typeforge-runner",
        description="Run one generated test file and emit a single JSON result line.",
    )
    parser.add_argument("--test", required=True, help="path to the test file")
    parser.add_argument("--cwd", required=True, help="target project root")
    parser.add_argument("--timeout", type=float, default=60.0, help="seconds")
    parser.add_argument("--framework", default=FRAMEWORK_AUTO, choices=FRAMEWORKS)
    args = parser.parse_args(argv)

    request = RunRequest(
        test_path=Path(args.test),
        working_dir=Path(args.cwd),
        timeout_s=args.timeout,
        framework=args.framework,
    )
    try:
        payload = run_request(request)
    except Exception as exc:  # noqa: BLE001 - a crash still yields a result line
        payload = _result("infra", "none", message=f"shim crashed: {exc}")
    print(json.dumps(payload), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
