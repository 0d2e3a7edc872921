"""Built-in stub runner: a minimal in-process test executor.

Speaks the same single-line JSON protocol as the full runner shim, so the
primary test suite and the fixture pipelines never need the external runner.
It loads one test file with the project root on sys.path, runs its test
callables, and classifies the first exception by its class lineage. Test
prints are diverted to stderr; stdout carries exactly one JSON line.

Usage: python -m typeforge.stubrunner --test FILE --cwd DIR --timeout S
"""

from __future__ import annotations

import argparse
import importlib.util
import inspect
import json
import signal
import sys
import time
import traceback

SCHEMA_VERSION = 1


class _StubTimeout(Exception):
    pass


def _frames_of(exc: BaseException) -> list[dict]:
    return [
        {"file": frame.filename, "line": frame.lineno, "function": frame.name}
        for frame in traceback.extract_tb(exc.__traceback__)
        if frame.filename != __file__  # drop the stub's own call frames
    ]


def _classify(exc: BaseException) -> tuple[str, str]:
    if isinstance(exc, _StubTimeout):
        return "timeout", type(exc).__name__
    mro = type(exc).__mro__
    if TypeError in mro:
        return "type_error", type(exc).__name__
    return "other_error", type(exc).__name__


def _load_module(test_path: str):
    spec = importlib.util.spec_from_file_location("typeforge_stub_test", test_path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    return module


def _test_callables(module):
    items = []
    for name, value in vars(module).items():
        if name.startswith("test") and inspect.isfunction(value):
            items.append((value.__code__.co_firstlineno, name, value))
    items.sort()
    if items:
        return [(name, fn) for _line, name, fn in items]
    import unittest

    cases = []
    for name, value in vars(module).items():
        if inspect.isclass(value) and issubclass(value, unittest.TestCase):
            for attr in sorted(dir(value)):
                if attr.startswith("test"):
                    instance = value(attr)
                    cases.append((f"{name}.{attr}", getattr(instance, attr)))
    return cases


def run(test_path: str, cwd: str, timeout_s: float) -> dict:
    started = time.monotonic()

    def result(status, failure_kind, exception_class="", message="", frames=()):
        return {
            "schema_version": SCHEMA_VERSION,
            "status": status,
            "failure_kind": failure_kind,
            "exception_class": exception_class,
            "message": message,
            "frames": list(frames),
            "duration_s": round(time.monotonic() - started, 6),
        }

    if hasattr(signal, "SIGALRM") and timeout_s > 0:
        def _on_alarm(signum, frame):
            raise _StubTimeout(f"test exceeded {timeout_s}s")

        signal.signal(signal.SIGALRM, _on_alarm)
        signal.alarm(max(1, int(timeout_s)))

    sys.path.insert(0, cwd)
    try:
        module = _load_module(test_path)
    except _StubTimeout as exc:
        return result("failed", "timeout", message=str(exc))
    except BaseException as exc:  # noqa: BLE001 - any import failure is a collection error
        return result(
            "failed", "collection_error", type(exc).__name__, str(exc), _frames_of(exc)
        )

    callables = _test_callables(module)
    if not callables:
        return result("failed", "collection_error", message="no test callables found")

    for name, fn in callables:
        try:
            fn()
        except _StubTimeout as exc:
            return result("failed", "timeout", message=str(exc))
        except BaseException as exc:  # noqa: BLE001 - classification is the whole point
            del name  # the failing test is identified by its traceback frames
            failure_kind, exc_class = _classify(exc)
            return result(
                "failed", failure_kind, exc_class, str(exc), _frames_of(exc)
            )
    return result("passed", "none")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="typeforge-stubrunner")
    parser.add_argument("--test", required=True)
    parser.add_argument("--cwd", required=True)
    parser.add_argument("--timeout", type=float, default=60.0)
    parser.add_argument("--framework", default="auto")
    args = parser.parse_args(argv)

    # Everything the test prints must land on stderr; fd 1 is the protocol.
    real_stdout = sys.stdout
    sys.stdout = sys.stderr
    try:
        payload = run(args.test, args.cwd, args.timeout)
    except Exception as exc:  # noqa: BLE001 - stub crash is an infra result, not an exit code
        payload = {
            "schema_version": SCHEMA_VERSION,
            "status": "infra",
            "failure_kind": "none",
            "exception_class": type(exc).__name__,
            "message": f"stub runner crashed: {exc}",
            "frames": [],
            "duration_s": 0.0,
        }
    finally:
        if hasattr(signal, "SIGALRM"):
            signal.alarm(0)
        sys.stdout = real_stdout
    print(json.dumps(payload), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
