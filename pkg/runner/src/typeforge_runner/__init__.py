"""typeforge-runner: executes one generated test file inside the target
project's environment and reports a single structured JSON result line."""

from .shim import RunRequest, classify_exception, main, run_request

__version__ = "0.1.0"
