import os
import re
import time
import shutil
import signal
import logging
import tempfile
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Dict

from racg_backend.errors import ContractViolation, ToolchainMissingError
from racg_backend.models import ExecutionStatus
from racg_backend.schemas import ExecutionFeedback, LanguageProfile

logger = logging.getLogger(__name__)

PROGRAM_STEM = "main"


@dataclass
class _RawRun:
    returncode: Optional[int]
    stdout: str
    stderr: str
    duration_s: float
    timed_out: bool


def _expand(template: List[str], subs: Dict[str, str]) -> List[str]:
    return [arg.replace("{file}", subs["file"]).replace("{dir}", subs["dir"]) for arg in template]


def _check_toolchain(template: List[str]) -> None:
    binary = template[0]
    if "{file}" in binary or "{dir}" in binary:
        return  # the program itself (a compiled binary) is the executable
    if os.path.sep in binary or (os.path.altsep and os.path.altsep in binary):
        if not os.path.exists(binary):
            raise ToolchainMissingError(f"Toolchain binary not found: {binary}")
    elif shutil.which(binary) is None:
        raise ToolchainMissingError(f"Toolchain binary not on PATH: {binary}")


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def _scrub(text: str, work_dir: str) -> str:
    """Strips the temporary work directory so diagnostics name files relative to it."""
    for prefix in sorted({os.path.realpath(work_dir), work_dir}, key=len, reverse=True):
        text = text.replace(prefix + os.sep, "").replace(prefix, ".")
    return text


def _run(argv: List[str], stdin: str, cwd: str, timeout_s: float) -> _RawRun:
    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=cwd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,  # own process group, so a timeout kills the whole tree
        )
    except FileNotFoundError as e:
        raise ToolchainMissingError(f"Could not start {argv[0]}: {e}")
    try:
        out, err = proc.communicate(input=stdin.encode("utf-8"), timeout=timeout_s)
        timed_out = False
    except subprocess.TimeoutExpired:
        _kill_tree(proc)
        out, err = proc.communicate()
        timed_out = True
    return _RawRun(
        returncode=proc.returncode,
        stdout=_scrub(out.decode("utf-8", errors="replace"), cwd),
        stderr=_scrub(err.decode("utf-8", errors="replace"), cwd),
        duration_s=time.monotonic() - started,
        timed_out=timed_out,
    )


def extract_error_line(text: str, pattern: str) -> Optional[int]:
    """Line number from the last match of pattern (innermost frame in most tracebacks)."""
    matches = re.findall(pattern, text)
    if not matches:
        return None
    try:
        return int(matches[-1])
    except ValueError:
        return None


def _classify(raw: _RawRun, profile: LanguageProfile, failure_status: ExecutionStatus) -> ExecutionFeedback:
    if raw.timed_out:
        status = ExecutionStatus.TIMEOUT
    elif raw.returncode != 0:
        status = failure_status
    elif profile.fatal_stderr_pattern and re.search(profile.fatal_stderr_pattern, raw.stderr):
        status = failure_status
    else:
        status = ExecutionStatus.SUCCESS

    error_line = None
    if status != ExecutionStatus.SUCCESS:
        error_line = extract_error_line(raw.stderr, profile.error_line_pattern)
        if error_line is None:
            error_line = extract_error_line(raw.stdout, profile.error_line_pattern)

    duration = raw.duration_s
    if status == ExecutionStatus.TIMEOUT:
        duration = max(duration, profile.timeout_s)
    return ExecutionFeedback(
        status=status,
        stderr=raw.stderr,
        stdout=raw.stdout,
        error_line=error_line,
        duration_s=duration,
        exit_code=raw.returncode,
    )


def execute(program: str, inputs: List[str], profile: LanguageProfile) -> List[ExecutionFeedback]:
    """Runs a program once per input inside a fresh temporary directory.

    The program is compiled first when the profile has a compile command; a failed
    compile short-circuits to one CompileError feedback. An empty input list means
    one run on empty standard input.

    Raises:
        ToolchainMissingError: the compiler/interpreter is not available on this host.
    """
    extension = profile.file_extension if profile.file_extension.startswith(".") else f".{profile.file_extension}"
    with tempfile.TemporaryDirectory(prefix="racg-exec-") as work_dir:
        file_name = f"{PROGRAM_STEM}{extension}"
        Path(work_dir, file_name).write_text(program, encoding="utf-8")
        # {file} stays relative to the working directory so diagnostics carry no temp paths
        subs = {"file": file_name, "dir": work_dir}

        if profile.compile_cmd:
            argv = _expand(profile.compile_cmd, subs)
            _check_toolchain(profile.compile_cmd)
            compiled = _classify(_run(argv, "", work_dir, profile.timeout_s), profile, ExecutionStatus.COMPILE_ERROR)
            if compiled.status != ExecutionStatus.SUCCESS:
                logger.info(f"[{profile.name}] compile failed: {compiled.status.value}")
                return [compiled]

        argv = _expand(profile.run_cmd, subs)
        _check_toolchain(profile.run_cmd)
        feedbacks = []
        for stdin in (inputs or [""]):
            feedback = _classify(_run(argv, stdin, work_dir, profile.timeout_s), profile, ExecutionStatus.RUNTIME_ERROR)
            feedbacks.append(feedback)
        logger.debug(f"[{profile.name}] executed on {len(feedbacks)} input(s): "
                     f"{[f.status.value for f in feedbacks]}")
        return feedbacks


def aggregate(feedbacks: List[ExecutionFeedback]) -> ExecutionFeedback:
    """Success iff every run succeeded; otherwise the first failing run represents the set."""
    if not feedbacks:
        raise ContractViolation("aggregate needs at least one feedback")
    for feedback in feedbacks:
        if feedback.status != ExecutionStatus.SUCCESS:
            return feedback
    return feedbacks[0]


# --- Feedback rendering ---

POSIX_PATH_RE = re.compile(r"(?<![\w.])(?:/[\w.\-+@~]+)+/?")
WINDOWS_PATH_RE = re.compile(r"\b[A-Za-z]:\\[^\s:\"']+")
HEX_RE = re.compile(r"0x[0-9a-fA-F]+")


def normalize_feedback(feedback: ExecutionFeedback) -> str:
    """Canonical form used to compare feedback across iterations."""
    if feedback.status == ExecutionStatus.SUCCESS:
        return ExecutionStatus.SUCCESS.value
    text = WINDOWS_PATH_RE.sub("<path>", feedback.stderr)
    text = POSIX_PATH_RE.sub("<path>", text)
    text = HEX_RE.sub("0x<addr>", text)
    text = "\n".join(line.rstrip() for line in text.splitlines()).rstrip()
    return f"{feedback.status.value}\n{text}" if text else feedback.status.value


def offending_line(program: str, error_line: Optional[int]) -> Optional[str]:
    if error_line is None:
        return None
    lines = program.splitlines()
    if 1 <= error_line <= len(lines) and lines[error_line - 1].strip():
        return lines[error_line - 1].strip()
    return None


def feedback_error_text(feedback: ExecutionFeedback) -> str:
    """The error message of a failed run; never empty for a failure."""
    message = feedback.stderr.strip()
    if message:
        return message
    if feedback.status == ExecutionStatus.TIMEOUT:
        return "Timeout: execution exceeded the time limit"
    if feedback.status == ExecutionStatus.SUCCESS:
        return ""
    return f"{feedback.status.value}: exit code {feedback.exit_code}"


def feedback_message(program: str, feedback: ExecutionFeedback) -> str:
    """Error message plus the source line that caused it, as shown to the models."""
    if feedback.status == ExecutionStatus.SUCCESS:
        return "The program ran successfully."
    message = feedback_error_text(feedback)
    line = offending_line(program, feedback.error_line)
    if line is not None:
        message = f"{message}\nOffending line {feedback.error_line}: {line}"
    return message


def normalize_output(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.splitlines()).rstrip("\n")


def outputs_match(actual: str, expected: str) -> bool:
    return normalize_output(actual) == normalize_output(expected)
