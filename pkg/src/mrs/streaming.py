"""External-process worker contract.

Workers are arbitrary executables fed newline-terminated lines on stdin;
their stdout is parsed as TAB-separated key/value lines (split at the first
TAB; a line with no TAB is a bare key with empty value). Exit code 0 means
success, anything else is a task failure, as is a worker that stops reading
its input or outlives its wall-clock budget.

stdin feeding, stdout consumption and stderr draining run concurrently so a
worker that interleaves reads and writes can never deadlock the framework,
and only a bounded amount of output is ever buffered.
"""

from __future__ import annotations

import logging
import os
import shutil
import stat
import subprocess
import threading
import time
from typing import Callable, Iterable, Optional

from .errors import DuplicateName, IllegalByte, SourceMissing, SpawnFailed
from .models import CacheEntry, Record, WorkerResult

log = logging.getLogger(__name__)

FIELD_SEP = b"\t"
RECORD_SEP = b"\n"

#: Environment passed to every worker, documented for worker authors.
ENV_TASK_KIND = "MRS_TASK_KIND"
ENV_TASK_INDEX = "MRS_TASK_INDEX"
ENV_ATTEMPT = "MRS_ATTEMPT"


class StreamingCodec:
    """TAB-separated key/value over newline-terminated lines."""

    def __init__(self, field_separator: bytes = FIELD_SEP):
        if len(field_separator) != 1 or field_separator == RECORD_SEP:
            raise ValueError("field separator must be a single non-newline byte")
        self.field_separator = field_separator
        self.record_separator = RECORD_SEP

    def encode(self, record: Record) -> bytes:
        if RECORD_SEP in record.key or RECORD_SEP in record.value:
            raise IllegalByte("newline byte inside record key or value")
        return record.key + self.field_separator + record.value + RECORD_SEP

    def decode(self, line: bytes) -> Record:
        key, sep, value = line.partition(self.field_separator)
        return Record(key, value)


_DEFAULT_CODEC = StreamingCodec()


def encode_record(record: Record) -> bytes:
    return _DEFAULT_CODEC.encode(record)


def decode_worker_line(line: bytes) -> Record:
    return _DEFAULT_CODEC.decode(line)


def resolve_command(cmd: str, workdir: str) -> list[str]:
    """Split a worker command line on whitespace and resolve its executable.

    No shell interpretation. A command whose basename was shipped into the
    working directory runs the staged copy, which is what makes client-side
    absolute paths like /home/tst/src/map.R work on the cluster.
    """
    argv = cmd.split()
    if not argv:
        raise SpawnFailed("empty worker command")
    head = argv[0]
    staged = os.path.join(workdir, os.path.basename(head))
    if os.path.exists(staged):
        argv[0] = os.path.abspath(staged)
    return argv


def spawn_worker(cmd: str,
                 stdin_lines: Iterable[bytes],
                 workdir: str,
                 *,
                 codec: StreamingCodec = _DEFAULT_CODEC,
                 record_sink: Optional[Callable[[Record], None]] = None,
                 raw_sink: Optional[Callable[[bytes], None]] = None,
                 env: Optional[dict[str, str]] = None,
                 timeout: float = 600.0,
                 stderr_cap: int = 4096,
                 cancel: Optional[threading.Event] = None,
                 on_start: Optional[Callable[[subprocess.Popen], None]] = None,
                 ) -> WorkerResult:
    """Run one worker process to completion.

    `stdin_lines` must yield newline-terminated byte lines. Decoded records
    go to `record_sink` (or are collected into the result when no sink is
    given); with `raw_sink` stdout bytes are passed through verbatim instead
    of being decoded. `cancel` kills the worker early; `on_start` exposes
    the Popen handle so a scheduler can kill it on node failure.
    """
    argv = resolve_command(cmd, workdir)
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    try:
        proc = subprocess.Popen(
            argv, cwd=workdir, env=full_env,
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE)
    except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
        raise SpawnFailed(f"cannot start worker {argv[0]!r}: {exc}") from exc
    if on_start:
        on_start(proc)

    broken_pipe = False
    timed_out = False
    feed_error: Optional[BaseException] = None
    stderr_tail = bytearray()
    done = threading.Event()

    def feed_stdin():
        nonlocal broken_pipe, feed_error
        try:
            for line in stdin_lines:
                proc.stdin.write(line)
        except (BrokenPipeError, OSError):
            broken_pipe = True
        except BaseException as exc:  # input source failed; attempt must fail
            feed_error = exc
        finally:
            try:
                proc.stdin.close()
            except OSError:
                broken_pipe = True

    def drain_stderr():
        while True:
            chunk = proc.stderr.read(8192)
            if not chunk:
                return
            stderr_tail.extend(chunk)
            if len(stderr_tail) > stderr_cap:
                del stderr_tail[:len(stderr_tail) - stderr_cap]

    def watchdog():
        nonlocal timed_out
        deadline = time.monotonic() + timeout
        while not done.is_set():
            if cancel is not None and cancel.is_set():
                break
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                timed_out = True
                break
            done.wait(min(0.05, remaining) if cancel is not None else remaining)
        if not done.is_set():
            try:
                proc.kill()
            except OSError:
                pass

    # stdin feeding, stderr draining and the kill watchdog run on their own
    # threads; stdout is consumed right here so records stream to the sink
    # without extra queueing.
    threads = [threading.Thread(target=fn, daemon=True)
               for fn in (feed_stdin, drain_stderr, watchdog)]
    for t in threads:
        t.start()

    records: list[Record] = []
    records_out = 0
    if raw_sink is not None:
        while True:
            chunk = proc.stdout.read(65536)
            if not chunk:
                break
            records_out += chunk.count(RECORD_SEP)
            raw_sink(chunk)
    else:
        sink = record_sink if record_sink is not None else records.append
        for line in proc.stdout:
            records_out += 1
            sink(codec.decode(line.rstrip(RECORD_SEP)))

    exit_code = proc.wait()
    done.set()
    for t in threads:
        t.join(timeout=10)
    if feed_error is not None:
        raise feed_error

    result = WorkerResult(records=records, exit_code=exit_code,
                          stderr_tail=bytes(stderr_tail),
                          records_out=records_out,
                          broken_pipe=broken_pipe, timed_out=timed_out)
    if result.failed and records:
        result.records = []
    return result


def ship_files(entries: list[CacheEntry], job: str, node_work_root: str,
               read_dfs: Optional[Callable[[str], bytes]] = None) -> str:
    """Stage cache entries into a per-(job, node) working directory.

    Local sources are copied; DFS sources are fetched through `read_dfs`.
    Every staged file gets the executable bit. Idempotent: re-shipping the
    same entries into an existing directory is a no-op overwrite.
    """
    workdir = os.path.join(node_work_root, "work", job)
    os.makedirs(workdir, exist_ok=True)
    seen: set[str] = set()
    for entry in entries:
        name = entry.staged_name
        if name in seen:
            raise DuplicateName(f"two cache entries named {name!r}")
        seen.add(name)
        dest = os.path.join(workdir, name)
        if entry.from_dfs:
            assert read_dfs is not None, "DFS cache entry without a reader"
            try:
                data = read_dfs(entry.source)
            except Exception as exc:
                raise SourceMissing(f"{entry.source}: {exc}") from exc
            with open(dest, "wb") as f:
                f.write(data)
        else:
            if not os.path.isfile(entry.source):
                raise SourceMissing(entry.source)
            shutil.copyfile(entry.source, dest)
        mode = os.stat(dest).st_mode
        os.chmod(dest, mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return workdir
