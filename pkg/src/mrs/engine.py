"""MapReduce job engine.

Planning: an input file is cut into byte-range splits; each split's map
task receives exactly the lines whose first byte falls inside the range
(a straddling line is read to completion past the range end, and a split
that starts mid-line skips forward past the first newline).

Shuffle: map output records are routed to reduce partitions by FNV-1a
64-bit hash of the key, sorted per partition by raw key bytes (stable),
and spilled to the executing node's disk as one codec-encoded file per
(map task, partition), named m{map}-p{partition}. Reducers merge the
sorted spills of all map tasks stably in map-index order.

Fault tolerance: every attempt that fails is retried on a different live
node when one exists, up to max_attempts per task; a node death fails its
running attempts, invalidates the spills it held (forcing the source map
tasks to re-execute, the one permitted phase regression), and re-replicates
its blocks. Output commits go through a rename-into-place discipline so
exactly one attempt per task ever becomes visible.

A single scheduler thread owns all job state; attempt bodies run on
per-node executors (threads by default, spawned processes behind the same
interface) and report back through an event queue.
"""

from __future__ import annotations

import contextlib
import heapq
import logging
import os
import queue
import random
import threading
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .cluster import Cluster
from .config import Config
from .dfs import Dfs
from .errors import (BadInputFormat, BadRequest, BlockUnavailable,
                     InputNotFound, MrsError, NoLiveNodes, NotFound,
                     OutputExists, SpawnFailed, UnknownJob, WaitTimeout,
                     AlreadyExists, AlreadyTerminal)
from .models import (AttemptState, FileMeta, InputSplit, JobId, JobPhase,
                     JobSpec, JobStatus, NodeId, Record, TaskAttempt, TaskId,
                     TaskKind, TEXT_INPUT_FORMATS)
from .streaming import (ENV_ATTEMPT, ENV_TASK_INDEX, ENV_TASK_KIND,
                        decode_worker_line, encode_record, ship_files,
                        spawn_worker)

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# partitioner
# --------------------------------------------------------------------------

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def partition(key: bytes, num_reducers: int) -> int:
    if num_reducers < 1:
        raise BadRequest(f"num_reducers must be >= 1, got {num_reducers}")
    return fnv1a64(key) % num_reducers


# --------------------------------------------------------------------------
# split planning and line-bounded reading
# --------------------------------------------------------------------------

def plan_splits(meta: FileMeta, split_size: int) -> list[InputSplit]:
    if split_size < 1:
        raise BadRequest(f"split_size must be >= 1, got {split_size}")
    splits = []
    for index, offset in enumerate(range(0, meta.length, split_size)):
        splits.append(InputSplit(path=meta.path, offset=offset,
                                 length=min(split_size, meta.length - offset),
                                 index=index))
    return splits


def _iter_chunks(segments: Iterable[tuple[str, int]], start: int) -> Iterator[bytes]:
    """Stream file content from byte `start`, reading the on-disk block replicas."""
    pos = 0
    for path, length in segments:
        end = pos + length
        if end > start:
            with open(path, "rb") as f:
                if start > pos:
                    f.seek(start - pos)
                while True:
                    chunk = f.read(65536)
                    if not chunk:
                        break
                    yield chunk
        pos = end


def _iter_lines(chunks: Iterator[bytes], base: int) -> Iterator[tuple[int, bytes, bool]]:
    """Yield (absolute start offset, line bytes, had trailing newline)."""
    buf = b""
    pos = base
    for chunk in chunks:
        buf += chunk
        while True:
            nl = buf.find(b"\n")
            if nl < 0:
                break
            yield pos, buf[:nl], True
            pos += nl + 1
            buf = buf[nl + 1:]
    if buf:
        yield pos, buf, False


def read_split_lines(segments: list[tuple[str, int]], offset: int,
                     length: int) -> Iterator[bytes]:
    """Lines whose first byte lies in [offset, offset+length).

    `segments` is the whole file as ordered (replica path, block length)
    pairs. A split starting past 0 scans from offset-1 and discards
    everything through the first newline found there, so every line of the
    file belongs to exactly one split.
    """
    if length <= 0:
        return
    end_limit = offset + length
    start = 0 if offset == 0 else offset - 1
    lines = _iter_lines(_iter_chunks(segments, start), start)
    if offset > 0:
        head = next(lines, None)
        if head is None or not head[2]:
            return  # no newline at-or-after offset-1: no line starts here
    for line_start, line, _ in lines:
        if line_start >= end_limit:
            break
        yield line


# --------------------------------------------------------------------------
# sorted merge
# --------------------------------------------------------------------------

def merge_sorted(streams: list[Iterator[Record]]) -> Iterator[Record]:
    """Merge key-sorted record streams; ties keep earlier-stream records first."""
    return heapq.merge(*streams, key=lambda r: r.key)


def iter_spill_records(fileobj) -> Iterator[Record]:
    for line in fileobj:
        yield decode_worker_line(line.rstrip(b"\n"))


# --------------------------------------------------------------------------
# attempt bodies (module-level and picklable so the process-pool execution
# mode can run exactly the same code)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MapAttemptDesc:
    job_id: JobId
    task_index: int
    attempt_no: int
    split_offset: int
    split_length: int
    segments: tuple[tuple[str, int], ...]
    mapper_cmd: str
    workdir: str
    num_partitions: int  # 0 -> map-only: emit sorted output instead of spills
    spill_dir: str
    timeout: float
    stderr_cap: int


@dataclass(frozen=True)
class ReduceAttemptDesc:
    job_id: JobId
    partition_index: int
    attempt_no: int
    spill_paths: tuple[str, ...]  # ascending map-task-index order
    reducer_cmd: str
    workdir: str
    timeout: float
    stderr_cap: int


@dataclass
class AttemptOutcome:
    ok: bool
    error: str = ""
    fetch_failed_map: int = -1  # map index whose spill was unreadable
    exit_code: int = 0
    stderr_tail: bytes = b""
    records_in: int = 0
    records_out: int = 0
    spill_paths: tuple[str, ...] = ()
    output: bytes = b""  # reduce (verbatim) or map-only (sorted, re-encoded)


def _worker_env(kind: str, index: int, attempt_no: int) -> dict[str, str]:
    return {ENV_TASK_KIND: kind, ENV_TASK_INDEX: str(index),
            ENV_ATTEMPT: str(attempt_no)}


def run_map_attempt(desc: MapAttemptDesc,
                    cancel: Optional[threading.Event] = None) -> AttemptOutcome:
    records_in = 0

    def stdin_lines():
        nonlocal records_in
        for line in read_split_lines(list(desc.segments), desc.split_offset,
                                     desc.split_length):
            records_in += 1
            yield line + b"\n"  # mapper sees the raw line: value only

    map_only = desc.num_partitions == 0
    buckets: list[list[Record]] = [[] for _ in range(max(desc.num_partitions, 1))]
    if map_only:
        sink = buckets[0].append
    else:
        def sink(rec: Record) -> None:
            buckets[fnv1a64(rec.key) % desc.num_partitions].append(rec)

    try:
        result = spawn_worker(
            desc.mapper_cmd, stdin_lines(), desc.workdir, record_sink=sink,
            env=_worker_env("map", desc.task_index, desc.attempt_no),
            timeout=desc.timeout, stderr_cap=desc.stderr_cap, cancel=cancel)
    except SpawnFailed as exc:
        return AttemptOutcome(ok=False, error=f"SpawnFailed: {exc}")
    except (OSError, MrsError) as exc:
        return AttemptOutcome(ok=False, error=f"IOError: {exc}")

    if result.failed:
        reason = "Timeout" if result.timed_out else "WorkerFailed"
        return AttemptOutcome(ok=False, error=reason, exit_code=result.exit_code,
                              stderr_tail=result.stderr_tail)

    records_out = sum(len(b) for b in buckets)
    for bucket in buckets:
        bucket.sort(key=lambda r: r.key)  # stable: input order kept on ties

    if map_only:
        output = b"".join(encode_record(r) for r in buckets[0])
        return AttemptOutcome(ok=True, records_in=records_in,
                              records_out=records_out, output=output)

    os.makedirs(desc.spill_dir, exist_ok=True)
    paths = []
    for p, bucket in enumerate(buckets):
        final = os.path.join(desc.spill_dir, f"m{desc.task_index}-p{p}")
        tmp = f"{final}.tmp{desc.attempt_no}"
        with open(tmp, "wb") as f:
            for rec in bucket:
                f.write(encode_record(rec))
        os.replace(tmp, final)
        paths.append(final)
    return AttemptOutcome(ok=True, records_in=records_in,
                          records_out=records_out, spill_paths=tuple(paths))


def run_reduce_attempt(desc: ReduceAttemptDesc,
                       cancel: Optional[threading.Event] = None) -> AttemptOutcome:
    output = bytearray()
    with contextlib.ExitStack() as stack:
        streams = []
        for map_index, path in enumerate(desc.spill_paths):
            try:
                f = stack.enter_context(open(path, "rb"))
            except OSError:
                return AttemptOutcome(ok=False, error="FetchFailed",
                                      fetch_failed_map=map_index)
            streams.append(iter_spill_records(f))
        merged = merge_sorted(streams)
        stdin_lines = (encode_record(rec) for rec in merged)
        try:
            result = spawn_worker(
                desc.reducer_cmd, stdin_lines, desc.workdir,
                raw_sink=output.extend,
                env=_worker_env("reduce", desc.partition_index, desc.attempt_no),
                timeout=desc.timeout, stderr_cap=desc.stderr_cap, cancel=cancel)
        except SpawnFailed as exc:
            return AttemptOutcome(ok=False, error=f"SpawnFailed: {exc}")
        except (OSError, MrsError) as exc:
            return AttemptOutcome(ok=False, error=f"IOError: {exc}")

    if result.failed:
        reason = "Timeout" if result.timed_out else "WorkerFailed"
        return AttemptOutcome(ok=False, error=reason, exit_code=result.exit_code,
                              stderr_tail=result.stderr_tail)
    records_out = result.records_out
    return AttemptOutcome(ok=True, records_out=records_out,
                          output=bytes(output))


# --------------------------------------------------------------------------
# job / task state
# --------------------------------------------------------------------------

class _TaskPhase:
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"


@dataclass
class _Task:
    kind: TaskKind
    index: int
    state: str = _TaskPhase.PENDING
    attempts: list[TaskAttempt] = field(default_factory=list)
    last_failed_node: Optional[NodeId] = None
    failure_count: int = 0
    # successful map bookkeeping
    spill_node: Optional[NodeId] = None
    spill_paths: tuple[str, ...] = ()
    records_in: int = 0
    records_out: int = 0

    @property
    def next_attempt_no(self) -> int:
        return len(self.attempts) + 1

    def current_attempt(self) -> Optional[TaskAttempt]:
        return self.attempts[-1] if self.attempts else None


@dataclass
class _JobState:
    id: JobId
    spec: JobSpec
    splits: list[InputSplit]
    maps: list[_Task]
    reduces: list[_Task]
    phase: JobPhase = JobPhase.PENDING
    diagnostics: list[str] = field(default_factory=list)
    committed_parts: dict[int, str] = field(default_factory=dict)
    records_out_committed: int = 0
    terminal_ev: threading.Event = field(default_factory=threading.Event)

    def tasks(self) -> list[_Task]:
        return self.maps + self.reduces

    def map_done(self) -> int:
        return sum(1 for t in self.maps if t.state == _TaskPhase.DONE)

    def reduce_done(self) -> int:
        return sum(1 for t in self.reduces if t.state == _TaskPhase.DONE)


def _count_lines(data: bytes) -> int:
    if not data:
        return 0
    n = data.count(b"\n")
    if not data.endswith(b"\n"):
        n += 1
    return n


# --------------------------------------------------------------------------
# engine
# --------------------------------------------------------------------------

class Engine:
    """Plans, schedules and retries task attempts for all submitted jobs."""

    def __init__(self, dfs: Dfs, cluster: Cluster, config: Config):
        self._dfs = dfs
        self._cluster = cluster
        self._cfg = config
        self._lock = threading.RLock()
        self._events: queue.Queue = queue.Queue()
        self._jobs: dict[JobId, _JobState] = {}
        self._job_order: list[JobId] = []
        self._rr_next = 0
        self._slots_used: dict[NodeId, int] = {}
        self._executors: dict[NodeId, Executor] = {}
        self._cancels: dict[tuple, threading.Event] = {}
        self._next_job_no = 1
        seed = config.schedule_seed
        self._shuffle_rng = random.Random(seed) if seed is not None else None
        self._running = False
        self._thread: Optional[threading.Thread] = None

    # -- lifecycle --

    def start(self) -> None:
        if self._running:
            return
        self._running = True
        self._thread = threading.Thread(target=self._loop, name="mrs-scheduler",
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._events.put(("wake",))
            self._thread.join(timeout=10)
            self._thread = None
        for ev in self._cancels.values():
            ev.set()
        for ex in self._executors.values():
            ex.shutdown(wait=False, cancel_futures=True)
        self._executors.clear()

    # -- public API --

    def submit(self, spec: JobSpec) -> JobId:
        if spec.num_reducers < 1:
            raise BadRequest("num_reducers must be >= 1")
        if spec.input_format not in TEXT_INPUT_FORMATS:
            raise BadInputFormat(
                f"unsupported input format {spec.input_format!r}; "
                f"text records only")
        try:
            meta = self._dfs.stat(spec.input)
        except NotFound:
            raise InputNotFound(f"input {spec.input} does not exist") from None
        existing = self._dfs.ls(spec.output)
        if any(m.path == spec.output or m.path.startswith(spec.output + "/")
               for m in existing):
            raise OutputExists(f"output {spec.output} already exists")
        if not self._cluster.live_nodes():
            raise NoLiveNodes("no live nodes to run the job")

        splits = plan_splits(meta, self._cfg.effective_split_size())
        with self._lock:
            job_id: JobId = f"job_{self._next_job_no:06d}"
            self._next_job_no += 1
            maps = [_Task(kind=TaskKind.MAP, index=s.index) for s in splits]
            n_red = 0 if spec.map_only else spec.num_reducers
            reduces = [_Task(kind=TaskKind.REDUCE, index=i) for i in range(n_red)]
            self._jobs[job_id] = _JobState(id=job_id, spec=spec, splits=splits,
                                           maps=maps, reduces=reduces)
            self._job_order.append(job_id)
        self._events.put(("wake",))
        return job_id

    def status(self, job_id: JobId) -> JobStatus:
        with self._lock:
            job = self._job(job_id)
            records_in = sum(t.records_in for t in job.maps
                             if t.state == _TaskPhase.DONE)
            return JobStatus(
                id=job.id, phase=job.phase,
                map_done=job.map_done(), map_total=len(job.maps),
                reduce_done=job.reduce_done(), reduce_total=len(job.reduces),
                counters={"records_in": records_in,
                          "records_out": job.records_out_committed},
                diagnostics=list(job.diagnostics))

    def wait(self, job_id: JobId, timeout: Optional[float] = None) -> JobStatus:
        with self._lock:
            job = self._job(job_id)
        if not job.terminal_ev.wait(timeout):
            raise WaitTimeout(f"{job_id} still running after {timeout}s")
        return self.status(job_id)

    def kill(self, job_id: JobId) -> None:
        with self._lock:
            job = self._job(job_id)
            if job.phase.terminal:
                raise AlreadyTerminal(f"{job_id} is already {job.phase.value}")
            self._fail_job(job, "killed by client")
        self._events.put(("wake",))

    def job_attempts(self, job_id: JobId) -> list[TaskAttempt]:
        """All attempts ever made for a job (introspection for tests/diagnostics)."""
        with self._lock:
            job = self._job(job_id)
            return [a for t in job.tasks() for a in t.attempts]

    def _job(self, job_id: JobId) -> _JobState:
        job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(f"unknown job {job_id}")
        return job

    # -- node failure (called synchronously by the cluster) --

    def handle_node_failure(self, node: NodeId) -> None:
        with self._lock:
            for job in self._jobs.values():
                if job.phase.terminal:
                    continue
                self._fail_running_attempts_on(job, node,
                                               f"node {node} died")
                if job.phase.terminal:
                    continue
                self._invalidate_spills(job, node)
                if not self._cluster.live_nodes():
                    self._fail_job(job, "NoLiveNodes: every node is dead")
        self._events.put(("wake",))

    def _fail_running_attempts_on(self, job: _JobState, node: NodeId,
                                  reason: str) -> None:
        for task in job.tasks():
            if task.state != _TaskPhase.RUNNING:
                continue
            attempt = task.current_attempt()
            if attempt is None or attempt.node != node \
                    or attempt.state is not AttemptState.RUNNING:
                continue
            attempt.state = AttemptState.FAILED
            self._cancel_attempt(job.id, task, attempt)
            task.state = _TaskPhase.PENDING
            task.last_failed_node = node
            task.failure_count += 1
            job.diagnostics.append(
                f"{task.kind.value.lower()}[{task.index}] attempt "
                f"{attempt.attempt_no} failed: {reason}")
            if task.failure_count >= self._cfg.max_attempts:
                self._fail_job(job, f"task {task.kind.value.lower()}"
                                    f"[{task.index}] exhausted retries")
                return

    def _invalidate_spills(self, job: _JobState, node: NodeId) -> None:
        if job.spec.map_only:
            return
        lost = [t for t in job.maps
                if t.state == _TaskPhase.DONE and t.spill_node == node]
        if not lost:
            return
        for task in lost:
            task.state = _TaskPhase.PENDING
            task.spill_node = None
            task.spill_paths = ()
            job.diagnostics.append(
                f"map[{task.index}] output lost with node {node}; re-executing")
        # Reducers consume every map's spills, so pending/running reduce work
        # must wait for the re-executed maps; this is the one permitted
        # phase regression.
        for task in job.reduces:
            if task.state == _TaskPhase.RUNNING:
                attempt = task.current_attempt()
                if attempt is not None and attempt.state is AttemptState.RUNNING:
                    attempt.state = AttemptState.KILLED
                    self._cancel_attempt(job.id, task, attempt)
                task.state = _TaskPhase.PENDING
        if job.phase is JobPhase.REDUCING:
            job.phase = JobPhase.MAPPING

    def _cancel_attempt(self, job_id: JobId, task: _Task,
                        attempt: TaskAttempt) -> None:
        ev = self._cancels.get((job_id, task.kind, task.index,
                                attempt.attempt_no))
        if ev is not None:
            ev.set()

    # -- scheduler loop --

    def _loop(self) -> None:
        while self._running:
            try:
                event = self._events.get(timeout=0.05)
            except queue.Empty:
                event = None
            try:
                with self._lock:
                    while event is not None:
                        self._handle_event(event)
                        try:
                            event = self._events.get_nowait()
                        except queue.Empty:
                            event = None
                    self._advance_phases()
                    self._dispatch()
            except Exception:  # scheduler must survive anything a job throws
                log.exception("scheduler iteration failed")

    def _handle_event(self, event: tuple) -> None:
        if event[0] == "attempt_done":
            _, job_id, kind, index, attempt_no, node, future = event
            self._on_attempt_done(job_id, kind, index, attempt_no, node, future)

    def _advance_phases(self) -> None:
        for job in self._jobs.values():
            if job.phase.terminal:
                continue
            if job.phase is JobPhase.PENDING:
                job.phase = JobPhase.MAPPING
            if job.phase is JobPhase.MAPPING \
                    and job.map_done() == len(job.maps):
                if job.spec.map_only:
                    self._finish_job(job)
                else:
                    job.phase = JobPhase.REDUCING
            if job.phase is JobPhase.REDUCING \
                    and job.reduce_done() == len(job.reduces):
                self._finish_job(job)

    # -- dispatch --

    def _dispatch(self) -> None:
        while True:
            picked = self._pick_assignment()
            if picked is None:
                return
            job, task, node = picked
            self._start_attempt(job, task, node)

    def _free_nodes(self) -> list[NodeId]:
        free = []
        for node in self._cluster.live_nodes():
            used = self._slots_used.get(node, 0)
            if used < self._cluster.capacity(node):
                free.append(node)
        return free

    def _pick_assignment(self) -> Optional[tuple[_JobState, _Task, NodeId]]:
        free = self._free_nodes()
        if not free:
            return None
        order = [j for j in self._job_order
                 if not self._jobs[j].phase.terminal]
        if not order:
            return None
        start = self._rr_next % len(order)
        for k in range(len(order)):
            job = self._jobs[order[(start + k) % len(order)]]
            if job.phase is JobPhase.MAPPING:
                pending = [t for t in job.maps if t.state == _TaskPhase.PENDING]
            elif job.phase is JobPhase.REDUCING:
                pending = [t for t in job.reduces
                           if t.state == _TaskPhase.PENDING]
            else:
                continue
            if not pending:
                continue
            if self._shuffle_rng is not None:
                self._shuffle_rng.shuffle(pending)
            for task in pending:
                node = self._choose_node(job, task, free)
                if node is not None:
                    self._rr_next = (start + k + 1) % len(order)
                    return job, task, node
        return None

    def _choose_node(self, job: _JobState, task: _Task,
                     free: list[NodeId]) -> Optional[NodeId]:
        candidates = list(free)
        if task.last_failed_node is not None and len(self._cluster.live_nodes()) > 1:
            # retry elsewhere whenever the cluster has anywhere else
            candidates = [n for n in candidates if n != task.last_failed_node]
        if not candidates:
            return None
        if self._shuffle_rng is not None:
            self._shuffle_rng.shuffle(candidates)
        if task.kind is TaskKind.MAP:
            split = job.splits[task.index]
            local = set(self._dfs.block_holders(split.path, split.offset))
            for node in candidates:
                if node in local:
                    return node
        return candidates[0]

    def _executor(self, node: NodeId) -> Executor:
        ex = self._executors.get(node)
        if ex is None:
            workers = self._cluster.capacity(node)
            if self._cfg.exec_mode == "processes":
                import multiprocessing
                ex = ProcessPoolExecutor(
                    max_workers=workers,
                    mp_context=multiprocessing.get_context("spawn"))
            else:
                ex = ThreadPoolExecutor(max_workers=workers,
                                        thread_name_prefix=f"mrs-node{node}")
            self._executors[node] = ex
        return ex

    def _start_attempt(self, job: _JobState, task: _Task, node: NodeId) -> None:
        attempt_no = task.next_attempt_no
        attempt = TaskAttempt(task=TaskId(job.id, task.kind, task.index),
                              attempt_no=attempt_no, node=node,
                              state=AttemptState.RUNNING)
        try:
            workdir = ship_files(job.spec.files, job.id,
                                 self._dfs.node_dir(node),
                                 read_dfs=self._dfs.get)
            desc = self._build_desc(job, task, node, attempt_no, workdir)
        except BlockUnavailable as exc:
            self._fail_job(job, f"input unreadable: {exc}")
            return
        except (MrsError, OSError) as exc:
            task.attempts.append(attempt)
            attempt.state = AttemptState.FAILED
            self._after_attempt_failure(job, task, attempt, str(exc))
            return

        task.attempts.append(attempt)
        task.state = _TaskPhase.RUNNING
        self._slots_used[node] = self._slots_used.get(node, 0) + 1
        key = (job.id, task.kind, task.index, attempt_no)
        body = run_map_attempt if task.kind is TaskKind.MAP else run_reduce_attempt
        if self._cfg.exec_mode == "processes":
            future = self._executor(node).submit(body, desc)
        else:
            cancel = threading.Event()
            self._cancels[key] = cancel
            future = self._executor(node).submit(body, desc, cancel)
        future.add_done_callback(
            lambda f, k=key, n=node: self._events.put(
                ("attempt_done", k[0], k[1], k[2], k[3], n, f)))

    def _build_desc(self, job: _JobState, task: _Task, node: NodeId,
                    attempt_no: int, workdir: str):
        cfg = self._cfg
        if task.kind is TaskKind.MAP:
            split = job.splits[task.index]
            segments = tuple(self._dfs.resolve_block_files(split.path,
                                                           prefer=node))
            spill_dir = os.path.join(self._dfs.node_dir(node), "spills", job.id)
            return MapAttemptDesc(
                job_id=job.id, task_index=task.index, attempt_no=attempt_no,
                split_offset=split.offset, split_length=split.length,
                segments=segments, mapper_cmd=job.spec.mapper_cmd,
                workdir=workdir,
                num_partitions=0 if job.spec.map_only else job.spec.num_reducers,
                spill_dir=spill_dir, timeout=cfg.worker_timeout_s,
                stderr_cap=cfg.stderr_tail_bytes)
        spill_paths = tuple(
            m.spill_paths[task.index] for m in job.maps)
        return ReduceAttemptDesc(
            job_id=job.id, partition_index=task.index, attempt_no=attempt_no,
            spill_paths=spill_paths, reducer_cmd=job.spec.reducer_cmd,
            workdir=workdir, timeout=cfg.worker_timeout_s,
            stderr_cap=cfg.stderr_tail_bytes)

    # -- attempt completion --

    def _on_attempt_done(self, job_id: JobId, kind: TaskKind, index: int,
                         attempt_no: int, node: NodeId, future) -> None:
        self._slots_used[node] = max(0, self._slots_used.get(node, 0) - 1)
        self._cancels.pop((job_id, kind, index, attempt_no), None)
        job = self._jobs.get(job_id)
        if job is None:
            return
        task = (job.maps if kind is TaskKind.MAP else job.reduces)[index]
        attempt = next((a for a in task.attempts
                        if a.attempt_no == attempt_no), None)
        if attempt is None or attempt.state is not AttemptState.RUNNING:
            return  # stale: node death or kill already resolved this attempt
        try:
            outcome: AttemptOutcome = future.result()
        except Exception as exc:  # body crashed; treat as attempt failure
            outcome = AttemptOutcome(ok=False, error=f"internal: {exc!r}")
        if job.phase.terminal:
            attempt.state = AttemptState.KILLED
            return

        if outcome.ok:
            attempt.state = AttemptState.SUCCEEDED
            if task.state == _TaskPhase.RUNNING:
                self._apply_success(job, task, node, attempt_no, outcome)
            return

        if outcome.error == "FetchFailed" and kind is TaskKind.REDUCE:
            # a source map's spill vanished: re-execute that map, requeue the
            # reducer without charging it a failure
            attempt.state = AttemptState.KILLED
            task.state = _TaskPhase.PENDING
            lost = job.maps[outcome.fetch_failed_map]
            if lost.state == _TaskPhase.DONE:
                lost.state = _TaskPhase.PENDING
                lost.spill_node = None
                lost.spill_paths = ()
            if job.phase is JobPhase.REDUCING:
                job.phase = JobPhase.MAPPING
            job.diagnostics.append(
                f"reduce[{index}] could not fetch spill of map"
                f"[{outcome.fetch_failed_map}]; re-executing the map")
            return

        attempt.state = AttemptState.FAILED
        detail = outcome.error
        if outcome.stderr_tail:
            detail += " | stderr: " + outcome.stderr_tail.decode(
                "utf-8", "replace").strip()[-512:]
        self._after_attempt_failure(job, task, attempt, detail)

    def _apply_success(self, job: _JobState, task: _Task, node: NodeId,
                       attempt_no: int, outcome: AttemptOutcome) -> None:
        task.state = _TaskPhase.DONE
        task.records_in = outcome.records_in
        task.records_out = outcome.records_out
        if task.kind is TaskKind.MAP:
            if job.spec.map_only:
                self._commit_part(job, task.index, attempt_no, outcome.output,
                                  records=outcome.records_out)
            else:
                task.spill_node = node
                task.spill_paths = outcome.spill_paths
        else:
            self._commit_part(job, task.index, attempt_no, outcome.output,
                              records=_count_lines(outcome.output))

    def _after_attempt_failure(self, job: _JobState, task: _Task,
                               attempt: TaskAttempt, detail: str) -> None:
        task.failure_count += 1
        task.last_failed_node = attempt.node
        job.diagnostics.append(
            f"{task.kind.value.lower()}[{task.index}] attempt "
            f"{attempt.attempt_no} failed on node {attempt.node}: {detail}")
        if task.failure_count >= self._cfg.max_attempts:
            self._fail_job(job, f"task {task.kind.value.lower()}[{task.index}] "
                                f"failed {task.failure_count} times")
        else:
            task.state = _TaskPhase.PENDING

    # -- output commit & job completion --

    def _commit_part(self, job: _JobState, index: int, attempt_no: int,
                     data: bytes, records: int) -> None:
        out = job.spec.output
        tmp = f"{out}/_tmp/part-{index:05d}.{attempt_no}"
        final = f"{out}/part-{index:05d}"
        self._dfs.put(tmp, data)
        try:
            self._dfs.rename(tmp, final)
        except AlreadyExists:
            self._dfs.delete(tmp)  # a duplicate attempt won the rename race
            return
        job.committed_parts[index] = final
        job.records_out_committed += records

    def _finish_job(self, job: _JobState) -> None:
        for meta in self._dfs.ls(job.spec.output + "/_tmp/"):
            try:
                self._dfs.delete(meta.path)
            except NotFound:
                pass
        job.phase = JobPhase.SUCCEEDED
        job.terminal_ev.set()
        log.info("%s SUCCEEDED", job.id)

    def _fail_job(self, job: _JobState, reason: str) -> None:
        if job.phase.terminal:
            return
        job.phase = JobPhase.FAILED
        job.diagnostics.append(reason)
        for task in job.tasks():
            if task.state == _TaskPhase.RUNNING:
                attempt = task.current_attempt()
                if attempt is not None and attempt.state is AttemptState.RUNNING:
                    attempt.state = AttemptState.KILLED
                    self._cancel_attempt(job.id, task, attempt)
                task.state = _TaskPhase.PENDING
        # failed jobs leave no partial output behind (an inert _tmp aside)
        for index, path in list(job.committed_parts.items()):
            try:
                self._dfs.delete(path)
            except NotFound:
                pass
        job.committed_parts.clear()
        job.records_out_committed = 0
        job.terminal_ev.set()
        log.warning("%s FAILED: %s", job.id, reason)
