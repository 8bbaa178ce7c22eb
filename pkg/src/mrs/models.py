"""Domain types shared across the file system, cluster, engine and daemon."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

# Node and block identifiers are plain ints; job ids are "job_NNNNNN" strings.
NodeId = int
BlockId = int
JobId = str


# --- dfs ---

@dataclass
class BlockMeta:
    id: BlockId
    length: int
    locations: list[NodeId]  # distinct live-ish holders, order irrelevant


@dataclass
class FileMeta:
    path: str
    blocks: list[BlockMeta]
    length: int

    def to_wire(self) -> dict:
        return {"path": self.path, "length": self.length, "blocks": len(self.blocks)}


# --- cluster ---

class NodeState(enum.Enum):
    ALIVE = "ALIVE"
    DEAD = "DEAD"


@dataclass
class NodeInfo:
    id: NodeId
    state: NodeState
    last_heartbeat: float
    capacity: int


# --- records / streaming ---

class Record(NamedTuple):
    key: bytes
    value: bytes


@dataclass
class CacheEntry:
    """One file staged into every task's working directory.

    `source` is a DFS path when `from_dfs` is set, a daemon-local path
    otherwise. The staged name is always the basename of the source.
    """

    source: str
    from_dfs: bool = False

    @property
    def staged_name(self) -> str:
        return self.source.rstrip("/").rsplit("/", 1)[-1]


@dataclass
class WorkerResult:
    records: list[Record]
    exit_code: int
    stderr_tail: bytes
    records_out: int = 0
    broken_pipe: bool = False
    timed_out: bool = False

    @property
    def failed(self) -> bool:
        return self.exit_code != 0 or self.broken_pipe or self.timed_out


# --- mr engine ---

@dataclass(frozen=True)
class InputSplit:
    path: str
    offset: int
    length: int
    index: int


class TaskKind(enum.Enum):
    MAP = "MAP"
    REDUCE = "REDUCE"


class TaskId(NamedTuple):
    job: JobId
    kind: TaskKind
    index: int

    def __str__(self):
        return f"{self.kind.value.lower()}-{self.index:05d}"


class AttemptState(enum.Enum):
    RUNNING = "RUNNING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"
    KILLED = "KILLED"


@dataclass
class TaskAttempt:
    task: TaskId
    attempt_no: int
    node: NodeId
    state: AttemptState


# --- jobd ---

TEXT_INPUT_FORMATS = ("org.apache.hadoop.mapred.TextInputFormat", "text")


@dataclass
class JobSpec:
    input: str
    output: str
    mapper_cmd: str
    reducer_cmd: Optional[str] = None
    files: list[CacheEntry] = field(default_factory=list)
    input_format: str = "text"
    num_reducers: int = 1
    job_name: Optional[str] = None

    @property
    def map_only(self) -> bool:
        return self.reducer_cmd is None


class JobPhase(enum.Enum):
    PENDING = "PENDING"
    MAPPING = "MAPPING"
    REDUCING = "REDUCING"
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"

    @property
    def terminal(self) -> bool:
        return self in (JobPhase.SUCCEEDED, JobPhase.FAILED)


@dataclass
class JobStatus:
    id: JobId
    phase: JobPhase
    map_done: int
    map_total: int
    reduce_done: int
    reduce_total: int
    counters: dict[str, int]
    diagnostics: list[str]

    def to_wire(self) -> dict:
        return {
            "id": self.id,
            "phase": self.phase.value,
            "map_done": self.map_done,
            "map_total": self.map_total,
            "reduce_done": self.reduce_done,
            "reduce_total": self.reduce_total,
            "counters": dict(self.counters),
            "diagnostics": list(self.diagnostics),
        }

    @classmethod
    def from_wire(cls, d: dict) -> "JobStatus":
        return cls(
            id=d["id"],
            phase=JobPhase(d["phase"]),
            map_done=d["map_done"],
            map_total=d["map_total"],
            reduce_done=d["reduce_done"],
            reduce_total=d["reduce_total"],
            counters=d.get("counters", {}),
            diagnostics=d.get("diagnostics", []),
        )
