"""Runtime configuration for a daemon / simulated cluster."""

from __future__ import annotations

from dataclasses import dataclass

MIB = 1024 * 1024


@dataclass
class Config:
    # dfs
    data_dir: str = "mrs-data"
    block_size: int = 1 * MIB
    replication: int = 2
    placement_seed: int = 0

    # cluster
    nodes: int = 4
    capacity: int = 2
    heartbeat_timeout_ms: int = 5000
    exec_mode: str = "threads"  # "threads" | "processes"

    # mr engine
    split_size: int | None = None  # None -> block_size
    max_attempts: int = 4
    worker_timeout_s: float = 600.0
    stderr_tail_bytes: int = 4096
    schedule_seed: int | None = None  # None -> FIFO dispatch, no shuffle

    # jobd
    listen: str = "127.0.0.1:7070"

    def effective_split_size(self) -> int:
        return self.split_size if self.split_size is not None else self.block_size


#: Dotted external config keys -> Config field names.
KEY_MAP = {
    "dfs.data_dir": "data_dir",
    "dfs.block_size": "block_size",
    "dfs.replication": "replication",
    "dfs.placement_seed": "placement_seed",
    "cluster.nodes": "nodes",
    "cluster.capacity": "capacity",
    "cluster.heartbeat_timeout_ms": "heartbeat_timeout_ms",
    "cluster.exec_mode": "exec_mode",
    "mr.split_size": "split_size",
    "mr.max_attempts": "max_attempts",
    "mr.worker_timeout_s": "worker_timeout_s",
    "mr.stderr_tail_bytes": "stderr_tail_bytes",
    "mr.schedule_seed": "schedule_seed",
    "jobd.listen": "listen",
}

def from_mapping(mapping: dict) -> Config:
    """Build a Config from dotted external keys, e.g. {"cluster.nodes": 8}."""
    kwargs = {}
    for key, value in mapping.items():
        try:
            name = KEY_MAP[key]
        except KeyError:
            raise KeyError(f"unknown config key: {key}") from None
        if isinstance(value, str) and name not in ("data_dir", "exec_mode", "listen"):
            value = float(value) if "." in value else int(value)
        if name == "worker_timeout_s":
            value = float(value)
        kwargs[name] = value
    return Config(**kwargs)
