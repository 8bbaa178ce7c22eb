"""Append-only replicated block file system.

One coordinator owns the namespace (a flat map of full paths; directories
are just path prefixes). Block replicas live on disk under one directory
per simulated node, one file per block named by its decimal id, so the
layout survives a daemon restart. Namespace metadata is mirrored to
namespace.json in the data dir after every mutation for the same reason.

Writes hold the namespace lock end to end, which makes every operation
linearizable; reads resolve metadata under the lock and stream block bytes
outside it.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
from typing import Iterator

from .cluster import Cluster
from .errors import (AlreadyExists, BadRequest, BlockUnavailable,
                     InsufficientNodes, InvalidPath, NotFound)
from .models import BlockId, BlockMeta, FileMeta, NodeId

log = logging.getLogger(__name__)

_META_FILE = "namespace.json"


def validate_path(path: str) -> None:
    if (not path.startswith("/") or path == "/" or path.endswith("/")
            or "//" in path or "\n" in path):
        raise InvalidPath(f"bad dfs path: {path!r}")


class Dfs:
    def __init__(self, data_dir: str, cluster: Cluster, *,
                 block_size: int, replication: int, placement_seed: int = 0):
        if block_size < 1 or replication < 1:
            raise BadRequest("block_size and replication must be >= 1")
        self.block_size = block_size
        self.replication = replication
        self._data_dir = data_dir
        self._cluster = cluster
        self._rng = random.Random(placement_seed)
        self._lock = threading.RLock()
        self._files: dict[str, FileMeta] = {}
        self._next_block_id: BlockId = 1
        self.irreparable_blocks: list[BlockId] = []
        os.makedirs(data_dir, exist_ok=True)
        self._load_meta()

    # -- on-disk layout --

    def node_dir(self, node: NodeId) -> str:
        return os.path.join(self._data_dir, f"node-{node}")

    def _block_path(self, node: NodeId, block_id: BlockId) -> str:
        return os.path.join(self.node_dir(node), "blocks", str(block_id))

    def _write_replica(self, node: NodeId, block_id: BlockId, data: bytes) -> None:
        path = self._block_path(node, block_id)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb") as f:
            f.write(data)

    def _read_replica(self, block: BlockMeta) -> bytes:
        for node in block.locations:
            if not self._cluster.is_alive(node):
                continue
            try:
                with open(self._block_path(node, block.id), "rb") as f:
                    return f.read()
            except FileNotFoundError:
                continue
        raise BlockUnavailable(f"block {block.id}: no live replica")

    # -- namespace persistence --

    def _save_meta(self) -> None:
        state = {
            "next_block_id": self._next_block_id,
            "files": {
                p: {"length": m.length,
                    "blocks": [{"id": b.id, "length": b.length,
                                "locations": b.locations} for b in m.blocks]}
                for p, m in self._files.items()
            },
        }
        tmp = os.path.join(self._data_dir, _META_FILE + ".tmp")
        with open(tmp, "w") as f:
            json.dump(state, f)
        os.replace(tmp, os.path.join(self._data_dir, _META_FILE))

    def _load_meta(self) -> None:
        try:
            with open(os.path.join(self._data_dir, _META_FILE)) as f:
                state = json.load(f)
        except FileNotFoundError:
            return
        self._next_block_id = state["next_block_id"]
        for path, m in state["files"].items():
            blocks = [BlockMeta(id=b["id"], length=b["length"],
                                locations=list(b["locations"]))
                      for b in m["blocks"]]
            self._files[path] = FileMeta(path=path, blocks=blocks,
                                         length=m["length"])
        log.info("loaded namespace: %d files", len(self._files))

    # -- placement --

    def _place(self, count: int, exclude: set[NodeId]) -> list[NodeId]:
        candidates = [n for n in self._cluster.live_nodes() if n not in exclude]
        if len(candidates) < count:
            raise InsufficientNodes(
                f"need {count} live nodes, have {len(candidates)}")
        return self._rng.sample(candidates, count)

    def _check_no_dir_conflict(self, path: str) -> None:
        for existing in self._files:
            if existing.startswith(path + "/") or path.startswith(existing + "/"):
                raise AlreadyExists(
                    f"{path} conflicts with existing file {existing}")

    # -- operations --

    def put(self, path: str, content: bytes) -> FileMeta:
        validate_path(path)
        with self._lock:
            if path in self._files:
                raise AlreadyExists(f"{path} already exists (updates forbidden)")
            self._check_no_dir_conflict(path)
            blocks = []
            for off in range(0, len(content), self.block_size):
                chunk = content[off:off + self.block_size]
                block_id = self._next_block_id
                self._next_block_id += 1
                holders = self._place(self.replication, exclude=set())
                for node in holders:
                    self._write_replica(node, block_id, chunk)
                blocks.append(BlockMeta(id=block_id, length=len(chunk),
                                        locations=holders))
            meta = FileMeta(path=path, blocks=blocks, length=len(content))
            self._files[path] = meta
            self._save_meta()
            return meta

    def get(self, path: str) -> bytes:
        with self._lock:
            meta = self._stat_locked(path)
            blocks = list(meta.blocks)
        return b"".join(self._read_replica(b) for b in blocks)

    def append(self, path: str, suffix: bytes) -> FileMeta:
        with self._lock:
            meta = self._stat_locked(path)
            if not suffix:
                return meta
            remaining = suffix
            # Fill the unsealed final block in place; ids and holders are kept.
            if meta.blocks and meta.blocks[-1].length < self.block_size:
                last = meta.blocks[-1]
                room = self.block_size - last.length
                fill, remaining = remaining[:room], remaining[room:]
                data = self._read_replica(last) + fill
                for node in last.locations:
                    if self._cluster.is_alive(node):
                        self._write_replica(node, last.id, data)
                last.length = len(data)
            for off in range(0, len(remaining), self.block_size):
                chunk = remaining[off:off + self.block_size]
                block_id = self._next_block_id
                self._next_block_id += 1
                holders = self._place(self.replication, exclude=set())
                for node in holders:
                    self._write_replica(node, block_id, chunk)
                meta.blocks.append(BlockMeta(id=block_id, length=len(chunk),
                                             locations=holders))
            meta.length += len(suffix)
            self._save_meta()
            return meta

    def rename(self, src: str, dst: str) -> None:
        validate_path(dst)
        with self._lock:
            if src not in self._files:
                raise NotFound(f"{src} does not exist")
            if dst in self._files:
                raise AlreadyExists(f"{dst} already exists")
            self._check_no_dir_conflict(dst)
            meta = self._files.pop(src)
            meta.path = dst
            self._files[dst] = meta
            self._save_meta()

    def ls(self, prefix: str) -> list[FileMeta]:
        with self._lock:
            return sorted(
                (m for p, m in self._files.items() if p.startswith(prefix)),
                key=lambda m: m.path.encode())

    def exists(self, path: str) -> bool:
        with self._lock:
            return path in self._files

    def stat(self, path: str) -> FileMeta:
        with self._lock:
            return self._stat_locked(path)

    def _stat_locked(self, path: str) -> FileMeta:
        meta = self._files.get(path)
        if meta is None:
            raise NotFound(f"{path} does not exist")
        return meta

    def delete(self, path: str) -> None:
        with self._lock:
            meta = self._stat_locked(path)
            del self._files[path]
            for block in meta.blocks:
                for node in block.locations:
                    try:
                        os.remove(self._block_path(node, block.id))
                    except OSError:
                        pass
            self._save_meta()

    # -- failure handling --

    def handle_node_failure(self, failed: NodeId) -> None:
        self.replicate_repair(failed)

    def replicate_repair(self, failed: NodeId) -> int:
        """Re-replicate every block that lost a replica on `failed`.

        Returns the number of blocks that gained a new replica. Blocks with
        zero surviving replicas are recorded in `irreparable_blocks` rather
        than raised, so repair always completes.
        """
        if self._cluster.is_alive(failed):
            raise BadRequest(f"node {failed} is not marked DEAD")
        repaired = 0
        with self._lock:
            live = self._cluster.live_nodes()
            for meta in self._files.values():
                for block in meta.blocks:
                    if failed not in block.locations:
                        continue
                    block.locations = [n for n in block.locations if n != failed]
                    if not block.locations:
                        self.irreparable_blocks.append(block.id)
                        log.error("block %d of %s has no live replica",
                                  block.id, meta.path)
                        continue
                    target = min(self.replication, len(live))
                    if len(block.locations) >= target:
                        continue
                    data = self._read_replica(block)
                    new_holders = self._place(target - len(block.locations),
                                              exclude=set(block.locations))
                    for node in new_holders:
                        self._write_replica(node, block.id, data)
                    block.locations.extend(new_holders)
                    repaired += 1
            self._save_meta()
        return repaired

    # -- ranged reads for the split reader --

    def read_from(self, path: str, offset: int) -> Iterator[bytes]:
        """Yield file content from `offset` to EOF, one block slice at a time."""
        with self._lock:
            meta = self._stat_locked(path)
            blocks = list(meta.blocks)
        pos = 0
        for block in blocks:
            end = pos + block.length
            if end > offset:
                data = self._read_replica(block)
                yield data[max(0, offset - pos):]
            pos = end

    def resolve_block_files(self, path: str,
                            prefer: NodeId | None = None) -> list[tuple[str, int]]:
        """One on-disk replica path per block, in file order.

        Prefers the replica held by `prefer` (the node about to read it) so
        data-local attempts read their own directory. Raises BlockUnavailable
        if some block has no live holder.
        """
        with self._lock:
            meta = self._stat_locked(path)
            out = []
            for block in meta.blocks:
                live = [n for n in block.locations if self._cluster.is_alive(n)]
                if not live:
                    raise BlockUnavailable(
                        f"block {block.id} of {path}: no live replica")
                node = prefer if prefer in live else live[0]
                out.append((self._block_path(node, block.id), block.length))
            return out

    def block_holders(self, path: str, offset: int) -> list[NodeId]:
        """Holders of the block containing byte `offset` (for scheduling locality)."""
        with self._lock:
            meta = self._files.get(path)
            if meta is None:
                return []
            pos = 0
            for block in meta.blocks:
                if pos <= offset < pos + block.length:
                    return list(block.locations)
                pos += block.length
            return []
