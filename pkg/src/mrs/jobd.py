"""The daemon: owns the file system, node registry and job engine, and
serves the newline-delimited JSON wire protocol over TCP.

Framing: one request per connection. The client sends a single JSON object
terminated by a newline; the daemon replies with one JSON line, either
{"ok": true, ...} or {"ok": false, "error": CODE, "message": text}, then
closes. File bytes travel base64-encoded in "data" fields. See protocol.md
for the full schema.
"""

from __future__ import annotations

import base64
import json
import logging
import socket
import socketserver
import threading
from typing import Optional

from .cluster import Cluster
from .config import Config
from .dfs import Dfs
from .engine import Engine
from .errors import BadRequest, MrsError
from .models import CacheEntry, JobId, JobSpec, JobStatus

log = logging.getLogger(__name__)

_DEFAULT_WAIT_S = 24 * 3600.0


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise BadRequest(f"bad address {addr!r}, want host:port")
    return host, int(port)


class Daemon:
    """In-process assembly of cluster + dfs + engine, with an optional TCP front."""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.cluster = Cluster(
            heartbeat_timeout_ms=self.config.heartbeat_timeout_ms)
        self.dfs = Dfs(self.config.data_dir, self.cluster,
                       block_size=self.config.block_size,
                       replication=self.config.replication,
                       placement_seed=self.config.placement_seed)
        self.engine = Engine(self.dfs, self.cluster, self.config)
        for _ in range(self.config.nodes):
            self.cluster.register_node(self.config.capacity)
        # repair block replicas before the engine reschedules, so retried
        # attempts resolve against a clean location map
        self.cluster.add_failure_listener(self.dfs.handle_node_failure)
        self.cluster.add_failure_listener(self.engine.handle_node_failure)
        self._server: Optional[socketserver.ThreadingTCPServer] = None
        self._server_thread: Optional[threading.Thread] = None
        self._hb_thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    # -- lifecycle --

    def start(self) -> None:
        self.engine.start()
        self._stopping.clear()
        self._hb_thread = threading.Thread(target=self._heartbeat_driver,
                                           name="mrs-heartbeats", daemon=True)
        self._hb_thread.start()

    def stop(self) -> None:
        self._stopping.set()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._server_thread is not None:
            self._server_thread.join(timeout=10)
            self._server_thread = None
        if self._hb_thread is not None:
            self._hb_thread.join(timeout=10)
            self._hb_thread = None
        self.engine.stop()

    def _heartbeat_driver(self) -> None:
        interval = max(self.config.heartbeat_timeout_ms / 3000.0, 0.2)
        while not self._stopping.wait(interval):
            self.cluster.heartbeat_all()
            self.cluster.detect_failures()

    # -- TCP front --

    def start_server(self, listen: Optional[str] = None) -> tuple[str, int]:
        """Bind and serve in the background; returns the bound (host, port)."""
        host, port = parse_address(listen or self.config.listen)
        daemon = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                try:
                    line = self.rfile.readline(64 * 1024 * 1024)
                    if not line:
                        return
                    reply = daemon.handle_request_line(line)
                    self.wfile.write(reply)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self._server_thread = threading.Thread(
            target=self._server.serve_forever, name="mrs-server", daemon=True)
        self._server_thread.start()
        bound = self._server.server_address
        log.info("listening on %s:%d", bound[0], bound[1])
        return bound[0], bound[1]

    def handle_request_line(self, line: bytes) -> bytes:
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise BadRequest("request must be a JSON object")
            reply = self._dispatch(request)
        except MrsError as exc:
            reply = {"ok": False, "error": exc.code, "message": exc.message}
        except (ValueError, KeyError, TypeError) as exc:
            reply = {"ok": False, "error": "BAD_REQUEST", "message": str(exc)}
        return json.dumps(reply).encode() + b"\n"

    def _dispatch(self, request: dict) -> dict:
        op = request.get("op")
        if op == "put":
            data = base64.b64decode(request.get("data", ""))
            meta = self.dfs.put(request["path"], data)
            return {"ok": True, "file": meta.to_wire()}
        if op == "get":
            data = self.dfs.get(request["path"])
            return {"ok": True, "data": base64.b64encode(data).decode()}
        if op == "ls":
            metas = self.dfs.ls(request.get("prefix", "/"))
            return {"ok": True, "files": [m.to_wire() for m in metas]}
        if op == "rename":
            self.dfs.rename(request["src"], request["dst"])
            return {"ok": True}
        if op == "delete":
            self.dfs.delete(request["path"])
            return {"ok": True}
        if op == "submit":
            job_id = self.submit_job(self._spec_from_wire(request["spec"]))
            return {"ok": True, "job_id": job_id}
        if op == "status":
            return {"ok": True,
                    "status": self.job_status(request["job_id"]).to_wire()}
        if op == "wait":
            timeout_ms = request.get("timeout_ms")
            timeout = (_DEFAULT_WAIT_S if timeout_ms is None
                       else timeout_ms / 1000.0)
            status = self.wait_job(request["job_id"], timeout)
            return {"ok": True, "status": status.to_wire()}
        if op == "kill":
            self.kill_job(request["job_id"])
            return {"ok": True}
        raise BadRequest(f"unknown op {op!r}")

    @staticmethod
    def _spec_from_wire(spec: dict) -> JobSpec:
        # every cache entry on the wire is a DFS path: the daemon never
        # reads client-local files
        files = [CacheEntry(source=p, from_dfs=True)
                 for p in spec.get("files", [])]
        return JobSpec(
            input=spec["input"], output=spec["output"],
            mapper_cmd=spec["mapper"], reducer_cmd=spec.get("reducer"),
            files=files,
            input_format=spec.get("input_format", "text"),
            num_reducers=int(spec.get("num_reducers", 1)),
            job_name=spec.get("job_name"))

    # -- job API (used directly by in-process callers and by the TCP front) --

    def submit_job(self, spec: JobSpec) -> JobId:
        return self.engine.submit(spec)

    def job_status(self, job_id: JobId) -> JobStatus:
        return self.engine.status(job_id)

    def wait_job(self, job_id: JobId, timeout: float) -> JobStatus:
        return self.engine.wait(job_id, timeout)

    def kill_job(self, job_id: JobId) -> None:
        self.engine.kill(job_id)
