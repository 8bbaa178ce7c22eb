"""Client side of the daemon wire protocol: one JSON line per TCP connection."""

from __future__ import annotations

import base64
import json
import socket
from typing import Optional

from .errors import CODE_TO_ERROR, MrsError
from .jobd import parse_address
from .models import JobStatus


def normalize_dfs_path(path: str) -> str:
    """DFS paths are absolute; bare names get a leading slash for convenience."""
    return path if path.startswith("/") else "/" + path


class DaemonClient:
    def __init__(self, address: str = "127.0.0.1:7070", timeout: float = 600.0):
        self.address = parse_address(address)
        self.timeout = timeout

    def request(self, payload: dict, timeout: Optional[float] = None) -> dict:
        """Send one request; returns the ok-reply dict or raises the mapped error.

        Transport problems surface as OSError/ConnectionError, distinct from
        daemon-reported errors (subclasses of MrsError).
        """
        timeout = self.timeout if timeout is None else timeout
        with socket.create_connection(self.address, timeout=timeout) as sock:
            sock.sendall(json.dumps(payload).encode() + b"\n")
            sock.shutdown(socket.SHUT_WR)
            chunks = []
            while True:
                chunk = sock.recv(65536)
                if not chunk:
                    break
                chunks.append(chunk)
        raw = b"".join(chunks)
        if not raw:
            raise ConnectionError("daemon closed the connection without a reply")
        reply = json.loads(raw)
        if reply.get("ok"):
            return reply
        err = CODE_TO_ERROR.get(reply.get("error", ""), MrsError)
        raise err(reply.get("message", reply.get("error", "daemon error")))

    # -- file operations --

    def put(self, path: str, data: bytes) -> dict:
        return self.request({"op": "put", "path": normalize_dfs_path(path),
                             "data": base64.b64encode(data).decode()})["file"]

    def get(self, path: str) -> bytes:
        reply = self.request({"op": "get", "path": normalize_dfs_path(path)})
        return base64.b64decode(reply["data"])

    def ls(self, prefix: str) -> list[dict]:
        return self.request({"op": "ls", "prefix": prefix})["files"]

    def rename(self, src: str, dst: str) -> None:
        self.request({"op": "rename", "src": normalize_dfs_path(src),
                      "dst": normalize_dfs_path(dst)})

    def delete(self, path: str) -> None:
        self.request({"op": "delete", "path": normalize_dfs_path(path)})

    # -- job operations --

    def submit(self, spec: dict) -> str:
        return self.request({"op": "submit", "spec": spec})["job_id"]

    def status(self, job_id: str) -> JobStatus:
        reply = self.request({"op": "status", "job_id": job_id})
        return JobStatus.from_wire(reply["status"])

    def wait(self, job_id: str, timeout_s: Optional[float] = None) -> JobStatus:
        payload = {"op": "wait", "job_id": job_id}
        socket_timeout = self.timeout
        if timeout_s is not None:
            payload["timeout_ms"] = int(timeout_s * 1000)
            socket_timeout = max(self.timeout, timeout_s + 30.0)
        reply = self.request(payload, timeout=socket_timeout)
        return JobStatus.from_wire(reply["status"])

    def kill(self, job_id: str) -> None:
        self.request({"op": "kill", "job_id": job_id})
