"""The mrs command line tool.

    mrs streaming -input DATA -output DIR -mapper CMD [-reducer CMD] \\
                  [-file PATH]... [-inputformat F] [-numReduceTasks N] [-jobname S]
    mrs dfs put LOCAL DFS | get DFS LOCAL | ls PREFIX | rm DFS | mv SRC DST
    mrs daemon [--listen HOST:PORT] [--data-dir DIR] ...

The daemon address comes from --daemon, else the MRS_DAEMON environment
variable, else 127.0.0.1:7070. Exit codes: 0 success, 1 the daemon reported
an error or the job failed, 2 client-side or transport errors.

Mapper and reducer values are whole command lines split on whitespace; there
is no shell interpretation or quoting. Input and output are DFS paths; names
without a leading slash are rooted at "/". Files named with -file are
uploaded to a per-job DFS staging area before submission, so the daemon
never touches client-local paths.
"""

from __future__ import annotations

import argparse
import os
import sys
import uuid
from dataclasses import dataclass, field
from typing import Optional

from . import config as config_mod
from .client import DaemonClient, normalize_dfs_path
from .errors import MrsError, WaitTimeout
from .models import JobPhase, TEXT_INPUT_FORMATS

DEFAULT_DAEMON = "127.0.0.1:7070"

EXIT_OK = 0
EXIT_DAEMON_ERROR = 1
EXIT_CLIENT_ERROR = 2


class StreamingArgsError(Exception):
    pass


class MissingRequired(StreamingArgsError):
    def __init__(self, flag):
        super().__init__(f"missing required flag {flag}")
        self.flag = flag


class UnknownFlag(StreamingArgsError):
    def __init__(self, flag):
        super().__init__(f"unknown flag {flag}")
        self.flag = flag


class BadValue(StreamingArgsError):
    pass


@dataclass
class StreamingArgs:
    input: str
    output: str
    mapper: str
    reducer: Optional[str] = None
    files: list[str] = field(default_factory=list)
    inputformat: str = "text"
    num_reducers: int = 1
    jobname: Optional[str] = None


_VALUE_FLAGS = ("-inputformat", "-input", "-output", "-mapper", "-reducer",
                "-file", "-numReduceTasks", "-jobname")


def parse_streaming_args(argv: list[str]) -> StreamingArgs:
    """Parse exactly the Hadoop-Streaming flag set, in any order."""
    values: dict[str, str] = {}
    files: list[str] = []
    i = 0
    while i < len(argv):
        flag = argv[i]
        if flag not in _VALUE_FLAGS:
            raise UnknownFlag(flag)
        if i + 1 >= len(argv):
            raise BadValue(f"flag {flag} needs a value")
        value = argv[i + 1]
        i += 2
        if flag == "-file":
            files.append(value)
        elif flag in values:
            raise BadValue(f"flag {flag} given more than once")
        else:
            values[flag] = value
    for required in ("-input", "-output", "-mapper"):
        if required not in values:
            raise MissingRequired(required)
    inputformat = values.get("-inputformat", "text")
    if inputformat not in TEXT_INPUT_FORMATS:
        raise BadValue(f"unsupported -inputformat {inputformat!r}; this "
                       f"framework reads text records only")
    num_reducers = 1
    if "-numReduceTasks" in values:
        try:
            num_reducers = int(values["-numReduceTasks"])
        except ValueError:
            raise BadValue(f"-numReduceTasks wants an integer, got "
                           f"{values['-numReduceTasks']!r}") from None
        if num_reducers < 1:
            raise BadValue("-numReduceTasks must be >= 1")
    return StreamingArgs(
        input=values["-input"], output=values["-output"],
        mapper=values["-mapper"], reducer=values.get("-reducer"),
        files=files, inputformat=inputformat, num_reducers=num_reducers,
        jobname=values.get("-jobname"))


def run_streaming(args: StreamingArgs, daemon_addr: str,
                  out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    client = DaemonClient(daemon_addr)
    try:
        staged = _upload_cache_files(client, args.files)
        spec = {
            "input": normalize_dfs_path(args.input),
            "output": normalize_dfs_path(args.output),
            "mapper": args.mapper,
            "reducer": args.reducer,
            "files": staged,
            "input_format": args.inputformat,
            "num_reducers": args.num_reducers,
            "job_name": args.jobname,
        }
        job_id = client.submit(spec)
        print(f"submitted {job_id}", file=err)
        while True:
            try:
                status = client.wait(job_id, timeout_s=2.0)
                break
            except WaitTimeout:
                snap = client.status(job_id)
                print(f"{snap.phase.value} maps={snap.map_done}/"
                      f"{snap.map_total} reduces={snap.reduce_done}/"
                      f"{snap.reduce_total}", file=err)
    except MrsError as exc:
        print(f"{exc.code}: {exc.message}", file=err)
        return EXIT_DAEMON_ERROR
    except OSError as exc:
        print(f"cannot reach daemon at {daemon_addr}: {exc}", file=err)
        return EXIT_CLIENT_ERROR

    print(f"{status.phase.value} maps={status.map_total} "
          f"reduces={status.reduce_total}", file=out)
    print(f"counters: records_in={status.counters.get('records_in', 0)} "
          f"records_out={status.counters.get('records_out', 0)}", file=out)
    if status.phase is not JobPhase.SUCCEEDED:
        for diag in status.diagnostics[-8:]:
            print(f"  {diag}", file=err)
        return EXIT_DAEMON_ERROR
    return EXIT_OK


def _upload_cache_files(client: DaemonClient, paths: list[str]) -> list[str]:
    staging = f"/_staging/{uuid.uuid4().hex}"
    staged = []
    seen = set()
    for path in paths:
        name = os.path.basename(path.rstrip("/"))
        if name in seen:
            raise FileExistsError(f"two -file entries named {name!r}")
        seen.add(name)
        with open(path, "rb") as f:
            data = f.read()
        dfs_path = f"{staging}/{name}"
        client.put(dfs_path, data)
        staged.append(dfs_path)
    return staged


def cmd_streaming(argv: list[str], daemon_addr: str) -> int:
    try:
        args = parse_streaming_args(argv)
    except StreamingArgsError as exc:
        print(f"mrs streaming: {exc}", file=sys.stderr)
        return EXIT_CLIENT_ERROR
    except Exception as exc:
        print(f"mrs streaming: {exc}", file=sys.stderr)
        return EXIT_CLIENT_ERROR
    try:
        return run_streaming(args, daemon_addr)
    except (FileNotFoundError, FileExistsError, IsADirectoryError) as exc:
        print(f"mrs streaming: {exc}", file=sys.stderr)
        return EXIT_CLIENT_ERROR


def cmd_dfs(argv: list[str], daemon_addr: str) -> int:
    usage = "usage: mrs dfs put LOCAL DFS | get DFS LOCAL | ls PREFIX | rm DFS | mv SRC DST"
    if not argv:
        print(usage, file=sys.stderr)
        return EXIT_CLIENT_ERROR
    sub, rest = argv[0], argv[1:]
    arity = {"put": 2, "get": 2, "ls": 1, "rm": 1, "mv": 2}
    if sub not in arity:
        print(usage, file=sys.stderr)
        return EXIT_CLIENT_ERROR
    if len(rest) != arity[sub]:
        print(usage, file=sys.stderr)
        return EXIT_CLIENT_ERROR
    client = DaemonClient(daemon_addr)
    try:
        if sub == "put":
            with open(rest[0], "rb") as f:
                data = f.read()
            client.put(rest[1], data)
        elif sub == "get":
            data = client.get(rest[0])
            with open(rest[1], "wb") as f:
                f.write(data)
        elif sub == "ls":
            for entry in client.ls(rest[0]):
                print(f"{entry['path']}\t{entry['length']}")
        elif sub == "rm":
            client.delete(rest[0])
        elif sub == "mv":
            client.rename(rest[0], rest[1])
        return EXIT_OK
    except MrsError as exc:
        print(f"{exc.code}: {exc.message}", file=sys.stderr)
        return EXIT_DAEMON_ERROR
    except OSError as exc:
        print(f"mrs dfs: {exc}", file=sys.stderr)
        return EXIT_CLIENT_ERROR


def cmd_daemon(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(prog="mrs daemon")
    parser.add_argument("--listen", default=None, help="host:port (default from config)")
    parser.add_argument("--data-dir", default="mrs-data")
    parser.add_argument("--nodes", type=int, default=4)
    parser.add_argument("--capacity", type=int, default=2)
    parser.add_argument("--block-size", type=int, default=config_mod.MIB)
    parser.add_argument("--replication", type=int, default=2)
    parser.add_argument("--heartbeat-timeout-ms", type=int, default=5000)
    parser.add_argument("--exec-mode", choices=["threads", "processes"],
                        default="threads")
    parser.add_argument("--max-attempts", type=int, default=4)
    opts = parser.parse_args(argv)

    from .jobd import Daemon  # deferred: the daemon pulls in the whole engine

    cfg = config_mod.Config(
        data_dir=opts.data_dir, nodes=opts.nodes, capacity=opts.capacity,
        block_size=opts.block_size, replication=opts.replication,
        heartbeat_timeout_ms=opts.heartbeat_timeout_ms,
        exec_mode=opts.exec_mode, max_attempts=opts.max_attempts,
        listen=opts.listen or "127.0.0.1:7070")
    daemon = Daemon(cfg)
    daemon.start()
    host, port = daemon.start_server(cfg.listen)
    print(f"listening on {host}:{port}", flush=True)
    try:
        import signal
        signal.pause()
    except (KeyboardInterrupt, AttributeError):
        pass
    finally:
        daemon.stop()
    return EXIT_OK


def _extract_daemon_addr(argv: list[str]) -> tuple[str, list[str]]:
    addr = os.environ.get("MRS_DAEMON", DEFAULT_DAEMON)
    rest = []
    i = 0
    while i < len(argv):
        if argv[i] == "--daemon":
            if i + 1 >= len(argv):
                raise SystemExit("--daemon needs a host:port value")
            addr = argv[i + 1]
            i += 2
        elif argv[i].startswith("--daemon="):
            addr = argv[i].split("=", 1)[1]
            i += 1
        else:
            rest.append(argv[i])
            i += 1
    return addr, rest


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip(), file=sys.stderr)
        return EXIT_CLIENT_ERROR if not argv else EXIT_OK
    command, rest = argv[0], argv[1:]
    if command == "daemon":
        return cmd_daemon(rest)
    try:
        daemon_addr, rest = _extract_daemon_addr(rest)
    except SystemExit as exc:
        print(exc, file=sys.stderr)
        return EXIT_CLIENT_ERROR
    if command == "streaming":
        return cmd_streaming(rest, daemon_addr)
    if command == "dfs":
        return cmd_dfs(rest, daemon_addr)
    print(f"mrs: unknown command {command!r}", file=sys.stderr)
    return EXIT_CLIENT_ERROR


if __name__ == "__main__":
    sys.exit(main())
