"""Subprocess sandbox for untrusted program text.

Isolation is process-level only: each job runs in its own session (so the
whole process group can be killed), inside a fresh temporary working
directory, with rlimits on CPU time, address space and file size applied by
a tiny launcher before ``exec``. When network access is disabled a
``sitecustomize`` guard that refuses socket connections is placed on the
child's ``PYTHONPATH``; this only affects Python interpreters and is not a
kernel-level guarantee.

An optional HTTP mode exposes ``POST /execute`` so rollouts can share one
executor host (see :func:`serve` and :class:`RemoteSandbox`).
"""

from __future__ import annotations

import base64
import enum
import json
import logging
import math
import os
import shlex
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import ChartTIRError, SandboxUnavailable, SpawnFailure

log = logging.getLogger(__name__)

KILL_GRACE_S = 1.0

_LAUNCHER = r"""
import os, resource, sys
cpu, mem, fsize = (int(x) for x in sys.argv[1:4])
if cpu > 0:
    resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
if mem > 0:
    resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
if fsize > 0:
    resource.setrlimit(resource.RLIMIT_FSIZE, (fsize, fsize))
resource.setrlimit(resource.RLIMIT_CORE, (0, 0))
os.execvp(sys.argv[5], sys.argv[5:])
"""

_NET_GUARD = '''\
import socket as _s

def _blocked(*a, **k):
    raise PermissionError("network access is disabled in this sandbox")

_s.socket.connect = _blocked
_s.socket.connect_ex = _blocked
_s.socket.sendto = _blocked
_s.create_connection = _blocked
_s.getaddrinfo = _blocked
'''


@dataclass(frozen=True)
class ExecLimits:
    wall_timeout: float = 10.0
    cpu_timeout: float | None = None
    memory_limit: int | None = 2 * 1024**3
    stdout_cap: int = 4096
    network_allowed: bool = False
    file_size_limit: int | None = 64 * 1024**2

    def __post_init__(self):
        if not self.wall_timeout > 0:
            raise ValueError("wall_timeout must be positive")
        if not self.stdout_cap > 0:
            raise ValueError("stdout_cap must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ExecLimits":
        d = dict(d or {})
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


class ExitStatus(str, enum.Enum):
    OK = "ok"
    NONZERO = "nonzero"
    TIMEOUT = "timeout"
    KILLED = "killed"


@dataclass(frozen=True)
class ExecResult:
    stdout: str
    stderr: str
    status: ExitStatus
    exit_code: int | None
    duration: float
    truncated: bool
    artifacts: tuple[str, ...] = ()
    artifact_data: Mapping[str, bytes] = field(default_factory=dict, repr=False)
    workdir: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is ExitStatus.OK

    def to_dict(self) -> dict:
        return {
            "stdout": self.stdout,
            "stderr": self.stderr,
            "status": self.status.value,
            "exit_code": self.exit_code,
            "duration": self.duration,
            "truncated": self.truncated,
            "artifacts": list(self.artifacts),
            "artifact_data": {k: base64.b64encode(v).decode("ascii") for k, v in self.artifact_data.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExecResult":
        return cls(
            stdout=d["stdout"],
            stderr=d["stderr"],
            status=ExitStatus(d["status"]),
            exit_code=d.get("exit_code"),
            duration=float(d["duration"]),
            truncated=bool(d["truncated"]),
            artifacts=tuple(d.get("artifacts", ())),
            artifact_data={k: base64.b64decode(v) for k, v in (d.get("artifact_data") or {}).items()},
        )


def _read_capped(path: Path, cap: int) -> tuple[str, bool]:
    with open(path, "rb") as fh:
        data = fh.read(cap + 1)
    truncated = len(data) > cap
    if truncated:
        data = data[:cap]
    # drop a multi-byte character split by the cap rather than emit U+FFFD
    text = data.decode("utf-8", errors="ignore" if truncated else "replace")
    return text, truncated


def _killpg(pgid: int) -> None:
    try:
        os.killpg(pgid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _seed_items(seed) -> list[tuple[str, bytes]]:
    if seed is None:
        return []
    if isinstance(seed, Mapping):
        return [(str(k), bytes(v)) for k, v in seed.items()]
    items = []
    for p in seed:
        p = Path(p)
        items.append((p.name, p.read_bytes()))
    return items


class Sandbox:
    """Local executor; safe for concurrent use from many threads."""

    def __init__(
        self,
        interpreter_cmd: str | Sequence[str] | None = None,
        pool_size: int = 4,
        limits: ExecLimits | None = None,
        keep_artifacts: bool = False,
        script_name: str = "main.py",
    ):
        if interpreter_cmd is None:
            interpreter_cmd = [sys.executable]
        elif isinstance(interpreter_cmd, str):
            interpreter_cmd = shlex.split(interpreter_cmd)
        self.interpreter_cmd = list(interpreter_cmd)
        self.pool_size = max(1, int(pool_size))
        self.limits = limits or ExecLimits()
        self.keep_artifacts = keep_artifacts
        self.script_name = script_name
        self._slots = threading.BoundedSemaphore(self.pool_size)

    def _check_interpreter(self) -> None:
        if not self.interpreter_cmd or shutil.which(self.interpreter_cmd[0]) is None:
            raise SandboxUnavailable(f"interpreter {self.interpreter_cmd[:1]} not found")

    def execute(
        self,
        source: str,
        limits: ExecLimits | None = None,
        workdir_seed: Mapping[str, bytes] | Iterable[str | Path] | None = None,
        collect_artifacts: bool = False,
        keep_workdir: bool | None = None,
    ) -> ExecResult:
        self._check_interpreter()
        limits = limits or self.limits
        keep = self.keep_artifacts if keep_workdir is None else keep_workdir
        with self._slots:
            return self._run(source, limits, _seed_items(workdir_seed), collect_artifacts, keep)

    def _run(self, source, limits: ExecLimits, seeds, collect, keep) -> ExecResult:
        root = Path(tempfile.mkdtemp(prefix="chart_tir_sbx_"))
        work = root / "work"
        work.mkdir()
        script = root / self.script_name
        script.write_text(source, encoding="utf-8")
        seeded = set()
        for name, data in seeds:
            target = work / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)
            target.chmod(0o444)
            seeded.add(Path(name).as_posix())

        env = {
            "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
            "HOME": str(work),
            "LANG": "C.UTF-8",
            "PYTHONDONTWRITEBYTECODE": "1",
            "PYTHONIOENCODING": "utf-8",
            "MPLBACKEND": "Agg",
            "MPLCONFIGDIR": str(root / "mpl"),
            "OMP_NUM_THREADS": "1",
            "OPENBLAS_NUM_THREADS": "1",
            "MKL_NUM_THREADS": "1",
            "TMPDIR": str(root),
        }
        if not limits.network_allowed:
            guard = root / "guard"
            guard.mkdir()
            (guard / "sitecustomize.py").write_text(_NET_GUARD)
            env["PYTHONPATH"] = str(guard)

        cpu = limits.cpu_timeout if limits.cpu_timeout is not None else limits.wall_timeout
        argv = [
            sys.executable, "-S", "-c", _LAUNCHER,
            str(max(1, math.ceil(cpu))),
            str(int(limits.memory_limit or 0)),
            str(int(limits.file_size_limit or 0)),
            "--",
            *self.interpreter_cmd, str(script),
        ]
        out_path, err_path = root / "stdout", root / "stderr"
        timed_out = False
        start = time.monotonic()
        try:
            with open(out_path, "wb") as out, open(err_path, "wb") as err:
                try:
                    proc = subprocess.Popen(
                        argv, cwd=work, env=env, stdin=subprocess.DEVNULL,
                        stdout=out, stderr=err, start_new_session=True, close_fds=True,
                    )
                except OSError as e:
                    raise SpawnFailure(str(e)) from e
                try:
                    proc.wait(timeout=limits.wall_timeout)
                except subprocess.TimeoutExpired:
                    timed_out = True
                    _killpg(proc.pid)
                    try:
                        proc.wait(timeout=KILL_GRACE_S)
                    except subprocess.TimeoutExpired:
                        proc.kill()
                        proc.wait()
                finally:
                    # also reaps stray grandchildren left in the session
                    _killpg(proc.pid)
            duration = time.monotonic() - start

            stdout, truncated = _read_capped(out_path, limits.stdout_cap)
            stderr, _ = _read_capped(err_path, max(limits.stdout_cap, 16384))
            rc = proc.returncode
            if timed_out:
                status, code = ExitStatus.TIMEOUT, None
            elif rc == 0:
                status, code = ExitStatus.OK, 0
            elif rc > 0:
                status, code = ExitStatus.NONZERO, rc
            else:
                status, code = ExitStatus.KILLED, rc
                if not stderr:
                    stderr = f"terminated by signal {-rc}"

            artifacts = sorted(
                p.relative_to(work).as_posix()
                for p in work.rglob("*")
                if p.is_file() and p.relative_to(work).as_posix() not in seeded
            )
            data = {}
            if collect:
                for name in artifacts:
                    try:
                        data[name] = (work / name).read_bytes()
                    except OSError:
                        pass
            return ExecResult(
                stdout=stdout, stderr=stderr, status=status, exit_code=code,
                duration=duration, truncated=truncated, artifacts=tuple(artifacts),
                artifact_data=data, workdir=str(work) if keep else None,
            )
        finally:
            if not keep:
                shutil.rmtree(root, ignore_errors=True)

    def execute_many(self, jobs: Sequence[tuple[str, ExecLimits | None]]) -> list[ExecResult | ChartTIRError]:
        """Run jobs concurrently up to ``pool_size``; results align with ``jobs``.

        A job that cannot be started yields its exception object in place of
        a result; the batch itself never raises.
        """
        jobs = list(jobs)
        if not jobs:
            return []

        def one(job):
            source, limits = job
            try:
                return self._run_unbounded(source, limits)
            except ChartTIRError as e:
                return e

        with ThreadPoolExecutor(max_workers=min(self.pool_size, len(jobs))) as pool:
            return list(pool.map(one, jobs))

    def _run_unbounded(self, source, limits):
        self._check_interpreter()
        with self._slots:
            return self._run(source, limits or self.limits, [], False, self.keep_artifacts)


# --- HTTP mode -------------------------------------------------------------------


def _make_handler(sandbox: Sandbox):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            log.debug("sandbox http: " + fmt, *args)

        def _reply(self, code: int, body: dict):
            data = json.dumps(body).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path != "/execute":
                self._reply(404, {"error": "NotFound"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                req = json.loads(self.rfile.read(length))
                source = req["source"]
                if not isinstance(source, str):
                    raise TypeError("source must be a string")
                limits = ExecLimits.from_dict(req.get("limits"))
                files = {k: base64.b64decode(v) for k, v in (req.get("files") or {}).items()}
            except (ValueError, KeyError, TypeError) as e:
                self._reply(400, {"error": "BadRequest", "message": str(e)})
                return
            try:
                res = sandbox.execute(source, limits, files, collect_artifacts=bool(req.get("collect_artifacts")))
            except ChartTIRError as e:
                self._reply(503, {"error": e.code, "message": str(e)})
                return
            self._reply(200, res.to_dict())

    return Handler


def serve(sandbox: Sandbox, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start the HTTP front-end on a daemon thread and return the server."""
    server = ThreadingHTTPServer((host, port), _make_handler(sandbox))
    server.daemon_threads = True
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


class RemoteSandbox:
    """Client for :func:`serve`; mirrors :meth:`Sandbox.execute`."""

    def __init__(self, url: str, limits: ExecLimits | None = None, pool_size: int = 4, timeout_pad_s: float = 5.0):
        import httpx

        self.url = url.rstrip("/")
        self.limits = limits or ExecLimits()
        self.pool_size = pool_size
        self._pad = timeout_pad_s
        self._http = httpx.Client()

    def execute(self, source, limits=None, workdir_seed=None, collect_artifacts=False, keep_workdir=None) -> ExecResult:
        import httpx

        limits = limits or self.limits
        body = {
            "source": source,
            "limits": limits.to_dict(),
            "files": {k: base64.b64encode(v).decode("ascii") for k, v in _seed_items(workdir_seed)},
            "collect_artifacts": collect_artifacts,
        }
        try:
            resp = self._http.post(f"{self.url}/execute", json=body, timeout=limits.wall_timeout + self._pad)
        except httpx.HTTPError as e:
            raise SandboxUnavailable(f"remote sandbox unreachable: {e}") from e
        if resp.status_code != 200:
            raise SandboxUnavailable(f"remote sandbox answered {resp.status_code}: {resp.text[:200]}")
        return ExecResult.from_dict(resp.json())

    def execute_many(self, jobs):
        jobs = list(jobs)
        if not jobs:
            return []

        def one(job):
            try:
                return self.execute(job[0], job[1])
            except ChartTIRError as e:
                return e

        with ThreadPoolExecutor(max_workers=min(self.pool_size, len(jobs))) as pool:
            return list(pool.map(one, jobs))
