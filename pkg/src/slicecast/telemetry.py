"""Replay a frame as a scrapeable gauge endpoint (text exposition format 0.0.4)."""

from __future__ import annotations

import math
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .preprocess import SeriesFrame

METRIC = "slice_traffic"
CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"
HELP = "Replayed slice traffic; last observed value at or before the replay clock."


class ReplayStartupError(RuntimeError):
    pass


class ExpositionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# clock


class ReplayClock:
    """Virtual time that advances ``speedup`` times faster than wall time.

    With ``manual=True`` the clock only moves through :meth:`set` and
    :meth:`advance`. Virtual time never goes backwards.
    """

    def __init__(self, start: float, speedup: float = 1.0, manual: bool = False, _wall=time.monotonic):
        if not speedup > 0:
            raise ValueError(f"speedup must be > 0, got {speedup}")
        self.start = float(start)
        self.speedup = float(speedup)
        self.manual = manual
        self._wall = _wall
        self._origin = _wall()
        self._virtual = self.start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            if not self.manual:
                self._virtual = max(self._virtual, self.start + (self._wall() - self._origin) * self.speedup)
            return self._virtual

    def set(self, t: float) -> None:
        if not self.manual:
            raise RuntimeError("only a manual clock can be set")
        with self._lock:
            if t < self._virtual:
                raise ValueError(f"virtual time cannot move backwards ({t} < {self._virtual})")
            self._virtual = float(t)

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("cannot advance by a negative amount")
        self.set(self.now() + dt)


# ---------------------------------------------------------------------------
# exposition text


def format_value(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def _escape_label(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def _escape_help(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\n", "\\n")


def row_at(frame: SeriesFrame, t: float) -> int | None:
    """Index of the latest row with timestamp <= ``t`` (None before the first)."""
    i = int(np.searchsorted(frame.timestamps, t, side="right")) - 1
    return i if i >= 0 else None


def render_exposition(frame: SeriesFrame, t: float) -> str:
    lines = [f"# HELP {METRIC} {_escape_help(HELP)}", f"# TYPE {METRIC} gauge"]
    i = row_at(frame, t)
    if i is not None:
        for j, col in enumerate(frame.columns):
            v = frame.values[i, j] if frame.mask[i, j] else math.nan
            lines.append(f'{METRIC}{{slice="{_escape_label(col)}"}} {format_value(v)}')
    return "\n".join(lines) + "\n"


_NAME = r"[a-zA-Z_:][a-zA-Z0-9_:]*"
_LABEL = r"[a-zA-Z_][a-zA-Z0-9_]*"
_SAMPLE = re.compile(rf"^({_NAME})(?:\{{(.*)\}})?[ \t]+(\S+)(?:[ \t]+(-?\d+))?[ \t]*$")
_LABEL_PAIR = re.compile(rf'\s*({_LABEL})\s*=\s*"((?:[^"\\\n]|\\[\\"n])*)"\s*(,|$)')
_TYPES = {"counter", "gauge", "histogram", "summary", "untyped"}


def _unescape(s: str) -> str:
    return re.sub(r"\\(.)", lambda m: {"n": "\n"}.get(m.group(1), m.group(1)), s)


def _parse_float(tok: str, lineno: int) -> float:
    special = {"+Inf": math.inf, "Inf": math.inf, "-Inf": -math.inf, "NaN": math.nan}
    if tok in special:
        return special[tok]
    if not re.fullmatch(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?", tok):
        raise ExpositionError(f"line {lineno}: bad sample value {tok!r}")
    return float(tok)


def _parse_labels(body: str, lineno: int) -> dict[str, str]:
    labels: dict[str, str] = {}
    pos = 0
    body = body.strip()
    while pos < len(body):
        m = _LABEL_PAIR.match(body, pos)
        if not m:
            raise ExpositionError(f"line {lineno}: malformed label set {{{body}}}")
        name, value = m.group(1), _unescape(m.group(2))
        if name in labels:
            raise ExpositionError(f"line {lineno}: duplicate label {name!r}")
        labels[name] = value
        pos = m.end()
        if m.group(3) == "" and pos < len(body):
            raise ExpositionError(f"line {lineno}: trailing text in label set")
    return labels


@dataclass
class MetricFamily:
    name: str
    help: str | None = None
    type: str = "untyped"
    samples: list[tuple[dict, float]] = field(default_factory=list)


def parse_exposition(text: str) -> dict[str, MetricFamily]:
    """Strict reader for the text format; raises :class:`ExpositionError`."""
    if text and not text.endswith("\n"):
        raise ExpositionError("exposition text must end with a newline")
    fams: dict[str, MetricFamily] = {}
    typed_after_samples = set()
    for lineno, line in enumerate(text.split("\n")[:-1], 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            parts = line.split(None, 3)
            if len(parts) >= 2 and parts[1] in ("HELP", "TYPE"):
                if len(parts) < 3 or not re.fullmatch(_NAME, parts[2]):
                    raise ExpositionError(f"line {lineno}: {parts[1]} without a valid metric name")
                fam = fams.setdefault(parts[2], MetricFamily(parts[2]))
                if parts[1] == "HELP":
                    if fam.help is not None:
                        raise ExpositionError(f"line {lineno}: second HELP for {parts[2]}")
                    fam.help = _unescape(parts[3]) if len(parts) > 3 else ""
                else:
                    kind = parts[3].strip() if len(parts) > 3 else ""
                    if kind not in _TYPES:
                        raise ExpositionError(f"line {lineno}: unknown metric type {kind!r}")
                    if fam.samples or parts[2] in typed_after_samples:
                        raise ExpositionError(f"line {lineno}: TYPE for {parts[2]} after its samples or repeated")
                    typed_after_samples.add(parts[2])
                    fam.type = kind
            continue
        m = _SAMPLE.match(line)
        if not m:
            raise ExpositionError(f"line {lineno}: not a sample line: {line!r}")
        name, labels, value = m.group(1), m.group(2), m.group(3)
        fam = fams.setdefault(name, MetricFamily(name))
        fam.samples.append((_parse_labels(labels or "", lineno), _parse_float(value, lineno)))
    return fams


def scrape_values(text: str) -> dict[str, float]:
    """``{slice id: value}`` from a parsed ``slice_traffic`` body."""
    fam = parse_exposition(text).get(METRIC)
    return {} if fam is None else {labels["slice"]: v for labels, v in fam.samples}


# ---------------------------------------------------------------------------
# HTTP service


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: "ReplayService"

    def _send(self, code: int, body: str, ctype: str = "text/plain; charset=utf-8") -> None:
        data = body.encode()
        self.send_response(code)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):  # noqa: N802
        svc = self.server.service
        path = self.path.split("?", 1)[0]
        if not svc.ready.is_set():
            self._send(503, "starting\n")
        elif path == "/metrics":
            self._send(200, render_exposition(svc.frame, svc.clock.now()), CONTENT_TYPE)
        elif path == "/health":
            self._send(200, "ok\n")
        else:
            self._send(404, "not found\n")

    def log_message(self, fmt, *args):
        pass


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False


class ReplayService:
    """Running endpoint; use :func:`serve` to create one."""

    def __init__(self, frame: SeriesFrame, host: str, port: int, clock: ReplayClock):
        self.frame = frame
        self.clock = clock
        self.ready = threading.Event()
        try:
            self._server = _Server((host, port), _Handler)
        except OSError as exc:
            raise ReplayStartupError(f"cannot bind {host}:{port}: {exc.strerror or exc}") from None
        self._server.service = self
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self, ready: bool = True) -> "ReplayService":
        self._thread.start()
        if ready:
            self.ready.set()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"bind address must look like HOST:PORT, got {bind!r}")
    return host or "127.0.0.1", int(port)


def serve(frame: SeriesFrame, bind: str = "127.0.0.1:9108", speedup: float = 288.0, clock: ReplayClock | None = None, start: float | None = None) -> ReplayService:
    """Start serving ``frame`` in a background thread and return the handle.

    The clock starts at ``start`` (default: the first frame timestamp).
    Requests that arrive before the service is marked ready get 503.
    """
    if frame.n_rows == 0:
        raise ValueError("cannot replay an empty frame")
    host, port = parse_bind(bind)
    if clock is None:
        clock = ReplayClock(frame.timestamps[0] if start is None else start, speedup)
    return ReplayService(frame, host, port, clock).start()
