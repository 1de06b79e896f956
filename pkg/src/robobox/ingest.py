"""Per-source ingestion: flatten raw messages, filter, emit flat records.

Each configured data source runs one listener activity. A received
message travels flatten -> timestamp -> filter -> record sink. Wire
formats:

* ``udp-json``: one JSON envelope ``{"topic": ..., "payload": {...}}``
  per datagram;
* ``tcp-json``: the same envelope, newline-delimited over TCP;
* ``jsonl-replay``: a file of envelopes plus ``"receivedAt"`` epoch
  seconds; replay preserves inter-message deltas unless run fast.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
from dataclasses import dataclass, field

from .clock import Clock, WallClock
from .config import DataSourceSpec, FilterSpec, StreamSpec
from .model import FlatRecord, ModelError, validate_timestamp

logger = logging.getLogger(__name__)

MAX_FLATTEN_DEPTH = 32


class IngestError(Exception):
    pass


class DepthExceeded(IngestError):
    """Payload nesting deeper than the flattener accepts."""


class TransportUnavailable(IngestError):
    pass


def flatten(payload, prefix: str, on_drop=None) -> dict:
    """Unroll a nested payload into one level of ``prefix/...`` leaves.

    Mapping keys become path segments, list elements use zero-based
    index segments and output keys are sorted lexicographically. Null
    leaves are dropped (reported through ``on_drop``) because the store
    holds scalars only.
    """
    out = {}

    def walk(node, path, depth):
        if depth > MAX_FLATTEN_DEPTH:
            raise DepthExceeded(f"payload nesting exceeds {MAX_FLATTEN_DEPTH} at {path!r}")
        if isinstance(node, dict):
            for key, child in node.items():
                walk(child, f"{path}/{key}", depth + 1)
        elif isinstance(node, (list, tuple)):
            for index, child in enumerate(node):
                walk(child, f"{path}/{index}", depth + 1)
        elif node is None:
            if on_drop is not None:
                on_drop(path)
            else:
                logger.warning("dropping null leaf at %s", path)
        else:
            out[path] = node

    walk(payload, prefix, 0)
    return {key: out[key] for key in sorted(out)}


def stream_prefix(source_name: str, topic: str) -> str:
    """Record prefix for one stream: ``<source>_<topic token>``.

    Topic names may carry channel separators (``/scan_front``); they are
    folded into the token alphabet so the prefix is a valid source id.
    """
    token = topic.strip("/").lower()
    token = "".join(ch if (ch.isalnum() or ch == "_") else "_" for ch in token)
    return f"{source_name}_{token}" if token else source_name


def lookup_path(payload, path: str):
    """Walk ``a/b/0/c`` into a nested payload; None when absent."""
    node = payload
    for segment in path.split("/"):
        if isinstance(node, dict):
            if segment not in node:
                return None
            node = node[segment]
        elif isinstance(node, (list, tuple)):
            if not segment.isdigit() or int(segment) >= len(node):
                return None
            node = node[int(segment)]
        else:
            return None
    return node


def extract_timestamp(payload, received_at: float, spec: StreamSpec) -> float:
    """The item's own timestamp when configured and usable, else receipt time."""
    if spec.timestamp_path:
        value = lookup_path(payload, spec.timestamp_path)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            try:
                return validate_timestamp(float(value))
            except ModelError:
                pass
    return received_at


@dataclass
class FilterState:
    """Last *logged* value and time per variable (drops do not update it)."""

    last_logged: dict = field(default_factory=dict)


def _changed(value, last, threshold) -> bool:
    numeric = isinstance(value, (int, float)) and not isinstance(value, bool)
    last_numeric = isinstance(last, (int, float)) and not isinstance(last, bool)
    if numeric and last_numeric:
        if threshold > 0:
            return abs(float(value) - float(last)) >= threshold
        return value != last
    return value != last


def apply_filter(flat: dict, ts: float, spec: FilterSpec, state: FilterState, prefix: str = "") -> bool:
    """Decide whether to log; update state for all variables when logging.

    Logs when any variable is new, changed significantly (numeric: by at
    least its threshold; non-numeric: at all) or stale for longer than
    ``max_interval_sec``. Thresholds are keyed by suffix under
    ``prefix``.
    """
    log = False
    for name, value in flat.items():
        entry = state.last_logged.get(name)
        if entry is None:
            log = True
            break
        last_value, last_ts = entry
        if ts - last_ts >= spec.max_interval_sec:
            log = True
            break
        suffix = name[len(prefix) + 1 :] if prefix and name.startswith(prefix + "/") else name
        threshold = spec.delta_thresholds.get(suffix, 0.0)
        if _changed(value, last_value, threshold):
            log = True
            break
    if log:
        for name, value in flat.items():
            state.last_logged[name] = (value, ts)
    return log


@dataclass
class SourceStats:
    """Health counters surfaced per source."""

    messages: int = 0
    records: int = 0
    dropped_by_filter: int = 0
    malformed: int = 0
    unconfigured: int = 0
    null_leaves: int = 0
    type_mismatches: int = 0
    transport_errors: int = 0


def _coerce(value, declared: str):
    """Check a leaf against its declared type; int widens to float."""
    if declared == "bool":
        return value if isinstance(value, bool) else None
    if declared == "int":
        return value if isinstance(value, int) and not isinstance(value, bool) else None
    if declared == "float":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        return None
    if declared == "str":
        return value if isinstance(value, str) else None
    return None


class SourceRunner:
    """Flatten/timestamp/filter pipeline for one configured data source.

    The transport calls :meth:`handle` from a single thread, so emission
    order equals receipt order and the filter state needs no locking.
    """

    def __init__(self, spec: DataSourceSpec, sink, clock: Clock | None = None):
        self.spec = spec
        self.sink = sink
        self.clock = clock or WallClock()
        self.stats = SourceStats()
        self._filters = {s.topic: FilterState() for s in spec.streams}
        self._listener = None

    def handle(self, topic: str, payload, received_at: float) -> FlatRecord | None:
        self.stats.messages += 1
        stream = self.spec.stream(topic)
        if stream is None:
            self.stats.unconfigured += 1
            return None
        prefix = stream_prefix(self.spec.name, topic)
        try:
            flat_all = flatten(payload, prefix, on_drop=self._count_null)
        except (DepthExceeded, ModelError) as exc:
            self.stats.malformed += 1
            logger.warning("source %s topic %s: unloggable payload: %s", self.spec.name, topic, exc)
            return None
        flat = {}
        for suffix in stream.variable_names:
            name = f"{prefix}/{suffix}"
            if name not in flat_all:
                continue
            value = _coerce(flat_all[name], stream.type_of(suffix))
            if value is None:
                self.stats.type_mismatches += 1
                continue
            flat[name] = value
        if not flat:
            self.stats.malformed += 1
            return None
        ts = extract_timestamp(payload, received_at, stream)
        if not apply_filter(flat, ts, stream.filter, self._filters[topic], prefix):
            self.stats.dropped_by_filter += 1
            return None
        try:
            record = FlatRecord(source=prefix, timestamp=ts, values=flat)
        except ModelError as exc:
            self.stats.malformed += 1
            logger.warning("source %s topic %s: invalid record: %s", self.spec.name, topic, exc)
            return None
        self.sink(record)
        self.stats.records += 1
        return record

    def _count_null(self, path: str) -> None:
        self.stats.null_leaves += 1

    def handle_envelope(self, raw, received_at: float) -> None:
        """Parse one wire envelope; malformed input is counted, not fatal."""
        try:
            doc = json.loads(raw)
            topic = doc["topic"]
            payload = doc["payload"]
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            self.stats.messages += 1
            self.stats.malformed += 1
            logger.warning("source %s: malformed envelope: %s", self.spec.name, exc)
            return
        self.handle(topic, payload, received_at)

    def start(self, *, replay_fast: bool = False, stop_event: threading.Event | None = None):
        """Start the transport listener matching the source kind."""
        stop_event = stop_event or threading.Event()
        if self.spec.kind == "udp-json":
            self._listener = UdpListener(self.spec.endpoint, self, stop_event)
        elif self.spec.kind == "tcp-json":
            self._listener = TcpListener(self.spec.endpoint, self, stop_event)
        elif self.spec.kind == "jsonl-replay":
            self._listener = ReplayRunner(self.spec.endpoint, self, stop_event, fast=replay_fast)
        else:  # unreachable: config validates kinds
            raise TransportUnavailable(f"unknown source kind {self.spec.kind!r}")
        self._listener.start()
        return self._listener

    def join(self, timeout: float | None = None) -> None:
        if self._listener is not None:
            self._listener.join(timeout)


def parse_endpoint(endpoint: str) -> tuple:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise TransportUnavailable(f"endpoint {endpoint!r} must be host:port")
    return host, int(port)


class UdpListener(threading.Thread):
    """One JSON envelope per datagram."""

    def __init__(self, endpoint: str, runner: SourceRunner, stop_event: threading.Event):
        super().__init__(name=f"udp-{runner.spec.name}", daemon=True)
        self.runner = runner
        self.stop_event = stop_event
        host, port = parse_endpoint(endpoint)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise TransportUnavailable(f"cannot bind udp {endpoint}: {exc}") from exc
        self.sock.settimeout(0.1)
        self.port = self.sock.getsockname()[1]

    def run(self):
        backoff = 0.1
        while not self.stop_event.is_set():
            try:
                data, _ = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                if self.stop_event.is_set():
                    break
                self.runner.stats.transport_errors += 1
                logger.warning("udp source %s: receive failed; retrying in %.1fs", self.runner.spec.name, backoff)
                self.stop_event.wait(backoff)
                backoff = min(backoff * 2, 5.0)
                continue
            backoff = 0.1
            self.runner.handle_envelope(data, self.runner.clock.now())
        self.sock.close()


class TcpListener(threading.Thread):
    """Newline-delimited JSON envelopes; accepts concurrent producers."""

    def __init__(self, endpoint: str, runner: SourceRunner, stop_event: threading.Event):
        super().__init__(name=f"tcp-{runner.spec.name}", daemon=True)
        self.runner = runner
        self.stop_event = stop_event
        host, port = parse_endpoint(endpoint)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((host, port))
        except OSError as exc:
            self.sock.close()
            raise TransportUnavailable(f"cannot bind tcp {endpoint}: {exc}") from exc
        self.sock.listen(8)
        self.sock.settimeout(0.1)
        self.port = self.sock.getsockname()[1]
        self._conn_threads = []

    def run(self):
        backoff = 0.1
        while not self.stop_event.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                if self.stop_event.is_set():
                    break
                self.runner.stats.transport_errors += 1
                logger.warning("tcp source %s: accept failed; retrying in %.1fs", self.runner.spec.name, backoff)
                self.stop_event.wait(backoff)
                backoff = min(backoff * 2, 5.0)
                continue
            backoff = 0.1
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._conn_threads.append(t)
        self.sock.close()

    def _serve(self, conn):
        conn.settimeout(0.1)
        buf = b""
        with conn:
            while not self.stop_event.is_set():
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if line.strip():
                        self.runner.handle_envelope(line, self.runner.clock.now())


class ReplayRunner(threading.Thread):
    """Replay a recorded envelope file, preserving deltas unless fast.

    The envelope's ``receivedAt`` is kept as the receipt time so the
    filter sees the original timeline regardless of replay speed.
    """

    def __init__(self, path: str, runner: SourceRunner, stop_event: threading.Event, fast: bool = False):
        super().__init__(name=f"replay-{runner.spec.name}", daemon=True)
        self.path = path
        self.runner = runner
        self.stop_event = stop_event
        self.fast = fast

    def run(self):
        try:
            lines = open(self.path, "r").read().splitlines()
        except OSError as exc:
            self.runner.stats.transport_errors += 1
            logger.error("replay file %s unreadable: %s", self.path, exc)
            return
        previous = None
        for line in lines:
            if self.stop_event.is_set():
                break
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                received_at = float(doc["receivedAt"])
            except (json.JSONDecodeError, TypeError, KeyError, ValueError):
                self.runner.stats.messages += 1
                self.runner.stats.malformed += 1
                continue
            if not self.fast and previous is not None and received_at > previous:
                self.stop_event.wait(received_at - previous)
            previous = received_at
            self.runner.handle_envelope(line, received_at)


class StoreSink:
    """Bounded queue between concurrent source producers and the single
    store writer; producers block when full, so the recorder never loses
    records inside the process."""

    def __init__(self, store, maxsize: int = 4096):
        self.store = store
        self.queue = queue.Queue(maxsize=maxsize)
        self._thread = threading.Thread(target=self._drain, name="store-sink", daemon=True)
        self._closed = threading.Event()

    def start(self):
        self._thread.start()
        return self

    def __call__(self, record: FlatRecord) -> None:
        self.queue.put(record)

    def _drain(self):
        while True:
            try:
                record = self.queue.get(timeout=0.05)
            except queue.Empty:
                if self._closed.is_set():
                    return
                continue
            try:
                self.store.append(record)
            except Exception:
                logger.exception("store append failed; record dropped")

    def close(self, timeout: float = 10.0) -> None:
        """Drain outstanding records, then stop the writer."""
        self._closed.set()
        self._thread.join(timeout)
