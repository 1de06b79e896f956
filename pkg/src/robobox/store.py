"""Append-only, time-indexed record store: the recorder's persistence.

On-disk layout under the data directory:

* ``segment-<id>.ndjson`` -- append-only record lines, one JSON object
  per line (see :class:`robobox.model.FlatRecord`);
* ``segment-<id>.idx`` -- sparse time index written when a segment is
  sealed: ``{"every": N, "entries": [[recordIndex, byteOffset, timestamp], ...]}``;
* ``manifest.json`` -- segment table:
  ``{"version": 1, "segments": [{"id", "minTs", "maxTs", "byteSize",
  "recordCount", "state"}]}`` with ``state`` one of ``active``,
  ``sealed``, ``offloaded``.

Records are appended in arrival order; timestamps may arrive slightly
out of order across sources, so queries sort on read. A single writer
appends while any number of readers query; a record is durable (survives
process death) once ``append`` returns.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .model import FlatRecord, ModelError, validate_timestamp

logger = logging.getLogger(__name__)

DEFAULT_SEGMENT_MAX_BYTES = 4 * 1024 * 1024
INDEX_EVERY = 64


class StoreError(Exception):
    pass


class InvalidRange(StoreError):
    pass


class StoreFull(StoreError):
    pass


class EndpointUnreachable(StoreError):
    pass


def matches(pattern: str, name: str) -> bool:
    """Exact match, or prefix match for patterns with a trailing ``*``."""
    if pattern == "*":
        return True
    if pattern.endswith("*"):
        return name.startswith(pattern[:-1])
    return name == pattern


@dataclass(frozen=True)
class QuerySpec:
    """Variables (exact names or trailing-``*`` prefixes) over [from, to)."""

    variables: tuple = ("*",)
    from_ts: float = 0.0
    to_ts: float = 0.0

    def __post_init__(self):
        validate_timestamp(self.from_ts)
        validate_timestamp(self.to_ts)
        if self.from_ts >= self.to_ts:
            raise InvalidRange(f"empty range: from {self.from_ts} >= to {self.to_ts}")
        if not self.variables:
            object.__setattr__(self, "variables", ("*",))

    def match(self, name: str) -> bool:
        return any(matches(p, name) for p in self.variables)


@dataclass
class SegmentInfo:
    id: int
    min_ts: float | None = None
    max_ts: float | None = None
    byte_size: int = 0
    record_count: int = 0
    state: str = "active"  # active | sealed | offloaded

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "minTs": self.min_ts,
            "maxTs": self.max_ts,
            "byteSize": self.byte_size,
            "recordCount": self.record_count,
            "state": self.state,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SegmentInfo":
        return cls(
            id=doc["id"],
            min_ts=doc.get("minTs"),
            max_ts=doc.get("maxTs"),
            byte_size=doc.get("byteSize", 0),
            record_count=doc.get("recordCount", 0),
            state=doc.get("state", "sealed"),
        )

    def overlaps(self, from_ts: float, to_ts: float) -> bool:
        if self.min_ts is None or self.max_ts is None:
            return False
        return self.min_ts < to_ts and self.max_ts >= from_ts


@dataclass
class OffloadReport:
    uploaded: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)  # (segment id, reason)

    @property
    def ok(self) -> bool:
        return not self.failed


class BlackBoxStore:
    """Size-bounded append-only segment files with range queries.

    Single-writer/many-reader: ``append`` is serialized internally and
    flushes each line, so readers observe every acked record and a
    process restart preserves it.
    """

    def __init__(
        self,
        data_dir,
        retention_max_bytes: int,
        robot_id: str = "robot",
        segment_max_bytes: int = DEFAULT_SEGMENT_MAX_BYTES,
    ):
        self.data_dir = Path(data_dir)
        self.retention_max_bytes = int(retention_max_bytes)
        self.robot_id = robot_id
        # keep at least two segments in rotation so eviction always has a candidate
        self.segment_max_bytes = min(int(segment_max_bytes), max(self.retention_max_bytes // 2, 4096))
        self._lock = threading.RLock()
        self._segments: list[SegmentInfo] = []
        self._active_file = None
        self._latest: dict = {}
        self._latest_source: dict = {}
        self._scan_cache: dict = {}
        self._open()

    # -- lifecycle ---------------------------------------------------------

    def _segment_path(self, segment_id: int) -> Path:
        return self.data_dir / f"segment-{segment_id:08d}.ndjson"

    def _index_path(self, segment_id: int) -> Path:
        return self.data_dir / f"segment-{segment_id:08d}.idx"

    def _open(self):
        self.data_dir.mkdir(parents=True, exist_ok=True)
        manifest_path = self.data_dir / "manifest.json"
        by_id = {}
        if manifest_path.exists():
            try:
                doc = json.loads(manifest_path.read_text())
                for seg_doc in doc.get("segments", []):
                    info = SegmentInfo.from_doc(seg_doc)
                    by_id[info.id] = info
            except (json.JSONDecodeError, KeyError) as exc:
                logger.warning("manifest unreadable (%s); rebuilding from segment files", exc)
        # reconcile with the files actually on disk (crash between manifest writes)
        on_disk = sorted(int(p.stem.split("-")[1]) for p in self.data_dir.glob("segment-*.ndjson"))
        self._segments = []
        for seg_id in on_disk:
            info = by_id.get(seg_id)
            if info is None or info.state == "active":
                info = self._rescan(seg_id, state=info.state if info else "active")
            self._segments.append(info)
        # exactly one active segment: recover the newest or start fresh
        active = [s for s in self._segments if s.state == "active"]
        for stale in active[:-1]:
            stale.state = "sealed"
        if active:
            current = active[-1]
        else:
            current = SegmentInfo(id=(self._segments[-1].id + 1) if self._segments else 1)
            self._segments.append(current)
            self._segment_path(current.id).touch()
        self._active_file = open(self._segment_path(current.id), "a")
        self._rebuild_caches()
        self._save_manifest()

    def _rescan(self, segment_id: int, state: str = "active") -> SegmentInfo:
        """Rebuild a segment's stats from its file, dropping a torn tail line."""
        path = self._segment_path(segment_id)
        info = SegmentInfo(id=segment_id, state=state or "active")
        good_bytes = 0
        with open(path, "rb") as fh:
            for raw in fh:
                if not raw.endswith(b"\n"):
                    break
                try:
                    record = FlatRecord.from_json(raw.decode("utf-8"))
                except (ModelError, UnicodeDecodeError):
                    break
                good_bytes += len(raw)
                info.record_count += 1
                info.min_ts = record.timestamp if info.min_ts is None else min(info.min_ts, record.timestamp)
                info.max_ts = record.timestamp if info.max_ts is None else max(info.max_ts, record.timestamp)
        if good_bytes < path.stat().st_size:
            logger.warning("segment %s: truncating torn tail to %d bytes", segment_id, good_bytes)
            with open(path, "ab") as fh:
                fh.truncate(good_bytes)
        info.byte_size = good_bytes
        return info

    def _rebuild_caches(self):
        self._latest.clear()
        self._latest_source.clear()
        for info in self._segments:
            for record in self._read_segment(info):
                self._update_caches(record)

    def _update_caches(self, record: FlatRecord):
        for name, value in record.values.items():
            entry = self._latest.get(name)
            if entry is None or record.timestamp >= entry[1]:
                self._latest[name] = (value, record.timestamp)
        previous = self._latest_source.get(record.source)
        if previous is None or record.timestamp >= previous:
            self._latest_source[record.source] = record.timestamp

    def _save_manifest(self):
        doc = {"version": 1, "segments": [s.to_doc() for s in self._segments]}
        tmp = self.data_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(doc, indent=1))
        tmp.replace(self.data_dir / "manifest.json")

    def close(self):
        with self._lock:
            if self._active_file is not None:
                self._active_file.close()
                self._active_file = None
            self._save_manifest()

    # -- writing -----------------------------------------------------------

    @property
    def active_segment(self) -> SegmentInfo:
        return self._segments[-1]

    def append(self, record: FlatRecord) -> None:
        """Write one record; durable once this returns."""
        with self._lock:
            if self._active_file is None:
                raise StoreError("store is closed")
            line = record.to_json() + "\n"
            info = self.active_segment
            self._active_file.write(line)
            self._active_file.flush()
            info.byte_size += len(line.encode("utf-8"))
            info.record_count += 1
            info.min_ts = record.timestamp if info.min_ts is None else min(info.min_ts, record.timestamp)
            info.max_ts = record.timestamp if info.max_ts is None else max(info.max_ts, record.timestamp)
            self._update_caches(record)
            if info.byte_size >= self.segment_max_bytes:
                self.seal_active()

    def seal_active(self) -> SegmentInfo:
        """Seal the active segment, write its index, start a fresh one."""
        with self._lock:
            info = self.active_segment
            self._active_file.close()
            info.state = "sealed"
            self._write_index(info)
            fresh = SegmentInfo(id=info.id + 1)
            self._segments.append(fresh)
            self._segment_path(fresh.id).touch()
            self._active_file = open(self._segment_path(fresh.id), "a")
            self._save_manifest()
            self.enforce_retention()
            return info

    def _write_index(self, info: SegmentInfo):
        entries = []
        offset = 0
        with open(self._segment_path(info.id), "rb") as fh:
            for index, raw in enumerate(fh):
                if index % INDEX_EVERY == 0:
                    try:
                        ts = json.loads(raw)["timestamp"]
                    except (json.JSONDecodeError, KeyError):
                        ts = None
                    entries.append([index, offset, ts])
                offset += len(raw)
        self._index_path(info.id).write_text(json.dumps({"every": INDEX_EVERY, "entries": entries}))

    # -- reading -----------------------------------------------------------

    def _read_segment(self, info: SegmentInfo) -> list:
        """Records of one segment in arrival order, cached per (id, size)."""
        key = (info.id, info.byte_size)
        cached = self._scan_cache.get(info.id)
        if cached is not None and cached[0] == key:
            return cached[1]
        records = []
        path = self._segment_path(info.id)
        if path.exists():
            with open(path, "rb") as fh:
                data = fh.read(info.byte_size)
            for raw in data.splitlines():
                if not raw.strip():
                    continue
                try:
                    records.append(FlatRecord.from_json(raw.decode("utf-8")))
                except ModelError:
                    logger.warning("segment %s: skipping unparseable line", info.id)
        self._scan_cache[info.id] = (key, records)
        return records

    def iter_records(self, from_ts: float, to_ts: float):
        """All records with from <= ts < to, in arrival order."""
        with self._lock:
            segments = list(self._segments)
        for info in segments:
            if not info.overlaps(from_ts, to_ts):
                continue
            for record in self._read_segment(info):
                if from_ts <= record.timestamp < to_ts:
                    yield record

    def query(self, q: QuerySpec) -> list:
        """Matching (timestamp, variable, value) points, sorted by
        timestamp then variable name."""
        points = []
        for record in self.iter_records(q.from_ts, q.to_ts):
            for name, value in record.values.items():
                if q.match(name):
                    points.append((record.timestamp, name, value))
        points.sort(key=lambda p: (p[0], p[1]))
        return points

    def export(self, q: QuerySpec, sink) -> int:
        """Write matching records as NDJSON lines in timestamp order.

        Records are projected to the matching variables; the count of
        lines written is returned.
        """
        selected = []
        for record in self.iter_records(q.from_ts, q.to_ts):
            values = {n: v for n, v in record.values.items() if q.match(n)}
            if values:
                selected.append(FlatRecord(record.source, record.timestamp, values))
        selected.sort(key=lambda r: r.timestamp)  # stable: arrival order on ties
        for record in selected:
            sink.write(record.to_json() + "\n")
        return len(selected)

    def variables(self) -> list:
        """Sorted distinct variable names seen by the store."""
        with self._lock:
            return sorted(self._latest)

    def latest(self, name: str):
        """Latest (value, timestamp) for a variable, or None."""
        with self._lock:
            return self._latest.get(name)

    def latest_source_ts(self, source: str):
        """Newest record timestamp for a source prefix, or None."""
        with self._lock:
            ts = self._latest_source.get(source)
            if ts is not None:
                return ts
            # fall back to variable-prefix lookup for sub-tree liveness checks
            best = None
            for var, (_, var_ts) in self._latest.items():
                if var == source or var.startswith(source + "/"):
                    best = var_ts if best is None else max(best, var_ts)
            return best

    def total_bytes(self) -> int:
        with self._lock:
            return sum(s.byte_size for s in self._segments)

    # -- retention and offload ---------------------------------------------

    def enforce_retention(self) -> list:
        """Evict oldest sealed segments until within the byte budget.

        Offloaded segments go first; evicting a segment that was never
        offloaded is logged as a warning. The active segment is never
        evicted.
        """
        evicted = []
        with self._lock:
            while self.total_bytes() > self.retention_max_bytes:
                candidates = [s for s in self._segments if s.state in ("sealed", "offloaded")]
                if not candidates:
                    if self.active_segment.byte_size > self.retention_max_bytes:
                        raise StoreFull("active segment alone exceeds the retention budget")
                    break
                candidates.sort(key=lambda s: (0 if s.state == "offloaded" else 1, s.id))
                victim = candidates[0]
                if victim.state != "offloaded":
                    logger.warning("evicting segment %d before it was offloaded", victim.id)
                self._segments.remove(victim)
                self._scan_cache.pop(victim.id, None)
                self._segment_path(victim.id).unlink(missing_ok=True)
                self._index_path(victim.id).unlink(missing_ok=True)
                evicted.append(victim)
            if evicted:
                self._save_manifest()
                self._rebuild_caches()
        return evicted

    def sealed_segments(self) -> list:
        with self._lock:
            return [s for s in self._segments if s.state in ("sealed", "offloaded")]

    def offload(self, endpoint: str, robot_id: str | None = None, timeout: float = 10.0) -> OffloadReport:
        """Upload sealed, not-yet-offloaded segments to the central server.

        Each segment is HTTP PUT to ``<endpoint>/segments/<robotId>/<segmentId>``
        and marked offloaded on a 2xx response, so retrying after a
        failure transfers only what is still pending.
        """
        robot_id = robot_id or self.robot_id
        report = OffloadReport()
        for info in self.sealed_segments():
            if info.state == "offloaded":
                report.skipped.append(info.id)
                continue
            url = f"{endpoint.rstrip('/')}/segments/{robot_id}/{info.id}"
            try:
                body = self._segment_path(info.id).read_bytes()
                response = requests.put(
                    url, data=body, headers={"Content-Type": "application/x-ndjson"}, timeout=timeout
                )
            except (OSError, requests.RequestException) as exc:
                report.failed.append((info.id, str(exc)))
                continue
            if 200 <= response.status_code < 300:
                with self._lock:
                    info.state = "offloaded"
                    self._save_manifest()
                report.uploaded.append(info.id)
            else:
                report.failed.append((info.id, f"HTTP {response.status_code}"))
        return report
