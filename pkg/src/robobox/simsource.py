"""Scripted robot simulator: telemetry channels plus declarative faults.

A scenario file names channels (topic, rate, per-leaf signal
generators) and timed fault events. Messages go out as the same JSON
envelopes the ingest transports accept, and every sent message lands in
an emission log so tests can compare the recorder's contents against
ground truth. Under a virtual clock a full scenario runs in
milliseconds and is deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import random
import socket
import sys
from dataclasses import dataclass, field

import yaml

from .clock import Clock, VirtualClock, WallClock
from .config import ParseError, _load_yaml_mapping, _require_keys

logger = logging.getLogger(__name__)

GENERATOR_KINDS = ("constant", "ramp", "sine", "random-walk", "time")
FAULT_KINDS = ("silenceTopic", "stuckValue", "jumpValue", "resumeTopic")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ParseError(f"unknown generator kind {self.kind!r}")


@dataclass(frozen=True)
class ChannelScript:
    topic: str
    rate_hz: float
    payload: tuple  # of (leaf path, GeneratorSpec)

    def __post_init__(self):
        if self.rate_hz <= 0:
            raise ParseError(f"channel {self.topic!r}: rate must be positive")
        if not self.payload:
            raise ParseError(f"channel {self.topic!r}: payload must be non-empty")


@dataclass(frozen=True)
class FaultEvent:
    at_sec: float
    kind: str
    topic: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ParseError(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    duration_sec: float
    channels: tuple
    faults: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.duration_sec <= 0:
            raise ParseError("duration_sec must be positive")
        for fault in self.faults:
            if not (0 <= fault.at_sec <= self.duration_sec):
                raise ParseError(f"fault at {fault.at_sec}s is outside the scenario duration")
            if not any(c.topic == fault.topic for c in self.channels):
                raise ParseError(f"fault targets unknown topic {fault.topic!r}")


def _parse_generator(doc) -> GeneratorSpec:
    if isinstance(doc, dict):
        if "kind" not in doc:
            raise ParseError(f"generator spec {doc!r} missing kind")
        params = {k: v for k, v in doc.items() if k != "kind"}
        return GeneratorSpec(kind=doc["kind"], params=params)
    if isinstance(doc, (bool, int, float, str)):
        return GeneratorSpec(kind="constant", params={"value": doc})
    raise ParseError(f"generator spec {doc!r} must be a mapping or a literal")


def load_scenario(text: str) -> Scenario:
    doc = _load_yaml_mapping(text, "scenario")
    _require_keys(doc, ("duration_sec", "channels"), ("faults", "seed"), "scenario")
    channels = []
    for cdoc in doc["channels"]:
        _require_keys(cdoc, ("topic", "rate_hz", "payload"), (), "channel")
        if not isinstance(cdoc["payload"], dict):
            raise ParseError(f"channel {cdoc['topic']!r}: payload must be a mapping")
        payload = tuple((path, _parse_generator(g)) for path, g in cdoc["payload"].items())
        channels.append(ChannelScript(topic=cdoc["topic"], rate_hz=float(cdoc["rate_hz"]), payload=payload))
    faults = []
    for fdoc in doc.get("faults") or []:
        _require_keys(fdoc, ("at_sec", "kind", "topic"), ("params",), "fault")
        faults.append(
            FaultEvent(
                at_sec=float(fdoc["at_sec"]),
                kind=fdoc["kind"],
                topic=fdoc["topic"],
                params=dict(fdoc.get("params") or {}),
            )
        )
    return Scenario(
        duration_sec=float(doc["duration_sec"]),
        channels=tuple(channels),
        faults=tuple(sorted(faults, key=lambda f: f.at_sec)),
        seed=int(doc.get("seed", 0)),
    )


class _Signal:
    """Stateful value source for one payload leaf."""

    def __init__(self, spec: GeneratorSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.walk = spec.params.get("start", 0.0)

    def value(self, t: float, t_abs: float):
        kind, p = self.spec.kind, self.spec.params
        if kind == "constant":
            return p.get("value", 0.0)
        if kind == "ramp":
            return p.get("start", 0.0) + p.get("slope", 1.0) * t
        if kind == "sine":
            period = p.get("period_sec", 1.0)
            return p.get("offset", 0.0) + p.get("amplitude", 1.0) * math.sin(2 * math.pi * t / period)
        if kind == "random-walk":
            self.walk += self.rng.uniform(-p.get("step", 1.0), p.get("step", 1.0))
            return self.walk
        if kind == "time":
            return t_abs
        raise AssertionError(kind)


@dataclass
class Emission:
    at: float  # absolute send time
    topic: str
    payload: dict


def _unflatten(leaves: dict) -> dict:
    tree: dict = {}
    for path, value in leaves.items():
        node = tree
        segments = path.split("/")
        for segment in segments[:-1]:
            node = node.setdefault(segment, {})
        node[segments[-1]] = value
    return tree


@dataclass
class _FaultState:
    silenced: bool = False
    stuck: dict = field(default_factory=dict)  # leaf path ('*' = all) -> value
    offset: dict = field(default_factory=dict)


class ScenarioPlayer:
    """Plays one scenario against a sender callable ``(topic, payload)``."""

    def __init__(self, scenario: Scenario, sender, clock: Clock | None = None, seed: int | None = None):
        self.scenario = scenario
        self.sender = sender
        self.clock = clock or WallClock()
        seed = scenario.seed if seed is None else seed
        self._signals = {}
        for index, channel in enumerate(scenario.channels):
            rng = random.Random(seed * 1000003 + index)
            self._signals[channel.topic] = [(path, _Signal(g, rng)) for path, g in channel.payload]
        self._faults = {c.topic: _FaultState() for c in scenario.channels}
        self.log: list = []

    def _apply_fault(self, fault: FaultEvent):
        state = self._faults[fault.topic]
        if fault.kind == "silenceTopic":
            state.silenced = True
        elif fault.kind == "resumeTopic":
            state.silenced = False
        elif fault.kind == "stuckValue":
            state.stuck[fault.params.get("path", "*")] = fault.params.get("value", 0.0)
        elif fault.kind == "jumpValue":
            state.offset[fault.params.get("path", "*")] = fault.params.get("offset", 0.0)

    def _leaf_value(self, topic: str, path: str, signal: _Signal, t: float, t_abs: float):
        state = self._faults[topic]
        value = signal.value(t, t_abs)
        if signal.spec.kind == "time":
            return value  # timestamps keep flowing even through stuck sensors
        stuck = state.stuck.get(path, state.stuck.get("*"))
        if stuck is not None:
            return stuck
        offset = state.offset.get(path, state.offset.get("*"))
        if offset is not None and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = value + offset
        return value

    def run(self, start_at: float | None = None) -> list:
        """Emit the whole scenario; returns the emission log."""
        scenario = self.scenario
        base = self.clock.now() if start_at is None else start_at
        events = []
        for index, channel in enumerate(scenario.channels):
            count = math.ceil(scenario.duration_sec * channel.rate_hz)
            for k in range(count):
                t = k / channel.rate_hz
                if t < scenario.duration_sec:
                    events.append((t, index, channel))
        events.sort(key=lambda e: (e[0], e[1]))
        fault_queue = list(scenario.faults)
        for t, _, channel in events:
            while fault_queue and fault_queue[0].at_sec <= t:
                self._apply_fault(fault_queue.pop(0))
            t_abs = base + t
            wait = t_abs - self.clock.now()
            if wait > 0:
                self.clock.sleep(wait)
            if self._faults[channel.topic].silenced:
                continue
            leaves = {
                path: self._leaf_value(channel.topic, path, signal, t, t_abs)
                for path, signal in self._signals[channel.topic]
            }
            payload = _unflatten(leaves)
            self.sender(channel.topic, payload)
            self.log.append(Emission(at=t_abs, topic=channel.topic, payload=payload))
        return self.log


def run_scenario(scenario: Scenario, sender, clock: Clock | None = None, seed: int | None = None, start_at=None):
    return ScenarioPlayer(scenario, sender, clock=clock, seed=seed).run(start_at=start_at)


class UdpSender:
    def __init__(self, host: str, port: int):
        self.addr = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def __call__(self, topic: str, payload) -> None:
        self.sock.sendto(json.dumps({"topic": topic, "payload": payload}).encode(), self.addr)

    def close(self):
        self.sock.close()


class TcpSender:
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port), timeout=5)

    def __call__(self, topic: str, payload) -> None:
        self.sock.sendall(json.dumps({"topic": topic, "payload": payload}).encode() + b"\n")

    def close(self):
        self.sock.close()


def write_replay_file(emissions, path) -> int:
    """Dump an emission log as a ``jsonl-replay`` input file."""
    count = 0
    with open(path, "w") as fh:
        for emission in emissions:
            fh.write(
                json.dumps(
                    {"topic": emission.topic, "payload": emission.payload, "receivedAt": emission.at}
                )
                + "\n"
            )
            count += 1
    return count


def _parse_target(target: str):
    scheme, sep, rest = target.partition("://")
    if not sep:
        scheme, rest = "udp", target
    host, _, port = rest.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"target {target!r} must be [udp://|tcp://]host:port")
    return scheme, host, int(port)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="simsource", description="Scripted robot telemetry simulator")
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--target", required=True, help="[udp://|tcp://]host:port to send envelopes to")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--accel", action="store_true", help="run on a virtual clock at full speed")
    parser.add_argument("--start-at", type=float, default=None, help="absolute epoch start for timestamps")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        scenario = load_scenario(open(args.scenario).read())
        scheme, host, port = _parse_target(args.target)
        sender = UdpSender(host, port) if scheme == "udp" else TcpSender(host, port)
    except (OSError, ValueError) as exc:
        print(f"simsource: {exc}", file=sys.stderr)
        return 2
    import time as _time

    clock = VirtualClock(start=args.start_at if args.start_at is not None else _time.time()) if args.accel else WallClock()
    log = run_scenario(scenario, sender, clock=clock, seed=args.seed, start_at=args.start_at)
    sender.close()
    print(f"sent {len(log)} messages over {scenario.duration_sec}s scenario")
    return 0


if __name__ == "__main__":
    sys.exit(main())
