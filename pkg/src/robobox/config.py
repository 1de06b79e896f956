"""Configuration artifacts: recorder config, component monitors, monitor modes.

Three YAML file shapes are parsed here:

* ``blackbox.yaml`` -- data sources, their streams and the storage policy;
* ``components/<name>.yaml`` -- one monitored component, its monitor mode
  files and its dependencies;
* ``modes/<component>/<mode>.yaml`` -- a single monitor mode.

Parsing is strict: unknown keys are rejected so typos fail loudly, and a
malformed file never yields a partially constructed config.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .model import validate_component_id, validate_source_id, validate_variable_name

SCALAR_TYPES = ("bool", "int", "float", "str")
SOURCE_KINDS = ("udp-json", "tcp-json", "jsonl-replay")

DEFAULT_MAX_INTERVAL_SEC = 10.0
MIN_RETENTION_BYTES = 1 << 20


class ConfigError(ValueError):
    """Base class for configuration rejections."""


class ParseError(ConfigError):
    pass


class DuplicateSource(ConfigError):
    pass


class MismatchedNameTypeLists(ConfigError):
    pass


class MissingModeFile(ConfigError):
    pass


class DependencyCycle(ConfigError):
    pass


class NoOutputs(ConfigError):
    pass


def _load_yaml_mapping(text: str, what: str) -> dict:
    try:
        doc = yaml.safe_load(io.StringIO(text))
    except yaml.YAMLError as exc:
        raise ParseError(f"{what}: invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{what}: top level must be a mapping")
    return doc


def _require_keys(doc: dict, required: tuple, optional: tuple, what: str) -> None:
    unknown = set(doc) - set(required) - set(optional)
    if unknown:
        raise ParseError(f"{what}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(doc)
    if missing:
        raise ParseError(f"{what}: missing keys {sorted(missing)}")


@dataclass(frozen=True)
class FilterSpec:
    """Per-stream filter: log on significant change or staleness."""

    delta_thresholds: dict = field(default_factory=dict)
    max_interval_sec: float = DEFAULT_MAX_INTERVAL_SEC

    def __post_init__(self):
        for name, threshold in self.delta_thresholds.items():
            validate_variable_name(name)
            if not isinstance(threshold, (int, float)) or isinstance(threshold, bool) or threshold < 0:
                raise ParseError(f"filter threshold for {name!r} must be a non-negative number")
        if not isinstance(self.max_interval_sec, (int, float)) or self.max_interval_sec <= 0:
            raise ParseError("max_interval_sec must be a positive number")


@dataclass(frozen=True)
class StreamSpec:
    """One message channel within a data source."""

    topic: str
    variable_names: tuple
    variable_types: tuple
    timestamp_path: str | None = None
    filter: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        if not self.topic or not isinstance(self.topic, str):
            raise ParseError("stream topic must be a non-empty string")
        if len(self.variable_names) != len(self.variable_types):
            raise MismatchedNameTypeLists(
                f"stream {self.topic!r}: {len(self.variable_names)} names vs "
                f"{len(self.variable_types)} types"
            )
        if not self.variable_names:
            raise ParseError(f"stream {self.topic!r}: variable_names must be non-empty")
        for name in self.variable_names:
            validate_variable_name(name)
        for vtype in self.variable_types:
            if vtype not in SCALAR_TYPES:
                raise ParseError(f"stream {self.topic!r}: unknown variable type {vtype!r}")
        for name in self.filter.delta_thresholds:
            if name not in self.variable_names:
                raise ParseError(f"stream {self.topic!r}: threshold for unconfigured variable {name!r}")
            declared = self.variable_types[self.variable_names.index(name)]
            if declared not in ("int", "float"):
                raise ParseError(f"stream {self.topic!r}: threshold on non-numeric variable {name!r}")

    def type_of(self, suffix: str) -> str:
        return self.variable_types[self.variable_names.index(suffix)]


@dataclass(frozen=True)
class DataSourceSpec:
    """A listening endpoint plus the streams logged from it."""

    name: str
    kind: str
    endpoint: str
    streams: tuple

    def __post_init__(self):
        validate_source_id(self.name)
        if self.kind not in SOURCE_KINDS:
            raise ParseError(f"source {self.name!r}: unknown kind {self.kind!r}")
        if not self.endpoint or not isinstance(self.endpoint, str):
            raise ParseError(f"source {self.name!r}: endpoint must be non-empty")
        if not self.streams:
            raise ParseError(f"source {self.name!r}: streams must be non-empty")
        topics = [s.topic for s in self.streams]
        if len(set(topics)) != len(topics):
            raise ParseError(f"source {self.name!r}: duplicate stream topics")

    def stream(self, topic: str) -> StreamSpec | None:
        for s in self.streams:
            if s.topic == topic:
                return s
        return None


@dataclass(frozen=True)
class StorageSpec:
    data_dir: str
    retention_max_bytes: int
    offload_endpoint: str | None = None

    def __post_init__(self):
        if not self.data_dir:
            raise ParseError("storage data_dir must be non-empty")
        if not isinstance(self.retention_max_bytes, int) or isinstance(self.retention_max_bytes, bool):
            raise ParseError("retention_max_bytes must be an integer")
        if self.retention_max_bytes < MIN_RETENTION_BYTES:
            raise ParseError(f"retention_max_bytes must be at least {MIN_RETENTION_BYTES} (1 MiB)")


@dataclass(frozen=True)
class BlackBoxConfig:
    sources: tuple
    storage: StorageSpec

    def __post_init__(self):
        if not self.sources:
            raise ParseError("at least one data source is required")
        names = [s.name for s in self.sources]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise DuplicateSource(f"duplicate source names: {sorted(dupes)}")

    def source(self, name: str) -> DataSourceSpec | None:
        for s in self.sources:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class ComponentSpec:
    """A monitored component: its mode files and what it depends on."""

    component_name: str
    modes: tuple
    dependencies: tuple = ()

    def __post_init__(self):
        validate_component_id(self.component_name)
        if not self.modes:
            raise ParseError(f"component {self.component_name!r}: modes must be non-empty")
        for dep in self.dependencies:
            validate_component_id(dep)


@dataclass(frozen=True)
class ModeSpec:
    """One monitor mode: an input-to-health-outputs mapping plus arguments."""

    mode_name: str
    inputs: tuple
    outputs: tuple  # of (name, scalar type)
    arguments: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mode_name or not isinstance(self.mode_name, str):
            raise ParseError("mode_name must be a non-empty string")
        if not self.outputs:
            raise NoOutputs(f"mode {self.mode_name!r} declares no outputs")
        names = [n for n, _ in self.outputs]
        if len(set(names)) != len(names):
            raise ParseError(f"mode {self.mode_name!r}: duplicate output names")
        for _, otype in self.outputs:
            if otype not in SCALAR_TYPES:
                raise ParseError(f"mode {self.mode_name!r}: unknown output type {otype!r}")

    @property
    def output_names(self) -> tuple:
        return tuple(n for n, _ in self.outputs)


def _parse_filter(doc, topic: str) -> FilterSpec:
    if doc is None:
        return FilterSpec()
    if not isinstance(doc, dict):
        raise ParseError(f"stream {topic!r}: filter must be a mapping")
    _require_keys(doc, (), ("delta_thresholds", "max_interval_sec"), f"stream {topic!r} filter")
    return FilterSpec(
        delta_thresholds=dict(doc.get("delta_thresholds") or {}),
        max_interval_sec=doc.get("max_interval_sec", DEFAULT_MAX_INTERVAL_SEC),
    )


def _parse_stream(doc, source_name: str) -> StreamSpec:
    if not isinstance(doc, dict):
        raise ParseError(f"source {source_name!r}: each stream must be a mapping")
    what = f"source {source_name!r} stream"
    _require_keys(doc, ("topic", "variable_names", "variable_types"), ("timestamp_path", "filter"), what)
    names = doc["variable_names"]
    types = doc["variable_types"]
    if not isinstance(names, list) or not isinstance(types, list):
        raise ParseError(f"{what}: variable_names and variable_types must be lists")
    return StreamSpec(
        topic=doc["topic"],
        variable_names=tuple(names),
        variable_types=tuple(types),
        timestamp_path=doc.get("timestamp_path"),
        filter=_parse_filter(doc.get("filter"), doc["topic"]),
    )


def load_blackbox_config(text: str) -> BlackBoxConfig:
    """Parse and fully validate a recorder configuration file."""
    doc = _load_yaml_mapping(text, "blackbox config")
    _require_keys(doc, ("sources", "storage"), (), "blackbox config")
    if not isinstance(doc["sources"], list):
        raise ParseError("blackbox config: sources must be a list")
    sources = []
    for sdoc in doc["sources"]:
        if not isinstance(sdoc, dict):
            raise ParseError("blackbox config: each source must be a mapping")
        _require_keys(sdoc, ("name", "kind", "endpoint", "streams"), (), "source")
        if not isinstance(sdoc["streams"], list):
            raise ParseError(f"source {sdoc.get('name')!r}: streams must be a list")
        streams = tuple(_parse_stream(d, sdoc["name"]) for d in sdoc["streams"])
        sources.append(
            DataSourceSpec(name=sdoc["name"], kind=sdoc["kind"], endpoint=sdoc["endpoint"], streams=streams)
        )
    stdoc = doc["storage"]
    if not isinstance(stdoc, dict):
        raise ParseError("blackbox config: storage must be a mapping")
    _require_keys(stdoc, ("data_dir", "retention_max_bytes"), ("offload_endpoint",), "storage")
    storage = StorageSpec(
        data_dir=stdoc["data_dir"],
        retention_max_bytes=stdoc["retention_max_bytes"],
        offload_endpoint=stdoc.get("offload_endpoint"),
    )
    return BlackBoxConfig(sources=tuple(sources), storage=storage)


def dump_blackbox_config(cfg: BlackBoxConfig) -> str:
    """Serialize back to YAML; ``load(dump(load(text)))`` equals ``load(text)``."""
    doc = {
        "sources": [
            {
                "name": s.name,
                "kind": s.kind,
                "endpoint": s.endpoint,
                "streams": [
                    {
                        "topic": st.topic,
                        "variable_names": list(st.variable_names),
                        "variable_types": list(st.variable_types),
                        **({"timestamp_path": st.timestamp_path} if st.timestamp_path else {}),
                        "filter": {
                            "delta_thresholds": dict(st.filter.delta_thresholds),
                            "max_interval_sec": st.filter.max_interval_sec,
                        },
                    }
                    for st in s.streams
                ],
            }
            for s in cfg.sources
        ],
        "storage": {
            "data_dir": cfg.storage.data_dir,
            "retention_max_bytes": cfg.storage.retention_max_bytes,
            **(
                {"offload_endpoint": cfg.storage.offload_endpoint}
                if cfg.storage.offload_endpoint
                else {}
            ),
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)


def load_mode_spec(text: str) -> ModeSpec:
    """Parse a monitor mode file; ``arguments`` is optional."""
    doc = _load_yaml_mapping(text, "mode config")
    _require_keys(doc, ("mode_name", "outputs"), ("inputs", "arguments"), "mode config")
    outputs_doc = doc["outputs"]
    if outputs_doc is None or outputs_doc == []:
        raise NoOutputs(f"mode {doc.get('mode_name')!r} declares no outputs")
    if not isinstance(outputs_doc, list):
        raise ParseError("mode config: outputs must be a list")
    outputs = []
    for odoc in outputs_doc:
        if not isinstance(odoc, dict):
            raise ParseError("mode config: each output must be a mapping")
        _require_keys(odoc, ("name", "type"), (), "mode output")
        outputs.append((odoc["name"], odoc["type"]))
    inputs = doc.get("inputs") or []
    if not isinstance(inputs, list):
        raise ParseError("mode config: inputs must be a list")
    arguments = doc.get("arguments") or {}
    if not isinstance(arguments, dict):
        raise ParseError("mode config: arguments must be a mapping")
    return ModeSpec(
        mode_name=doc["mode_name"],
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        arguments=dict(arguments),
    )


def dump_mode_spec(spec: ModeSpec) -> str:
    doc = {
        "mode_name": spec.mode_name,
        "inputs": list(spec.inputs),
        "outputs": [{"name": n, "type": t} for n, t in spec.outputs],
    }
    if spec.arguments:
        doc["arguments"] = dict(spec.arguments)
    return yaml.safe_dump(doc, sort_keys=False)


def load_component_spec(text: str) -> ComponentSpec:
    doc = _load_yaml_mapping(text, "component config")
    _require_keys(doc, ("component_name", "modes"), ("dependencies",), "component config")
    modes = doc["modes"]
    if not isinstance(modes, list) or not modes:
        raise ParseError(f"component {doc.get('component_name')!r}: modes must be a non-empty list")
    deps = doc.get("dependencies") or []
    if not isinstance(deps, list):
        raise ParseError("component config: dependencies must be a list")
    return ComponentSpec(
        component_name=doc["component_name"],
        modes=tuple(modes),
        dependencies=tuple(deps),
    )


def dump_component_spec(spec: ComponentSpec) -> str:
    doc = {"component_name": spec.component_name, "modes": list(spec.modes)}
    if spec.dependencies:
        doc["dependencies"] = list(spec.dependencies)
    return yaml.safe_dump(doc, sort_keys=False)


def _check_acyclic(specs: list) -> None:
    graph = {s.component_name: set(s.dependencies) for s in specs}
    visiting, done = set(), set()

    def visit(node, trail):
        if node in done:
            return
        if node in visiting:
            raise DependencyCycle(f"dependency cycle: {' -> '.join(trail + [node])}")
        visiting.add(node)
        for dep in graph.get(node, ()):
            visit(dep, trail + [node])
        visiting.discard(node)
        done.add(node)

    for name in graph:
        visit(name, [])


def load_component_specs(directory) -> list:
    """Load every ``*.yaml`` component file in a directory.

    Mode paths are resolved relative to the directory's parent (the
    config root), so ``modes/laser/device.yaml`` sits beside
    ``components/``. The dependency graph must be acyclic and every
    referenced mode file must exist.
    """
    root = Path(directory)
    if not root.is_dir():
        raise ParseError(f"component directory {root} does not exist")
    specs = []
    for path in sorted(root.glob("*.yaml")):
        spec = load_component_spec(path.read_text())
        for mode_path in spec.modes:
            resolved = (root.parent / mode_path).resolve()
            if not resolved.is_file():
                raise MissingModeFile(
                    f"component {spec.component_name!r}: mode file {mode_path!r} not found"
                )
            load_mode_spec(resolved.read_text())  # reject broken mode files at load time
        specs.append(spec)
    names = [s.component_name for s in specs]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise ParseError(f"duplicate component names: {sorted(dupes)}")
    known = set(names)
    for spec in specs:
        for dep in spec.dependencies:
            if dep not in known:
                raise ParseError(
                    f"component {spec.component_name!r} depends on unknown component {dep!r}"
                )
    _check_acyclic(specs)
    return specs


def resolve_mode_paths(spec: ComponentSpec, components_dir) -> list:
    """Absolute paths of a component's mode files (config-root relative)."""
    root = Path(components_dir)
    return [(root.parent / p).resolve() for p in spec.modes]
