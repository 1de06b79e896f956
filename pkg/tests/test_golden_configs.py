"""Every deployment file shipped under configs/ must parse cleanly."""

from pathlib import Path

from robobox.config import load_blackbox_config, load_component_specs, load_mode_spec
from robobox.daemon import load_daemon_config
from robobox.diagnosis import load_symptom_mappings, parse_rules
from robobox.simsource import load_scenario
from robobox.testflow import load_workflow

CONFIGS = Path(__file__).parent.parent / "configs"


def test_blackbox_config():
    cfg = load_blackbox_config((CONFIGS / "blackbox.yaml").read_text())
    assert {s.name for s in cfg.sources} == {"sim", "bus"}
    assert {s.kind for s in cfg.sources} == {"udp-json", "jsonl-replay"}


def test_component_specs_and_modes():
    specs = load_component_specs(CONFIGS / "components")
    assert {s.component_name for s in specs} == {"battery", "laser", "navigation"}
    nav = next(s for s in specs if s.component_name == "navigation")
    assert nav.dependencies == ("laser",)


def test_every_mode_file():
    mode_files = sorted((CONFIGS / "modes").rglob("*.yaml"))
    assert mode_files
    for path in mode_files:
        spec = load_mode_spec(path.read_text())
        assert spec.outputs


def test_rules_and_mappings():
    ruleset = parse_rules((CONFIGS / "rules.pl").read_text())
    assert "broken" in ruleset.hypotheses
    assert len(ruleset.rules) == 4
    mappings = load_symptom_mappings((CONFIGS / "symptom_mappings.yaml").read_text())
    assert len(mappings) == 3


def test_workflows():
    for path in sorted((CONFIGS / "workflows").glob("*.yaml")):
        wf = load_workflow(path.read_text())
        assert wf.steps


def test_scenarios():
    for path in sorted((CONFIGS / "scenarios").glob("*.yaml")):
        scenario = load_scenario(path.read_text())
        assert scenario.channels


def test_daemon_configs():
    robot = load_daemon_config(CONFIGS / "robot.yaml")
    assert robot.mode == "robot"
    central = load_daemon_config(CONFIGS / "central.yaml")
    assert central.mode == "central"


def test_sample_replay_parses_against_blackbox_config():
    import json

    cfg = load_blackbox_config((CONFIGS / "blackbox.yaml").read_text())
    bus = cfg.source("bus")
    for line in (CONFIGS / "sample_data" / "bus.jsonl").read_text().splitlines():
        doc = json.loads(line)
        assert bus.stream(doc["topic"]) is not None
        assert "receivedAt" in doc
