"""Shared fixture builders: a complete robot deployment tree in a tmp dir."""

import textwrap
from pathlib import Path


def make_robot_tree(
    root: Path,
    udp_port: int = 0,
    listen: str = "127.0.0.1:0",
    monitor_period_sec: float = 0.2,
    heartbeat_timeout_sec: float = 0.5,
    pose_threshold: float = 0.0,
    max_interval_sec: float = 10.0,
    retention_max_bytes: int = 16 * 1024 * 1024,
    robot_id: str = "robot1",
) -> Path:
    """Write a runnable robot-mode deployment; returns the daemon config path."""
    root = Path(root)
    (root / "components").mkdir(parents=True, exist_ok=True)
    (root / "modes" / "laser").mkdir(parents=True, exist_ok=True)
    (root / "modes" / "battery").mkdir(parents=True, exist_ok=True)
    (root / "workflows").mkdir(exist_ok=True)

    (root / "blackbox.yaml").write_text(
        textwrap.dedent(
            f"""
            sources:
              - name: sim
                kind: udp-json
                endpoint: 127.0.0.1:{udp_port}
                streams:
                  - topic: pose
                    variable_names: [position/x, position/y]
                    variable_types: [float, float]
                    timestamp_path: header/stamp
                    filter:
                      delta_thresholds:
                        position/x: {pose_threshold}
                        position/y: {pose_threshold}
                      max_interval_sec: {max_interval_sec}
                  - topic: scan
                    variable_names: [range_min, count]
                    variable_types: [float, int]
                    filter:
                      max_interval_sec: {max_interval_sec}
                  - topic: battery
                    variable_names: [voltage]
                    variable_types: [float]
                    filter:
                      max_interval_sec: {max_interval_sec}
            storage:
              data_dir: data
              retention_max_bytes: {retention_max_bytes}
            """
        ).strip()
        + "\n"
    )
    (root / "components" / "laser.yaml").write_text(
        "component_name: laser\nmodes:\n  - modes/laser/heartbeat.yaml\n"
    )
    (root / "components" / "battery.yaml").write_text(
        "component_name: battery\nmodes:\n  - modes/battery/threshold.yaml\n"
    )
    (root / "modes" / "laser" / "heartbeat.yaml").write_text(
        textwrap.dedent(
            f"""
            mode_name: heartbeat
            inputs: [sim_scan]
            outputs:
              - name: sim_scan_alive
                type: bool
            arguments:
              timeout_sec: {heartbeat_timeout_sec}
            """
        ).strip()
        + "\n"
    )
    (root / "modes" / "battery" / "threshold.yaml").write_text(
        textwrap.dedent(
            """
            mode_name: threshold
            inputs: [sim_battery/voltage]
            outputs:
              - name: voltage_in_range
                type: bool
            arguments:
              min: 20.0
              max: 30.0
            """
        ).strip()
        + "\n"
    )
    (root / "rules.pl").write_text(
        textwrap.dedent(
            f"""
            % hypotheses: laser_fault

            robot({robot_id}).

            laser_fault(X) :- robot(X), laser_heartbeat_lost(X).
            """
        ).strip()
        + "\n"
    )
    (root / "symptom_mappings.yaml").write_text(
        textwrap.dedent(
            """
            mappings:
              - when:
                  component: laser
                  monitor: heartbeat
                  output: sim_scan_alive
                  comparator: eq
                  value: false
                assert: laser_heartbeat_lost($robot)
            """
        ).strip()
        + "\n"
    )
    (root / "workflows" / "laser_check.yaml").write_text(
        textwrap.dedent(
            """
            id: laser_check
            title: Laser liveness check
            steps:
              - id: laser_alive
                kind: expectStatus
                timeout_sec: 1.0
                params:
                  component: laser
                  monitor: heartbeat
                  output: sim_scan_alive
                  equals: true
            """
        ).strip()
        + "\n"
    )
    (root / "robot.yaml").write_text(
        textwrap.dedent(
            f"""
            mode: robot
            robot_id: {robot_id}
            listen: {listen}
            blackbox: blackbox.yaml
            components_dir: components
            rules: rules.pl
            symptom_mappings: symptom_mappings.yaml
            workflows_dir: workflows
            monitor_period_sec: {monitor_period_sec}
            """
        ).strip()
        + "\n"
    )
    return root / "robot.yaml"


def make_central_tree(root: Path, listen: str = "127.0.0.1:0") -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "central.yaml").write_text(
        f"mode: central\nlisten: {listen}\ndata_dir: central_data\n"
    )
    return root / "central.yaml"
