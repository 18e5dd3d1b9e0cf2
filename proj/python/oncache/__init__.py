"""Python access to the overlay cache simulator."""

import json

from ._core import (
    Scenario,
    ScenarioError,
    Simulator,
    flow_hash,
    ipv4_header_checksum,
    load_scenario,
    outer_udp_source_port,
    parse_scenario,
    run_scenario_json,
    run_scenario_text,
)


def run_scenario(scenario, seed=None):
    """Runs `scenario` to exhaustion and returns the machine report as a dict."""
    return json.loads(run_scenario_json(scenario, scenario.seed if seed is None else seed))


def run(simulator):
    """Runs a Simulator to exhaustion and returns its report as a dict."""
    return json.loads(simulator.run_json())


__all__ = [
    "Scenario",
    "ScenarioError",
    "Simulator",
    "flow_hash",
    "ipv4_header_checksum",
    "load_scenario",
    "outer_udp_source_port",
    "parse_scenario",
    "run",
    "run_scenario",
    "run_scenario_json",
    "run_scenario_text",
]
