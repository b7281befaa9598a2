"""Scenario ingestion, demand synthesis, closed-loop simulation and reports."""

from .closedloop import SimulationReport, run_closed_loop
from .demand import gen_demand
from .metrics import metrics, time_to_balance
from .scenario import Scenario, load_bundled, load_scenario, scenario_from_dict
