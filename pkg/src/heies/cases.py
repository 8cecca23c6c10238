"""Small coupled systems used by the demos and the test suite."""

from __future__ import annotations

from .dtseries import DriverProfile
from .network import (
    Branch,
    Bus,
    CouplingUnit,
    ElectricNetwork,
    HeatNetwork,
    HeatNode,
    Pipe,
)
from .system import CoupledSystem

AREA = 0.0314  # 0.2 m bore
DENSITY = 960.0
CP = 4182.0


def _pipe(pid, a, b, length, heat_transfer=0.3, resistance_per_m=0.02):
    return Pipe(pid, a, b, length, AREA, DENSITY, CP, heat_transfer, resistance_per_m * length)


def _three_bus(pv_voltage=1.005):
    buses = [
        Bus("b1", "PV", p=0.05, voltage=pv_voltage),
        Bus("b2", "PQ", p=-0.1, q=-0.03),
        Bus("b3", "Slack", e=1.0, f=0.0),
    ]
    branches = [Branch("b1", "b2", 0.01, 0.05), Branch("b2", "b3", 0.01, 0.05),
                Branch("b1", "b3", 0.01, 0.05)]
    return ElectricNetwork.from_branches(buses, branches)


def _chp_units():
    return (
        CouplingUnit("ExtractionSteamTurbine", "1", "b1", Z=8e7, eta_e=0.3, F_in=0.25),
        CouplingUnit("GasTurbine", "2", "b3", c_m1=1.3e7),
    )


def four_node_system(drivers=None, heat_transfer=0.3) -> CoupledSystem:
    """Ring of four heat nodes and three buses with two CHP units.

    Heat node 1 is the slack, 2 a source, 3 and 4 loads; the steam turbine
    joins node 1 to PV bus b1 and the gas turbine node 2 to slack bus b3.
    """
    nodes = [
        HeatNode("1", "Slack", supply_temperature=85.0),
        HeatNode("2", "Source", supply_temperature=85.0, power=0.6e6),
        HeatNode("3", "Load", return_temperature=50.0, power=1.5e6),
        HeatNode("4", "Load", return_temperature=50.0, power=1.2e6),
    ]
    pipes = [
        _pipe("p1", "1", "3", 1500.0, heat_transfer),
        _pipe("p2", "2", "3", 1000.0, heat_transfer),
        _pipe("p3", "2", "4", 1200.0, heat_transfer),
        _pipe("p4", "1", "4", 1800.0, heat_transfer),
    ]
    heat = HeatNetwork(nodes, pipes, ambient_temperature=10.0, heat_capacity=CP)
    return CoupledSystem(heat, _three_bus(), _chp_units(), drivers or {})


def reversal_system(drivers=None) -> CoupledSystem:
    """Loop 1-3-4 whose cross pipe ``p3`` (3 -> 4) reverses when the load
    at node 5 grows against the load at node 6."""
    nodes = [
        HeatNode("1", "Slack", supply_temperature=85.0),
        HeatNode("2", "Source", supply_temperature=85.0, power=0.6e6),
        HeatNode("3", "Intermediate"),
        HeatNode("4", "Intermediate"),
        HeatNode("5", "Load", return_temperature=50.0, power=0.6e6),
        HeatNode("6", "Load", return_temperature=50.0, power=1.6e6),
    ]
    pipes = [
        _pipe("p1", "1", "3", 1000.0),
        _pipe("p2", "2", "4", 800.0),
        _pipe("p3", "3", "4", 600.0),
        _pipe("p4", "1", "4", 1600.0),
        _pipe("p5", "3", "5", 400.0),
        _pipe("p6", "4", "6", 400.0),
    ]
    heat = HeatNetwork(nodes, pipes, ambient_temperature=10.0, heat_capacity=CP)
    return CoupledSystem(heat, _three_bus(), _chp_units(), drivers or {})


def single_pipe_system(length=1000.0, heat_transfer=0.0, load=1.0e6, drivers=None) -> CoupledSystem:
    """Slack source feeding one load through one pipe, heat only."""
    nodes = [
        HeatNode("src", "Slack", supply_temperature=85.0),
        HeatNode("load", "Load", return_temperature=50.0, power=load),
    ]
    pipes = [_pipe("p", "src", "load", length, heat_transfer, 0.0)]
    heat = HeatNetwork(nodes, pipes, ambient_temperature=10.0, heat_capacity=CP)
    return CoupledSystem(heat, None, (), drivers or {})


def load_ramp(start_value, end_value, t0, t1) -> DriverProfile:
    return DriverProfile("piecewise-linear", times=(t0, t1), values=(start_value, end_value))


def sinusoid(offset, amplitude, period, phase=0.0, start=0.0, end=float("inf")) -> DriverProfile:
    return DriverProfile("sinusoid", offset=offset, amplitude=amplitude, period=period,
                         phase=phase, start=start, end=end)
