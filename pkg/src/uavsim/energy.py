"""Rotary-wing power model and the battery feasibility disk that bounds how
far a UAV may relocate from its initial position."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class EnergyParams:
    """Power-model constants plus mission budget.

    blade_drag_coeff is the rotor profile drag coefficient (often written
    with the same symbol as the layer spacing elsewhere; renamed here to
    avoid the collision).  induced_power_const relates induced hover power
    to sqrt(disk loading cubed).
    """

    profile_power: float        # W, blade profile power in hover
    induced_power_hover: float  # W, induced power in hover
    tip_speed: float            # m/s
    hover_induced_velocity: float  # m/s
    fuselage_drag_ratio: float
    air_density: float          # kg/m^3
    rotor_solidity: float
    rotor_area: float           # m^2
    uav_mass: float             # kg
    sim_mass: float             # kg
    induced_power_const: float  # W kg^-1.5 m
    battery_energy: float       # J
    extra_power: float          # W, metasurface control + comms overhead
    operation_time: float       # s
    cruise_speed: float         # m/s

    def __post_init__(self):
        for name in ("profile_power", "induced_power_hover", "tip_speed",
                     "hover_induced_velocity", "fuselage_drag_ratio", "air_density",
                     "rotor_solidity", "rotor_area", "uav_mass",
                     "induced_power_const", "battery_energy", "extra_power",
                     "operation_time", "cruise_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.sim_mass < 0:
            raise ValueError("sim_mass must be >= 0")


def _default_kappa(induced_power: float, weight_newtons: float, rotor_area: float) -> float:
    mass = weight_newtons / GRAVITY
    return induced_power / math.sqrt(mass**3 / rotor_area)


def default_energy_params(battery_energy: float = 500e3, operation_time: float = 180.0,
                          extra_power: float = 20.0, sim_mass: float = 0.0) -> EnergyParams:
    """Typical rotary-wing platform constants.

    The battery/mission values are artifact defaults for desk-scale runs,
    not measured platform figures; override them from the scenario config
    for anything that matters.
    """
    weight = 120.0  # N
    rotor_area = 0.79
    induced_power = 944.9
    return EnergyParams(
        profile_power=580.7,
        induced_power_hover=induced_power,
        tip_speed=200.0,
        hover_induced_velocity=7.87,
        fuselage_drag_ratio=0.3,
        air_density=1.225,
        rotor_solidity=0.05,
        rotor_area=rotor_area,
        uav_mass=weight / GRAVITY,
        sim_mass=sim_mass,
        induced_power_const=_default_kappa(induced_power, weight, rotor_area),
        battery_energy=battery_energy,
        extra_power=extra_power,
        operation_time=operation_time,
        cruise_speed=10.0,
    )


def propulsion_power(v: float, params: EnergyParams) -> float:
    """Total propulsion power at horizontal speed v."""
    if v < 0:
        raise ValueError("speed must be >= 0")
    profile = params.profile_power * (1.0 + 3.0 * v**2 / params.tip_speed**2)
    v0 = params.hover_induced_velocity
    induced = params.induced_power_hover * math.sqrt(
        math.sqrt(1.0 + v**4 / (4.0 * v0**4)) - v**2 / (2.0 * v0**2))
    parasite = 0.5 * params.fuselage_drag_ratio * params.air_density \
        * params.rotor_solidity * params.rotor_area * v**3
    return profile + induced + parasite


def hover_power(params: EnergyParams) -> float:
    """Minimum power to hold altitude without horizontal motion."""
    return params.profile_power + params.induced_power_hover


def induced_power(m_total: float, rotor_area: float, kappa: float) -> float:
    """Induced hover power from total mass via the disk-loading law."""
    if m_total <= 0 or rotor_area <= 0 or kappa <= 0:
        raise ValueError("arguments must be > 0")
    return kappa * math.sqrt(m_total**3 / rotor_area)


def max_travel_radius(params: EnergyParams) -> float:
    """Largest relocation distance the battery allows after the hover mission.

    Closed form of the battery constraint: travel at cruise speed costs
    propulsion_power(v_m) * dist / v_m on top of the hover + overhead bill.
    """
    residual = params.battery_energy - (hover_power(params) + params.extra_power) * params.operation_time
    if residual <= 0:
        return 0.0
    return residual * params.cruise_speed / propulsion_power(params.cruise_speed, params)


def energy_feasible(position: np.ndarray, initial_position: np.ndarray,
                    params: EnergyParams) -> bool:
    """True iff hover mission plus relocation to `position` fits the battery."""
    travel = float(np.linalg.norm(np.asarray(position) - np.asarray(initial_position)))
    cost = (hover_power(params) + params.extra_power) * params.operation_time \
        + propulsion_power(params.cruise_speed, params) * travel / params.cruise_speed
    return cost <= params.battery_energy
