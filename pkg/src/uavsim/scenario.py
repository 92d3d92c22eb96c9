"""Scenario definition: users, UAVs, geometry constraints, deterministic
random generation, and the structured config file that feeds the CLI.

Powers are stored internally in watts; dBm is accepted at the config
boundary only.  Capacity everywhere in this package is spectral efficiency
in bits/s/Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .channel import SimGeometry
from .energy import EnergyParams, default_energy_params
from .errors import InfeasibleGeometry

SPEED_OF_LIGHT = 2.998e8


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class UserSite:
    """Ground user: fixed position on the z=0 plane and transmit power."""

    position: np.ndarray  # (3,), z == 0
    transmit_power: float  # W

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,):
            raise ValueError("position must be a 3-vector")
        if self.position[2] != 0.0:
            raise ValueError("user z-coordinate must be 0")
        if self.transmit_power <= 0:
            raise ValueError("transmit_power must be > 0")


@dataclass(frozen=True)
class UavState:
    """UAV at fixed altitude with its mission start position and noise floor."""

    position: np.ndarray
    initial_position: np.ndarray
    noise_power: float  # W
    altitude: float

    def __post_init__(self):
        for name in ("position", "initial_position"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
            if getattr(self, name).shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            if getattr(self, name)[2] != self.altitude:
                raise ValueError(f"{name} z-coordinate must equal the altitude")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be > 0")


@dataclass(frozen=True)
class RadioParams:
    wavelength: float       # m
    reference_gain: float   # channel power at 1 m

    def __post_init__(self):
        if self.wavelength <= 0 or self.reference_gain <= 0:
            raise ValueError("radio parameters must be > 0")


@dataclass
class AssociationMatrix:
    """UAV-to-user service matrix, continuous (relaxed) or binary."""

    entries: np.ndarray
    mode: str = "continuous"  # or "binary"

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2:
            raise ValueError("entries must be an M x K matrix")
        if self.mode not in ("continuous", "binary"):
            raise ValueError(f"unknown mode {self.mode!r}")


_ROW_COL_TOL = 1e-9


def validate_association(s: AssociationMatrix) -> bool:
    """Range, row-sum and column-sum feasibility; exact {0,1} in binary mode."""
    e = s.entries
    if np.any(e < -_ROW_COL_TOL) or np.any(e > 1.0 + _ROW_COL_TOL):
        return False
    if s.mode == "binary" and not np.all((e == 0.0) | (e == 1.0)):
        return False
    if np.any(e.sum(axis=1) > 1.0 + _ROW_COL_TOL):
        return False
    if np.any(e.sum(axis=0) > 1.0 + _ROW_COL_TOL):
        return False
    return True


@dataclass(frozen=True)
class Scenario:
    """Single source of truth for one run; immutable after construction."""

    users: tuple[UserSite, ...]
    uavs: tuple[UavState, ...]
    sim: SimGeometry
    radio: RadioParams
    energy: EnergyParams
    area: tuple[float, float]
    altitude: float
    d_min: float
    seed: int
    allow_uav_surplus: bool = False

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "uavs", tuple(self.uavs))
        if not self.users or not self.uavs:
            raise ValueError("need at least one user and one UAV")
        if len(self.uavs) >= len(self.users) and not self.allow_uav_surplus:
            raise ValueError("expected fewer UAVs than users (set allow_uav_surplus to override)")
        if self.altitude <= 0 or self.d_min <= 0 or min(self.area) <= 0:
            raise ValueError("altitude, d_min and area extents must be > 0")

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_uavs(self) -> int:
        return len(self.uavs)

    def uav_positions(self) -> np.ndarray:
        return np.stack([u.position for u in self.uavs])

    def initial_positions(self) -> np.ndarray:
        return np.stack([u.initial_position for u in self.uavs])

    def user_positions(self) -> np.ndarray:
        return np.stack([u.position for u in self.users])

    def tx_powers(self) -> np.ndarray:
        return np.array([u.transmit_power for u in self.users])

    def noise_powers(self) -> np.ndarray:
        return np.array([u.noise_power for u in self.uavs])

    def with_uav_positions(self, positions: np.ndarray) -> "Scenario":
        """Copy with updated current positions (initial positions unchanged)."""
        uavs = tuple(
            UavState(position=np.asarray(p, dtype=float), initial_position=u.initial_position,
                     noise_power=u.noise_power, altitude=self.altitude)
            for u, p in zip(self.uavs, positions))
        return replace(self, uavs=uavs)


def user_distance(w: np.ndarray, u: np.ndarray) -> float:
    """Euclidean distance between a UAV and a user position."""
    return float(np.linalg.norm(np.asarray(w, dtype=float) - np.asarray(u, dtype=float)))


def safety_ok(positions, d_min: float) -> bool:
    """True iff every pair of positions is at least d_min apart."""
    pos = np.asarray(positions, dtype=float)
    m = pos.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            if np.linalg.norm(pos[i] - pos[j]) < d_min:
                return False
    return True


@dataclass(frozen=True)
class ScenarioConfig:
    """Config-file schema; see `paper_defaults` for the shipped preset."""

    num_uavs: int = 3
    num_users: int = 5
    area: tuple[float, float] = (1000.0, 1000.0)
    altitude: float = 50.0
    d_min: float = 100.0
    wavelength: float = SPEED_OF_LIGHT / 28e9
    atoms_per_layer: int = 36
    layers: int = 4
    thickness_wavelengths: float = 5.0
    tx_power: float = 0.5          # W
    noise_power: float = dbm_to_watts(-110.0)
    reference_gain: float | None = None  # default (lambda / 4 pi)^2
    energy: EnergyParams = field(default_factory=default_energy_params)
    seed: int = 0
    allow_uav_surplus: bool = False

    def __post_init__(self):
        for name in ("num_uavs", "num_users", "altitude", "d_min", "wavelength",
                     "atoms_per_layer", "layers", "thickness_wavelengths",
                     "tx_power", "noise_power"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def thickness(self) -> float:
        return self.thickness_wavelengths * self.wavelength

    def sim_geometry(self) -> SimGeometry:
        return SimGeometry(
            layers=self.layers,
            atoms_per_layer=self.atoms_per_layer,
            thickness=self.thickness,
            atom_pitch=self.wavelength / 2.0,
            atom_area=(self.wavelength / 2.0) ** 2,
        )

    def radio_params(self) -> RadioParams:
        rho0 = self.reference_gain
        if rho0 is None:
            rho0 = (self.wavelength / (4.0 * math.pi)) ** 2
        return RadioParams(wavelength=self.wavelength, reference_gain=rho0)


def paper_defaults(**overrides) -> ScenarioConfig:
    """The standard experiment configuration: K=5 users in a 1 km square,
    M=3 UAVs at 50 m, 28 GHz, N=36 atoms, L=4 layers, 500 mW uplink power,
    -110 dBm noise."""
    return replace(ScenarioConfig(), **overrides) if overrides else ScenarioConfig()


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from parsed file content, converting units at the edge."""
    data = dict(raw)
    kwargs = {}
    if "frequency_hz" in data and "wavelength_m" in data:
        raise ValueError("give frequency_hz or wavelength_m, not both")
    if "frequency_hz" in data:
        kwargs["wavelength"] = SPEED_OF_LIGHT / float(data.pop("frequency_hz"))
    if "wavelength_m" in data:
        kwargs["wavelength"] = float(data.pop("wavelength_m"))
    if "tx_power_dbm" in data:
        kwargs["tx_power"] = dbm_to_watts(float(data.pop("tx_power_dbm")))
    if "tx_power_w" in data:
        kwargs["tx_power"] = float(data.pop("tx_power_w"))
    if "noise_power_dbm" in data:
        kwargs["noise_power"] = dbm_to_watts(float(data.pop("noise_power_dbm")))
    if "noise_power_w" in data:
        kwargs["noise_power"] = float(data.pop("noise_power_w"))
    if "area" in data:
        ax, ay = data.pop("area")
        kwargs["area"] = (float(ax), float(ay))
    if "energy" in data:
        base = default_energy_params()
        energy_raw = data.pop("energy") or {}
        unknown = set(energy_raw) - set(base.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown energy keys: {sorted(unknown)}")
        kwargs["energy"] = replace(base, **{k: float(v) for k, v in energy_raw.items()})
    direct = {"num_uavs", "num_users", "altitude", "d_min", "atoms_per_layer",
              "layers", "thickness_wavelengths", "reference_gain", "seed",
              "allow_uav_surplus"}
    for key in list(data):
        if key in direct:
            kwargs[key] = data.pop(key)
    if data:
        raise ValueError(f"unknown config keys: {sorted(data)}")
    return replace(ScenarioConfig(), **kwargs)


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("config file must contain a mapping")
    return config_from_dict(raw)


_REPAIR_STEPS = 1000


def _repair_positions(pos: np.ndarray, area, d_min: float) -> np.ndarray:
    """Push overlapping UAVs apart until every pair clears d_min.

    Iterative pairwise repulsion with clamping to the area; raises after the
    step budget, which also catches areas too small for the packing.
    """
    m = pos.shape[0]
    if m >= 2 and math.hypot(*area) < d_min:
        raise InfeasibleGeometry("area diagonal is below the minimum separation")
    pos = pos.copy()
    margin = 1e-6 * d_min
    for _ in range(_REPAIR_STEPS):
        moved = False
        for i in range(m):
            for j in range(i + 1, m):
                delta = pos[i] - pos[j]
                dist = float(np.linalg.norm(delta))
                if dist >= d_min:
                    continue
                moved = True
                if dist < 1e-12:
                    direction = np.array([1.0, 0.0])
                else:
                    direction = delta / dist
                push = 0.5 * (d_min - dist) + margin
                pos[i] += direction * push
                pos[j] -= direction * push
                np.clip(pos[:, 0], 0.0, area[0], out=pos[:, 0])
                np.clip(pos[:, 1], 0.0, area[1], out=pos[:, 1])
        if not moved:
            return pos
    raise InfeasibleGeometry(
        f"could not separate {m} UAVs by {d_min} m inside {area[0]} x {area[1]} m")


def generate_scenario(config: ScenarioConfig, seed: int | None = None) -> Scenario:
    """Sample a scenario: users uniform over the area, UAV starts uniform at
    altitude then repaired to pairwise separation.  Deterministic in
    (config, seed)."""
    if seed is None:
        seed = config.seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ax, ay = config.area
    user_xy = rng.uniform([0.0, 0.0], [ax, ay], size=(config.num_users, 2))
    uav_xy = rng.uniform([0.0, 0.0], [ax, ay], size=(config.num_uavs, 2))
    if config.num_uavs > 1:
        uav_xy = _repair_positions(uav_xy, config.area, config.d_min)

    users = tuple(
        UserSite(position=np.array([x, y, 0.0]), transmit_power=config.tx_power)
        for x, y in user_xy)
    uavs = tuple(
        UavState(position=np.array([x, y, config.altitude]),
                 initial_position=np.array([x, y, config.altitude]),
                 noise_power=config.noise_power, altitude=config.altitude)
        for x, y in uav_xy)
    return Scenario(
        users=users, uavs=uavs, sim=config.sim_geometry(), radio=config.radio_params(),
        energy=config.energy, area=config.area, altitude=config.altitude,
        d_min=config.d_min, seed=seed, allow_uav_surplus=config.allow_uav_surplus)
