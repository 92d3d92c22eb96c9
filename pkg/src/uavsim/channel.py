"""Multi-layer metasurface physics: lattice geometry, diffraction transfer
matrices, cascaded wave-domain response, correlated Rayleigh channels, SINR
and network capacity.

All phase tensors are shaped (M, L, N) with entries wrapped into [0, 2*pi).
Capacities are reported in bits/s/Hz (the log2 rate formula is a spectral
efficiency even though some sources quote it in bps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometry

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SimGeometry:
    """Geometry of one stacked-metasurface unit.

    N meta-atoms per layer arranged on a square n_max x n_max lattice,
    L layers spread evenly through a stack of total thickness t_sim.
    """

    layers: int
    atoms_per_layer: int
    thickness: float
    atom_pitch: float
    atom_area: float

    def __post_init__(self):
        n_max = math.isqrt(self.atoms_per_layer)
        if n_max * n_max != self.atoms_per_layer:
            raise ValueError(f"atoms_per_layer must be a perfect square, got {self.atoms_per_layer}")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        for name in ("thickness", "atom_pitch", "atom_area"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def n_max(self) -> int:
        return math.isqrt(self.atoms_per_layer)

    @property
    def layer_spacing(self) -> float:
        return self.thickness / self.layers


def wrap_phase(theta):
    """Wrap angles into [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


@dataclass
class PhaseTensor:
    """Per-UAV, per-layer, per-atom phase shifts, shape (M, L, N)."""

    theta: np.ndarray

    def __post_init__(self):
        self.theta = wrap_phase(np.asarray(self.theta, dtype=float))
        if self.theta.ndim != 3:
            raise ValueError("theta must have shape (M, L, N)")

    @property
    def num_uavs(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "PhaseTensor":
        return PhaseTensor(self.theta.copy())

    @staticmethod
    def zeros(m: int, layers: int, atoms: int) -> "PhaseTensor":
        return PhaseTensor(np.zeros((m, layers, atoms)))

    @staticmethod
    def random(m: int, layers: int, atoms: int, rng: np.random.Generator) -> "PhaseTensor":
        return PhaseTensor(rng.uniform(0.0, TWO_PI, size=(m, layers, atoms)))


@dataclass
class TransferSet:
    """Propagation coefficients through the stack.

    inter_layer: (N, N) coupling between adjacent layers (identical for every
    layer pair on a uniform lattice), None when L == 1.
    output: (N,) coupling from the output layer to the receive antenna,
    identical for every UAV since the stack geometry is shared.
    """

    inter_layer: np.ndarray | None
    output: np.ndarray
    geometry: SimGeometry


def atom_index(n: int, n_max: int) -> tuple[int, int]:
    """1-based (x, y) lattice indices of atom n on an n_max x n_max layer."""
    if not 1 <= n <= n_max * n_max:
        raise ValueError(f"atom id {n} out of range for n_max={n_max}")
    return (n - 1) % n_max + 1, math.ceil(n / n_max)


def intra_layer_spacing(n: int, n_tilde: int, geometry: SimGeometry) -> float:
    """In-plane distance between atoms n and n_tilde on the same layer."""
    nx, ny = atom_index(n, geometry.n_max)
    tx, ty = atom_index(n_tilde, geometry.n_max)
    return geometry.atom_pitch * math.hypot(nx - tx, ny - ty)


def inter_layer_distance(n: int, n_tilde: int, geometry: SimGeometry) -> float:
    """Distance between atom n_tilde on one layer and atom n on the next."""
    d = intra_layer_spacing(n, n_tilde, geometry)
    return math.hypot(d, geometry.layer_spacing)


def diffraction_coefficient(distance: float, cos_psi: float, geometry: SimGeometry,
                            wavelength: float) -> complex:
    """Scalar-diffraction coupling between two atoms separated by `distance`.

    cos_psi is the cosine of the angle between the propagation direction and
    the layer normal; for parallel planar layers it equals spacing/distance.
    """
    if distance <= 0.0:
        raise DegenerateGeometry("zero propagation distance")
    amp = geometry.atom_area * cos_psi / distance
    return amp * (1.0 / (TWO_PI * distance) - 1j / wavelength) * np.exp(1j * TWO_PI * distance / wavelength)


def _layer_coupling_matrix(geometry: SimGeometry, wavelength: float, spacing: float) -> np.ndarray:
    """(N, N) coupling for two parallel lattice layers `spacing` apart.

    Entry (n, n_tilde) couples atom n_tilde on the source layer to atom n on
    the destination layer.
    """
    n_max = geometry.n_max
    ids = np.arange(geometry.atoms_per_layer)
    xs = ids % n_max
    ys = ids // n_max
    dx = xs[:, None] - xs[None, :]
    dy = ys[:, None] - ys[None, :]
    d_plane = geometry.atom_pitch * np.hypot(dx, dy)
    dist = np.hypot(d_plane, spacing)
    cos_psi = spacing / dist
    amp = geometry.atom_area * cos_psi / dist
    return amp * (1.0 / (TWO_PI * dist) - 1j / wavelength) * np.exp(1j * TWO_PI * dist / wavelength)


def build_transfers(scenario) -> TransferSet:
    """Build the inter-layer matrix and the output-layer-to-antenna vector.

    The receive antenna sits on the stack axis one layer spacing behind the
    output layer, so the output vector reuses the same diffraction kernel
    with the antenna treated as a single point on the axis.
    """
    geom: SimGeometry = scenario.sim
    lam = scenario.radio.wavelength
    spacing = geom.layer_spacing
    inter = _layer_coupling_matrix(geom, lam, spacing) if geom.layers > 1 else None

    # Antenna on the central axis at distance `spacing` from the output layer.
    n_max = geom.n_max
    ids = np.arange(geom.atoms_per_layer)
    xs = ids % n_max
    ys = ids // n_max
    center = (n_max - 1) / 2.0
    d_plane = geom.atom_pitch * np.hypot(xs - center, ys - center)
    dist = np.hypot(d_plane, spacing)
    cos_psi = spacing / dist
    amp = geom.atom_area * cos_psi / dist
    output = amp * (1.0 / (TWO_PI * dist) - 1j / lam) * np.exp(1j * TWO_PI * dist / lam)
    return TransferSet(inter_layer=inter, output=output, geometry=geom)


def phase_matrices(theta_ml: np.ndarray) -> np.ndarray:
    """Unit-modulus diagonal entries for each layer: exp(j*theta), shape (L, N)."""
    return np.exp(1j * theta_ml)


def equivalent_response(m: int, phases: PhaseTensor, transfers: TransferSet) -> np.ndarray:
    """Cascaded response of UAV m's stack: Phi_L W ... Phi_2 W Phi_1."""
    theta = phases.theta[m]
    layers = transfers.geometry.layers
    diag = np.exp(1j * theta)
    g = np.diag(diag[0])
    for l in range(1, layers):
        g = diag[l][:, None] * (transfers.inter_layer @ g)
    return g


def cascade_gain(m: int, phases: PhaseTensor, transfers: TransferSet, h: np.ndarray) -> complex:
    """End-to-end complex gain w1^H G^H h for UAV m.

    Evaluated right-to-left with matrix-vector products; equals
    conj(output)^T conj(G)^T h.
    """
    theta = phases.theta[m]
    layers = transfers.geometry.layers
    v = h
    for l in range(layers - 1, 0, -1):
        v = transfers.inter_layer.conj().T @ (np.exp(-1j * theta[l]) * v)
    v = np.exp(-1j * theta[0]) * v
    return complex(transfers.output.conj() @ v)


def spatial_correlation(geometry: SimGeometry, wavelength: float) -> np.ndarray:
    """Isotropic-scattering correlation across one layer: sinc(2 d / lambda)."""
    n_max = geometry.n_max
    ids = np.arange(geometry.atoms_per_layer)
    xs = ids % n_max
    ys = ids // n_max
    d = geometry.atom_pitch * np.hypot(xs[:, None] - xs[None, :], ys[:, None] - ys[None, :])
    return np.sinc(2.0 * d / wavelength)


def correlation_factor(r: np.ndarray) -> np.ndarray:
    """Symmetric square-root factor F with F F^T ~= R.

    Uses an eigendecomposition with negative eigenvalues clipped at zero;
    the sinc correlation matrix is numerically rank-deficient, so a Cholesky
    factor does not exist.
    """
    vals, vecs = np.linalg.eigh(r)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


@dataclass
class ChannelRealization:
    """One quasi-static draw of the user-to-stack channels.

    h_tilde holds the whitened (unit path gain) vectors, shape (M, K, N);
    h holds sqrt(beta) * h_tilde evaluated at the sampling-time UAV
    positions.  When UAVs move, recompute h via `channels_at`.
    """

    h_tilde: np.ndarray
    h: np.ndarray
    path_gain: np.ndarray
    correlation: np.ndarray
    factor: np.ndarray


# Distances below the 1 m reference of the path-gain model are clamped.
MIN_LINK_DISTANCE = 1.0


def path_gains(scenario, positions: np.ndarray) -> np.ndarray:
    """(M, K) path gains rho0 / D^2 at the given UAV positions."""
    users = np.stack([u.position for u in scenario.users])
    d = np.linalg.norm(positions[:, None, :] - users[None, :, :], axis=-1)
    d = np.maximum(d, MIN_LINK_DISTANCE)
    return scenario.radio.reference_gain / d**2


def sample_channels(scenario, transfers: TransferSet, rng: np.random.Generator) -> ChannelRealization:
    """Draw correlated Rayleigh channels for every (UAV, user) link.

    Each whitened vector is factor @ z with z circular complex Gaussian of
    unit variance per complex element (real/imag variance 1/2 each).
    """
    geom = transfers.geometry
    r = spatial_correlation(geom, scenario.radio.wavelength)
    factor = correlation_factor(r)
    m, k, n = scenario.num_uavs, scenario.num_users, geom.atoms_per_layer
    z = (rng.standard_normal((m, k, n)) + 1j * rng.standard_normal((m, k, n))) / math.sqrt(2.0)
    h_tilde = np.einsum("ij,mkj->mki", factor, z)
    positions = np.stack([u.position for u in scenario.uavs])
    beta = path_gains(scenario, positions)
    h = np.sqrt(beta)[:, :, None] * h_tilde
    return ChannelRealization(h_tilde=h_tilde, h=h, path_gain=beta, correlation=r, factor=factor)


def channels_at(scenario, realization: ChannelRealization, positions: np.ndarray) -> np.ndarray:
    """Re-scale the fixed whitened draw to new UAV positions."""
    beta = path_gains(scenario, positions)
    return np.sqrt(beta)[:, :, None] * realization.h_tilde


def link_gains(phases: PhaseTensor, transfers: TransferSet, h: np.ndarray) -> np.ndarray:
    """(M, K) squared channel magnitudes |w1^H G^H h_{m,k}|^2."""
    m_count, k_count = h.shape[0], h.shape[1]
    out = np.empty((m_count, k_count))
    for m in range(m_count):
        g = equivalent_response(m, phases, transfers)
        # w1^H G^H h  ==  (G w1)^H h
        gw = g @ transfers.output
        out[m] = np.abs(h[m] @ gw.conj()) ** 2
    return out


def sinr(m: int, k: int, phases: PhaseTensor, transfers: TransferSet, h: np.ndarray,
         tx_powers: np.ndarray, noise_power: float) -> float:
    """Signal-to-interference-plus-noise ratio of user k at UAV m."""
    gains = link_gains(phases, transfers, h)[m]
    signal = gains[k] * tx_powers[k]
    interference = float(np.sum(np.delete(gains * tx_powers, k)))
    return signal / (interference + noise_power)


def sinr_table(phases: PhaseTensor, transfers: TransferSet, h: np.ndarray,
               tx_powers: np.ndarray, noise_powers: np.ndarray) -> np.ndarray:
    """(M, K) SINR of every potential link under shared-spectrum interference."""
    gains = link_gains(phases, transfers, h)
    weighted = gains * tx_powers[None, :]
    total = weighted.sum(axis=1, keepdims=True)
    interference = total - weighted
    return weighted / (interference + noise_powers[:, None])


def rate_table(phases: PhaseTensor, transfers: TransferSet, h: np.ndarray,
               tx_powers: np.ndarray, noise_powers: np.ndarray) -> np.ndarray:
    """(M, K) spectral efficiencies log2(1 + SINR)."""
    return np.log2(1.0 + sinr_table(phases, transfers, h, tx_powers, noise_powers))


def network_capacity(s_entries: np.ndarray, rates: np.ndarray) -> float:
    """Association-weighted sum rate in bits/s/Hz."""
    return float(np.sum(s_entries * rates))
