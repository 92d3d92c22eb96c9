"""Learned phase-tensor generator: a conditional variational autoencoder
trained on layer-by-layer solutions, with a capacity term in the loss that
backpropagates through the wave-domain channel pipeline.

Phases are encoded as (cos, sin) pairs so the learning problem has no wrap
discontinuity; decoder outputs are renormalized onto the unit circle before
angles are extracted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import association as assoc_mod
from . import channel as channel_mod
from .channel import PhaseTensor, build_transfers
from .errors import Divergence
from .phase import lbl_ipso
from .scenario import ScenarioConfig, generate_scenario

LOG2E = math.log2(math.e)


# ---------------------------------------------------------------------------
# differentiable capacity pipeline


def capacity_torch(theta: torch.Tensor, w_inter: torch.Tensor | None, w_out: torch.Tensor,
                   h: torch.Tensor, served: torch.Tensor, tx: torch.Tensor,
                   noise: torch.Tensor) -> torch.Tensor:
    """Batched network capacity of the assigned links.

    theta: (B, M, L, N) real; h: (B, M, K, N) complex; served: (B, M) long
    with -1 for unassigned UAVs.  Returns (B,) capacities in bits/s/Hz.
    """
    layers = theta.shape[2]
    v = torch.exp(1j * theta[:, :, 0, :]) * w_out  # G applied to the output vector
    for l in range(1, layers):
        v = torch.exp(1j * theta[:, :, l, :]) * torch.einsum("ij,bmj->bmi", w_inter, v)
    amps = torch.einsum("bmn,bmkn->bmk", v.conj(), h)
    gains = amps.real**2 + amps.imag**2  # (B, M, K)
    weighted = gains * tx
    total = weighted.sum(dim=-1)
    mask = served >= 0
    idx = served.clamp(min=0).unsqueeze(-1)
    signal = torch.gather(weighted, 2, idx).squeeze(-1)
    sinr = signal / (total - signal + noise)
    rates = torch.log2(1.0 + sinr) * mask
    return rates.sum(dim=1)


# ---------------------------------------------------------------------------
# dataset


@dataclass
class PhaseDataset:
    """Training records plus the shared stack geometry they were solved on."""

    conditions: np.ndarray    # (S, C) float
    phases: np.ndarray        # (S, M, L, N) float
    capacities: np.ndarray    # (S,) float
    h: np.ndarray             # (S, M, K, N) complex
    served: np.ndarray        # (S, M) int, -1 unassigned
    w_inter: np.ndarray | None
    w_out: np.ndarray
    tx_powers: np.ndarray     # (K,)
    noise_powers: np.ndarray  # (M,)
    meta: dict

    def __len__(self) -> int:
        return self.conditions.shape[0]

    def save(self, path) -> None:
        arrays = dict(
            conditions=self.conditions, phases=self.phases, capacities=self.capacities,
            h=self.h, served=self.served, w_out=self.w_out, tx_powers=self.tx_powers,
            noise_powers=self.noise_powers,
            meta_keys=np.array(sorted(self.meta), dtype=object),
            meta_vals=np.array([self.meta[k] for k in sorted(self.meta)], dtype=float),
        )
        if self.w_inter is not None:
            arrays["w_inter"] = self.w_inter
        np.savez_compressed(path, **arrays)

    @staticmethod
    def load(path) -> "PhaseDataset":
        with np.load(path, allow_pickle=True) as data:
            meta = {str(k): float(v) for k, v in zip(data["meta_keys"], data["meta_vals"])}
            return PhaseDataset(
                conditions=data["conditions"], phases=data["phases"],
                capacities=data["capacities"], h=data["h"], served=data["served"],
                w_inter=data["w_inter"] if "w_inter" in data else None,
                w_out=data["w_out"], tx_powers=data["tx_powers"],
                noise_powers=data["noise_powers"], meta=meta)

    def subset(self, indices) -> "PhaseDataset":
        idx = np.asarray(indices)
        return PhaseDataset(
            conditions=self.conditions[idx], phases=self.phases[idx],
            capacities=self.capacities[idx], h=self.h[idx], served=self.served[idx],
            w_inter=self.w_inter, w_out=self.w_out, tx_powers=self.tx_powers,
            noise_powers=self.noise_powers, meta=self.meta)


def condition_vector(uav_xy: np.ndarray, served_xy: np.ndarray, log_gains: np.ndarray,
                     served_h: np.ndarray, area: tuple[float, float]) -> np.ndarray:
    """Flat condition: normalized UAV and served-user planar positions,
    per-link log path gains, and each UAV's served-link small-scale channel
    (unit-normalized, split into real and imaginary parts).

    The fading part is what lets the generator phase-align the stack; the
    geometry part alone only fixes the large-scale picture.
    """
    scale = np.array(area)
    h = np.asarray(served_h)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    unit = h / np.where(norms > 0, norms, 1.0)
    return np.concatenate([
        (uav_xy / scale).ravel(),
        (served_xy / scale).ravel(),
        log_gains.ravel(),
        unit.real.ravel(),
        unit.imag.ravel(),
    ])


def canonical_gauge(theta: np.ndarray) -> np.ndarray:
    """Remove the per-layer constant-phase freedom: subtract each layer's
    circular mean.  Shifting a whole layer by a constant only rotates the
    complex cascade gain, so capacities are unchanged, but canonical targets
    make the regression problem single-moded."""
    theta = np.asarray(theta)
    mean = np.angle(np.exp(1j * theta).mean(axis=-1, keepdims=True))
    return np.mod(theta - mean, 2.0 * math.pi)


def generate_dataset(config: ScenarioConfig, count: int, seed: int,
                     sweeps: int = 50) -> PhaseDataset:
    """Sample scenarios, solve each with the layer-by-layer method, and
    record (condition, phases, channels, reference capacity)."""
    root = np.random.SeedSequence([seed, 0x44415441])
    conditions, phases_all, caps, h_all, served_all = [], [], [], [], []
    transfers = None
    tx = noise = None
    for i, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        scenario = generate_scenario(config, seed=int(rng.integers(2**63)))
        if transfers is None:
            transfers = build_transfers(scenario)
            tx = scenario.tx_powers()
            noise = scenario.noise_powers()
        realization = channel_mod.sample_channels(scenario, transfers, rng)
        init = PhaseTensor.random(scenario.num_uavs, config.layers,
                                  config.atoms_per_layer, rng)
        rates0 = channel_mod.rate_table(init, transfers, realization.h, tx, noise)
        assoc = assoc_mod.binarize(assoc_mod.solve_m_auuop(rates0), rates0)
        phases = lbl_ipso(init, transfers, assoc.entries, realization.h, sweeps=sweeps)
        rates = channel_mod.rate_table(phases, transfers, realization.h, tx, noise)
        capacity = channel_mod.network_capacity(assoc.entries, rates)
        served = np.array([assoc_mod.served_user(assoc, m) if assoc.entries[m].max() > 0
                           else -1 for m in range(scenario.num_uavs)], dtype=np.int64)
        uav_xy = scenario.uav_positions()[:, :2]
        users_xy = scenario.user_positions()[:, :2]
        served_xy = np.stack([users_xy[s] if s >= 0 else uav_xy[m]
                              for m, s in enumerate(served)])
        served_h = np.stack([realization.h_tilde[m, s] if s >= 0
                             else np.zeros(config.atoms_per_layer, dtype=complex)
                             for m, s in enumerate(served)])
        log_gains = np.log10(realization.path_gain)
        conditions.append(condition_vector(uav_xy, served_xy, log_gains, served_h,
                                           config.area))
        phases_all.append(canonical_gauge(phases.theta))
        caps.append(capacity)
        h_all.append(realization.h)
        served_all.append(served)
    meta = dict(
        num_uavs=config.num_uavs, num_users=config.num_users, layers=config.layers,
        atoms_per_layer=config.atoms_per_layer, area_x=config.area[0],
        area_y=config.area[1], seed=seed)
    return PhaseDataset(
        conditions=np.stack(conditions), phases=np.stack(phases_all),
        capacities=np.array(caps), h=np.stack(h_all), served=np.stack(served_all),
        w_inter=transfers.inter_layer, w_out=transfers.output,
        tx_powers=tx, noise_powers=noise, meta=meta)


# ---------------------------------------------------------------------------
# model


class CvaeModel(nn.Module):
    """Encoder/decoder pair over (cos, sin) phase encodings with a latent
    Gaussian bottleneck; loss weights and condition statistics live on the
    module so checkpoints are self-contained.

    The networks are shared across UAVs: every UAV sees the same stack
    geometry, so the condition-to-phase map is identical per UAV and the
    model applies one set of weights to each UAV's slice of the condition.
    The latent is per UAV as well.
    """

    def __init__(self, num_uavs: int, layers: int, atoms: int, cond_dim: int,
                 latent_dim: int = 32, hidden: int = 256):
        super().__init__()
        self.num_uavs = num_uavs
        self.layers = layers
        self.atoms = atoms
        self.cond_dim = cond_dim
        self.latent_dim = latent_dim
        self.hidden = hidden
        # condition layout: uav_xy (2M), served_xy (2M), log gains (MK),
        # then Re and Im of each served channel (MN each)
        num_users = (cond_dim - 4 * num_uavs - 2 * num_uavs * atoms) // num_uavs
        if 4 * num_uavs + num_uavs * num_users + 2 * num_uavs * atoms != cond_dim:
            raise ValueError(f"condition dim {cond_dim} does not match geometry")
        self.num_users = num_users
        self.uav_cond_dim = 4 + num_users + 2 * atoms
        self.uav_phase_dim = 2 * layers * atoms
        self.phase_dim = num_uavs * self.uav_phase_dim
        self.encoder = nn.Sequential(
            nn.Linear(self.uav_phase_dim + self.uav_cond_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 2 * latent_dim))
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim + self.uav_cond_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, self.uav_phase_dim))
        self.register_buffer("loss_weights", torch.ones(3))
        self.register_buffer("cond_mean", torch.zeros(cond_dim))
        self.register_buffer("cond_std", torch.ones(cond_dim))
        self.register_buffer("weights_calibrated", torch.zeros(1, dtype=torch.bool))

    def normalize_condition(self, c: torch.Tensor) -> torch.Tensor:
        return (c - self.cond_mean) / self.cond_std

    def split_condition(self, c: torch.Tensor) -> torch.Tensor:
        """(B, C) normalized condition -> (B, M, per-UAV features)."""
        m, n, k = self.num_uavs, self.atoms, self.num_users
        parts = torch.split(c, [2 * m, 2 * m, m * k, m * n, m * n], dim=-1)
        lead = c.shape[:-1]
        return torch.cat([
            parts[0].reshape(*lead, m, 2),
            parts[1].reshape(*lead, m, 2),
            parts[2].reshape(*lead, m, k),
            parts[3].reshape(*lead, m, n),
            parts[4].reshape(*lead, m, n),
        ], dim=-1)

    def encode(self, x: torch.Tensor, c: torch.Tensor):
        """Returns per-UAV (mu, logvar), each shaped (..., M, latent)."""
        cu = self.split_condition(self.normalize_condition(c))
        xu = x.reshape(*x.shape[:-1], self.num_uavs, self.uav_phase_dim)
        out = self.encoder(torch.cat([xu, cu], dim=-1))
        mu, logvar = out.chunk(2, dim=-1)
        return mu, logvar

    def decode(self, z: torch.Tensor, c: torch.Tensor):
        """Raw pairs renormalized onto the unit circle; returns (pairs, theta).

        z is per UAV, shape (..., M, latent); the flat pair output matches
        `encode_phases` ordering.
        """
        cu = self.split_condition(self.normalize_condition(c))
        raw = self.decoder(torch.cat([z, cu], dim=-1))  # (..., M, 2LN)
        lead = raw.shape[:-2]
        pairs = raw.reshape(*lead, -1, 2)
        norm = torch.linalg.norm(pairs, dim=-1, keepdim=True).clamp_min(1e-12)
        unit = pairs / norm
        theta = torch.atan2(unit[..., 1], unit[..., 0]) % (2.0 * math.pi)
        shape = (*lead, self.num_uavs, self.layers, self.atoms)
        return unit.reshape(*lead, self.phase_dim), theta.reshape(shape)

    def forward(self, x: torch.Tensor, c: torch.Tensor,
                generator: torch.Generator | None = None):
        mu, logvar = self.encode(x, c)
        std = torch.exp(0.5 * logvar)
        eps = torch.empty_like(std).normal_(generator=generator)
        z = mu + std * eps
        x_hat, theta = self.decode(z, c)
        return mu, logvar, z, x_hat, theta


def encode_phases(theta: np.ndarray | torch.Tensor) -> torch.Tensor:
    """(..., M, L, N) angles -> flat (cos, sin) features."""
    t = torch.as_tensor(np.asarray(theta), dtype=torch.float32)
    flat = t.reshape(*t.shape[:-3], -1)
    return torch.stack([torch.cos(flat), torch.sin(flat)], dim=-1).reshape(*t.shape[:-3], -1)


@dataclass
class LossParts:
    total: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    capacity: torch.Tensor


def cvae_loss(model: CvaeModel, x: torch.Tensor, c: torch.Tensor, batch, *,
              generator: torch.Generator | None = None) -> LossParts:
    """Weighted sum of reconstruction, KL and capacity-match terms.

    `batch` carries the complex channels, association and reference
    capacities needed to push the decoded phases through the capacity
    pipeline.  Weights are auto-calibrated once, on the first batch seen,
    so every term starts at order one.
    """
    h, served, caps_ref, w_inter, w_out, tx, noise = batch
    mu, logvar, z, x_hat, theta = model(x, c, generator=generator)
    recon = torch.mean((x_hat - x) ** 2)
    kl = torch.mean(0.5 * torch.sum(mu**2 + logvar.exp() - 1.0 - logvar, dim=(-2, -1)))
    caps = capacity_torch(theta, w_inter, w_out, h, served, tx, noise)
    capacity = torch.mean((caps - caps_ref) ** 2)
    if not bool(model.weights_calibrated):
        with torch.no_grad():
            terms = torch.stack([recon, kl, capacity]).detach()
            model.loss_weights.copy_(1.0 / terms.clamp_min(1e-8))
            model.weights_calibrated.fill_(True)
    w = model.loss_weights
    total = w[0] * recon + w[1] * kl + w[2] * capacity
    return LossParts(total=total, recon=recon, kl=kl, capacity=capacity)


def _dataset_tensors(dataset: PhaseDataset):
    x = encode_phases(dataset.phases)
    c = torch.as_tensor(dataset.conditions, dtype=torch.float32)
    h = torch.as_tensor(dataset.h, dtype=torch.complex64)
    served = torch.as_tensor(dataset.served, dtype=torch.long)
    caps = torch.as_tensor(dataset.capacities, dtype=torch.float32)
    w_inter = (torch.as_tensor(dataset.w_inter, dtype=torch.complex64)
               if dataset.w_inter is not None else None)
    w_out = torch.as_tensor(dataset.w_out, dtype=torch.complex64)
    tx = torch.as_tensor(dataset.tx_powers, dtype=torch.float32)
    noise = torch.as_tensor(dataset.noise_powers, dtype=torch.float32)
    return x, c, (h, served, caps, w_inter, w_out, tx, noise)


def build_model(dataset: PhaseDataset, latent_dim: int = 32, hidden: int = 256) -> CvaeModel:
    meta = dataset.meta
    model = CvaeModel(
        num_uavs=int(meta["num_uavs"]), layers=int(meta["layers"]),
        atoms=int(meta["atoms_per_layer"]), cond_dim=dataset.conditions.shape[1],
        latent_dim=latent_dim, hidden=hidden)
    c = torch.as_tensor(dataset.conditions, dtype=torch.float32)
    model.cond_mean.copy_(c.mean(dim=0))
    model.cond_std.copy_(c.std(dim=0).clamp_min(1e-6))
    return model


def train_cvae(dataset: PhaseDataset, model: CvaeModel, epochs: int = 300,
               lr: float = 1e-4, batch_size: int = 64, seed: int = 0,
               on_epoch=None) -> list[dict]:
    """Adam training; returns the per-epoch loss curve.  Deterministic for a
    fixed seed (single-threaded).  `on_epoch(record, model)` runs after every
    epoch when given, letting callers checkpoint mid-training."""
    torch.set_num_threads(1)
    generator = torch.Generator().manual_seed(seed)
    x, c, batch_static = _dataset_tensors(dataset)
    h, served, caps, w_inter, w_out, tx, noise = batch_static
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    curve = []
    n = x.shape[0]
    for epoch in range(epochs):
        order = torch.randperm(n, generator=generator)
        sums = dict(total=0.0, recon=0.0, kl=0.0, capacity=0.0)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            batch = (h[idx], served[idx], caps[idx], w_inter, w_out, tx, noise)
            parts = cvae_loss(model, x[idx], c[idx], batch, generator=generator)
            if not torch.isfinite(parts.total):
                raise Divergence(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            parts.total.backward()
            optimizer.step()
            frac = idx.shape[0] / n
            sums["total"] += float(parts.total.detach()) * frac
            sums["recon"] += float(parts.recon.detach()) * frac
            sums["kl"] += float(parts.kl.detach()) * frac
            sums["capacity"] += float(parts.capacity.detach()) * frac
        record = dict(epoch=epoch, **sums)
        curve.append(record)
        if on_epoch is not None:
            on_epoch(record, model)
    return curve


def generate_phases(model: CvaeModel, c: np.ndarray, seed: int = 0) -> PhaseTensor:
    """Single-forward-pass generation from the latent prior."""
    generator = torch.Generator().manual_seed(seed)
    model.eval()
    with torch.no_grad():
        ct = torch.as_tensor(np.asarray(c), dtype=torch.float32)
        z = torch.empty(ct.shape[:-1] + (model.num_uavs, model.latent_dim)).normal_(
            generator=generator)
        _, theta = model.decode(z, ct)
    return PhaseTensor(theta.numpy().astype(float))


CHECKPOINT_VERSION = 1


def save_checkpoint(model: CvaeModel, path) -> None:
    torch.save(dict(
        version=CHECKPOINT_VERSION,
        num_uavs=model.num_uavs, layers=model.layers, atoms=model.atoms,
        cond_dim=model.cond_dim, latent_dim=model.latent_dim,
        hidden=model.hidden, state=model.state_dict()), path)


def load_checkpoint(path) -> CvaeModel:
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    model = CvaeModel(num_uavs=blob["num_uavs"], layers=blob["layers"],
                      atoms=blob["atoms"], cond_dim=blob["cond_dim"],
                      latent_dim=blob["latent_dim"], hidden=blob.get("hidden", 256))
    model.load_state_dict(blob["state"])
    return model
