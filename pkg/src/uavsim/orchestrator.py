"""Alternating-optimization driver over association, placement and phases,
plus the benchmark solvers used for comparison experiments.

One channel realization is drawn per run and held fixed across the whole
loop and across benchmarks sharing the scenario, so comparisons are paired.
A sub-step candidate is only accepted when it does not lower the capacity,
which makes the recorded capacity sequence non-decreasing by construction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import association as assoc_mod
from . import channel as channel_mod
from . import cvae as cvae_mod
from . import phase as phase_mod
from . import placement as placement_mod
from .channel import PhaseTensor, build_transfers
from .energy import max_travel_radius
from .scenario import AssociationMatrix, Scenario

DEFAULT_EPS = 1e-6
DEFAULT_TAU_MAX = 50
DEFAULT_SWEEPS = 200
DEFAULT_LBL_BUDGET = 1e10  # flop budget before the generator takes over
DEFAULT_REFINE_STEPS = 100
DEFAULT_REFINE_LR = 0.05


def refine_phases(theta: np.ndarray, transfers, h: np.ndarray, served: np.ndarray,
                  tx: np.ndarray, noise: np.ndarray,
                  steps: int = DEFAULT_REFINE_STEPS,
                  lr: float = DEFAULT_REFINE_LR) -> np.ndarray:
    """Gradient ascent on the exact network capacity over the phase tensor.

    Layer-by-layer alignment only maximizes the served links' gains; in the
    interference-limited regime the capacity objective also wants the stack
    to steer nulls at the other users, which needs all layers' phases moving
    jointly.  Runs in double precision on one thread so results are
    reproducible across worker counts.  Returns the best iterate seen.
    """
    import torch

    from .cvae import capacity_torch

    torch.set_num_threads(1)
    var = torch.tensor(theta[None], dtype=torch.float64, requires_grad=True)
    w_inter = (torch.as_tensor(transfers.inter_layer)
               if transfers.inter_layer is not None else None)
    w_out = torch.as_tensor(transfers.output)
    ht = torch.as_tensor(h[None])
    sv = torch.as_tensor(served[None])
    txt = torch.as_tensor(tx)
    nt = torch.as_tensor(noise)
    optimizer = torch.optim.Adam([var], lr=lr)
    best, best_cap = theta, -np.inf
    for _ in range(steps):
        optimizer.zero_grad()
        cap = capacity_torch(var, w_inter, w_out, ht, sv, txt, nt)[0]
        value = float(cap.detach())
        if value > best_cap:
            best_cap, best = value, var.detach().numpy()[0].copy()
        (-cap).backward()
        optimizer.step()
    return np.mod(best, 2.0 * math.pi)


@dataclass
class SolveTrace:
    """Capacity after every sub-step of every outer iteration."""

    iterations: list = field(default_factory=list)
    termination: str = "max_iter"

    def capacities(self) -> list[float]:
        return [rec["cap_phase"] for rec in self.iterations]


@dataclass
class Solution:
    assoc: AssociationMatrix
    positions: np.ndarray  # (M, 3)
    phases: PhaseTensor
    capacity: float
    trace: SolveTrace


def _capacity(scenario: Scenario, transfers, realization, positions, phases,
              assoc_entries) -> float:
    h = channel_mod.channels_at(scenario, realization, positions)
    rates = channel_mod.rate_table(phases, transfers, h, scenario.tx_powers(),
                                   scenario.noise_powers())
    return channel_mod.network_capacity(assoc_entries, rates)


def _phase_condition(scenario: Scenario, positions, assoc_entries, realization):
    """Condition vector for the generator, mirroring the training encoding."""
    uav_xy = positions[:, :2]
    users_xy = scenario.user_positions()[:, :2]
    served = [int(np.argmax(row)) if row.max() > 0 else -1 for row in assoc_entries]
    served_xy = np.stack([users_xy[s] if s >= 0 else uav_xy[m]
                          for m, s in enumerate(served)])
    atoms = scenario.sim.atoms_per_layer
    served_h = np.stack([realization.h_tilde[m, s] if s >= 0
                         else np.zeros(atoms, dtype=complex)
                         for m, s in enumerate(served)])
    beta = channel_mod.path_gains(scenario, positions)
    return cvae_mod.condition_vector(uav_xy, served_xy, np.log10(beta), served_h,
                                     scenario.area)


def ao_solve(scenario: Scenario, phase_strategy: str = "lbl", *, model=None,
             sweeps: int = DEFAULT_SWEEPS, eps: float = DEFAULT_EPS,
             tau_max: int = DEFAULT_TAU_MAX, fixed_positions: bool = False,
             lbl_budget: float = DEFAULT_LBL_BUDGET,
             refine_steps: int = DEFAULT_REFINE_STEPS) -> Solution:
    """Alternate association, placement and phase solves until the capacity
    gain drops below eps or tau_max outer rounds elapse.

    The phase candidate is polished with `refine_phases` before the guarded
    acceptance check; pass refine_steps=0 for pure alignment candidates."""
    if phase_strategy not in ("lbl", "cvae", "auto"):
        raise ValueError(f"unknown phase strategy {phase_strategy!r}")
    if phase_strategy == "auto":
        geom = scenario.sim
        phase_strategy = phase_mod.hgpso_select(
            scenario.num_uavs, geom.layers, geom.atoms_per_layer, sweeps,
            budget=lbl_budget, model_available=model is not None)
    if phase_strategy == "cvae" and model is None:
        raise ValueError("cvae strategy requires a trained model")

    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0xA0]))
    transfers = build_transfers(scenario)
    realization = channel_mod.sample_channels(scenario, transfers, rng)
    geom = scenario.sim
    phases = PhaseTensor.random(scenario.num_uavs, geom.layers, geom.atoms_per_layer, rng)
    positions = scenario.uav_positions().copy()
    assoc = AssociationMatrix(np.zeros((scenario.num_uavs, scenario.num_users)), "binary")
    trace = SolveTrace()
    prev_cap = _capacity(scenario, transfers, realization, positions, phases, assoc.entries)

    for tau in range(1, tau_max + 1):
        t0 = time.perf_counter()

        h = channel_mod.channels_at(scenario, realization, positions)
        rates = channel_mod.rate_table(phases, transfers, h, scenario.tx_powers(),
                                       scenario.noise_powers())
        assoc = assoc_mod.binarize(assoc_mod.solve_m_auuop(rates), rates)
        cap_assoc = channel_mod.network_capacity(assoc.entries, rates)

        sca_rounds = 0
        if not fixed_positions:
            moved_scenario = scenario.with_uav_positions(positions)
            new_positions, sca_trace = placement_mod.sca_loop(
                moved_scenario, assoc, phases, transfers, realization)
            sca_rounds = len(sca_trace.objectives) - 1
            cand = _capacity(scenario, transfers, realization, new_positions, phases,
                             assoc.entries)
            if cand >= cap_assoc:
                positions = new_positions
        cap_place = _capacity(scenario, transfers, realization, positions, phases,
                              assoc.entries)

        h = channel_mod.channels_at(scenario, realization, positions)
        if phase_strategy == "lbl":
            candidate = phase_mod.lbl_ipso(phases, transfers, assoc.entries, h,
                                           sweeps=sweeps)
        else:
            cond = _phase_condition(scenario, positions, assoc.entries, realization)
            candidate = cvae_mod.generate_phases(model, cond, seed=scenario.seed + tau)
        if refine_steps > 0:
            served = np.array([int(np.argmax(row)) if row.max() > 0 else -1
                               for row in assoc.entries])
            candidate = PhaseTensor(refine_phases(
                candidate.theta, transfers, h, served, scenario.tx_powers(),
                scenario.noise_powers(), steps=refine_steps))
        cand_cap = _capacity(scenario, transfers, realization, positions, candidate,
                             assoc.entries)
        if cand_cap >= cap_place:
            phases = candidate
        cap_phase = max(cand_cap, cap_place)

        trace.iterations.append(dict(
            tau=tau, cap_assoc=cap_assoc, cap_place=cap_place, cap_phase=cap_phase,
            sca_rounds=sca_rounds, wall_ms=(time.perf_counter() - t0) * 1e3))
        if cap_phase - prev_cap <= eps:
            trace.termination = "converged"
            prev_cap = cap_phase
            break
        prev_cap = cap_phase
    else:
        trace.termination = "max_iter"

    return Solution(assoc=assoc, positions=positions, phases=phases,
                    capacity=prev_cap, trace=trace)


# ---------------------------------------------------------------------------
# benchmarks


def _random_feasible_positions(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw repaired into the travel disks and pairwise separation."""
    ax, ay = scenario.area
    initial = scenario.initial_positions()
    radius = max_travel_radius(scenario.energy)
    xy = rng.uniform([0.0, 0.0], [ax, ay], size=(scenario.num_uavs, 2))
    for _ in range(100):
        # travel disk first, then pairwise pushes
        for m in range(scenario.num_uavs):
            delta = xy[m] - initial[m, :2]
            dist = float(np.linalg.norm(delta))
            if dist > radius:
                xy[m] = initial[m, :2] + delta * (radius / dist if dist > 0 else 0.0)
        ok = True
        for i in range(scenario.num_uavs):
            for j in range(i + 1, scenario.num_uavs):
                delta = xy[i] - xy[j]
                dist = float(np.linalg.norm(delta))
                if dist < scenario.d_min:
                    ok = False
                    direction = delta / dist if dist > 1e-12 else np.array([1.0, 0.0])
                    push = 0.5 * (scenario.d_min - dist) + 1e-9
                    xy[i] += direction * push
                    xy[j] -= direction * push
        if ok:
            break
    else:
        xy = initial[:, :2].copy()
    return np.column_stack([xy, np.full(scenario.num_uavs, scenario.altitude)])


def _random_association(scenario: Scenario, rng: np.random.Generator) -> AssociationMatrix:
    users = rng.permutation(scenario.num_users)[:scenario.num_uavs]
    entries = np.zeros((scenario.num_uavs, scenario.num_users))
    for m, k in enumerate(users):
        entries[m, k] = 1.0
    return AssociationMatrix(entries, "binary")


def benchmark_rd(scenario: Scenario, candidates: int = 100) -> Solution:
    """Best of `candidates` fully random feasible solutions."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0xA0]))
    transfers = build_transfers(scenario)
    realization = channel_mod.sample_channels(scenario, transfers, rng)
    geom = scenario.sim
    best = None
    for _ in range(candidates):
        assoc = _random_association(scenario, rng)
        positions = _random_feasible_positions(scenario, rng)
        phases = PhaseTensor.random(scenario.num_uavs, geom.layers,
                                    geom.atoms_per_layer, rng)
        cap = _capacity(scenario, transfers, realization, positions, phases,
                        assoc.entries)
        if best is None or cap > best.capacity:
            trace = SolveTrace(iterations=[dict(tau=1, cap_assoc=cap, cap_place=cap,
                                                cap_phase=cap, sca_rounds=0, wall_ms=0.0)],
                               termination="converged")
            best = Solution(assoc=assoc, positions=positions, phases=phases,
                            capacity=cap, trace=trace)
    return best


def grid_positions(scenario: Scenario) -> np.ndarray:
    """Centers of an even split of the area into one cell per UAV."""
    m = scenario.num_uavs
    cols = math.ceil(math.sqrt(m))
    rows = math.ceil(m / cols)
    ax, ay = scenario.area
    out = np.empty((m, 3))
    for i in range(m):
        col, row = i % cols, i // cols
        out[i] = ((col + 0.5) * ax / cols, (row + 0.5) * ay / rows, scenario.altitude)
    return out


def _redeploy(scenario: Scenario, positions: np.ndarray) -> Scenario:
    """Place UAVs at `positions` as their mission start (no relocation cost)."""
    moved = scenario.with_uav_positions(positions)
    uavs = tuple(
        type(u)(position=u.position, initial_position=u.position,
                noise_power=u.noise_power, altitude=scenario.altitude)
        for u in moved.uavs)
    return replace(moved, uavs=uavs)


def benchmark_ud(scenario: Scenario, sweeps: int = DEFAULT_SWEEPS) -> Solution:
    """Uniform grid deployment; association and phases solved as in ao_solve."""
    deployed = _redeploy(scenario, grid_positions(scenario))
    return ao_solve(deployed, phase_strategy="lbl", sweeps=sweeps, fixed_positions=True)


def _metaheuristic_phase_step(objective, dim: int, rng: np.random.Generator,
                              kind: str, population: int = 30, iterations: int = 50):
    """Population search over a flattened phase vector in [0, 2*pi)^dim."""
    two_pi = 2.0 * math.pi
    pop = rng.uniform(0.0, two_pi, size=(population, dim))
    fitness = np.array([objective(p) for p in pop])
    best_idx = int(np.argmax(fitness))
    best, best_fit = pop[best_idx].copy(), float(fitness[best_idx])

    if kind == "pso":
        inertia, c1, c2 = 0.729, 1.49, 1.49
        velocity = np.zeros_like(pop)
        p_best = pop.copy()
        p_fit = fitness.copy()
        for _ in range(iterations):
            r1 = rng.uniform(size=pop.shape)
            r2 = rng.uniform(size=pop.shape)
            velocity = inertia * velocity + c1 * r1 * (p_best - pop) + c2 * r2 * (best - pop)
            pop = np.mod(pop + velocity, two_pi)
            fitness = np.array([objective(p) for p in pop])
            improved = fitness > p_fit
            p_best[improved] = pop[improved]
            p_fit[improved] = fitness[improved]
            idx = int(np.argmax(p_fit))
            if p_fit[idx] > best_fit:
                best, best_fit = p_best[idx].copy(), float(p_fit[idx])
    elif kind == "de":
        f_weight, crossover = 0.5, 0.9
        for _ in range(iterations):
            for i in range(population):
                a, b, c = rng.choice(population, size=3, replace=False)
                mutant = np.mod(pop[a] + f_weight * (pop[b] - pop[c]), two_pi)
                mask = rng.uniform(size=dim) < crossover
                mask[rng.integers(dim)] = True
                trial = np.where(mask, mutant, pop[i])
                trial_fit = objective(trial)
                if trial_fit >= fitness[i]:
                    pop[i], fitness[i] = trial, trial_fit
                    if trial_fit > best_fit:
                        best, best_fit = trial.copy(), float(trial_fit)
    else:
        raise ValueError(f"unknown metaheuristic {kind!r}")
    return best, best_fit


def benchmark_metaheuristic(scenario: Scenario, kind: str, *, eps: float = DEFAULT_EPS,
                            tau_max: int = DEFAULT_TAU_MAX) -> Solution:
    """AO loop with the phase sub-step handled by PSO or DE."""
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0xA0]))
    transfers = build_transfers(scenario)
    realization = channel_mod.sample_channels(scenario, transfers, rng)
    geom = scenario.sim
    m, layers, atoms = scenario.num_uavs, geom.layers, geom.atoms_per_layer
    phases = PhaseTensor.random(m, layers, atoms, rng)
    positions = scenario.uav_positions().copy()
    trace = SolveTrace()
    assoc = AssociationMatrix(np.zeros((m, scenario.num_users)), "binary")
    prev_cap = _capacity(scenario, transfers, realization, positions, phases, assoc.entries)

    for tau in range(1, tau_max + 1):
        t0 = time.perf_counter()
        h = channel_mod.channels_at(scenario, realization, positions)
        rates = channel_mod.rate_table(phases, transfers, h, scenario.tx_powers(),
                                       scenario.noise_powers())
        assoc = assoc_mod.binarize(assoc_mod.solve_m_auuop(rates), rates)
        cap_assoc = channel_mod.network_capacity(assoc.entries, rates)

        moved = scenario.with_uav_positions(positions)
        new_positions, sca_trace = placement_mod.sca_loop(
            moved, assoc, phases, transfers, realization)
        cand = _capacity(scenario, transfers, realization, new_positions, phases,
                         assoc.entries)
        if cand >= cap_assoc:
            positions = new_positions
        cap_place = _capacity(scenario, transfers, realization, positions, phases,
                              assoc.entries)

        def phase_objective(flat):
            cand_phases = PhaseTensor(flat.reshape(m, layers, atoms))
            return _capacity(scenario, transfers, realization, positions, cand_phases,
                             assoc.entries)

        best_flat, best_fit = _metaheuristic_phase_step(
            phase_objective, m * layers * atoms, rng, kind)
        if best_fit >= cap_place:
            phases = PhaseTensor(best_flat.reshape(m, layers, atoms))
        cap_phase = max(best_fit, cap_place)

        trace.iterations.append(dict(
            tau=tau, cap_assoc=cap_assoc, cap_place=cap_place, cap_phase=cap_phase,
            sca_rounds=len(sca_trace.objectives) - 1,
            wall_ms=(time.perf_counter() - t0) * 1e3))
        if cap_phase - prev_cap <= eps:
            trace.termination = "converged"
            prev_cap = cap_phase
            break
        prev_cap = cap_phase
    else:
        trace.termination = "max_iter"
    return Solution(assoc=assoc, positions=positions, phases=phases,
                    capacity=prev_cap, trace=trace)


def benchmark_pso(scenario: Scenario) -> Solution:
    return benchmark_metaheuristic(scenario, "pso")


def benchmark_de(scenario: Scenario) -> Solution:
    return benchmark_metaheuristic(scenario, "de")


def benchmark_no_sim(scenario: Scenario) -> Solution:
    """Uniform grid deployment with bare single-antenna receivers.

    Per-link channels collapse to scalars sqrt(beta) * z; the association is
    still solved by the same assignment relaxation.
    """
    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0xA0]))
    positions = grid_positions(scenario)
    beta = channel_mod.path_gains(scenario, positions)
    m, k = beta.shape
    z = (rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))) / math.sqrt(2.0)
    gains = beta * np.abs(z) ** 2
    weighted = gains * scenario.tx_powers()[None, :]
    total = weighted.sum(axis=1, keepdims=True)
    sinr = weighted / (total - weighted + scenario.noise_powers()[:, None])
    rates = np.log2(1.0 + sinr)
    assoc = assoc_mod.binarize(assoc_mod.solve_m_auuop(rates), rates)
    cap = channel_mod.network_capacity(assoc.entries, rates)
    geom = scenario.sim
    trace = SolveTrace(iterations=[dict(tau=1, cap_assoc=cap, cap_place=cap,
                                        cap_phase=cap, sca_rounds=0, wall_ms=0.0)],
                       termination="converged")
    return Solution(assoc=assoc, positions=positions,
                    phases=PhaseTensor.zeros(m, geom.layers, geom.atoms_per_layer),
                    capacity=cap, trace=trace)
