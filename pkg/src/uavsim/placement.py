"""Horizontal UAV placement by successive convex approximation.

Each round linearizes the rate expression around the current positions and
maximizes the concave surrogate with projected gradient ascent.  The
feasible set is the intersection of per-UAV battery travel disks and
pairwise linearized separation halfspaces; projections alternate over both
families.  Altitude stays frozen, so the variables are the (x, y) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import energy as energy_model
from .channel import MIN_LINK_DISTANCE, link_gains
from .errors import SolverFailure

LOG2E = math.log2(math.e)
_ALPHA_FLOOR = 1e-6


@dataclass
class SurrogateProblem:
    """Linearized placement problem anchored at one SCA iterate.

    a_coeff (M, K): sensitivities of the total-power log term to squared
    link distances; b_coeff (M,): its value at the anchor.  gains holds the
    fixed whitened channel magnitudes |w1^H G^H h_tilde|^2, which do not
    depend on the UAV positions.
    """

    anchor: np.ndarray        # (M, 2) xy at the expansion point
    users_xy: np.ndarray      # (K, 2)
    altitude: float
    a_coeff: np.ndarray       # (M, K), >= 0
    b_coeff: np.ndarray       # (M,)
    gains: np.ndarray         # (M, K)
    served: np.ndarray        # (M,) served user index, -1 when unassigned
    tx_powers: np.ndarray     # (K,)
    noise_powers: np.ndarray  # (M,)
    rho0: float


def squared_distances(positions_xy: np.ndarray, users_xy: np.ndarray, altitude: float) -> np.ndarray:
    """(M, K) squared 3D link distances, clamped at the 1 m reference."""
    diff = positions_xy[:, None, :] - users_xy[None, :, :]
    d2 = np.sum(diff**2, axis=-1) + altitude**2
    return np.maximum(d2, MIN_LINK_DISTANCE**2)


def whitened_gains(phases, transfers, h_tilde: np.ndarray) -> np.ndarray:
    """Position-independent link magnitudes computed from whitened channels."""
    return link_gains(phases, transfers, h_tilde)


def true_objective(positions_xy: np.ndarray, surrogate: SurrogateProblem) -> float:
    """Exact assigned-link sum rate at the given positions (bits/s/Hz)."""
    d2 = squared_distances(positions_xy, surrogate.users_xy, surrogate.altitude)
    power_terms = surrogate.rho0 * surrogate.tx_powers[None, :] * surrogate.gains / d2
    total = 0.0
    for m, k in enumerate(surrogate.served):
        if k < 0:
            continue
        interference = power_terms[m].sum() - power_terms[m, k]
        total += math.log2(1.0 + power_terms[m, k] / (interference + surrogate.noise_powers[m]))
    return total


def taylor_coefficients(anchor_xy: np.ndarray, users_xy: np.ndarray, altitude: float,
                        gains: np.ndarray, tx_powers: np.ndarray, noise_powers: np.ndarray,
                        rho0: float) -> tuple[np.ndarray, np.ndarray]:
    """First-order expansion of the total-received-power log term.

    Returns (A, B): A[m, k] is the (nonnegative) slope against the squared
    distance to user k, B[m] the term's value at the anchor.
    """
    d2 = squared_distances(anchor_xy, users_xy, altitude)
    power_terms = rho0 * tx_powers[None, :] * gains / d2
    denom = power_terms.sum(axis=1) + noise_powers
    a = power_terms / d2 * LOG2E / denom[:, None]
    b = np.log2(denom)
    return a, b


def build_surrogate(anchor_xy, users_xy, altitude, gains, served, tx_powers,
                    noise_powers, rho0) -> SurrogateProblem:
    a, b = taylor_coefficients(anchor_xy, users_xy, altitude, gains, tx_powers,
                               noise_powers, rho0)
    return SurrogateProblem(
        anchor=np.asarray(anchor_xy, dtype=float).copy(), users_xy=np.asarray(users_xy, dtype=float),
        altitude=altitude, a_coeff=a, b_coeff=b, gains=gains, served=np.asarray(served),
        tx_powers=tx_powers, noise_powers=noise_powers, rho0=rho0)


def alpha_caps(positions_xy: np.ndarray, surrogate: SurrogateProblem) -> np.ndarray:
    """(M, K) linearized upper bounds on the squared-distance relaxation vars."""
    anchor = surrogate.anchor
    d2_anchor = squared_distances(anchor, surrogate.users_xy, surrogate.altitude)
    step = positions_xy - anchor  # (M, 2)
    lin = 2.0 * np.einsum("mkx,mx->mk", anchor[:, None, :] - surrogate.users_xy[None, :, :], step)
    return np.maximum(d2_anchor + lin, _ALPHA_FLOOR)


def surrogate_objective(positions_xy: np.ndarray, alpha: np.ndarray,
                        surrogate: SurrogateProblem) -> float:
    """Concave minorant of the assigned-link sum rate."""
    anchor = surrogate.anchor
    diff_new = squared_distances(positions_xy, surrogate.users_xy, surrogate.altitude)
    diff_old = squared_distances(anchor, surrogate.users_xy, surrogate.altitude)
    linear = -np.sum(surrogate.a_coeff * (diff_new - diff_old), axis=1) + surrogate.b_coeff
    coeff = surrogate.rho0 * surrogate.tx_powers[None, :] * surrogate.gains
    total = 0.0
    for m, k in enumerate(surrogate.served):
        if k < 0:
            continue
        interference = sum(coeff[m, kk] / alpha[m, kk] for kk in range(coeff.shape[1]) if kk != k)
        total += linear[m] - math.log2(interference + surrogate.noise_powers[m])
    return total


def _surrogate_value_and_grad(positions_xy: np.ndarray, surrogate: SurrogateProblem):
    """Objective with alpha at its linearized cap, plus its xy gradient."""
    alpha = alpha_caps(positions_xy, surrogate)
    anchor = surrogate.anchor
    coeff = surrogate.rho0 * surrogate.tx_powers[None, :] * surrogate.gains
    value = surrogate_objective(positions_xy, alpha, surrogate)
    grad = np.zeros_like(positions_xy)
    d2_anchor = squared_distances(anchor, surrogate.users_xy, surrogate.altitude)
    for m, k in enumerate(surrogate.served):
        if k < 0:
            continue
        diff = positions_xy[m][None, :] - surrogate.users_xy  # (K, 2)
        grad[m] -= 2.0 * surrogate.a_coeff[m] @ diff
        ratios = coeff[m] / alpha[m]
        interference = ratios.sum() - ratios[k]
        denom = interference + surrogate.noise_powers[m]
        # d(-log2(sum c/alpha)) / d w  via  d alpha / d w = 2 (anchor - u)
        active = alpha[m] > _ALPHA_FLOOR
        danger = coeff[m] / alpha[m] ** 2
        danger[k] = 0.0
        danger[~active] = 0.0
        grad[m] += LOG2E / denom * 2.0 * (danger @ (anchor[m][None, :] - surrogate.users_xy))
    return value, grad


@dataclass
class FeasibleSet:
    """Travel disks around the initial positions plus linearized separation."""

    centers: np.ndarray      # (M, 2) initial xy
    radius: float            # battery travel radius
    halfspace_normals: list  # [(i, j, normal, offset)]: normal . (w_i - w_j) >= offset

    @staticmethod
    def build(anchor_xy: np.ndarray, initial_xy: np.ndarray, d_min: float,
              params: energy_model.EnergyParams) -> "FeasibleSet":
        m = anchor_xy.shape[0]
        halfspaces = []
        for i in range(m):
            for j in range(i + 1, m):
                delta = anchor_xy[i] - anchor_xy[j]
                offset = d_min**2 + float(delta @ delta)
                halfspaces.append((i, j, 2.0 * delta, offset))
        return FeasibleSet(centers=initial_xy.copy(),
                           radius=energy_model.max_travel_radius(params),
                           halfspace_normals=halfspaces)

    def project(self, positions_xy: np.ndarray, sweeps: int = 50, tol: float = 1e-8) -> np.ndarray:
        pos = positions_xy.copy()
        for _ in range(sweeps):
            moved = 0.0
            for m in range(pos.shape[0]):
                delta = pos[m] - self.centers[m]
                dist = float(np.linalg.norm(delta))
                if dist > self.radius:
                    target = self.centers[m] + (delta * (self.radius / dist) if dist > 0 else 0.0)
                    moved = max(moved, float(np.linalg.norm(pos[m] - target)))
                    pos[m] = target
            for i, j, normal, offset in self.halfspace_normals:
                slack = float(normal @ (pos[i] - pos[j])) - offset
                if slack < 0.0:
                    shift = -slack / (2.0 * float(normal @ normal)) * normal
                    pos[i] += shift
                    pos[j] -= shift
                    moved = max(moved, float(np.linalg.norm(shift)))
            if moved <= tol:
                break
        return pos

    def contains(self, positions_xy: np.ndarray, tol: float = 1e-6) -> bool:
        for m in range(positions_xy.shape[0]):
            if np.linalg.norm(positions_xy[m] - self.centers[m]) > self.radius + tol:
                return False
        for i, j, normal, offset in self.halfspace_normals:
            if float(normal @ (positions_xy[i] - positions_xy[j])) < offset - tol:
                return False
        return True


def solve_m_ulop(surrogate: SurrogateProblem, feasible: FeasibleSet,
                 max_iters: int = 500, grad_tol: float = 1e-6):
    """Maximize the surrogate over the feasible set by projected gradient
    ascent with backtracking; returns (positions, alpha).

    Never returns a point worse than the anchor; raises SolverFailure on
    non-finite arithmetic.
    """
    pos = surrogate.anchor.copy()
    value, grad = _surrogate_value_and_grad(pos, surrogate)
    if not np.isfinite(value):
        raise SolverFailure("surrogate objective non-finite at the anchor")
    step = 1.0 / max(float(np.max(np.abs(grad))), 1e-12)
    for _ in range(max_iters):
        improved = False
        for _ in range(40):
            candidate = feasible.project(pos + step * grad)
            cand_value, cand_grad = _surrogate_value_and_grad(candidate, surrogate)
            if np.isfinite(cand_value) and cand_value > value:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        projected_move = np.linalg.norm(candidate - pos) / max(step, 1e-300)
        pos, value, grad = candidate, cand_value, cand_grad
        step *= 2.0
        if projected_move <= grad_tol:
            break
    alpha = alpha_caps(pos, surrogate)
    return pos, alpha


@dataclass
class ScaTrace:
    """Per-round exact objective values plus failure flag."""

    objectives: list = field(default_factory=list)
    failed: bool = False


def sca_loop(scenario, assoc, phases, transfers, realization, max_rounds: int = 30,
             improve_tol: float = 1e-6) -> tuple[np.ndarray, ScaTrace]:
    """Iterate surrogate builds and solves until the exact objective stalls.

    Returns the final (M, 3) positions and the round-by-round trace; the
    exact objective is evaluated every round and a candidate is kept only
    when it improves, so the trace is non-decreasing.
    """
    users_xy = scenario.user_positions()[:, :2]
    positions = scenario.uav_positions()
    anchor_xy = positions[:, :2].copy()
    initial_xy = scenario.initial_positions()[:, :2]
    gains = whitened_gains(phases, transfers, realization.h_tilde)
    served = np.array([int(np.argmax(row)) if row.max() > 0 else -1 for row in assoc.entries])
    tx = scenario.tx_powers()
    noise = scenario.noise_powers()
    rho0 = scenario.radio.reference_gain

    trace = ScaTrace()
    surrogate = build_surrogate(anchor_xy, users_xy, scenario.altitude, gains, served,
                                tx, noise, rho0)
    current = true_objective(anchor_xy, surrogate)
    trace.objectives.append(current)
    for _ in range(max_rounds):
        surrogate = build_surrogate(anchor_xy, users_xy, scenario.altitude, gains, served,
                                    tx, noise, rho0)
        feasible = FeasibleSet.build(anchor_xy, initial_xy, scenario.d_min, scenario.energy)
        try:
            candidate_xy, _ = solve_m_ulop(surrogate, feasible)
        except SolverFailure:
            trace.failed = True
            break
        cand_value = true_objective(candidate_xy, surrogate)
        if cand_value > current:
            anchor_xy = candidate_xy
        improvement = cand_value - current
        current = max(current, cand_value)
        trace.objectives.append(current)
        if improvement <= improve_tol:
            break
    final = np.column_stack([anchor_xy, np.full(anchor_xy.shape[0], scenario.altitude)])
    return final, trace
