"""UAV-to-user assignment: relaxed linear program, binarization with
deterministic tie-breaking, and an exhaustive oracle for verification.

The relaxed problem's constraint matrix is totally unimodular, so an
integral optimum always exists; we solve it with the rectangular Hungarian
routine, which returns exactly such a vertex.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import SizeLimit
from .scenario import AssociationMatrix, validate_association


def solve_m_auuop(rates: np.ndarray) -> AssociationMatrix:
    """Maximize sum(S * rates) over doubly-substochastic S in [0,1]^{M x K}.

    Returns a vertex solution (entries in {0,1}); with nonnegative rates the
    relaxation's optimum is attained at a full matching of the smaller side.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 2:
        raise ValueError("rates must be an M x K matrix")
    if not np.all(np.isfinite(rates)) or np.any(rates < 0):
        raise ValueError("rates must be finite and nonnegative")
    rows, cols = linear_sum_assignment(rates, maximize=True)
    entries = np.zeros_like(rates)
    entries[rows, cols] = 1.0
    return AssociationMatrix(entries=entries, mode="continuous")


def binarize(s_cont: AssociationMatrix, rates: np.ndarray) -> AssociationMatrix:
    """Round a relaxed association to a feasible binary one.

    Per UAV keep the user with the largest service share (ties to the lowest
    user index); conflicting claims on a user are resolved in favor of the
    UAV with the larger rate (ties to the lowest UAV index), the losers stay
    unassigned.
    """
    e = s_cont.entries
    rates = np.asarray(rates, dtype=float)
    m, k = e.shape
    winner = np.argmax(e, axis=1)  # argmax takes the lowest index on ties
    out = np.zeros_like(e)
    for user in range(k):
        claimants = [uav for uav in range(m) if winner[uav] == user and e[uav, user] > 0.0]
        if not claimants:
            continue
        best = max(claimants, key=lambda uav: (rates[uav, user], -uav))
        out[best, user] = 1.0
    return AssociationMatrix(entries=out, mode="binary")


_BRUTE_FORCE_LIMIT = (4, 8)


def brute_force_assignment(rates: np.ndarray) -> tuple[AssociationMatrix, float]:
    """Exhaustive maximum over injective partial assignments; small M, K only."""
    rates = np.asarray(rates, dtype=float)
    m, k = rates.shape
    if m > _BRUTE_FORCE_LIMIT[0] or k > _BRUTE_FORCE_LIMIT[1]:
        raise SizeLimit(f"instance {m}x{k} exceeds the brute-force limit {_BRUTE_FORCE_LIMIT}")
    best_obj = 0.0
    best_entries = np.zeros_like(rates)
    options = list(range(k)) + [None] * m  # None: UAV stays unassigned
    for choice in itertools.permutations(options, m):
        used = [c for c in choice if c is not None]
        if len(set(used)) != len(used):
            continue
        obj = sum(rates[i, c] for i, c in enumerate(choice) if c is not None)
        if obj > best_obj:
            best_obj = obj
            best_entries = np.zeros_like(rates)
            for i, c in enumerate(choice):
                if c is not None:
                    best_entries[i, c] = 1.0
    result = AssociationMatrix(entries=best_entries, mode="binary")
    assert validate_association(result)
    return result, float(best_obj)


def assignment_objective(s: AssociationMatrix, rates: np.ndarray) -> float:
    return float(np.sum(s.entries * np.asarray(rates)))


def served_user(s: AssociationMatrix, m: int) -> int | None:
    """Index of the user served by UAV m, or None when unassigned."""
    row = s.entries[m]
    idx = int(np.argmax(row))
    return idx if row[idx] > 0.0 else None
