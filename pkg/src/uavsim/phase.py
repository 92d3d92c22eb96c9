"""Phase-tensor optimization: analytic layer-by-layer alignment plus the
strategy switch that hands complex scenarios to a trained generator.

The layer-by-layer solver maximizes the served link's cascaded gain
|w1^H G^H h| only; interference stays in the SINR when rates are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import PhaseTensor, TransferSet, wrap_phase


@dataclass
class PartialProducts:
    """Left/right factorization of the cascaded gain around one layer.

    front[n] collects everything from the antenna through layer l's input;
    back[n] everything from layer l's output through the user channel, so
    that sum(front * exp(-j theta_l) * back) reproduces w1^H G^H h exactly.
    """

    front: np.ndarray  # (N,) complex, the row F^{lH}
    back: np.ndarray   # (N,) complex, the column L^{lH}


def partial_products(m: int, layer: int, phases: PhaseTensor, transfers: TransferSet,
                     h_served: np.ndarray) -> PartialProducts:
    """Factor the served-link gain around `layer` (1-based) for UAV m.

    Computed naively with one matrix-vector chain per side; the per-call
    cost is linear in the layer count by design.
    """
    theta = phases.theta[m]
    layers = transfers.geometry.layers
    if not 1 <= layer <= layers:
        raise ValueError(f"layer {layer} out of range 1..{layers}")
    w = transfers.inter_layer

    front = transfers.output.conj()
    for l in range(1, layer):
        front = (front * np.exp(-1j * theta[l - 1])) @ w.conj().T
    back = h_served
    for l in range(layers, layer, -1):
        back = w.conj().T @ (np.exp(-1j * theta[l - 1]) * back)
    return PartialProducts(front=front, back=back)


def gain_from_products(products: PartialProducts, theta_layer: np.ndarray) -> complex:
    return complex(np.sum(products.front * np.exp(-1j * theta_layer) * products.back))


def align_layer(products: PartialProducts) -> np.ndarray:
    """Phases that co-phase every term of the factorized gain.

    The aligned gain magnitude is sum(|front| * |back|), the maximum any
    unit-modulus diagonal can reach.
    """
    return wrap_phase(np.angle(products.front) + np.angle(products.back))


def lbl_ipso(phases_init: PhaseTensor, transfers: TransferSet, assoc_entries: np.ndarray,
             h: np.ndarray, sweeps: int = 200) -> PhaseTensor:
    """Layer-by-layer alignment sweeps for every associated UAV.

    UAVs without a served user get zero phases (their stack carries no
    assigned traffic, so the setting is arbitrary; zero is the fixed
    convention).  The served-link gain is non-decreasing across every layer
    update, so the result is a coordinate-wise stationary point of the gain
    objective.
    """
    phases = phases_init.copy()
    layers = transfers.geometry.layers
    for m in range(phases.num_uavs):
        row = assoc_entries[m]
        if row.max() <= 0.0:
            phases.theta[m] = 0.0
            continue
        k = int(np.argmax(row))
        for _ in range(sweeps):
            for layer in range(1, layers + 1):
                products = partial_products(m, layer, phases, transfers, h[m, k])
                phases.theta[m, layer - 1] = align_layer(products)
    return phases


def lbl_cost(num_uavs: int, layers: int, atoms: int, sweeps: int) -> float:
    """Predicted floating-point cost of the layer-by-layer solver."""
    return 4.0 * atoms**2 * num_uavs * layers**2 * sweeps


def hgpso_select(num_uavs: int, layers: int, atoms: int, sweeps: int,
                 budget: float, model_available: bool) -> str:
    """Pick 'lbl' or 'cvae' by comparing predicted cost against the budget.

    Falls back to the analytic solver whenever no trained generator exists
    for the geometry.
    """
    if lbl_cost(num_uavs, layers, atoms, sweeps) <= budget:
        return "lbl"
    return "cvae" if model_available else "lbl"
