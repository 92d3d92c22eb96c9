import math

import numpy as np
import pytest

from uavsim.channel import (
    PhaseTensor,
    SimGeometry,
    atom_index,
    build_transfers,
    cascade_gain,
    channels_at,
    correlation_factor,
    diffraction_coefficient,
    equivalent_response,
    inter_layer_distance,
    intra_layer_spacing,
    link_gains,
    network_capacity,
    path_gains,
    rate_table,
    sample_channels,
    sinr,
    sinr_table,
    spatial_correlation,
    wrap_phase,
)
from uavsim.errors import DegenerateGeometry
from uavsim.scenario import generate_scenario, paper_defaults

LAMBDA = 2.998e8 / 28e9


def geometry(layers=2, atoms=4, wavelength=LAMBDA, thickness_wl=5.0):
    return SimGeometry(layers=layers, atoms_per_layer=atoms,
                       thickness=thickness_wl * wavelength,
                       atom_pitch=wavelength / 2.0,
                       atom_area=(wavelength / 2.0) ** 2)


# ---------------------------------------------------------------------------
# lattice geometry


def test_atom_index_examples():
    assert atom_index(1, 6) == (1, 1)
    assert atom_index(36, 6) == (6, 6)
    assert atom_index(7, 6) == (1, 2)


def test_atom_index_range_check():
    with pytest.raises(ValueError):
        atom_index(37, 6)
    with pytest.raises(ValueError):
        atom_index(0, 6)


def test_intra_layer_spacing_examples():
    g = geometry(atoms=36)
    assert intra_layer_spacing(5, 5, g) == 0.0
    assert intra_layer_spacing(1, 2, g) == pytest.approx(LAMBDA / 2)
    # ids 1 and 8 sit at lattice offset (1, 1) on a 6-wide layer
    assert intra_layer_spacing(1, 8, g) == pytest.approx(LAMBDA / 2 * math.sqrt(2))


def test_inter_layer_distance_examples():
    g = geometry(atoms=36)
    assert inter_layer_distance(3, 3, g) == pytest.approx(g.layer_spacing)
    # facing atoms with 5-layer stack of thickness 5 lambda sit one lambda apart
    g5 = geometry(layers=5, atoms=36, wavelength=0.0107)
    assert g5.layer_spacing == pytest.approx(0.0107)
    assert inter_layer_distance(1, 1, g5) == pytest.approx(0.0107)


def test_sim_geometry_validation():
    with pytest.raises(ValueError):
        geometry(atoms=5)  # not a perfect square
    with pytest.raises(ValueError):
        SimGeometry(layers=0, atoms_per_layer=4, thickness=1.0, atom_pitch=0.1,
                    atom_area=0.01)


def test_wrap_phase():
    assert wrap_phase(2 * math.pi) == 0.0
    assert wrap_phase(-0.1) == pytest.approx(2 * math.pi - 0.1)
    t = PhaseTensor(np.full((1, 1, 4), 7.0))
    assert np.all((t.theta >= 0) & (t.theta < 2 * math.pi))


# ---------------------------------------------------------------------------
# diffraction kernel


def test_diffraction_modulus_identity():
    g = geometry()
    d = 2.3 * LAMBDA
    cos_psi = 0.6
    w = diffraction_coefficient(d, cos_psi, g, LAMBDA)
    expected = (g.atom_area * cos_psi / d) * math.sqrt(
        (1.0 / (2 * math.pi * d)) ** 2 + 1.0 / LAMBDA**2)
    assert abs(w) == pytest.approx(expected, rel=1e-12)


def test_diffraction_full_wavelength_phase():
    # facing atoms exactly one wavelength apart: the propagation exponential
    # completes a full turn
    g = geometry()
    w = diffraction_coefficient(LAMBDA, 1.0, g, LAMBDA)
    phase = np.angle(np.exp(1j * 2 * np.pi * LAMBDA / LAMBDA))
    assert phase == pytest.approx(0.0, abs=1e-12)
    # the residual angle of w comes only from the (1/2 pi d - j/lambda) factor
    expected = np.angle(1.0 / (2 * np.pi * LAMBDA) - 1j / LAMBDA)
    assert np.angle(w) == pytest.approx(expected, rel=1e-9)


def test_diffraction_decays_with_distance():
    g = geometry()
    d = 1.7 * LAMBDA
    assert abs(diffraction_coefficient(2 * d, 0.5, g, LAMBDA)) \
        < abs(diffraction_coefficient(d, 0.5, g, LAMBDA))


def test_diffraction_zero_distance_raises():
    with pytest.raises(DegenerateGeometry):
        diffraction_coefficient(0.0, 1.0, geometry(), LAMBDA)


# ---------------------------------------------------------------------------
# transfer matrices


def scenario_with(layers=2, atoms=4, **overrides):
    cfg = paper_defaults(layers=layers, atoms_per_layer=atoms, **overrides)
    return generate_scenario(cfg, seed=0)


def oracle_layer_matrix(geom, wavelength):
    """Entry-by-entry evaluation through the scalar kernel."""
    n = geom.atoms_per_layer
    out = np.empty((n, n), dtype=complex)
    for dst in range(1, n + 1):
        for src in range(1, n + 1):
            d = inter_layer_distance(dst, src, geom)
            out[dst - 1, src - 1] = diffraction_coefficient(
                d, geom.layer_spacing / d, geom, wavelength)
    return out


def test_build_transfers_matches_scalar_oracle():
    sc = scenario_with(layers=2, atoms=4)
    transfers = build_transfers(sc)
    oracle = oracle_layer_matrix(sc.sim, sc.radio.wavelength)
    assert np.allclose(transfers.inter_layer, oracle, rtol=1e-12, atol=0)


def test_build_transfers_single_layer():
    sc = scenario_with(layers=1, atoms=4)
    transfers = build_transfers(sc)
    assert transfers.inter_layer is None
    assert transfers.output.shape == (4,)
    assert np.all(np.isfinite(transfers.output))


def test_output_vector_symmetry():
    # the antenna sits on the stack axis, so atoms symmetric about the
    # center couple identically
    sc = scenario_with(layers=2, atoms=4)
    out = build_transfers(sc).output
    assert out[0] == pytest.approx(out[1])
    assert out[0] == pytest.approx(out[3])


# ---------------------------------------------------------------------------
# cascaded response


def test_equivalent_response_identity_cases():
    sc = scenario_with(layers=1, atoms=4)
    transfers = build_transfers(sc)
    g = equivalent_response(0, PhaseTensor.zeros(3, 1, 4), transfers)
    assert np.allclose(g, np.eye(4))

    sc2 = scenario_with(layers=2, atoms=4)
    transfers2 = build_transfers(sc2)
    g2 = equivalent_response(0, PhaseTensor.zeros(3, 2, 4), transfers2)
    assert np.allclose(g2, transfers2.inter_layer, rtol=0, atol=1e-15)


def test_equivalent_response_matches_naive_chain():
    rng = np.random.default_rng(1)
    sc = scenario_with(layers=3, atoms=4)
    transfers = build_transfers(sc)
    phases = PhaseTensor.random(3, 3, 4, rng)
    for m in range(3):
        theta = phases.theta[m]
        oracle = np.diag(np.exp(1j * theta[0]))
        for l in (1, 2):
            oracle = np.diag(np.exp(1j * theta[l])) @ transfers.inter_layer @ oracle
        got = equivalent_response(m, phases, transfers)
        assert np.max(np.abs(got - oracle)) <= 1e-12 * np.max(np.abs(oracle))


def test_cascade_gain_matches_matrix_form():
    rng = np.random.default_rng(2)
    sc = scenario_with(layers=3, atoms=9)
    transfers = build_transfers(sc)
    phases = PhaseTensor.random(3, 3, 9, rng)
    h = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    g = equivalent_response(1, phases, transfers)
    oracle = np.conj(transfers.output) @ np.conj(g).T @ h
    assert cascade_gain(1, phases, transfers, h) == pytest.approx(oracle, rel=1e-12)


def test_single_layer_norm_preserved():
    # a unit-modulus diagonal is an isometry
    rng = np.random.default_rng(3)
    sc = scenario_with(layers=1, atoms=4)
    transfers = build_transfers(sc)
    phases = PhaseTensor.random(1, 1, 4, rng)
    x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    g = equivalent_response(0, phases, transfers)
    assert np.linalg.norm(g @ x) == pytest.approx(np.linalg.norm(x), rel=1e-12)


# ---------------------------------------------------------------------------
# spatial correlation and sampling


def test_spatial_correlation_structure():
    g = geometry(atoms=36)
    r = spatial_correlation(g, LAMBDA)
    assert np.allclose(r, r.T)
    assert np.allclose(np.diag(r), 1.0)
    # half-wavelength pitch puts laterally adjacent atoms at a sinc zero
    assert r[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_correlation_factor_reconstruction():
    g = geometry(atoms=36)
    r = spatial_correlation(g, LAMBDA)
    vals = np.linalg.eigvalsh(r)
    assert vals.min() >= -1e-10
    f = correlation_factor(r)
    assert np.max(np.abs(r - f @ f.T)) <= 1e-8


def test_sample_channels_deterministic():
    sc = scenario_with(layers=2, atoms=16)
    transfers = build_transfers(sc)
    a = sample_channels(sc, transfers, np.random.default_rng(11))
    b = sample_channels(sc, transfers, np.random.default_rng(11))
    assert np.array_equal(a.h, b.h)
    assert np.array_equal(a.h_tilde, b.h_tilde)


def test_sample_channels_covariance():
    # many users on a single UAV gives a large batch of whitened vectors
    # per call, enough to pin the empirical covariance down
    cfg = paper_defaults(num_uavs=1, num_users=2000, layers=1, atoms_per_layer=9)
    sc = generate_scenario(cfg, seed=0)
    transfers = build_transfers(sc)
    rng = np.random.default_rng(5)
    draws = [sample_channels(sc, transfers, rng).h_tilde.reshape(-1, 9)
             for _ in range(10)]
    z = np.concatenate(draws)
    emp = (z[:, :, None] * z[:, None, :].conj()).mean(axis=0).real
    r = spatial_correlation(sc.sim, sc.radio.wavelength)
    assert np.max(np.abs(emp - r)) <= 0.05


def test_path_gain_inverse_square():
    sc = scenario_with()
    pos = sc.uav_positions()
    beta1 = path_gains(sc, pos)
    users = sc.user_positions()
    # doubling every link distance scales beta by 1/4
    far = users + 2.0 * (pos[:, None, :] - users[None, :, :])
    beta2 = np.stack([path_gains(sc, far[m][None].mean(axis=0)[None])[0]
                      for m in range(3)])
    # simpler check: move one UAV so its distance to one user doubles
    u = users[0]
    w = pos[0]
    w2 = u + 2.0 * (w - u)
    b1 = path_gains(sc, w[None])[0, 0]
    b2 = path_gains(sc, w2[None])[0, 0]
    assert b2 == pytest.approx(b1 / 4.0, rel=1e-12)


def test_channels_at_rescales_only():
    sc = scenario_with()
    transfers = build_transfers(sc)
    real = sample_channels(sc, transfers, np.random.default_rng(0))
    moved = sc.uav_positions() + np.array([10.0, -5.0, 0.0])
    h2 = channels_at(sc, real, moved)
    ratio = h2 / real.h_tilde
    # per-link scaling is a positive real constant across atoms
    assert np.allclose(ratio.imag, 0.0, atol=1e-15)
    assert np.allclose(ratio, ratio[:, :, :1])


# ---------------------------------------------------------------------------
# SINR / rates / capacity


def naive_sinr(m, k, phases, transfers, h, tx, noise):
    """From-scratch SINR: rebuild every cascade product."""
    gains = []
    for kk in range(h.shape[1]):
        v = h[m, kk]
        theta = phases.theta[m]
        for l in range(transfers.geometry.layers - 1, 0, -1):
            v = transfers.inter_layer.conj().T @ (np.exp(-1j * theta[l]) * v)
        amp = np.conj(transfers.output) @ (np.exp(-1j * theta[0]) * v)
        gains.append(abs(amp) ** 2)
    signal = gains[k] * tx[k]
    interference = sum(gains[kk] * tx[kk] for kk in range(h.shape[1]) if kk != k)
    return signal / (interference + noise)


def test_sinr_matches_oracle():
    rng = np.random.default_rng(9)
    sc = scenario_with(layers=2, atoms=4)
    transfers = build_transfers(sc)
    real = sample_channels(sc, transfers, rng)
    phases = PhaseTensor.random(3, 2, 4, rng)
    tx = sc.tx_powers()
    for m in range(3):
        for k in range(5):
            oracle = naive_sinr(m, k, phases, transfers, real.h, tx,
                                sc.noise_powers()[m])
            got = sinr(m, k, phases, transfers, real.h, tx, sc.noise_powers()[m])
            assert got == pytest.approx(oracle, rel=1e-10)


def test_sinr_single_user_is_snr():
    rng = np.random.default_rng(10)
    sc = generate_scenario(paper_defaults(num_users=2, num_uavs=1, layers=2,
                                          atoms_per_layer=4), seed=0)
    transfers = build_transfers(sc)
    real = sample_channels(sc, transfers, rng)
    phases = PhaseTensor.random(1, 2, 4, rng)
    gains = link_gains(phases, transfers, real.h)
    tx = sc.tx_powers()
    # with the interferer's power sent to zero the SINR is a plain SNR
    tx0 = tx.copy()
    tx0[1] = 1e-300
    got = sinr(0, 0, phases, transfers, real.h, tx0, sc.noise_powers()[0])
    assert got == pytest.approx(gains[0, 0] * tx0[0] / sc.noise_powers()[0], rel=1e-9)


def test_sinr_scale_invariance():
    rng = np.random.default_rng(12)
    sc = scenario_with(layers=2, atoms=4)
    transfers = build_transfers(sc)
    real = sample_channels(sc, transfers, rng)
    phases = PhaseTensor.random(3, 2, 4, rng)
    base = sinr_table(phases, transfers, real.h, sc.tx_powers(), sc.noise_powers())
    scaled = sinr_table(phases, transfers, real.h, 7.0 * sc.tx_powers(),
                        7.0 * sc.noise_powers())
    assert np.allclose(base, scaled, rtol=1e-12)


def test_rate_table_values():
    # log2(1 + 0) = 0 and log2(1 + 1) = 1
    assert math.log2(1 + 0) == 0.0
    rng = np.random.default_rng(13)
    sc = scenario_with(layers=2, atoms=4)
    transfers = build_transfers(sc)
    real = sample_channels(sc, transfers, rng)
    phases = PhaseTensor.random(3, 2, 4, rng)
    s = sinr_table(phases, transfers, real.h, sc.tx_powers(), sc.noise_powers())
    r = rate_table(phases, transfers, real.h, sc.tx_powers(), sc.noise_powers())
    assert np.allclose(r, np.log2(1 + s))


def test_network_capacity_cases():
    rates = np.arange(15.0).reshape(3, 5)
    assert network_capacity(np.zeros((3, 5)), rates) == 0.0
    single = np.zeros((3, 5))
    single[1, 2] = 1.0
    assert network_capacity(single, rates) == rates[1, 2]
    s = np.eye(3, 5)
    oracle = sum(s[m, k] * rates[m, k] for m in range(3) for k in range(5))
    assert network_capacity(s, rates) == pytest.approx(oracle)
