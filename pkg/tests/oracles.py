"""Shared helpers for oracle comparisons in the test suite."""

import math

import numpy as np

from thz_irs.channel import ArrayGeometry, on_grid_realization
from thz_irs.codebooks import (beam_pattern, build_codebook, build_psd, build_td, build_uniform,
                               descendant_matrix, edge_gain, num_stages, psd_edge_gain,
                               uniform_edge_bound)
from thz_irs.training import (MeasurementModel, canonical_delta, exhaustive_direct,
                              exhaustive_reflect, train)


GRID = -1 + (np.arange(10_000) + 0.5) * 2 / 10_000
CASES = [(32, 81), (27, 243)]


def tiling_margin(N_a, N):
    g = ArrayGeometry(N_a)
    gains = beam_pattern(build_codebook("psd", g, N), num_stages(N), GRID)
    return gains.max(axis=1).min() - edge_gain(N_a, N)


def uniform_margin(N_a, N):
    cb = build_uniform(ArrayGeometry(N_a), N)
    gains = beam_pattern(cb, cb.num_stages, GRID)
    cells = np.floor((np.arcsin(GRID) + np.pi / 2) * N / np.pi).astype(int)
    own = gains[np.arange(GRID.size), np.clip(cells, 0, N - 1)]
    return own.min() - uniform_edge_bound(N_a, N)


def psd_pattern(cb, s):
    """Stage-s pattern normalized to the active sub-array (the reference for rho(s))."""
    N_a = cb.geometry.num_elements
    return beam_pattern(cb, s, GRID) * math.sqrt(N_a / min(3 ** s, N_a))


def psd_child_mismatch(N_a, N):
    """Largest count of grid points on which parent and child coverage sets differ."""
    cb = build_psd(ArrayGeometry(N_a), N)
    worst = 0
    for s in range(1, cb.num_stages):
        parent = psd_pattern(cb, s) >= psd_edge_gain(N_a, s, N) - 1e-12
        child = psd_pattern(cb, s + 1) >= psd_edge_gain(N_a, s + 1, N) - 1e-12
        union = child.reshape(GRID.size, -1, 3).any(axis=2)
        worst = max(worst, int((parent != union).sum(axis=0).max()))
    return worst


def td_separation_margin(N_a, N, **kw):
    cb = build_td(ArrayGeometry(N_a), N, **kw)
    leaves = cb.stage(cb.num_stages)
    worst = np.inf
    for s in range(1, cb.num_stages):
        G = np.abs(leaves.conj().T @ cb.stage(s))
        D = descendant_matrix(N, s).astype(bool)
        for n in range(G.shape[1]):
            worst = min(worst, G[D[:, n], n].min() - G[~D[:, n], n].max())
    return worst


def omp_pattern_deviation(num_rf, N_a=32, N=81, s=2):
    geom = ArrayGeometry(N_a)
    full = beam_pattern(build_td(geom, N), s, GRID)
    fit = beam_pattern(build_td(geom, N, num_rf=num_rf), s, GRID)
    return (np.abs(full - fit) / full.max(axis=0)).max()


def oracle_case(seed: int, kind: str, N: int = 9, N_a: int = 8, num_irs: int = 2):
    """Train noiselessly on an on-grid scenario and compare with the exhaustive oracles.

    Returns (agrees, details) where details holds the three answers.
    """
    g = ArrayGeometry(N_a)
    real = on_grid_realization(g, g, g, N, num_irs, np.random.default_rng(seed))
    cb = build_codebook(kind, g, N)
    model = MeasurementModel(real, 1.0, 0.0)
    out = train(model, cb)
    leaves = cb.stage(cb.num_stages)
    direct, _ = exhaustive_direct(model, leaves, leaves)
    reflect, _ = exhaustive_reflect(model, leaves, leaves)
    truth_direct = (int(cb.covering_leaf(real.direct_path.aod)),
                    int(cb.covering_leaf(real.direct_path.aoa)))
    truth = [(int(cb.covering_leaf(real.inbound_paths[m].aod)),
              int(cb.covering_leaf(real.outbound_paths[m].aoa)),
              canonical_delta(real.true_delta(m), N, real.spacing)) for m in range(num_irs)]
    trained = [(b[0], b[1], d) for b, d in zip(out.reflect_beams, out.delta)]
    agrees = (tuple(out.direct_beams) == direct and trained == reflect)
    return agrees, {"trained": (tuple(out.direct_beams), trained),
                    "exhaustive": (direct, reflect),
                    "truth": (truth_direct, truth)}


def simplex_grid_max(gains, P: float, noise_power: float, points: int = 1_000_000) -> float:
    """Brute-force maximum of sum log2(1 + P g_i^2 S_i / sigma^2) over a 3-path simplex grid.

    The grid uses step 1/m with m chosen so that the (m+1)(m+2)/2 grid points
    number about ``points``.
    """
    g = np.asarray(gains, dtype=float)
    m = int(round((np.sqrt(8 * points + 1) - 3) / 2))
    best = -np.inf
    i = np.arange(m + 1)
    for a in range(m + 1):
        b = i[: m + 1 - a]
        S = np.stack([np.full(b.size, a), b, m - a - b]) / m
        val = np.log2(1 + P * g[:, None] ** 2 * S / noise_power).sum(axis=0)
        best = max(best, float(val.max()))
    return best


def random_bd_instance(seed: int, K: int = 3, paths: int = 3, N_a: int = 64, N_u: int = 16):
    """Random multi-user estimates for BD checks: angles uniform in angle, losses log-uniform."""
    from thz_irs.beamforming import UserEstimate
    rng = np.random.default_rng(seed)
    ests = []
    for _ in range(K):
        bs = tuple(rng.uniform(-np.pi / 2, np.pi / 2, paths))
        ue = tuple(rng.uniform(-np.pi / 2, np.pi / 2, paths))
        loss = tuple(10 ** rng.uniform(-7, -4, paths))
        ests.append(UserEstimate(bs, ue, loss, (None,) * (paths - 1), (None,) + tuple(range(paths - 1))))
    return ests, ArrayGeometry(N_a), ArrayGeometry(N_u)


def bd_residual(seed: int, P: float = 1.0, noise_power: float = 10 ** -11.5) -> float:
    """Largest relative inter-user leakage of BD on the estimated effective channels."""
    from thz_irs.beamforming import analog_stages, bd_digital, effective_channel
    ests, bs, ue = random_bd_instance(seed)
    F_RF, W_list, blocks = analog_stages(ests, bs, ue)
    H = [effective_channel(k, ests, F_RF, W_list, blocks, 1.0) for k in range(len(ests))]
    res = bd_digital(H, P, noise_power, F_RF)
    worst = 0.0
    for k in range(len(H)):
        Fk = res.F_B[:, blocks[k]]
        if np.linalg.norm(Fk) == 0:
            continue
        for i, Hi in enumerate(H):
            if i != k:
                leak = np.linalg.norm(Hi @ Fk) / (np.linalg.norm(Hi) * np.linalg.norm(Fk))
                worst = max(worst, leak)
    return worst
