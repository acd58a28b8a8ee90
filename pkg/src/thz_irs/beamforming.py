"""Hybrid beamforming from training estimates, plus fully digital baselines.

Analog stages are ARVs steered at the estimated path angles; the digital
stage is either diagonal power allocation (DPA) or block diagonalization
(BD). Rates are always evaluated on the true channel assembled with the
IRS phases chosen from the estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, ChannelRealization, IrsPhaseConfig, arv, assemble_channel
from .codebooks import HierarchicalCodebook
from .training import TrainingOutcome, theta_ref

RANK_TOL = 1e-10


class BeamformingError(ValueError):
    pass


@dataclass(frozen=True)
class UserEstimate:
    """Per-user path estimates, direct path first then each kept cascade.

    ``deltas`` has one entry per IRS of the user (None when unestimated);
    ``irs_of_path[i]`` is the IRS index of path ``i`` (None for direct).
    """

    bs_angles: tuple[float, ...]
    user_angles: tuple[float, ...]
    losses: tuple[float, ...]
    deltas: tuple[float | None, ...]
    irs_of_path: tuple[int | None, ...] = ()

    @property
    def num_paths(self) -> int:
        return len(self.losses)


def estimate_from_truth(real: ChannelRealization) -> UserEstimate:
    """Perfect CSI: exact continuous angles, losses and offsets."""
    bs = [real.direct_path.aod]
    ue = [real.direct_path.aoa]
    loss = [real.direct_path.loss]
    for m in range(real.num_irs):
        bs.append(real.inbound_paths[m].aod)
        ue.append(real.outbound_paths[m].aoa)
        loss.append(real.cascade_loss(m))
    return UserEstimate(tuple(bs), tuple(ue), tuple(loss),
                        tuple(real.true_delta(m) for m in range(real.num_irs)),
                        (None,) + tuple(range(real.num_irs)))


def estimate_from_outcome(outcome: TrainingOutcome, bs_cb: HierarchicalCodebook,
                          ue_cb: HierarchicalCodebook | None = None) -> UserEstimate:
    """Map leaf indices to grid angles; unestimated cascades are dropped."""
    ue_cb = ue_cb or bs_cb
    bs_sines, ue_sines = bs_cb.leaf_sines, ue_cb.leaf_sines
    p, q = outcome.direct_beams
    bs = [math.asin(bs_sines[p - 1])]
    ue = [math.asin(ue_sines[q - 1])]
    loss = [outcome.est_loss[0]]
    owner: list[int | None] = [None]
    for m, beams in enumerate(outcome.reflect_beams):
        if beams is None or outcome.delta[m] is None:
            continue
        bs.append(math.asin(bs_sines[beams[0] - 1]))
        ue.append(math.asin(ue_sines[beams[1] - 1]))
        loss.append(outcome.est_loss[1 + m])
        owner.append(m)
    return UserEstimate(tuple(bs), tuple(ue), tuple(loss), tuple(outcome.delta), tuple(owner))


def irs_design(deltas, real: ChannelRealization) -> list[IrsPhaseConfig]:
    """Reflecting phases per IRS; unestimated IRSs are switched off."""
    out = []
    for m, d in enumerate(deltas):
        n_r = real.irs_size(m)
        if d is None:
            out.append(IrsPhaseConfig.off(n_r))
        else:
            out.append(theta_ref(float(np.clip(d, -2, 2)), n_r, real.beta, real.spacing))
    return out


def analog_stages(estimates, bs_geom: ArrayGeometry, ue_geoms):
    """BS precoder and per-user combiners built from ARVs.

    Columns of F_RF are ordered user-major, direct path first. Returns
    ``(F_RF, W_list, blocks)`` where ``blocks[k]`` is the column slice of
    user ``k`` in F_RF.
    """
    if isinstance(ue_geoms, ArrayGeometry):
        ue_geoms = [ue_geoms] * len(estimates)
    cols, W_list, blocks, start = [], [], [], 0
    for k, est in enumerate(estimates):
        if est.num_paths == 0:
            raise BeamformingError(f"user {k} has no estimated paths")
        cols.append(arv(bs_geom, np.asarray(est.bs_angles)))
        W_list.append(arv(ue_geoms[k], np.asarray(est.user_angles)))
        blocks.append(slice(start, start + est.num_paths))
        start += est.num_paths
    return np.hstack(cols), W_list, blocks


def water_fill(gains, P: float, noise_power: float, budget: float = 1.0,
               tol: float = 1e-14) -> np.ndarray:
    """Maximize sum log2(1 + P g_i^2 S_i / sigma^2) subject to sum S_i = budget.

    The water level is located by bisection; the active set found that way
    then fixes the level exactly.
    """
    g = np.abs(np.asarray(gains, dtype=float))
    if g.size == 0 or not np.any(g > 0):
        raise BeamformingError("water filling needs at least one positive gain")
    if P <= 0 or noise_power == 0:
        if noise_power == 0 and P > 0:
            S = np.where(g > 0, 1.0, 0.0)
            return budget * S / S.sum()
        S = np.zeros_like(g)
        S[np.argmax(g)] = budget
        return S
    with np.errstate(divide="ignore"):
        floor = np.where(g > 0, noise_power / (P * g ** 2), np.inf)
    lo = floor.min()
    hi = lo + budget
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(mid - floor, 0).sum() > budget:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    active = floor < hi
    level = (budget + floor[active].sum()) / active.sum()
    return np.where(active, np.maximum(level - floor, 0.0), 0.0)


def water_fill_objective(gains, S, P: float, noise_power: float) -> float:
    g = np.asarray(gains, dtype=float)
    return float(np.sum(np.log2(1 + P * g ** 2 * np.asarray(S) / noise_power)))


def dpa_digital(gains, P: float, noise_power: float):
    """Diagonal digital precoder with water-filled powers; identity combiner."""
    S = water_fill(gains, P, noise_power)
    return np.diag(np.sqrt(S)), np.eye(len(S))


def effective_channel(k: int, estimates, F_RF: np.ndarray, W_list, blocks,
                      gain: float) -> np.ndarray:
    """D_k x N_s estimated channel seen through user k's combiner."""
    W = W_list[k]
    Hk = gain * W @ np.diag(estimates[k].losses) @ F_RF[:, blocks[k]].conj().T
    return W.conj().T @ Hk @ F_RF


@dataclass
class BDResult:
    F_B: np.ndarray
    W_B: list
    sigmas: np.ndarray
    powers: np.ndarray
    scale: float = 1.0
    null_dims: list = field(default_factory=list)


def bd_digital(H_effs, P: float, noise_power: float, F_RF: np.ndarray | None = None) -> BDResult:
    """Block diagonalization over effective channels (each D_k x N_s).

    With ``F_RF`` given, F_B is rescaled so that ||F_RF F_B||_F = 1.
    """
    N_s = H_effs[0].shape[1]
    D = [H.shape[0] for H in H_effs]
    bases, Us, Vs, sig = [], [], [], []
    for k, Hk in enumerate(H_effs):
        others = [H for i, H in enumerate(H_effs) if i != k]
        if others:
            Hbar = np.vstack(others)
            _, s, Vh = np.linalg.svd(Hbar)
            rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
            V0 = Vh[rank:].conj().T
        else:
            V0 = np.eye(N_s, dtype=complex)
        if V0.shape[1] < D[k]:
            raise BeamformingError(
                f"user {k}: null space has dimension {V0.shape[1]} < {D[k]} streams")
        U, s, Vh = np.linalg.svd(Hk @ V0)
        d = min(D[k], s.size)
        bases.append(V0)
        Us.append(U[:, :D[k]])
        Vs.append(Vh[:d].conj().T)
        sig.append(np.concatenate([s[:d], np.zeros(D[k] - d)]))
    sigmas = np.concatenate(sig)
    S = water_fill(sigmas, P, noise_power) if np.any(sigmas > 0) else np.zeros_like(sigmas)
    F_B = np.zeros((N_s, sum(D)), dtype=complex)
    start = 0
    for k in range(len(H_effs)):
        d = Vs[k].shape[1]
        cols = bases[k] @ Vs[k] @ np.diag(np.sqrt(S[start:start + d]))
        F_B[:, start:start + d] = cols
        start += D[k]
    scale = 1.0
    if F_RF is not None:
        norm = np.linalg.norm(F_RF @ F_B)
        if norm > 0:
            scale = 1.0 / norm
            F_B = F_B * scale
    return BDResult(F_B, Us, sigmas, S, scale, [b.shape[1] for b in bases])


def user_rate(H: np.ndarray, F_k: np.ndarray, W: np.ndarray, F_others: np.ndarray | None,
              P: float, noise_power: float) -> float:
    """log2 det(I + P C^{-1} W^H H F_k F_k^H H^H W), C = interference + noise."""
    if P == 0 or F_k.shape[1] == 0:
        return 0.0
    U, s, _ = np.linalg.svd(W, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    if rank < W.shape[1]:
        # duplicate combining beams: W^H y carries the same information as Q^H y
        W = U[:, :rank]
    A = W.conj().T @ H
    C = noise_power * (W.conj().T @ W)
    if F_others is not None and F_others.shape[1]:
        B = A @ F_others
        C = C + P * (B @ B.conj().T)
    G = A @ F_k
    M = np.eye(W.shape[1]) + P * np.linalg.solve(C, G @ G.conj().T)
    sign, logdet = np.linalg.slogdet(M)
    if sign == 0 or not np.isfinite(logdet):
        raise np.linalg.LinAlgError("singular interference-plus-noise covariance")
    return max(float(logdet / math.log(2)), 0.0)


@dataclass
class RateReport:
    per_user: list
    interference_residual: list

    @property
    def sum(self) -> float:
        return float(np.sum(self.per_user))


@dataclass
class HybridConfig:
    F_RF: np.ndarray
    F_B: np.ndarray
    W_RF: list
    W_B: list
    irs: list
    blocks: list
    scale: float = 1.0

    @property
    def precoder(self) -> np.ndarray:
        return self.F_RF @ self.F_B

    def power_ok(self, tol: float = 1e-9) -> bool:
        return abs(np.linalg.norm(self.precoder) - 1) <= tol


def evaluate(config: HybridConfig, reals, P: float, noise_power: float) -> RateReport:
    """Rates of every user on the true channels under ``config``."""
    F = config.precoder
    rates, resid = [], []
    for k, real in enumerate(reals):
        H = assemble_channel(real, config.irs[k])
        cols = np.zeros(F.shape[1], dtype=bool)
        cols[config.blocks[k]] = True
        W = config.W_RF[k] @ config.W_B[k]
        Fk, Fo = F[:, cols], F[:, ~cols]
        rates.append(user_rate(H, Fk, W, Fo, P, noise_power))
        own = np.linalg.norm(W.conj().T @ H @ Fk)
        leak = np.linalg.norm(W.conj().T @ H @ Fo) if Fo.shape[1] else 0.0
        resid.append(float(leak / own) if own > 0 else 0.0)
    return RateReport(rates, resid)


def design_hybrid(reals, estimates, scheme: str, P: float, noise_power: float) -> HybridConfig:
    """Build IRS phases, analog stages and the DPA or BD digital stage."""
    reals, estimates = list(reals), list(estimates)
    bs_geom = ArrayGeometry(reals[0].direct.shape[1], reals[0].spacing)
    ue_geoms = [ArrayGeometry(r.direct.shape[0], r.spacing) for r in reals]
    F_RF, W_RF, blocks = analog_stages(estimates, bs_geom, ue_geoms)
    irs = [irs_design(est.deltas, real) for est, real in zip(estimates, reals)]
    gain = reals[0].gain
    if scheme == "dpa":
        g = gain * np.concatenate([np.asarray(e.losses, float) for e in estimates])
        if not np.any(g > 0):
            g = np.ones_like(g)
        F_B, _ = dpa_digital(g, P, noise_power)
        W_B = [np.eye(e.num_paths) for e in estimates]
        scale = 1.0
    elif scheme == "bd":
        H_effs = [effective_channel(k, estimates, F_RF, W_RF, blocks, gain)
                  for k in range(len(estimates))]
        res = bd_digital(H_effs, P, noise_power, F_RF)
        F_B, W_B, scale = res.F_B, res.W_B, res.scale
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return HybridConfig(F_RF, F_B, W_RF, W_B, irs, blocks, scale)


def hb_rate(reals, estimates, scheme: str, P: float, noise_power: float) -> RateReport:
    return evaluate(design_hybrid(reals, estimates, scheme, P, noise_power), reals, P, noise_power)


# ---------------------------------------------------------------- baselines

def irs_configs_for(real: ChannelRealization, mode: str, rng: np.random.Generator | None = None):
    """IRS phases for the FDB baselines.

    ``optimal`` reflects at the true offset; ``random`` draws uniform
    phases; ``off`` models a plain wall: zero phases with the wall's
    amplitude attenuation in place of beta.
    """
    if mode == "optimal":
        return [theta_ref(real.true_delta(m), real.irs_size(m), real.beta, real.spacing)
                for m in range(real.num_irs)]
    if mode == "random":
        if rng is None:
            raise ValueError("random IRS phases need an rng")
        return [IrsPhaseConfig(real.beta, rng.uniform(0, 2 * np.pi, real.irs_size(m)))
                for m in range(real.num_irs)]
    if mode == "off":
        out = []
        for m in range(real.num_irs):
            att = real.wall_attenuation_db[m] if real.wall_attenuation_db else 0.0
            out.append(IrsPhaseConfig(10 ** (-att / 20), np.zeros(real.irs_size(m))))
        return out
    raise ValueError(f"unknown irs mode {mode!r}")


def fdb_svd(H: np.ndarray, P: float, noise_power: float) -> float:
    s = np.linalg.svd(H, compute_uv=False)
    s = s[s > RANK_TOL * s[0]] if s.size and s[0] > 0 else s[:0]
    if s.size == 0:
        return 0.0
    S = water_fill(s, P, noise_power)
    return water_fill_objective(s, S, P, noise_power)


def fdb_zero_forcing(channels, P: float, noise_power: float, streams=None) -> RateReport:
    """Zero forcing over the dominant left singular subspace of each user.

    When the stacked streams are not linearly independent, the weakest
    stream of any user holding more than one is dropped until they are.
    """
    svds, dims = [], []
    for k, H in enumerate(channels):
        U, s, _ = np.linalg.svd(H)
        rank = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
        d = rank if streams is None else min(streams[k], rank)
        if d == 0:
            raise BeamformingError(f"user {k} channel is zero")
        svds.append((U, s))
        dims.append(d)
    while True:
        Us = [U[:, :d] for (U, _), d in zip(svds, dims)]
        Ht = np.vstack([Uk.conj().T @ H for Uk, H in zip(Us, channels)])
        if np.linalg.matrix_rank(Ht, tol=RANK_TOL * np.linalg.norm(Ht, 2)) == Ht.shape[0]:
            break
        weakest = [(s[d - 1], k) for k, ((_, s), d) in enumerate(zip(svds, dims)) if d > 1]
        if not weakest:
            raise BeamformingError("stacked channel is rank deficient; zero forcing impossible")
        dims[min(weakest)[1]] -= 1
    F = np.linalg.pinv(Ht)
    norms = np.linalg.norm(F, axis=0)
    F = F / norms
    S = water_fill(1.0 / norms, P, noise_power)
    F = F * np.sqrt(S)
    rates, resid, start = [], [], 0
    for k, H in enumerate(channels):
        d = Us[k].shape[1]
        cols = np.zeros(F.shape[1], dtype=bool)
        cols[start:start + d] = True
        rates.append(user_rate(H, F[:, cols], Us[k], F[:, ~cols], P, noise_power))
        leak = np.linalg.norm(Us[k].conj().T @ H @ F[:, ~cols]) if (~cols).any() else 0.0
        own = np.linalg.norm(Us[k].conj().T @ H @ F[:, cols])
        resid.append(float(leak / own) if own > 0 else 0.0)
        start += d
    return RateReport(rates, resid)


def fdb_baseline(reals, scheme: str, irs_mode: str, P: float, noise_power: float,
                 rng: np.random.Generator | None = None) -> RateReport:
    """Fully digital benchmark on the assembled channels."""
    reals = list(reals)
    channels = [assemble_channel(r, irs_configs_for(r, irs_mode, rng)) for r in reals]
    if scheme == "svd":
        if len(channels) != 1:
            raise ValueError("SVD baseline is single-user")
        return RateReport([fdb_svd(channels[0], P, noise_power)], [0.0])
    if scheme == "zero_forcing":
        return fdb_zero_forcing(channels, P, noise_power)
    raise ValueError(f"unknown scheme {scheme!r}")
