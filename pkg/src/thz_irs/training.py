"""Beam training: exhaustive oracles and the three-phase cooperative protocol.

Received samples follow ``y = sqrt(P) * w_rx^H H w_tx + n`` with
``n ~ CN(0, sigma^2)`` drawn afresh for every slot. Beam indices are
1-based leaf/stage indices of :class:`~thz_irs.codebooks.HierarchicalCodebook`.

Slot accounting: a receiver with ``parallel`` RF chains tests that many
combining beams per slot, so a group of ``r`` receive beams against one
transmit beam costs ``ceil(r / parallel)`` slots. Descent on the BS side is
run on the uplink (the BS receives), which is what lets the PSD codebook
test three children in one slot on both sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, IrsPhaseConfig, assemble_channel
from .codebooks import HierarchicalCodebook, num_stages

MAX_EXHAUSTIVE_N = 81


class TrainingError(RuntimeError):
    pass


def theta_ref(x: float, num_elements: int, beta: float = 1.0, spacing: float = 0.5) -> IrsPhaseConfig:
    """Reflecting-mode phases steering a sine-space offset ``x``."""
    if not -2.0 - 1e-12 <= x <= 2.0 + 1e-12:
        raise ValueError(f"x must lie in [-2, 2], got {x}")
    phases = 2 * np.pi * spacing * np.arange(num_elements) * x
    return IrsPhaseConfig(beta, phases, generator_x=float(x))


def theta_ref_matrix(xs, num_elements: int, spacing: float = 0.5) -> np.ndarray:
    """Unit-amplitude reflecting diagonals, one row per offset in ``xs``."""
    return np.exp(2j * np.pi * spacing * np.multiply.outer(np.asarray(xs, float), np.arange(num_elements)))


def delta_candidates(N: int) -> np.ndarray:
    """The 2N-1 possible differences of two sine-grid directions."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return -2 + 2 * np.arange(1, 2 * N) / N


def candidate_index(delta: float, N: int) -> int:
    """1-based position of ``delta`` in :func:`delta_candidates`."""
    i = (delta + 2) * N / 2
    k = int(round(i))
    if abs(k - i) > 1e-6 or not 1 <= k <= 2 * N - 1:
        raise ValueError(f"{delta} is not a candidate for N={N}")
    return k


def canonical_delta(delta: float, N: int, spacing: float = 0.5) -> float:
    """Lowest candidate producing the same reflecting phases as ``delta``.

    Offsets differing by 1/spacing give identical IRS phases, so Delta is
    only identifiable up to that period; every estimator reports this
    representative.
    """
    k = candidate_index(delta, N)
    shift = N / (2 * spacing)
    if abs(shift - round(shift)) < 1e-9:
        k = (k - 1) % int(round(shift)) + 1
    return float(delta_candidates(N)[k - 1])


@dataclass
class MeasurementModel:
    """Noisy bilinear measurements of one user's channel."""

    real: ChannelRealization
    power: float
    noise_power: float
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.power < 0 or self.noise_power < 0:
            raise ValueError("power and noise_power must be nonnegative")
        if self.noise_power > 0 and self.rng is None:
            self.rng = np.random.default_rng()

    @property
    def noiseless(self) -> bool:
        return self.noise_power == 0

    def noise(self, shape) -> np.ndarray:
        if self.noiseless:
            return np.zeros(shape, dtype=complex)
        std = math.sqrt(self.noise_power / 2)
        return std * (self.rng.standard_normal(shape) + 1j * self.rng.standard_normal(shape))

    def observe(self, H: np.ndarray, W_rx: np.ndarray, W_tx: np.ndarray) -> np.ndarray:
        """Matrix of samples, rows over receive beams, columns over transmit beams."""
        clean = math.sqrt(self.power) * (W_rx.conj().T @ H @ W_tx)
        return clean + self.noise(clean.shape)

    def channel(self, configs) -> np.ndarray:
        return assemble_channel(self.real, configs)

    def off_configs(self) -> list[IrsPhaseConfig]:
        return [IrsPhaseConfig.off(self.real.irs_size(m)) for m in range(self.real.num_irs)]

    def single_on(self, m: int, cfg: IrsPhaseConfig) -> list[IrsPhaseConfig]:
        configs = self.off_configs()
        configs[m] = cfg
        return configs

    def cascade_sweep(self, m: int, W_rx: np.ndarray, W_tx: np.ndarray, xs) -> np.ndarray:
        """Noiseless cascade-only samples for IRS ``m`` over reflecting offsets.

        Returns shape (len(xs), rx beams, tx beams). Uses the factorization
        ``w_rx^H N diag(theta) M w_tx = sum_n conj(N^H w_rx)_n theta_n (M w_tx)_n``.
        """
        real = self.real
        u = real.irs_outbound[m].conj().T @ W_rx          # N_r x rx
        v = real.irs_inbound[m] @ W_tx                    # N_r x tx
        thetas = real.beta * theta_ref_matrix(xs, real.irs_size(m), real.spacing)
        scale = math.sqrt(self.power) * real.gain * real.compensation * real.irs_size(m)
        return scale * np.einsum("nr,cn,nt->crt", u.conj(), thetas, v)


class SlotCounter:
    def __init__(self):
        self.slots = 0

    def add(self, rx_beams: int, parallel: int, groups: int = 1) -> None:
        self.slots += groups * math.ceil(rx_beams / parallel)


@dataclass(frozen=True)
class DescentResult:
    bs_index: int
    user_index: int
    est_loss: float
    slots: int


def _argmax(values: np.ndarray) -> int:
    # np.argmax returns the first maximizer, i.e. lowest index on ties
    return int(np.argmax(values))


def _children(q: int) -> np.ndarray:
    return np.arange(3 * (q - 1) + 1, 3 * q + 1)


def tree_descent(sample, bs_cb: HierarchicalCodebook, ue_cb: HierarchicalCodebook,
                 counter: SlotCounter) -> tuple[int, int, complex]:
    """Stage-1 pair search, then user-side and BS-side ternary descents.

    ``sample(W_rx, W_tx)`` returns the (rx x tx) matrix of samples for the
    given user combiners and BS precoders.
    """
    S = bs_cb.num_stages
    if ue_cb.num_stages != S:
        raise ValueError("BS and user codebooks must have the same depth")
    # step 1: 3 BS beams x 3 user beams, n = 3(p-1) + q
    Y = sample(ue_cb.stage(1), bs_cb.stage(1))        # rows q, columns p
    counter.add(3, ue_cb.parallel, groups=3)
    n_star = _argmax(np.abs(Y.T).ravel()) + 1
    p = math.ceil(n_star / 3)
    q = n_star - 3 * (p - 1)
    y_last = Y[q - 1, p - 1]
    # step 2: user descends with the BS wide beam p held fixed
    w_tx = bs_cb.stage(1)[:, [p - 1]]
    for s in range(2, S + 1):
        kids = _children(q)
        y = sample(ue_cb.stage(s)[:, kids - 1], w_tx)[:, 0]
        counter.add(3, ue_cb.parallel)
        j = _argmax(np.abs(y))
        q, y_last = int(kids[j]), y[j]
    # step 3: BS descends against the user's narrow beam (uplink receive)
    w_rx = ue_cb.stage(S)[:, [q - 1]]
    for s in range(2, S + 1):
        kids = _children(p)
        y = sample(w_rx, bs_cb.stage(s)[:, kids - 1])[0, :]
        counter.add(3, bs_cb.parallel)
        j = _argmax(np.abs(y))
        p, y_last = int(kids[j]), y[j]
    return p, q, y_last


def phase1(model: MeasurementModel, bs_cb: HierarchicalCodebook, ue_cb: HierarchicalCodebook,
           threshold: float = 10.0) -> tuple[list[float | None], int]:
    """Sweep every reflecting offset under each of the 9 stage-1 pairs.

    Slots are ordered pair-major (BS beam p outer, user beam q inner), and
    within a pair over the 2N-1 candidates. Every IRS reflects with the same
    candidate in a slot; its pulse is separated by an ideal identity tag, so
    each IRS's own samples are inspected without the direct path.
    """
    N = bs_cb.num_narrow
    xs = delta_candidates(N)
    counter = SlotCounter()
    counter.add(3, ue_cb.parallel, groups=3 * len(xs))
    deltas: list[float | None] = []
    for m in range(model.real.num_irs):
        clean = model.cascade_sweep(m, ue_cb.stage(1), bs_cb.stage(1), xs)   # (x, q, p)
        energy = np.abs(clean + model.noise(clean.shape)) ** 2
        # intervals: one row per (p, q) pair, columns over the sweep
        intervals = energy.transpose(2, 1, 0).reshape(9, len(xs))
        peak = intervals.max(axis=1)
        floor = np.median(intervals, axis=1)
        pulsed = peak > threshold * floor
        if not pulsed.any():
            deltas.append(None)
            continue
        best = _argmax(np.where(pulsed, peak, -np.inf))
        deltas.append(canonical_delta(xs[_argmax(intervals[best])], N, model.real.spacing))
    return deltas, counter.slots


def phase2(model: MeasurementModel, bs_cb: HierarchicalCodebook,
           ue_cb: HierarchicalCodebook) -> DescentResult:
    """Direct-path search with every IRS switched off."""
    H = model.channel(model.off_configs())
    counter = SlotCounter()
    p, q, y = tree_descent(lambda Wr, Wt: model.observe(H, Wr, Wt), bs_cb, ue_cb, counter)
    loss = abs(y) / (math.sqrt(model.power) * model.real.gain) if model.power > 0 else 0.0
    return DescentResult(p, q, loss, counter.slots)


def phase3(model: MeasurementModel, bs_cb: HierarchicalCodebook, ue_cb: HierarchicalCodebook,
           direct: DescentResult, deltas) -> tuple[list[DescentResult | None], int]:
    """Cascade search per IRS with the estimated direct path removed.

    Only IRS ``m`` is on, reflecting at its Phase-1 offset. The direct path is
    modeled as ``a_hat * m_q m_p^H`` from the Phase-2 leaves and loss, and its
    predicted contribution is subtracted from every sample.
    """
    S = bs_cb.num_stages
    m_p = bs_cb.stage(S)[:, direct.bs_index - 1]
    m_q = ue_cb.stage(S)[:, direct.user_index - 1]
    scale = math.sqrt(model.power) * model.real.gain * direct.est_loss
    results: list[DescentResult | None] = []
    total = 0
    for m, delta in enumerate(deltas):
        if delta is None:
            results.append(None)
            continue
        cfg = theta_ref(delta, model.real.irs_size(m), model.real.beta, model.real.spacing)
        H = model.channel(model.single_on(m, cfg))

        def sample(W_rx, W_tx):
            predicted = scale * np.outer(W_rx.conj().T @ m_q, m_p.conj() @ W_tx)
            return model.observe(H, W_rx, W_tx) - predicted

        counter = SlotCounter()
        p, q, y = tree_descent(sample, bs_cb, ue_cb, counter)
        loss = abs(y) / (math.sqrt(model.power) * model.real.gain) if model.power > 0 else 0.0
        results.append(DescentResult(p, q, loss, counter.slots))
        total += counter.slots
    return results, total


@dataclass
class TrainingOutcome:
    """Result of a cooperative training run for one user.

    ``est_loss[0]`` is the direct path; ``est_loss[1 + m]`` the cascade via
    IRS ``m`` (None when unestimated). Leaf indices are 1-based and refer to
    ``kind``'s leaf grid of size ``num_narrow``.
    """

    kind: str
    num_narrow: int
    delta: list
    direct_beams: tuple[int, int]
    reflect_beams: list
    est_loss: list
    per_phase_counts: tuple[int, int, int]
    search_count: int = field(default=-1)

    def __post_init__(self):
        if self.search_count < 0:
            self.search_count = sum(self.per_phase_counts)
        if self.search_count != sum(self.per_phase_counts):
            raise ValueError("search_count must equal the sum of per-phase counts")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_narrow": self.num_narrow,
            "delta": list(self.delta),
            "direct_beams": list(self.direct_beams),
            "reflect_beams": [None if b is None else list(b) for b in self.reflect_beams],
            "est_loss": list(self.est_loss),
            "per_phase_counts": list(self.per_phase_counts),
            "search_count": self.search_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingOutcome":
        return cls(
            kind=data["kind"],
            num_narrow=int(data["num_narrow"]),
            delta=[None if d is None else float(d) for d in data["delta"]],
            direct_beams=tuple(data["direct_beams"]),
            reflect_beams=[None if b is None else tuple(b) for b in data["reflect_beams"]],
            est_loss=[None if v is None else float(v) for v in data["est_loss"]],
            per_phase_counts=tuple(data["per_phase_counts"]),
            search_count=int(data["search_count"]),
        )


def train(model: MeasurementModel, bs_cb: HierarchicalCodebook,
          ue_cb: HierarchicalCodebook | None = None) -> TrainingOutcome:
    """Run Phases 1-3 and collect the estimates."""
    ue_cb = ue_cb or bs_cb
    deltas, c1 = phase1(model, bs_cb, ue_cb)
    direct = phase2(model, bs_cb, ue_cb)
    reflect, c3 = phase3(model, bs_cb, ue_cb, direct, deltas)
    return TrainingOutcome(
        kind=bs_cb.kind.value,
        num_narrow=bs_cb.num_narrow,
        delta=deltas,
        direct_beams=(direct.bs_index, direct.user_index),
        reflect_beams=[None if r is None else (r.bs_index, r.user_index) for r in reflect],
        est_loss=[direct.est_loss] + [None if r is None else r.est_loss for r in reflect],
        per_phase_counts=(c1, direct.slots, c3),
    )


def leaf_angle(cb: HierarchicalCodebook, index: int) -> float:
    return float(np.arcsin(cb.leaf_sines[index - 1]))


# ---------------------------------------------------------------- oracles

def exhaustive_direct(model: MeasurementModel, leaves_bs: np.ndarray,
                      leaves_ue: np.ndarray) -> tuple[tuple[int, int], int]:
    """Best (p, q) over all narrow-beam pairs with every IRS off."""
    H = model.channel(model.off_configs())
    Y = model.observe(H, leaves_ue, leaves_bs)            # rows q, columns p
    N_p, N_q = leaves_bs.shape[1], leaves_ue.shape[1]
    k = _argmax(np.abs(Y.T).ravel())
    return (k // N_q + 1, k % N_q + 1), N_p * N_q


def exhaustive_reflect(model: MeasurementModel, leaves_bs: np.ndarray, leaves_ue: np.ndarray,
                       direct_estimate: np.ndarray | None = None, reduced: bool = False,
                       ) -> tuple[list[tuple[int, int, float]], int]:
    """Exact maximizer over cascaded-path hypotheses for each IRS.

    The full search enumerates (p, i, j, q): BS beam p, IRS arrival i, IRS
    departure j and user beam q, with the IRS reflecting at the sine offset
    of (i, j). The reduced search enumerates the 2N-1 distinct offsets
    instead of the N^2 (i, j) pairs. ``direct_estimate`` (a channel matrix
    including antenna gains) is subtracted from every sample; pass None to
    disable the direct path altogether.
    """
    N = leaves_bs.shape[1]
    if N > MAX_EXHAUSTIVE_N:
        raise TrainingError(f"exhaustive reflection search refused for N={N} > {MAX_EXHAUSTIVE_N}")
    xs = delta_candidates(N)
    real = model.real
    direct = real.gain * real.direct
    if direct_estimate is not None:
        direct = direct - direct_estimate
    else:
        direct = np.zeros_like(direct)
    D = math.sqrt(model.power) * (leaves_ue.conj().T @ direct @ leaves_bs)   # (q, p)
    out = []
    for m in range(real.num_irs):
        casc = model.cascade_sweep(m, leaves_ue, leaves_bs, xs)              # (k, q, p)
        if reduced:
            Y = casc + D[None] + model.noise(casc.shape)
            energy = np.abs(Y.transpose(2, 0, 1)) ** 2                       # (p, k, q)
            flat = _argmax(energy.ravel())
            p, k, q = np.unravel_index(flat, energy.shape)
            out.append((int(p) + 1, int(q) + 1, canonical_delta(xs[k], N, real.spacing)))
            continue
        best = (-1.0, 0, 0, 0)
        # loop over (i, j) in C-order so ties resolve to the lowest index
        for i in range(N):
            for j in range(N):
                k = j - i + N - 1
                Y = casc[k] + D + model.noise(D.shape)
                e = np.abs(Y.T) ** 2                                         # (p, q)
                f = _argmax(e.ravel())
                if e.flat[f] > best[0]:
                    best = (float(e.flat[f]), f // N, k, f % N)
        _, p, k, q = best
        out.append((int(p) + 1, int(q) + 1, canonical_delta(xs[k], N, real.spacing)))
    per_irs = N ** 2 * (2 * N - 1) if reduced else N ** 4
    return out, N * N + real.num_irs * per_irs


def search_count(method: str, N: int, point_to_point: bool = False, num_irs: int = 1) -> int:
    """Closed-form number of training slots for one user.

    ``num_irs=1`` gives the classic table entries; Phase 1 does not grow
    with the IRS count since every IRS sweeps at once.
    """
    method = method.lower()
    if method == "exhaustive":
        return N * N if point_to_point else N * N + num_irs * N ** 4
    S = num_stages(N)
    if method in ("td", "uniform"):
        p2p = 6 * S + 3
        return p2p if point_to_point else 9 * (2 * N - 1) + p2p * (1 + num_irs)
    if method == "psd":
        p2p = 2 * S + 1
        return p2p if point_to_point else 3 * (2 * N - 1) + p2p * (1 + num_irs)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- detection

def detect(cb: HierarchicalCodebook, angles, snr: float, rng: np.random.Generator | None = None,
           trace: bool = False):
    """Ternary descent against incoming ARVs; returns the selected leaves.

    The received vector is ``sqrt(snr * N_a) * a(angle)`` plus unit-variance
    noise per element, so ``snr`` is the per-element SNR (linear). ``snr``
    of ``inf`` runs noiselessly. With ``trace`` the per-stage sample
    magnitudes of the three tested beams are also returned.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    T = angles.size
    N_a = cb.geometry.num_elements
    noiseless = not np.isfinite(snr)
    amp = 1.0 if noiseless else math.sqrt(snr * N_a)
    sig = amp * np.exp(2j * np.pi * cb.geometry.spacing
                       * np.multiply.outer(np.arange(N_a), np.sin(angles))) / math.sqrt(N_a)
    q = np.zeros(T, dtype=int)   # 0-based index of the current parent
    history = []
    for s in range(1, cb.num_stages + 1):
        idx = np.arange(3)[None, :] if s == 1 else 3 * q[:, None] + np.arange(3)[None, :]
        idx = np.broadcast_to(idx, (T, 3))
        W = cb.stage(s)[:, idx]                                   # N_a x T x 3
        y = np.einsum("atk,at->tk", W.conj(), sig)
        if not noiseless:
            y = y + (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) / math.sqrt(2)
        mag = np.abs(y)
        q = idx[np.arange(T), np.argmax(mag, axis=1)]
        if trace:
            history.append(mag)
    leaves = q + 1
    return (leaves, history) if trace else leaves


def detection_trial(cb: HierarchicalCodebook, true_angle: float, snr: float,
                    rng: np.random.Generator | None = None) -> bool:
    """True iff the descent ends on the leaf covering ``true_angle``."""
    leaf = detect(cb, [true_angle], snr, rng)[0]
    return bool(leaf == cb.covering_leaf(true_angle))


def detection_rate(cb: HierarchicalCodebook, angles, snr: float, rng) -> np.ndarray:
    """Boolean success vector for a batch of angles."""
    return detect(cb, angles, snr, rng) == cb.covering_leaf(angles)


__all__ = [
    "MeasurementModel", "TrainingOutcome", "DescentResult", "TrainingError",
    "theta_ref", "delta_candidates", "canonical_delta", "phase1", "phase2", "phase3", "train",
    "exhaustive_direct", "exhaustive_reflect", "search_count", "detect",
    "detection_trial", "detection_rate", "leaf_angle",
]
