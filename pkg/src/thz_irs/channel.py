"""Geometric line-of-sight THz channel with IRS cascades.

Every link is a rank-one outer product of array response vectors (ARVs)
scaled by a real path loss. Angles follow the channel-matrix convention
``H = loss * a_rx(aoa) a_tx(aod)^H``: for a far-field ULA this means
``sin(aoa) = axis_rx . u_rx->tx`` and ``sin(aod) = -axis_tx . u_tx->rx``,
which makes an all-zero-phase IRS reflect specularly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import SPEED_OF_LIGHT, ScenarioConfig


@dataclass(frozen=True)
class ArrayGeometry:
    num_elements: int
    spacing: float = 0.5  # in wavelengths

    def __post_init__(self):
        if int(self.num_elements) != self.num_elements or self.num_elements < 1:
            raise ValueError(f"num_elements must be a positive integer, got {self.num_elements}")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")


@dataclass(frozen=True)
class PathParams:
    aod: float
    aoa: float
    distance: float
    loss: float

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError("distance must be positive")
        if self.loss < 0:
            raise ValueError("loss must be nonnegative")


@dataclass(frozen=True)
class IrsPhaseConfig:
    amplitude: float
    phases: np.ndarray
    generator_x: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError(f"amplitude must lie in [0, 1], got {self.amplitude}")
        phases = np.mod(np.asarray(self.phases, dtype=float), 2 * np.pi)
        # mod can return exactly 2*pi for tiny negative inputs
        phases[phases >= 2 * np.pi] = 0.0
        phases.setflags(write=False)
        object.__setattr__(self, "phases", phases)

    @property
    def diagonal(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phases)

    @classmethod
    def off(cls, num_elements: int) -> "IrsPhaseConfig":
        return cls(0.0, np.zeros(num_elements))


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One user's channel: direct LoS plus per-IRS inbound/outbound legs.

    ``irs_inbound[m]`` is the BS-to-IRS matrix (N_r x N_t) and
    ``irs_outbound[m]`` the IRS-to-user matrix (N_u x N_r). ``antenna_gains``
    are linear amplitude factors (G_t, G_r).
    """

    direct: np.ndarray
    irs_inbound: tuple[np.ndarray, ...]
    irs_outbound: tuple[np.ndarray, ...]
    direct_path: PathParams
    inbound_paths: tuple[PathParams, ...]
    outbound_paths: tuple[PathParams, ...]
    compensation: float
    antenna_gains: tuple[float, float]
    beta: float = 0.8
    spacing: float = 0.5
    wall_attenuation_db: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not (len(self.irs_inbound) == len(self.irs_outbound)
                == len(self.inbound_paths) == len(self.outbound_paths)):
            raise ValueError("IRS leg lists must have equal length")

    @property
    def num_irs(self) -> int:
        return len(self.irs_inbound)

    @property
    def gain(self) -> float:
        return self.antenna_gains[0] * self.antenna_gains[1]

    def irs_size(self, m: int) -> int:
        return self.irs_inbound[m].shape[0]

    def true_delta(self, m: int) -> float:
        """Sine-space difference sin(IRS departure) - sin(IRS arrival)."""
        return math.sin(self.outbound_paths[m].aod) - math.sin(self.inbound_paths[m].aoa)

    def cascade_loss(self, m: int) -> float:
        """Amplitude of the cascade with optimal phases, excluding G_t*G_r."""
        return (self.compensation * self.beta * self.irs_size(m)
                * self.inbound_paths[m].loss * self.outbound_paths[m].loss)


def arv(geom: ArrayGeometry, angle) -> np.ndarray:
    """Unit-norm array response vector(s).

    A scalar angle gives a length-N_a vector; an array of angles gives an
    N_a x len(angle) matrix with one ARV per column.
    """
    angle = np.asarray(angle, dtype=float)
    n = np.arange(geom.num_elements)
    phase = 2 * np.pi * geom.spacing * np.multiply.outer(n, np.sin(angle))
    return np.exp(1j * phase) / np.sqrt(geom.num_elements)


def arv_sine(geom: ArrayGeometry, sine) -> np.ndarray:
    """ARV(s) parameterized directly by sin(angle)."""
    sine = np.asarray(sine, dtype=float)
    n = np.arange(geom.num_elements)
    return np.exp(2j * np.pi * geom.spacing * np.multiply.outer(n, sine)) / np.sqrt(geom.num_elements)


def normalize_angle(angle: float) -> float:
    """Map an angle to [-pi/2, 3*pi/2)."""
    return (angle + np.pi / 2) % (2 * np.pi) - np.pi / 2


def path_loss(frequency: float, distance: float, absorption: float) -> float:
    """Free-spread plus molecular-absorption amplitude loss."""
    if not frequency > 0:
        raise ValueError("frequency must be positive")
    if not distance > 0:
        raise ValueError("distance must be positive")
    return SPEED_OF_LIGHT / (4 * np.pi * frequency * distance) * math.exp(-0.5 * absorption * distance)


def compensation_factor(element_side: float, wavelength: float, element_gain: float = math.sqrt(2.0)) -> float:
    """IRS path-loss compensation factor for square elements of side ``element_side``.

    The side must lie in [wavelength/10, wavelength/2].
    """
    tol = 1e-12 * wavelength
    if not (wavelength / 10 - tol <= element_side <= wavelength / 2 + tol):
        raise ValueError("element_side must lie in [wavelength/10, wavelength/2]")
    return 2 * math.sqrt(math.pi) * element_gain * element_side ** 2 / wavelength ** 2


def antenna_gain_db(num_elements: int) -> float:
    return 4.0 + 10.0 * math.log10(math.sqrt(num_elements))


def los_channel(tx: ArrayGeometry, rx: ArrayGeometry, params: PathParams) -> np.ndarray:
    return params.loss * np.outer(arv(rx, params.aoa), arv(tx, params.aod).conj())


def assemble_channel(real: ChannelRealization, irs_configs) -> np.ndarray:
    """Full BS-to-user matrix with every IRS set to its phase configuration.

    The cascade through IRS m is ``eta * N_r * N_m diag(theta_m) M_m``; the
    N_r factor is the IRS aperture gain, so a matched configuration yields
    amplitude ``eta * beta * N_r * loss_M * loss_N``.
    """
    irs_configs = list(irs_configs)
    if len(irs_configs) != real.num_irs:
        raise ValueError(f"expected {real.num_irs} IRS configurations, got {len(irs_configs)}")
    total = real.direct.astype(complex, copy=True)
    for m, cfg in enumerate(irs_configs):
        total += cascade_matrix(real, m, cfg)
    return real.gain * total


def cascade_matrix(real: ChannelRealization, m: int, cfg: IrsPhaseConfig) -> np.ndarray:
    """Cascade through IRS ``m`` without the antenna gains."""
    n_r = real.irs_size(m)
    if cfg.phases.shape != (n_r,):
        raise ValueError(f"IRS {m} has {n_r} elements, configuration has {cfg.phases.shape[0]}")
    if cfg.amplitude == 0:
        return np.zeros_like(real.direct, dtype=complex)
    outbound = real.irs_outbound[m] * cfg.diagonal[None, :]
    return real.compensation * n_r * (outbound @ real.irs_inbound[m])


def _link(tx_pos, tx_axis, rx_pos, rx_axis) -> tuple[float, float, float]:
    offset = np.asarray(rx_pos, float) - np.asarray(tx_pos, float)
    dist = float(np.hypot(*offset))
    u = offset / dist
    aod = math.asin(float(np.clip(-np.dot(tx_axis, u), -1, 1)))
    aoa = math.asin(float(np.clip(-np.dot(rx_axis, u), -1, 1)))
    return aod, aoa, dist


_X_AXIS = np.array([1.0, 0.0])
_Y_AXIS = np.array([0.0, 1.0])


def realization_from_positions(cfg: ScenarioConfig, bs_pos, user_pos, irs_positions,
                               wall_attenuation_db=()) -> ChannelRealization:
    """Build a user's channel for fixed positions (BS, user, its IRSs)."""
    bs = ArrayGeometry(cfg.bs_elements, cfg.spacing)
    ue = ArrayGeometry(cfg.user_elements, cfg.spacing)
    ris = ArrayGeometry(cfg.irs_elements, cfg.spacing)

    def params(tx_pos, tx_axis, rx_pos, rx_axis):
        aod, aoa, dist = _link(tx_pos, tx_axis, rx_pos, rx_axis)
        return PathParams(aod, aoa, dist, path_loss(cfg.frequency, dist, cfg.absorption))

    direct_p = params(bs_pos, _X_AXIS, user_pos, _X_AXIS)
    inbound_p, outbound_p = [], []
    for pos in irs_positions:
        inbound_p.append(params(bs_pos, _X_AXIS, pos, _Y_AXIS))
        outbound_p.append(params(pos, _Y_AXIS, user_pos, _X_AXIS))
    if cfg.eta == "computed":
        side = cfg.irs_element_side if cfg.irs_element_side is not None else cfg.wavelength / 2
        eta = compensation_factor(side, cfg.wavelength, cfg.irs_element_gain)
    else:
        eta = float(cfg.eta)
    if cfg.antenna_gain_db is None:
        g_t = 10 ** (antenna_gain_db(cfg.bs_elements) / 20)
        g_r = 10 ** (antenna_gain_db(cfg.user_elements) / 20)
    else:
        g_t = g_r = 10 ** (cfg.antenna_gain_db / 20)
    return ChannelRealization(
        direct=los_channel(bs, ue, direct_p),
        irs_inbound=tuple(los_channel(bs, ris, p) for p in inbound_p),
        irs_outbound=tuple(los_channel(ris, ue, p) for p in outbound_p),
        direct_path=direct_p,
        inbound_paths=tuple(inbound_p),
        outbound_paths=tuple(outbound_p),
        compensation=eta,
        antenna_gains=(g_t, g_r),
        beta=cfg.beta,
        spacing=cfg.spacing,
        wall_attenuation_db=tuple(wall_attenuation_db),
    )


def scenario_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed by (seed, keys...), independent of draw order elsewhere."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])


def sample_positions(cfg: ScenarioConfig, rng: np.random.Generator):
    bs = np.array([rng.uniform(*cfg.bs_x), rng.uniform(*cfg.bs_y)])
    users = np.column_stack([rng.uniform(*cfg.user_x, cfg.num_users),
                             rng.uniform(*cfg.user_y, cfg.num_users)])
    irs = np.array([[cfg.irs_x, cfg.irs_y0 + i] for i in range(1, cfg.num_irs + 1)])
    walls = rng.uniform(*cfg.wall_attenuation_db, cfg.num_irs)
    return bs, users, irs, walls


def sample_scenario(cfg: ScenarioConfig, rng: np.random.Generator | int | None = None,
                    trial: int = 0) -> list[ChannelRealization]:
    """Draw random BS/user positions and return one realization per user.

    ``rng`` may be a Generator, or None to derive one from ``(cfg.seed, trial)``.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = scenario_rng(cfg.seed, trial if rng is None else int(rng))
    bs, users, irs, walls = sample_positions(cfg, rng)
    out = []
    for k in range(cfg.num_users):
        block = slice(k * cfg.irs_per_user, (k + 1) * cfg.irs_per_user)
        out.append(realization_from_positions(cfg, bs, users[k], irs[block], walls[block]))
    return out


def on_grid_realization(bs: ArrayGeometry, user: ArrayGeometry, irs: ArrayGeometry,
                        num_narrow: int, num_irs: int, rng: np.random.Generator,
                        beta: float = 0.8, compensation: float = 1.0,
                        direct_loss: float = 1e-4, leg_loss: float = 1e-3,
                        gains: tuple[float, float] = (1.0, 1.0)) -> ChannelRealization:
    """Synthetic realization with every angle on the narrow-beam sine grid.

    Used by oracle-equivalence studies where estimates must match truth
    exactly. Losses are fixed magnitudes (distances are nominal).
    """
    grid = (2 * np.arange(1, num_narrow + 1) - 1) / num_narrow - 1

    def pick():
        return float(np.arcsin(grid[rng.integers(num_narrow)]))

    direct_p = PathParams(pick(), pick(), 1.0, direct_loss)
    inbound_p = tuple(PathParams(pick(), pick(), 1.0, leg_loss) for _ in range(num_irs))
    outbound_p = tuple(PathParams(pick(), pick(), 1.0, leg_loss) for _ in range(num_irs))
    return ChannelRealization(
        direct=los_channel(bs, user, direct_p),
        irs_inbound=tuple(los_channel(bs, irs, p) for p in inbound_p),
        irs_outbound=tuple(los_channel(irs, user, p) for p in outbound_p),
        direct_path=direct_p,
        inbound_paths=inbound_p,
        outbound_paths=outbound_p,
        compensation=compensation,
        antenna_gains=gains,
        beta=beta,
        spacing=bs.spacing,
    )
