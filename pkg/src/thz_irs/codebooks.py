"""Beam grids and ternary-tree hierarchical codebooks.

Three tree kinds share the same construction skeleton: stage ``s`` holds
``3**s`` beams and beam ``n`` of stage ``s`` has children ``3n-2, 3n-1, 3n``
in stage ``s+1``. Indices in the public API are 1-based to match the usual
tree notation; stage matrices are plain numpy arrays with one beam per column.

* ``td``: upper stages are least-squares fits to descendant indicators.
* ``psd``: upper stages switch off all but ``3**s`` elements.
* ``uniform``: benchmark with leaves equally spaced in angle; upper stages
  use the same least-squares fit on those leaves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .channel import ArrayGeometry, arv, arv_sine


class BeamKind(str, Enum):
    NARROW = "narrow"
    TD = "td"
    PSD = "psd"
    UNIFORM = "uniform"


@dataclass(frozen=True, eq=False)
class Beam:
    weights: np.ndarray
    stage: int
    index: int
    kind: BeamKind = BeamKind.NARROW

    def __post_init__(self):
        norm = np.linalg.norm(self.weights)
        if abs(norm - 1) > 1e-10:
            raise ValueError(f"beam weights must have unit norm, got {norm}")


@dataclass(frozen=True, eq=False)
class HybridRealization:
    analog_columns: np.ndarray  # N_a x num_rf, dictionary members
    digital: np.ndarray
    residual: float
    atoms: tuple[int, ...] = ()

    @property
    def weights(self) -> np.ndarray:
        return self.analog_columns @ self.digital


def num_stages(N: int) -> int:
    """Return S with N = 3**S, or raise."""
    if int(N) != N or N < 3:
        raise ValueError(f"N must be a power of 3 with N >= 3, got {N}")
    S, rem = 0, int(N)
    while rem % 3 == 0:
        rem //= 3
        S += 1
    if rem != 1:
        raise ValueError(f"N must be a power of 3, got {N}")
    return S


def floor_log3(n: int) -> int:
    s = 0
    while 3 ** (s + 1) <= n:
        s += 1
    return s


def narrow_sines(N: int) -> np.ndarray:
    return (2 * np.arange(1, N + 1) - 1) / N - 1


def narrow_directions(N: int) -> np.ndarray:
    """Directions with equal spacing 2/N in sine space."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return np.arcsin(narrow_sines(N))


def uniform_directions(N: int) -> np.ndarray:
    """Directions with equal angular spacing pi/N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return -np.pi / 2 + (2 * np.arange(1, N + 1) - 1) * np.pi / (2 * N)


def array_factor(num_elements: int, x) -> np.ndarray:
    """|sin(N pi x / 2) / (N sin(pi x / 2))| for sine offset ``x`` (half-wavelength ULA)."""
    x = np.asarray(x, dtype=float)
    num = np.sin(num_elements * np.pi * x / 2)
    den = num_elements * np.sin(np.pi * x / 2)
    small = np.abs(den) < 1e-15
    out = np.abs(np.divide(num, den, out=np.ones_like(x), where=~small))
    return out


def edge_gain(N_a: int, N: int) -> float:
    """Coverage-edge gain of the N-beam sine grid for an N_a-element array."""
    if N < N_a:
        raise ValueError(f"whole-space coverage needs N >= N_a, got N={N}, N_a={N_a}")
    return math.sin(N_a * math.pi / (2 * N)) / (N_a * math.sin(math.pi / (2 * N)))


def psd_edge_gain(N_a: int, s: int, N: int) -> float:
    """Coverage-edge gain of stage ``s`` of the PSD codebook.

    The second branch (full aperture) is the array factor at half a cell,
    which reduces to ``edge_gain(N_a, N)`` at the leaf stage.
    """
    S = num_stages(N)
    if not 1 <= s <= S:
        raise ValueError(f"stage must lie in [1, {S}], got {s}")
    width = 3 ** s
    if s <= floor_log3(N_a):
        return 1.0 / (width * math.sin(math.pi / (2 * width)))
    return math.sin(N_a * math.pi / (2 * width)) / (N_a * math.sin(math.pi / (2 * width)))


def uniform_edge_bound(N_a: int, N: int) -> float:
    """Lower bound on the coverage-edge gain of equal-angle beams."""
    dphi = math.pi / N
    return math.sin(dphi * N_a * math.pi / 4) / (N_a * math.sin(dphi * math.pi / 4))


def ternary_cost(M: int, N: float) -> float:
    """Tests per side for an M-ary tree search over N leaves: M * log_M(N)."""
    if M < 2:
        raise ValueError("M must be >= 2")
    return M * math.log(N) / math.log(M)


def psd_index(N: int, n: int, s: int) -> int:
    """Leaf index (1-based) whose direction steers PSD beam ``n`` of stage ``s``."""
    value = (N * 3.0 ** (-s) * (2 * n - 1) + 1) / 2
    idx = int(round(value))
    if abs(idx - value) > 1e-9:
        raise ValueError(f"non-integer PSD index for N={N}, n={n}, s={s}")
    return idx


def descendant_matrix(N: int, s: int) -> np.ndarray:
    """N x 3**s indicator: column i marks the leaves under beam i of stage s."""
    S = num_stages(N)
    width = 3 ** (S - s)
    D = np.zeros((N, 3 ** s))
    for i in range(3 ** s):
        D[i * width:(i + 1) * width, i] = 1.0
    return D


def detected_gain(beam, geom: ArrayGeometry, direction) -> np.ndarray:
    """|w^H a(direction)|; vectorized over directions."""
    w = beam.weights if isinstance(beam, Beam) else np.asarray(beam)
    return np.abs(w.conj() @ arv(geom, direction))


def centre_phase(geom: ArrayGeometry, sines) -> np.ndarray:
    """Phase that moves the ARV reference from element 1 to the array centre."""
    return np.exp(-1j * np.pi * geom.spacing * (geom.num_elements - 1) * np.asarray(sines))


def least_squares_stage(leaves: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Unit-norm columns of (L L^H)^{-1} L D.

    ``D`` may be complex; only |L^H w| matters for detection, so callers
    pass the 0/1 indicator times ``centre_phase`` of each leaf.
    """
    gram = leaves @ leaves.conj().T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"L L^H is singular (condition number {cond:.3g}); need at least as many "
            f"well-spread leaves ({leaves.shape[1]}) as antennas ({leaves.shape[0]})")
    W = np.linalg.solve(gram, leaves @ D)
    return W / np.linalg.norm(W, axis=0)


def omp_decompose(target, dictionary: np.ndarray, num_rf: int) -> HybridRealization:
    """Greedy OMP fit of ``target`` with ``num_rf`` dictionary columns.

    Each step picks the atom most correlated with the residual, then refits
    all selected coefficients by least squares. The reported residual is the
    2-norm fit error before the output is rescaled to unit norm.
    """
    if num_rf < 1:
        raise ValueError("num_rf must be >= 1")
    A = np.asarray(dictionary)
    if A.ndim != 2 or A.shape[1] == 0:
        raise ValueError("dictionary must be a nonempty N_a x M matrix")
    t = target.weights if isinstance(target, Beam) else np.asarray(target, dtype=complex)
    chosen: list[int] = []
    resid = t.copy()
    coef = np.zeros(0, dtype=complex)
    for _ in range(min(num_rf, A.shape[1])):
        corr = np.abs(A.conj().T @ resid)
        corr[chosen] = -1.0
        chosen.append(int(np.argmax(corr)))
        sub = A[:, chosen]
        coef = np.linalg.lstsq(sub, t, rcond=None)[0]
        resid = t - sub @ coef
    analog = A[:, chosen]
    scale = np.linalg.norm(analog @ coef)
    if scale == 0:
        raise ValueError("OMP produced a zero vector")
    return HybridRealization(analog, coef / scale, float(np.linalg.norm(resid)), tuple(chosen))


@dataclass(frozen=True, eq=False)
class HierarchicalCodebook:
    """Staged ternary tree; ``stages[s-1]`` is an N_a x 3**s weight matrix."""

    geometry: ArrayGeometry
    kind: BeamKind
    stages: tuple[np.ndarray, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for s, W in enumerate(self.stages, start=1):
            if W.shape != (self.geometry.num_elements, 3 ** s):
                raise ValueError(f"stage {s} has shape {W.shape}")
            W.setflags(write=False)

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def num_narrow(self) -> int:
        return 3 ** len(self.stages)

    @property
    def parallel(self) -> int:
        """Beams a receiver can test in one slot (PSD uses 3 RF chains)."""
        return 3 if self.kind == BeamKind.PSD else 1

    def stage(self, s: int) -> np.ndarray:
        return self.stages[s - 1]

    def beam(self, s: int, n: int) -> Beam:
        return Beam(np.array(self.stages[s - 1][:, n - 1]), s, n, self.kind)

    def children(self, n: int) -> range:
        return range(3 * (n - 1) + 1, 3 * n + 1)

    @property
    def leaf_sines(self) -> np.ndarray:
        if self.kind == BeamKind.UNIFORM:
            return np.sin(uniform_directions(self.num_narrow))
        return narrow_sines(self.num_narrow)

    def covering_leaf(self, angle) -> np.ndarray:
        """1-based leaf whose coverage cell contains ``angle``.

        Sine-grid kinds use cells of width 2/N in sine space; the uniform
        benchmark uses cells of width pi/N in angle. Back-range angles are
        folded into the front range first.
        """
        angle = np.asarray(angle, dtype=float)
        front = np.arcsin(np.clip(np.sin(angle), -1, 1))
        N = self.num_narrow
        if self.kind == BeamKind.UNIFORM:
            pos = (front + np.pi / 2) * N / np.pi
        else:
            pos = (np.sin(front) + 1) * N / 2
        return np.clip(np.floor(pos).astype(int), 0, N - 1) + 1

    def to_dict(self) -> dict:
        return {
            "format": "thz_irs.codebook/1",
            "meta": dict(self.meta),
            "kind": self.kind.value,
            "num_elements": self.geometry.num_elements,
            "spacing": self.geometry.spacing,
            "stages": [
                [[[float(z.real), float(z.imag)] for z in W[:, j]] for j in range(W.shape[1])]
                for W in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchicalCodebook":
        geom = ArrayGeometry(int(data["num_elements"]), float(data["spacing"]))
        stages = []
        for beams in data["stages"]:
            arr = np.asarray(beams, dtype=float)
            stages.append((arr[..., 0] + 1j * arr[..., 1]).T.copy())
        return cls(geom, BeamKind(data["kind"]), tuple(stages), dict(data.get("meta", {})))

    def dumps(self) -> str:
        # repr-exact floats make export -> import -> export byte-identical
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "HierarchicalCodebook":
        return cls.from_dict(json.loads(Path(path).read_text()))


def narrow_beams(geom: ArrayGeometry, N: int) -> np.ndarray:
    return arv_sine(geom, narrow_sines(N))


def build_td(geom: ArrayGeometry, N: int, dictionary_size: int | None = None,
             num_rf: int | None = None) -> HierarchicalCodebook:
    """Tree-dictionary codebook.

    With ``num_rf`` set, each wide codeword is replaced by its OMP fit over a
    dictionary of ``dictionary_size`` sine-grid ARVs (default N).
    """
    S = num_stages(N)
    if N < geom.num_elements:
        raise ValueError(f"N={N} must be >= N_a={geom.num_elements}")
    leaves = narrow_beams(geom, N)
    ref = centre_phase(geom, narrow_sines(N))[:, None]
    stages = [least_squares_stage(leaves, descendant_matrix(N, s) * ref) for s in range(1, S)]
    if num_rf is not None:
        dictionary = narrow_beams(geom, dictionary_size or N)
        stages = [np.column_stack([omp_decompose(W[:, j], dictionary, num_rf).weights
                                   for j in range(W.shape[1])]) for W in stages]
    return HierarchicalCodebook(geom, BeamKind.TD, tuple(stages) + (leaves,))


def build_psd(geom: ArrayGeometry, N: int) -> HierarchicalCodebook:
    """Deactivation codebook: 3**s active elements up to floor(log3 N_a)."""
    S = num_stages(N)
    if N < geom.num_elements:
        raise ValueError(f"N={N} must be >= N_a={geom.num_elements}")
    N_a = geom.num_elements
    s_max = floor_log3(N_a)
    sines = narrow_sines(N)
    stages = []
    for s in range(1, S + 1):
        active = 3 ** s if s <= s_max else N_a
        centers = sines[[psd_index(N, n, s) - 1 for n in range(1, 3 ** s + 1)]]
        W = np.zeros((N_a, 3 ** s), dtype=complex)
        W[:active] = arv_sine(ArrayGeometry(active, geom.spacing), centers)
        stages.append(W)
    return HierarchicalCodebook(geom, BeamKind.PSD, tuple(stages))


def build_uniform(geom: ArrayGeometry, N: int) -> HierarchicalCodebook:
    """Benchmark tree whose leaves have equal angular width."""
    S = num_stages(N)
    leaves = arv(geom, uniform_directions(N))
    ref = centre_phase(geom, np.sin(uniform_directions(N)))[:, None]
    stages = [least_squares_stage(leaves, descendant_matrix(N, s) * ref) for s in range(1, S)]
    return HierarchicalCodebook(geom, BeamKind.UNIFORM, tuple(stages) + (leaves,))


def build_codebook(kind, geom: ArrayGeometry, N: int, **kwargs) -> HierarchicalCodebook:
    kind = BeamKind(kind)
    if kind == BeamKind.TD:
        return build_td(geom, N, **kwargs)
    if kind == BeamKind.PSD:
        return build_psd(geom, N)
    if kind == BeamKind.UNIFORM:
        return build_uniform(geom, N)
    raise ValueError("narrow beams form a single stage; use narrow_beams()")


def beam_pattern(codebook: HierarchicalCodebook, s: int, sines) -> np.ndarray:
    """Gains of every stage-s beam on a sine grid, shape (len(sines), 3**s)."""
    A = arv_sine(codebook.geometry, np.asarray(sines, dtype=float))
    return np.abs(A.T @ codebook.stage(s).conj())
