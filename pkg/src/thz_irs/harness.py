"""Monte Carlo drivers and result persistence.

Every random draw comes from a generator keyed by a tuple that starts with
the experiment seed, so trials can run in any order or on any number of
threads and still produce bit-identical tables. Channel realizations are
keyed by ``(seed, trial)`` only, which gives common random numbers across
power points and schemes; paired differences are therefore meaningful.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .beamforming import (estimate_from_outcome, estimate_from_truth, fdb_baseline,
                          hb_rate)
from .channel import ArrayGeometry, on_grid_realization, sample_scenario
from .codebooks import beam_pattern, build_codebook, narrow_beams
from .config import ConfigError, ScenarioConfig, dbm_to_watts
from .training import (MeasurementModel, detection_rate, exhaustive_direct,
                       exhaustive_reflect, search_count, train)

KINDS = ("detect_curve", "pattern_dump", "rate_single", "rate_multi",
         "joint_pipeline", "complexity_table")
CHUNK = 1000


def keyed_rng(*keys) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])


@dataclass
class ExperimentSpec:
    """What to run. ``axis`` is SNR in dB, power in dBm or N, by kind."""

    kind: str
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    codebooks: tuple[str, ...] = ("td", "psd", "uniform")
    axis: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0)
    trials: int = 1000
    seed: int = 0
    num_narrow: int = 81
    elements: int = 32
    train_power_dbm: float | None = 30.0
    stage: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {', '.join(KINDS)}")
        if isinstance(self.codebooks, str):
            self.codebooks = (self.codebooks,)
        self.codebooks = tuple(self.codebooks)
        for cb in self.codebooks:
            if cb not in ("td", "psd", "uniform"):
                raise ConfigError("codebooks", f"unknown codebook kind {cb!r}")
        self.axis = tuple(float(a) for a in self.axis)
        if not self.axis:
            raise ConfigError("axis", "sweep must be nonempty")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ConfigError("trials", "must be an integer >= 1")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["scenario"] = self.scenario.to_dict()
        out["codebooks"] = list(self.codebooks)
        out["axis"] = list(self.axis)
        out.pop("threads")  # execution detail, not part of the experiment
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Row:
    axis: float
    scheme: str
    value: float
    trials: int
    stderr: float


class ResultTable:
    """Rows of (axis, scheme, value, trials, stderr) plus run metadata.

    ``samples`` keeps the per-trial values of each row in memory (not
    persisted) for paired comparisons.
    """

    columns = ("axis", "scheme", "value", "trials", "stderr")

    def __init__(self, metadata: dict | None = None):
        self.rows: list[Row] = []
        self.metadata = dict(metadata or {})
        self.samples: dict[tuple[float, str], np.ndarray] = {}
        self._index: dict[tuple[float, str], int] = {}

    def add(self, axis, scheme: str, value: float, trials: int, stderr: float,
            samples=None) -> None:
        key = (float(axis), scheme)
        if key in self._index:
            raise ValueError(f"duplicate row {key}")
        if stderr < 0:
            raise ValueError("stderr must be nonnegative")
        self._index[key] = len(self.rows)
        self.rows.append(Row(float(axis), scheme, float(value), int(trials), float(stderr)))
        if samples is not None:
            self.samples[key] = np.asarray(samples)

    def add_samples(self, axis, scheme: str, samples) -> None:
        x = np.asarray(samples, dtype=float)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        self.add(axis, scheme, float(x.mean()), x.size, se, x)

    def value(self, axis, scheme: str) -> float:
        return self.row(axis, scheme).value

    def row(self, axis, scheme: str) -> Row:
        return self.rows[self._index[(float(axis), scheme)]]

    @property
    def schemes(self) -> list[str]:
        return list(dict.fromkeys(r.scheme for r in self.rows))

    @property
    def axis_values(self) -> list[float]:
        return list(dict.fromkeys(r.axis for r in self.rows))

    def series(self, scheme: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r.scheme == scheme]
        return (np.array([r.axis for r in rows]), np.array([r.value for r in rows]),
                np.array([r.stderr for r in rows]))

    def to_csv(self, path) -> Path:
        """Write the CSV and a ``.json`` sidecar next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(r.axis), r.scheme, repr(r.value), r.trials, repr(r.stderr)])
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.metadata, indent=2, sort_keys=True))
        return sidecar

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        path = Path(path)
        sidecar = path.with_suffix(".json")
        table = cls(json.loads(sidecar.read_text()) if sidecar.exists() else {})
        with path.open() as fh:
            for rec in csv.DictReader(fh):
                table.add(float(rec["axis"]), rec["scheme"], float(rec["value"]),
                          int(rec["trials"]), float(rec["stderr"]))
        return table


def _metadata(spec: ExperimentSpec) -> dict:
    h = spec.digest()
    run = hashlib.sha1(f"{h}:{time.time_ns()}:{os.getpid()}".encode()).hexdigest()[:12]
    return {"spec": spec.to_dict(), "seed": spec.seed, "spec_hash": h, "run_id": run,
            "columns": list(ResultTable.columns)}


def _map(fn, items, threads: int):
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(i) for i in items]
    workers = None if threads == 0 else threads
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- detection

def run_detect_curve(spec: ExperimentSpec) -> ResultTable:
    """Correct-detection rate versus per-element SNR for each codebook."""
    geom = ArrayGeometry(spec.elements)
    cbs = {k: build_codebook(k, geom, spec.num_narrow) for k in spec.codebooks}
    chunks = [(c, min(CHUNK, spec.trials - c * CHUNK)) for c in range(math.ceil(spec.trials / CHUNK))]
    table = ResultTable(_metadata(spec))
    for a, snr_db in enumerate(spec.axis):
        snr = 10 ** (snr_db / 10)
        for s, kind in enumerate(spec.codebooks):
            def work(chunk):
                c, n = chunk
                angles = keyed_rng(spec.seed, 0, c).uniform(-np.pi / 2, np.pi / 2, n)
                return detection_rate(cbs[kind], angles, snr, keyed_rng(spec.seed, 1, a, s, c))
            hits = np.concatenate(_map(work, chunks, spec.threads))
            p = hits.mean()
            table.add(snr_db, kind, p, hits.size, math.sqrt(p * (1 - p) / hits.size), hits)
    return table


def run_pattern_dump(spec: ExperimentSpec, points: int = 10_001) -> ResultTable:
    """Beam gains of one stage on a sine grid; axis is the direction in radians."""
    geom = ArrayGeometry(spec.elements)
    sines = np.linspace(-1, 1, points)
    angles = np.arcsin(sines)
    table = ResultTable(_metadata(spec))
    for kind in spec.codebooks:
        cb = build_codebook(kind, geom, spec.num_narrow)
        stage = spec.stage or cb.num_stages
        gains = beam_pattern(cb, stage, sines)
        for n in range(gains.shape[1]):
            for phi, g in zip(angles, gains[:, n]):
                table.add(phi, f"{kind}_s{stage}_b{n + 1}", g, 1, 0.0)
    return table


# ---------------------------------------------------------------- rates

def _scenario(spec: ExperimentSpec) -> ScenarioConfig:
    cfg = spec.scenario.replace(seed=spec.seed)
    if spec.kind == "rate_single" and cfg.num_users != 1:
        raise ConfigError("scenario.num_users", "rate_single needs exactly one user")
    return cfg


def _rate_trial(spec: ExperimentSpec, cfg: ScenarioConfig, t: int) -> dict:
    reals = sample_scenario(cfg, trial=t)
    est = [estimate_from_truth(r) for r in reals]
    single = len(reals) == 1
    fdb = "svd" if single else "zero_forcing"
    sigma2 = cfg.noise_power
    out: dict[tuple[float, str], float] = {}
    for p_dbm in spec.axis:
        P = dbm_to_watts(p_dbm)
        out[(p_dbm, "fdb_optimal_irs")] = fdb_baseline(reals, fdb, "optimal", P, sigma2).sum
        out[(p_dbm, "hb_dpa")] = hb_rate(reals, est, "dpa", P, sigma2).sum
        if not single:
            out[(p_dbm, "hb_bd")] = hb_rate(reals, est, "bd", P, sigma2).sum
        # same random phases at every power point
        rng = keyed_rng(cfg.seed, 2, t)
        out[(p_dbm, "fdb_random_irs")] = fdb_baseline(reals, fdb, "random", P, sigma2, rng).sum
        out[(p_dbm, "fdb_no_irs")] = fdb_baseline(reals, fdb, "off", P, sigma2).sum
    return out


def _collect(table: ResultTable, results: list[dict]) -> ResultTable:
    for key in results[0]:
        table.add_samples(key[0], key[1], [r[key] for r in results])
    return table


def run_rate_experiment(spec: ExperimentSpec) -> ResultTable:
    """Rate (single user) or sum rate (multi user) versus transmit power in dBm."""
    if spec.kind not in ("rate_single", "rate_multi"):
        raise ConfigError("kind", "expected rate_single or rate_multi")
    cfg = _scenario(spec)
    results = _map(lambda t: _rate_trial(spec, cfg, t), range(spec.trials), spec.threads)
    return _collect(ResultTable(_metadata(spec)), results)


def _joint_trial(spec: ExperimentSpec, cfg: ScenarioConfig, cbs: dict, t: int) -> dict:
    reals = sample_scenario(cfg, trial=t)
    sigma2 = cfg.noise_power
    perfect = [estimate_from_truth(r) for r in reals]
    schemes = ("dpa",) if len(reals) == 1 else ("dpa", "bd")
    estimates = {}
    for c, (kind, cb) in enumerate(cbs.items()):
        est = []
        for k, real in enumerate(reals):
            if spec.train_power_dbm is None:
                model = MeasurementModel(real, 1.0, 0.0)
            else:
                model = MeasurementModel(real, dbm_to_watts(spec.train_power_dbm), sigma2,
                                         keyed_rng(cfg.seed, 3, t, c, k))
            est.append(estimate_from_outcome(train(model, cb), cb))
        estimates[kind] = est
    out = {}
    for p_dbm in spec.axis:
        P = dbm_to_watts(p_dbm)
        for sch in schemes:
            out[(p_dbm, f"hb_{sch}_perfect")] = hb_rate(reals, perfect, sch, P, sigma2).sum
            for kind, est in estimates.items():
                out[(p_dbm, f"hb_{sch}_{kind}")] = hb_rate(reals, est, sch, P, sigma2).sum
    return out


def run_joint_pipeline(spec: ExperimentSpec) -> ResultTable:
    """Train with each codebook, design from estimates, evaluate on the truth."""
    cfg = _scenario(spec)
    geom = ArrayGeometry(cfg.bs_elements, cfg.spacing)
    if cfg.user_elements != cfg.bs_elements:
        raise ConfigError("scenario.user_elements", "joint pipeline needs equal BS and user arrays")
    cbs = {k: build_codebook(k, geom, spec.num_narrow) for k in spec.codebooks}
    results = _map(lambda t: _joint_trial(spec, cfg, cbs, t), range(spec.trials), spec.threads)
    return _collect(ResultTable(_metadata(spec)), results)


# ---------------------------------------------------------------- complexity

def measured_counts(N: int, elements: int | None = None, exhaustive: bool | None = None,
                    seed: int = 0) -> dict[str, int]:
    """Slot counters from instrumented runs with one IRS."""
    N_a = elements or min(N, 32)
    geom = ArrayGeometry(N_a)
    real = on_grid_realization(geom, geom, geom, N, 1, keyed_rng(seed, 4, N))
    model = MeasurementModel(real, 1.0, 0.0)
    out = {}
    for kind in ("td", "psd"):
        res = train(model, build_codebook(kind, geom, N))
        out[kind] = res.search_count
        out[f"{kind}_p2p"] = res.per_phase_counts[1]
    leaves = narrow_beams(geom, N)
    _, out["exhaustive_p2p"] = exhaustive_direct(model, leaves, leaves)
    if exhaustive if exhaustive is not None else N <= 27:
        _, out["exhaustive"] = exhaustive_reflect(model, leaves, leaves, None)
    return out


def emit_complexity_table(Ns, measure: bool = True, seed: int = 0) -> ResultTable:
    """Closed-form slot counts per N, checked against instrumented runs."""
    spec = ExperimentSpec("complexity_table", axis=tuple(Ns), trials=1, seed=seed)
    table = ResultTable(_metadata(spec))
    for N in Ns:
        N = int(N)
        closed = {
            "exhaustive": search_count("exhaustive", N),
            "td": search_count("td", N),
            "psd": search_count("psd", N),
            "exhaustive_p2p": search_count("exhaustive", N, point_to_point=True),
            "td_p2p": search_count("td", N, point_to_point=True),
            "psd_p2p": search_count("psd", N, point_to_point=True),
        }
        for name, value in closed.items():
            table.add(N, name, value, 1, 0.0)
        if measure:
            for name, value in measured_counts(N, seed=seed).items():
                if value != closed[name]:
                    raise AssertionError(
                        f"measured {name} count {value} differs from closed form {closed[name]} at N={N}")
                table.add(N, f"{name}_measured", value, 1, 0.0)
    return table


def run(spec: ExperimentSpec) -> ResultTable:
    if spec.kind == "detect_curve":
        return run_detect_curve(spec)
    if spec.kind == "pattern_dump":
        return run_pattern_dump(spec)
    if spec.kind in ("rate_single", "rate_multi"):
        return run_rate_experiment(spec)
    if spec.kind == "joint_pipeline":
        return run_joint_pipeline(spec)
    return emit_complexity_table([int(a) for a in spec.axis], seed=spec.seed)


__all__ = [
    "ExperimentSpec", "ResultTable", "Row", "keyed_rng", "run", "run_detect_curve",
    "run_pattern_dump", "run_rate_experiment", "run_joint_pipeline",
    "emit_complexity_table", "measured_counts",
]
