"""Command-line front end.

Exit status is 0 on success, 2 for configuration errors and 3 for numeric
failures; errors are reported as one ``key=value`` line on stderr.
Relative output paths are resolved against ``$THZ_IRS_OUTPUT_ROOT`` when
that variable is set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from .beamforming import BeamformingError, design_hybrid, estimate_from_outcome, evaluate
from .channel import ArrayGeometry, sample_scenario
from .codebooks import HierarchicalCodebook, build_codebook, build_td
from .config import ConfigError, ScenarioConfig, dbm_to_watts, load_scenario, parse_override
from .harness import ExperimentSpec, emit_complexity_table, keyed_rng, run
from .training import MeasurementModel, TrainingError, TrainingOutcome, train

OUTPUT_ENV = "THZ_IRS_OUTPUT_ROOT"
RANGE_FLAGS = ("--snr", "--power", "--n")
_RANGE = re.compile(r"^-?\d+(\.\d*)?(:-?\d+(\.\d*)?){0,2}(,-?\d+(\.\d*)?)*$")


def parse_range(text: str) -> list[float]:
    """``start:step:stop`` (stop inclusive), a comma list, or a single value."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("range", f"expected start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step == 0 or (stop - start) * step < 0:
            raise ConfigError("range", f"step does not reach stop in {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigError("range", f"cannot parse {text!r}") from None


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _output_path(args, default_name: str) -> Path:
    path = Path(args.out) if args.out else Path(default_name)
    root = os.environ.get(OUTPUT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _scenario(args) -> ScenarioConfig:
    overrides = {}
    for item in args.set or []:
        key, value = parse_override(item)
        overrides[key.removeprefix("scenario.")] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_scenario(args.config, overrides)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_codebook(args) -> int:
    if args.from_file:
        cb = HierarchicalCodebook.load(args.from_file)
    else:
        params = {"kind": args.kind, "na": args.na, "n": args.n, "num_rf": args.num_rf}
        geom = ArrayGeometry(args.na)
        if args.kind == "td" and args.num_rf:
            cb = build_td(geom, args.n, num_rf=args.num_rf)
        else:
            cb = build_codebook(args.kind, geom, args.n)
        cb = HierarchicalCodebook(cb.geometry, cb.kind, cb.stages,
                                  {"spec_hash": _digest(params), **params})
    path = _output_path(args, f"codebook_{cb.kind.value}_{cb.geometry.num_elements}_{cb.num_narrow}.json")
    cb.save(path)
    print(path)
    return 0


def _spec(args, kind: str, **kw) -> ExperimentSpec:
    seed = args.seed if args.seed is not None else 0
    return ExperimentSpec(kind, trials=args.trials, seed=seed, threads=args.threads, **kw)


def _emit_table(args, table, default_name: str) -> int:
    path = _output_path(args, default_name)
    table.to_csv(path)
    print(path)
    return 0


def cmd_pattern(args) -> int:
    spec = ExperimentSpec("pattern_dump", codebooks=(args.kind,), num_narrow=args.n,
                          elements=args.na, stage=args.stage, trials=1,
                          seed=args.seed or 0)
    return _emit_table(args, run(spec), f"pattern_{args.kind}_{args.na}_{args.n}.csv")


def _training_power(args, cfg: ScenarioConfig) -> float:
    if args.snr_db is not None:
        return cfg.noise_power * 10 ** (args.snr_db / 10)
    return dbm_to_watts(args.power_dbm)


def cmd_train(args) -> int:
    cfg = _scenario(args)
    reals = sample_scenario(cfg, trial=args.trial)
    geom = ArrayGeometry(cfg.bs_elements, cfg.spacing)
    if cfg.user_elements != cfg.bs_elements:
        raise ConfigError("scenario.user_elements", "training needs equal BS and user arrays")
    cb = build_codebook(args.kind, geom, args.n)
    P = _training_power(args, cfg)
    outcomes = []
    for k, real in enumerate(reals):
        model = MeasurementModel(real, P, cfg.noise_power, keyed_rng(cfg.seed, 5, args.trial, k))
        outcomes.append(train(model, cb).to_dict())
    invocation = {"scenario": cfg.to_dict(), "kind": args.kind, "n": args.n,
                  "power_w": P, "trial": args.trial}
    path = _output_path(args, f"training_{args.kind}_{args.n}.json")
    _write_json(path, {**invocation, "spec_hash": _digest(invocation), "outcomes": outcomes})
    print(path)
    return 0


def cmd_beamform(args) -> int:
    try:
        data = json.loads(Path(args.outcome).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError("outcome", str(err)) from None
    try:
        cfg = ScenarioConfig.from_dict(data["scenario"])
        outcomes = [TrainingOutcome.from_dict(o) for o in data["outcomes"]]
        trial, n = int(data["trial"]), int(data["n"])
    except KeyError as err:
        raise ConfigError(f"outcome.{err.args[0]}", "missing field") from None
    reals = sample_scenario(cfg, trial=trial)
    geom = ArrayGeometry(cfg.bs_elements, cfg.spacing)
    cb = build_codebook(outcomes[0].kind, geom, n)
    estimates = [estimate_from_outcome(o, cb) for o in outcomes]
    P = dbm_to_watts(args.power_dbm)
    config = design_hybrid(reals, estimates, args.scheme, P, cfg.noise_power)
    report = evaluate(config, reals, P, cfg.noise_power)
    invocation = {"outcome_hash": data.get("spec_hash"), "scheme": args.scheme,
                  "power_dbm": args.power_dbm}
    result = {
        **invocation,
        "spec_hash": _digest(invocation),
        "hybrid": {
            "num_rf_chains": int(config.F_RF.shape[1]),
            "streams_per_user": [int(W.shape[1]) for W in config.W_B],
            "precoder_norm": float(np.linalg.norm(config.precoder)),
            "bd_scale": float(config.scale),
            "irs_offsets": [[c.generator_x for c in user] for user in config.irs],
        },
        "rates": {"per_user": [float(r) for r in report.per_user], "sum": report.sum,
                  "interference_residual": report.interference_residual},
    }
    path = _output_path(args, f"beamform_{args.scheme}.json")
    _write_json(path, result)
    print(path)
    return 0


def cmd_detect_curve(args) -> int:
    spec = _spec(args, "detect_curve", axis=tuple(parse_range(args.snr)),
                 codebooks=tuple(args.codebooks.split(",")), num_narrow=args.n, elements=args.na)
    return _emit_table(args, run(spec), "detect_curve.csv")


def cmd_rate_sweep(args) -> int:
    cfg = _scenario(args)
    kind = "rate_single" if cfg.num_users == 1 else "rate_multi"
    spec = _spec(args, kind, scenario=cfg, axis=tuple(parse_range(args.power)))
    return _emit_table(args, run(spec), f"{kind}.csv")


def cmd_joint(args) -> int:
    cfg = _scenario(args)
    tp = None if args.train_power_dbm.lower() == "none" else float(args.train_power_dbm)
    spec = _spec(args, "joint_pipeline", scenario=cfg, axis=tuple(parse_range(args.power)),
                 codebooks=tuple(args.codebooks.split(",")), num_narrow=args.n,
                 train_power_dbm=tp)
    return _emit_table(args, run(spec), "joint.csv")


def cmd_complexity(args) -> int:
    Ns = [int(v) for v in parse_range(args.n)]
    table = emit_complexity_table(Ns, measure=not args.no_measure, seed=args.seed or 0)
    for N in Ns:
        cells = " ".join(f"{r.scheme}={int(r.value)}" for r in table.rows if r.axis == N)
        print(f"N={N} {cells}")
    return _emit_table(args, table, "complexity.csv")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--out", help="output file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="scenario override, repeatable")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto")

    parser = argparse.ArgumentParser(prog="thz-irs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("codebook", parents=[common], help="build and export a codebook")
    p.add_argument("--kind", choices=("td", "psd", "uniform"), default="td")
    p.add_argument("--na", type=int, default=32)
    p.add_argument("--n", type=int, default=81)
    p.add_argument("--num-rf", type=int, help="OMP-realize TD wide beams with this many RF chains")
    p.add_argument("--from", dest="from_file", help="re-export an existing codebook file")
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("pattern", parents=[common], help="beam-pattern CSV of one stage")
    p.add_argument("--kind", choices=("td", "psd", "uniform"), default="td")
    p.add_argument("--na", type=int, default=32)
    p.add_argument("--n", type=int, default=81)
    p.add_argument("--stage", type=int)
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("train", parents=[common], help="three-phase training for one realization")
    p.add_argument("--kind", choices=("td", "psd", "uniform"), default="td")
    p.add_argument("--n", type=int, default=81)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--power-dbm", type=float, default=30.0)
    g.add_argument("--snr-db", type=float, help="transmit power relative to the noise power")
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("beamform", parents=[common], help="hybrid design from a training file")
    p.add_argument("--outcome", required=True)
    p.add_argument("--scheme", choices=("dpa", "bd"), default="bd")
    p.add_argument("--power-dbm", type=float, default=30.0)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("detect-curve", parents=[common], help="detection rate vs SNR")
    p.add_argument("--snr", default="-10:5:40")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--na", type=int, default=32)
    p.add_argument("--n", type=int, default=81)
    p.add_argument("--codebooks", default="td,psd,uniform")
    p.set_defaults(func=cmd_detect_curve)

    p = sub.add_parser("rate-sweep", parents=[common], help="rate vs transmit power")
    p.add_argument("--power", default="0:10:40")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_rate_sweep)

    p = sub.add_parser("joint", parents=[common], help="training plus beamforming pipeline")
    p.add_argument("--power", default="0:10:40")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--n", type=int, default=243)
    p.add_argument("--codebooks", default="td")
    p.add_argument("--train-power-dbm", default="30", help="dBm, or 'none' for noiseless")
    p.set_defaults(func=cmd_joint)

    p = sub.add_parser("complexity", parents=[common], help="training-cost table")
    p.add_argument("--n", default="27")
    p.add_argument("--no-measure", action="store_true", help="skip instrumented runs")
    p.set_defaults(func=cmd_complexity)
    return parser


def _merge_ranges(argv: list[str]) -> list[str]:
    """Let ``--snr -10:5:40`` through argparse, which reads -10:... as a flag."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok in RANGE_FLAGS and i + 1 < len(argv) and _RANGE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _merge_ranges(list(sys.argv[1:] if argv is None else argv))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error=config field={err.field_path} message={json.dumps(err.message)}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, BeamformingError, TrainingError, FloatingPointError,
            ArithmeticError) as err:
        print(f"error=numeric type={type(err).__name__} message={json.dumps(str(err))}",
              file=sys.stderr)
        return 3
    except ValueError as err:
        print(f"error=config field={args.command} message={json.dumps(str(err))}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
