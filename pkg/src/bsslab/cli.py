"""``bss-lab`` command line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from . import experiment, metrics, signal
from .errors import BssLabError
from .experiment import MethodSpec
from .separation import METHODS, AlgoConfig

EXIT_OK = 0
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bss-lab",
        description="Determined blind source separation experiments (cILRMA, ILRMA, AuxIVA).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log numerical warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment described by a JSON config")
    run.add_argument("--config", required=True, help="experiment JSON file")
    run.add_argument("--method", choices=METHODS, help="run only this method")
    run.add_argument("--t60", type=float, help="single reverberation time in ms")
    run.add_argument("--trials", type=int, help="number of trials")
    run.add_argument("--seed", type=int, help="experiment seed")
    run.add_argument("--out", help="output directory")

    ev = sub.add_parser("eval", help="score separated WAV files against references")
    ev.add_argument("--est", nargs="+", required=True, help="estimate WAV files")
    ev.add_argument("--ref", nargs="+", required=True, help="reference WAV files")
    ev.add_argument("--mix", nargs="+", help="unprocessed signals for improvement figures")

    sim = sub.add_parser("simulate", help="write mixtures, images and RIRs for a config")
    sim.add_argument("--config", required=True, help="experiment JSON file")
    sim.add_argument("--out", required=True, help="output directory")
    return parser


def _apply_overrides(cfg: experiment.ExperimentConfig, args) -> experiment.ExperimentConfig:
    changes = {}
    if args.method is not None:
        chosen = tuple(m for m in cfg.methods if m.algo.method == args.method)
        changes["methods"] = chosen or (MethodSpec(AlgoConfig(args.method), args.method),)
    if args.t60 is not None:
        changes["t60_grid"] = (float(args.t60),)
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    return replace(cfg, **changes)


def _cmd_run(args) -> int:
    cfg = _apply_overrides(experiment.load_config(args.config), args)
    summary = experiment.run_experiment(cfg)
    for cell in summary["cells"]:
        sdr, sir = cell["median_sdr_imp"], cell["median_sir_imp"]
        shown = "failed" if sdr is None else f"SDRi {sdr:6.2f} dB  SIRi {sir:6.2f} dB"
        print(f"{cell['method']:>10s}  t60 {cell['t60_ms']:5.0f} ms  {shown}  "
              f"({cell['n_ok']} ok, {cell['n_failed']} failed)")
    print(f"reports written to {cfg.output_dir}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    est = signal.read_wavs(args.est)
    ref = signal.read_wavs(args.ref)
    if est.sample_rate != ref.sample_rate:
        raise BssLabError("estimates and references use different sample rates")
    length = min(est.n_samples, ref.n_samples)
    mix = None
    if args.mix:
        mix = signal.read_wavs(args.mix).samples[:, :length]
        if len(mix) == 1:
            mix = np.tile(mix, (est.n_channels, 1))
    report = metrics.evaluate(est.samples[:, :length], ref.samples[:, :length], mix)
    doc = {
        "sdr_db": report.sdr_db.tolist(),
        "sir_db": report.sir_db.tolist(),
        "permutation": list(report.permutation),
    }
    if mix is not None:
        doc["sdr_improvement_db"] = report.sdr_improvement_db.tolist()
        doc["sir_improvement_db"] = report.sir_improvement_db.tolist()
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = experiment.load_config(args.config)
    for d in experiment.simulate(cfg, args.out):
        print(d)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "eval": _cmd_eval, "simulate": _cmd_simulate}[args.command]
    try:
        return handler(args)
    except FileNotFoundError as err:
        print(f"bss-lab: file not found: {err.filename or err}", file=sys.stderr)
        return EXIT_USAGE
    except BssLabError as err:
        print(f"bss-lab: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
