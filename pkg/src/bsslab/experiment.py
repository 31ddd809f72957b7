"""Config-driven experiment runner.

One run is a ``(t60, trial, method)`` triple: sources are generated or
loaded, mixed in the simulated room, separated, back-projected, resynthesized
and scored against the reference-microphone source images.

Report files written to ``output_dir``:

``results.csv``
    ``method, t60_ms, trial, source, O, K, iterations, seed, status,
    sdr_imp, sir_imp``; one row per source per run. ``status`` is ``ok`` or
    ``failed``; failed rows leave both metrics empty.
``convergence.csv``
    ``method, t60_ms, trial, iteration, cost``; iteration 0 is the cost at
    initialization.
``timing.csv``
    ``method, t60_ms, trial, runtime_s``. Kept apart from ``results.csv`` so
    that the latter is byte-identical across repeated runs.
``summary.json``
    medians of ``sdr_imp`` and ``sir_imp`` per ``(method, t60)`` cell.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import metrics, room, separation, signal
from .errors import InvalidConfig, InvalidInput
from .separation import AlgoConfig
from .signal import Spectrogram, StftConfig, WaveTensor
from .synth import make_synthetic_sources

logger = logging.getLogger(__name__)

RESULT_FIELDS = ("method", "t60_ms", "trial", "source", "O", "K", "iterations", "seed",
                 "status", "sdr_imp", "sir_imp")
CONVERGENCE_FIELDS = ("method", "t60_ms", "trial", "iteration", "cost")
TIMING_FIELDS = ("method", "t60_ms", "trial", "runtime_s")
REVERB_T60_GRID = tuple(float(t) for t in range(0, 650, 50))
ARRAY_KEYS = ("dims", "spacing", "distance", "angles_deg", "height", "speed_of_sound",
              "sample_rate", "max_order")


@dataclass(frozen=True)
class MethodSpec:
    """A separation method plus the label it is reported under."""

    algo: AlgoConfig
    label: str


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a batch of separation runs.

    ``scenario`` is ``"anechoic"`` (the default two-microphone geometry with
    only the direct path) or a dict. The dict either lists explicit
    ``dims``, ``mic_positions`` and ``src_positions`` or overrides the
    parameters of :func:`bsslab.room.array_scenario`. ``sources`` holds one
    entry per source, a WAV path or a synthetic recipe dict. ``t60_grid`` is in
    milliseconds.
    """

    scenario: Union[str, dict] = "anechoic"
    sources: tuple = ({"recipe": "am_harmonic", "rank": 16}, {"recipe": "am_harmonic", "rank": 16})
    methods: tuple = (MethodSpec(AlgoConfig("cilrma", 200), "cilrma"),)
    trials: int = 1
    t60_grid: tuple = (0.0,)
    output_dir: str = "results"
    seed: int = 0
    duration: float = 10.0
    stft: StftConfig = field(default_factory=StftConfig)
    ref_channel: int = 0
    save_audio: bool = False

    def __post_init__(self):
        if not self.methods:
            raise InvalidConfig("at least one method is required")
        if int(self.trials) < 1:
            raise InvalidConfig("trials must be at least 1")
        if not self.t60_grid:
            raise InvalidConfig("t60_grid must not be empty")
        if any(not t >= 0 for t in self.t60_grid):
            raise InvalidConfig("t60 values must be nonnegative")
        if self.scenario == "anechoic" and any(t > 0 for t in self.t60_grid):
            raise InvalidConfig("an anechoic scenario needs t60_grid == [0]")
        if not isinstance(self.scenario, (str, dict)) or (isinstance(self.scenario, str)
                                                          and self.scenario != "anechoic"):
            raise InvalidConfig("scenario must be 'anechoic' or a dict")
        if len(self.sources) < 1:
            raise InvalidConfig("at least one source is required")
        for src in self.sources:
            if not isinstance(src, (str, dict)):
                raise InvalidConfig(f"source entries must be paths or recipe dicts, got {src!r}")
        if self.duration <= 0:
            raise InvalidConfig("duration must be positive")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise InvalidConfig(f"method labels must be unique, got {labels}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        """Build from a parsed JSON document; relative WAV paths resolve against ``base_dir``."""
        d = dict(d)
        known = {"scenario", "sources", "methods", "trials", "t60_grid", "output_dir", "seed",
                 "duration", "stft", "ref_channel", "save_audio"}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            methods = tuple(_method_from_dict(m) for m in d.pop("methods", [{"method": "cilrma"}]))
            stft_cfg = StftConfig(**d.pop("stft", {}))
        except TypeError as err:
            raise InvalidConfig(str(err)) from err
        except InvalidInput as err:
            raise InvalidConfig(str(err)) from err
        sources = []
        for src in d.pop("sources", list(cls.sources)):
            if isinstance(src, str) and base_dir is not None and not Path(src).is_absolute():
                src = str(Path(base_dir) / src)
            sources.append(src)
        t60 = tuple(float(t) for t in d.pop("t60_grid", [0.0]))
        return cls(methods=methods, stft=stft_cfg, sources=tuple(sources), t60_grid=t60, **d)

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "sources": list(self.sources),
            "methods": [dict(_algo_dict(m.algo), label=m.label) for m in self.methods],
            "trials": self.trials,
            "t60_grid": list(self.t60_grid),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "duration": self.duration,
            "stft": {"fft_size": self.stft.fft_size, "hop": self.stft.hop, "window": self.stft.window},
            "ref_channel": self.ref_channel,
            "save_audio": self.save_audio,
        }
        return out


def _algo_dict(a: AlgoConfig) -> dict:
    return {"method": a.method, "iterations": a.iterations, "o_blocks": a.o_blocks,
            "k_bases": a.k_bases, "sigma": a.sigma, "block_rule": a.block_rule}


def _method_from_dict(m) -> MethodSpec:
    if isinstance(m, str):
        m = {"method": m}
    m = dict(m)
    label = m.pop("label", m.get("method", "cilrma"))
    if "seed" in m:
        raise InvalidConfig("method seeds are derived from the experiment seed")
    return MethodSpec(AlgoConfig(**m), str(label))


def protocol_config(**overrides) -> ExperimentConfig:
    """The reverberant protocol: full geometry, 0-600 ms grid, 100 trials, three methods."""
    base = dict(
        scenario={"dims": [8.0, 8.0, 3.0], "spacing": 0.06, "distance": 2.0,
                  "angles_deg": [80.0, 110.0], "height": 1.5, "sample_rate": 16000},
        methods=tuple(MethodSpec(AlgoConfig(m, 200), m) for m in separation.METHODS),
        trials=100,
        t60_grid=REVERB_T60_GRID,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config. Raises FileNotFoundError for a missing file."""
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise InvalidConfig(f"{path}: {err}") from err
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


def check_files(cfg: ExperimentConfig) -> None:
    """Raise FileNotFoundError if a referenced WAV file is missing."""
    for src in cfg.sources:
        if isinstance(src, str) and not Path(src).is_file():
            raise FileNotFoundError(f"source file not found: {src}")


def scenario_for(cfg: ExperimentConfig, t60_ms: float) -> room.RoomScenario:
    """Room scenario of ``cfg`` at reverberation time ``t60_ms``."""
    t60 = t60_ms / 1000.0
    if cfg.scenario == "anechoic":
        return room.array_scenario(t60)
    sc = dict(cfg.scenario)
    try:
        if "mic_positions" in sc or "src_positions" in sc:
            sc.pop("t60", None)
            return room.RoomScenario(t60=t60, **sc)
        extra = set(sc) - set(ARRAY_KEYS)
        if extra:
            raise InvalidConfig(f"unknown scenario keys: {sorted(extra)}")
        return room.array_scenario(t60, **sc)
    except TypeError as err:
        raise InvalidConfig(f"bad scenario: {err}") from err


def trial_seeds(seed: int, trials: int) -> list:
    """Independent 32-bit seeds, one per trial, derived from the experiment seed."""
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(c.generate_state(1)[0]) for c in children]


def load_sources(cfg: ExperimentConfig, trial_seed: int, sample_rate: int) -> WaveTensor:
    """Source signals of one trial: WAV files or synthetic recipes, one per source."""
    n = len(cfg.sources)
    rows = []
    for k, src in enumerate(cfg.sources):
        if isinstance(src, str):
            wave = signal.read_wav(src)
            if wave.sample_rate != sample_rate:
                raise InvalidInput(f"{src}: sample rate {wave.sample_rate} Hz, scenario uses {sample_rate} Hz")
            rows.append(wave.samples[0])
        else:
            synth = make_synthetic_sources(src, n_sources=n, duration=cfg.duration,
                                           sample_rate=sample_rate, seed=trial_seed)
            rows.append(synth.samples[k])
    length = max(len(r) for r in rows)
    out = np.zeros((n, length))
    for k, r in enumerate(rows):
        out[k, : len(r)] = r
    return WaveTensor(out, sample_rate)


@dataclass
class RunResult:
    label: str
    algo: AlgoConfig
    t60_ms: float
    trial: int
    seed: int
    status: str
    sdr_imp: Optional[np.ndarray] = None
    sir_imp: Optional[np.ndarray] = None
    cost_trace: list = field(default_factory=list)
    runtime_s: float = 0.0
    audio: Optional[WaveTensor] = None
    message: str = ""


def run_single(mixture: WaveTensor, images: np.ndarray, spec: MethodSpec, cfg: ExperimentConfig,
               t60_ms: float, trial: int, seed: int) -> RunResult:
    """Separate and score one mixture; numerical failures yield a ``failed`` result."""
    algo = replace(spec.algo, seed=seed)
    start = time.perf_counter()
    try:
        X = signal.stft(mixture, cfg.stft)
        state = separation.separate(X, algo, ref_channel=cfg.ref_channel)
        est_spec = Spectrogram(state.projected, cfg.stft.hop, cfg.stft.fft_size, mixture.sample_rate)
        est = signal.istft(est_spec, cfg.stft, mixture.n_samples)
        refs = images[:, cfg.ref_channel, :]
        baseline = np.tile(mixture.samples[cfg.ref_channel], (len(refs), 1))
        report = metrics.evaluate(est, refs, baseline)
        if not np.all(np.isfinite(state.cost_trace)):
            raise FloatingPointError("non-finite cost")
    except (ArithmeticError, np.linalg.LinAlgError) as err:
        logger.warning("%s t60=%g trial=%d failed: %s", spec.label, t60_ms, trial, err)
        return RunResult(spec.label, algo, t60_ms, trial, seed, "failed",
                         runtime_s=time.perf_counter() - start, message=str(err))
    return RunResult(spec.label, algo, t60_ms, trial, seed, "ok", report.sdr_improvement_db,
                     report.sir_improvement_db, list(state.cost_trace),
                     time.perf_counter() - start, est if cfg.save_audio else None)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


class ReportWriter:
    """Serialized CSV writer; rows of a run are written only once the run completes."""

    def __init__(self, out_dir: Path, n_sources: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.n_sources = n_sources
        self.cells: dict = {}
        self._files = {}
        for name, fields in (("results", RESULT_FIELDS), ("convergence", CONVERGENCE_FIELDS),
                             ("timing", TIMING_FIELDS)):
            fh = open(self.out_dir / f"{name}.csv", "w", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            self._files[name] = (fh, writer)

    def add(self, r: RunResult) -> None:
        _, res = self._files["results"]
        cell = self.cells.setdefault((r.label, r.t60_ms), {"sdr_imp": [], "sir_imp": [], "failed": 0})
        rows = []
        for n in range(self.n_sources):
            if r.status == "ok":
                metrics_cols = [_fmt(r.sdr_imp[n]), _fmt(r.sir_imp[n])]
            else:
                metrics_cols = ["", ""]
            rows.append([r.label, _fmt(r.t60_ms), r.trial, n, r.algo.o_blocks, r.algo.k_bases,
                         r.algo.iterations, r.seed, r.status] + metrics_cols)
        res.writerows(rows)
        if r.status == "ok":
            cell["sdr_imp"].extend(float(v) for v in r.sdr_imp)
            cell["sir_imp"].extend(float(v) for v in r.sir_imp)
            _, conv = self._files["convergence"]
            conv.writerows([r.label, _fmt(r.t60_ms), r.trial, t, f"{c:.10e}"]
                           for t, c in enumerate(r.cost_trace))
        else:
            cell["failed"] += 1
        _, timing = self._files["timing"]
        timing.writerow([r.label, _fmt(r.t60_ms), r.trial, f"{r.runtime_s:.3f}"])
        for fh, _ in self._files.values():
            fh.flush()

    def summary(self) -> dict:
        cells = []
        for (label, t60), c in self.cells.items():
            cells.append({
                "method": label,
                "t60_ms": t60,
                "median_sdr_imp": float(np.median(c["sdr_imp"])) if c["sdr_imp"] else None,
                "median_sir_imp": float(np.median(c["sir_imp"])) if c["sir_imp"] else None,
                "n_ok": len(c["sdr_imp"]) // self.n_sources,
                "n_failed": c["failed"],
            })
        return {"cells": cells}

    def close(self) -> dict:
        for fh, _ in self._files.values():
            fh.close()
        summary = self.summary()
        with open(self.out_dir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary


def _n_workers() -> int:
    env = os.environ.get("BSS_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise InvalidConfig(f"BSS_LAB_THREADS must be an integer, got {env!r}") from err
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> dict:
    """Run every ``(t60, trial, method)`` combination of ``cfg`` and write the reports.

    Runs may execute concurrently (``BSS_LAB_THREADS`` caps the worker
    count); rows are always written in grid order, so the CSV files do not
    depend on scheduling.

    Returns:
        The summary document also written to ``summary.json``.

    Raises:
        FileNotFoundError: a referenced source file is missing.
        InvalidConfig: the scenario or methods are inconsistent.
    """
    check_files(cfg)
    out_dir = Path(output_dir if output_dir is not None else cfg.output_dir)
    seeds = trial_seeds(cfg.seed, cfg.trials)
    n_sources = len(cfg.sources)
    writer = ReportWriter(out_dir, n_sources)
    try:
        with ThreadPoolExecutor(max_workers=_n_workers()) as pool:
            for t60_ms in cfg.t60_grid:
                scn = scenario_for(cfg, t60_ms)
                if scn.n_sources != n_sources or scn.n_mics != n_sources:
                    raise InvalidConfig(
                        f"scenario has {scn.n_mics} mics and {scn.n_sources} sources; "
                        f"config lists {n_sources} sources"
                    )
                rir = room.image_rir(scn)
                pending = []
                for trial, seed in enumerate(seeds):
                    srcs = load_sources(cfg, seed, scn.sample_rate)
                    mixture, images = room.simulate_mixture(srcs, rir)
                    for spec in cfg.methods:
                        pending.append(pool.submit(run_single, mixture, images, spec, cfg,
                                                   t60_ms, trial, seed))
                for fut in pending:
                    result = fut.result()
                    writer.add(result)
                    if result.audio is not None:
                        _save_audio(out_dir, result)
    finally:
        summary = writer.close()
    return summary


def _save_audio(out_dir: Path, r: RunResult) -> None:
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(exist_ok=True)
    name = f"{r.label}_t{int(round(r.t60_ms))}_trial{r.trial}.wav"
    signal.write_wav(audio_dir / name, r.audio)


def simulate(cfg: ExperimentConfig, out_dir) -> list:
    """Write the mixtures, source images and RIRs of trial 0 for every grid point.

    Returns:
        The written directories, one per t60 value.
    """
    check_files(cfg)
    out_dir = Path(out_dir)
    seed = trial_seeds(cfg.seed, 1)[0]
    written = []
    for t60_ms in cfg.t60_grid:
        scn = scenario_for(cfg, t60_ms)
        rir = room.image_rir(scn)
        srcs = load_sources(cfg, seed, scn.sample_rate)
        mixture, images = room.simulate_mixture(srcs, rir)
        d = out_dir / f"t60_{int(round(t60_ms))}ms"
        d.mkdir(parents=True, exist_ok=True)
        signal.write_wav(d / "mixture.wav", mixture)
        for n in range(images.shape[0]):
            signal.write_wav(d / f"image_{n}.wav", WaveTensor(images[n], scn.sample_rate))
            signal.write_wav(d / f"rir_{n}.wav", WaveTensor(rir.taps[:, n, :], scn.sample_rate))
        written.append(d)
    return written


__all__ = [
    "ExperimentConfig", "MethodSpec", "RunResult", "RESULT_FIELDS", "CONVERGENCE_FIELDS",
    "TIMING_FIELDS", "REVERB_T60_GRID", "protocol_config", "load_config", "run_experiment",
    "run_single", "simulate", "scenario_for", "trial_seeds", "load_sources",
]
