"""Determined multichannel blind source separation with clustered source models."""
from .errors import (
    BssLabError, InvalidConfig, InvalidInput, InvalidReference, InvalidScenario, SingularUpdate,
    UnsupportedGeometry,
)
from .experiment import ExperimentConfig, load_config, protocol_config, run_experiment
from .metrics import EvalReport, best_permutation, evaluate
from .models import NbtdParams, NmfParams, init_model, init_nmf, nbtd_variance, nmf_variance
from .room import RoomScenario, Rir, array_scenario, image_rir, sabine_absorption, simulate_mixture
from .separation import (
    AlgoConfig, SeparationState, back_project, neg_log_likelihood, run_auxiva, run_cilrma, run_ilrma,
    separate,
)
from .signal import Spectrogram, StftConfig, WaveTensor, istft, read_wav, stft, write_wav
from .synth import make_synthetic_sources

__version__ = "0.1.0"
