"""
Reading the cluster matrix of cILRMA
====================================

cILRMA models every source variance as a weighted sum of spectral blocks.
After separation, row ``n`` of ``G`` shows how much each block contributes
to source ``n``. Here one source is built from many more notes than the
other, so it should claim more of the blocks.
"""
import logging

import numpy as np

from bsslab import (
    AlgoConfig, StftConfig, WaveTensor, array_scenario, image_rir, run_cilrma, simulate_mixture, stft,
)
from bsslab.synth import make_synthetic_sources

logging.disable(logging.WARNING)

rich = make_synthetic_sources({"recipe": "am_harmonic", "rank": 12}, 2, 5.0, seed=3).samples[0]
sparse = make_synthetic_sources({"recipe": "am_harmonic", "rank": 2}, 2, 5.0, seed=3).samples[1]
srcs = WaveTensor(np.stack([rich, sparse]), 16000)

mixture, _ = simulate_mixture(srcs, image_rir(array_scenario()))
X = stft(mixture, StftConfig())

state = run_cilrma(X, AlgoConfig("cilrma", iterations=150, o_blocks=6, k_bases=4))
G = state.model.G
share = G / G.sum(axis=1, keepdims=True)
np.set_printoptions(precision=2, suppress=True)
print("normalized cluster matrix (rows: separated outputs, columns: blocks)")
print(share)
print("dominant output per block:", share.argmax(axis=0))
print("row sums of G (the penalty pulls them below 1):", G.sum(axis=1))
