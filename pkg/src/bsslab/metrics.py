"""BSS-Eval style SDR / SIR with permutation resolution.

The time-invariant gain variant is used: the target component of an
estimate is its scalar projection onto the matched reference, and the
interference component is the remainder of its projection onto the span of
all references. Absolute values therefore differ from the 512-tap filter
variant; improvements over the mixture are comparable between methods.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInput, InvalidReference
from .signal import WaveTensor

CAP_DB = 100.0


@dataclass(frozen=True)
class EvalReport:
    """Per-reference metrics; ``permutation[k]`` is the reference matched to estimate ``k``."""

    sdr_db: np.ndarray
    sir_db: np.ndarray
    permutation: tuple
    sdr_improvement_db: Optional[np.ndarray] = None
    sir_improvement_db: Optional[np.ndarray] = None


def _db(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 10.0 * np.log10(num / den)
    val = np.where(den <= 0, CAP_DB, val)
    return np.clip(np.nan_to_num(val, nan=CAP_DB), -CAP_DB, CAP_DB)


def _as_array(x):
    return x.samples if isinstance(x, WaveTensor) else np.atleast_2d(np.asarray(x, dtype=float))


def metric_matrices(estimates, references):
    """SDR and SIR of every estimate against every reference, shape ``(N_est, N_ref)``."""
    E, R = _as_array(estimates), _as_array(references)
    if E.shape != R.shape:
        raise InvalidInput(f"estimates {E.shape} and references {R.shape} differ in shape")
    energy = np.sum(R**2, axis=1)
    if np.any(energy <= 0):
        raise InvalidReference("a reference signal has zero energy")
    gram = R @ R.T
    cross = E @ R.T  # (est, ref)
    coef = np.linalg.lstsq(gram, cross.T, rcond=None)[0].T  # projection onto span
    proj = coef @ R
    artif = E - proj
    artif_energy = np.sum(artif**2, axis=1)
    proj_energy = np.sum(proj**2, axis=1)
    # target = (<e, r_j> / |r_j|^2) r_j; interference = proj - target
    target_energy = cross**2 / energy[None, :]
    interf_energy = np.maximum(proj_energy[:, None] - target_energy, 0.0)
    sir = _db(target_energy, interf_energy)
    sdr = _db(target_energy, interf_energy + artif_energy[:, None])
    return sdr, sir


def best_permutation(scores) -> tuple:
    """Bijection ``perm`` maximizing ``sum_k scores[k, perm[k]]``."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if n <= 6:
        best, best_val = None, -np.inf
        for perm in itertools.permutations(range(n)):
            val = scores[np.arange(n), perm].sum()
            if val > best_val:
                best, best_val = perm, val
        return tuple(int(p) for p in best)
    rows, cols = linear_sum_assignment(scores, maximize=True)
    return tuple(int(c) for c in cols[np.argsort(rows)])


def _matched(estimates, references):
    sdr, sir = metric_matrices(estimates, references)
    perm = best_permutation(sir)
    n = len(perm)
    by_ref_sdr = np.empty(n)
    by_ref_sir = np.empty(n)
    for k, j in enumerate(perm):
        by_ref_sdr[j] = sdr[k, j]
        by_ref_sir[j] = sir[k, j]
    return by_ref_sdr, by_ref_sir, perm


def evaluate(estimates, references, mixture=None) -> EvalReport:
    """Score separated signals against reference source images.

    Args:
        estimates: ``(N, samples)`` array or WaveTensor.
        references: matching ``(N, samples)`` references.
        mixture: optional unprocessed signals ``(N, samples)`` scored the
            same way; their metrics are subtracted to give improvements.
    """
    sdr, sir, perm = _matched(estimates, references)
    if mixture is None:
        return EvalReport(sdr, sir, perm)
    sdr0, sir0, _ = _matched(mixture, references)
    return EvalReport(sdr, sir, perm, sdr - sdr0, sir - sir0)
