"""Determined BSS drivers: cILRMA, ILRMA and AuxIVA.

Shapes used throughout:

* observation ``X``: ``(M, I, J)`` complex, channels by bins by frames;
* demixing stack ``D``: ``(I, N, M)`` complex, ``y[:, i, j] = D[i] @ X[:, i, j]``;
* estimates / variances: ``(N, I, J)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import models
from .errors import InvalidConfig, SingularUpdate, UnsupportedGeometry
from .models import EPS, NbtdParams, NmfParams
from .signal import Spectrogram

logger = logging.getLogger(__name__)

METHODS = ("cilrma", "ilrma", "auxiva")
COND_LIMIT = 1e12


@dataclass(frozen=True)
class AlgoConfig:
    """Settings for one separation run.

    ``o_blocks``, ``k_bases`` and ``sigma`` are ignored where a method has no
    use for them (AuxIVA has no source model; ILRMA uses ``k_bases`` only).
    ``block_rule`` selects the cILRMA basis/activation update, see
    :data:`bsslab.models.BLOCK_RULES`.
    """

    method: str = "cilrma"
    iterations: int = 100
    o_blocks: int = 4
    k_bases: int = 10
    sigma: float = 1.0
    seed: int = 0
    block_rule: str = "joint"

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown method {self.method!r}; expected one of {METHODS}")
        if int(self.iterations) < 1:
            raise InvalidConfig("iterations must be positive")
        if int(self.o_blocks) < 1 or int(self.k_bases) < 1:
            raise InvalidConfig("o_blocks and k_bases must be positive")
        if not self.sigma >= 0:
            raise InvalidConfig("sigma must be nonnegative")
        if self.block_rule not in models.BLOCK_RULES:
            raise InvalidConfig(f"unknown block_rule {self.block_rule!r}")


@dataclass
class SeparationState:
    """Result of a separation run.

    ``estimates`` is always ``D @ X`` (no scale restoration); ``projected``
    holds the back-projected estimates once a run has finished.
    ``cost_trace[0]`` is the cost at initialization and ``cost_trace[t]``
    the cost after sweep ``t``.
    """

    demix: np.ndarray
    model: Optional[Union[NbtdParams, NmfParams]]
    estimates: np.ndarray
    cost_trace: list = field(default_factory=list)
    projected: Optional[np.ndarray] = None


def _bins(obs) -> np.ndarray:
    X = obs.bins if isinstance(obs, Spectrogram) else np.asarray(obs)
    if X.ndim != 3:
        raise UnsupportedGeometry(f"observation must be (M, I, J), got {X.shape}")
    return X.astype(complex, copy=False)


def demix(D: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply ``D`` bin-wise: returns ``(N, I, J)``."""
    return np.einsum("inm,mij->nij", D, X)


def weighted_covariances(X: np.ndarray, lam_n: np.ndarray) -> np.ndarray:
    """``(1/J) sum_j x_ij x_ij^H / lam_n[i, j]`` for every bin, shape ``(I, M, M)``."""
    J = X.shape[2]
    Xw = X / lam_n[None]
    return np.einsum("aij,bij->iab", Xw, X.conj()) / J


def weighted_covariance(obs, lam: np.ndarray, n: int, i: int) -> np.ndarray:
    """Weighted covariance of bin ``i`` for source ``n``."""
    X = _bins(obs)[:, i, :]
    w = 1.0 / np.asarray(lam)[n, i, :]
    return (X * w) @ X.conj().T / X.shape[1]


def ip_update_row(D: np.ndarray, O: np.ndarray, n: int, cond_limit: float = COND_LIMIT,
                  quad: Optional[Callable] = None) -> np.ndarray:
    """Iterative-projection update of demixing row ``n``.

    Solves ``(D O) d = e_n`` and rescales so that ``d^H O d = 1``. The new
    row of ``D`` is ``d.conj()``. Leading batch dimensions of ``D``
    (``(..., N, M)``) and ``O`` (``(..., M, M)``) are broadcast.

    Args:
        quad: optional callable returning ``d^H O d`` for an unnormalized
            ``d``. Callers that know the factors of ``O`` can evaluate the
            form as a sum of nonnegative terms, which stays accurate when
            ``O`` is badly conditioned.

    Raises:
        SingularUpdate: if ``cond(D O)`` exceeds ``cond_limit``.
    """
    D = np.asarray(D)
    O = np.asarray(O)
    A = D @ O
    cond = np.linalg.cond(A)
    bad = ~(cond <= cond_limit)
    if np.any(bad):
        raise SingularUpdate(
            f"ill-conditioned IP system for row {n} (cond {np.max(np.where(bad, cond, 0)):.3g})",
            bins=np.flatnonzero(bad), condition=cond,
        )
    e = np.zeros(A.shape[:-1], dtype=A.dtype)
    e[..., n] = 1.0
    d = np.linalg.solve(A, e[..., None])[..., 0]
    if quad is None:
        q = np.einsum("...a,...ab,...b->...", d.conj(), O, d).real
    else:
        q = quad(d)
    return d / np.sqrt(q)[..., None]


def _spatial_update(D, X, lam, probe=None):
    """Update every row of every ``D_i`` in place, regularizing once on failure.

    ``probe(n, d, O, lam_n, ridge)`` is called after each batched row
    update with the normalized solutions, the covariances used and the
    diagonal loading added per bin (zero where none was needed).
    """
    N = D.shape[1]
    M, I, J = X.shape
    for n in range(N):
        O = weighted_covariances(X, lam[n])
        ridge = np.zeros(I)

        def quad(d):
            y = np.einsum("ia,aij->ij", d.conj(), X)
            return np.mean(np.abs(y) ** 2 / lam[n], axis=1) + ridge * np.sum(np.abs(d) ** 2, axis=1)

        try:
            d = ip_update_row(D, O, n, quad=quad)
        except SingularUpdate as err:
            idx = err.bins
            ridge[idx] = 1e-10 * np.trace(O[idx], axis1=1, axis2=2).real / M
            O[idx] += ridge[idx][:, None, None] * np.eye(M)
            logger.warning("regularizing %d bins for source %d", len(idx), n)
            try:
                d = ip_update_row(D, O, n, quad=quad)
            except SingularUpdate as err2:
                raise SingularUpdate(
                    f"IP update for source {n} still singular after regularization "
                    f"in bins {err2.bins.tolist()}", bins=err2.bins, condition=err2.condition,
                ) from err
        D[:, n, :] = d.conj()
        if probe is not None:
            probe(n, d, O, lam[n], ridge)
    return D


def neg_log_likelihood(obs, demix_stack: np.ndarray, model) -> float:
    """Negative log-likelihood of the rank-one Gaussian model, up to constants.

    ``sum_ij [ sum_n |y_nij|^2 / lam_nij + log lam_nij - 2 log|det D_i| ]``
    plus ``sigma * (sum G - N)`` for the clustered model. ``model`` may be
    :class:`NbtdParams`, :class:`NmfParams` or a variance array ``(N, I, J)``.
    """
    X = _bins(obs)
    D = np.asarray(demix_stack)
    Y = demix(D, X)
    if isinstance(model, (NbtdParams, NmfParams)):
        lam = models.model_variance(model)
    else:
        lam = np.maximum(np.asarray(model, dtype=float), EPS)
    J = X.shape[2]
    _, logdet = np.linalg.slogdet(D)
    cost = np.sum(np.abs(Y) ** 2 / lam + np.log(lam)) - 2.0 * J * np.sum(logdet)
    if isinstance(model, NbtdParams):
        cost += model.penalty()
    return float(cost)


def _frame_variance(Y: np.ndarray) -> np.ndarray:
    """Spherical prior variance ``(1/I) sum_i |y|^2`` broadcast to ``(N, I, J)``."""
    r = np.maximum(np.mean(np.abs(Y) ** 2, axis=1, keepdims=True), EPS)
    return np.broadcast_to(r, Y.shape)


def _check_determined(X, n_sources):
    if n_sources != X.shape[0]:
        raise UnsupportedGeometry(
            f"determined separation needs as many sources as channels "
            f"(got N={n_sources}, M={X.shape[0]})"
        )


def _initial_demix(init_demix, M, I):
    if init_demix is None:
        return np.tile(np.eye(M, dtype=complex), (I, 1, 1))
    D = np.array(init_demix, dtype=complex)
    if D.shape != (I, M, M):
        raise UnsupportedGeometry(f"initial demixing stack must be {(I, M, M)}, got {D.shape}")
    return D


def _finish(D, X, model, Y, trace, ref_channel):
    state = SeparationState(D, model, Y, trace)
    state.projected = back_project(state, X, ref_channel)
    return state


def run_cilrma(obs, cfg: AlgoConfig, init: Optional[NbtdParams] = None,
               cluster_updates: bool = True, callback: Optional[Callable] = None,
               ip_probe: Optional[Callable] = None, ref_channel: int = 0,
               init_demix: Optional[np.ndarray] = None) -> SeparationState:
    """ILRMA with the clustered source model.

    Each sweep updates ``T``, ``V`` and (unless ``cluster_updates`` is false)
    ``G`` against the current separated power, recomputes the variances and
    then updates every demixing row by iterative projection.

    Args:
        obs: observation spectrogram or array ``(M, I, J)``.
        cfg: run settings; ``o_blocks``, ``k_bases``, ``sigma``, ``seed`` and
            ``block_rule`` are used.
        init: initial model; drawn with :func:`bsslab.models.init_model`
            when omitted.
        cluster_updates: set to ``False`` to keep ``G`` frozen.
        callback: called as ``callback(t, state)`` after every sweep.
        ip_probe: called as ``ip_probe(n, d, O, lam_n, ridge)`` after each batched
            row update, see :func:`_spatial_update`.
        ref_channel: microphone the estimates are back-projected to.
        init_demix: initial demixing stack ``(I, N, M)``; identity when omitted.
    """
    X = _bins(obs)
    M, I, J = X.shape
    if init is None:
        model = models.init_model(M, cfg.o_blocks, cfg.k_bases, I, J, cfg.seed, cfg.sigma)
    else:
        model = init
    _check_determined(X, model.n_sources)
    D = _initial_demix(init_demix, M, I)
    Y = demix(D, X)
    trace = [neg_log_likelihood(X, D, model)]
    for t in range(1, cfg.iterations + 1):
        power = np.abs(Y) ** 2
        model = models.update_bases(model, power, cfg.block_rule)
        model = models.update_activations(model, power, cfg.block_rule)
        if cluster_updates:
            model = models.update_clusters(model, power)
        lam = models.nbtd_variance(model)
        _spatial_update(D, X, lam, ip_probe)
        Y = demix(D, X)
        trace.append(neg_log_likelihood(X, D, model))
        if callback is not None:
            callback(t, SeparationState(D.copy(), model, Y, trace))
    return _finish(D, X, model, Y, trace, ref_channel)


def run_ilrma(obs, cfg: AlgoConfig, init: Optional[NmfParams] = None,
              callback: Optional[Callable] = None, ip_probe: Optional[Callable] = None,
              ref_channel: int = 0, init_demix: Optional[np.ndarray] = None) -> SeparationState:
    """ILRMA with a per-source NMF model of ``cfg.k_bases`` bases."""
    X = _bins(obs)
    M, I, J = X.shape
    model = init if init is not None else models.init_nmf(M, cfg.k_bases, I, J, cfg.seed)
    _check_determined(X, model.n_sources)
    D = _initial_demix(init_demix, M, I)
    Y = demix(D, X)
    trace = [neg_log_likelihood(X, D, model)]
    for t in range(1, cfg.iterations + 1):
        model = models.update_nmf(model, np.abs(Y) ** 2)
        lam = models.nmf_variance(model)
        _spatial_update(D, X, lam, ip_probe)
        Y = demix(D, X)
        trace.append(neg_log_likelihood(X, D, model))
        if callback is not None:
            callback(t, SeparationState(D.copy(), model, Y, trace))
    return _finish(D, X, model, Y, trace, ref_channel)


def run_auxiva(obs, cfg: AlgoConfig, callback: Optional[Callable] = None,
               ip_probe: Optional[Callable] = None, ref_channel: int = 0,
               init_demix: Optional[np.ndarray] = None) -> SeparationState:
    """AuxIVA with a time-varying spherical Gaussian source prior.

    The variance of source ``n`` in frame ``j`` is the mean power of
    ``y_nij`` over bins, so the traced cost is the IVA contrast (up to a
    constant) and is non-increasing.
    """
    X = _bins(obs)
    M, I, J = X.shape
    D = _initial_demix(init_demix, M, I)
    Y = demix(D, X)
    trace = [neg_log_likelihood(X, D, _frame_variance(Y))]
    for t in range(1, cfg.iterations + 1):
        _spatial_update(D, X, _frame_variance(Y), ip_probe)
        Y = demix(D, X)
        trace.append(neg_log_likelihood(X, D, _frame_variance(Y)))
        if callback is not None:
            callback(t, SeparationState(D.copy(), None, Y, trace))
    return _finish(D, X, None, Y, trace, ref_channel)


def separate(obs, cfg: AlgoConfig, **kwargs) -> SeparationState:
    """Dispatch to the driver named by ``cfg.method``."""
    runner = {"cilrma": run_cilrma, "ilrma": run_ilrma, "auxiva": run_auxiva}[cfg.method]
    return runner(obs, cfg, **kwargs)


def back_project(state: Union[SeparationState, np.ndarray], obs, ref_channel: int = 0) -> np.ndarray:
    """Minimal-distortion rescaling of the separated signals.

    ``y_nij <- [D_i^-1]_{ref, n} y_nij``, i.e. each estimate is mapped to its
    image at microphone ``ref_channel``. ``state`` may also be a bare
    demixing stack.
    """
    D = state.demix if isinstance(state, SeparationState) else np.asarray(state)
    X = _bins(obs)
    cond = np.linalg.cond(D)
    if np.any(~(cond <= COND_LIMIT)):
        raise SingularUpdate("demixing matrix is singular; cannot back-project",
                             bins=np.flatnonzero(~(cond <= COND_LIMIT)), condition=cond)
    A = np.linalg.inv(D)
    scale = A[:, ref_channel, :]
    return demix(D, X) * scale.T[:, :, None]


def state_to_dict(state: SeparationState) -> dict:
    """JSON-ready checkpoint of a run (model snapshot plus demixing tensors)."""
    D = state.demix
    return {
        "demix": {"shape": list(D.shape), "real": D.real.ravel().tolist(), "imag": D.imag.ravel().tolist()},
        "model": None if state.model is None else models.params_to_dict(state.model),
        "cost_trace": list(map(float, state.cost_trace)),
    }


def demix_from_dict(d: dict) -> np.ndarray:
    shape = d["demix"]["shape"]
    return np.reshape(d["demix"]["real"], shape) + 1j * np.reshape(d["demix"]["imag"], shape)
