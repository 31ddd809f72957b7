"""Nonnegative source-variance models and their multiplicative updates.

Two models are provided:

* the NMF model, one low-rank factorization ``T_n @ V_n`` per source;
* the clustered (NBTD) model, in which ``O`` low-rank blocks ``T_o @ V_o``
  are shared by all sources and mixed through a nonnegative cluster matrix
  ``G`` of shape ``(N, O)``::

      lam[n, i, j] = sum_o G[n, o] * sum_k T[o, i, k] * V[o, k, j]

All updates are majorization-minimization steps for the Itakura-Saito
(Gaussian likelihood) fit of the model to the separated power ``|y|^2``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import InvalidInput

EPS = 1e-12

#: Block-factor update rules. ``"pooled"`` fits every block to the power
#: pooled over the sources of its cluster; ``"joint"`` majorizes the full
#: likelihood of the mixed model. They coincide when ``G`` is a permutation.
BLOCK_RULES = ("pooled", "joint")


def _check_nonneg(name, a):
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    if np.any(a < 0):
        raise InvalidInput(f"{name} contains negative entries")


@dataclass(frozen=True)
class NbtdParams:
    """Clustered source model.

    Attributes:
        G: cluster weights, shape ``(N, O)``.
        T: spectral bases, shape ``(O, I, K)``.
        V: activations, shape ``(O, K, J)``.
        sigma: weight of the penalty ``sigma * (G.sum() - N)``.
    """

    G: np.ndarray
    T: np.ndarray
    V: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        G, T, V = (np.asarray(a, dtype=float) for a in (self.G, self.T, self.V))
        if G.ndim != 2 or T.ndim != 3 or V.ndim != 3:
            raise InvalidInput("expected G (N,O), T (O,I,K), V (O,K,J)")
        if not (G.shape[1] == T.shape[0] == V.shape[0]) or T.shape[2] != V.shape[1]:
            raise InvalidInput(
                f"inconsistent shapes G{G.shape} T{T.shape} V{V.shape}"
            )
        for name, a in (("G", G), ("T", T), ("V", V)):
            _check_nonneg(name, a)
        if not self.sigma >= 0:
            raise InvalidInput("sigma must be nonnegative")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n_sources(self) -> int:
        return self.G.shape[0]

    @property
    def n_blocks(self) -> int:
        return self.G.shape[1]

    @property
    def n_bases(self) -> int:
        return self.T.shape[2]

    @property
    def n_freq(self) -> int:
        return self.T.shape[1]

    @property
    def n_frames(self) -> int:
        return self.V.shape[2]

    def penalty(self) -> float:
        """``sigma * tr(U U^T - I)`` with ``U = sqrt(G)``, i.e. ``sigma * (sum G - N)``."""
        return self.sigma * (float(self.G.sum()) - self.n_sources)


@dataclass(frozen=True)
class NmfParams:
    """Per-source NMF model: ``T`` is ``(N, I, K)``, ``V`` is ``(N, K, J)``."""

    T: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        T, V = np.asarray(self.T, dtype=float), np.asarray(self.V, dtype=float)
        if T.ndim != 3 or V.ndim != 3 or T.shape[0] != V.shape[0] or T.shape[2] != V.shape[1]:
            raise InvalidInput(f"inconsistent shapes T{T.shape} V{V.shape}")
        _check_nonneg("T", T)
        _check_nonneg("V", V)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "V", V)

    @property
    def n_sources(self) -> int:
        return self.T.shape[0]


@dataclass(frozen=True)
class NcpdForm:
    """Canonical-polyadic form of the variance tensor.

    ``lam = sum_k Z[:, k] (outer) Tt[:, k] (outer) Vt[:, k]``. Kept as a
    descriptive record; no fitting routine is provided for it.
    """

    Z: np.ndarray
    Tt: np.ndarray
    Vt: np.ndarray

    def variance(self) -> np.ndarray:
        return np.einsum("nk,ik,jk->nij", self.Z, self.Tt, self.Vt)


SourceModel = Union[NbtdParams, NmfParams]


def block_spectrograms(p: NbtdParams, eps: float = EPS) -> np.ndarray:
    """``B[o] = T[o] @ V[o]``, floored at ``eps``; shape ``(O, I, J)``."""
    return np.maximum(p.T @ p.V, eps)


def nbtd_variance(p: NbtdParams, eps: float = EPS) -> np.ndarray:
    """Source variances of the clustered model, shape ``(N, I, J)``."""
    B = p.T @ p.V
    lam = np.tensordot(p.G, B, axes=(1, 0))
    return np.maximum(lam, eps)


def nmf_variance(p: NmfParams, eps: float = EPS) -> np.ndarray:
    return np.maximum(p.T @ p.V, eps)


def model_variance(p: SourceModel, eps: float = EPS) -> np.ndarray:
    if isinstance(p, NbtdParams):
        return nbtd_variance(p, eps)
    return nmf_variance(p, eps)


def _check_power(power, n, i, j):
    power = np.asarray(power, dtype=float)
    if power.shape != (n, i, j):
        raise InvalidInput(f"power must have shape {(n, i, j)}, got {power.shape}")
    _check_nonneg("power", power)
    return power


def _block_weights(p: NbtdParams, power: np.ndarray, rule: str):
    """Per-block numerator and denominator weights of the T/V updates.

    Returns ``(W2, W1)`` of shape ``(O, I, J)`` such that the update ratio is
    ``(W2 contracted with the other factor) / (W1 contracted with it)``.
    """
    if rule == "pooled":
        B = block_spectrograms(p)
        pooled = np.tensordot(p.G.T, power, axes=(1, 0))
        return pooled / B**2, 1.0 / B
    if rule == "joint":
        lam = nbtd_variance(p)
        W2 = np.tensordot(p.G.T, power / lam**2, axes=(1, 0))
        W1 = np.tensordot(p.G.T, 1.0 / lam, axes=(1, 0))
        return W2, W1
    raise InvalidInput(f"unknown block rule {rule!r}; expected one of {BLOCK_RULES}")


def update_bases(p: NbtdParams, power: np.ndarray, rule: str = "pooled", eps: float = EPS) -> NbtdParams:
    """Multiplicative update of the spectral bases ``T``.

    With ``rule="pooled"``::

        T[o,i,k] *= sqrt( sum_{n,j} |y|^2 G[n,o] V[o,k,j] B[o,i,j]^-2
                          / sum_j V[o,k,j] B[o,i,j]^-1 )

    where ``B[o] = T[o] @ V[o]``. ``rule="joint"`` replaces ``B`` by the
    source variance ``lam[n]`` inside the sums and weights both sums by
    ``G[n,o]``; that form never increases the Gaussian likelihood cost.
    """
    power = _check_power(power, p.n_sources, p.n_freq, p.n_frames)
    W2, W1 = _block_weights(p, power, rule)
    Vt = p.V.transpose(0, 2, 1)
    ratio = (W2 @ Vt) / np.maximum(W1 @ Vt, eps)
    return replace(p, T=np.maximum(p.T * np.sqrt(ratio), eps))


def update_activations(p: NbtdParams, power: np.ndarray, rule: str = "pooled", eps: float = EPS) -> NbtdParams:
    """Multiplicative update of the activations ``V``; mirror of :func:`update_bases`."""
    power = _check_power(power, p.n_sources, p.n_freq, p.n_frames)
    W2, W1 = _block_weights(p, power, rule)
    Tt = p.T.transpose(0, 2, 1)
    ratio = (Tt @ W2) / np.maximum(Tt @ W1, eps)
    return replace(p, V=np.maximum(p.V * np.sqrt(ratio), eps))


def update_clusters(p: NbtdParams, power: np.ndarray, eps: float = EPS) -> NbtdParams:
    """Multiplicative update of the cluster matrix ``G``.

    ``G[n,o] *= sqrt( sum_ij |y|^2 B[o] lam[n]^-2 / (sum_ij B[o] lam[n]^-1 + sigma) )``
    """
    power = _check_power(power, p.n_sources, p.n_freq, p.n_frames)
    B = block_spectrograms(p)
    lam = nbtd_variance(p)
    num = np.einsum("nij,oij->no", power / lam**2, B)
    den = np.einsum("nij,oij->no", 1.0 / lam, B) + p.sigma
    return replace(p, G=np.maximum(p.G * np.sqrt(num / np.maximum(den, eps)), eps))


def update_nmf(p: NmfParams, power: np.ndarray, eps: float = EPS) -> NmfParams:
    """One sweep of the standard ILRMA bases-then-activations update."""
    N, I, _ = p.T.shape
    power = _check_power(power, N, I, p.V.shape[2])
    T, V = p.T, p.V
    lam = np.maximum(T @ V, eps)
    Vt = V.transpose(0, 2, 1)
    T = np.maximum(T * np.sqrt(((power / lam**2) @ Vt) / np.maximum((1.0 / lam) @ Vt, eps)), eps)
    lam = np.maximum(T @ V, eps)
    Tt = T.transpose(0, 2, 1)
    V = np.maximum(V * np.sqrt((Tt @ (power / lam**2)) / np.maximum(Tt @ (1.0 / lam), eps)), eps)
    return NmfParams(T, V)


def _positive_dims(**dims):
    for name, v in dims.items():
        if int(v) < 1:
            raise InvalidInput(f"{name} must be a positive integer, got {v}")


def init_model(n: int, o: int, k: int, i: int, j: int, seed: int = 0,
               sigma: float = 1.0, eps: float = EPS) -> NbtdParams:
    """Random clustered model with ``G`` rows summing to one."""
    _positive_dims(n=n, o=o, k=k, i=i, j=j)
    rng = np.random.default_rng(seed)
    G = np.maximum(rng.uniform(size=(n, o)), eps)
    G /= G.sum(axis=1, keepdims=True)
    T = np.maximum(rng.uniform(size=(o, i, k)), eps)
    V = np.maximum(rng.uniform(size=(o, k, j)), eps)
    return NbtdParams(G, T, V, sigma)


def init_nmf(n: int, k: int, i: int, j: int, seed: int = 0, eps: float = EPS) -> NmfParams:
    _positive_dims(n=n, k=k, i=i, j=j)
    rng = np.random.default_rng(seed)
    T = np.maximum(rng.uniform(size=(n, i, k)), eps)
    V = np.maximum(rng.uniform(size=(n, k, j)), eps)
    return NmfParams(T, V)


def params_to_dict(p: SourceModel) -> dict:
    """JSON-ready snapshot: dimensions plus row-major flattened arrays."""
    if isinstance(p, NbtdParams):
        N, O = p.G.shape
        return {
            "model": "nbtd",
            "dims": {"N": N, "O": O, "I": p.n_freq, "K": p.n_bases, "J": p.n_frames},
            "sigma": p.sigma,
            "G": p.G.ravel().tolist(),
            "T": p.T.ravel().tolist(),
            "V": p.V.ravel().tolist(),
        }
    N, I, K = p.T.shape
    return {
        "model": "nmf",
        "dims": {"N": N, "I": I, "K": K, "J": p.V.shape[2]},
        "T": p.T.ravel().tolist(),
        "V": p.V.ravel().tolist(),
    }


def params_from_dict(d: dict) -> SourceModel:
    dims = d["dims"]
    if d["model"] == "nbtd":
        N, O, I, K, J = (dims[x] for x in "NOIKJ")
        return NbtdParams(
            np.reshape(d["G"], (N, O)),
            np.reshape(d["T"], (O, I, K)),
            np.reshape(d["V"], (O, K, J)),
            d.get("sigma", 1.0),
        )
    if d["model"] == "nmf":
        N, I, K, J = (dims[x] for x in "NIKJ")
        return NmfParams(np.reshape(d["T"], (N, I, K)), np.reshape(d["V"], (N, K, J)))
    raise InvalidInput(f"unknown model kind {d['model']!r}")


def dumps(p: SourceModel) -> str:
    return json.dumps(params_to_dict(p))


def loads(text: str) -> SourceModel:
    return params_from_dict(json.loads(text))
