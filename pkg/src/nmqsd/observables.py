"""Observables extracted from reconstructed density-matrix series.

Matrix-element labels follow the level convention used throughout: level 1
is the first basis state (the highest level in the descending-ladder
families), so coherence(series, 2, 3) reads |rho_23|.  Fidelity is the
Uhlmann fidelity; Monte-Carlo matrices can be marginally indefinite, so
eigenvalues are clipped at -1e-8 and the spectrum renormalized before
taking matrix square roots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidStateError

_CLIP = -1e-8


@dataclass
class ObservableSeries:
    grid: object
    name: str
    values: np.ndarray


def _check_index(dim: int, i: int):
    if not 1 <= i <= dim:
        raise InvalidParameterError(f"level index {i} outside 1..{dim}")


def coherence(rho: np.ndarray, i: int, j: int, grid=None) -> ObservableSeries:
    """|rho_ij| per time; i, j are 1-based level labels."""
    rho = np.asarray(rho)
    _check_index(rho.shape[-1], i)
    _check_index(rho.shape[-1], j)
    vals = np.abs(rho[..., i - 1, j - 1])
    return ObservableSeries(grid, f"coh_{i}{j}", vals)


def population(rho: np.ndarray, i: int, grid=None) -> ObservableSeries:
    """rho_ii per time; i is a 1-based level label."""
    rho = np.asarray(rho)
    _check_index(rho.shape[-1], i)
    return ObservableSeries(grid, f"pop_{i}", rho[..., i - 1, i - 1].real)


def _clipped_spectrum(rho: np.ndarray):
    """Eigendecomposition with small negative eigenvalues clipped away."""
    rho = np.asarray(rho, dtype=complex)
    if np.linalg.norm(rho - rho.conj().T) > 1e-8 * max(np.linalg.norm(rho), 1.0):
        raise InvalidStateError("matrix is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w.min() < _CLIP:
        raise InvalidStateError(f"eigenvalue {w.min():.3e} below clip tolerance")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        raise InvalidStateError("matrix has vanishing trace after clipping")
    return w / total, v


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity F = (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    w, v = _clipped_spectrum(rho)
    ws, vs = _clipped_spectrum(sigma)
    sqrt_rho = (v * np.sqrt(w)) @ v.conj().T
    sigma_n = (vs * ws) @ vs.conj().T
    inner = sqrt_rho @ sigma_n @ sqrt_rho
    ev = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    root = np.sqrt(np.clip(ev, 0.0, None)).sum()
    return float(min(root**2, 1.0))


def fidelity_series(rhos: np.ndarray, ref: np.ndarray, grid=None) -> ObservableSeries:
    vals = np.array([fidelity(r, ref) for r in rhos])
    return ObservableSeries(grid, "fidelity", vals)


def fidelity_with_stderr(result, ref: np.ndarray):
    """Fidelity of an ensemble result plus a block-spread error bar.

    Fidelity is a nonlinear functional of rho, so elementwise error bars do
    not propagate directly; the spread of per-block fidelities estimates the
    Monte-Carlo error instead.
    """
    series = fidelity_series(result.rho, ref, grid=result.grid)
    if result.block_rho is None or result.block_rho.shape[0] < 2:
        return series, None
    blocks = result.block_rho
    nb = blocks.shape[0]
    fb = np.empty((nb, blocks.shape[1]))
    for b in range(nb):
        rb = 0.5 * (blocks[b] + np.conj(np.swapaxes(blocks[b], 1, 2)))
        fb[b] = [fidelity(r, ref) for r in rb]
    stderr = fb.std(axis=0, ddof=1) / np.sqrt(nb)
    return series, stderr


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """T(rho, sigma) = (1/2) sum |eig(rho - sigma)|."""
    diff = np.asarray(rho) - np.asarray(sigma)
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def trace_distance_series(rhos: np.ndarray, refs: np.ndarray) -> np.ndarray:
    rhos, refs = np.asarray(rhos), np.asarray(refs)
    if refs.ndim == 2:
        refs = np.broadcast_to(refs, rhos.shape)
    return np.array([trace_distance(r, s) for r, s in zip(rhos, refs)])


def werner_state(f: float) -> np.ndarray:
    """Three-qubit Werner family (F/8) I_8 + (1-F) |psi><psi|,
    |psi> = (|100> + |010> + |001>)/sqrt(3)."""
    if not 0.0 <= f <= 1.0:
        raise InvalidParameterError("Werner F must lie in [0, 1]")
    psi = np.zeros(8, dtype=complex)
    psi[[4, 2, 1]] = 1.0 / np.sqrt(3.0)
    return (f / 8.0) * np.eye(8, dtype=complex) + (1.0 - f) * np.outer(
        psi, psi.conj()
    )
