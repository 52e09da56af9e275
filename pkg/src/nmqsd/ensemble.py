"""Ensemble averaging of trajectories into density matrices.

The reduced density matrix is the noise average of trajectory projectors:
normalized states in nonlinear mode, raw (unnormalized) states in linear
mode, where the Gaussian measure itself supplies the weighting and the
squared norm is a martingale (its ensemble mean stays 1).

Trajectories are integrated in fixed blocks and the per-block partial sums
are reduced in block order, so the result is bit-identical for any worker
count: parallel workers only change who computes a block, never the
floating-point reduction order.  Each trajectory draws its noise from its
own counter-based stream keyed by (seed, stream index); mixed initial
states are resolved into eigencomponents, each component running its own
sub-ensemble on a disjoint stream range.
"""

from __future__ import annotations

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidStateError
from .kernels import KernelField
from .trajectories import run_linear_block, run_nonlinear_block

BLOCK_SIZE = 256
_COMPONENT_STRIDE = 2**32


@dataclass
class EnsembleResult:
    """Monte-Carlo density matrix series with elementwise error bars.

    rho[i] is Hermitized; stderr_elem[i] holds the standard error of each
    matrix element (complex variance, real result); stderr_scale[i] is its
    Frobenius norm.  block_rho keeps per-block mean matrices (weighted
    across initial-state components) for error bars of nonlinear
    functionals of rho, e.g. fidelities.
    """

    grid: object
    rho: np.ndarray
    stderr_elem: np.ndarray
    n_traj: int
    mode: str
    norm_mean: np.ndarray | None = None
    norm_stderr: np.ndarray | None = None
    norm_drift_max: float = 0.0
    block_rho: np.ndarray | None = None

    @property
    def stderr_scale(self) -> np.ndarray:
        return np.linalg.norm(self.stderr_elem, axis=(1, 2))

    def mc_error(self, i: int) -> float:
        return float(np.linalg.norm(self.stderr_elem[i]))

    def validate(self):
        """Statistical sanity of the reconstructed series."""
        n, d = self.rho.shape[0], self.rho.shape[1]
        for i in range(n):
            scale = max(float(np.linalg.norm(self.rho[i])), 1.0)
            if np.linalg.norm(self.rho[i] - self.rho[i].conj().T) > 1e-12 * scale:
                raise InvalidStateError(f"rho not Hermitian at index {i}")
        tr = np.einsum("tii->t", self.rho).real
        err = self.stderr_scale
        if self.mode == "nonlinear":
            if np.abs(tr - 1.0).max() > 1e-10:
                raise InvalidStateError("nonlinear-mode trace deviates from 1")
        else:
            if (np.abs(tr - 1.0) > np.maximum(3.0 * err, 1e-10) + 1e-12).any():
                raise InvalidStateError("linear-mode trace outside 3 stderr of 1")
        for i in range(n):
            lo = float(np.linalg.eigvalsh(self.rho[i]).min())
            if lo < -3.0 * max(err[i], 1e-12):
                raise InvalidStateError(
                    f"eigenvalue {lo:.3e} below -3 stderr at index {i}"
                )


def resolve_initial_state(dim: int, psi0=None, rho0=None):
    """Normalize the initial condition to weighted pure components."""
    if (psi0 is None) == (rho0 is None):
        raise InvalidParameterError("provide exactly one of psi0, rho0")
    if psi0 is not None:
        psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
        if psi0.shape != (dim,):
            raise InvalidStateError(f"state must have dimension {dim}")
        nrm = np.linalg.norm(psi0)
        if nrm < 1e-12:
            raise InvalidStateError("zero initial state")
        return [(1.0, psi0 / nrm)]
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (dim, dim):
        raise InvalidStateError(f"density matrix must be {dim}x{dim}")
    if np.linalg.norm(rho0 - rho0.conj().T) > 1e-10:
        raise InvalidStateError("initial density matrix not Hermitian")
    if abs(np.trace(rho0).real - 1.0) > 1e-8:
        raise InvalidStateError("initial density matrix trace must be 1")
    w, v = np.linalg.eigh(rho0)
    if w.min() < -1e-8:
        raise InvalidStateError("initial density matrix not positive")
    comps = [(float(wm), v[:, m].copy()) for m, wm in enumerate(w) if wm > 1e-12]
    total = sum(wm for wm, _ in comps)
    return [(wm / total, vm) for wm, vm in comps]


# Context shared with forked workers; set before the pool is spawned so the
# kernel tables travel by copy-on-write page sharing, not by pickling.
_CTX: dict = {}


def _block_sums(args):
    comp, lo, hi = args
    kernels: KernelField = _CTX["kernels"]
    corr = kernels.corr
    grid = kernels.grid
    seed = _CTX["seed"]
    mode = _CTX["mode"]
    psi0 = _CTX["components"][comp][1]
    indices = [comp * _COMPONENT_STRIDE + j for j in range(lo, hi)]
    z = corr.sample_block(grid, seed, indices)
    if mode == "linear":
        hist = run_linear_block(kernels, psi0, z)
        drift = np.zeros(hi - lo)
    else:
        hist, drift, _ = run_nonlinear_block(
            kernels, psi0, z, obar_shifted=_CTX["obar_shifted"]
        )
    proj_sum = np.einsum("bti,btj->tij", hist, hist.conj())
    abs2_sum = np.einsum("bti,btj->tij", np.abs(hist) ** 2, np.abs(hist) ** 2)
    norm2 = np.einsum("bti,bti->bt", hist.conj(), hist).real
    return (
        comp,
        lo,
        proj_sum,
        abs2_sum,
        norm2.sum(axis=0),
        (norm2**2).sum(axis=0),
        float(drift.max(initial=0.0)),
    )


def run_ensemble(
    kernels: KernelField,
    n_traj: int,
    seed: int,
    psi0=None,
    rho0=None,
    mode: str = "nonlinear",
    workers: int = 1,
    obar_shifted: bool = True,
) -> EnsembleResult:
    """Average n_traj trajectories per initial-state component.

    Deterministic in (kernels, n_traj, seed, mode): the worker count only
    distributes blocks, the reduction order is fixed.
    """
    if mode not in ("linear", "nonlinear"):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if n_traj < 1:
        raise InvalidParameterError("n_traj must be positive")
    if workers < 1:
        raise InvalidParameterError("workers must be positive")
    model = kernels.model
    grid = kernels.grid
    components = resolve_initial_state(model.dim, psi0=psi0, rho0=rho0)
    n, d = grid.n_points, model.dim

    tasks = []
    for comp in range(len(components)):
        for lo in range(0, n_traj, BLOCK_SIZE):
            tasks.append((comp, lo, min(lo + BLOCK_SIZE, n_traj)))

    _CTX.clear()
    _CTX.update(
        kernels=kernels,
        seed=seed,
        mode=mode,
        components=components,
        obar_shifted=obar_shifted,
    )
    if workers == 1 or len(tasks) == 1:
        results = [_block_sums(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_block_sums, tasks, chunksize=1))
    _CTX.clear()

    by_key = {(comp, lo): r for comp, lo, *r in results}
    n_blocks = (n_traj + BLOCK_SIZE - 1) // BLOCK_SIZE
    rho = np.zeros((n, d, d), dtype=complex)
    var = np.zeros((n, d, d))
    norm_sum = np.zeros(n)
    norm_sq = np.zeros(n)
    drift_max = 0.0
    block_rho = np.zeros((n_blocks, n, d, d), dtype=complex)
    for comp, (weight, _) in enumerate(components):
        proj = np.zeros((n, d, d), dtype=complex)
        abs2 = np.zeros((n, d, d))
        for bi, lo in enumerate(range(0, n_traj, BLOCK_SIZE)):
            p, a2, n2, n4, dr, *_ = by_key[(comp, lo)]
            proj += p
            abs2 += a2.real
            norm_sum += weight * n2
            norm_sq += weight * n4
            drift_max = max(drift_max, dr)
            block_rho[bi] += weight * p / max(min(lo + BLOCK_SIZE, n_traj) - lo, 1)
        mean = proj / n_traj
        rho += weight * mean
        comp_var = np.maximum(abs2 / n_traj - np.abs(mean) ** 2, 0.0)
        var += weight**2 * comp_var / n_traj
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    result = EnsembleResult(
        grid=grid,
        rho=rho,
        stderr_elem=np.sqrt(var),
        n_traj=n_traj * len(components),
        mode=mode,
        norm_drift_max=drift_max,
        block_rho=block_rho,
    )
    if mode == "linear":
        mean = norm_sum / n_traj
        result.norm_mean = mean
        result.norm_stderr = np.sqrt(
            np.maximum(norm_sq / n_traj - mean**2, 0.0) / n_traj
        )
    return result


def worker_count(requested: int | None = None) -> int:
    """Default worker count: the CPU count, capped at 8."""
    if requested is not None:
        return max(1, requested)
    return max(1, min(os.cpu_count() or 1, 8))
