"""Single-trajectory integration of the time-local diffusion equations.

Two modes share one Heun (predictor-corrector) stepper with the noise frozen
per substep and the memory operator Obar re-assembled at substep times:

* linear:     dpsi/dt = [-iH + L z_t - L^dag Obar(t, z)] psi
* nonlinear:  dpsi/dt = -iH psi + D(L) zt_t psi - D(L^dag) Obar(t, zt) psi
                        + <D(L^dag) Obar(t, zt)> psi,
              D(A) = A - <A>_t,  zt_t = z_t + int_0^t alpha*(t,s) <L^dag>_s ds

The nonlinear state is renormalized after every step; the pre-normalization
drift is recorded because the continuous equation preserves the norm, so the
drift must shrink at second order in dt.  The noise shift is accumulated
causally by the trapezoid rule; for correlations that expose an exponential
mode decomposition the running integrals update in O(1) per step (the
recursion reproduces the full trapezoid sum exactly, the weights telescope).
All noise integrals in the nonlinear equation use the shifted path by
default; obar_shifted=False keeps the raw path inside Obar for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlations import NoisePath
from .errors import InvalidStateError, TrajectoryDivergedError
from .kernels import KernelField


@dataclass
class Trajectory:
    """One integrated path: states, norms, and the noise-shift record."""

    grid: object
    psi: np.ndarray  # (n_points, d)
    norms: np.ndarray  # (n_points,)
    ldag_exp: np.ndarray  # (n_points,) <L^dag> along the path (nonlinear)
    shift: np.ndarray | None  # (n_points,) accumulated noise shift
    norm_drift_max: float = 0.0


def _normalize_state(psi0: np.ndarray, dim: int) -> np.ndarray:
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    if psi0.shape != (dim,):
        raise InvalidStateError(f"state must have dimension {dim}")
    n = np.linalg.norm(psi0)
    if not np.isfinite(n) or n < 1e-12:
        raise InvalidStateError("state has zero or non-finite norm")
    return psi0 / n


class _ShiftAccumulator:
    """Causal trapezoid of alpha*(t,s) h(s) for a batch of paths.

    With alpha(t,s) = sum_m w_m exp(-mu_m (t-s)) the running integrals
    satisfy  S_m <- exp(-mu_m* dt) (S_m + dt/2 w_m* h_i) + dt/2 w_m* h_{i+1},
    which reproduces the full trapezoid sum exactly.  Without a mode
    decomposition the sum is recomputed from the stored h series.
    """

    def __init__(self, corr, grid, n_batch: int):
        self.grid = grid
        try:
            modes = corr.exp_modes()
        except NotImplementedError:
            modes = None
        if modes is not None:
            w, mu = modes
            self.w = np.conj(np.asarray(w, dtype=complex))
            self.decay = np.exp(-np.conj(np.asarray(mu, dtype=complex)) * grid.dt)
            self.s = np.zeros((n_batch, len(self.w)), dtype=complex)
            self.corr = None
        else:
            self.corr = corr
            self.h_hist = np.zeros((n_batch, grid.n_points), dtype=complex)
        self.h_prev = np.zeros(n_batch, dtype=complex)

    def start(self, h0: np.ndarray):
        self.h_prev = h0
        if self.corr is not None:
            self.h_hist[:, 0] = h0

    def peek(self, i_next: int, h_next: np.ndarray) -> np.ndarray:
        """Shift at t_{i_next} if <L^dag> there were h_next (no commit)."""
        half = 0.5 * self.grid.dt
        if self.corr is None:
            s = (self.s + half * self.w * self.h_prev[:, None]) * self.decay
            s = s + half * self.w * h_next[:, None]
            return s.sum(axis=1)
        t = self.grid.times[i_next]
        w = self.grid.trapezoid_weights(i_next).astype(complex)
        w *= np.conj(np.asarray(self.corr.alpha(t, self.grid.times[: i_next + 1])))
        out = self.h_hist[:, :i_next] @ w[:-1]
        return out + w[-1] * h_next

    def commit(self, i_next: int, h_next: np.ndarray) -> np.ndarray:
        half = 0.5 * self.grid.dt
        if self.corr is None:
            self.s = (self.s + half * self.w * self.h_prev[:, None]) * self.decay
            self.s = self.s + half * self.w * h_next[:, None]
            out = self.s.sum(axis=1)
        else:
            self.h_hist[:, i_next] = h_next
            out = self.peek(i_next, h_next)
        self.h_prev = h_next
        return out


def _apply_obar(kernels: KernelField, values: np.ndarray, i: int, psi: np.ndarray):
    """Obar(t_i, path) applied to each state in the batch."""
    if kernels.k_trunc == 0:
        ob = np.tensordot(kernels.fbar[i], kernels.operator_stack(0), axes=(0, 0))
        return psi @ ob.T, ob
    ob = kernels.obar_batch(values, i)
    return np.einsum("bij,bj->bi", ob, psi), ob


def run_linear_block(
    kernels: KernelField, psi0: np.ndarray, z_block: np.ndarray
) -> np.ndarray:
    """Heun-integrate a batch of linear trajectories along given raw paths.

    Returns the unnormalized state history, shape (n_batch, n_points, d).
    """
    model = kernels.model
    grid = kernels.grid
    h = model.hamiltonian
    lop = model.coupling
    ldag_t = lop.conj()  # (L^dag).T, for right-multiplying row states
    z_block = np.atleast_2d(np.asarray(z_block, dtype=complex))
    nb = z_block.shape[0]
    psi = np.broadcast_to(
        _normalize_state(psi0, model.dim), (nb, model.dim)
    ).astype(complex)
    hist = np.zeros((nb, grid.n_points, model.dim), dtype=complex)
    hist[:, 0] = psi
    dt = grid.dt

    def rhs(psi_s, i_s):
        op, _ = _apply_obar(kernels, z_block, i_s, psi_s)
        out = -1j * (psi_s @ h.T)
        out += z_block[:, i_s, None] * (psi_s @ lop.T)
        out -= op @ ldag_t
        return out

    # overflow is reported through TrajectoryDivergedError, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.n_steps):
            k1 = rhs(psi, i)
            k2 = rhs(psi + dt * k1, i + 1)
            psi = psi + 0.5 * dt * (k1 + k2)
            if not np.isfinite(psi).all():
                bad = int(np.argmax(~np.isfinite(psi).all(axis=1)))
                raise TrajectoryDivergedError(grid.times[i + 1], -1, bad)
            hist[:, i + 1] = psi
    return hist


def run_nonlinear_block(
    kernels: KernelField,
    psi0: np.ndarray,
    z_block: np.ndarray,
    obar_shifted: bool = True,
):
    """Heun-integrate a batch of nonlinear (normalized) trajectories.

    Returns (history (n_batch, n_points, d), max per-step norm drift
    (n_batch,), shift series (n_batch, n_points)).
    """
    model = kernels.model
    grid = kernels.grid
    h = model.hamiltonian
    lop = model.coupling
    ldag = lop.conj().T
    z_block = np.atleast_2d(np.asarray(z_block, dtype=complex))
    nb, n_pts = z_block.shape
    dt = grid.dt
    psi = np.broadcast_to(
        _normalize_state(psi0, model.dim), (nb, model.dim)
    ).astype(complex)
    ztilde = z_block.copy()
    shift = np.zeros((nb, n_pts), dtype=complex)
    hist = np.zeros((nb, n_pts, model.dim), dtype=complex)
    hist[:, 0] = psi
    drift_max = np.zeros(nb)
    acc = _ShiftAccumulator(kernels.corr, grid, nb)

    def ldag_exp(psi_s):
        denom = np.einsum("bi,bi->b", psi_s.conj(), psi_s).real
        lexp = np.einsum("bi,bi->b", psi_s.conj(), psi_s @ lop.T) / denom
        return np.conj(lexp)

    def rhs(psi_s, zt_s, i_s):
        denom = np.einsum("bi,bi->b", psi_s.conj(), psi_s).real
        lpsi = psi_s @ lop.T
        lexp = np.einsum("bi,bi->b", psi_s.conj(), lpsi) / denom
        hexp = np.conj(lexp)
        vals = ztilde if obar_shifted else z_block
        opsi, _ = _apply_obar(kernels, vals, i_s, psi_s)
        ldop = opsi @ ldag.T
        obar_exp = np.einsum("bi,bi->b", psi_s.conj(), opsi) / denom
        ldob_exp = np.einsum("bi,bi->b", psi_s.conj(), ldop) / denom
        out = -1j * (psi_s @ h.T)
        out += zt_s[:, None] * (lpsi - lexp[:, None] * psi_s)
        out -= ldop - hexp[:, None] * opsi
        out += (ldob_exp - hexp * obar_exp)[:, None] * psi_s
        return out

    h0 = ldag_exp(psi)
    acc.start(h0)
    h_i = h0
    # overflow is reported through TrajectoryDivergedError, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.n_steps):
            k1 = rhs(psi, ztilde[:, i], i)
            psi_p = psi + dt * k1
            h_prov = ldag_exp(psi_p)
            shift_prov = acc.peek(i + 1, h_prov)
            ztilde[:, i + 1] = z_block[:, i + 1] + shift_prov
            k2 = rhs(psi_p, ztilde[:, i + 1], i + 1)
            psi_new = psi + 0.5 * dt * (k1 + k2)
            norms = np.linalg.norm(psi_new, axis=1)
            if not (np.isfinite(norms).all() and (norms > 1e-12).all()):
                bad = int(np.argmax(~(np.isfinite(norms) & (norms > 1e-12))))
                raise TrajectoryDivergedError(grid.times[i + 1], -1, bad)
            drift_max = np.maximum(drift_max, np.abs(norms - 1.0))
            psi = psi_new / norms[:, None]
            h_i = ldag_exp(psi)
            shift[:, i + 1] = acc.commit(i + 1, h_i)
            ztilde[:, i + 1] = z_block[:, i + 1] + shift[:, i + 1]
            hist[:, i + 1] = psi
    return hist, drift_max, shift


def step_linear(psi, i, path: NoisePath, kernels: KernelField) -> np.ndarray:
    """One Heun step of the linear equation from t_i, for a single path."""
    model = kernels.model
    h = model.hamiltonian
    lop = model.coupling
    ldag_t = lop.conj()
    z = np.atleast_2d(np.asarray(path.samples, dtype=complex))
    psi_b = np.asarray(psi, dtype=complex).reshape(1, model.dim)

    def rhs(psi_s, i_s):
        op, _ = _apply_obar(kernels, z, i_s, psi_s)
        return (-1j * (psi_s @ h.T)
                + z[:, i_s, None] * (psi_s @ lop.T)
                - op @ ldag_t)

    dt = kernels.grid.dt
    k1 = rhs(psi_b, i)
    k2 = rhs(psi_b + dt * k1, i + 1)
    out = psi_b + 0.5 * dt * (k1 + k2)
    if not np.isfinite(out).all():
        raise TrajectoryDivergedError(kernels.grid.times[i + 1], -1, 0)
    return out[0]


def run_linear(kernels: KernelField, psi0, path: NoisePath) -> Trajectory:
    hist = run_linear_block(kernels, psi0, path.samples[None, :])
    psi = hist[0]
    norms = np.linalg.norm(psi, axis=1)
    lexp = np.einsum("ti,ti->t", psi.conj(), psi @ kernels.model.coupling.T)
    return Trajectory(
        grid=kernels.grid,
        psi=psi,
        norms=norms,
        ldag_exp=np.conj(lexp / norms**2),
        shift=None,
    )


def run_nonlinear(
    kernels: KernelField, psi0, path: NoisePath, obar_shifted: bool = True
) -> Trajectory:
    hist, drift, shift = run_nonlinear_block(
        kernels, psi0, path.samples[None, :], obar_shifted=obar_shifted
    )
    psi = hist[0]
    lexp = np.einsum("ti,ti->t", psi.conj(), psi @ kernels.model.coupling.T)
    return Trajectory(
        grid=kernels.grid,
        psi=psi,
        norms=np.ones(kernels.grid.n_points),
        ldag_exp=np.conj(lexp),
        shift=shift[0],
        norm_drift_max=float(drift[0]),
    )
