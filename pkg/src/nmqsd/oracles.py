"""Brute-force reference solvers, independent of the trajectory machinery.

Three routes:

* exact unitary evolution of system plus a finite set of bath modes at zero
  temperature, restricted to the conserved total-excitation subspace;
* a dense Runge-Kutta Lindblad integrator for Markovian references;
* a pseudomode construction that reproduces the exponential memory kernel
  (gamma/2) e^{-gamma |t-s|} exactly: one damped mode at frequency zero with
  coupling g = sqrt(gamma/2) and decay kappa = 2 gamma.

These never touch the O-operator code paths, so agreement between the two
sides is a real check.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .correlations import DiscreteModes, TimeGrid
from .errors import InvalidParameterError, InvalidStateError, TruncationError
from .models import ModelSpec, boson_annihilator, excitation_numbers

_STATE_TOL = 1e-10


def _as_components(model_dim: int, psi0=None, rho0=None):
    """Normalize input into a list of (weight, pure state) components."""
    if (psi0 is None) == (rho0 is None):
        raise InvalidParameterError("provide exactly one of psi0, rho0")
    if psi0 is not None:
        psi0 = np.asarray(psi0, dtype=complex)
        if psi0.shape != (model_dim,):
            raise InvalidStateError("state vector has wrong dimension")
        n = np.linalg.norm(psi0)
        if abs(n - 1.0) > 1e-8:
            raise InvalidStateError("state vector is not normalized")
        return [(1.0, psi0 / n)]
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (model_dim, model_dim):
        raise InvalidStateError("density matrix has wrong dimension")
    if np.linalg.norm(rho0 - rho0.conj().T) > 1e-10:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho0) - 1.0) > 1e-8:
        raise InvalidStateError("density matrix trace differs from one")
    evals, vecs = np.linalg.eigh(rho0)
    if evals.min() < -1e-8:
        raise InvalidStateError("density matrix has a negative eigenvalue")
    comps = []
    for w, v in zip(evals, vecs.T):
        if w > 1e-12:
            comps.append((float(w), v.astype(complex)))
    return comps


def _enumerate_joint_basis(sys_exc: np.ndarray, n_modes: int, n_exc_max: int):
    """Joint (system index, mode occupations) states with total <= n_exc_max.

    Ordering is lexicographic: system index major, then occupation tuples in
    lexicographic order; gives a reproducible basis layout.
    """
    states = []
    index = {}

    def occupations(budget: int, slots: int):
        if slots == 0:
            yield ()
            return
        for head in range(budget + 1):
            for rest in occupations(budget - head, slots - 1):
                yield (head,) + rest

    for s in range(len(sys_exc)):
        budget = n_exc_max - int(sys_exc[s])
        if budget < 0:
            continue
        for occ in occupations(budget, n_modes):
            index[(s, occ)] = len(states)
            states.append((s, occ))
    return states, index


def solve_discrete_modes(
    model: ModelSpec,
    modes: DiscreteModes,
    grid: TimeGrid,
    psi0=None,
    rho0=None,
) -> np.ndarray:
    """Exact reduced dynamics for a finite mode bath at zero temperature.

    Total excitation (system level count plus photon numbers) is conserved,
    so the joint propagator is a small dense matrix exponential.  Returns
    the reduced density matrix at every grid point, shape (n_points, d, d).
    """
    d = model.dim
    comps = _as_components(d, psi0, rho0)
    sys_exc = excitation_numbers(model)
    gs = modes.g_arr
    oms = modes.omega_arr
    n_modes = len(gs)

    n_exc_max = 0
    for _, psi in comps:
        occupied = np.abs(psi) > _STATE_TOL
        if occupied.any():
            n_exc_max = max(n_exc_max, int(sys_exc[occupied].max()))

    states, index = _enumerate_joint_basis(sys_exc, n_modes, n_exc_max)
    dim_j = len(states)
    hj = np.zeros((dim_j, dim_j), dtype=complex)
    hsys = model.hamiltonian
    lop = model.coupling
    for col, (s, occ) in enumerate(states):
        # system Hamiltonian block (conserves excitation by construction)
        for sp in np.nonzero(np.abs(hsys[:, s]) > 0)[0]:
            key = (int(sp), occ)
            if key in index:
                hj[index[key], col] += hsys[sp, s]
        # free mode energies
        hj[col, col] += np.dot(oms, occ)
        # g_k L a_k^dag + conj: lower the system, add a photon
        for k in range(n_modes):
            occ_up = list(occ)
            occ_up[k] += 1
            factor = np.sqrt(occ[k] + 1.0)
            for sp in np.nonzero(np.abs(lop[:, s]) > 0)[0]:
                key = (int(sp), tuple(occ_up))
                if key in index:
                    amp = gs[k] * lop[sp, s] * factor
                    row = index[key]
                    hj[row, col] += amp
                    hj[col, row] += np.conj(amp)
    u_dt = expm(-1j * hj * grid.dt)

    out = np.zeros((grid.n_points, d, d), dtype=complex)
    for w, psi in comps:
        phi = np.zeros(dim_j, dtype=complex)
        vac = (0,) * n_modes
        for s in range(d):
            key = (s, vac)
            if key in index:
                phi[index[key]] = psi[s]
            elif abs(psi[s]) > _STATE_TOL:
                raise InvalidStateError("initial state outside enumerated subspace")
        for i in range(grid.n_points):
            if i > 0:
                phi = u_dt @ phi
            out[i] += w * _reduce_joint(phi, states, index, d)
    return out


def _reduce_joint(phi, states, index, d) -> np.ndarray:
    rho = np.zeros((d, d), dtype=complex)
    for j, (s, occ) in enumerate(states):
        amp = phi[j]
        if amp == 0:
            continue
        for sp in range(d):
            key = (sp, occ)
            if key in index:
                rho[s, sp] += amp * np.conj(phi[index[key]])
    return rho


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, jumps) -> np.ndarray:
    out = -1j * (h @ rho - rho @ h)
    for rate, op in jumps:
        od = op.conj().T
        anti = od @ op
        out += rate * (op @ rho @ od - 0.5 * (anti @ rho + rho @ anti))
    return out


def solve_lindblad(
    h: np.ndarray,
    jumps,
    rho0: np.ndarray,
    grid: TimeGrid,
    substeps: int = 1,
) -> np.ndarray:
    """Dense RK4 integration of a Lindblad equation.

    jumps is a list of (rate, operator).  substeps refines each grid
    interval when the dissipation is stiff relative to dt.
    """
    rho = np.asarray(rho0, dtype=complex).copy()
    d = rho.shape[0]
    out = np.zeros((grid.n_points, d, d), dtype=complex)
    out[0] = rho
    hsub = grid.dt / substeps
    for i in range(1, grid.n_points):
        for _ in range(substeps):
            k1 = lindblad_rhs(rho, h, jumps)
            k2 = lindblad_rhs(rho + 0.5 * hsub * k1, h, jumps)
            k3 = lindblad_rhs(rho + 0.5 * hsub * k2, h, jumps)
            k4 = lindblad_rhs(rho + hsub * k3, h, jumps)
            rho = rho + (hsub / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
        out[i] = rho
    return out


def markov_rate_ou() -> float:
    """2 Re int_0^inf (gamma/2) e^{-gamma tau} d tau = 1, independent of gamma."""
    return 1.0


def _pseudomode_once(model, gamma, comps, grid, n_ph, substeps) -> np.ndarray:
    d = model.dim
    dm = n_ph + 1
    a = boson_annihilator(n_ph)
    ident_s = np.eye(d, dtype=complex)
    ident_m = np.eye(dm, dtype=complex)
    g = np.sqrt(gamma / 2.0)
    a_j = np.kron(ident_s, a)
    lop_j = np.kron(model.coupling, ident_m)
    h_j = np.kron(model.hamiltonian, ident_m) + g * (
        lop_j @ a_j.conj().T + lop_j.conj().T @ a_j
    )
    rho_sys = np.zeros((d, d), dtype=complex)
    for w, psi in comps:
        rho_sys += w * np.outer(psi, psi.conj())
    vac = np.zeros((dm, dm), dtype=complex)
    vac[0, 0] = 1.0
    rho_j = np.kron(rho_sys, vac)
    series = solve_lindblad(h_j, [(2.0 * gamma, a_j)], rho_j, grid, substeps)
    return np.einsum("timjm->tij", series.reshape(grid.n_points, d, dm, d, dm))


def solve_pseudomode_ou(
    model: ModelSpec,
    gamma: float,
    grid: TimeGrid,
    psi0=None,
    rho0=None,
    n_ph_max: int | None = None,
    substeps: int | None = None,
    check_truncation: bool = True,
) -> np.ndarray:
    """Reduced dynamics for the exponential kernel via one damped mode.

    n_ph_max defaults to the largest initial excitation count, which is
    exact at zero temperature because total excitation never increases.
    The result is re-run at n_ph_max+1 and must not shift by more than
    1e-4 in trace distance, otherwise the truncation is reported as
    unconverged.
    """
    if gamma <= 0:
        raise InvalidParameterError("gamma must be positive")
    d = model.dim
    comps = _as_components(d, psi0, rho0)
    sys_exc = excitation_numbers(model)
    if n_ph_max is None:
        n_ph_max = 1
        for _, psi in comps:
            occupied = np.abs(psi) > _STATE_TOL
            if occupied.any():
                n_ph_max = max(n_ph_max, int(sys_exc[occupied].max()))
    if substeps is None:
        # keep RK4 comfortably inside the stiff decay scale kappa = 2 gamma
        substeps = max(1, int(np.ceil(2.0 * gamma * grid.dt / 0.2)))
    base = _pseudomode_once(model, gamma, comps, grid, n_ph_max, substeps)
    if check_truncation:
        bigger = _pseudomode_once(model, gamma, comps, grid, n_ph_max + 1, substeps)
        shift = max(
            float(np.abs(np.linalg.eigvalsh(bigger[i] - base[i])).sum()) / 2.0
            for i in range(grid.n_points)
        )
        if shift > 1e-4:
            raise TruncationError(
                f"pseudomode photon truncation unconverged (shift {shift:.2e})"
            )
    return base
