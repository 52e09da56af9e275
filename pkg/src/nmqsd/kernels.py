"""Propagation of the O-operator coefficient kernels.

The O-operator ansatz writes the functional derivative of a trajectory with
respect to the driving noise as O(t, s, z) psi.  Expanding O in noise powers,

    O(t,s,z) = sum_j f_j(t,s) E_j^(0)
             + sum_k sum_j (k-fold integral of p_j^(k)(t,s,s_1..s_k)
                            z_{s_1}..z_{s_k}) E_j^(k),

the consistency condition turns into coupled PDEs for the scalar kernels
f_j and p_j^(k), with two kinds of boundary data:

* diagonal (t = s): f reproduces the bare coupling, higher kernels vanish;
* noise-argument edge (s_m = t): the explicit z_t commutator term is
  absorbed as  k p^(k)(t,s,t,...) = proj([L, .]) p^(k-1)(t,s,...).

Everything acting on operators is reduced once, at setup time, to constant
coefficient tensors by projecting products onto the per-order basis; each
projection must close to 1e-9 or the basis is reported incomplete.  Time
stepping is classical RK4 with trapezoid memory integrals; half-step stage
quadratures extend the last trapezoid panel to the stage time using the
exactly known diagonal values, which keeps the scheme second order overall
(the quadrature, not the stepper, limits the order).

Kernels are stored as full arrays symmetric under exchange of the noise
axes; sizes are guarded by an explicit memory estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .correlations import CorrelationFunction, TimeGrid
from .errors import (
    BasisIncompleteError,
    InvalidParameterError,
    KernelBlowupError,
    ResourceLimitError,
)
from .models import ModelSpec, excitation_numbers
from .obasis import OBasis

_PROJ_TOL = 1e-9
_SIGMA_LETTERS = "abcd"


@dataclass
class ProjectedRHS:
    """Constant tensors obtained by projecting the consistency condition.

    ham[k][j,i]        : [-iH, E_i^(k)]        = sum_j  ham[k][j,i]   E_j^(k)
    bilin[(m,r)][j,i,i']: [L^dag E_i^(m), E_i'^(r)] = sum_j ...        E_j^(m+r)
    lower[k][j,i]      : L^dag E_i^(k)         = sum_j  lower[k][j,i] E_j^(k-1)
    raise_[k][j,i]     : [L, E_i^(k)]          = sum_j  raise_[k][j,i] E_j^(k+1)
    lcoef[j]           : L = sum_j lcoef[j] E_j^(0)
    """

    ham: list[np.ndarray]
    bilin: dict
    lower: dict
    raise_: dict
    lcoef: np.ndarray
    basis_ops: list[list[np.ndarray]]
    k_trunc: int


def _project_onto(span: list[np.ndarray], x: np.ndarray, what: str) -> np.ndarray:
    coeffs = np.array([np.vdot(e, x) for e in span], dtype=complex)
    approx = np.zeros_like(x)
    for c, e in zip(coeffs, span):
        approx += c * e
    norm = np.linalg.norm(x)
    if norm > 1e-14 and np.linalg.norm(x - approx) > _PROJ_TOL * norm:
        raise BasisIncompleteError(
            f"{what}: projection residual "
            f"{np.linalg.norm(x - approx) / norm:.2e} exceeds {_PROJ_TOL}"
        )
    return coeffs


def _ncavity_rhs(model: ModelSpec, basis: OBasis, literal_ode: bool) -> ProjectedRHS:
    """Analytic coefficients for coupled cavities in the raw {a_j} basis.

    Built from the mode frequencies and hop couplings directly: the ladder
    algebra only closes exactly in the untruncated space, so numerical
    projection at finite n_max would pick up top-level artifacts.  The
    derived map is [-iH, a_j] -> i w_j a_j + i l_{j-1} a_{j-1} + i l_j a_{j+1};
    literal_ode drops the i on the backward-neighbor term, matching the
    published form of the coefficient equations verbatim.
    """
    n = model.params["n"]
    omegas = np.asarray(model.params["omegas"], dtype=float)
    lambdas = np.asarray(model.params["lambdas"], dtype=float)
    topology = model.params.get("topology", "ring")
    m = np.zeros((n, n), dtype=complex)
    for j in range(n):
        m[j, j] = 1j * omegas[j]
    if n >= 2:
        back = 1.0 if literal_ode else 1j
        pairs = range(n) if topology == "ring" else range(n - 1)
        for jm1 in pairs:
            j = (jm1 + 1) % n
            # lambda_{j-1} couples f_{j-1} into f_j and f_{j+1} into f_j
            m[j, jm1] += back * lambdas[jm1]
            m[jm1, j] += 1j * lambdas[jm1]
    bil = np.zeros((n, n, n), dtype=complex)
    for j in range(n):
        bil[j, j, :] = -1.0
    return ProjectedRHS(
        ham=[m],
        bilin={(0, 0): bil},
        lower={},
        raise_={},
        lcoef=np.ones(n, dtype=complex),
        basis_ops=[list(basis.raw_orders[0])],
        k_trunc=0,
    )


def derive_projected_rhs(
    model: ModelSpec,
    basis: OBasis,
    k_trunc: int,
    literal_ode: bool = False,
) -> ProjectedRHS:
    """Reduce all operator algebra in the kernel PDEs to coefficient tensors.

    Raises BasisIncompleteError when any product leaves the per-order span
    by more than 1e-9 relative.  For the cavity family the coefficients are
    written down analytically (see _ncavity_rhs).
    """
    if not 0 <= k_trunc <= basis.k_max:
        raise InvalidParameterError(
            f"k_trunc={k_trunc} outside 0..{basis.k_max}"
        )
    if model.family == "ncavity":
        return _ncavity_rhs(model, basis, literal_ode)
    h = model.hamiltonian
    lop = model.coupling
    ldag = lop.conj().T
    spans = [basis.orders[k] for k in range(k_trunc + 1)]
    ham = []
    for k in range(k_trunc + 1):
        cols = [
            _project_onto(spans[k], -1j * (h @ e - e @ h), f"[H, order {k}]")
            for e in spans[k]
        ]
        ham.append(np.array(cols, dtype=complex).T)
    bilin = {}
    for m in range(k_trunc + 1):
        for r in range(k_trunc + 1 - m):
            k = m + r
            out = np.zeros((len(spans[k]), len(spans[m]), len(spans[r])), complex)
            for i, b in enumerate(spans[m]):
                lb = ldag @ b
                for ip, x in enumerate(spans[r]):
                    out[:, i, ip] = _project_onto(
                        spans[k], lb @ x - x @ lb, f"[L^dag B, X] orders ({m},{r})"
                    )
            bilin[(m, r)] = out
    lower = {}
    for k in range(1, k_trunc + 1):
        cols = [
            _project_onto(spans[k - 1], ldag @ e, f"lowering order {k}")
            for e in spans[k]
        ]
        lower[k] = np.array(cols, dtype=complex).T
    raise_ = {}
    for k in range(k_trunc):
        cols = [
            _project_onto(spans[k + 1], lop @ e - e @ lop, f"raising order {k}")
            for e in spans[k]
        ]
        raise_[k] = np.array(cols, dtype=complex).T
    lcoef = _project_onto(spans[0], lop.astype(complex), "coupling in order 0")
    return ProjectedRHS(
        ham=ham,
        bilin=bilin,
        lower=lower,
        raise_=raise_,
        lcoef=lcoef,
        basis_ops=spans,
        k_trunc=k_trunc,
    )


@dataclass
class KernelField:
    """Propagated kernel tables plus everything trajectories consume.

    f_hist[j, i, s]  order-0 coefficients at time index i (zero beyond s>i)
    fbar[i, j]       F_j(t_i) = int_0^{t_i} alpha(t_i, s) f_j(t_i, s) ds
    pbar[k][j, i, ...] alpha-contracted order-k kernels at each time index
    p_hist[k]        full kernel history (only when store_history)
    """

    model: ModelSpec
    corr: CorrelationFunction
    grid: TimeGrid
    rhs: ProjectedRHS
    f_hist: np.ndarray
    fbar: np.ndarray
    pbar: dict
    p_hist: dict | None
    meta: dict = field(default_factory=dict)

    @property
    def k_trunc(self) -> int:
        return self.rhs.k_trunc

    def operator_stack(self, k: int) -> np.ndarray:
        return np.stack(self.rhs.basis_ops[k])

    def obar_matrix(self, values: np.ndarray, i: int) -> np.ndarray:
        """Assemble Obar(t_i, z) for one path; values are the z samples
        (shifted ones in the nonlinear equation) on grid points 0..i."""
        return self.obar_batch(np.asarray(values)[None, : i + 1], i)[0]

    def obar_batch(self, values: np.ndarray, i: int) -> np.ndarray:
        """Batched Obar(t_i, .) for shape (n_traj, >=i+1) path samples."""
        d = self.model.dim
        out = np.tensordot(self.fbar[i], self.operator_stack(0), axes=(0, 0))
        out = np.broadcast_to(out, (values.shape[0], d, d)).copy()
        w = self.grid.trapezoid_weights(i)
        zw = values[:, : i + 1] * w
        for k in sorted(self.pbar):
            table = self.pbar[k][(slice(None), i) + (slice(0, i + 1),) * k]
            coef = table.reshape(table.shape[0], -1)
            zk = zw
            for _ in range(k - 1):
                zk = np.einsum("ta,tb->tab", zk, zw).reshape(values.shape[0], -1)
            c = zk @ coef.T  # (n_traj, m_k)
            out += np.tensordot(c, self.operator_stack(k), axes=(1, 0))
        return out

    def o_matrix(self, values: np.ndarray, i: int, s_idx: int) -> np.ndarray:
        """Assemble O(t_i, s, z); requires store_history for orders k >= 1."""
        out = np.tensordot(
            self.f_hist[:, i, s_idx], self.operator_stack(0), axes=(0, 0)
        )
        if self.k_trunc == 0:
            return out
        if self.p_hist is None:
            raise InvalidParameterError("o_matrix needs store_history=True")
        w = self.grid.trapezoid_weights(i)
        zw = np.asarray(values)[: i + 1] * w
        for k in sorted(self.p_hist):
            table = self.p_hist[k][(slice(None), i, s_idx) + (slice(0, i + 1),) * k]
            c = table.reshape(table.shape[0], -1)
            zk = zw
            for _ in range(k - 1):
                zk = np.multiply.outer(zk, zw).reshape(-1)
            out += np.tensordot(c @ zk, self.operator_stack(k), axes=(0, 0))
        return out

    def obar_z_derivative(self, values: np.ndarray, i: int, s_idx: int) -> np.ndarray:
        """delta Obar / delta z_s at (t_i, s): k P^(k)(t, s, ...) contracted."""
        d = self.model.dim
        out = np.zeros((d, d), dtype=complex)
        w = self.grid.trapezoid_weights(i)
        zw = np.asarray(values)[: i + 1] * w
        for k in sorted(self.pbar):
            table = self.pbar[k][(slice(None), i, s_idx) + (slice(0, i + 1),) * (k - 1)]
            c = table.reshape(table.shape[0], -1)
            zk = np.ones(1, dtype=complex)
            for _ in range(k - 1):
                zk = np.multiply.outer(zk, zw).reshape(-1)
            out += k * np.tensordot(c @ zk, self.operator_stack(k), axes=(0, 0))
        return out


def _estimate_bytes(counts, n: int, k_trunc: int, store_history: bool) -> int:
    total = counts[0] * n * n  # f history
    for k in range(k_trunc + 1):
        total += counts[k] * n ** (k + 1)  # current tables
        if k >= 1:
            total += counts[k] * n ** (k + 1)  # alpha-contracted history
            if store_history:
                total += counts[k] * n ** (k + 2)
    return 16 * total


def propagate_kernels(
    model: ModelSpec,
    basis: OBasis,
    corr: CorrelationFunction,
    grid: TimeGrid,
    k_trunc: int | None = None,
    literal_ode: bool = False,
    store_history: bool = False,
    corner: str = "raise",
    mem_cap_bytes: int = 2 * 1024**3,
) -> KernelField:
    """March the kernel tables from the diagonal to the full time square.

    k_trunc defaults to the basis maximum.  corner selects which boundary
    condition owns the mixed corner point (s = t and a noise argument = t
    simultaneously): the raising condition ("raise", default) or the
    diagonal zero ("diag"); the continuum kernel is discontinuous there and
    the choice only moves an O(dt^2) quadrature contribution.
    """
    if k_trunc is None:
        k_trunc = basis.k_max
    if corner not in ("raise", "diag"):
        raise InvalidParameterError(f"unknown corner rule {corner!r}")
    rhs = derive_projected_rhs(model, basis, k_trunc, literal_ode)
    n = grid.n_points
    counts = [len(rhs.basis_ops[k]) for k in range(k_trunc + 1)]
    need = _estimate_bytes(counts, n, k_trunc, store_history)
    if need > mem_cap_bytes:
        raise ResourceLimitError(
            f"kernel tables need ~{need / 1e9:.2f} GB, cap is "
            f"{mem_cap_bytes / 1e9:.2f} GB"
        )
    dt = grid.dt
    times = grid.times
    alpha0 = complex(corr.alpha(0.0, 0.0))

    tables = {
        k: np.zeros((counts[k],) + (n,) * (k + 1), dtype=complex)
        for k in range(k_trunc + 1)
    }
    tables[0][:, 0] = rhs.lcoef
    # mixed corner at t=0 for order 1
    if corner == "raise" and k_trunc >= 1:
        tables[1][:, 0, 0] = rhs.raise_[0] @ rhs.lcoef

    f_hist = np.zeros((counts[0], n, n), dtype=complex)
    f_hist[:, 0, 0] = rhs.lcoef
    fbar = np.zeros((n, counts[0]), dtype=complex)
    pbar = {
        k: np.zeros((counts[k],) + (n,) * (k + 1), dtype=complex)
        for k in range(1, k_trunc + 1)
    }
    p_hist = None
    if store_history:
        p_hist = {
            k: np.zeros((counts[k], n) + (n,) * (k + 1), dtype=complex)
            for k in range(1, k_trunc + 1)
        }

    def active(y, k, i):
        return y[k][(slice(None),) + (slice(0, i + 1),) * (k + 1)]

    def contract_bar(y, k, i, tau, t_low, seg: float):
        """int_0^tau alpha(tau, s') y_k(s', sigma) ds' by trapezoid over the
        grid plus one panel [t_low, tau] closed with the diagonal value."""
        w = grid.trapezoid_weights(i).astype(complex)
        w *= np.asarray(corr.alpha(tau, times[: i + 1]))
        if seg > 0.0:
            w[i] += 0.5 * seg * complex(corr.alpha(tau, t_low))
        out = np.tensordot(w, y[k], axes=(0, 1))
        if k == 0 and seg > 0.0:
            out = out + 0.5 * seg * alpha0 * rhs.lcoef
        return out

    def eval_rhs(y, i, tau, t_low, seg):
        bars = {
            k: contract_bar(y, k, i, tau, t_low, seg) for k in range(k_trunc + 1)
        }
        out = {}
        for k in range(k_trunc + 1):
            r = np.tensordot(rhs.ham[k], y[k], axes=(1, 0))
            for m in range(k + 1):
                rr = k - m
                core = np.tensordot(rhs.bilin[(m, rr)], bars[m], axes=(1, 0))
                # core axes: (out j, i', A sigma axes); contract i' with y[rr]
                term = np.tensordot(core, y[rr], axes=(1, 0))
                # term axes: (j, A..., s, B...)
                if k == 0:
                    r -= term
                    continue
                acc = np.zeros_like(r)
                for assign in combinations(range(k), m):
                    rest = [q for q in range(k) if q not in assign]
                    src = list(range(term.ndim))
                    dst = [0]
                    dst += [2 + q for q in assign]  # A axes into sigma slots
                    dst += [1]  # s axis
                    dst += [2 + q for q in rest]
                    acc += np.moveaxis(term, src, dst)
                ncomb = len(list(combinations(range(k), m)))
                r -= acc / ncomb
            if k + 1 <= k_trunc:
                r -= (k + 1) * np.tensordot(rhs.lower[k + 1], bars[k + 1], axes=(1, 0))
            out[k] = r
        return out

    def fill_boundaries(i):
        """Diagonal and noise-edge values at the new time index i."""
        for k in range(k_trunc + 1):
            sl_all = (slice(0, i + 1),)
            if k == 0:
                tables[0][:, i] = rhs.lcoef
                continue
            if corner == "raise":
                # diagonal first so the raising write owns the corner
                tables[k][(slice(None), i) + sl_all * k] = 0.0
                src = tables[k - 1][(slice(None),) + sl_all * k]
                val = np.tensordot(rhs.raise_[k - 1], src, axes=(1, 0)) / k
                for a in range(k):
                    idx = (
                        (slice(None),)
                        + sl_all
                        + sl_all * a
                        + (i,)
                        + sl_all * (k - 1 - a)
                    )
                    tables[k][idx] = val
            else:
                src = tables[k - 1][(slice(None),) + sl_all * k]
                val = np.tensordot(rhs.raise_[k - 1], src, axes=(1, 0)) / k
                for a in range(k):
                    idx = (
                        (slice(None),)
                        + sl_all
                        + sl_all * a
                        + (i,)
                        + sl_all * (k - 1 - a)
                    )
                    tables[k][idx] = val
                tables[k][(slice(None), i) + sl_all * k] = 0.0

    def record(i):
        act = {k: active(tables, k, i) for k in range(k_trunc + 1)}
        f_hist[:, i, : i + 1] = act[0]
        fbar[i] = contract_bar(act, 0, i, times[i], times[i], 0.0)
        for k in range(1, k_trunc + 1):
            dest = (slice(None), i) + (slice(0, i + 1),) * k
            pbar[k][dest] = contract_bar(act, k, i, times[i], times[i], 0.0)
            if p_hist is not None:
                p_hist[k][(slice(None), i) + (slice(0, i + 1),) * (k + 1)] = active(
                    tables, k, i
                )

    record(0)
    for i in range(grid.n_steps):
        t0 = times[i]
        y0 = {k: active(tables, k, i).copy() for k in range(k_trunc + 1)}
        k1 = eval_rhs(y0, i, t0, t0, 0.0)
        y2 = {k: y0[k] + 0.5 * dt * k1[k] for k in y0}
        k2 = eval_rhs(y2, i, t0 + 0.5 * dt, t0, 0.5 * dt)
        y3 = {k: y0[k] + 0.5 * dt * k2[k] for k in y0}
        k3 = eval_rhs(y3, i, t0 + 0.5 * dt, t0, 0.5 * dt)
        y4 = {k: y0[k] + dt * k3[k] for k in y0}
        k4 = eval_rhs(y4, i, t0 + dt, t0, dt)
        for k in range(k_trunc + 1):
            upd = y0[k] + (dt / 6.0) * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k])
            if not np.isfinite(upd).all():
                raise KernelBlowupError(times[i + 1])
            tables[k][(slice(None),) + (slice(0, i + 1),) * (k + 1)] = upd
        fill_boundaries(i + 1)
        record(i + 1)

    return KernelField(
        model=model,
        corr=corr,
        grid=grid,
        rhs=rhs,
        f_hist=f_hist,
        fbar=fbar,
        pbar=pbar,
        p_hist=p_hist,
        meta={"corner": corner, "literal_ode": literal_ode},
    )


def propagate_ncavity_kernels(
    model: ModelSpec,
    basis: OBasis,
    corr: CorrelationFunction,
    grid: TimeGrid,
    literal_ode: bool = False,
    **kwargs,
) -> KernelField:
    """Cavity-family kernels in the raw {a_j} basis, f_j(s, s) = 1.

    Same stepper as the general machinery; only the coefficient tensors are
    the analytic ones (with the optional verbatim published variant of the
    backward-neighbor term).
    """
    if model.family != "ncavity":
        raise InvalidParameterError("expected an ncavity model")
    return propagate_kernels(
        model, basis, corr, grid, k_trunc=0, literal_ode=literal_ode, **kwargs
    )


def consistency_residual(
    kernels: KernelField,
    path,
    t_idx: int,
    s_indices=None,
) -> float:
    """Max deviation between the two sides of the consistency condition.

    The time derivative of O(t, s, z) is formed by central differencing the
    stored kernel tables; the right side is assembled directly from the
    same tables:  [-iH + L z_t - L^dag Obar, O] - L^dag (dObar/dz_s).
    For the cavity family the norm is restricted to states with one photon
    of truncation headroom, where the ladder algebra is exact.  Both sides
    share the tables' O(dt^2) error, so the residual must shrink at second
    order under grid refinement.
    """
    grid = kernels.grid
    if not 1 <= t_idx <= grid.n_steps - 1:
        raise InvalidParameterError("t_idx must be interior to the grid")
    if kernels.k_trunc >= 1 and kernels.p_hist is None:
        raise InvalidParameterError("residual needs store_history=True")
    model = kernels.model
    values = path.samples
    h = model.hamiltonian
    lop = model.coupling
    ldag = lop.conj().T
    proj = None
    if model.family == "ncavity":
        n_max = model.space.factor_dims[0] - 1
        keep = excitation_numbers(model) <= (n_max - 1)
        proj = np.diag(keep.astype(float))
    if s_indices is None:
        s_indices = range(t_idx)
    obar = kernels.obar_matrix(values, t_idx)
    gmat = -1j * h + values[t_idx] * lop - ldag @ obar
    worst = 0.0
    for s_idx in s_indices:
        o_mid = kernels.o_matrix(values, t_idx, s_idx)
        o_plus = kernels.o_matrix(values, t_idx + 1, s_idx)
        o_minus = kernels.o_matrix(values, t_idx - 1, s_idx)
        lhs = (o_plus - o_minus) / (2.0 * grid.dt)
        rhs = gmat @ o_mid - o_mid @ gmat - ldag @ kernels.obar_z_derivative(
            values, t_idx, s_idx
        )
        diff = lhs - rhs
        if proj is not None:
            diff = proj @ diff @ proj
        worst = max(worst, float(np.linalg.norm(diff, 2)))
    return worst
